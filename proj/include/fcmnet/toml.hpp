#pragma once

// Small TOML reader covering the subset config files use: bare keys, basic
// strings, integers, floats, booleans, single-line arrays, [tables] and
// [[arrays of tables]]. Errors carry line/column. Not a general TOML
// implementation (no dotted keys, dates, inline tables or multiline strings).

#include <cctype>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "fcmnet/tensor.hpp"

namespace fcmnet::minitoml {

struct Value {
  enum class Type { Int, Float, Bool, String, Array };
  Type type = Type::Int;
  int64_t i = 0;
  double f = 0;
  bool b = false;
  std::string s;
  std::vector<Value> arr;
  int line = 0;
  int col = 0;

  std::string type_name() const {
    switch (type) {
      case Type::Int: return "integer";
      case Type::Float: return "float";
      case Type::Bool: return "boolean";
      case Type::String: return "string";
      case Type::Array: return "array";
    }
    return "?";
  }
};

struct Table {
  std::map<std::string, Value> kv;
  int line = 0;
};

struct Document {
  Table root;
  std::map<std::string, Table> tables;
  std::map<std::string, std::vector<Table>> table_arrays;
  std::vector<std::string> table_array_order;
};

namespace detail {

struct Cursor {
  std::string_view text;
  size_t pos = 0;
  int line = 1;
  int col = 1;

  bool eof() const { return pos >= text.size(); }
  char peek() const { return text[pos]; }
  char get() {
    char c = text[pos++];
    if (c == '\n') {
      ++line;
      col = 1;
    } else {
      ++col;
    }
    return c;
  }
  void skip_ws() {
    while (!eof() && (peek() == ' ' || peek() == '\t')) get();
  }
};

[[noreturn]] inline void fail(const Cursor& c, const std::string& msg) { throw ParseError("toml: " + msg, c.line, c.col); }

inline bool is_bare_key_char(char c) {
  return std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '-';
}

inline std::string parse_bare_key(Cursor& c) {
  std::string key;
  while (!c.eof() && is_bare_key_char(c.peek())) key.push_back(c.get());
  if (key.empty()) fail(c, "expected a key");
  return key;
}

inline std::string parse_basic_string(Cursor& c) {
  c.get();  // opening quote
  std::string out;
  while (true) {
    if (c.eof() || c.peek() == '\n') fail(c, "unterminated string");
    char ch = c.get();
    if (ch == '"') return out;
    if (ch == '\\') {
      if (c.eof()) fail(c, "unterminated escape");
      char esc = c.get();
      switch (esc) {
        case '"': out.push_back('"'); break;
        case '\\': out.push_back('\\'); break;
        case 'n': out.push_back('\n'); break;
        case 't': out.push_back('\t'); break;
        case 'r': out.push_back('\r'); break;
        default: fail(c, std::string("unsupported escape '\\") + esc + "'");
      }
    } else {
      out.push_back(ch);
    }
  }
}

inline Value parse_value(Cursor& c);

inline Value parse_array(Cursor& c) {
  Value v;
  v.type = Value::Type::Array;
  v.line = c.line;
  v.col = c.col;
  c.get();  // '['
  c.skip_ws();
  if (!c.eof() && c.peek() == ']') {
    c.get();
    return v;
  }
  while (true) {
    c.skip_ws();
    if (c.eof() || c.peek() == '\n') fail(c, "arrays must close on one line");
    v.arr.push_back(parse_value(c));
    c.skip_ws();
    if (c.eof()) fail(c, "unterminated array");
    char ch = c.get();
    if (ch == ']') return v;
    if (ch != ',') fail(c, "expected ',' or ']' in array");
  }
}

inline Value parse_value(Cursor& c) {
  c.skip_ws();
  if (c.eof()) fail(c, "expected a value");
  Value v;
  v.line = c.line;
  v.col = c.col;
  char ch = c.peek();
  if (ch == '"') {
    v.type = Value::Type::String;
    v.s = parse_basic_string(c);
    return v;
  }
  if (ch == '[') return parse_array(c);
  std::string tok;
  while (!c.eof() && c.peek() != ',' && c.peek() != ']' && c.peek() != '\n' && c.peek() != ' ' && c.peek() != '\t' &&
         c.peek() != '#') {
    tok.push_back(c.get());
  }
  if (tok == "true" || tok == "false") {
    v.type = Value::Type::Bool;
    v.b = tok == "true";
    return v;
  }
  if (tok.empty()) fail(c, "expected a value");
  const bool is_float = tok.find_first_of(".eE") != std::string::npos &&
                        tok.find_first_not_of("+-0123456789.eE") == std::string::npos;
  try {
    size_t used = 0;
    if (is_float) {
      v.type = Value::Type::Float;
      v.f = std::stod(tok, &used);
    } else {
      v.type = Value::Type::Int;
      v.i = std::stoll(tok, &used, 10);
    }
    if (used != tok.size()) throw std::invalid_argument(tok);
  } catch (const std::exception&) {
    fail(c, "cannot parse value '" + tok + "'");
  }
  return v;
}

// strips a trailing comment that is not inside a string
inline void strip_comment(std::string& line) {
  bool in_string = false;
  for (size_t i = 0; i < line.size(); ++i) {
    if (line[i] == '"' && (i == 0 || line[i - 1] != '\\')) in_string = !in_string;
    if (line[i] == '#' && !in_string) {
      line.erase(i);
      return;
    }
  }
}

}  // namespace detail

inline Document parse(std::string_view text) {
  Document doc;
  Table* current = &doc.root;
  int line_no = 0;
  size_t start = 0;
  while (start <= text.size()) {
    size_t end = text.find('\n', start);
    if (end == std::string_view::npos) end = text.size();
    std::string line(text.substr(start, end - start));
    ++line_no;
    detail::strip_comment(line);
    // trim
    size_t b = line.find_first_not_of(" \t\r");
    if (b == std::string::npos) {
      start = end + 1;
      if (end == text.size()) break;
      continue;
    }
    size_t e = line.find_last_not_of(" \t\r");
    std::string body = line.substr(b, e - b + 1);

    if (body.front() == '[') {
      const bool is_array = body.size() > 1 && body[1] == '[';
      const std::string closer = is_array ? "]]" : "]";
      const size_t name_start = is_array ? 2 : 1;
      const size_t close = body.find(closer, name_start);
      if (close == std::string::npos || close + closer.size() != body.size()) {
        throw ParseError("toml: malformed table header '" + body + "'", line_no, static_cast<int>(b) + 1);
      }
      std::string name = body.substr(name_start, close - name_start);
      if (name.empty()) throw ParseError("toml: empty table name", line_no, static_cast<int>(b) + 1);
      for (char c : name) {
        if (!detail::is_bare_key_char(c)) {
          throw ParseError("toml: unsupported table name '" + name + "'", line_no, static_cast<int>(b) + 1);
        }
      }
      if (is_array) {
        if (!doc.table_arrays.count(name)) doc.table_array_order.push_back(name);
        doc.table_arrays[name].emplace_back();
        doc.table_arrays[name].back().line = line_no;
        current = &doc.table_arrays[name].back();
      } else {
        if (doc.tables.count(name)) {
          throw ParseError("toml: duplicate table [" + name + "]", line_no, static_cast<int>(b) + 1);
        }
        doc.tables[name].line = line_no;
        current = &doc.tables[name];
      }
    } else {
      detail::Cursor c{body, 0, line_no, static_cast<int>(b) + 1};
      std::string key = detail::parse_bare_key(c);
      c.skip_ws();
      if (c.eof() || c.get() != '=') detail::fail(c, "expected '=' after key '" + key + "'");
      Value v = detail::parse_value(c);
      c.skip_ws();
      if (!c.eof()) detail::fail(c, "trailing characters after value");
      if (current->kv.count(key)) {
        throw ParseError("toml: duplicate key '" + key + "'", line_no, static_cast<int>(b) + 1);
      }
      current->kv[key] = v;
    }
    if (end == text.size()) break;
    start = end + 1;
  }
  return doc;
}

}  // namespace fcmnet::minitoml
