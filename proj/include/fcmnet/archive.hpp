#pragma once

// Named-tensor archive: <prefix>.json maps hierarchical parameter names to
// byte offsets in <prefix>.bin, a flat concatenation of tensor dumps.

#include <map>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "fcmnet/io.hpp"

namespace fcmnet {

template <class T>
void save_archive(const std::string& prefix, const std::vector<std::pair<std::string, TensorPtr<T>>>& tensors) {
  std::ostringstream bin(std::ios::binary);
  std::map<std::string, uint64_t> offsets;
  for (const auto& [name, tensor] : tensors) {
    if (offsets.count(name)) throw IoError("save_archive: duplicate tensor name '" + name + "'");
    offsets[name] = static_cast<uint64_t>(bin.tellp());
    write_tensor(bin, *tensor);
  }
  nlohmann::json index;
  index["format"] = "tensor-archive-v1";
  index["data_file"] = prefix.substr(prefix.find_last_of('/') + 1) + ".bin";
  index["tensors"] = nlohmann::json::object();
  for (const auto& [name, off] : offsets) index["tensors"][name] = off;
  write_text_file(prefix + ".json", index.dump(2) + "\n");
  write_text_file(prefix + ".bin", bin.str());
}

// Loads into existing tensors; every requested name must be present and its
// stored shape must match.
template <class T>
void load_archive(const std::string& prefix, const std::vector<std::pair<std::string, TensorPtr<T>>>& tensors) {
  const nlohmann::json index = nlohmann::json::parse(read_text_file(prefix + ".json"));
  if (index.value("format", "") != "tensor-archive-v1") {
    throw IoError("load_archive: '" + prefix + ".json' is not a tensor archive index");
  }
  std::ifstream bin(prefix + ".bin", std::ios::binary);
  if (!bin) throw IoError("cannot open: " + prefix + ".bin");
  const auto& offs = index.at("tensors");
  for (const auto& [name, tensor] : tensors) {
    if (!offs.contains(name)) throw IoError("load_archive: tensor '" + name + "' missing from archive");
    bin.clear();
    bin.seekg(static_cast<std::streamoff>(offs.at(name).template get<uint64_t>()));
    auto loaded = read_tensor<T>(bin);
    if (loaded->shape != tensor->shape) {
      throw IoError("load_archive: tensor '" + name + "' stored shape " + loaded->shape.str() +
                    " does not match expected " + tensor->shape.str());
    }
    tensor->data = std::move(loaded->data);
  }
}

}  // namespace fcmnet
