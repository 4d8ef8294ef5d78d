#pragma once

// Convergence smoke test: plain SGD on a synthetic dense-regression task.
// Targets are fixed random linear projections of nonoverlapping input
// patches, one per exported stride; a learned 1x1 head maps each export to
// the target channels and the loss is the mean of the per-export MSEs.

#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include "fcmnet/backbone.hpp"

namespace fcmnet {

struct TrainTask {
  int64_t batch = 4;
  int64_t height = 64;
  int64_t width = 64;
  int64_t target_channels = 4;
  // gain on the target projection weights; modest targets keep the task
  // fittable within a short SGD budget
  double target_gain = 0.25;
};

template <class T>
struct TrainResult {
  std::vector<T> losses;  // loss evaluated before each step's update
  bool diverged = false;
  int64_t diverged_step = -1;
};

template <class T>
struct TrainState {
  TensorPtr<T> input;                       // fixed batch
  std::vector<TensorPtr<T>> projections;    // fixed target projections per export
  std::vector<TensorPtr<T>> targets;        // precomputed projection outputs
  std::vector<TensorPtr<T>> heads;          // learned 1x1 heads per export
  std::vector<int64_t> strides;
};

template <class T>
TrainState<T> make_train_state(Backbone<T>& model, const TrainTask& task, uint64_t seed) {
  TrainState<T> st;
  Rng data_rng(mix_seed(seed, 101));
  st.input = make_tensor<T>(Shape4{task.batch, model.cfg.in_channels, task.height, task.width});
  uniform_fill(*st.input, -1.0, 1.0, data_rng);

  auto exports = backbone_forward<T>(nullptr, model, st.input, BnMode::Inference);
  Rng proj_rng(mix_seed(seed, 202));
  Rng head_rng(mix_seed(seed, 303));
  for (auto& e : exports) {
    st.strides.push_back(e.stride);
    // patch projection: kernel = stride, stride = stride, no padding
    ConvSpec proj = ConvSpec::standard(model.cfg.in_channels, task.target_channels, e.stride, e.stride, 0);
    auto pw = make_tensor<T>(proj.weight_shape());
    const int64_t fan_in = model.cfg.in_channels * e.stride * e.stride;
    kaiming_uniform_fill(*pw, fan_in, proj_rng);
    for (auto& v : pw->data) v *= static_cast<T>(task.target_gain);
    st.projections.push_back(pw);
    st.targets.push_back(conv2d<T>(nullptr, st.input, proj, pw));

    ConvSpec head = ConvSpec::pointwise(e.map->shape.c, task.target_channels);
    auto hw = make_tensor<T>(head.weight_shape());
    kaiming_uniform_fill(*hw, e.map->shape.c, head_rng);
    st.heads.push_back(hw);
  }
  return st;
}

// One full-batch loss evaluation; records on the tape when given.
template <class T>
TensorPtr<T> train_demo_loss(Tape<T>* tape, Backbone<T>& model, TrainState<T>& st, const TrainTask& task,
                             bool update_running) {
  auto exports = backbone_forward(tape, model, st.input, BnMode::Train, update_running);
  TensorPtr<T> loss;
  for (size_t i = 0; i < exports.size(); ++i) {
    ConvSpec head = ConvSpec::pointwise(exports[i].map->shape.c, task.target_channels);
    auto pred = conv2d(tape, exports[i].map, head, st.heads[i]);
    auto diff = eltwise_sub(tape, pred, st.targets[i]);
    auto mse = reduce_mean(tape, eltwise_mul(tape, diff, diff));
    loss = loss ? eltwise_add(tape, loss, mse) : mse;
  }
  return scale(tape, loss, T(1) / static_cast<T>(exports.size()));
}

template <class T>
TrainResult<T> train_demo(Backbone<T>& model, const TrainTask& task, int64_t steps, T lr, uint64_t seed) {
  TrainResult<T> result;
  if (steps <= 0) return result;
  TrainState<T> st = make_train_state(model, task, seed);

  std::vector<std::pair<std::string, TensorPtr<T>>> params;
  visit_backbone_params<T>(model, [&](const std::string& n, const TensorPtr<T>& t) { params.emplace_back(n, t); });
  for (size_t i = 0; i < st.heads.size(); ++i) {
    params.emplace_back("head.stride" + std::to_string(st.strides[i]) + ".weight", st.heads[i]);
  }

  for (int64_t step = 0; step < steps; ++step) {
    Tape<T> tape;
    auto loss = train_demo_loss(&tape, model, st, task, /*update_running=*/true);
    const T value = loss->data[0];
    result.losses.push_back(value);
    if (!std::isfinite(static_cast<double>(value))) {
      result.diverged = true;
      result.diverged_step = step;
      return result;
    }
    tape.backward(loss);
    for (auto& [name, p] : params) {
      if (!p->has_grad()) continue;
      for (size_t i = 0; i < p->data.size(); ++i) p->data[i] -= lr * p->grad[i];
      p->zero_grad();
    }
  }
  return result;
}

}  // namespace fcmnet
