#pragma once

#include <string>
#include <utility>
#include <vector>

#include "drivecap/tensor.hpp"

namespace drivecap {

// Named view over a model's parameter tensors, in registration order.
struct ParamMap {
  std::vector<std::pair<std::string, Tensor>> items;

  void add(std::string name, const Tensor& t) { items.emplace_back(std::move(name), t); }
  std::vector<Tensor> tensors() const {
    std::vector<Tensor> out;
    out.reserve(items.size());
    for (const auto& [_, t] : items) out.push_back(t);
    return out;
  }
  const Tensor* find(const std::string& name) const {
    for (const auto& [n, t] : items)
      if (n == name) return &t;
    return nullptr;
  }
};

struct Linear {
  Tensor weight;  // (in, out)
  Tensor bias;    // (out)

  static Linear init(size_t in, size_t out, Rng& rng);
  static Linear identity(size_t dim);
  Tensor forward(const Tensor& x) const { return add(matmul(x, weight), bias); }
  void collect(const std::string& prefix, ParamMap& params) const;
};

struct LayerNormParams {
  Tensor gain;
  Tensor bias;
  double eps = 1e-5;

  static LayerNormParams init(size_t dim);
  Tensor forward(const Tensor& x) const { return layer_norm(x, gain, bias, eps); }
  void collect(const std::string& prefix, ParamMap& params) const;
};

struct MultiHeadAttention {
  size_t heads = 1;
  Linear query, key, value, out;

  static MultiHeadAttention init(size_t dim, size_t heads, Rng& rng);
  // mask_bias: additive (N, N) tensor (0 allowed / -1e9 denied), or an
  // undefined tensor for full attention.
  Tensor forward(const Tensor& x, const Tensor& mask_bias) const;
  void collect(const std::string& prefix, ParamMap& params) const;
};

// Pre-norm block: x += attn(ln1(x)); x += mlp(ln2(x)).
struct TransformerBlock {
  LayerNormParams ln1, ln2;
  MultiHeadAttention attn;
  Linear fc1, fc2;

  static TransformerBlock init(size_t dim, size_t heads, size_t mlp_ratio, Rng& rng);
  Tensor forward(const Tensor& x, const Tensor& mask_bias) const;
  void collect(const std::string& prefix, ParamMap& params) const;
};

struct TransformerStack {
  std::vector<TransformerBlock> blocks;
  LayerNormParams final_norm;

  static TransformerStack init(size_t dim, size_t blocks, size_t heads, size_t mlp_ratio,
                               Rng& rng);
  Tensor forward(const Tensor& x, const Tensor& mask_bias) const;
  void collect(const std::string& prefix, ParamMap& params) const;
};

}  // namespace drivecap
