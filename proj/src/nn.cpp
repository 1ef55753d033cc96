#include "drivecap/nn.hpp"

#include <cmath>

namespace drivecap {

Linear Linear::init(size_t in, size_t out, Rng& rng) {
  Linear l;
  l.weight = Tensor::randn({in, out}, rng, 1.0 / std::sqrt(static_cast<double>(in)), true);
  l.bias = Tensor::zeros({out}, true);
  return l;
}

Linear Linear::identity(size_t dim) {
  Linear l;
  std::vector<double> w(dim * dim, 0.0);
  for (size_t i = 0; i < dim; ++i) w[i * dim + i] = 1.0;
  l.weight = Tensor::leaf({dim, dim}, std::move(w), true);
  l.bias = Tensor::zeros({dim}, true);
  return l;
}

void Linear::collect(const std::string& prefix, ParamMap& params) const {
  params.add(prefix + ".weight", weight);
  params.add(prefix + ".bias", bias);
}

LayerNormParams LayerNormParams::init(size_t dim) {
  LayerNormParams ln;
  ln.gain = Tensor::full({dim}, 1.0, true);
  ln.bias = Tensor::zeros({dim}, true);
  return ln;
}

void LayerNormParams::collect(const std::string& prefix, ParamMap& params) const {
  params.add(prefix + ".gain", gain);
  params.add(prefix + ".bias", bias);
}

MultiHeadAttention MultiHeadAttention::init(size_t dim, size_t heads, Rng& rng) {
  if (heads == 0 || dim % heads != 0)
    throw ConfigError("attention: dim " + std::to_string(dim) + " not divisible by heads " +
                      std::to_string(heads));
  MultiHeadAttention a;
  a.heads = heads;
  a.query = Linear::init(dim, dim, rng);
  a.key = Linear::init(dim, dim, rng);
  a.value = Linear::init(dim, dim, rng);
  a.out = Linear::init(dim, dim, rng);
  return a;
}

Tensor MultiHeadAttention::forward(const Tensor& x, const Tensor& mask_bias) const {
  const size_t n = x.shape()[0];
  const size_t dim = x.shape()[1];
  const size_t head_dim = dim / heads;
  auto split = [&](const Tensor& t) {
    return permute(reshape(t, {n, heads, head_dim}), {1, 0, 2});  // (heads, n, head_dim)
  };
  Tensor q = split(query.forward(x));
  Tensor k = split(key.forward(x));
  Tensor v = split(value.forward(x));
  Tensor scores = scale(matmul(q, transpose_last(k)), 1.0 / std::sqrt(static_cast<double>(head_dim)));
  if (mask_bias.defined()) scores = add(scores, mask_bias);
  Tensor attn = softmax(scores, -1);
  Tensor ctx = matmul(attn, v);                              // (heads, n, head_dim)
  Tensor merged = reshape(permute(ctx, {1, 0, 2}), {n, dim});  // (n, dim)
  return out.forward(merged);
}

void MultiHeadAttention::collect(const std::string& prefix, ParamMap& params) const {
  query.collect(prefix + ".query", params);
  key.collect(prefix + ".key", params);
  value.collect(prefix + ".value", params);
  out.collect(prefix + ".out", params);
}

TransformerBlock TransformerBlock::init(size_t dim, size_t heads, size_t mlp_ratio, Rng& rng) {
  TransformerBlock b;
  b.ln1 = LayerNormParams::init(dim);
  b.ln2 = LayerNormParams::init(dim);
  b.attn = MultiHeadAttention::init(dim, heads, rng);
  b.fc1 = Linear::init(dim, dim * mlp_ratio, rng);
  b.fc2 = Linear::init(dim * mlp_ratio, dim, rng);
  return b;
}

Tensor TransformerBlock::forward(const Tensor& x, const Tensor& mask_bias) const {
  Tensor h = add(x, attn.forward(ln1.forward(x), mask_bias));
  Tensor m = fc2.forward(gelu(fc1.forward(ln2.forward(h))));
  return add(h, m);
}

void TransformerBlock::collect(const std::string& prefix, ParamMap& params) const {
  ln1.collect(prefix + ".ln1", params);
  attn.collect(prefix + ".attn", params);
  ln2.collect(prefix + ".ln2", params);
  fc1.collect(prefix + ".fc1", params);
  fc2.collect(prefix + ".fc2", params);
}

TransformerStack TransformerStack::init(size_t dim, size_t blocks, size_t heads, size_t mlp_ratio,
                                        Rng& rng) {
  TransformerStack s;
  s.blocks.reserve(blocks);
  for (size_t i = 0; i < blocks; ++i) s.blocks.push_back(TransformerBlock::init(dim, heads, mlp_ratio, rng));
  s.final_norm = LayerNormParams::init(dim);
  return s;
}

Tensor TransformerStack::forward(const Tensor& x, const Tensor& mask_bias) const {
  Tensor h = x;
  for (const auto& b : blocks) h = b.forward(h, mask_bias);
  return final_norm.forward(h);
}

void TransformerStack::collect(const std::string& prefix, ParamMap& params) const {
  for (size_t i = 0; i < blocks.size(); ++i)
    blocks[i].collect(prefix + ".block" + std::to_string(i), params);
  final_norm.collect(prefix + ".final_norm", params);
}

}  // namespace drivecap
