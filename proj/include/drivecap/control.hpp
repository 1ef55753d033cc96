#pragma once

#include <string>

#include "drivecap/nn.hpp"
#include "drivecap/tensor.hpp"

namespace drivecap {

// Motion transformer over the shared video tokens with a per-timestep linear
// read-out. No prediction is made for the first frame, so the output covers
// frames 2..T (T-1 rows). Two consecutive frames share one temporal grid
// slice; the read-out emits both frames of a slice from its pooled feature.
struct ControlHead {
  size_t dim = 0;
  size_t channels = 0;  // enabled signal channel count (n)
  size_t frames = 0;    // T
  TransformerStack stack;
  Linear readout;  // (dim, 2 * channels): even-frame then odd-frame tuple

  static ControlHead init(size_t dim, size_t channels, size_t frames, size_t blocks, size_t heads,
                          size_t mlp_ratio, Rng& rng);

  // video_tokens: (temporal_slices * spatial_tokens, dim). Returns (T-1, n).
  Tensor predict(const Tensor& video_tokens, size_t temporal_slices, size_t spatial_tokens) const;

  void collect(const std::string& prefix, ParamMap& params) const;
};

// Mean squared error over frames 2..T, summed across channels and averaged
// over the T-1 predicted frames. truth: (T, n), prediction: (T-1, n).
Tensor control_loss(const Tensor& truth, const Tensor& prediction);

}  // namespace drivecap
