#include "drivecap/control.hpp"

#include "drivecap/errors.hpp"

namespace drivecap {

ControlHead ControlHead::init(size_t dim, size_t channels, size_t frames, size_t blocks,
                              size_t heads, size_t mlp_ratio, Rng& rng) {
  if (channels == 0) throw ConfigError("control head: no enabled signal channels");
  if (frames < 2 || frames % 2 != 0)
    throw ConfigError("control head: frame count must be even and >= 2");
  ControlHead h;
  h.dim = dim;
  h.channels = channels;
  h.frames = frames;
  h.stack = TransformerStack::init(dim, blocks, heads, mlp_ratio, rng);
  h.readout = Linear::init(dim, 2 * channels, rng);
  return h;
}

Tensor ControlHead::predict(const Tensor& video_tokens, size_t temporal_slices,
                            size_t spatial_tokens) const {
  if (video_tokens.rank() != 2 || video_tokens.shape()[0] != temporal_slices * spatial_tokens ||
      video_tokens.shape()[1] != dim)
    throw ContractError("control head: tokens " + shape_str(video_tokens.shape()) +
                        " do not match " + std::to_string(temporal_slices) + "x" +
                        std::to_string(spatial_tokens) + " grid of dim " + std::to_string(dim));
  if (temporal_slices * 2 != frames)
    throw ContractError("control head: slice count does not match configured frames");
  Tensor h = stack.forward(video_tokens, Tensor());
  Tensor sliced = reshape(h, {temporal_slices, spatial_tokens, dim});
  Tensor pooled = scale(sum_axis(sliced, 1), 1.0 / static_cast<double>(spatial_tokens));
  Tensor per_slice = readout.forward(pooled);                 // (T/2, 2n)
  Tensor per_frame = reshape(per_slice, {frames, channels});  // frame-major
  return slice_rows(per_frame, 1, frames - 1);
}

void ControlHead::collect(const std::string& prefix, ParamMap& params) const {
  stack.collect(prefix + ".stack", params);
  readout.collect(prefix + ".readout", params);
}

Tensor control_loss(const Tensor& truth, const Tensor& prediction) {
  if (truth.rank() != 2 || prediction.rank() != 2 || truth.shape()[1] != prediction.shape()[1] ||
      truth.shape()[0] != prediction.shape()[0] + 1)
    throw ContractError("control_loss: truth " + shape_str(truth.shape()) +
                        " must be prediction " + shape_str(prediction.shape()) +
                        " plus one leading frame");
  const size_t predicted = prediction.shape()[0];
  Tensor residual = sub(prediction, slice_rows(truth, 1, predicted));
  return scale(sum_all(mul(residual, residual)), 1.0 / static_cast<double>(predicted));
}

}  // namespace drivecap
