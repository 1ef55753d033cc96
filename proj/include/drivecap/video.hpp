#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "drivecap/nn.hpp"
#include "drivecap/tensor.hpp"

namespace drivecap {

// Raw decoded frames, values in [0, 1], channel count fixed at 3.
struct VideoClip {
  size_t frames = 0;
  size_t height = 0;
  size_t width = 0;
  std::vector<float> data;  // frames * height * width * 3, row-major
  std::string source;

  size_t frame_stride() const { return height * width * 3; }
  void validate() const;
};

// Uniform sampling: index i -> floor(i * available / requested). Repeats
// indices when the clip is shorter than the request.
std::vector<size_t> sample_frame_indices(size_t available, size_t requested);

// Nearest-neighbour resize covering the target, then center crop.
VideoClip sample_and_resize(const VideoClip& clip, size_t frames, size_t height, size_t width);

struct EncoderConfig {
  size_t frames = 32;        // sampled frame count, even
  size_t height = 64;        // post-crop, divisible by 32
  size_t width = 64;
  size_t base_channels = 8;  // feature width is 8x this
  size_t blocks = 2;
  size_t heads = 4;
  size_t mlp_ratio = 4;

  static constexpr size_t kPatchTime = 2;
  static constexpr size_t kPatchSpace = 32;

  size_t temporal_slices() const { return frames / kPatchTime; }
  size_t grid_rows() const { return height / kPatchSpace; }
  size_t grid_cols() const { return width / kPatchSpace; }
  size_t feature_channels() const { return 8 * base_channels; }
  size_t token_count() const { return temporal_slices() * grid_rows() * grid_cols(); }
  size_t patch_dim() const { return kPatchTime * kPatchSpace * kPatchSpace * 3; }
  void validate() const;
};

// Feature grid of extents (frames/2, height/32, width/32, 8C).
struct VideoFeatures {
  Tensor grid;  // rank-4
  size_t temporal = 0, rows = 0, cols = 0, channels = 0;
};

// Patch embedding over (2 frames x 32 x 32) tiles plus a learned position
// table, followed by full-attention transformer blocks over the grid tokens.
struct VideoEncoder {
  EncoderConfig cfg;
  Tensor patch_weight;  // (patch_dim, 8C)
  Tensor patch_bias;    // (8C)
  Tensor pos_embed;     // (token_count, 8C)
  TransformerStack stack;

  static VideoEncoder init(const EncoderConfig& cfg, Rng& rng);
  // `prepared` must already be sampled/resized to (frames, height, width).
  VideoFeatures encode(const VideoClip& prepared) const;
  void collect(const std::string& prefix, ParamMap& params) const;
};

// Extracts the (token_count, patch_dim) patch matrix as a no-grad leaf.
Tensor patchify(const VideoClip& prepared, const EncoderConfig& cfg);

// Channel-wise tokenization: one token per grid cell.
Tensor flatten_features(const VideoFeatures& features);

// Learnable map from feature channels to the text dimension.
struct TokenProjector {
  Linear mlp;

  static TokenProjector init(size_t in_dim, size_t text_dim, Rng& rng);
  static TokenProjector identity(size_t dim);
  Tensor project(const Tensor& tokens) const { return mlp.forward(tokens); }
  void collect(const std::string& prefix, ParamMap& params) const;
};

}  // namespace drivecap
