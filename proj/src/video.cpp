#include "drivecap/video.hpp"

#include <algorithm>
#include <cmath>

#include "drivecap/errors.hpp"

namespace drivecap {

void VideoClip::validate() const {
  if (frames == 0 || height == 0 || width == 0)
    throw ContractError("clip " + source + ": empty geometry");
  if (data.size() != frames * height * width * 3)
    throw ContractError("clip " + source + ": data size does not match geometry");
}

std::vector<size_t> sample_frame_indices(size_t available, size_t requested) {
  if (available == 0) throw ContractError("sample_frame_indices: no source frames");
  if (requested < 2 || requested % 2 != 0)
    throw ConfigError("sample_frame_indices: frame count " + std::to_string(requested) +
                      " must be even and >= 2 (temporal pairing halves it)");
  std::vector<size_t> idx(requested);
  for (size_t i = 0; i < requested; ++i) idx[i] = i * available / requested;
  return idx;
}

VideoClip sample_and_resize(const VideoClip& clip, size_t frames, size_t height, size_t width) {
  clip.validate();
  const auto indices = sample_frame_indices(clip.frames, frames);
  VideoClip out;
  out.frames = frames;
  out.height = height;
  out.width = width;
  out.source = clip.source;
  out.data.resize(frames * height * width * 3);

  const double scale = std::max(static_cast<double>(height) / clip.height,
                                static_cast<double>(width) / clip.width);
  const double off_y = (clip.height * scale - height) / 2.0;
  const double off_x = (clip.width * scale - width) / 2.0;
  for (size_t f = 0; f < frames; ++f) {
    const float* src = clip.data.data() + indices[f] * clip.frame_stride();
    float* dst = out.data.data() + f * out.frame_stride();
    for (size_t y = 0; y < height; ++y) {
      size_t sy = static_cast<size_t>((y + off_y) / scale);
      sy = std::min(sy, clip.height - 1);
      for (size_t x = 0; x < width; ++x) {
        size_t sx = static_cast<size_t>((x + off_x) / scale);
        sx = std::min(sx, clip.width - 1);
        const float* sp = src + (sy * clip.width + sx) * 3;
        float* dp = dst + (y * width + x) * 3;
        dp[0] = sp[0];
        dp[1] = sp[1];
        dp[2] = sp[2];
      }
    }
  }
  return out;
}

void EncoderConfig::validate() const {
  if (frames < 2 || frames % kPatchTime != 0)
    throw ConfigError("encoder: frame count " + std::to_string(frames) +
                      " must be even and >= 2");
  if (height % kPatchSpace != 0 || width % kPatchSpace != 0)
    throw ConfigError("encoder: spatial size " + std::to_string(height) + "x" +
                      std::to_string(width) + " must be divisible by 32");
  if (base_channels == 0) throw ConfigError("encoder: base_channels must be positive");
  if (heads == 0 || feature_channels() % heads != 0)
    throw ConfigError("encoder: feature channels not divisible by heads");
}

VideoEncoder VideoEncoder::init(const EncoderConfig& cfg, Rng& rng) {
  cfg.validate();
  VideoEncoder enc;
  enc.cfg = cfg;
  const size_t pd = cfg.patch_dim();
  const size_t fc = cfg.feature_channels();
  enc.patch_weight = Tensor::randn({pd, fc}, rng, 1.0 / std::sqrt(static_cast<double>(pd)), true);
  enc.patch_bias = Tensor::zeros({fc}, true);
  enc.pos_embed = Tensor::randn({cfg.token_count(), fc}, rng, 0.02, true);
  enc.stack = TransformerStack::init(fc, cfg.blocks, cfg.heads, cfg.mlp_ratio, rng);
  return enc;
}

Tensor patchify(const VideoClip& prepared, const EncoderConfig& cfg) {
  if (prepared.frames != cfg.frames || prepared.height != cfg.height ||
      prepared.width != cfg.width)
    throw ContractError("patchify: clip " + prepared.source + " not prepared to " +
                        std::to_string(cfg.frames) + "x" + std::to_string(cfg.height) + "x" +
                        std::to_string(cfg.width));
  for (float v : prepared.data)
    if (!std::isfinite(v))
      throw ContractError("patchify: non-finite pixel in clip " + prepared.source);

  const size_t ts = cfg.temporal_slices();
  const size_t gr = cfg.grid_rows();
  const size_t gc = cfg.grid_cols();
  constexpr size_t kP = EncoderConfig::kPatchSpace;
  const size_t pd = cfg.patch_dim();
  std::vector<double> out(cfg.token_count() * pd);
  size_t token = 0;
  for (size_t t = 0; t < ts; ++t) {
    for (size_t ry = 0; ry < gr; ++ry) {
      for (size_t rx = 0; rx < gc; ++rx) {
        double* dst = out.data() + token * pd;
        for (size_t dt = 0; dt < EncoderConfig::kPatchTime; ++dt) {
          const float* frame =
              prepared.data.data() + (t * EncoderConfig::kPatchTime + dt) * prepared.frame_stride();
          for (size_t y = 0; y < kP; ++y) {
            const float* row = frame + ((ry * kP + y) * prepared.width + rx * kP) * 3;
            for (size_t x = 0; x < kP * 3; ++x) *dst++ = static_cast<double>(row[x]);
          }
        }
        ++token;
      }
    }
  }
  return Tensor::leaf({cfg.token_count(), pd}, std::move(out), false);
}

VideoFeatures VideoEncoder::encode(const VideoClip& prepared) const {
  Tensor patches = patchify(prepared, cfg);
  Tensor tokens = add(add(matmul(patches, patch_weight), patch_bias), pos_embed);
  Tensor encoded = stack.forward(tokens, Tensor());
  VideoFeatures f;
  f.temporal = cfg.temporal_slices();
  f.rows = cfg.grid_rows();
  f.cols = cfg.grid_cols();
  f.channels = cfg.feature_channels();
  f.grid = reshape(encoded, {f.temporal, f.rows, f.cols, f.channels});
  return f;
}

void VideoEncoder::collect(const std::string& prefix, ParamMap& params) const {
  params.add(prefix + ".patch_weight", patch_weight);
  params.add(prefix + ".patch_bias", patch_bias);
  params.add(prefix + ".pos_embed", pos_embed);
  stack.collect(prefix + ".stack", params);
}

Tensor flatten_features(const VideoFeatures& features) {
  return reshape(features.grid, {features.temporal * features.rows * features.cols,
                                 features.channels});
}

TokenProjector TokenProjector::init(size_t in_dim, size_t text_dim, Rng& rng) {
  TokenProjector p;
  p.mlp = Linear::init(in_dim, text_dim, rng);
  return p;
}

TokenProjector TokenProjector::identity(size_t dim) {
  TokenProjector p;
  p.mlp = Linear::identity(dim);
  return p;
}

void TokenProjector::collect(const std::string& prefix, ParamMap& params) const {
  mlp.collect(prefix + ".mlp", params);
}

}  // namespace drivecap
