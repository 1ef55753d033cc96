#pragma once

#include <string>
#include <vector>

#include "drivecap/caption.hpp"
#include "drivecap/control.hpp"
#include "drivecap/tokenizer.hpp"
#include "drivecap/video.hpp"

namespace drivecap {

enum class TrainMode { kJoint, kSingle, kSinglePlus, kNarrationOnly, kReasoningOnly };

TrainMode train_mode_from_string(const std::string& name);
std::string to_string(TrainMode mode);

// Per-channel affine normalization fitted on the training split; losses run
// in normalized space, metrics in raw units.
struct ChannelNorm {
  std::string name;
  double mean = 0.0;
  double stddev = 1.0;

  double normalize(double raw) const { return (raw - mean) / stddev; }
  double denormalize(double norm) const { return norm * stddev + mean; }
};

struct NormStats {
  std::vector<ChannelNorm> channels;
};

struct ModelConfig {
  size_t frames = 32;  // T, even
  size_t height = 64;
  size_t width = 64;
  size_t base_channels = 8;
  size_t text_dim = 64;
  size_t heads = 4;
  size_t encoder_blocks = 2;
  size_t caption_blocks = 2;
  size_t control_blocks = 2;
  size_t mlp_ratio = 4;
  size_t sentence_len = kSentenceLen;
  size_t vocab_size = 0;       // fixed once the vocabulary is built
  size_t signal_channels = 2;  // enabled channel count (n)
  // Learnable soft attention mask over video tokens in the caption stack
  // (regularizer hook; full attention when off).
  bool video_soft_mask = false;

  EncoderConfig encoder() const;
  size_t video_tokens() const { return encoder().token_count(); }
  void validate() const;
};

struct Model {
  ModelConfig cfg;
  VideoEncoder encoder;
  TokenProjector projector;
  CaptionHead caption;
  ControlHead control;
  Linear signal_embed;       // signals-as-input-tokens route (n -> text_dim)
  Tensor video_mask_logits;  // (video_tokens, video_tokens), soft-mask hook only

  static Model init(const ModelConfig& cfg, uint64_t seed);

  ParamMap named_params() const;

  // Shared representation both heads consume: encoder grid tokens projected
  // to the text dimension, (video_tokens, text_dim).
  Tensor video_tokens(const VideoClip& prepared) const;

  // Optional extra context rows for the signals-as-input mode:
  // normalized signals (T, n) embedded to (T, text_dim).
  Tensor signal_tokens(const Tensor& normalized_signals) const;

  // log-sigmoid of the learnable mask when the hook is on, else undefined.
  Tensor video_attention_bias() const;
};

// Checkpoint directory: manifest.json + vocab.txt + params/<name>.adpt.
// Writing quantizes live parameters to f32 so that a reload reproduces
// forward outputs bit for bit.
struct CheckpointMeta {
  TrainMode mode = TrainMode::kJoint;
  MaskVariant mask_variant = MaskVariant::kDefault;
  uint64_t seed = 0;
  uint64_t step = 0;
  // Full training recipe (config + optimizer hyperparameters) as a JSON
  // object, stored verbatim for reproducibility.
  std::string train_recipe_json;
};

void save_checkpoint(const std::string& dir, Model& model, const Vocab& vocab,
                     const NormStats& norm, const CheckpointMeta& meta);

struct Checkpoint {
  Model model;
  Vocab vocab;
  NormStats norm;
  CheckpointMeta meta;
};

Checkpoint load_checkpoint(const std::string& dir);

}  // namespace drivecap
