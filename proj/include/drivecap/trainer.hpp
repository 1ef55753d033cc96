#pragma once

#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "drivecap/data.hpp"
#include "drivecap/metrics.hpp"
#include "drivecap/model.hpp"

namespace drivecap {

struct TrainConfig {
  TrainMode mode = TrainMode::kJoint;
  MaskVariant mask_variant = MaskVariant::kDefault;
  bool speed_enabled = true;
  bool course_enabled = true;
  size_t epochs = 40;
  size_t batch_size = 8;
  double peak_lr = 1e-3;
  double warmup_frac = 0.10;
  uint64_t seed = 1;
  size_t vocab_max_size = 256;
  double control_loss_weight = 1.0;     // reported results use the default
  double video_mask_l1_weight = 0.0;    // sparsity penalty for the soft-mask hook
  ModelConfig model;

  size_t enabled_channels() const {
    return (speed_enabled ? 1u : 0u) + (course_enabled ? 1u : 0u);
  }
  std::vector<std::string> channel_names() const;
  // Also reconciles mode-forced mask variants (narration_only etc).
  void validate();

  // Strict parse: unknown keys anywhere are rejected.
  static TrainConfig from_json_string(const std::string& text);
  static TrainConfig from_json_file(const std::string& path);
  std::string to_json() const;
};

struct MaskedTokens {
  TokenSequence seq;
  std::vector<int> targets;  // kIgnoreId at unselected positions
  size_t selected = 0;
};

// 50% of maskable tokens are selected; selected inputs become [MASK] with
// p=0.8, a random word with p=0.1, stay unchanged with p=0.1. [CLS] and
// [PAD] are never selected. The sentence-final [SEP] takes part in the same
// policy so termination is learnable by generation.
MaskedTokens mask_tokens(const TokenSequence& seq, Rng& rng, size_t vocab_size);

// Linear 0 -> peak over the first warmup fraction of steps, then linear
// peak -> 0.
double lr_at(size_t step, size_t total_steps, double peak, double warmup_frac = 0.10);

// Decoupled-weight-decay Adam. Parameters without a gradient are untouched.
class AdamW {
 public:
  struct Hyper {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.01;
  };

  AdamW() = default;
  explicit AdamW(std::vector<Tensor> params) : AdamW(std::move(params), Hyper()) {}
  AdamW(std::vector<Tensor> params, Hyper hyper);
  void step(double lr);
  void zero_grads();
  size_t steps_taken() const { return steps_; }

 private:
  std::vector<Tensor> params_;
  std::vector<std::vector<double>> m_, v_;
  Hyper hyper_;
  size_t steps_ = 0;
};

struct StepLosses {
  double caption = 0.0;
  double control = 0.0;
  double total = 0.0;
};

class Trainer {
 public:
  Trainer(TrainConfig cfg, const Dataset& data);

  StepLosses train(std::ostream* log = nullptr);  // full schedule
  StepLosses train_step(const std::vector<size_t>& indices, double lr);

  size_t total_steps() const { return total_steps_; }
  size_t steps_done() const { return step_; }
  const TrainConfig& config() const { return cfg_; }
  Model& model() { return model_; }
  const Model& model() const { return model_; }
  const Vocab& vocab() const { return vocab_; }
  const NormStats& norm() const { return norm_; }

  void save(const std::string& dir);

  MetricsReport evaluate(const Dataset& eval_data) const;

 private:
  struct Sample {
    VideoClip prepared;
    TokenSequence tokens;
    std::vector<double> signals_norm;  // (frames x channels), sampled timestamps
  };

  TrainConfig cfg_;
  Vocab vocab_;
  NormStats norm_;
  Model model_;
  std::vector<Sample> samples_;
  AdamW optimizer_;
  Rng shuffle_rng_;
  Rng mask_rng_;
  size_t step_ = 0;
  size_t total_steps_ = 0;
};

// Caption generation plus (joint mode) control regression over a dataset.
// Channel scores are reported in raw units via the stored normalization.
MetricsReport evaluate_model(const Model& model, const Vocab& vocab, const NormStats& norm,
                             TrainMode mode, MaskVariant variant, const Dataset& data);

// Per-episode generated captions, exposed for exact-match checks.
struct GeneratedCaptions {
  std::vector<std::string> narration;
  std::vector<std::string> reasoning;
};
GeneratedCaptions generate_captions(const Model& model, const Vocab& vocab, const NormStats& norm,
                                    TrainMode mode, MaskVariant variant, const Dataset& data);

}  // namespace drivecap
