#include "drivecap/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <ostream>
#include <set>
#include <sstream>

#include <json.hpp>

#include "drivecap/errors.hpp"

namespace drivecap {

using nlohmann::json;

std::vector<std::string> TrainConfig::channel_names() const {
  std::vector<std::string> names;
  if (speed_enabled) names.push_back("speed");
  if (course_enabled) names.push_back("course");
  return names;
}

void TrainConfig::validate() {
  if (warmup_frac <= 0.0 || warmup_frac >= 1.0)
    throw ConfigError("train config: warmup fraction must lie in (0, 1)");
  if (batch_size == 0) throw ConfigError("train config: batch size must be positive");
  if (peak_lr <= 0.0) throw ConfigError("train config: peak learning rate must be positive");
  if (enabled_channels() == 0 && (mode == TrainMode::kJoint || mode == TrainMode::kSinglePlus))
    throw ConfigError("train config: control signals required for this mode");
  if (mode == TrainMode::kNarrationOnly) {
    if (mask_variant != MaskVariant::kDefault && mask_variant != MaskVariant::kNarrationOnly)
      throw ConfigError("train config: narration_only mode fixes the mask variant");
    mask_variant = MaskVariant::kNarrationOnly;
  }
  if (mode == TrainMode::kReasoningOnly) {
    if (mask_variant != MaskVariant::kDefault && mask_variant != MaskVariant::kReasoningOnly)
      throw ConfigError("train config: reasoning_only mode fixes the mask variant");
    mask_variant = MaskVariant::kReasoningOnly;
  }
  if (video_mask_l1_weight < 0.0)
    throw ConfigError("train config: video mask sparsity weight must be >= 0");
  if (video_mask_l1_weight > 0.0 && !model.video_soft_mask)
    throw ConfigError("train config: sparsity weight needs model.video_soft_mask enabled");
  model.signal_channels = std::max<size_t>(enabled_channels(), 1);
  model.encoder().validate();
}

namespace {

void reject_unknown_keys(const json& j, const std::set<std::string>& known,
                         const std::string& where) {
  for (auto it = j.begin(); it != j.end(); ++it)
    if (!known.count(it.key()))
      throw ConfigError("config: unknown key '" + it.key() + "' in " + where);
}

}  // namespace

TrainConfig TrainConfig::from_json_string(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config: invalid JSON: ") + e.what());
  }
  reject_unknown_keys(j,
                      {"mode", "mask_variant", "channels", "epochs", "batch_size", "peak_lr",
                       "warmup_frac", "seed", "vocab_max_size", "control_loss_weight",
                       "video_mask_l1_weight", "model"},
                      "top level");
  TrainConfig cfg;
  if (j.contains("mode")) cfg.mode = train_mode_from_string(j["mode"].get<std::string>());
  if (j.contains("mask_variant"))
    cfg.mask_variant = mask_variant_from_string(j["mask_variant"].get<std::string>());
  if (j.contains("channels")) {
    cfg.speed_enabled = cfg.course_enabled = false;
    for (const auto& c : j["channels"]) {
      const auto name = c.get<std::string>();
      if (name == "speed")
        cfg.speed_enabled = true;
      else if (name == "course")
        cfg.course_enabled = true;
      else
        throw ConfigError("config: unknown signal channel '" + name + "'");
    }
  }
  if (j.contains("epochs")) cfg.epochs = j["epochs"].get<size_t>();
  if (j.contains("batch_size")) cfg.batch_size = j["batch_size"].get<size_t>();
  if (j.contains("peak_lr")) cfg.peak_lr = j["peak_lr"].get<double>();
  if (j.contains("warmup_frac")) cfg.warmup_frac = j["warmup_frac"].get<double>();
  if (j.contains("seed")) cfg.seed = j["seed"].get<uint64_t>();
  if (j.contains("vocab_max_size")) cfg.vocab_max_size = j["vocab_max_size"].get<size_t>();
  if (j.contains("control_loss_weight"))
    cfg.control_loss_weight = j["control_loss_weight"].get<double>();
  if (j.contains("video_mask_l1_weight"))
    cfg.video_mask_l1_weight = j["video_mask_l1_weight"].get<double>();
  if (j.contains("model")) {
    const json& m = j["model"];
    reject_unknown_keys(m,
                        {"frames", "height", "width", "base_channels", "text_dim", "heads",
                         "encoder_blocks", "caption_blocks", "control_blocks", "mlp_ratio",
                         "sentence_len", "video_soft_mask"},
                        "model");
    if (m.contains("frames")) cfg.model.frames = m["frames"].get<size_t>();
    if (m.contains("height")) cfg.model.height = m["height"].get<size_t>();
    if (m.contains("width")) cfg.model.width = m["width"].get<size_t>();
    if (m.contains("base_channels")) cfg.model.base_channels = m["base_channels"].get<size_t>();
    if (m.contains("text_dim")) cfg.model.text_dim = m["text_dim"].get<size_t>();
    if (m.contains("heads")) cfg.model.heads = m["heads"].get<size_t>();
    if (m.contains("encoder_blocks")) cfg.model.encoder_blocks = m["encoder_blocks"].get<size_t>();
    if (m.contains("caption_blocks")) cfg.model.caption_blocks = m["caption_blocks"].get<size_t>();
    if (m.contains("control_blocks")) cfg.model.control_blocks = m["control_blocks"].get<size_t>();
    if (m.contains("mlp_ratio")) cfg.model.mlp_ratio = m["mlp_ratio"].get<size_t>();
    if (m.contains("sentence_len")) cfg.model.sentence_len = m["sentence_len"].get<size_t>();
    if (m.contains("video_soft_mask")) cfg.model.video_soft_mask = m["video_soft_mask"].get<bool>();
  }
  cfg.validate();
  return cfg;
}

TrainConfig TrainConfig::from_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config " + path);
  std::stringstream buf;
  buf << in.rdbuf();
  return from_json_string(buf.str());
}

std::string TrainConfig::to_json() const {
  json channels = json::array();
  for (const auto& c : channel_names()) channels.push_back(c);
  json j = {{"mode", to_string(mode)},
            {"mask_variant", to_string(mask_variant)},
            {"channels", channels},
            {"epochs", epochs},
            {"batch_size", batch_size},
            {"peak_lr", peak_lr},
            {"warmup_frac", warmup_frac},
            {"seed", seed},
            {"vocab_max_size", vocab_max_size},
            {"control_loss_weight", control_loss_weight},
            {"video_mask_l1_weight", video_mask_l1_weight},
            {"model",
             {{"frames", model.frames},
              {"height", model.height},
              {"width", model.width},
              {"base_channels", model.base_channels},
              {"text_dim", model.text_dim},
              {"heads", model.heads},
              {"encoder_blocks", model.encoder_blocks},
              {"caption_blocks", model.caption_blocks},
              {"control_blocks", model.control_blocks},
              {"mlp_ratio", model.mlp_ratio},
              {"sentence_len", model.sentence_len},
              {"video_soft_mask", model.video_soft_mask}}}};
  return j.dump(2);
}

MaskedTokens mask_tokens(const TokenSequence& seq, Rng& rng, size_t vocab_size) {
  if (vocab_size <= kNumReserved) throw ContractError("mask_tokens: vocabulary has no words");
  MaskedTokens out;
  out.seq = seq;
  out.targets.assign(seq.ids.size(), kIgnoreId);
  for (size_t i = 0; i < seq.ids.size(); ++i) {
    if (!seq.real[i]) continue;
    const int id = seq.ids[i];
    if (id == kClsId || id == kPadId) continue;
    if (!rng.bernoulli(0.5)) continue;
    out.targets[i] = id;
    ++out.selected;
    const double r = rng.uniform();
    if (r < 0.8) {
      out.seq.ids[i] = kMaskId;
    } else if (r < 0.9) {
      out.seq.ids[i] =
          static_cast<int>(kNumReserved + rng.uniform_index(vocab_size - kNumReserved));
    }  // else keep the original token
  }
  return out;
}

double lr_at(size_t step, size_t total_steps, double peak, double warmup_frac) {
  if (total_steps == 0) throw ContractError("lr_at: schedule has no steps");
  if (step > total_steps) throw ContractError("lr_at: step beyond schedule end");
  if (warmup_frac <= 0.0 || warmup_frac >= 1.0)
    throw ConfigError("lr_at: warmup fraction must lie in (0, 1)");
  const double warmup = warmup_frac * static_cast<double>(total_steps);
  const double s = static_cast<double>(step);
  if (s <= warmup) return peak * s / warmup;
  return peak * (static_cast<double>(total_steps) - s) /
         (static_cast<double>(total_steps) - warmup);
}

AdamW::AdamW(std::vector<Tensor> params, Hyper hyper) : params_(std::move(params)), hyper_(hyper) {
  m_.resize(params_.size());
  v_.resize(params_.size());
  for (size_t i = 0; i < params_.size(); ++i) {
    m_[i].assign(params_[i].size(), 0.0);
    v_[i].assign(params_[i].size(), 0.0);
  }
}

void AdamW::step(double lr) {
  ++steps_;
  const double t = static_cast<double>(steps_);
  const double bc1 = 1.0 - std::pow(hyper_.beta1, t);
  const double bc2 = 1.0 - std::pow(hyper_.beta2, t);
  for (size_t i = 0; i < params_.size(); ++i) {
    Tensor& p = params_[i];
    if (!p.has_grad()) continue;
    const auto& g = p.grad();
    auto& values = p.mutable_data();
    auto& m = m_[i];
    auto& v = v_[i];
    for (size_t k = 0; k < values.size(); ++k) {
      m[k] = hyper_.beta1 * m[k] + (1.0 - hyper_.beta1) * g[k];
      v[k] = hyper_.beta2 * v[k] + (1.0 - hyper_.beta2) * g[k] * g[k];
      const double m_hat = m[k] / bc1;
      const double v_hat = v[k] / bc2;
      values[k] -= lr * (m_hat / (std::sqrt(v_hat) + hyper_.eps) +
                         hyper_.weight_decay * values[k]);
    }
  }
}

void AdamW::zero_grads() {
  for (auto& p : params_) p.zero_grad();
}

namespace {

// File columns are fixed (speed, course); a channel subset picks from them.
std::vector<size_t> channel_columns(const std::vector<std::string>& names) {
  std::vector<size_t> cols;
  for (const auto& n : names) {
    if (n == "speed")
      cols.push_back(0);
    else if (n == "course")
      cols.push_back(1);
    else
      throw ContractError("unknown signal channel '" + n + "'");
  }
  return cols;
}

std::vector<double> sampled_raw_signals(const Episode& episode, size_t frames,
                                        const std::vector<size_t>& cols) {
  const auto idx = sample_frame_indices(episode.signals.size(), frames);
  std::vector<double> out;
  out.reserve(frames * cols.size());
  for (size_t f = 0; f < frames; ++f)
    for (size_t c : cols) out.push_back(episode.signals[idx[f]][c]);
  return out;
}

std::vector<double> normalize_signals(const std::vector<double>& raw, const NormStats& norm) {
  const size_t n = norm.channels.size();
  std::vector<double> out(raw.size());
  for (size_t i = 0; i < raw.size(); ++i) out[i] = norm.channels[i % n].normalize(raw[i]);
  return out;
}

void blank_sentence(TokenSequence& seq, size_t which) {
  const size_t offset = which * seq.sentence_len;
  for (size_t i = offset; i < offset + seq.sentence_len; ++i) {
    seq.ids[i] = kPadId;
    seq.real[i] = 0;
  }
}

NormStats fit_norm(const Dataset& data, const std::vector<std::string>& names) {
  const auto cols = channel_columns(names);
  NormStats norm;
  for (size_t c = 0; c < cols.size(); ++c) {
    double sum = 0.0, sum_sq = 0.0;
    size_t count = 0;
    for (const auto& e : data.episodes) {
      for (const auto& s : e.signals) {
        sum += s[cols[c]];
        sum_sq += s[cols[c]] * s[cols[c]];
        ++count;
      }
    }
    ChannelNorm ch;
    ch.name = names[c];
    if (count > 0) {
      ch.mean = sum / static_cast<double>(count);
      const double var = std::max(0.0, sum_sq / static_cast<double>(count) - ch.mean * ch.mean);
      ch.stddev = std::max(std::sqrt(var), 1e-6);
    }
    norm.channels.push_back(ch);
  }
  return norm;
}

}  // namespace

Trainer::Trainer(TrainConfig cfg, const Dataset& data)
    : cfg_(std::move(cfg)),
      shuffle_rng_(splitmix64(cfg_.seed ^ 0x73687566ULL)),
      mask_rng_(splitmix64(cfg_.seed ^ 0x6d61736bULL)) {
  cfg_.validate();
  if (data.episodes.empty()) throw ConfigError("trainer: empty dataset");

  std::vector<std::string> corpus;
  for (const auto& e : data.episodes) {
    corpus.push_back(e.narration);
    corpus.push_back(e.reasoning);
  }
  vocab_ = Vocab::build(corpus, cfg_.vocab_max_size);
  cfg_.model.vocab_size = vocab_.size();

  norm_ = fit_norm(data, cfg_.channel_names());
  model_ = Model::init(cfg_.model, cfg_.seed);

  const auto cols = channel_columns(cfg_.channel_names());
  samples_.reserve(data.episodes.size());
  for (const auto& e : data.episodes) {
    Sample s;
    VideoClip raw = load_clip(data, e);
    s.prepared = sample_and_resize(raw, cfg_.model.frames, cfg_.model.height, cfg_.model.width);
    s.tokens = pad_and_segment(vocab_.encode(e.narration), vocab_.encode(e.reasoning),
                               cfg_.model.sentence_len);
    if (cfg_.mode == TrainMode::kNarrationOnly) blank_sentence(s.tokens, 1);
    if (cfg_.mode == TrainMode::kReasoningOnly) blank_sentence(s.tokens, 0);
    if (!cols.empty())
      s.signals_norm = normalize_signals(sampled_raw_signals(e, cfg_.model.frames, cols), norm_);
    samples_.push_back(std::move(s));
  }

  optimizer_ = AdamW(model_.named_params().tensors());
  const size_t batches_per_epoch = (samples_.size() + cfg_.batch_size - 1) / cfg_.batch_size;
  total_steps_ = cfg_.epochs * batches_per_epoch;
}

StepLosses Trainer::train_step(const std::vector<size_t>& indices, double lr) {
  if (indices.empty()) throw ContractError("train_step: empty batch");
  Tape tape;
  Tensor caption_sum, control_sum;
  for (size_t idx : indices) {
    const Sample& s = samples_.at(idx);
    Tensor video = model_.video_tokens(s.prepared);
    Tensor context = video;
    if (cfg_.mode == TrainMode::kSinglePlus) {
      Tensor signals = Tensor::leaf({cfg_.model.frames, cfg_.model.signal_channels},
                                    s.signals_norm, false);
      context = concat_rows(video, model_.signal_tokens(signals));
    }
    Rng sample_rng = mask_rng_.fork(step_ * 1000003ULL + idx);
    MaskedTokens masked = mask_tokens(s.tokens, sample_rng, vocab_.size());
    bool no_targets = false;
    Tensor caption_loss = model_.caption.mlm_loss(context, masked.seq, masked.targets,
                                                  cfg_.mask_variant, &no_targets,
                                                  model_.video_attention_bias());
    if (no_targets)
      std::fprintf(stderr, "warning: step %zu sample %zu has no masked positions\n", step_, idx);
    caption_sum = caption_sum.defined() ? add(caption_sum, caption_loss) : caption_loss;
    if (cfg_.mode == TrainMode::kJoint) {
      Tensor truth = Tensor::leaf({cfg_.model.frames, cfg_.model.signal_channels},
                                  s.signals_norm, false);
      Tensor prediction = model_.control.predict(video, cfg_.model.encoder().temporal_slices(),
                                                 cfg_.model.encoder().grid_rows() *
                                                     cfg_.model.encoder().grid_cols());
      Tensor control = control_loss(truth, prediction);
      control_sum = control_sum.defined() ? add(control_sum, control) : control;
    }
  }
  const double inv = 1.0 / static_cast<double>(indices.size());
  Tensor caption_mean = scale(caption_sum, inv);
  Tensor loss = caption_mean;
  Tensor control_mean;
  if (control_sum.defined()) {
    control_mean = scale(control_sum, inv);
    loss = add(caption_mean, cfg_.control_loss_weight == 1.0
                                 ? control_mean
                                 : scale(control_mean, cfg_.control_loss_weight));
  }
  if (cfg_.video_mask_l1_weight > 0.0 && model_.video_mask_logits.defined())
    loss = add(loss, scale(mean_all(sigmoid(model_.video_mask_logits)),
                           cfg_.video_mask_l1_weight));
  if (!std::isfinite(loss.item())) {
    const std::string culprit = tape.first_nonfinite();
    throw std::runtime_error("train_step " + std::to_string(step_) +
                             ": non-finite loss; first non-finite tensor: " +
                             (culprit.empty() ? "<loss itself>" : culprit));
  }
  tape.backward(loss);
  optimizer_.step(lr);
  optimizer_.zero_grads();
  ++step_;
  StepLosses losses;
  losses.caption = caption_mean.item();
  losses.control = control_mean.defined() ? control_mean.item() : 0.0;
  losses.total = loss.item();
  return losses;
}

StepLosses Trainer::train(std::ostream* log) {
  StepLosses last{};
  for (size_t epoch = 0; epoch < cfg_.epochs; ++epoch) {
    std::vector<size_t> order(samples_.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = i;
    Rng epoch_rng = shuffle_rng_.fork(epoch);
    for (size_t i = order.size(); i > 1; --i)
      std::swap(order[i - 1], order[epoch_rng.uniform_index(i)]);

    double cap = 0.0, ctrl = 0.0, tot = 0.0;
    size_t batches = 0;
    for (size_t begin = 0; begin < order.size(); begin += cfg_.batch_size) {
      const size_t end = std::min(order.size(), begin + cfg_.batch_size);
      const std::vector<size_t> batch(order.begin() + begin, order.begin() + end);
      const double lr = lr_at(std::min(step_ + 1, total_steps_), total_steps_, cfg_.peak_lr,
                              cfg_.warmup_frac);
      last = train_step(batch, lr);
      cap += last.caption;
      ctrl += last.control;
      tot += last.total;
      ++batches;
    }
    if (log && batches > 0) {
      (*log) << "epoch " << epoch + 1 << "/" << cfg_.epochs << "  caption_loss "
             << cap / batches << "  control_loss " << ctrl / batches << "  total "
             << tot / batches << "\n";
    }
  }
  return last;
}

void Trainer::save(const std::string& dir) {
  CheckpointMeta meta;
  meta.mode = cfg_.mode;
  meta.mask_variant = cfg_.mask_variant;
  meta.seed = cfg_.seed;
  meta.step = step_;
  json recipe = json::parse(cfg_.to_json());
  const AdamW::Hyper hyper;
  recipe["optimizer"] = {{"name", "adamw"},
                         {"beta1", hyper.beta1},
                         {"beta2", hyper.beta2},
                         {"eps", hyper.eps},
                         {"weight_decay", hyper.weight_decay}};
  meta.train_recipe_json = recipe.dump();
  save_checkpoint(dir, model_, vocab_, norm_, meta);
}

MetricsReport Trainer::evaluate(const Dataset& eval_data) const {
  return evaluate_model(model_, vocab_, norm_, cfg_.mode, cfg_.mask_variant, eval_data);
}

namespace {

struct EvalSample {
  VideoClip prepared;
  std::vector<double> signals_norm;
  std::vector<double> signals_raw;
};

EvalSample prepare_eval(const Dataset& data, const Episode& episode, const ModelConfig& cfg,
                        const NormStats& norm) {
  EvalSample s;
  VideoClip raw = load_clip(data, episode);
  s.prepared = sample_and_resize(raw, cfg.frames, cfg.height, cfg.width);
  std::vector<std::string> names;
  for (const auto& c : norm.channels) names.push_back(c.name);
  if (!names.empty()) {
    s.signals_raw = sampled_raw_signals(episode, cfg.frames, channel_columns(names));
    s.signals_norm = normalize_signals(s.signals_raw, norm);
  }
  return s;
}

}  // namespace

GeneratedCaptions generate_captions(const Model& model, const Vocab& vocab, const NormStats& norm,
                                    TrainMode mode, MaskVariant variant, const Dataset& data) {
  GeneratedCaptions out;
  for (const auto& episode : data.episodes) {
    EvalSample s = prepare_eval(data, episode, model.cfg, norm);
    Tensor context = model.video_tokens(s.prepared);
    if (mode == TrainMode::kSinglePlus) {
      Tensor signals =
          Tensor::leaf({model.cfg.frames, model.cfg.signal_channels}, s.signals_norm, false);
      context = concat_rows(context, model.signal_tokens(signals));
    }
    CaptionHead::Generated generated =
        model.caption.generate(context, vocab, variant, model.video_attention_bias());
    out.narration.push_back(generated.narration);
    out.reasoning.push_back(generated.reasoning);
  }
  return out;
}

MetricsReport evaluate_model(const Model& model, const Vocab& vocab, const NormStats& norm,
                             TrainMode mode, MaskVariant variant, const Dataset& data) {
  if (data.episodes.empty()) throw ContractError("evaluate: empty dataset");
  MetricsReport report;

  GeneratedCaptions generated = generate_captions(model, vocab, norm, mode, variant, data);
  auto add_segment = [&](const std::string& name, const std::vector<std::string>& candidates,
                         auto reference_of) {
    std::vector<std::vector<std::string>> references;
    for (const auto& e : data.episodes) references.push_back({reference_of(e)});
    SegmentScores scores;
    for (size_t i = 0; i < candidates.size(); ++i) {
      scores.bleu4 += bleu4(candidates[i], references[i]);
      scores.meteor_lite += meteor_lite(candidates[i], references[i]);
      scores.rouge_l += rouge_l(candidates[i], references[i]);
    }
    const double n = static_cast<double>(candidates.size());
    scores.bleu4 /= n;
    scores.meteor_lite /= n;
    scores.rouge_l /= n;
    CiderResult consensus = cider(candidates, references);
    if (consensus.degenerate)
      std::fprintf(stderr, "warning: %s cider over a corpus of %zu item(s); idf is degenerate\n",
                   name.c_str(), candidates.size());
    scores.cider = consensus.mean;
    report.segments[name] = scores;
  };
  if (variant != MaskVariant::kReasoningOnly)
    add_segment("narration", generated.narration,
                [](const Episode& e) { return e.narration; });
  if (variant != MaskVariant::kNarrationOnly)
    add_segment("reasoning", generated.reasoning,
                [](const Episode& e) { return e.reasoning; });

  if (mode == TrainMode::kJoint && !norm.channels.empty()) {
    const size_t n = norm.channels.size();
    std::vector<std::vector<double>> truth(n), predicted(n);
    for (const auto& episode : data.episodes) {
      EvalSample s = prepare_eval(data, episode, model.cfg, norm);
      Tensor video = model.video_tokens(s.prepared);
      Tensor prediction = model.control.predict(
          video, model.cfg.encoder().temporal_slices(),
          model.cfg.encoder().grid_rows() * model.cfg.encoder().grid_cols());
      for (size_t f = 1; f < model.cfg.frames; ++f) {
        for (size_t c = 0; c < n; ++c) {
          truth[c].push_back(s.signals_raw[f * n + c]);
          predicted[c].push_back(norm.channels[c].denormalize(prediction.data()[(f - 1) * n + c]));
        }
      }
    }
    for (size_t c = 0; c < n; ++c) {
      ChannelScores scores;
      scores.rmse = rmse(truth[c], predicted[c]);
      for (double sigma : tolerance_levels())
        scores.tolerant[tolerance_key(sigma)] = tolerant_accuracy(truth[c], predicted[c], sigma);
      report.channels[norm.channels[c].name] = scores;
    }
  }
  return report;
}

}  // namespace drivecap
