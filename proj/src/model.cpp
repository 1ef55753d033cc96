#include "drivecap/model.hpp"

#include <filesystem>
#include <fstream>

#include <json.hpp>

#include "drivecap/tensor_io.hpp"

namespace drivecap {

namespace fs = std::filesystem;
using nlohmann::json;

TrainMode train_mode_from_string(const std::string& name) {
  if (name == "joint") return TrainMode::kJoint;
  if (name == "single") return TrainMode::kSingle;
  if (name == "single_plus") return TrainMode::kSinglePlus;
  if (name == "narration_only") return TrainMode::kNarrationOnly;
  if (name == "reasoning_only") return TrainMode::kReasoningOnly;
  throw ConfigError("unknown training mode '" + name + "'");
}

std::string to_string(TrainMode mode) {
  switch (mode) {
    case TrainMode::kJoint: return "joint";
    case TrainMode::kSingle: return "single";
    case TrainMode::kSinglePlus: return "single_plus";
    case TrainMode::kNarrationOnly: return "narration_only";
    case TrainMode::kReasoningOnly: return "reasoning_only";
  }
  throw ConfigError("unknown training mode");
}

EncoderConfig ModelConfig::encoder() const {
  EncoderConfig e;
  e.frames = frames;
  e.height = height;
  e.width = width;
  e.base_channels = base_channels;
  e.blocks = encoder_blocks;
  e.heads = heads;
  e.mlp_ratio = mlp_ratio;
  return e;
}

void ModelConfig::validate() const {
  encoder().validate();
  if (vocab_size == 0) throw ConfigError("model: vocab size not set");
  if (text_dim == 0 || text_dim % heads != 0)
    throw ConfigError("model: text_dim must be a positive multiple of heads");
  if (sentence_len < 2) throw ConfigError("model: sentence_len must be >= 2");
  if (signal_channels == 0) throw ConfigError("model: signal channel count is zero");
}

Model Model::init(const ModelConfig& cfg, uint64_t seed) {
  cfg.validate();
  Rng rng(splitmix64(seed ^ 0x6d6f64656cULL));
  Model m;
  m.cfg = cfg;
  m.encoder = VideoEncoder::init(cfg.encoder(), rng);
  m.projector = TokenProjector::init(cfg.encoder().feature_channels(), cfg.text_dim, rng);
  m.caption = CaptionHead::init(cfg.text_dim, cfg.vocab_size, cfg.sentence_len, cfg.caption_blocks,
                                cfg.heads, cfg.mlp_ratio, rng);
  m.control = ControlHead::init(cfg.text_dim, cfg.signal_channels, cfg.frames, cfg.control_blocks,
                                cfg.heads, cfg.mlp_ratio, rng);
  m.signal_embed = Linear::init(cfg.signal_channels, cfg.text_dim, rng);
  if (cfg.video_soft_mask) {
    // logits start high so the mask opens near full attention
    m.video_mask_logits = Tensor::full({cfg.video_tokens(), cfg.video_tokens()}, 4.0, true);
  }
  ParamMap params = m.named_params();
  for (auto& [name, tensor] : params.items) tensor.set_name(name);
  return m;
}

ParamMap Model::named_params() const {
  ParamMap params;
  encoder.collect("encoder", params);
  projector.collect("projector", params);
  caption.collect("caption", params);
  control.collect("control", params);
  signal_embed.collect("signal_embed", params);
  if (video_mask_logits.defined()) params.add("video_mask_logits", video_mask_logits);
  return params;
}

Tensor Model::video_attention_bias() const {
  if (!video_mask_logits.defined()) return Tensor();
  return log_sigmoid(video_mask_logits);
}

Tensor Model::video_tokens(const VideoClip& prepared) const {
  VideoFeatures features = encoder.encode(prepared);
  return projector.project(flatten_features(features));
}

Tensor Model::signal_tokens(const Tensor& normalized_signals) const {
  if (normalized_signals.rank() != 2 || normalized_signals.shape()[0] != cfg.frames ||
      normalized_signals.shape()[1] != cfg.signal_channels)
    throw ContractError("signal_tokens: signals " + shape_str(normalized_signals.shape()) +
                        " do not match (frames, channels)");
  return signal_embed.forward(normalized_signals);
}

namespace {

json model_config_json(const ModelConfig& cfg) {
  return json{{"frames", cfg.frames},
              {"height", cfg.height},
              {"width", cfg.width},
              {"base_channels", cfg.base_channels},
              {"text_dim", cfg.text_dim},
              {"heads", cfg.heads},
              {"encoder_blocks", cfg.encoder_blocks},
              {"caption_blocks", cfg.caption_blocks},
              {"control_blocks", cfg.control_blocks},
              {"mlp_ratio", cfg.mlp_ratio},
              {"sentence_len", cfg.sentence_len},
              {"vocab_size", cfg.vocab_size},
              {"signal_channels", cfg.signal_channels},
              {"video_soft_mask", cfg.video_soft_mask}};
}

ModelConfig model_config_from_json(const json& j) {
  ModelConfig cfg;
  cfg.frames = j.at("frames").get<size_t>();
  cfg.height = j.at("height").get<size_t>();
  cfg.width = j.at("width").get<size_t>();
  cfg.base_channels = j.at("base_channels").get<size_t>();
  cfg.text_dim = j.at("text_dim").get<size_t>();
  cfg.heads = j.at("heads").get<size_t>();
  cfg.encoder_blocks = j.at("encoder_blocks").get<size_t>();
  cfg.caption_blocks = j.at("caption_blocks").get<size_t>();
  cfg.control_blocks = j.at("control_blocks").get<size_t>();
  cfg.mlp_ratio = j.at("mlp_ratio").get<size_t>();
  cfg.sentence_len = j.at("sentence_len").get<size_t>();
  cfg.vocab_size = j.at("vocab_size").get<size_t>();
  cfg.signal_channels = j.at("signal_channels").get<size_t>();
  cfg.video_soft_mask = j.at("video_soft_mask").get<bool>();
  return cfg;
}

}  // namespace

void save_checkpoint(const std::string& dir, Model& model, const Vocab& vocab,
                     const NormStats& norm, const CheckpointMeta& meta) {
  fs::create_directories(fs::path(dir) / "params");
  vocab.save((fs::path(dir) / "vocab.txt").string());

  ParamMap params = model.named_params();
  json names = json::array();
  for (auto& [name, tensor] : params.items) {
    quantize_to_f32(tensor);  // keep the live model identical to what a reload gives
    write_tensor_file((fs::path(dir) / "params" / (name + ".adpt")).string(), tensor);
    names.push_back(name);
  }

  json norm_json = json::array();  // order carries the channel layout
  for (const auto& c : norm.channels)
    norm_json.push_back(json{{"name", c.name}, {"mean", c.mean}, {"std", c.stddev}});

  json manifest = {{"version", 1},
                   {"model", model_config_json(model.cfg)},
                   {"mode", to_string(meta.mode)},
                   {"mask_variant", to_string(meta.mask_variant)},
                   {"norm", norm_json},
                   {"seed", meta.seed},
                   {"step", meta.step},
                   {"vocab_file", "vocab.txt"},
                   {"params", names}};
  if (!meta.train_recipe_json.empty()) {
    try {
      manifest["train"] = json::parse(meta.train_recipe_json);
    } catch (const json::exception&) {
      manifest["train"] = meta.train_recipe_json;  // keep it even if not valid JSON
    }
  }
  std::ofstream out(fs::path(dir) / "manifest.json", std::ios::trunc);
  if (!out) throw IoError("cannot write checkpoint manifest in " + dir);
  out << manifest.dump(2) << '\n';
}

Checkpoint load_checkpoint(const std::string& dir) {
  std::ifstream in(fs::path(dir) / "manifest.json");
  if (!in) throw IoError("cannot open checkpoint manifest in " + dir);
  json manifest;
  try {
    in >> manifest;
  } catch (const json::exception& e) {
    throw IoError("checkpoint manifest in " + dir + " is not valid JSON: " + e.what());
  }
  if (manifest.at("version").get<int>() != 1)
    throw IoError("checkpoint " + dir + ": unsupported manifest version");

  Checkpoint ckpt;
  ckpt.meta.mode = train_mode_from_string(manifest.at("mode").get<std::string>());
  ckpt.meta.mask_variant = mask_variant_from_string(manifest.at("mask_variant").get<std::string>());
  ckpt.meta.seed = manifest.at("seed").get<uint64_t>();
  ckpt.meta.step = manifest.at("step").get<uint64_t>();

  ModelConfig cfg = model_config_from_json(manifest.at("model"));
  ckpt.vocab = Vocab::load((fs::path(dir) / manifest.at("vocab_file").get<std::string>()).string());
  if (ckpt.vocab.size() != cfg.vocab_size)
    throw IoError("checkpoint " + dir + ": vocab size mismatch with manifest");

  for (const auto& entry : manifest.at("norm")) {
    ChannelNorm c;
    c.name = entry.at("name").get<std::string>();
    c.mean = entry.at("mean").get<double>();
    c.stddev = entry.at("std").get<double>();
    ckpt.norm.channels.push_back(c);
  }

  ckpt.model = Model::init(cfg, ckpt.meta.seed);
  ParamMap params = ckpt.model.named_params();
  const auto names = manifest.at("params").get<std::vector<std::string>>();
  if (names.size() != params.items.size())
    throw IoError("checkpoint " + dir + ": parameter list does not match model layout");
  for (const auto& name : names) {
    const Tensor* t = params.find(name);
    if (!t) throw IoError("checkpoint " + dir + ": unexpected parameter '" + name + "'");
    StoredTensor stored = read_tensor_file((fs::path(dir) / "params" / (name + ".adpt")).string());
    if (stored.shape != t->shape())
      throw IoError("checkpoint " + dir + ": parameter '" + name + "' has shape " +
                    shape_str(stored.shape) + ", expected " + shape_str(t->shape()));
    auto& dst = const_cast<Tensor*>(t)->mutable_data();
    for (size_t i = 0; i < dst.size(); ++i) dst[i] = static_cast<double>(stored.values[i]);
  }
  return ckpt;
}

}  // namespace drivecap
