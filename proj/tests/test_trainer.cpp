#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "drivecap/ablation.hpp"
#include "drivecap/data.hpp"
#include "drivecap/trainer.hpp"

using namespace drivecap;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir(const std::string& tag) {
  const fs::path p = fs::temp_directory_path() / ("drivecap_trainer_" + tag);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

Dataset tiny_dataset(const fs::path& dir, size_t clips, uint64_t seed, size_t frames = 4,
                     size_t size = 32) {
  GenOptions options;
  options.clips = clips;
  options.seed = seed;
  options.frames = frames;
  options.size = size;
  return gen_synthetic(dir.string(), options);
}

TrainConfig tiny_config() {
  TrainConfig cfg;
  cfg.epochs = 1;
  cfg.batch_size = 4;
  cfg.model.frames = 4;
  cfg.model.height = 32;
  cfg.model.width = 32;
  cfg.model.base_channels = 4;
  cfg.model.text_dim = 32;
  cfg.model.heads = 4;
  cfg.model.encoder_blocks = 1;
  cfg.model.caption_blocks = 1;
  cfg.model.control_blocks = 1;
  cfg.model.sentence_len = 8;
  cfg.seed = 9;
  return cfg;
}

}  // namespace

TEST_CASE("masking statistics match the 50% and 80/10/10 policy") {
  Vocab vocab = Vocab::build({"the car stops because the light is red and bright"}, 80);
  TokenSequence seq = pad_and_segment(vocab.encode("the car stops going fast now ok"),
                                      vocab.encode("because the light is red today"), 15);
  size_t candidates = 0, selected = 0, masked = 0, random = 0, kept = 0;
  Rng rng(123);
  const size_t rounds = 4000;
  for (size_t round = 0; round < rounds; ++round) {
    MaskedTokens out = mask_tokens(seq, rng, vocab.size());
    for (size_t i = 0; i < seq.ids.size(); ++i) {
      if (!seq.real[i] || seq.ids[i] == kClsId) continue;
      ++candidates;
      if (out.targets[i] == kIgnoreId) {
        CHECK(out.seq.ids[i] == seq.ids[i]);  // unselected tokens are untouched
        continue;
      }
      ++selected;
      CHECK(out.targets[i] == seq.ids[i]);
      if (out.seq.ids[i] == kMaskId)
        ++masked;
      else if (out.seq.ids[i] == seq.ids[i])
        ++kept;
      else
        ++random;
    }
    // specials that must never be selected
    for (size_t i = 0; i < seq.ids.size(); ++i) {
      if (seq.ids[i] == kClsId || seq.ids[i] == kPadId) {
        CHECK(out.targets[i] == kIgnoreId);
        CHECK(out.seq.ids[i] == seq.ids[i]);
      }
    }
  }
  REQUIRE(candidates >= 10000);
  const double sel_frac = static_cast<double>(selected) / candidates;
  CHECK(sel_frac == doctest::Approx(0.5).epsilon(0.04));  // 0.50 +/- 0.02
  CHECK(std::abs(sel_frac - 0.5) < 0.02);
  const double mask_frac = static_cast<double>(masked) / selected;
  const double rand_frac = static_cast<double>(random) / selected;
  const double keep_frac = static_cast<double>(kept) / selected;
  CHECK(std::abs(mask_frac - 0.8) < 0.03);
  CHECK(std::abs(rand_frac - 0.1) < 0.02);
  CHECK(std::abs(keep_frac - 0.1) < 0.02);
  // a kept-or-random replacement never produces reserved ids
  CHECK(rand_frac > 0.0);
}

TEST_CASE("masking is deterministic under a fixed seed") {
  Vocab vocab = Vocab::build({"the car stops because it is red"}, 64);
  TokenSequence seq =
      pad_and_segment(vocab.encode("the car stops"), vocab.encode("because it is red"), 15);
  Rng a(42), b(42);
  MaskedTokens ma = mask_tokens(seq, a, vocab.size());
  MaskedTokens mb = mask_tokens(seq, b, vocab.size());
  CHECK(ma.seq.ids == mb.seq.ids);
  CHECK(ma.targets == mb.targets);
}

TEST_CASE("learning rate schedule hits the documented points") {
  CHECK(lr_at(100, 1000, 1e-4) == doctest::Approx(1e-4).epsilon(1e-12));
  CHECK(lr_at(50, 1000, 1e-4) == doctest::Approx(5e-5).epsilon(1e-12));
  CHECK(lr_at(1000, 1000, 1e-4) == 0.0);
  CHECK(lr_at(0, 1000, 1e-4) == 0.0);
}

TEST_CASE("learning rate schedule is continuous with a single peak") {
  const size_t total = 777;
  const double peak = 3e-3;
  double prev = lr_at(0, total, peak);
  size_t peaks = 0;
  bool rising = true;
  for (size_t s = 1; s <= total; ++s) {
    const double cur = lr_at(s, total, peak);
    CHECK(std::abs(cur - prev) < peak / (total * 0.1) + 1e-12);  // no jumps
    if (rising && cur < prev) {
      ++peaks;
      rising = false;
    }
    CHECK(cur <= peak + 1e-15);
    prev = cur;
  }
  CHECK(peaks == 1);
  CHECK_THROWS_AS(lr_at(5, 4, 1.0), ContractError);
}

TEST_CASE("train config json parsing is strict") {
  CHECK_THROWS_AS(TrainConfig::from_json_string("{\"momentum\": 0.9}"), ConfigError);
  CHECK_THROWS_AS(TrainConfig::from_json_string("{\"model\": {\"depth\": 3}}"), ConfigError);
  CHECK_THROWS_AS(TrainConfig::from_json_string("{\"mode\": \"dual\"}"), ConfigError);
  CHECK_THROWS_AS(TrainConfig::from_json_string("not json"), ConfigError);
  CHECK_THROWS_AS(TrainConfig::from_json_string("{\"channels\": []}"), ConfigError);
  TrainConfig cfg = TrainConfig::from_json_string(
      "{\"mode\": \"single_plus\", \"channels\": [\"speed\"], \"epochs\": 2,"
      " \"model\": {\"frames\": 8}}");
  CHECK(cfg.mode == TrainMode::kSinglePlus);
  CHECK(cfg.model.frames == 8);
  CHECK(cfg.enabled_channels() == 1);
  CHECK(cfg.model.signal_channels == 1);
}

TEST_CASE("joint losses add exactly and couple the shared encoder") {
  const auto dir = temp_dir("joint");
  Dataset data = tiny_dataset(dir, 4, 21);
  TrainConfig cfg = tiny_config();
  Trainer trainer(cfg, data);
  StepLosses losses = trainer.train_step({0, 1, 2, 3}, 1e-3);
  CHECK(std::abs(losses.total - (losses.caption + losses.control)) < 1e-12);
  CHECK(losses.control > 0.0);
  fs::remove_all(dir);
}

TEST_CASE("control loss gradient reaches the shared video encoder") {
  const auto dir = temp_dir("couple");
  Dataset data = tiny_dataset(dir, 2, 22);
  TrainConfig cfg = tiny_config();
  Trainer trainer(cfg, data);
  Model& model = trainer.model();

  VideoClip clip = load_clip(data, data.episodes[0]);
  VideoClip prepared = sample_and_resize(clip, cfg.model.frames, 32, 32);
  std::vector<double> truth(cfg.model.frames * 2, 0.5);
  {
    Tape tape;
    Tensor video = model.video_tokens(prepared);
    Tensor pred = model.control.predict(video, cfg.model.frames / 2, 1);
    Tensor loss = control_loss(Tensor::leaf({cfg.model.frames, 2}, truth), pred);
    tape.backward(loss);
  }
  REQUIRE(model.encoder.patch_weight.has_grad());
  double norm = 0.0;
  for (double g : model.encoder.patch_weight.grad()) norm += std::abs(g);
  CHECK(norm > 0.0);
  fs::remove_all(dir);
}

TEST_CASE("single mode leaves control parameters untouched") {
  const auto dir = temp_dir("single");
  Dataset data = tiny_dataset(dir, 4, 23);
  TrainConfig cfg = tiny_config();
  cfg.mode = TrainMode::kSingle;
  Trainer trainer(cfg, data);
  Model& model = trainer.model();
  const std::vector<double> before = model.control.readout.weight.data();

  // run the losses without the optimizer clearing grads, then inspect
  StepLosses losses = trainer.train_step({0, 1, 2, 3}, 1e-3);
  CHECK(losses.control == 0.0);
  CHECK(losses.total == losses.caption);
  CHECK(model.control.readout.weight.data() == before);  // no grad, no update
  CHECK_FALSE(model.control.readout.weight.has_grad());
  fs::remove_all(dir);
}

TEST_CASE("single_plus consumes signals as input tokens") {
  const auto dir = temp_dir("splus");
  Dataset data = tiny_dataset(dir, 4, 24);
  TrainConfig cfg = tiny_config();
  cfg.mode = TrainMode::kSinglePlus;
  Trainer trainer(cfg, data);
  Model& model = trainer.model();
  trainer.train_step({0, 1, 2, 3}, 1e-3);
  // the signal embedding received gradient and moved
  bool moved = false;
  Rng probe(0);
  Model fresh = Model::init(trainer.model().cfg, cfg.seed);
  for (size_t i = 0; i < model.signal_embed.weight.size(); ++i)
    if (model.signal_embed.weight.data()[i] != fresh.signal_embed.weight.data()[i]) moved = true;
  CHECK(moved);
  fs::remove_all(dir);
}

TEST_CASE("loss decreases over repeated steps on a fixed batch") {
  const auto dir = temp_dir("overfit");
  Dataset data = tiny_dataset(dir, 4, 25);
  TrainConfig cfg = tiny_config();
  Trainer trainer(cfg, data);
  double first = 0.0, last = 0.0;
  for (int step = 0; step < 100; ++step) {
    StepLosses losses = trainer.train_step({0, 1, 2, 3}, 2e-3);
    if (step == 0) first = losses.total;
    last = losses.total;
  }
  CHECK(last < 0.5 * first);
  fs::remove_all(dir);
}

TEST_CASE("mlm overfits a single example within 500 constant-lr steps") {
  Rng rng(31);
  Vocab vocab = Vocab::build({"the car stops", "because the light is red"}, 96);
  CaptionHead head = CaptionHead::init(24, vocab.size(), 8, 1, 2, 2, rng);
  Tensor context = Tensor::randn({2, 24}, rng, 1.0, false);
  TokenSequence seq =
      pad_and_segment(vocab.encode("the car stops"), vocab.encode("because the light is red"), 8);
  // fixed masking: every second candidate position
  TokenSequence masked = seq;
  std::vector<int> targets(seq.ids.size(), kIgnoreId);
  size_t k = 0;
  for (size_t i = 0; i < seq.ids.size(); ++i) {
    if (!seq.real[i] || seq.ids[i] == kClsId) continue;
    if (k++ % 2 == 0) {
      targets[i] = seq.ids[i];
      masked.ids[i] = kMaskId;
    }
  }
  ParamMap params;
  head.collect("head", params);
  AdamW opt(params.tensors());
  double loss_value = 1e9;
  for (int step = 0; step < 500; ++step) {
    Tape tape;
    Tensor loss = head.mlm_loss(context, masked, targets, MaskVariant::kDefault);
    loss_value = loss.item();
    tape.backward(loss);
    opt.step(1e-3);
    opt.zero_grads();
  }
  CHECK(loss_value < 0.05);
}

TEST_CASE("a model overfit on one pair generates exactly that pair") {
  const auto dir = temp_dir("genoverfit");
  // 12 clips so every template word recurs and enters the vocab whole
  Dataset data = tiny_dataset(dir, 12, 42);
  TrainConfig cfg = tiny_config();
  Trainer trainer(cfg, data);
  for (int step = 0; step < 300; ++step) trainer.train_step({0}, 2e-3);
  Dataset probe = data;
  probe.episodes.assign(data.episodes.begin(), data.episodes.begin() + 1);
  GeneratedCaptions out = generate_captions(trainer.model(), trainer.vocab(), trainer.norm(),
                                            cfg.mode, cfg.mask_variant, probe);
  CHECK(out.narration[0] == normalize_text(data.episodes[0].narration));
  CHECK(out.reasoning[0] == normalize_text(data.episodes[0].reasoning));
  fs::remove_all(dir);
}

TEST_CASE("non-finite losses abort with the offending tensor name") {
  const auto dir = temp_dir("nan");
  Dataset data = tiny_dataset(dir, 2, 26);
  TrainConfig cfg = tiny_config();
  Trainer trainer(cfg, data);
  auto& values = trainer.model().projector.mlp.weight.mutable_data();
  values[3] = std::nan("");
  try {
    trainer.train_step({0, 1}, 1e-3);
    FAIL("expected abort");
  } catch (const std::runtime_error& e) {
    CHECK(std::string(e.what()).find("projector.mlp.weight") != std::string::npos);
  }
  fs::remove_all(dir);
}

TEST_CASE("checkpoint round-trip reproduces forward outputs bitwise") {
  const auto data_dir = temp_dir("ckpt_data");
  const auto ckpt_dir = temp_dir("ckpt");
  Dataset data = tiny_dataset(data_dir, 4, 27);
  TrainConfig cfg = tiny_config();
  Trainer trainer(cfg, data);
  trainer.train_step({0, 1, 2, 3}, 1e-3);
  trainer.save(ckpt_dir.string());

  VideoClip probe = load_clip(data, data.episodes[0]);
  VideoClip prepared = sample_and_resize(probe, cfg.model.frames, 32, 32);
  Tensor before = trainer.model().video_tokens(prepared);  // post-save == quantized

  Checkpoint loaded = load_checkpoint(ckpt_dir.string());
  CHECK(loaded.meta.mode == TrainMode::kJoint);
  CHECK(loaded.meta.step == 1);
  CHECK(loaded.vocab.size() == trainer.vocab().size());
  REQUIRE(loaded.norm.channels.size() == 2);
  CHECK(loaded.norm.channels[0].name == "speed");

  Tensor after = loaded.model.video_tokens(prepared);
  REQUIRE(after.size() == before.size());
  for (size_t i = 0; i < after.size(); ++i) CHECK(after.data()[i] == before.data()[i]);

  // a second load is identical too
  Checkpoint again = load_checkpoint(ckpt_dir.string());
  Tensor after2 = again.model.video_tokens(prepared);
  for (size_t i = 0; i < after2.size(); ++i) CHECK(after2.data()[i] == after.data()[i]);
  fs::remove_all(data_dir);
  fs::remove_all(ckpt_dir);
}

TEST_CASE("narration_only training blanks the reasoning segment") {
  const auto dir = temp_dir("narronly");
  Dataset data = tiny_dataset(dir, 4, 28);
  TrainConfig cfg = tiny_config();
  cfg.mode = TrainMode::kNarrationOnly;
  Trainer trainer(cfg, data);
  CHECK(trainer.config().mask_variant == MaskVariant::kNarrationOnly);
  StepLosses losses = trainer.train_step({0, 1}, 1e-3);
  CHECK(losses.caption > 0.0);
  MetricsReport report = trainer.evaluate(data);
  CHECK(report.segments.count("narration") == 1);
  CHECK(report.segments.count("reasoning") == 0);
  fs::remove_all(dir);
}

TEST_CASE("soft video mask trains toward sparsity under the L1 penalty") {
  const auto dir = temp_dir("softmask");
  Dataset data = tiny_dataset(dir, 4, 30);
  TrainConfig cfg = tiny_config();
  cfg.model.video_soft_mask = true;
  cfg.video_mask_l1_weight = 0.5;
  Trainer trainer(cfg, data);
  Model& model = trainer.model();
  REQUIRE(model.video_mask_logits.defined());
  REQUIRE(model.named_params().find("video_mask_logits") != nullptr);
  const double before = model.video_mask_logits.data()[0];
  for (int i = 0; i < 10; ++i) trainer.train_step({0, 1, 2, 3}, 5e-3);
  double after_mean = 0.0;
  for (double v : model.video_mask_logits.data()) after_mean += v;
  after_mean /= static_cast<double>(model.video_mask_logits.size());
  CHECK(after_mean < before);  // penalty pushes the gate down

  // the hook is rejected without the enabling flag
  TrainConfig bad = tiny_config();
  bad.video_mask_l1_weight = 0.1;
  CHECK_THROWS_AS(Trainer(bad, data), ConfigError);
  fs::remove_all(dir);
}

TEST_CASE("ablation suites carry the documented row sets and are seed-stable") {
  const auto dir = temp_dir("ablate");
  Dataset data = tiny_dataset(dir, 6, 29);
  Dataset train = data, eval = data;
  train.episodes.assign(data.episodes.begin(), data.episodes.begin() + 4);
  eval.episodes.assign(data.episodes.begin() + 4, data.episodes.end());

  TrainConfig base = tiny_config();
  base.epochs = 1;

  AblationReport multitask = run_ablation(AblationSuite::kMultitask, base, train, eval);
  REQUIRE(multitask.rows.size() == 3);
  CHECK(multitask.rows[0].label == "joint");
  CHECK(multitask.rows[1].label == "single");
  CHECK(multitask.rows[2].label == "single_plus");

  AblationReport frames = run_ablation(AblationSuite::kFrames, base, train, eval);
  REQUIRE(frames.rows.size() == 5);
  CHECK(frames.rows[0].label == "T=2");
  CHECK(frames.rows[4].label == "T=32");

  AblationReport cross_a = run_ablation(AblationSuite::kCrossAttention, base, train, eval);
  AblationReport cross_b = run_ablation(AblationSuite::kCrossAttention, base, train, eval);
  REQUIRE(cross_a.rows.size() == 5);
  CHECK(cross_a.rows[2].label == "swapped_cross");
  CHECK(cross_a.to_json() == cross_b.to_json());

  AblationReport signals = run_ablation(AblationSuite::kSignals, base, train, eval);
  REQUIRE(signals.rows.size() == 3);
  CHECK(signals.rows[0].label == "speed");
  CHECK(signals.rows[1].label == "course");
  CHECK(signals.rows[2].label == "speed+course");
  fs::remove_all(dir);
}
