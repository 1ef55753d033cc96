#include <cstdio>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>

#include "drivecap/ablation.hpp"
#include "drivecap/data.hpp"
#include "drivecap/gradsuite.hpp"
#include "drivecap/trainer.hpp"

namespace {

using namespace drivecap;

int cmd_gen_data(const std::string& out, size_t clips, uint64_t seed, size_t frames, size_t size) {
  GenOptions options;
  options.clips = clips;
  options.seed = seed;
  options.frames = frames;
  options.size = size;
  Dataset ds = gen_synthetic(out, options);
  std::cout << "wrote " << ds.size() << " episodes to " << out << "\n";
  return 0;
}

int cmd_train(const std::string& data, const std::string& config, const std::string& out) {
  TrainConfig cfg = TrainConfig::from_json_file(config);
  Dataset ds = read_dataset(data);
  Trainer trainer(cfg, ds);
  std::cout << "training " << to_string(cfg.mode) << " model on " << ds.size() << " episodes ("
            << trainer.total_steps() << " steps)\n";
  trainer.train(&std::cout);
  trainer.save(out);
  std::cout << "checkpoint written to " << out << "\n";
  return 0;
}

int cmd_eval(const std::string& ckpt, const std::string& data, const std::string& report_path) {
  Checkpoint ckpt_data = load_checkpoint(ckpt);
  Dataset ds = read_dataset(data);
  MetricsReport report = evaluate_model(ckpt_data.model, ckpt_data.vocab, ckpt_data.norm,
                                        ckpt_data.meta.mode, ckpt_data.meta.mask_variant, ds);
  const std::string json = report.to_json();
  std::ofstream out(report_path, std::ios::trunc);
  if (!out) throw IoError("cannot write report to " + report_path);
  out << json;
  std::cout << json;
  return 0;
}

int cmd_infer(const std::string& ckpt, const std::string& clip_path) {
  Checkpoint ckpt_data = load_checkpoint(ckpt);
  if (ckpt_data.meta.mode == TrainMode::kSinglePlus)
    throw ConfigError(
        "infer: this checkpoint consumes control-signal inputs; use eval with a dataset instead");
  VideoClip clip = read_clip_file(clip_path);
  const ModelConfig& cfg = ckpt_data.model.cfg;
  VideoClip prepared = sample_and_resize(clip, cfg.frames, cfg.height, cfg.width);
  Tensor context = ckpt_data.model.video_tokens(prepared);
  CaptionHead::Generated generated =
      ckpt_data.model.caption.generate(context, ckpt_data.vocab, ckpt_data.meta.mask_variant);
  std::cout << "Narration: " << generated.narration << "\n";
  std::cout << "Reasoning: " << generated.reasoning << "\n";
  return 0;
}

int cmd_gradcheck() {
  const auto entries = run_gradient_suite();
  for (const auto& e : entries)
    std::printf("%-24s max_rel_err %.3e  %s\n", e.name.c_str(), e.max_rel_error,
                e.pass ? "pass" : "FAIL");
  if (!gradient_suite_passed(entries)) {
    std::cout << "gradient suite FAILED\n";
    return 1;
  }
  std::cout << "gradient suite passed (" << entries.size() << " checks)\n";
  return 0;
}

int cmd_ablate(const std::string& suite_name, const std::string& data, const std::string& out,
               const std::string& config) {
  AblationSuite suite = ablation_suite_from_string(suite_name);
  Dataset full = read_dataset(data);
  if (full.size() < 4) throw ConfigError("ablate: need at least 4 episodes");
  // deterministic split: last quarter held out for evaluation
  Dataset train = full, eval = full;
  const size_t eval_count = std::max<size_t>(1, full.size() / 4);
  train.episodes.assign(full.episodes.begin(), full.episodes.end() - eval_count);
  eval.episodes.assign(full.episodes.end() - eval_count, full.episodes.end());

  TrainConfig base;
  if (!config.empty()) base = TrainConfig::from_json_file(config);
  base.validate();
  AblationReport report = run_ablation(suite, base, train, eval, &std::cout);
  std::ofstream json_out(out, std::ios::trunc);
  if (!json_out) throw IoError("cannot write ablation report to " + out);
  json_out << report.to_json();
  std::cout << report.to_table();
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"desk-scale driving caption + control signal model"};
  app.require_subcommand(1);

  auto* gen = app.add_subcommand("gen-data", "generate a synthetic driving dataset");
  std::string gen_out;
  size_t gen_clips = 64, gen_frames = 32, gen_size = 64;
  uint64_t gen_seed = 1;
  gen->add_option("--out", gen_out, "output dataset directory")->required();
  gen->add_option("--clips", gen_clips, "episode count");
  gen->add_option("--seed", gen_seed, "master seed");
  gen->add_option("--frames", gen_frames, "raw frames per clip");
  gen->add_option("--size", gen_size, "square frame edge (multiple of 32)");

  auto* train = app.add_subcommand("train", "train a model from a config");
  std::string train_data, train_config, train_out;
  train->add_option("--data", train_data, "dataset directory")->required();
  train->add_option("--config", train_config, "train config JSON")->required();
  train->add_option("--out", train_out, "checkpoint output directory")->required();

  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint on a dataset");
  std::string eval_ckpt, eval_data, eval_report;
  eval->add_option("--ckpt", eval_ckpt, "checkpoint directory")->required();
  eval->add_option("--data", eval_data, "dataset directory")->required();
  eval->add_option("--report", eval_report, "metrics report output path")->required();

  auto* infer = app.add_subcommand("infer", "caption one clip file");
  std::string infer_ckpt, infer_clip;
  infer->add_option("--ckpt", infer_ckpt, "checkpoint directory")->required();
  infer->add_option("--clip", infer_clip, "clip tensor file")->required();

  app.add_subcommand("gradcheck", "finite-difference check of every op and the joint model");

  auto* ablate = app.add_subcommand("ablate", "run an ablation suite");
  std::string ablate_suite, ablate_data, ablate_out, ablate_config;
  ablate->add_option("--suite", ablate_suite, "multitask|signals|cross-attention|frames")
      ->required();
  ablate->add_option("--data", ablate_data, "dataset directory")->required();
  ablate->add_option("--out", ablate_out, "report JSON output path")->required();
  ablate->add_option("--config", ablate_config, "optional base train config JSON");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 1;
  }

  try {
    if (gen->parsed()) return cmd_gen_data(gen_out, gen_clips, gen_seed, gen_frames, gen_size);
    if (train->parsed()) return cmd_train(train_data, train_config, train_out);
    if (eval->parsed()) return cmd_eval(eval_ckpt, eval_data, eval_report);
    if (infer->parsed()) return cmd_infer(infer_ckpt, infer_clip);
    if (app.get_subcommand("gradcheck")->parsed()) return cmd_gradcheck();
    if (ablate->parsed()) return cmd_ablate(ablate_suite, ablate_data, ablate_out, ablate_config);
  } catch (const drivecap::ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const drivecap::IoError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "runtime failure: " << e.what() << "\n";
    return 2;
  }
  return 1;
}
