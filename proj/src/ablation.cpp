#include "drivecap/ablation.hpp"

#include <cstdio>
#include <ostream>
#include <sstream>

#include "drivecap/errors.hpp"

namespace drivecap {

AblationSuite ablation_suite_from_string(const std::string& name) {
  if (name == "multitask") return AblationSuite::kMultitask;
  if (name == "signals") return AblationSuite::kSignals;
  if (name == "cross-attention") return AblationSuite::kCrossAttention;
  if (name == "frames") return AblationSuite::kFrames;
  throw ConfigError("unknown ablation suite '" + name +
                    "' (expected multitask|signals|cross-attention|frames)");
}

std::string to_string(AblationSuite suite) {
  switch (suite) {
    case AblationSuite::kMultitask: return "multitask";
    case AblationSuite::kSignals: return "signals";
    case AblationSuite::kCrossAttention: return "cross-attention";
    case AblationSuite::kFrames: return "frames";
  }
  throw ConfigError("unknown ablation suite");
}

namespace {

struct RowSpec {
  std::string label;
  TrainConfig cfg;
};

std::vector<RowSpec> suite_rows(AblationSuite suite, const TrainConfig& base) {
  std::vector<RowSpec> rows;
  auto with = [&](const std::string& label, auto mutate) {
    TrainConfig cfg = base;
    mutate(cfg);
    rows.push_back({label, std::move(cfg)});
  };
  switch (suite) {
    case AblationSuite::kMultitask:
      with("joint", [](TrainConfig& c) { c.mode = TrainMode::kJoint; });
      with("single", [](TrainConfig& c) { c.mode = TrainMode::kSingle; });
      with("single_plus", [](TrainConfig& c) { c.mode = TrainMode::kSinglePlus; });
      break;
    case AblationSuite::kSignals:
      with("speed", [](TrainConfig& c) {
        c.speed_enabled = true;
        c.course_enabled = false;
      });
      with("course", [](TrainConfig& c) {
        c.speed_enabled = false;
        c.course_enabled = true;
      });
      with("speed+course", [](TrainConfig& c) {
        c.speed_enabled = true;
        c.course_enabled = true;
      });
      break;
    case AblationSuite::kCrossAttention:
      with("default", [](TrainConfig& c) { c.mask_variant = MaskVariant::kDefault; });
      with("no_cross", [](TrainConfig& c) { c.mask_variant = MaskVariant::kNoCross; });
      with("swapped_cross", [](TrainConfig& c) { c.mask_variant = MaskVariant::kSwappedCross; });
      with("narration_only", [](TrainConfig& c) { c.mode = TrainMode::kNarrationOnly; });
      with("reasoning_only", [](TrainConfig& c) { c.mode = TrainMode::kReasoningOnly; });
      break;
    case AblationSuite::kFrames:
      for (size_t frames : {2u, 4u, 8u, 16u, 32u})
        with("T=" + std::to_string(frames),
             [frames](TrainConfig& c) { c.model.frames = frames; });
      break;
  }
  return rows;
}

std::string fmt4(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.4f", v);
  return buf;
}

}  // namespace

AblationReport run_ablation(AblationSuite suite, const TrainConfig& base,
                            const Dataset& train_data, const Dataset& eval_data,
                            std::ostream* log) {
  AblationReport report;
  report.suite = to_string(suite);
  report.seed = base.seed;
  for (auto& row : suite_rows(suite, base)) {
    if (log) (*log) << "[ablate] " << report.suite << " :: " << row.label << "\n";
    Trainer trainer(row.cfg, train_data);
    trainer.train(log);
    report.rows.push_back({row.label, trainer.evaluate(eval_data)});
  }
  return report;
}

std::string AblationReport::to_json() const {
  std::string out = "{\n";
  out += "  \"suite\": \"" + suite + "\",\n";
  out += "  \"seed\": " + std::to_string(seed) + ",\n";
  out += "  \"rows\": [\n";
  for (size_t i = 0; i < rows.size(); ++i) {
    std::string metrics = rows[i].metrics.to_json();
    // indent the nested report under the row object
    std::string indented;
    std::istringstream lines(metrics);
    std::string line;
    bool first = true;
    while (std::getline(lines, line)) {
      if (!first) indented += "\n";
      indented += "      " + line;
      first = false;
    }
    out += "    {\"label\": \"" + rows[i].label + "\", \"metrics\":\n" + indented + "\n    }";
    out += i + 1 < rows.size() ? ",\n" : "\n";
  }
  out += "  ]\n}\n";
  return out;
}

std::string AblationReport::to_table() const {
  std::ostringstream os;
  os << "suite: " << suite << " (seed " << seed << ")\n";
  os << "config              | narr B4  narr C   | reas B4  reas C   | speed RMSE\n";
  for (const auto& row : rows) {
    char label[32];
    std::snprintf(label, sizeof label, "%-19s", row.label.c_str());
    os << label << " | ";
    auto seg = [&](const std::string& name) -> std::string {
      auto it = row.metrics.segments.find(name);
      if (it == row.metrics.segments.end()) return "-        -       ";
      return fmt4(it->second.bleu4) + "   " + fmt4(it->second.cider);
    };
    os << seg("narration") << " | " << seg("reasoning") << " | ";
    auto ch = row.metrics.channels.find("speed");
    os << (ch == row.metrics.channels.end() ? std::string("-") : fmt4(ch->second.rmse));
    os << "\n";
  }
  return os.str();
}

}  // namespace drivecap
