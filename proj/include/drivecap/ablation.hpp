#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include "drivecap/trainer.hpp"

namespace drivecap {

enum class AblationSuite { kMultitask, kSignals, kCrossAttention, kFrames };

AblationSuite ablation_suite_from_string(const std::string& name);
std::string to_string(AblationSuite suite);

struct AblationRow {
  std::string label;
  MetricsReport metrics;
};

struct AblationReport {
  std::string suite;
  uint64_t seed = 0;
  std::vector<AblationRow> rows;

  std::string to_json() const;   // deterministic bytes, 4-decimal numbers
  std::string to_table() const;  // rows = configs, columns = headline metrics
};

// Trains one model per row of the suite (all rows share the base seed) and
// evaluates each on the held-out split. Suites mirror the joint-vs-single,
// signal-subset, mask-variant and frame-count comparisons.
AblationReport run_ablation(AblationSuite suite, const TrainConfig& base,
                            const Dataset& train_data, const Dataset& eval_data,
                            std::ostream* log = nullptr);

}  // namespace drivecap
