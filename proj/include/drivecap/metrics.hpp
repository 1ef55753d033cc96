#pragma once

#include <map>
#include <string>
#include <vector>

namespace drivecap {

// Metric-side tokenization: lowercase, strip punctuation, split on
// whitespace. Fixed so scores are bit-reproducible.
std::vector<std::string> metric_tokenize(const std::string& text);

// Crude suffix-stripping stemmer shared by the METEOR variant.
std::string stem_word(const std::string& word);

// Geometric mean of clipped 1..4-gram precisions times the brevity penalty;
// zero counts are epsilon-smoothed (1e-9) so short candidates score near 0.
double bleu4(const std::string& candidate, const std::vector<std::string>& references);

// LCS-based F-measure with beta = 1.2, max over references.
double rouge_l(const std::string& candidate, const std::vector<std::string>& references);

struct CiderResult {
  std::vector<double> per_item;
  double mean = 0.0;
  bool degenerate = false;  // corpus smaller than 2 items: idf carries no signal
};

// Consensus score from tf-idf n-gram cosines (n = 1..4), averaged and scaled
// by 10. This is plain CIDEr without the Gaussian length penalty of CIDEr-D.
CiderResult cider(const std::vector<std::string>& candidates,
                  const std::vector<std::vector<std::string>>& references);

// Unigram alignment by exact then stem match; F_mean = 10PR/(R+9P),
// fragmentation penalty 0.5*(chunks/matches)^3, max over references.
// Stem matching stands in for the usual synonym dictionary, hence the
// "meteor-lite" label in reports.
double meteor_lite(const std::string& candidate, const std::vector<std::string>& references);

double rmse(const std::vector<double>& truth, const std::vector<double>& predicted);

// Percentage of predictions with |error| strictly inside sigma.
double tolerant_accuracy(const std::vector<double>& truth, const std::vector<double>& predicted,
                         double sigma);

inline const std::vector<double>& tolerance_levels() {
  static const std::vector<double> kLevels = {0.1, 0.5, 1.0, 5.0, 10.0};
  return kLevels;
}

// "A_0.1" .. "A_10.0", the fixed report keys.
std::string tolerance_key(double sigma);

struct SegmentScores {
  double bleu4 = 0.0;
  double meteor_lite = 0.0;
  double rouge_l = 0.0;
  double cider = 0.0;
};

struct ChannelScores {
  double rmse = 0.0;
  std::map<std::string, double> tolerant;  // "A_0.1" .. "A_10.0"
};

struct MetricsReport {
  std::map<std::string, SegmentScores> segments;  // narration / reasoning
  std::map<std::string, ChannelScores> channels;  // speed / course
  // Serializes with a fixed key schema and 4-decimal numbers; the header
  // declares the CIDEr and METEOR variants in use.
  std::string to_json() const;
};

}  // namespace drivecap
