#include "drivecap/metrics.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <set>

#include "drivecap/errors.hpp"

namespace drivecap {

namespace {

constexpr double kBleuEps = 1e-9;

using Counts = std::map<std::string, size_t>;

std::string join_gram(const std::vector<std::string>& tokens, size_t begin, size_t n) {
  std::string g = tokens[begin];
  for (size_t i = 1; i < n; ++i) {
    g.push_back(' ');
    g += tokens[begin + i];
  }
  return g;
}

Counts ngram_counts(const std::vector<std::string>& tokens, size_t n) {
  Counts counts;
  if (tokens.size() < n) return counts;
  for (size_t i = 0; i + n <= tokens.size(); ++i) ++counts[join_gram(tokens, i, n)];
  return counts;
}

size_t lcs_length(const std::vector<std::string>& a, const std::vector<std::string>& b) {
  std::vector<size_t> prev(b.size() + 1, 0), cur(b.size() + 1, 0);
  for (size_t i = 1; i <= a.size(); ++i) {
    for (size_t j = 1; j <= b.size(); ++j) {
      if (a[i - 1] == b[j - 1])
        cur[j] = prev[j - 1] + 1;
      else
        cur[j] = std::max(prev[j], cur[j - 1]);
    }
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

bool is_consonant(char c) { return c != 'a' && c != 'e' && c != 'i' && c != 'o' && c != 'u'; }

}  // namespace

std::vector<std::string> metric_tokenize(const std::string& text) {
  std::vector<std::string> tokens;
  std::string cur;
  for (char raw : text) {
    const auto c = static_cast<unsigned char>(raw);
    if (std::isalnum(c)) {
      cur.push_back(static_cast<char>(std::tolower(c)));
    } else if (!cur.empty()) {
      tokens.push_back(cur);
      cur.clear();
    }
  }
  if (!cur.empty()) tokens.push_back(cur);
  return tokens;
}

std::string stem_word(const std::string& word) {
  static const std::vector<std::string> kSuffixes = {"ing", "ed", "es", "s", "ly", "e"};
  std::string w = word;
  for (const auto& suf : kSuffixes) {
    if (w.size() > suf.size() + 2 && w.compare(w.size() - suf.size(), suf.size(), suf) == 0) {
      w.resize(w.size() - suf.size());
      break;
    }
  }
  const size_t n = w.size();
  if (n >= 4 && w[n - 1] == w[n - 2] && is_consonant(w[n - 1])) w.resize(n - 1);
  return w;
}

double bleu4(const std::string& candidate, const std::vector<std::string>& references) {
  if (references.empty()) throw ContractError("bleu4: empty reference set");
  const auto cand = metric_tokenize(candidate);
  if (cand.empty()) return 0.0;

  std::vector<std::vector<std::string>> refs;
  refs.reserve(references.size());
  for (const auto& r : references) refs.push_back(metric_tokenize(r));

  double log_sum = 0.0;
  for (size_t n = 1; n <= 4; ++n) {
    const Counts cc = ngram_counts(cand, n);
    size_t total = 0, matched = 0;
    for (const auto& [gram, count] : cc) {
      total += count;
      size_t best_clip = 0;
      for (const auto& ref : refs) {
        const Counts rc = ngram_counts(ref, n);
        auto it = rc.find(gram);
        if (it != rc.end()) best_clip = std::max(best_clip, it->second);
      }
      matched += std::min(count, best_clip);
    }
    const double p = (total == 0 || matched == 0) ? kBleuEps
                                                  : static_cast<double>(matched) / total;
    log_sum += 0.25 * std::log(p);
  }

  // brevity against the closest reference length (shorter wins ties)
  size_t closest = refs[0].size();
  for (const auto& ref : refs) {
    const auto diff = [&](size_t len) {
      return len > cand.size() ? len - cand.size() : cand.size() - len;
    };
    if (diff(ref.size()) < diff(closest) || (diff(ref.size()) == diff(closest) && ref.size() < closest))
      closest = ref.size();
  }
  const double bp =
      cand.size() >= closest
          ? 1.0
          : std::exp(1.0 - static_cast<double>(closest) / static_cast<double>(cand.size()));
  return bp * std::exp(log_sum);
}

double rouge_l(const std::string& candidate, const std::vector<std::string>& references) {
  if (references.empty()) throw ContractError("rouge_l: empty reference set");
  const auto cand = metric_tokenize(candidate);
  if (cand.empty()) return 0.0;
  constexpr double kBeta = 1.2;
  double best = 0.0;
  for (const auto& reference : references) {
    const auto ref = metric_tokenize(reference);
    if (ref.empty()) continue;
    const double lcs = static_cast<double>(lcs_length(cand, ref));
    if (lcs == 0.0) continue;
    const double p = lcs / static_cast<double>(cand.size());
    const double r = lcs / static_cast<double>(ref.size());
    const double f = (1.0 + kBeta * kBeta) * r * p / (r + kBeta * kBeta * p);
    best = std::max(best, f);
  }
  return best;
}

CiderResult cider(const std::vector<std::string>& candidates,
                  const std::vector<std::vector<std::string>>& references) {
  if (candidates.size() != references.size())
    throw ContractError("cider: candidate/reference corpus size mismatch");
  CiderResult result;
  result.degenerate = candidates.size() < 2;
  const double corpus_size = static_cast<double>(std::max<size_t>(candidates.size(), 1));

  // document frequency over reference sets, per n-gram order
  std::vector<Counts> df(4);
  std::vector<std::vector<std::vector<Counts>>> ref_counts(references.size());
  for (size_t i = 0; i < references.size(); ++i) {
    std::set<std::string> seen[4];
    ref_counts[i].resize(references[i].size());
    for (size_t j = 0; j < references[i].size(); ++j) {
      const auto tokens = metric_tokenize(references[i][j]);
      ref_counts[i][j].resize(4);
      for (size_t n = 0; n < 4; ++n) {
        ref_counts[i][j][n] = ngram_counts(tokens, n + 1);
        for (const auto& [gram, _] : ref_counts[i][j][n]) seen[n].insert(gram);
      }
    }
    for (size_t n = 0; n < 4; ++n)
      for (const auto& gram : seen[n]) ++df[n][gram];
  }

  auto idf = [&](size_t n, const std::string& gram) {
    auto it = df[n].find(gram);
    const double d = it == df[n].end() ? 1.0 : static_cast<double>(std::max<size_t>(it->second, 1));
    return std::log(corpus_size / d);
  };
  auto weighted = [&](const Counts& counts, size_t n) {
    std::map<std::string, double> vec;
    for (const auto& [gram, count] : counts) vec[gram] = static_cast<double>(count) * idf(n, gram);
    return vec;
  };
  auto cosine = [](const std::map<std::string, double>& a,
                   const std::map<std::string, double>& b) {
    double dot = 0.0, na = 0.0, nb = 0.0;
    for (const auto& [gram, wa] : a) {
      na += wa * wa;
      auto it = b.find(gram);
      if (it != b.end()) dot += wa * it->second;
    }
    for (const auto& [_, wb] : b) nb += wb * wb;
    if (na == 0.0 || nb == 0.0) return 0.0;
    return dot / (std::sqrt(na) * std::sqrt(nb));
  };

  result.per_item.resize(candidates.size(), 0.0);
  for (size_t i = 0; i < candidates.size(); ++i) {
    const auto cand_tokens = metric_tokenize(candidates[i]);
    double score = 0.0;
    for (size_t n = 0; n < 4; ++n) {
      const auto cand_vec = weighted(ngram_counts(cand_tokens, n + 1), n);
      double per_ref = 0.0;
      for (size_t j = 0; j < references[i].size(); ++j)
        per_ref += cosine(cand_vec, weighted(ref_counts[i][j][n], n));
      if (!references[i].empty()) per_ref /= static_cast<double>(references[i].size());
      score += per_ref;
    }
    result.per_item[i] = 10.0 * score / 4.0;
    result.mean += result.per_item[i];
  }
  if (!candidates.empty()) result.mean /= static_cast<double>(candidates.size());
  return result;
}

double meteor_lite(const std::string& candidate, const std::vector<std::string>& references) {
  if (references.empty()) throw ContractError("meteor_lite: empty reference set");
  const auto cand = metric_tokenize(candidate);
  if (cand.empty()) return 0.0;

  double best = 0.0;
  for (const auto& reference : references) {
    const auto ref = metric_tokenize(reference);
    if (ref.empty()) continue;

    // alignment: candidate position -> reference position, exact pass first,
    // stem pass over the remainder, both greedy left to right
    std::vector<int> align(cand.size(), -1);
    std::vector<bool> ref_used(ref.size(), false);
    for (size_t i = 0; i < cand.size(); ++i) {
      for (size_t j = 0; j < ref.size(); ++j) {
        if (!ref_used[j] && cand[i] == ref[j]) {
          align[i] = static_cast<int>(j);
          ref_used[j] = true;
          break;
        }
      }
    }
    for (size_t i = 0; i < cand.size(); ++i) {
      if (align[i] >= 0) continue;
      const std::string cs = stem_word(cand[i]);
      for (size_t j = 0; j < ref.size(); ++j) {
        if (!ref_used[j] && cs == stem_word(ref[j])) {
          align[i] = static_cast<int>(j);
          ref_used[j] = true;
          break;
        }
      }
    }

    size_t matches = 0, chunks = 0;
    int prev_ref = -2;
    for (size_t i = 0; i < cand.size(); ++i) {
      if (align[i] < 0) {
        prev_ref = -2;
        continue;
      }
      ++matches;
      if (align[i] != prev_ref + 1) ++chunks;
      prev_ref = align[i];
    }
    if (matches == 0) continue;

    const double p = static_cast<double>(matches) / static_cast<double>(cand.size());
    const double r = static_cast<double>(matches) / static_cast<double>(ref.size());
    const double f_mean = 10.0 * p * r / (r + 9.0 * p);
    const double frag = static_cast<double>(chunks) / static_cast<double>(matches);
    const double penalty = 0.5 * frag * frag * frag;
    best = std::max(best, f_mean * (1.0 - penalty));
  }
  return best;
}

double rmse(const std::vector<double>& truth, const std::vector<double>& predicted) {
  if (truth.size() != predicted.size())
    throw ContractError("rmse: " + std::to_string(truth.size()) + " truth values vs " +
                        std::to_string(predicted.size()) + " predictions");
  if (truth.empty()) return 0.0;
  double sum = 0.0;
  for (size_t i = 0; i < truth.size(); ++i) {
    const double d = predicted[i] - truth[i];
    sum += d * d;
  }
  return std::sqrt(sum / static_cast<double>(truth.size()));
}

double tolerant_accuracy(const std::vector<double>& truth, const std::vector<double>& predicted,
                         double sigma) {
  if (truth.size() != predicted.size())
    throw ContractError("tolerant_accuracy: size mismatch");
  if (sigma <= 0.0) throw ContractError("tolerant_accuracy: sigma must be positive");
  if (truth.empty()) return 0.0;
  size_t hits = 0;
  for (size_t i = 0; i < truth.size(); ++i) {
    const double d = predicted[i] - truth[i];
    if (-sigma < d && d < sigma) ++hits;  // strict bounds
  }
  return 100.0 * static_cast<double>(hits) / static_cast<double>(truth.size());
}

namespace {

std::string fmt4(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.4f", v);
  return buf;
}

}  // namespace

std::string tolerance_key(double sigma) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "A_%.1f", sigma);
  return buf;
}

std::string MetricsReport::to_json() const {
  std::string out = "{\n";
  out += "  \"notes\": {\"C\": \"cider, no length penalty\", \"M_lite\": \"exact+stem match\"},\n";
  out += "  \"segments\": {";
  bool first = true;
  for (const auto& [name, s] : segments) {
    if (!first) out += ",";
    first = false;
    out += "\n    \"" + name + "\": {\"B4\": " + fmt4(s.bleu4) + ", \"M_lite\": " +
           fmt4(s.meteor_lite) + ", \"R\": " + fmt4(s.rouge_l) + ", \"C\": " + fmt4(s.cider) + "}";
  }
  out += segments.empty() ? "},\n" : "\n  },\n";
  out += "  \"channels\": {";
  first = true;
  for (const auto& [name, c] : channels) {
    if (!first) out += ",";
    first = false;
    out += "\n    \"" + name + "\": {\"RMSE\": " + fmt4(c.rmse);
    for (double sigma : tolerance_levels()) {
      auto it = c.tolerant.find(tolerance_key(sigma));
      out += ", \"" + tolerance_key(sigma) + "\": " + fmt4(it == c.tolerant.end() ? 0.0 : it->second);
    }
    out += "}";
  }
  out += channels.empty() ? "}\n" : "\n  }\n";
  out += "}\n";
  return out;
}

}  // namespace drivecap
