#pragma once

#include <map>
#include <string>
#include <vector>

#include "drivecap/errors.hpp"

namespace drivecap {

// Reserved vocabulary slots.
constexpr int kPadId = 0;
constexpr int kClsId = 1;
constexpr int kSepId = 2;
constexpr int kMaskId = 3;
constexpr int kUnkId = 4;
constexpr size_t kNumReserved = 5;

// Unused-position marker for language-model targets.
constexpr int kIgnoreId = -100;

// Tokens per sentence slot, [CLS] and [SEP] included.
constexpr size_t kSentenceLen = 15;

// Lowercase and collapse whitespace; the canonical text form for both
// tokenization and metric scoring.
std::string normalize_text(const std::string& text);

// Split into word units: whitespace-separated, with punctuation split off as
// single-character units.
std::vector<std::string> split_words(const std::string& text);

class Vocab {
 public:
  Vocab() = default;

  // Greedy frequency-ranked subword vocabulary: reserved tokens, then every
  // corpus character (word-initial and "##" continuation forms), then
  // substring pieces by descending corpus frequency until max_size.
  static Vocab build(const std::vector<std::string>& corpus, size_t max_size);

  static Vocab from_tokens(const std::vector<std::string>& tokens);

  size_t size() const { return tokens_.size(); }
  const std::string& token(int id) const;
  int id(const std::string& token) const;  // -1 when absent
  bool contains(const std::string& token) const { return id(token) >= 0; }

  // Greedy longest-match-first WordPiece encoding; unmatched words map to a
  // single [UNK].
  std::vector<int> encode(const std::string& sentence) const;
  std::string decode(const std::vector<int>& ids) const;

  void save(const std::string& path) const;  // one token per line, line = id
  static Vocab load(const std::string& path);

 private:
  std::vector<std::string> tokens_;
  std::map<std::string, int> index_;
  void append(const std::string& token);
};

// Two fixed-length sentence slots: [CLS] w.. [SEP] [PAD].. per sentence,
// segment 0 for narration, 1 for reasoning.
struct TokenSequence {
  std::vector<int> ids;          // 2 * sentence_len
  std::vector<int> segment_ids;  // 0 | 1 per slot
  std::vector<uint8_t> real;     // 1 for non-[PAD] slots
  size_t sentence_len = kSentenceLen;
  bool truncated = false;

  size_t total_len() const { return ids.size(); }
};

// Lays both sentences out in their slots; words beyond sentence_len - 2 are
// truncated (flagged on the result).
TokenSequence pad_and_segment(const std::vector<int>& narration_ids,
                              const std::vector<int>& reasoning_ids,
                              size_t sentence_len = kSentenceLen);

}  // namespace drivecap
