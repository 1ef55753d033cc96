#include "drivecap/tokenizer.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <set>

namespace drivecap {

namespace {

const char* kReservedTokens[kNumReserved] = {"[PAD]", "[CLS]", "[SEP]", "[MASK]", "[UNK]"};

bool is_word_char(char c) { return std::isalnum(static_cast<unsigned char>(c)) != 0; }

bool is_punct_token(const std::string& t) { return t.size() == 1 && !is_word_char(t[0]); }

}  // namespace

std::string normalize_text(const std::string& text) {
  std::string out;
  out.reserve(text.size());
  bool pending_space = false;
  for (char c : text) {
    if (std::isspace(static_cast<unsigned char>(c))) {
      pending_space = !out.empty();
      continue;
    }
    if (pending_space) {
      out.push_back(' ');
      pending_space = false;
    }
    out.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
  }
  return out;
}

std::vector<std::string> split_words(const std::string& text) {
  const std::string norm = normalize_text(text);
  std::vector<std::string> words;
  std::string cur;
  auto flush = [&] {
    if (!cur.empty()) {
      words.push_back(cur);
      cur.clear();
    }
  };
  for (char c : norm) {
    if (c == ' ') {
      flush();
    } else if (is_word_char(c)) {
      cur.push_back(c);
    } else {
      flush();
      words.emplace_back(1, c);
    }
  }
  flush();
  return words;
}

void Vocab::append(const std::string& token) {
  index_.emplace(token, static_cast<int>(tokens_.size()));
  tokens_.push_back(token);
}

Vocab Vocab::build(const std::vector<std::string>& corpus, size_t max_size) {
  std::map<std::string, size_t> word_counts;
  for (const auto& sentence : corpus)
    for (const auto& w : split_words(sentence)) ++word_counts[w];
  if (word_counts.empty()) throw ConfigError("build_vocab: empty corpus");

  std::set<char> charset;
  for (const auto& [w, c] : word_counts)
    for (char ch : w) charset.insert(ch);

  const size_t floor_size = kNumReserved + 2 * charset.size();
  if (max_size < floor_size)
    throw ConfigError("build_vocab: max_size " + std::to_string(max_size) +
                      " below reserved+charset floor " + std::to_string(floor_size));

  Vocab v;
  for (const auto* t : kReservedTokens) v.append(t);
  for (char ch : charset) v.append(std::string(1, ch));
  for (char ch : charset) v.append("##" + std::string(1, ch));

  // Candidate pieces: every substring of every word, continuation pieces
  // prefixed "##", weighted by word frequency.
  std::map<std::string, size_t> piece_counts;
  for (const auto& [w, count] : word_counts) {
    for (size_t i = 0; i < w.size(); ++i) {
      for (size_t len = 1; i + len <= w.size(); ++len) {
        if (len == 1) continue;  // single chars already seeded
        const std::string piece = (i == 0 ? "" : "##") + w.substr(i, len);
        piece_counts[piece] += count;
      }
    }
  }
  struct Candidate {
    std::string piece;
    size_t count;
    size_t content_len;
  };
  std::vector<Candidate> candidates;
  candidates.reserve(piece_counts.size());
  for (const auto& [piece, count] : piece_counts) {
    if (count < 2) continue;  // singleton pieces stay char-encodable
    const size_t content = piece.rfind("##", 0) == 0 ? piece.size() - 2 : piece.size();
    candidates.push_back({piece, count, content});
  }
  // frequency first; longer pieces win ties since encoding is longest-match
  std::sort(candidates.begin(), candidates.end(), [](const Candidate& a, const Candidate& b) {
    if (a.count != b.count) return a.count > b.count;
    if (a.content_len != b.content_len) return a.content_len > b.content_len;
    return a.piece < b.piece;
  });
  for (const auto& c : candidates) {
    if (v.size() >= max_size) break;
    if (!v.contains(c.piece)) v.append(c.piece);
  }
  return v;
}

Vocab Vocab::from_tokens(const std::vector<std::string>& tokens) {
  Vocab v;
  for (const auto& t : tokens) v.append(t);
  if (v.size() < kNumReserved) throw ConfigError("vocab: missing reserved tokens");
  for (size_t i = 0; i < kNumReserved; ++i)
    if (v.tokens_[i] != kReservedTokens[i])
      throw ConfigError("vocab: reserved slot " + std::to_string(i) + " holds '" + v.tokens_[i] +
                        "'");
  return v;
}

const std::string& Vocab::token(int id) const {
  if (id < 0 || static_cast<size_t>(id) >= tokens_.size())
    throw ContractError("vocab: id " + std::to_string(id) + " out of range");
  return tokens_[static_cast<size_t>(id)];
}

int Vocab::id(const std::string& token) const {
  auto it = index_.find(token);
  return it == index_.end() ? -1 : it->second;
}

std::vector<int> Vocab::encode(const std::string& sentence) const {
  std::vector<int> ids;
  for (const auto& word : split_words(sentence)) {
    std::vector<int> pieces;
    size_t pos = 0;
    bool ok = true;
    while (pos < word.size()) {
      size_t len = word.size() - pos;
      int match = -1;
      for (; len >= 1; --len) {
        const std::string piece = (pos == 0 ? "" : "##") + word.substr(pos, len);
        match = id(piece);
        if (match >= 0) break;
      }
      if (match < 0) {
        ok = false;
        break;
      }
      pieces.push_back(match);
      pos += len;
    }
    if (ok)
      ids.insert(ids.end(), pieces.begin(), pieces.end());
    else
      ids.push_back(kUnkId);
  }
  return ids;
}

std::string Vocab::decode(const std::vector<int>& ids) const {
  std::string out;
  for (int id : ids) {
    if (id == kPadId || id == kClsId || id == kSepId || id == kMaskId) continue;
    const std::string& t = token(id);
    if (t.rfind("##", 0) == 0) {
      out += t.substr(2);
    } else if (is_punct_token(t)) {
      out += t;  // punctuation attaches to the previous word
    } else {
      if (!out.empty()) out.push_back(' ');
      out += t;
    }
  }
  return out;
}

void Vocab::save(const std::string& path) const {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot open " + path + " for writing");
  for (const auto& t : tokens_) out << t << '\n';
  if (!out) throw IoError("short write to " + path);
}

Vocab Vocab::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path);
  std::vector<std::string> tokens;
  std::string line;
  while (std::getline(in, line)) tokens.push_back(line);
  return from_tokens(tokens);
}

TokenSequence pad_and_segment(const std::vector<int>& narration_ids,
                              const std::vector<int>& reasoning_ids, size_t sentence_len) {
  if (sentence_len < 2) throw ConfigError("pad_and_segment: sentence_len must be >= 2");
  TokenSequence seq;
  seq.sentence_len = sentence_len;
  seq.ids.assign(2 * sentence_len, kPadId);
  seq.segment_ids.assign(2 * sentence_len, 0);
  seq.real.assign(2 * sentence_len, 0);
  const size_t budget = sentence_len - 2;
  auto place = [&](const std::vector<int>& words, size_t offset, int segment) {
    size_t n = words.size();
    if (n > budget) {
      n = budget;
      seq.truncated = true;
    }
    seq.ids[offset] = kClsId;
    seq.real[offset] = 1;
    for (size_t i = 0; i < n; ++i) {
      seq.ids[offset + 1 + i] = words[i];
      seq.real[offset + 1 + i] = 1;
    }
    seq.ids[offset + 1 + n] = kSepId;
    seq.real[offset + 1 + n] = 1;
    for (size_t i = offset; i < offset + sentence_len; ++i) seq.segment_ids[i] = segment;
  };
  place(narration_ids, 0, 0);
  place(reasoning_ids, sentence_len, 1);
  return seq;
}

}  // namespace drivecap
