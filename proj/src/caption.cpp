#include "drivecap/caption.hpp"

#include <algorithm>

#include "drivecap/errors.hpp"

namespace drivecap {

MaskVariant mask_variant_from_string(const std::string& name) {
  if (name == "default") return MaskVariant::kDefault;
  if (name == "no_cross") return MaskVariant::kNoCross;
  if (name == "swapped_cross") return MaskVariant::kSwappedCross;
  if (name == "narration_only") return MaskVariant::kNarrationOnly;
  if (name == "reasoning_only") return MaskVariant::kReasoningOnly;
  throw ConfigError("unknown attention mask variant '" + name + "'");
}

std::string to_string(MaskVariant variant) {
  switch (variant) {
    case MaskVariant::kDefault: return "default";
    case MaskVariant::kNoCross: return "no_cross";
    case MaskVariant::kSwappedCross: return "swapped_cross";
    case MaskVariant::kNarrationOnly: return "narration_only";
    case MaskVariant::kReasoningOnly: return "reasoning_only";
  }
  throw ConfigError("unknown attention mask variant");
}

Tensor AttentionMask::bias() const {
  const size_t n = total();
  std::vector<double> b(n * n);
  for (size_t i = 0; i < n * n; ++i) b[i] = allow[i] ? 0.0 : -1e9;
  return Tensor::leaf({n, n}, std::move(b), false);
}

AttentionMask build_attention_mask(MaskVariant variant, size_t context_len, size_t sentence_len,
                                   const std::vector<uint8_t>& text_real) {
  if (text_real.size() != 2 * sentence_len)
    throw ContractError("attention mask: real flags length " + std::to_string(text_real.size()) +
                        " does not match two sentences of " + std::to_string(sentence_len));
  AttentionMask m;
  m.context_len = context_len;
  m.sentence_len = sentence_len;
  m.variant = variant;
  const size_t n = m.total();
  m.allow.assign(n * n, 0);
  auto set = [&](size_t row, size_t col) { m.allow[row * n + col] = 1; };

  const bool narration_on = variant != MaskVariant::kReasoningOnly;
  const bool reasoning_on = variant != MaskVariant::kNarrationOnly;
  // narration -> reasoning cross block (full over real tokens)
  const bool narr_sees_reas = variant == MaskVariant::kSwappedCross;
  // reasoning -> narration cross block
  const bool reas_sees_narr = variant == MaskVariant::kDefault;

  // context rows attend the whole context block
  for (size_t i = 0; i < context_len; ++i)
    for (size_t j = 0; j < context_len; ++j) set(i, j);

  auto real_at = [&](size_t text_pos) { return text_real[text_pos] != 0; };

  for (size_t s = 0; s < 2; ++s) {
    const bool sentence_on = s == 0 ? narration_on : reasoning_on;
    const bool sees_other = s == 0 ? narr_sees_reas : reas_sees_narr;
    const bool other_on = s == 0 ? reasoning_on : narration_on;
    const size_t own = context_len + s * sentence_len;
    const size_t other = context_len + (1 - s) * sentence_len;
    for (size_t i = 0; i < sentence_len; ++i) {
      const size_t row = own + i;
      for (size_t j = 0; j < context_len; ++j) set(row, j);  // pads included: context always visible
      if (!sentence_on) continue;
      for (size_t j = 0; j <= i; ++j)
        if (real_at(own - context_len + j)) set(row, own + j);
      if (sees_other && other_on)
        for (size_t j = 0; j < sentence_len; ++j)
          if (real_at(other - context_len + j)) set(row, other + j);
    }
  }
  return m;
}

CaptionHead CaptionHead::init(size_t dim, size_t vocab_size, size_t sentence_len, size_t blocks,
                              size_t heads, size_t mlp_ratio, Rng& rng) {
  if (vocab_size == 0) throw ConfigError("caption head: vocab size is zero");
  CaptionHead h;
  h.dim = dim;
  h.vocab_size = vocab_size;
  h.sentence_len = sentence_len;
  h.word_embed = Tensor::randn({vocab_size, dim}, rng, 0.02, true);
  h.seg_embed = Tensor::randn({2, dim}, rng, 0.02, true);
  h.pos_embed = Tensor::randn({2 * sentence_len, dim}, rng, 0.02, true);
  h.stack = TransformerStack::init(dim, blocks, heads, mlp_ratio, rng);
  // near-uniform logits at init: an untrained model scores ~log V
  h.out_proj.weight = Tensor::randn({dim, vocab_size}, rng, 0.02, true);
  h.out_proj.bias = Tensor::zeros({vocab_size}, true);
  return h;
}

Tensor CaptionHead::embed_text(const TokenSequence& seq) const {
  if (seq.ids.size() != 2 * sentence_len)
    throw ContractError("caption head: sequence length " + std::to_string(seq.ids.size()) +
                        " does not match 2x" + std::to_string(sentence_len));
  Tensor words = embedding(word_embed, seq.ids);
  Tensor segments = embedding(seg_embed, seq.segment_ids);
  return add(add(words, segments), pos_embed);
}

Tensor CaptionHead::text_logits(const Tensor& context, const TokenSequence& seq,
                                const AttentionMask& mask, const Tensor& video_bias) const {
  if (mask.context_len != context.shape()[0] || mask.sentence_len != sentence_len)
    throw ContractError("caption head: mask geometry does not match inputs");
  Tensor x = concat_rows(context, embed_text(seq));
  Tensor bias = mask.bias();
  if (video_bias.defined()) {
    const size_t n = mask.total();
    bias = add(bias, embed_block(video_bias, n, n, 0, 0));
  }
  Tensor h = stack.forward(x, bias);
  Tensor text = slice_rows(h, context.shape()[0], 2 * sentence_len);
  return out_proj.forward(text);
}

Tensor CaptionHead::mlm_loss(const Tensor& context, const TokenSequence& masked_seq,
                             const std::vector<int>& targets, MaskVariant variant,
                             bool* no_targets, const Tensor& video_bias) const {
  AttentionMask mask =
      build_attention_mask(variant, context.shape()[0], sentence_len, masked_seq.real);
  Tensor logits = text_logits(context, masked_seq, mask, video_bias);
  return cross_entropy(logits, targets, kIgnoreId, no_targets);
}

CaptionHead::Generated CaptionHead::generate(const Tensor& context, const Vocab& vocab,
                                             MaskVariant variant,
                                             const Tensor& video_bias) const {
  TokenSequence seq;
  seq.sentence_len = sentence_len;
  seq.ids.assign(2 * sentence_len, kPadId);
  seq.segment_ids.assign(2 * sentence_len, 0);
  for (size_t i = sentence_len; i < 2 * sentence_len; ++i) seq.segment_ids[i] = 1;
  seq.real.assign(2 * sentence_len, 0);

  const size_t context_len = context.shape()[0];
  auto decode_sentence = [&](size_t offset) {
    std::vector<int> words;
    seq.ids[offset] = kClsId;
    seq.real[offset] = 1;
    for (size_t pos = offset + 1; pos < offset + sentence_len; ++pos) {
      seq.ids[pos] = kMaskId;
      seq.real[pos] = 1;
      AttentionMask mask = build_attention_mask(variant, context_len, sentence_len, seq.real);
      Tensor logits = text_logits(context, seq, mask, video_bias);  // (2 * sentence_len, V)
      const double* row = logits.data().data() + pos * vocab_size;
      size_t best = 0;
      for (size_t v = 1; v < vocab_size; ++v)
        if (row[v] > row[best]) best = v;
      seq.ids[pos] = static_cast<int>(best);
      if (static_cast<int>(best) == kSepId) return words;
      words.push_back(static_cast<int>(best));
    }
    return words;
  };

  Generated out;
  if (variant != MaskVariant::kReasoningOnly) {
    out.narration_ids = decode_sentence(0);
    out.narration = vocab.decode(out.narration_ids);
  }
  if (variant != MaskVariant::kNarrationOnly) {
    out.reasoning_ids = decode_sentence(sentence_len);
    out.reasoning = vocab.decode(out.reasoning_ids);
  }
  return out;
}

void CaptionHead::collect(const std::string& prefix, ParamMap& params) const {
  params.add(prefix + ".word_embed", word_embed);
  params.add(prefix + ".seg_embed", seg_embed);
  params.add(prefix + ".pos_embed", pos_embed);
  stack.collect(prefix + ".stack", params);
  out_proj.collect(prefix + ".out_proj", params);
}

}  // namespace drivecap
