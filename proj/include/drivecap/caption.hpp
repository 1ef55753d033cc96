#pragma once

#include <string>
#include <vector>

#include "drivecap/nn.hpp"
#include "drivecap/tensor.hpp"
#include "drivecap/tokenizer.hpp"

namespace drivecap {

enum class MaskVariant { kDefault, kNoCross, kSwappedCross, kNarrationOnly, kReasoningOnly };

MaskVariant mask_variant_from_string(const std::string& name);
std::string to_string(MaskVariant variant);

// Binary attention policy over [context | narration | reasoning] token
// blocks. Context rows see only context columns; each sentence is causal
// within itself; the cross-sentence blocks depend on the variant. [PAD]
// columns are denied everywhere.
struct AttentionMask {
  size_t context_len = 0;
  size_t sentence_len = 0;
  MaskVariant variant = MaskVariant::kDefault;
  std::vector<uint8_t> allow;  // total x total

  size_t total() const { return context_len + 2 * sentence_len; }
  bool allowed(size_t row, size_t col) const { return allow[row * total() + col] != 0; }
  Tensor bias() const;  // additive leaf: 0 where allowed, -1e9 where denied
};

AttentionMask build_attention_mask(MaskVariant variant, size_t context_len, size_t sentence_len,
                                   const std::vector<uint8_t>& text_real);

// Vision-language encoder head: embeds the two text segments, runs the joint
// stack over [context | text] under the mask policy, and projects text
// positions to vocabulary logits. Trained by masked-token prediction,
// decoded autoregressively one [MASK] slot at a time.
struct CaptionHead {
  size_t dim = 0;
  size_t vocab_size = 0;
  size_t sentence_len = kSentenceLen;
  Tensor word_embed;  // (V, dim)
  Tensor seg_embed;   // (2, dim)
  Tensor pos_embed;   // (2 * sentence_len, dim)
  TransformerStack stack;
  Linear out_proj;

  static CaptionHead init(size_t dim, size_t vocab_size, size_t sentence_len, size_t blocks,
                          size_t heads, size_t mlp_ratio, Rng& rng);

  Tensor embed_text(const TokenSequence& seq) const;
  // Logits at every text position, (2 * sentence_len, V). video_bias, when
  // defined, is an additive learnable bias over the leading video-token
  // block of the attention matrix (the soft-mask hook).
  Tensor text_logits(const Tensor& context, const TokenSequence& seq, const AttentionMask& mask,
                     const Tensor& video_bias = Tensor()) const;
  // Cross-entropy over positions with a real target id; 0 (flagged) when the
  // batch carries no masked positions.
  Tensor mlm_loss(const Tensor& context, const TokenSequence& masked_seq,
                  const std::vector<int>& targets, MaskVariant variant,
                  bool* no_targets = nullptr, const Tensor& video_bias = Tensor()) const;

  struct Generated {
    std::string narration;
    std::string reasoning;
    std::vector<int> narration_ids;  // word pieces only, specials stripped
    std::vector<int> reasoning_ids;
  };
  // Greedy argmax decoding: sentence one to [SEP] or the length cap, padded,
  // then sentence two with full attention to sentence one.
  Generated generate(const Tensor& context, const Vocab& vocab, MaskVariant variant,
                     const Tensor& video_bias = Tensor()) const;

  void collect(const std::string& prefix, ParamMap& params) const;
};

}  // namespace drivecap
