#include "drivecap/gradsuite.hpp"

#include "drivecap/model.hpp"
#include "drivecap/trainer.hpp"

namespace drivecap {

namespace {

Tensor rand_leaf(Shape shape, Rng& rng, bool grad = true) {
  return Tensor::randn(std::move(shape), rng, 1.0, grad);
}

ModelConfig tiny_config(size_t vocab_size) {
  ModelConfig cfg;
  cfg.frames = 2;
  cfg.height = 64;
  cfg.width = 64;
  cfg.base_channels = 2;  // 16 feature channels
  cfg.text_dim = 16;
  cfg.heads = 2;
  cfg.encoder_blocks = 1;
  cfg.caption_blocks = 1;
  cfg.control_blocks = 1;
  cfg.mlp_ratio = 2;
  cfg.sentence_len = 5;
  cfg.vocab_size = vocab_size;
  cfg.signal_channels = 2;
  return cfg;
}

VideoClip random_clip(const ModelConfig& cfg, Rng& rng) {
  VideoClip clip;
  clip.frames = cfg.frames;
  clip.height = cfg.height;
  clip.width = cfg.width;
  clip.source = "gradsuite";
  clip.data.resize(clip.frames * clip.frame_stride());
  for (auto& v : clip.data) v = static_cast<float>(rng.uniform());
  return clip;
}

}  // namespace

std::vector<GradSuiteEntry> run_gradient_suite(uint64_t seed) {
  std::vector<GradSuiteEntry> entries;
  Rng rng(seed);
  auto probe_through = [&](const Tensor& probe) {
    return [probe](const Tensor& y) { return sum_all(mul(y, probe)); };
  };
  auto record = [&](const std::string& name, const GradCheckReport& report) {
    entries.push_back({name, report.max_rel_error, report.pass});
  };

  {
    Tensor b = rand_leaf({5, 3}, rng, false);
    Tensor probe = rand_leaf({4, 3}, rng, false);
    auto through = probe_through(probe);
    record("matmul", grad_check([&](const Tensor& x) { return through(matmul(x, b)); },
                                rand_leaf({4, 5}, rng)));
  }
  {
    Tensor small = rand_leaf({4}, rng, false);
    Tensor probe = rand_leaf({3, 4}, rng, false);
    auto through = probe_through(probe);
    record("add_broadcast", grad_check([&](const Tensor& x) { return through(add(x, small)); },
                                       rand_leaf({3, 4}, rng)));
    record("sub", grad_check([&](const Tensor& x) { return through(sub(x, small)); },
                             rand_leaf({3, 4}, rng)));
    record("mul", grad_check([&](const Tensor& x) { return through(mul(x, small)); },
                             rand_leaf({3, 4}, rng)));
    record("scale", grad_check([&](const Tensor& x) { return through(scale(x, -1.7)); },
                               rand_leaf({3, 4}, rng)));
  }
  {
    Tensor probe = rand_leaf({3, 5}, rng, false);
    auto through = probe_through(probe);
    record("softmax", grad_check([&](const Tensor& x) { return through(softmax(x, 1)); },
                                 rand_leaf({3, 5}, rng)));
    record("gelu", grad_check([&](const Tensor& x) { return through(gelu(x)); },
                              rand_leaf({3, 5}, rng)));
    record("sigmoid", grad_check([&](const Tensor& x) { return through(sigmoid(x)); },
                                 rand_leaf({3, 5}, rng)));
    record("log_sigmoid", grad_check([&](const Tensor& x) { return through(log_sigmoid(x)); },
                                     rand_leaf({3, 5}, rng)));
  }
  {
    Tensor probe = rand_leaf({4, 4}, rng, false);
    auto through = probe_through(probe);
    record("embed_block",
           grad_check([&](const Tensor& x) { return through(embed_block(x, 4, 4, 1, 1)); },
                      rand_leaf({2, 2}, rng)));
  }
  {
    Tensor gain = rand_leaf({6}, rng, false);
    Tensor bias = rand_leaf({6}, rng, false);
    Tensor probe = rand_leaf({4, 6}, rng, false);
    auto through = probe_through(probe);
    record("layer_norm",
           grad_check([&](const Tensor& x) { return through(layer_norm(x, gain, bias)); },
                      rand_leaf({4, 6}, rng)));
  }
  {
    std::vector<int> targets = {1, kIgnoreId, 3, 0};
    record("cross_entropy",
           grad_check([&](const Tensor& x) { return cross_entropy(x, targets, kIgnoreId); },
                      rand_leaf({4, 5}, rng)));
  }
  {
    std::vector<int> ids = {2, 0, 2, 4};
    Tensor probe = rand_leaf({4, 3}, rng, false);
    auto through = probe_through(probe);
    record("embedding", grad_check([&](const Tensor& x) { return through(embedding(x, ids)); },
                                   rand_leaf({5, 3}, rng)));
  }
  {
    Tensor probe = rand_leaf({2, 3, 2}, rng, false);
    auto through = probe_through(probe);
    record("permute", grad_check([&](const Tensor& x) { return through(permute(x, {0, 2, 1})); },
                                 rand_leaf({2, 2, 3}, rng)));
    Tensor probe2 = rand_leaf({2, 2}, rng, false);
    record("sum_axis", grad_check(
                           [&](const Tensor& x) {
                             return sum_all(mul(sum_axis(x, 1), probe2));
                           },
                           rand_leaf({2, 3, 2}, rng)));
  }
  {
    Tensor other = rand_leaf({2, 4}, rng, false);
    Tensor probe = rand_leaf({5, 4}, rng, false);
    auto through = probe_through(probe);
    record("concat_slice_reshape",
           grad_check(
               [&](const Tensor& x) {
                 Tensor joined = concat_rows(reshape(x, {3, 4}), other);
                 return through(slice_rows(joined, 0, 5));
               },
               rand_leaf({12}, rng)));
  }
  {
    Rng block_rng(seed + 1);
    TransformerBlock block = TransformerBlock::init(8, 2, 2, block_rng);
    Tensor probe = rand_leaf({5, 8}, rng, false);
    auto through = probe_through(probe);
    record("transformer_block",
           grad_check([&](const Tensor& x) { return through(block.forward(x, Tensor())); },
                      rand_leaf({5, 8}, rng)));
  }

  // Full joint model on a fixed sample: probe a few coordinates of every
  // named parameter.
  {
    Rng model_rng(seed + 2);
    const size_t vocab_size = 24;
    ModelConfig cfg = tiny_config(vocab_size);
    Model model = Model::init(cfg, seed + 3);
    VideoClip clip = random_clip(cfg, model_rng);

    TokenSequence tokens = pad_and_segment({5, 9, 7}, {11, 6}, cfg.sentence_len);
    Rng mask_rng(seed + 4);
    MaskedTokens masked = mask_tokens(tokens, mask_rng, vocab_size);
    if (masked.selected == 0) masked.targets[1] = tokens.ids[1];  // keep the loss non-empty
    std::vector<double> signals(cfg.frames * cfg.signal_channels);
    for (auto& s : signals) s = model_rng.normal();

    auto loss_fn = [&]() {
      Tensor video = model.video_tokens(clip);
      Tensor caption = model.caption.mlm_loss(video, masked.seq, masked.targets,
                                              MaskVariant::kDefault);
      Tensor truth = Tensor::leaf({cfg.frames, cfg.signal_channels}, signals, false);
      Tensor prediction =
          model.control.predict(video, cfg.encoder().temporal_slices(),
                                cfg.encoder().grid_rows() * cfg.encoder().grid_cols());
      return add(caption, control_loss(truth, prediction));
    };
    Rng probe_rng(seed + 5);
    record("full_joint_model", grad_check_params(loss_fn, model.named_params().tensors(), 4,
                                                 probe_rng, 1e-5, 1e-4));
  }

  return entries;
}

bool gradient_suite_passed(const std::vector<GradSuiteEntry>& entries) {
  for (const auto& e : entries)
    if (!e.pass) return false;
  return !entries.empty();
}

}  // namespace drivecap
