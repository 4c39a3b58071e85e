#include "hubert_ap/probe_train.hpp"

#include <cmath>
#include <cstdio>

namespace hubert_ap {
namespace {

MaskSpec nonempty_spans(int T, double prob, int span, Rng& rng) {
  MaskSpec m = sample_spans(T, prob, span, rng);
  if (m.count() == 0) {
    const int t = static_cast<int>(rng.below(static_cast<std::uint64_t>(T)));
    m.starts.push_back(t);
    for (int u = t; u < std::min(t + span, T); ++u) m.masked[u] = true;
  }
  return m;
}

void check_labels(const LabeledFeatures& ex, int vocab) {
  if (!ex.features || !ex.labels) throw Error("pretrain: null example");
  if (static_cast<int>(ex.labels->size()) != ex.features->num_frames()) {
    throw Error("pretrain: '" + ex.features->utt_id + "' has " + std::to_string(ex.labels->size()) + " labels for " +
                std::to_string(ex.features->num_frames()) + " frames");
  }
  for (int y : *ex.labels) {
    if (y < 0 || y >= vocab) {
      throw Error("pretrain: label id " + std::to_string(y) + " in '" + ex.features->utt_id +
                  "' is outside label_vocab " + std::to_string(vocab));
    }
  }
}

}  // namespace

double lr_at(int step, int total_steps, double peak, double warmup_fraction) {
  if (total_steps <= 0 || step <= 0 || step >= total_steps) return 0.0;
  const int warmup = static_cast<int>(std::lround(warmup_fraction * total_steps));
  // Ratios first so the peak step returns `peak` exactly.
  if (step <= warmup) return peak * (static_cast<double>(step) / warmup);
  return peak * (static_cast<double>(total_steps - step) / (total_steps - warmup));
}

AdamOptimizer::AdamOptimizer(const ProbeParams& like, double beta1, double beta2, double eps)
    : m_(like.zeros_like()), v_(like.zeros_like()), beta1_(beta1), beta2_(beta2), eps_(eps) {}

void AdamOptimizer::step(ProbeParams& params, const ProbeParams& grads, double lr) {
  ++t_;
  const double c1 = 1.0 - std::pow(beta1_, t_);
  const double c2 = 1.0 - std::pow(beta2_, t_);
  auto p = params.tensors();
  const auto g = grads.tensors();
  auto m = m_.tensors();
  auto v = v_.tensors();
  for (std::size_t i = 0; i < p.size(); ++i) {
    *m[i].value = beta1_ * *m[i].value + (1.0 - beta1_) * *g[i].value;
    *v[i].value = beta2_ * *v[i].value + (1.0 - beta2_) * g[i].value->cwiseAbs2();
    *p[i].value -= (lr * (m[i].value->array() / c1) / ((v[i].value->array() / c2).sqrt() + eps_)).matrix();
  }
}

std::string trace_to_csv(const std::vector<TraceRow>& trace) {
  std::string out = "step,lr,loss\n";
  char buf[96];
  for (const auto& r : trace) {
    std::snprintf(buf, sizeof buf, "%d,%.9g,%.9g\n", r.step, r.lr, r.loss);
    out += buf;
  }
  return out;
}

double eval_masked_ce(const ProbeParams& params, const std::vector<LabeledFeatures>& corpus, int count,
                      std::uint64_t seed) {
  const int n = std::min<int>(count, static_cast<int>(corpus.size()));
  if (n <= 0) throw Error("eval: no utterances");
  Rng rng(seed);
  double weighted = 0.0;
  int frames = 0;
  for (int i = 0; i < n; ++i) {
    const auto& ex = corpus[i];
    const MaskSpec mask =
        nonempty_spans(ex.features->num_frames(), params.config.mask_start_prob, params.config.mask_span, rng);
    const double loss = masked_ce_loss_and_grad(params, ex.features->frames, *ex.labels, mask, nullptr);
    weighted += loss * mask.count();
    frames += mask.count();
  }
  return weighted / frames;
}

PretrainResult pretrain(ProbeParams init, const std::vector<LabeledFeatures>& corpus, const TrainConfig& config) {
  if (corpus.empty()) throw Error("pretrain: empty corpus");
  if (config.steps < 1 || config.batch_size < 1) throw Error("pretrain: steps and batch_size must be positive");
  for (const auto& ex : corpus) check_labels(ex, init.config.label_vocab);

  PretrainResult res;
  res.params = std::move(init);
  ProbeParams& params = res.params;
  const std::uint64_t eval_seed = derive_seed(config.seed, "eval-masks");
  res.initial_eval_loss = eval_masked_ce(params, corpus, config.eval_utterances, eval_seed);

  Rng rng(derive_seed(config.seed, "pretrain"));
  AdamOptimizer adam(params, config.beta1, config.beta2, config.adam_eps);
  for (int step = 1; step <= config.steps; ++step) {
    ProbeParams grads = params.zeros_like();
    double loss = 0.0;
    for (int b = 0; b < config.batch_size; ++b) {
      const auto& ex = corpus[rng.below(corpus.size())];
      const MaskSpec mask =
          nonempty_spans(ex.features->num_frames(), params.config.mask_start_prob, params.config.mask_span, rng);
      loss += masked_ce_loss_and_grad(params, ex.features->frames, *ex.labels, mask, &grads, 1.0 / config.batch_size);
    }
    loss /= config.batch_size;
    if (!grads.all_finite()) throw Error("pretrain: non-finite gradient at step " + std::to_string(step));
    const double lr = lr_at(step, config.steps, config.peak_lr, config.warmup_fraction);
    adam.step(params, grads, lr);
    res.trace.push_back({step, lr, loss});
  }
  res.final_eval_loss = eval_masked_ce(params, corpus, config.eval_utterances, eval_seed);
  return res;
}

FinetuneResult finetune_ctc(ProbeParams init, const std::vector<TranscribedFeatures>& corpus, int ctc_classes,
                            const TrainConfig& config) {
  if (corpus.empty()) throw Error("finetune: empty corpus");
  if (config.steps < 1 || config.batch_size < 1) throw Error("finetune: steps and batch_size must be positive");
  FinetuneResult res;
  res.params = std::move(init);
  ProbeParams& params = res.params;
  if (!params.has_ctc_head() || params.config.ctc_vocab != ctc_classes) {
    add_ctc_head(params, ctc_classes, derive_seed(config.seed, "ctc-head"));
  }
  for (const auto& ex : corpus) {
    for (int c : ex.target) {
      if (c <= kBlank || c >= ctc_classes) {
        throw Error("finetune: transcript id " + std::to_string(c) + " of '" + ex.features->utt_id +
                    "' outside the character vocabulary");
      }
    }
  }

  const ProbeConfig& cfg = params.config;
  Rng rng(derive_seed(config.seed, "finetune"));
  AdamOptimizer adam(params, config.beta1, config.beta2, config.adam_eps);
  for (int step = 1; step <= config.steps; ++step) {
    ProbeParams grads = params.zeros_like();
    double loss = 0.0;
    for (int b = 0; b < config.batch_size; ++b) {
      const auto& ex = corpus[rng.below(corpus.size())];
      const int T = ex.features->num_frames();
      const MaskSpec time = sample_spans(T, cfg.finetune_mask_prob, cfg.mask_span, rng);
      const std::vector<bool> channels =
          sample_channel_mask(cfg.model_dim, cfg.channel_mask_prob, cfg.channel_mask_span, rng);
      std::vector<bool> active(cfg.layers);
      for (int l = 0; l < cfg.layers; ++l) active[l] = !rng.bernoulli(cfg.layerdrop);
      ForwardOptions opts;
      opts.time_mask = &time.masked;
      opts.channel_mask = &channels;
      opts.layer_active = &active;
      loss += ctc_loss_and_grad(params, ex.features->frames, ex.target, opts, &grads, 1.0 / config.batch_size);
    }
    loss /= config.batch_size;
    if (!grads.all_finite()) throw Error("finetune: non-finite gradient at step " + std::to_string(step));
    const double lr = lr_at(step, config.steps, config.peak_lr, config.warmup_fraction);
    adam.step(params, grads, lr);
    res.trace.push_back({step, lr, loss});
  }
  return res;
}

double greedy_token_error(const ProbeParams& params, const std::vector<TranscribedFeatures>& corpus) {
  long long errors = 0, total = 0;
  for (const auto& ex : corpus) {
    const auto hyp = greedy_decode(ctc_log_probs(params, ex.features->frames));
    errors += edit_distance(hyp, ex.target);
    total += static_cast<long long>(ex.target.size());
  }
  return total > 0 ? static_cast<double>(errors) / total : 0.0;
}

}  // namespace hubert_ap
