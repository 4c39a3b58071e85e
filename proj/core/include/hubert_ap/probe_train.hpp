#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "hubert_ap/ctc.hpp"
#include "hubert_ap/probe.hpp"

namespace hubert_ap {

struct TrainConfig {
  int steps = 1000;
  int batch_size = 4;
  double peak_lr = 5e-4;
  double warmup_fraction = 0.08;
  double beta1 = 0.9;
  double beta2 = 0.98;
  double adam_eps = 1e-6;
  std::uint64_t seed = 0;
  /// Utterances (from the front of the corpus) used for the fixed-mask
  /// evaluation loss reported before and after training.
  int eval_utterances = 16;
};

/// Linear warmup from 0 to `peak` over the first round(warmup_fraction*total)
/// steps, then linear decay to 0 at step `total`.
double lr_at(int step, int total_steps, double peak, double warmup_fraction);

/// Adam with bias correction over the trainable tensors of a ProbeParams.
class AdamOptimizer {
 public:
  AdamOptimizer(const ProbeParams& like, double beta1, double beta2, double eps);
  void step(ProbeParams& params, const ProbeParams& grads, double lr);
  int steps_taken() const { return t_; }

 private:
  ProbeParams m_, v_;
  double beta1_, beta2_, eps_;
  int t_ = 0;
};

struct TraceRow {
  int step = 0;
  double lr = 0.0;
  double loss = 0.0;
};

std::string trace_to_csv(const std::vector<TraceRow>& trace);

struct LabeledFeatures {
  const FeatureMatrix* features = nullptr;
  const std::vector<int>* labels = nullptr;
};

struct PretrainResult {
  ProbeParams params;
  std::vector<TraceRow> trace;
  double initial_eval_loss = 0.0;
  double final_eval_loss = 0.0;
};

/// Mean masked cross-entropy over the first `count` examples with masks
/// drawn from `seed` (a span is forced when a draw comes out empty).
double eval_masked_ce(const ProbeParams& params, const std::vector<LabeledFeatures>& corpus, int count,
                      std::uint64_t seed);

/// Masked-prediction pre-training with Adam and the warmup/decay schedule.
PretrainResult pretrain(ProbeParams init, const std::vector<LabeledFeatures>& corpus, const TrainConfig& config);

struct TranscribedFeatures {
  const FeatureMatrix* features = nullptr;
  std::vector<int> target;  // CTC ids (no blanks)
};

struct FinetuneResult {
  ProbeParams params;
  std::vector<TraceRow> trace;
};

/// CTC fine-tuning with time-span masking, channel masking and LayerDrop.
/// Adds a CTC head of `ctc_classes` outputs when the model lacks one.
FinetuneResult finetune_ctc(ProbeParams init, const std::vector<TranscribedFeatures>& corpus, int ctc_classes,
                            const TrainConfig& config);

/// Greedy-decoding token error: total edit distance / total target length.
double greedy_token_error(const ProbeParams& params, const std::vector<TranscribedFeatures>& corpus);

}  // namespace hubert_ap
