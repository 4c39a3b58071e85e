#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "hubert_ap/common.hpp"
#include "hubert_ap/mfcc.hpp"

namespace hubert_ap {

/// Toy transformer encoder with gated relative position bias. Pre-norm
/// residual blocks; the relative-bias table is shared by all layers, gate
/// vectors are per layer and head.
struct ProbeConfig {
  int input_dim = 39;
  int layers = 2;
  int model_dim = 64;
  int heads = 4;
  int ffn_dim = 128;
  int rel_pos_buckets = 32;
  int max_rel_distance = 128;
  int label_vocab = 100;
  /// CTC classes including the blank; 0 builds no CTC head.
  int ctc_vocab = 0;
  bool use_rel_bias = true;
  bool gated_rel_bias = true;

  double mask_start_prob = 0.08;
  int mask_span = 10;
  // Fine-tuning only.
  double layerdrop = 0.05;
  double finetune_mask_prob = 0.05;
  double channel_mask_prob = 0.01;
  int channel_mask_span = 16;  // model_dim / 4 at the default width

  void validate() const;
  int head_dim() const { return model_dim / heads; }
};

struct LayerParams {
  Matrix ln1_gain, ln1_bias;
  Matrix wq, bq, wk, bk, wv, bv, wo, bo;
  Matrix gate;  // heads x head_dim
  Matrix ln2_gain, ln2_bias;
  Matrix w1, b1, w2, b2;
};

struct NamedTensor {
  std::string name;
  Matrix* value;
};

struct ConstNamedTensor {
  std::string name;
  const Matrix* value;
};

struct ProbeParams {
  ProbeConfig config;
  // Frozen input normalization, 1 x input_dim.
  Matrix feat_mean, feat_inv_std;
  Matrix w_in, b_in;
  Matrix mask_emb;  // 1 x model_dim
  Matrix rel_bias;  // heads x rel_pos_buckets
  std::vector<LayerParams> layers;
  Matrix w_out, b_out;
  Matrix w_ctc, b_ctc;  // empty without a CTC head

  /// Trainable tensors in a fixed order.
  std::vector<NamedTensor> tensors();
  std::vector<ConstNamedTensor> tensors() const;
  /// Same shapes, all zeros (used as a gradient accumulator).
  ProbeParams zeros_like() const;
  std::size_t num_parameters() const;
  bool has_ctc_head() const { return w_ctc.size() > 0; }
  bool all_finite() const;
};

/// Gaussian weights scaled by 1/sqrt(fan_in); biases, the relative-bias
/// table and the input normalization start at zero/identity.
ProbeParams build_probe(const ProbeConfig& config, std::uint64_t seed);

/// Adds (or replaces) the CTC head with `classes` outputs including blank.
void add_ctc_head(ProbeParams& params, int classes, std::uint64_t seed);

/// Sets the frozen per-dimension mean / inverse std from training frames.
void fit_input_normalization(ProbeParams& params, const Matrix& pooled_frames);

/// Bidirectional log-spaced bucket of a query-key offset: half of the buckets
/// per sign, exact for small offsets, logarithmic up to max_distance.
int relative_bucket(int offset, int num_buckets, int max_distance);

struct MaskSpec {
  std::string utt_id;
  std::vector<bool> masked;  // one flag per frame
  std::vector<int> starts;

  int count() const;
};

/// Every frame starts a span with probability `start_prob`; a start at t masks
/// [t, min(t + span, T)). Spans may overlap.
MaskSpec sample_spans(int num_frames, double start_prob, int span, Rng& rng);
MaskSpec sample_spans(int num_frames, const ProbeConfig& config, std::uint64_t seed);

/// Channel spans over model_dim for fine-tuning; selected channels are zeroed.
std::vector<bool> sample_channel_mask(int channels, double start_prob, int span, Rng& rng);

struct ForwardOptions {
  const std::vector<bool>* time_mask = nullptr;
  const std::vector<bool>* channel_mask = nullptr;
  /// Per-layer keep flags; a dropped layer passes its input through.
  const std::vector<bool>* layer_active = nullptr;
};

struct LayerCache {
  Matrix x_in;
  Matrix ln1_xhat, a;
  Eigen::VectorXd ln1_inv;
  Matrix q, k, v;
  std::vector<Matrix> probs;          // per head, T x T
  std::vector<Eigen::VectorXd> gates;  // per head, T
  Matrix attn_concat;
  Matrix x1;
  Matrix ln2_xhat, b;
  Eigen::VectorXd ln2_inv;
  Matrix pre, act;
};

/// Everything the backward pass needs from one forward pass.
struct EncoderTrace {
  Matrix x_norm;  // normalized input features
  std::vector<bool> time_mask, channel_mask, layer_active;
  Eigen::MatrixXi buckets;     // T x T
  std::vector<Matrix> hidden;  // hidden[0] = projected input, hidden[l+1] = layer l output
  std::vector<LayerCache> caches;

  const Matrix& top() const { return hidden.back(); }
};

EncoderTrace encode(const ProbeParams& params, const Matrix& features, const ForwardOptions& options = {});

/// Accumulates d(loss)/d(params) into `grads` given d(loss)/d(top hidden).
void encode_backward(const ProbeParams& params, const EncoderTrace& trace, const Matrix& d_top, ProbeParams& grads);

/// Frame logits over label_vocab: encoder, then the classification head.
Matrix forward(const ProbeParams& params, const FeatureMatrix& features, const MaskSpec& mask);

Matrix label_logits(const ProbeParams& params, const Matrix& top);
Matrix ctc_logits(const ProbeParams& params, const Matrix& top);

/// Output of layer `layer` (0 = input projection) without masking, T x model_dim.
Matrix hidden_states(const ProbeParams& params, const FeatureMatrix& features, int layer);

/// Mean cross-entropy over masked frames; optionally writes d loss / d logits.
double loss_masked_ce(const Matrix& logits, const std::vector<int>& labels, const MaskSpec& mask,
                      Matrix* d_logits = nullptr);

/// Masked-prediction loss of one utterance, gradients added to `grads` scaled
/// by `weight`.
double masked_ce_loss_and_grad(const ProbeParams& params, const Matrix& features, const std::vector<int>& labels,
                               const MaskSpec& mask, ProbeParams* grads, double weight = 1.0);

/// CTC loss through the CTC head, gradients added to `grads` scaled by `weight`.
double ctc_loss_and_grad(const ProbeParams& params, const Matrix& features, const std::vector<int>& target,
                         const ForwardOptions& options, ProbeParams* grads, double weight = 1.0);

/// CTC log-probabilities T x ctc_vocab for decoding (no masking).
Matrix ctc_log_probs(const ProbeParams& params, const Matrix& features);

void save_probe(const std::filesystem::path& path, const ProbeParams& params);
ProbeParams load_probe(const std::filesystem::path& path);

}  // namespace hubert_ap
