#include "hubert_ap/probe.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numbers>
#include <type_traits>

#include "hubert_ap/ctc.hpp"

namespace hubert_ap {
namespace {

constexpr double kLayerNormEps = 1e-5;

Matrix gaussian(int rows, int cols, double scale, Rng& rng) {
  Matrix m(rows, cols);
  for (int c = 0; c < cols; ++c) {
    for (int r = 0; r < rows; ++r) m(r, c) = rng.normal() * scale;
  }
  return m;
}

Matrix zeros(int rows, int cols) { return Matrix::Zero(rows, cols); }
Matrix ones(int rows, int cols) { return Matrix::Ones(rows, cols); }

void layer_norm(const Matrix& x, const Matrix& gain, const Matrix& bias, Matrix& xhat, Eigen::VectorXd& inv,
                Matrix& y) {
  const Eigen::Index T = x.rows();
  const double d = static_cast<double>(x.cols());
  xhat.resize(x.rows(), x.cols());
  inv.resize(T);
  for (Eigen::Index t = 0; t < T; ++t) {
    const double mu = x.row(t).sum() / d;
    const double var = (x.row(t).array() - mu).square().sum() / d;
    inv[t] = 1.0 / std::sqrt(var + kLayerNormEps);
    xhat.row(t) = (x.row(t).array() - mu) * inv[t];
  }
  y = (xhat.array().rowwise() * gain.row(0).array()).rowwise() + bias.row(0).array();
}

Matrix layer_norm_backward(const Matrix& dy, const Matrix& xhat, const Eigen::VectorXd& inv, const Matrix& gain,
                           Matrix& dgain, Matrix& dbias) {
  dgain.row(0) += (dy.array() * xhat.array()).colwise().sum().matrix();
  dbias.row(0) += dy.colwise().sum();
  const Matrix dxhat = (dy.array().rowwise() * gain.row(0).array()).matrix();
  const double d = static_cast<double>(dy.cols());
  Matrix dx(dy.rows(), dy.cols());
  for (Eigen::Index t = 0; t < dy.rows(); ++t) {
    const double m1 = dxhat.row(t).sum() / d;
    const double m2 = dxhat.row(t).dot(xhat.row(t)) / d;
    dx.row(t) = inv[t] * (dxhat.row(t).array() - m1 - xhat.row(t).array() * m2);
  }
  return dx;
}

double gelu(double x) { return 0.5 * x * (1.0 + std::erf(x / std::numbers::sqrt2)); }

double gelu_grad(double x) {
  const double pdf = std::exp(-0.5 * x * x) / std::sqrt(2.0 * std::numbers::pi);
  return 0.5 * (1.0 + std::erf(x / std::numbers::sqrt2)) + x * pdf;
}

double sigmoid(double z) { return 1.0 / (1.0 + std::exp(-z)); }

void softmax_rows(Matrix& s) {
  for (Eigen::Index i = 0; i < s.rows(); ++i) {
    const double m = s.row(i).maxCoeff();
    s.row(i) = (s.row(i).array() - m).exp();
    s.row(i) /= s.row(i).sum();
  }
}

Matrix add_bias(const Matrix& x, const Matrix& b) { return x.rowwise() + b.row(0); }

template <typename Params, typename Tensor>
std::vector<Tensor> list_tensors(Params& p) {
  std::vector<Tensor> out{{"w_in", &p.w_in}, {"b_in", &p.b_in}, {"mask_emb", &p.mask_emb}, {"rel_bias", &p.rel_bias}};
  for (std::size_t l = 0; l < p.layers.size(); ++l) {
    auto& L = p.layers[l];
    const std::string pre = "layer" + std::to_string(l) + ".";
    using Item = std::pair<const char*, decltype(&L.wq)>;
    const Item items[] = {{"ln1_gain", &L.ln1_gain}, {"ln1_bias", &L.ln1_bias}, {"wq", &L.wq}, {"bq", &L.bq},
                        {"wk", &L.wk}, {"bk", &L.bk}, {"wv", &L.wv}, {"bv", &L.bv}, {"wo", &L.wo}, {"bo", &L.bo},
                        {"gate", &L.gate}, {"ln2_gain", &L.ln2_gain}, {"ln2_bias", &L.ln2_bias}, {"w1", &L.w1},
                        {"b1", &L.b1}, {"w2", &L.w2}, {"b2", &L.b2}};
    for (const auto& [n, m] : items) {
      out.push_back({pre + n, m});
    }
  }
  out.push_back({"w_out", &p.w_out});
  out.push_back({"b_out", &p.b_out});
  if (p.w_ctc.size() > 0) {
    out.push_back({"w_ctc", &p.w_ctc});
    out.push_back({"b_ctc", &p.b_ctc});
  }
  return out;
}

}  // namespace

void ProbeConfig::validate() const {
  if (input_dim < 1 || layers < 0 || model_dim < 1 || heads < 1 || ffn_dim < 1 || label_vocab < 1) {
    throw Error("probe: dimensions must be positive");
  }
  if (model_dim % heads != 0) throw Error("probe: model_dim must be divisible by heads");
  if (rel_pos_buckets < 2 || rel_pos_buckets % 2 != 0) throw Error("probe: rel_pos_buckets must be even and >= 2");
  if (max_rel_distance < 1) throw Error("probe: max_rel_distance must be positive");
  if (ctc_vocab == 1 || ctc_vocab < 0) throw Error("probe: ctc_vocab must be 0 or >= 2");
  for (double p : {mask_start_prob, layerdrop, finetune_mask_prob, channel_mask_prob}) {
    if (!(p >= 0.0 && p <= 1.0)) throw Error("probe: probabilities must lie in [0, 1]");
  }
  if (mask_span < 1 || channel_mask_span < 1) throw Error("probe: mask spans must be positive");
}

std::vector<NamedTensor> ProbeParams::tensors() { return list_tensors<ProbeParams, NamedTensor>(*this); }

std::vector<ConstNamedTensor> ProbeParams::tensors() const {
  return list_tensors<const ProbeParams, ConstNamedTensor>(*this);
}

ProbeParams ProbeParams::zeros_like() const {
  ProbeParams z = *this;
  for (auto& t : z.tensors()) t.value->setZero();
  return z;
}

std::size_t ProbeParams::num_parameters() const {
  std::size_t n = 0;
  for (const auto& t : tensors()) n += static_cast<std::size_t>(t.value->size());
  return n;
}

bool ProbeParams::all_finite() const {
  for (const auto& t : tensors()) {
    if (!t.value->allFinite()) return false;
  }
  return feat_mean.allFinite() && feat_inv_std.allFinite();
}

ProbeParams build_probe(const ProbeConfig& config, std::uint64_t seed) {
  config.validate();
  Rng rng(seed);
  const int D = config.input_dim, d = config.model_dim, H = config.heads, F = config.ffn_dim;
  const int dh = config.head_dim();
  ProbeParams p;
  p.config = config;
  p.feat_mean = zeros(1, D);
  p.feat_inv_std = ones(1, D);
  p.w_in = gaussian(D, d, 1.0 / std::sqrt(D), rng);
  p.b_in = zeros(1, d);
  p.mask_emb = gaussian(1, d, 1.0, rng);
  p.rel_bias = zeros(H, config.rel_pos_buckets);
  for (int l = 0; l < config.layers; ++l) {
    LayerParams L;
    L.ln1_gain = ones(1, d);
    L.ln1_bias = zeros(1, d);
    L.wq = gaussian(d, d, 1.0 / std::sqrt(d), rng);
    L.bq = zeros(1, d);
    L.wk = gaussian(d, d, 1.0 / std::sqrt(d), rng);
    L.bk = zeros(1, d);
    L.wv = gaussian(d, d, 1.0 / std::sqrt(d), rng);
    L.bv = zeros(1, d);
    L.wo = gaussian(d, d, 1.0 / std::sqrt(d), rng);
    L.bo = zeros(1, d);
    L.gate = gaussian(H, dh, 1.0 / std::sqrt(dh), rng);
    L.ln2_gain = ones(1, d);
    L.ln2_bias = zeros(1, d);
    L.w1 = gaussian(d, F, 1.0 / std::sqrt(d), rng);
    L.b1 = zeros(1, F);
    L.w2 = gaussian(F, d, 1.0 / std::sqrt(F), rng);
    L.b2 = zeros(1, d);
    p.layers.push_back(std::move(L));
  }
  p.w_out = gaussian(d, config.label_vocab, 1.0 / std::sqrt(d), rng);
  p.b_out = zeros(1, config.label_vocab);
  if (config.ctc_vocab > 0) add_ctc_head(p, config.ctc_vocab, splitmix64(seed ^ 0xC7C));
  return p;
}

void add_ctc_head(ProbeParams& params, int classes, std::uint64_t seed) {
  if (classes < 2) throw Error("probe: CTC head needs at least blank + one character");
  Rng rng(seed);
  const int d = params.config.model_dim;
  params.config.ctc_vocab = classes;
  params.w_ctc = gaussian(d, classes, 1.0 / std::sqrt(d), rng);
  params.b_ctc = zeros(1, classes);
}

void fit_input_normalization(ProbeParams& params, const Matrix& pooled) {
  if (pooled.cols() != params.config.input_dim) throw Error("probe: normalization frames have the wrong dim");
  if (pooled.rows() < 2) throw Error("probe: need at least two frames to fit normalization");
  const RowVector mean = pooled.colwise().mean();
  const RowVector var = (pooled.rowwise() - mean).array().square().colwise().mean();
  params.feat_mean = mean;
  params.feat_inv_std = var.unaryExpr([](double v) { return 1.0 / std::sqrt(v + 1e-8); });
}

int relative_bucket(int offset, int num_buckets, int max_distance) {
  const int half = num_buckets / 2;
  int bucket = offset > 0 ? half : 0;
  const int n = std::abs(offset);
  const int max_exact = std::max(1, half / 2);
  if (n < max_exact) return bucket + n;
  if (max_distance <= max_exact) return bucket + half - 1;
  const double scaled = std::log(static_cast<double>(n) / max_exact) /
                        std::log(static_cast<double>(max_distance) / max_exact) * (half - max_exact);
  return bucket + std::min(max_exact + static_cast<int>(scaled), half - 1);
}

int MaskSpec::count() const { return static_cast<int>(std::count(masked.begin(), masked.end(), true)); }

MaskSpec sample_spans(int num_frames, double start_prob, int span, Rng& rng) {
  if (num_frames < 1) throw Error("mask: T must be >= 1");
  MaskSpec m;
  m.masked.assign(num_frames, false);
  for (int t = 0; t < num_frames; ++t) {
    if (!rng.bernoulli(start_prob)) continue;
    m.starts.push_back(t);
    for (int u = t; u < std::min(t + span, num_frames); ++u) m.masked[u] = true;
  }
  return m;
}

MaskSpec sample_spans(int num_frames, const ProbeConfig& config, std::uint64_t seed) {
  Rng rng(seed);
  return sample_spans(num_frames, config.mask_start_prob, config.mask_span, rng);
}

std::vector<bool> sample_channel_mask(int channels, double start_prob, int span, Rng& rng) {
  return sample_spans(channels, start_prob, span, rng).masked;
}

EncoderTrace encode(const ProbeParams& params, const Matrix& features, const ForwardOptions& options) {
  const ProbeConfig& cfg = params.config;
  if (features.cols() != cfg.input_dim) {
    throw Error("probe: feature dim " + std::to_string(features.cols()) + " does not match input projection dim " +
                std::to_string(cfg.input_dim));
  }
  const int T = static_cast<int>(features.rows());
  if (T < 1) throw Error("probe: empty feature matrix");
  const int d = cfg.model_dim, H = cfg.heads, dh = cfg.head_dim();
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));

  EncoderTrace tr;
  tr.time_mask = options.time_mask ? *options.time_mask : std::vector<bool>(T, false);
  tr.channel_mask = options.channel_mask ? *options.channel_mask : std::vector<bool>(d, false);
  tr.layer_active = options.layer_active ? *options.layer_active : std::vector<bool>(cfg.layers, true);
  if (static_cast<int>(tr.time_mask.size()) != T) throw Error("probe: time mask length differs from T");
  if (static_cast<int>(tr.channel_mask.size()) != d) throw Error("probe: channel mask length differs from model_dim");
  if (static_cast<int>(tr.layer_active.size()) != cfg.layers) throw Error("probe: layer flags differ from layer count");

  tr.x_norm = (features.rowwise() - params.feat_mean.row(0)).array().rowwise() * params.feat_inv_std.row(0).array();
  Matrix h = add_bias(tr.x_norm * params.w_in, params.b_in);
  for (int t = 0; t < T; ++t) {
    if (tr.time_mask[t]) h.row(t) = params.mask_emb.row(0);
  }
  for (int c = 0; c < d; ++c) {
    if (tr.channel_mask[c]) h.col(c).setZero();
  }
  tr.hidden.push_back(h);

  std::vector<int> by_offset(2 * T - 1);
  for (int o = -(T - 1); o <= T - 1; ++o) by_offset[o + T - 1] = relative_bucket(o, cfg.rel_pos_buckets, cfg.max_rel_distance);
  tr.buckets.resize(T, T);
  for (int i = 0; i < T; ++i) {
    for (int j = 0; j < T; ++j) tr.buckets(i, j) = by_offset[i - j + T - 1];
  }

  for (int l = 0; l < cfg.layers; ++l) {
    LayerCache c;
    if (!tr.layer_active[l]) {
      tr.caches.push_back(std::move(c));
      tr.hidden.push_back(tr.hidden.back());
      continue;
    }
    const LayerParams& L = params.layers[l];
    c.x_in = tr.hidden.back();
    layer_norm(c.x_in, L.ln1_gain, L.ln1_bias, c.ln1_xhat, c.ln1_inv, c.a);
    c.q = add_bias(c.a * L.wq, L.bq);
    c.k = add_bias(c.a * L.wk, L.bk);
    c.v = add_bias(c.a * L.wv, L.bv);
    c.attn_concat.resize(T, d);
    for (int hd = 0; hd < H; ++hd) {
      const auto qh = c.q.middleCols(hd * dh, dh);
      const auto kh = c.k.middleCols(hd * dh, dh);
      Matrix s = qh * kh.transpose() * scale;
      Eigen::VectorXd g = Eigen::VectorXd::Ones(T);
      if (cfg.use_rel_bias) {
        if (cfg.gated_rel_bias) g = (qh * L.gate.row(hd).transpose()).unaryExpr(&sigmoid);
        for (int i = 0; i < T; ++i) {
          for (int j = 0; j < T; ++j) s(i, j) += g[i] * params.rel_bias(hd, tr.buckets(i, j));
        }
      }
      softmax_rows(s);
      c.attn_concat.middleCols(hd * dh, dh) = s * c.v.middleCols(hd * dh, dh);
      c.probs.push_back(std::move(s));
      c.gates.push_back(std::move(g));
    }
    c.x1 = c.x_in + add_bias(c.attn_concat * L.wo, L.bo);
    layer_norm(c.x1, L.ln2_gain, L.ln2_bias, c.ln2_xhat, c.ln2_inv, c.b);
    c.pre = add_bias(c.b * L.w1, L.b1);
    c.act = c.pre.unaryExpr(&gelu);
    tr.hidden.push_back(c.x1 + add_bias(c.act * L.w2, L.b2));
    tr.caches.push_back(std::move(c));
  }
  return tr;
}

void encode_backward(const ProbeParams& params, const EncoderTrace& tr, const Matrix& d_top, ProbeParams& grads) {
  const ProbeConfig& cfg = params.config;
  const int T = static_cast<int>(tr.x_norm.rows());
  const int H = cfg.heads, dh = cfg.head_dim();
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  Matrix dx = d_top;

  for (int l = cfg.layers - 1; l >= 0; --l) {
    if (!tr.layer_active[l]) continue;
    const LayerParams& L = params.layers[l];
    LayerParams& G = grads.layers[l];
    const LayerCache& c = tr.caches[l];

    // Feed-forward block.
    G.w2 += c.act.transpose() * dx;
    G.b2.row(0) += dx.colwise().sum();
    Matrix dpre = (dx * L.w2.transpose()).array() * c.pre.unaryExpr(&gelu_grad).array();
    G.w1 += c.b.transpose() * dpre;
    G.b1.row(0) += dpre.colwise().sum();
    const Matrix db = dpre * L.w1.transpose();
    Matrix dx1 = dx + layer_norm_backward(db, c.ln2_xhat, c.ln2_inv, L.ln2_gain, G.ln2_gain, G.ln2_bias);

    // Attention block.
    G.wo += c.attn_concat.transpose() * dx1;
    G.bo.row(0) += dx1.colwise().sum();
    const Matrix dconcat = dx1 * L.wo.transpose();
    Matrix dq(T, cfg.model_dim), dk(T, cfg.model_dim), dv(T, cfg.model_dim);
    for (int hd = 0; hd < H; ++hd) {
      const Matrix& p = c.probs[hd];
      const auto doh = dconcat.middleCols(hd * dh, dh);
      const auto qh = c.q.middleCols(hd * dh, dh);
      const auto kh = c.k.middleCols(hd * dh, dh);
      const auto vh = c.v.middleCols(hd * dh, dh);
      const Matrix dp = doh * vh.transpose();
      dv.middleCols(hd * dh, dh) = p.transpose() * doh;
      const Eigen::VectorXd rowdot = (dp.array() * p.array()).rowwise().sum();
      const Matrix ds = p.array() * (dp.colwise() - rowdot).array();
      dq.middleCols(hd * dh, dh) = ds * kh * scale;
      dk.middleCols(hd * dh, dh) = ds.transpose() * qh * scale;
      if (cfg.use_rel_bias) {
        const Eigen::VectorXd& g = c.gates[hd];
        Eigen::VectorXd dg = Eigen::VectorXd::Zero(T);
        for (int i = 0; i < T; ++i) {
          for (int j = 0; j < T; ++j) {
            const int b = tr.buckets(i, j);
            grads.rel_bias(hd, b) += ds(i, j) * g[i];
            dg[i] += ds(i, j) * params.rel_bias(hd, b);
          }
        }
        if (cfg.gated_rel_bias) {
          const Eigen::VectorXd dz = dg.array() * g.array() * (1.0 - g.array());
          dq.middleCols(hd * dh, dh) += dz * L.gate.row(hd);
          G.gate.row(hd) += dz.transpose() * qh;
        }
      }
    }
    G.wq += c.a.transpose() * dq;
    G.bq.row(0) += dq.colwise().sum();
    G.wk += c.a.transpose() * dk;
    G.bk.row(0) += dk.colwise().sum();
    G.wv += c.a.transpose() * dv;
    G.bv.row(0) += dv.colwise().sum();
    const Matrix da = dq * L.wq.transpose() + dk * L.wk.transpose() + dv * L.wv.transpose();
    dx = dx1 + layer_norm_backward(da, c.ln1_xhat, c.ln1_inv, L.ln1_gain, G.ln1_gain, G.ln1_bias);
  }

  // Input projection, time mask and channel mask.
  for (int ch = 0; ch < cfg.model_dim; ++ch) {
    if (tr.channel_mask[ch]) dx.col(ch).setZero();
  }
  for (int t = 0; t < T; ++t) {
    if (tr.time_mask[t]) {
      grads.mask_emb.row(0) += dx.row(t);
      dx.row(t).setZero();
    }
  }
  grads.w_in += tr.x_norm.transpose() * dx;
  grads.b_in.row(0) += dx.colwise().sum();
}

Matrix label_logits(const ProbeParams& params, const Matrix& top) { return add_bias(top * params.w_out, params.b_out); }

Matrix ctc_logits(const ProbeParams& params, const Matrix& top) {
  if (!params.has_ctc_head()) throw Error("probe: model has no CTC head");
  return add_bias(top * params.w_ctc, params.b_ctc);
}

Matrix forward(const ProbeParams& params, const FeatureMatrix& features, const MaskSpec& mask) {
  ForwardOptions opts;
  opts.time_mask = &mask.masked;
  return label_logits(params, encode(params, features.frames, opts).top());
}

Matrix hidden_states(const ProbeParams& params, const FeatureMatrix& features, int layer) {
  if (layer < 0 || layer > params.config.layers) {
    throw Error("probe: layer " + std::to_string(layer) + " out of range [0, " + std::to_string(params.config.layers) +
                "]");
  }
  return encode(params, features.frames).hidden[layer];
}

double loss_masked_ce(const Matrix& logits, const std::vector<int>& labels, const MaskSpec& mask, Matrix* d_logits) {
  const auto T = static_cast<std::size_t>(logits.rows());
  if (labels.size() != T || mask.masked.size() != T) throw Error("masked CE: logits, labels and mask lengths differ");
  const int n = mask.count();
  if (n == 0) throw Error("masked CE: mask is empty");
  if (d_logits) *d_logits = Matrix::Zero(logits.rows(), logits.cols());
  double total = 0.0;
  for (std::size_t t = 0; t < T; ++t) {
    if (!mask.masked[t]) continue;
    const int y = labels[t];
    if (y < 0 || y >= logits.cols()) {
      throw Error("masked CE: label " + std::to_string(y) + " outside vocabulary of " + std::to_string(logits.cols()));
    }
    const auto row = logits.row(static_cast<Eigen::Index>(t));
    const double m = row.maxCoeff();
    const double lse = m + std::log((row.array() - m).exp().sum());
    total += lse - row(y);
    if (d_logits) {
      d_logits->row(static_cast<Eigen::Index>(t)) = (row.array() - lse).exp() / n;
      (*d_logits)(static_cast<Eigen::Index>(t), y) -= 1.0 / n;
    }
  }
  return total / n;
}

double masked_ce_loss_and_grad(const ProbeParams& params, const Matrix& features, const std::vector<int>& labels,
                               const MaskSpec& mask, ProbeParams* grads, double weight) {
  if (labels.size() != static_cast<std::size_t>(features.rows()) || mask.masked.size() != labels.size()) {
    throw Error("masked CE: features, labels and mask lengths differ");
  }
  ForwardOptions opts;
  opts.time_mask = &mask.masked;
  const EncoderTrace tr = encode(params, features, opts);
  // Only masked frames enter the loss, so the head runs on those rows alone.
  std::vector<Eigen::Index> rows;
  for (std::size_t t = 0; t < labels.size(); ++t) {
    if (mask.masked[t]) rows.push_back(static_cast<Eigen::Index>(t));
  }
  if (rows.empty()) throw Error("masked CE: mask is empty");
  const Eigen::Index n = static_cast<Eigen::Index>(rows.size());
  Matrix top(n, tr.top().cols());
  std::vector<int> picked(rows.size());
  for (Eigen::Index i = 0; i < n; ++i) {
    top.row(i) = tr.top().row(rows[i]);
    picked[i] = labels[rows[i]];
  }
  MaskSpec all;
  all.masked.assign(rows.size(), true);
  Matrix dlogits;
  const double loss = loss_masked_ce(label_logits(params, top), picked, all, grads ? &dlogits : nullptr);
  if (grads) {
    dlogits *= weight;
    grads->w_out += top.transpose() * dlogits;
    grads->b_out.row(0) += dlogits.colwise().sum();
    const Matrix d_rows = dlogits * params.w_out.transpose();
    Matrix d_top = Matrix::Zero(tr.top().rows(), tr.top().cols());
    for (Eigen::Index i = 0; i < n; ++i) d_top.row(rows[i]) = d_rows.row(i);
    encode_backward(params, tr, d_top, *grads);
  }
  return loss;
}

double ctc_loss_and_grad(const ProbeParams& params, const Matrix& features, const std::vector<int>& target,
                         const ForwardOptions& options, ProbeParams* grads, double weight) {
  const EncoderTrace tr = encode(params, features, options);
  const Matrix logp = log_softmax(ctc_logits(params, tr.top()));
  if (!grads) return ctc_loss(logp, target);
  const CtcResult r = ctc_grad(logp, target);
  const Matrix dlogits = log_softmax_backward(logp, r.grad) * weight;
  grads->w_ctc += tr.top().transpose() * dlogits;
  grads->b_ctc.row(0) += dlogits.colwise().sum();
  encode_backward(params, tr, dlogits * params.w_ctc.transpose(), *grads);
  return r.loss;
}

Matrix ctc_log_probs(const ProbeParams& params, const Matrix& features) {
  return log_softmax(ctc_logits(params, encode(params, features).top()));
}

namespace {

constexpr char kProbeMagic[4] = {'H', 'A', 'P', 'P'};
constexpr std::uint32_t kProbeVersion = 1;

class Writer {
 public:
  explicit Writer(const std::filesystem::path& path) : out_(path, std::ios::binary) {
    if (!out_) throw Error("cannot write " + path.string());
  }
  template <typename T>
  void put(T v) {
    out_.write(reinterpret_cast<const char*>(&v), sizeof v);
  }
  void put_string(const std::string& s) {
    put(static_cast<std::uint32_t>(s.size()));
    out_.write(s.data(), static_cast<std::streamsize>(s.size()));
  }
  void put_matrix(const std::string& name, const Matrix& m) {
    put_string(name);
    put(static_cast<std::uint32_t>(m.rows()));
    put(static_cast<std::uint32_t>(m.cols()));
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
      for (Eigen::Index c = 0; c < m.cols(); ++c) put(m(r, c));
    }
  }
  std::ofstream& stream() { return out_; }

 private:
  std::ofstream out_;
};

class Reader {
 public:
  explicit Reader(const std::filesystem::path& path) : in_(path, std::ios::binary), path_(path.string()) {
    if (!in_) throw Error("cannot open " + path_);
  }
  template <typename T>
  T get() {
    T v;
    in_.read(reinterpret_cast<char*>(&v), sizeof v);
    if (!in_) throw Error(path_ + ": truncated probe checkpoint");
    return v;
  }
  std::string get_string() {
    const auto n = get<std::uint32_t>();
    if (n > 4096) throw Error(path_ + ": corrupt tensor name");
    std::string s(n, '\0');
    in_.read(s.data(), n);
    if (!in_) throw Error(path_ + ": truncated probe checkpoint");
    return s;
  }
  void get_matrix(const std::string& name, Matrix& m) {
    const std::string got = get_string();
    if (got != name) throw Error(path_ + ": expected tensor '" + name + "', found '" + got + "'");
    const auto rows = get<std::uint32_t>();
    const auto cols = get<std::uint32_t>();
    if (rows != m.rows() || cols != m.cols()) throw Error(path_ + ": shape mismatch for tensor '" + name + "'");
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
      for (Eigen::Index c = 0; c < m.cols(); ++c) m(r, c) = get<double>();
    }
  }
  const std::string& path() const { return path_; }

 private:
  std::ifstream in_;
  std::string path_;
};

template <typename Visitor>
void visit_config(ProbeConfig& c, Visitor&& v) {
  v(c.input_dim);
  v(c.layers);
  v(c.model_dim);
  v(c.heads);
  v(c.ffn_dim);
  v(c.rel_pos_buckets);
  v(c.max_rel_distance);
  v(c.label_vocab);
  v(c.ctc_vocab);
  v(c.use_rel_bias);
  v(c.gated_rel_bias);
  v(c.mask_start_prob);
  v(c.mask_span);
  v(c.layerdrop);
  v(c.finetune_mask_prob);
  v(c.channel_mask_prob);
  v(c.channel_mask_span);
}

}  // namespace

void save_probe(const std::filesystem::path& path, const ProbeParams& params) {
  Writer w(path);
  w.stream().write(kProbeMagic, 4);
  w.put(kProbeVersion);
  ProbeConfig cfg = params.config;
  visit_config(cfg, [&](auto& field) {
    if constexpr (std::is_same_v<std::decay_t<decltype(field)>, bool>) {
      w.put(static_cast<std::uint8_t>(field));
    } else {
      w.put(field);
    }
  });
  w.put_matrix("feat_mean", params.feat_mean);
  w.put_matrix("feat_inv_std", params.feat_inv_std);
  for (const auto& t : params.tensors()) w.put_matrix(t.name, *t.value);
  if (!w.stream()) throw Error("failed writing " + path.string());
}

ProbeParams load_probe(const std::filesystem::path& path) {
  Reader r(path);
  char magic[4];
  for (char& c : magic) c = r.get<char>();
  if (std::memcmp(magic, kProbeMagic, 4) != 0) throw Error(r.path() + ": bad probe checkpoint magic");
  const auto version = r.get<std::uint32_t>();
  if (version != kProbeVersion) throw Error(r.path() + ": unsupported checkpoint version " + std::to_string(version));
  ProbeConfig cfg;
  visit_config(cfg, [&](auto& field) {
    using F = std::decay_t<decltype(field)>;
    if constexpr (std::is_same_v<F, bool>) {
      field = r.get<std::uint8_t>() != 0;
    } else {
      field = r.get<F>();
    }
  });
  try {
    cfg.validate();
  } catch (const Error& e) {
    throw Error(r.path() + ": " + e.what());
  }
  ProbeParams p = build_probe(cfg, 0);
  r.get_matrix("feat_mean", p.feat_mean);
  r.get_matrix("feat_inv_std", p.feat_inv_std);
  for (auto& t : p.tensors()) r.get_matrix(t.name, *t.value);
  if (!p.all_finite()) throw Error(r.path() + ": non-finite parameter");
  return p;
}

}  // namespace hubert_ap
