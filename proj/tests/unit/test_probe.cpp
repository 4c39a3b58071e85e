#include <cmath>
#include <numeric>

#include "doctest.h"
#include "hubert_ap/ctc.hpp"
#include "hubert_ap/io.hpp"
#include "hubert_ap/probe.hpp"
#include "hubert_ap/probe_train.hpp"
#include "test_util.hpp"

using namespace hubert_ap;

namespace {

ProbeConfig small_config() {
  ProbeConfig c;
  c.input_dim = 5;
  c.layers = 2;
  c.model_dim = 8;
  c.heads = 2;
  c.ffn_dim = 12;
  c.rel_pos_buckets = 8;
  c.max_rel_distance = 16;
  c.label_vocab = 4;
  return c;
}

// Every tensor gets random values so that no gradient path is trivially zero.
ProbeParams randomized(const ProbeConfig& cfg, std::uint64_t seed) {
  ProbeParams p = build_probe(cfg, seed);
  Rng rng(seed + 1);
  for (auto& t : p.tensors()) *t.value = testutil::random_matrix(t.value->rows(), t.value->cols(), rng, 0.5);
  for (auto& L : p.layers) {
    L.ln1_gain.array() += 1.0;
    L.ln2_gain.array() += 1.0;
  }
  p.feat_mean = testutil::random_matrix(1, cfg.input_dim, rng, 0.3);
  p.feat_inv_std = testutil::random_matrix(1, cfg.input_dim, rng, 0.2).array() + 1.0;
  return p;
}

MaskSpec mask_of(const std::vector<bool>& m) {
  MaskSpec s;
  s.masked = m;
  return s;
}

// Plain loops over the documented architecture; shares no code with the model.
Matrix naive_logits(const ProbeParams& p, const Matrix& x, const std::vector<bool>& masked) {
  const ProbeConfig& c = p.config;
  const int T = static_cast<int>(x.rows()), d = c.model_dim, H = c.heads, dh = d / H;
  auto ln = [&](const Matrix& in, const Matrix& g, const Matrix& b) {
    Matrix out(in.rows(), in.cols());
    for (int t = 0; t < in.rows(); ++t) {
      double mu = 0.0, var = 0.0;
      for (int j = 0; j < d; ++j) mu += in(t, j);
      mu /= d;
      for (int j = 0; j < d; ++j) var += (in(t, j) - mu) * (in(t, j) - mu);
      var /= d;
      for (int j = 0; j < d; ++j) out(t, j) = (in(t, j) - mu) / std::sqrt(var + 1e-5) * g(0, j) + b(0, j);
    }
    return out;
  };
  auto affine = [](const Matrix& in, const Matrix& w, const Matrix& b) {
    Matrix out(in.rows(), w.cols());
    for (int t = 0; t < in.rows(); ++t) {
      for (int o = 0; o < w.cols(); ++o) {
        double s = b(0, o);
        for (int i = 0; i < in.cols(); ++i) s += in(t, i) * w(i, o);
        out(t, o) = s;
      }
    }
    return out;
  };
  Matrix xn(T, c.input_dim);
  for (int t = 0; t < T; ++t) {
    for (int i = 0; i < c.input_dim; ++i) xn(t, i) = (x(t, i) - p.feat_mean(0, i)) * p.feat_inv_std(0, i);
  }
  Matrix h = affine(xn, p.w_in, p.b_in);
  for (int t = 0; t < T; ++t) {
    if (masked[t]) {
      for (int j = 0; j < d; ++j) h(t, j) = p.mask_emb(0, j);
    }
  }
  for (const auto& L : p.layers) {
    const Matrix a = ln(h, L.ln1_gain, L.ln1_bias);
    const Matrix q = affine(a, L.wq, L.bq), k = affine(a, L.wk, L.bk), v = affine(a, L.wv, L.bv);
    Matrix att = Matrix::Zero(T, d);
    for (int hd = 0; hd < H; ++hd) {
      for (int i = 0; i < T; ++i) {
        double gate = 1.0;
        if (c.gated_rel_bias) {
          double z = 0.0;
          for (int e = 0; e < dh; ++e) z += q(i, hd * dh + e) * L.gate(hd, e);
          gate = 1.0 / (1.0 + std::exp(-z));
        }
        std::vector<double> s(T);
        for (int j = 0; j < T; ++j) {
          double dot = 0.0;
          for (int e = 0; e < dh; ++e) dot += q(i, hd * dh + e) * k(j, hd * dh + e);
          s[j] = dot / std::sqrt(static_cast<double>(dh));
          if (c.use_rel_bias) {
            s[j] += gate * p.rel_bias(hd, relative_bucket(i - j, c.rel_pos_buckets, c.max_rel_distance));
          }
        }
        const double m = *std::max_element(s.begin(), s.end());
        double z = 0.0;
        for (double& e : s) z += (e = std::exp(e - m));
        for (int j = 0; j < T; ++j) {
          for (int e = 0; e < dh; ++e) att(i, hd * dh + e) += s[j] / z * v(j, hd * dh + e);
        }
      }
    }
    const Matrix x1 = h + affine(att, L.wo, L.bo);
    Matrix f = affine(ln(x1, L.ln2_gain, L.ln2_bias), L.w1, L.b1);
    for (int t = 0; t < f.rows(); ++t) {
      for (int j = 0; j < f.cols(); ++j) f(t, j) = 0.5 * f(t, j) * (1.0 + std::erf(f(t, j) / std::sqrt(2.0)));
    }
    h = x1 + affine(f, L.w2, L.b2);
  }
  return affine(h, p.w_out, p.b_out);
}

using LossFn = std::function<double(const ProbeParams&, ProbeParams*)>;

// Central differences on a few entries of every tensor.
void check_gradients(ProbeParams params, const LossFn& loss, Rng& rng, int probes_per_tensor) {
  ProbeParams grads = params.zeros_like();
  loss(params, &grads);
  const auto g = grads.tensors();
  auto p = params.tensors();
  const double h = 1e-5;
  for (std::size_t ti = 0; ti < p.size(); ++ti) {
    Matrix& m = *p[ti].value;
    for (int k = 0; k < probes_per_tensor; ++k) {
      const Eigen::Index idx = static_cast<Eigen::Index>(rng.below(static_cast<std::uint64_t>(m.size())));
      double& w = m.data()[idx];
      const double saved = w;
      w = saved + h;
      const double up = loss(params, nullptr);
      w = saved - h;
      const double down = loss(params, nullptr);
      w = saved;
      const double numeric = (up - down) / (2 * h);
      const double analytic = g[ti].value->data()[idx];
      INFO(p[ti].name << "[" << idx << "] analytic " << analytic << " numeric " << numeric);
      if (p[ti].name.ends_with(".bk")) {
        // Softmax is shift invariant along keys: this gradient is exactly
        // zero and the difference quotient is pure rounding noise.
        CHECK(std::abs(analytic) < 1e-12);
        CHECK(std::abs(numeric) < 1e-8);
      } else {
        CHECK(testutil::rel_err(analytic, numeric) < 1e-4);
      }
    }
  }
}

}  // namespace

TEST_CASE("build_probe is deterministic with a closed-form parameter count") {
  const ProbeConfig c = small_config();
  const ProbeParams a = build_probe(c, 3), b = build_probe(c, 3), other = build_probe(c, 4);
  const auto ta = a.tensors(), tb = b.tensors(), to = other.tensors();
  bool any_diff = false;
  for (std::size_t i = 0; i < ta.size(); ++i) {
    CHECK(*ta[i].value == *tb[i].value);
    any_diff = any_diff || *ta[i].value != *to[i].value;
  }
  CHECK(any_diff);
  CHECK(a.rel_bias.isZero(0.0));
  const std::size_t D = 5, d = 8, H = 2, B = 8, F = 12, V = 4, L = 2, dh = 4;
  const std::size_t per_layer = 4 * (d * d + d) + H * dh + 4 * d + (d * F + F) + (F * d + d);
  CHECK(a.num_parameters() == D * d + d + d + H * B + L * per_layer + d * V + V);
  ProbeParams with_ctc = a;
  add_ctc_head(with_ctc, 6, 1);
  CHECK(with_ctc.num_parameters() == a.num_parameters() + d * 6 + 6);
}

TEST_CASE("probe config validation") {
  ProbeConfig c = small_config();
  c.heads = 3;
  CHECK_THROWS_AS(build_probe(c, 1), Error);
  c = small_config();
  c.ffn_dim = 0;
  CHECK_THROWS_AS(build_probe(c, 1), Error);
  ProbeParams p = build_probe(small_config(), 1);
  CHECK_THROWS_AS(encode(p, Matrix::Zero(4, 6)), Error);
  CHECK_THROWS_AS(ctc_logits(p, Matrix::Zero(4, 8)), Error);
  CHECK_THROWS_AS(add_ctc_head(p, 1, 1), Error);
}

TEST_CASE("sample_spans") {
  Rng rng(31);
  CHECK(sample_spans(50, 0.0, 10, rng).count() == 0);
  CHECK(sample_spans(50, 1.0, 10, rng).count() == 50);
  const MaskSpec one = sample_spans(1, 1.0, 10, rng);
  CHECK(one.masked == std::vector<bool>{true});
  CHECK_THROWS_AS(sample_spans(0, 0.5, 10, rng), Error);

  // Interior frames are masked with probability 1 - (1 - p)^span.
  const double p = 0.08;
  const int span = 10, T = 200, draws = 10000;
  long long hit = 0, total = 0;
  for (int n = 0; n < draws; ++n) {
    const MaskSpec m = sample_spans(T, p, span, rng);
    for (int t = span - 1; t < T; ++t) {
      hit += m.masked[t];
      ++total;
    }
    for (int s : m.starts) CHECK(m.masked[s]);
  }
  const double empirical = static_cast<double>(hit) / static_cast<double>(total);
  CHECK(std::abs(empirical - (1.0 - std::pow(1.0 - p, span))) < 0.02);

  const ProbeConfig cfg;
  CHECK(sample_spans(100, cfg, 9).masked == sample_spans(100, cfg, 9).masked);
}

TEST_CASE("relative buckets are symmetric, bounded and exact near zero") {
  for (int off = -300; off <= 300; ++off) {
    const int b = relative_bucket(off, 32, 128);
    CHECK(b >= 0);
    CHECK(b < 32);
    if (off > 0) CHECK(b >= 16);
    if (off <= 0) CHECK(b < 16);
    if (off > 0) CHECK(relative_bucket(-off, 32, 128) == b - 16);
  }
  for (int off = 0; off < 8; ++off) CHECK(relative_bucket(-off, 32, 128) == off);
  int prev = 0;
  for (int off = 1; off < 300; ++off) {
    const int b = relative_bucket(off, 32, 128);
    CHECK(b >= prev);
    prev = b;
  }
}

TEST_CASE("zero weights leave only the output bias") {
  ProbeParams p = build_probe(small_config(), 5);
  for (auto& t : p.tensors()) t.value->setZero();
  p.b_out << 0.5, -1.25, 3.0, 0.0;
  Rng rng(32);
  FeatureMatrix f{"u", testutil::random_matrix(6, 5, rng, 1.0)};
  const Matrix logits = forward(p, f, mask_of({true, false, false, true, false, false}));
  for (int t = 0; t < 6; ++t) CHECK(logits.row(t) == p.b_out.row(0));
}

TEST_CASE("forward matches the naive attention oracle") {
  Rng rng(33);
  for (int T = 1; T <= 6; ++T) {
    for (bool gated : {true, false}) {
      ProbeConfig c = small_config();
      c.gated_rel_bias = gated;
      const ProbeParams p = randomized(c, 40 + T);
      const Matrix x = testutil::random_matrix(T, 5, rng, 1.0);
      std::vector<bool> m(T);
      for (int t = 0; t < T; ++t) m[t] = rng.bernoulli(0.3);
      const Matrix got = forward(p, {"u", x}, mask_of(m));
      const Matrix want = naive_logits(p, x, m);
      CHECK((got - want).cwiseAbs().maxCoeff() < 1e-9);
    }
  }
}

TEST_CASE("permuting frames changes the output") {
  Rng rng(34);
  const ProbeParams p = randomized(small_config(), 7);
  const Matrix x = testutil::random_matrix(5, 5, rng, 1.0);
  Matrix perm = x;
  perm.row(0).swap(perm.row(4));
  const std::vector<bool> none(5, false);
  Matrix a = forward(p, {"u", x}, mask_of(none));
  Matrix b = forward(p, {"u", perm}, mask_of(none));
  b.row(0).swap(b.row(4));
  CHECK((a - b).cwiseAbs().maxCoeff() > 1e-6);
}

TEST_CASE("a zero gate vector halves the relative bias exactly") {
  Rng rng(35);
  ProbeConfig gated_cfg = small_config();
  ProbeParams gated = randomized(gated_cfg, 8);
  for (auto& L : gated.layers) L.gate.setZero();
  ProbeParams plain = gated;
  plain.config.gated_rel_bias = false;
  plain.rel_bias = gated.rel_bias / 2.0;
  const Matrix x = testutil::random_matrix(7, 5, rng, 1.0);
  const std::vector<bool> none(7, false);
  CHECK(forward(gated, {"u", x}, mask_of(none)) == forward(plain, {"u", x}, mask_of(none)));
}

TEST_CASE("zero relative bias is plain attention") {
  Rng rng(36);
  ProbeParams p = randomized(small_config(), 9);
  p.rel_bias.setZero();
  ProbeParams off = p;
  off.config.use_rel_bias = false;
  const Matrix x = testutil::random_matrix(6, 5, rng, 1.0);
  const std::vector<bool> m{false, true, false, false, true, false};
  const Matrix a = forward(p, {"u", x}, mask_of(m));
  CHECK(a == forward(off, {"u", x}, mask_of(m)));
  CHECK((a - naive_logits(off, x, m)).cwiseAbs().maxCoeff() < 1e-9);
}

TEST_CASE("attention rows sum to one and logits are finite") {
  Rng rng(37);
  const ProbeParams p = randomized(small_config(), 10);
  const EncoderTrace tr = encode(p, testutil::random_matrix(9, 5, rng, 3.0));
  for (const auto& c : tr.caches) {
    for (const auto& probs : c.probs) {
      for (int i = 0; i < probs.rows(); ++i) CHECK(std::abs(probs.row(i).sum() - 1.0) < 1e-9);
    }
  }
  CHECK(label_logits(p, tr.top()).allFinite());
}

TEST_CASE("loss_masked_ce worked cases") {
  Matrix logits(2, 3);
  logits << 1, 2, 3, 0, 0, 0;
  const double want = ((std::log(std::exp(1.0) + std::exp(2.0) + std::exp(3.0)) - 3.0) + std::log(3.0)) / 2.0;
  CHECK(loss_masked_ce(logits, {2, 1}, mask_of({true, true})) == doctest::Approx(want).epsilon(1e-14));
  CHECK(loss_masked_ce(logits, {0, 1}, mask_of({false, true})) == doctest::Approx(std::log(3.0)).epsilon(1e-14));

  Matrix uniform = Matrix::Constant(4, 7, 0.3);
  CHECK(loss_masked_ce(uniform, {0, 1, 2, 3}, mask_of({true, true, false, true})) ==
        doctest::Approx(std::log(7.0)).epsilon(1e-14));

  Matrix sharp = Matrix::Zero(2, 3);
  sharp(0, 1) = 60;
  sharp(1, 2) = 60;
  CHECK(loss_masked_ce(sharp, {1, 2}, mask_of({true, true})) < 1e-20);

  CHECK_THROWS_AS(loss_masked_ce(logits, {0, 1}, mask_of({false, false})), Error);
  CHECK_THROWS_AS(loss_masked_ce(logits, {0}, mask_of({true, true})), Error);
  CHECK_THROWS_AS(loss_masked_ce(logits, {0, 3}, mask_of({true, true})), Error);
}

TEST_CASE("labels at unmasked frames do not affect the loss") {
  Rng rng(38);
  const ProbeParams p = randomized(small_config(), 11);
  const Matrix x = testutil::random_matrix(8, 5, rng, 1.0);
  const MaskSpec m = mask_of({false, true, true, false, false, true, false, false});
  std::vector<int> labels{0, 1, 2, 3, 0, 1, 2, 3};
  const double a = masked_ce_loss_and_grad(p, x, labels, m, nullptr);
  for (int t : {0, 3, 4, 6, 7}) labels[t] = (labels[t] + 1) % 4;
  CHECK(masked_ce_loss_and_grad(p, x, labels, m, nullptr) == a);
  labels[1] = (labels[1] + 1) % 4;
  CHECK(masked_ce_loss_and_grad(p, x, labels, m, nullptr) != a);
}

TEST_CASE("masked CE gradients match finite differences") {
  Rng rng(39);
  for (bool gated : {true, false}) {
    ProbeConfig c = small_config();
    c.gated_rel_bias = gated;
    const ProbeParams p = randomized(c, 12);
    const Matrix x = testutil::random_matrix(7, 5, rng, 1.0);
    const std::vector<int> labels{0, 3, 1, 2, 2, 0, 1};
    const MaskSpec m = mask_of({true, false, true, true, false, false, true});
    check_gradients(
        p, [&](const ProbeParams& q, ProbeParams* g) { return masked_ce_loss_and_grad(q, x, labels, m, g); }, rng, 3);
  }
}

TEST_CASE("CTC gradients match finite differences with masking and layer drop") {
  Rng rng(40);
  ProbeParams p = randomized(small_config(), 13);
  add_ctc_head(p, 4, 2);
  Rng head(3);
  p.b_ctc = testutil::random_matrix(1, 4, head, 0.5);
  const Matrix x = testutil::random_matrix(8, 5, rng, 1.0);
  const std::vector<int> target{1, 3, 3, 2};
  const std::vector<bool> time_mask{false, false, true, true, false, false, false, false};
  std::vector<bool> channels(8, false);
  channels[2] = channels[3] = true;
  for (bool drop_first : {false, true}) {
    const std::vector<bool> active{!drop_first, true};
    ForwardOptions opts;
    opts.time_mask = &time_mask;
    opts.channel_mask = &channels;
    opts.layer_active = &active;
    check_gradients(
        p, [&](const ProbeParams& q, ProbeParams* g) { return ctc_loss_and_grad(q, x, target, opts, g); }, rng, 3);
  }
}

TEST_CASE("output head gradient has the closed form") {
  Rng rng(41);
  const ProbeParams p = randomized(small_config(), 14);
  const Matrix x = testutil::random_matrix(6, 5, rng, 1.0);
  const std::vector<int> labels{1, 0, 3, 2, 1, 0};
  const MaskSpec m = mask_of({true, true, false, true, false, false});
  ProbeParams g = p.zeros_like();
  masked_ce_loss_and_grad(p, x, labels, m, &g);
  const Matrix top = encode(p, x, {&m.masked, nullptr, nullptr}).top();
  Matrix want = Matrix::Zero(8, 4);
  for (int t = 0; t < 6; ++t) {
    if (!m.masked[t]) continue;
    Eigen::RowVectorXd z = top.row(t) * p.w_out + p.b_out;
    Eigen::RowVectorXd s = (z.array() - z.maxCoeff()).exp();
    s /= s.sum();
    s(labels[t]) -= 1.0;
    want += top.row(t).transpose() * s / 3.0;
  }
  CHECK((g.w_out - want).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("zero loss gives zero gradient") {
  Rng rng(42);
  ProbeParams p = randomized(small_config(), 15);
  p.w_out.setZero();
  p.b_out << 0, 0, 200, 0;
  const Matrix x = testutil::random_matrix(5, 5, rng, 1.0);
  ProbeParams g = p.zeros_like();
  const double loss = masked_ce_loss_and_grad(p, x, {2, 2, 2, 2, 2}, mask_of({true, true, false, true, true}), &g);
  CHECK(loss < 1e-80);
  for (const auto& t : g.tensors()) CHECK(t.value->cwiseAbs().maxCoeff() < 1e-10);
}

TEST_CASE("channel mask with probability zero is the unmasked path") {
  Rng rng(43);
  const ProbeParams p = randomized(small_config(), 16);
  const Matrix x = testutil::random_matrix(6, 5, rng, 1.0);
  const std::vector<bool> channels = sample_channel_mask(8, 0.0, 2, rng);
  CHECK(channels == std::vector<bool>(8, false));
  CHECK(encode(p, x, {nullptr, &channels, nullptr}).top() == encode(p, x).top());
  const std::vector<bool> all = sample_channel_mask(8, 1.0, 2, rng);
  CHECK(encode(p, x, {nullptr, &all, nullptr}).hidden[0].isZero(0.0));
}

TEST_CASE("dropping every layer applies the head to the input projection") {
  Rng rng(44);
  const ProbeParams p = randomized(small_config(), 17);
  const Matrix x = testutil::random_matrix(6, 5, rng, 1.0);
  const std::vector<bool> none(2, false);
  const EncoderTrace tr = encode(p, x, {nullptr, nullptr, &none});
  const Matrix proj = hidden_states(p, {"u", x}, 0);
  CHECK(tr.top() == proj);
  CHECK(label_logits(p, tr.top()) == label_logits(p, proj));
}

TEST_CASE("hidden_states") {
  Rng rng(45);
  const ProbeParams p = randomized(small_config(), 18);
  const FeatureMatrix f{"u", testutil::random_matrix(7, 5, rng, 1.0)};
  const Matrix xn = (f.frames.rowwise() - p.feat_mean.row(0)).array().rowwise() * p.feat_inv_std.row(0).array();
  const Matrix want = (xn * p.w_in).rowwise() + p.b_in.row(0);
  CHECK((hidden_states(p, f, 0) - want).cwiseAbs().maxCoeff() < 1e-12);
  for (int l = 0; l <= 2; ++l) {
    const Matrix h = hidden_states(p, f, l);
    CHECK(h.rows() == 7);
    CHECK(h.cols() == 8);
  }
  CHECK(hidden_states(p, f, 2) == encode(p, f.frames).top());
  CHECK_THROWS_AS(hidden_states(p, f, 3), Error);
  CHECK_THROWS_AS(hidden_states(p, f, -1), Error);
}

TEST_CASE("input normalization") {
  ProbeParams p = build_probe(small_config(), 19);
  Rng rng(46);
  Matrix frames = testutil::random_matrix(50, 5, rng, 2.0);
  frames.col(1).array() += 7.0;
  fit_input_normalization(p, frames);
  const Matrix xn = (frames.rowwise() - p.feat_mean.row(0)).array().rowwise() * p.feat_inv_std.row(0).array();
  for (int j = 0; j < 5; ++j) {
    CHECK(std::abs(xn.col(j).mean()) < 1e-12);
    CHECK(std::abs(xn.col(j).squaredNorm() / 50.0 - 1.0) < 1e-6);
  }
  CHECK_THROWS_AS(fit_input_normalization(p, Matrix::Zero(50, 4)), Error);
  CHECK_THROWS_AS(fit_input_normalization(p, Matrix::Zero(1, 5)), Error);
}

TEST_CASE("probe checkpoint round trip") {
  testutil::TempDir dir("probe");
  ProbeParams p = randomized(small_config(), 20);
  add_ctc_head(p, 5, 3);
  save_probe(dir / "p.bin", p);
  const ProbeParams q = load_probe(dir / "p.bin");
  CHECK(q.config.ctc_vocab == 5);
  CHECK(q.config.model_dim == 8);
  CHECK(q.feat_mean == p.feat_mean);
  const auto a = p.tensors();
  const auto b = q.tensors();
  REQUIRE(a.size() == b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].name == b[i].name);
    CHECK(*a[i].value == *b[i].value);
  }
  write_text_file(dir / "bad.bin", "HAPX");
  CHECK_THROWS_AS(load_probe(dir / "bad.bin"), Error);
  const std::string bytes = read_text_file(dir / "p.bin");
  write_text_file(dir / "short.bin", bytes.substr(0, bytes.size() / 2));
  CHECK_THROWS_AS(load_probe(dir / "short.bin"), Error);
  CHECK_THROWS_AS(load_probe(dir / "missing.bin"), Error);
}

TEST_CASE("learning-rate schedule") {
  const int total = 1000;
  CHECK(lr_at(0, total, 5e-4, 0.08) == 0.0);
  CHECK(lr_at(80, total, 5e-4, 0.08) == 5e-4);
  CHECK(lr_at(40, total, 5e-4, 0.08) == doctest::Approx(2.5e-4).epsilon(1e-15));
  CHECK(lr_at(total, total, 5e-4, 0.08) == 0.0);
  double prev = 1.0;
  for (int s = 80; s <= total; ++s) {
    const double lr = lr_at(s, total, 5e-4, 0.08);
    CHECK(lr <= prev);
    prev = lr;
  }
  CHECK(lr_at(2500, 31250, 5e-4, 0.08) == 5e-4);
}

namespace {

// Two labels in blocks; each block's label is readable from its features.
struct ToyCorpus {
  std::vector<FeatureMatrix> feats;
  std::vector<std::vector<int>> labels;
};

ToyCorpus two_label_corpus(int utts, std::uint64_t seed) {
  Rng rng(seed);
  ToyCorpus c;
  for (int u = 0; u < utts; ++u) {
    std::vector<int> lab;
    int y = static_cast<int>(rng.below(2));
    while (lab.size() < 60) {
      const int len = rng.between(15, 25);
      for (int i = 0; i < len; ++i) lab.push_back(y);
      y = 1 - y;
    }
    lab.resize(60);
    Matrix f(60, 4);
    for (int t = 0; t < 60; ++t) {
      for (int j = 0; j < 4; ++j) f(t, j) = (lab[t] ? 1.0 : -1.0) * (j + 1) * 0.5 + 0.2 * rng.normal();
    }
    c.feats.push_back({"u" + std::to_string(u), f});
    c.labels.push_back(lab);
  }
  return c;
}

ProbeConfig toy_config() {
  ProbeConfig c;
  c.input_dim = 4;
  c.layers = 1;
  c.model_dim = 16;
  c.heads = 2;
  c.ffn_dim = 32;
  c.rel_pos_buckets = 16;
  c.max_rel_distance = 64;
  c.label_vocab = 2;
  c.mask_span = 5;
  return c;
}

}  // namespace

TEST_CASE("pre-training learns a two-label corpus and is reproducible") {
  const ToyCorpus c = two_label_corpus(16, 47);
  std::vector<LabeledFeatures> corpus;
  for (std::size_t i = 0; i < c.feats.size(); ++i) corpus.push_back({&c.feats[i], &c.labels[i]});
  TrainConfig tc;
  tc.steps = 600;
  tc.batch_size = 4;
  tc.peak_lr = 3e-3;
  tc.seed = 5;
  tc.eval_utterances = 8;
  const PretrainResult r = pretrain(build_probe(toy_config(), 1), corpus, tc);
  CHECK(r.final_eval_loss < 0.8 * std::log(2.0));
  CHECK(r.trace.size() == 600);
  CHECK(r.trace.back().lr == 0.0);
  const PretrainResult again = pretrain(build_probe(toy_config(), 1), corpus, tc);
  CHECK(again.final_eval_loss == r.final_eval_loss);
  CHECK(again.params.w_out == r.params.w_out);
  CHECK(trace_to_csv(again.trace) == trace_to_csv(r.trace));
  CHECK(trace_to_csv({{1, 0.5, 2.0}}).rfind("step,lr,loss\n", 0) == 0);

  std::vector<int> bad = c.labels[0];
  bad[3] = 2;
  std::vector<LabeledFeatures> bad_corpus{{&c.feats[0], &bad}};
  CHECK_THROWS_AS(pretrain(build_probe(toy_config(), 1), bad_corpus, tc), Error);
}

TEST_CASE("CTC fine-tuning reaches zero token error on a toy set") {
  // Each character is a fixed random pattern held for 6 frames, with 2
  // background frames between characters so repeats stay separable.
  Rng rng(48);
  Matrix proto(4, 4);
  for (int c = 0; c < 4; ++c) {
    for (int j = 0; j < 4; ++j) proto(c, j) = rng.normal();
  }
  std::vector<std::vector<int>> targets;
  for (int u = 0; u < 8; ++u) {
    std::vector<int> y(rng.between(2, 4));
    for (int& c : y) c = rng.between(1, 3);
    targets.push_back(y);
  }
  std::vector<FeatureMatrix> feats;
  Matrix pooled(0, 4);
  for (std::size_t u = 0; u < targets.size(); ++u) {
    Matrix f(static_cast<int>(targets[u].size()) * 8 + 2, 4);
    for (int t = 0; t < f.rows(); ++t) f.row(t) = proto.row(0);
    int t = 2;
    for (int ch : targets[u]) {
      for (int i = 0; i < 6; ++i, ++t) {
        for (int j = 0; j < 4; ++j) f(t, j) = proto(ch, j) + 0.05 * rng.normal();
      }
      t += 2;
    }
    Matrix grown(pooled.rows() + f.rows(), 4);
    grown << pooled, f;
    pooled = grown;
    feats.push_back({"u" + std::to_string(u), f});
  }
  std::vector<TranscribedFeatures> corpus;
  for (std::size_t u = 0; u < targets.size(); ++u) corpus.push_back({&feats[u], targets[u]});

  ProbeConfig cfg = toy_config();
  cfg.layers = 2;
  cfg.mask_span = 2;
  cfg.channel_mask_span = 4;  // model_dim / 4
  ProbeParams init = build_probe(cfg, 2);
  fit_input_normalization(init, pooled);
  TrainConfig tc;
  tc.steps = 3000;
  tc.batch_size = 4;
  tc.peak_lr = 5e-3;
  tc.seed = 6;
  const FinetuneResult r = finetune_ctc(init, corpus, 4, tc);
  CHECK(r.params.has_ctc_head());
  CHECK(greedy_token_error(r.params, corpus) == 0.0);

  tc.steps = 20;
  CHECK(finetune_ctc(init, corpus, 4, tc).params.w_ctc == finetune_ctc(init, corpus, 4, tc).params.w_ctc);
  std::vector<TranscribedFeatures> bad{{&feats[0], {1, 4}}};
  CHECK_THROWS_AS(finetune_ctc(init, bad, 4, tc), Error);
}
