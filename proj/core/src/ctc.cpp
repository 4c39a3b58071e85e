#include "hubert_ap/ctc.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace hubert_ap {
namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

double log_add(double a, double b) {
  if (a == kNegInf) return b;
  if (b == kNegInf) return a;
  const double m = std::max(a, b);
  return m + std::log1p(std::exp(-std::abs(a - b)));
}

void check_target(const Matrix& logp, const std::vector<int>& target) {
  const int classes = static_cast<int>(logp.cols());
  for (int c : target) {
    if (c <= kBlank || c >= classes) {
      throw Error("ctc: target id " + std::to_string(c) + " outside [1, " + std::to_string(classes - 1) + "]");
    }
  }
  int needed = static_cast<int>(target.size());
  for (std::size_t i = 1; i < target.size(); ++i) needed += target[i] == target[i - 1];
  if (needed > logp.rows()) {
    throw Error("ctc: target of length " + std::to_string(target.size()) + " needs " + std::to_string(needed) +
                " frames but only " + std::to_string(logp.rows()) + " are available");
  }
}

// Extended label sequence: blank, l1, blank, l2, ..., blank.
std::vector<int> extend(const std::vector<int>& target) {
  std::vector<int> ext(2 * target.size() + 1, kBlank);
  for (std::size_t i = 0; i < target.size(); ++i) ext[2 * i + 1] = target[i];
  return ext;
}

bool can_skip(const std::vector<int>& ext, int s) {
  return s >= 2 && ext[s] != kBlank && ext[s] != ext[s - 2];
}

Matrix forward(const Matrix& logp, const std::vector<int>& ext) {
  const int T = static_cast<int>(logp.rows());
  const int S = static_cast<int>(ext.size());
  Matrix alpha = Matrix::Constant(T, S, kNegInf);
  alpha(0, 0) = logp(0, ext[0]);
  if (S > 1) alpha(0, 1) = logp(0, ext[1]);
  for (int t = 1; t < T; ++t) {
    for (int s = 0; s < S; ++s) {
      double a = alpha(t - 1, s);
      if (s >= 1) a = log_add(a, alpha(t - 1, s - 1));
      if (can_skip(ext, s)) a = log_add(a, alpha(t - 1, s - 2));
      alpha(t, s) = a == kNegInf ? kNegInf : a + logp(t, ext[s]);
    }
  }
  return alpha;
}

double total_logprob(const Matrix& alpha) {
  const int T = static_cast<int>(alpha.rows());
  const int S = static_cast<int>(alpha.cols());
  return S > 1 ? log_add(alpha(T - 1, S - 1), alpha(T - 1, S - 2)) : alpha(T - 1, S - 1);
}

}  // namespace

CharVocab::CharVocab(std::string chars) : chars_(std::move(chars)) {
  for (std::size_t i = 0; i < chars_.size(); ++i) {
    if (chars_.find(chars_[i]) != i) throw Error("char vocab: duplicate character");
  }
}

CharVocab CharVocab::synthetic(int num_phones) {
  std::string chars = " ";
  for (int p = 0; p < num_phones; ++p) chars.push_back(static_cast<char>('a' + p));
  return CharVocab(chars);
}

int CharVocab::id(char c) const {
  const auto pos = chars_.find(c);
  if (pos == std::string::npos) throw Error(std::string("char vocab: character '") + c + "' not in vocabulary");
  return static_cast<int>(pos) + 1;
}

char CharVocab::symbol(int id) const {
  if (id < 1 || id > num_chars()) throw Error("char vocab: id " + std::to_string(id) + " out of range");
  return chars_[id - 1];
}

std::vector<int> CharVocab::encode(std::string_view text) const {
  std::vector<int> out;
  out.reserve(text.size());
  for (char c : text) out.push_back(id(c));
  return out;
}

std::string CharVocab::decode(const std::vector<int>& ids) const {
  std::string out;
  for (int i : ids) out.push_back(symbol(i));
  return out;
}

Matrix log_softmax(const Matrix& logits) {
  Matrix out(logits.rows(), logits.cols());
  for (Eigen::Index t = 0; t < logits.rows(); ++t) {
    const double m = logits.row(t).maxCoeff();
    const double lse = m + std::log((logits.row(t).array() - m).exp().sum());
    out.row(t) = logits.row(t).array() - lse;
  }
  return out;
}

double ctc_loss(const Matrix& logp, const std::vector<int>& target) {
  if (logp.rows() == 0) throw Error("ctc: empty log-probability matrix");
  check_target(logp, target);
  const double lp = total_logprob(forward(logp, extend(target)));
  if (lp == kNegInf) throw Error("ctc: target has zero probability under logp");
  return -lp;
}

CtcResult ctc_grad(const Matrix& logp, const std::vector<int>& target) {
  if (logp.rows() == 0) throw Error("ctc: empty log-probability matrix");
  check_target(logp, target);
  const auto ext = extend(target);
  const int T = static_cast<int>(logp.rows());
  const int S = static_cast<int>(ext.size());
  const Matrix alpha = forward(logp, ext);
  const double lp = total_logprob(alpha);
  if (lp == kNegInf) throw Error("ctc: target has zero probability under logp");

  // beta(t, s): log prob of emitting the suffix from (t, s), including frame t.
  Matrix beta = Matrix::Constant(T, S, kNegInf);
  beta(T - 1, S - 1) = logp(T - 1, ext[S - 1]);
  if (S > 1) beta(T - 1, S - 2) = logp(T - 1, ext[S - 2]);
  for (int t = T - 2; t >= 0; --t) {
    for (int s = 0; s < S; ++s) {
      double b = beta(t + 1, s);
      if (s + 1 < S) b = log_add(b, beta(t + 1, s + 1));
      if (s + 2 < S && can_skip(ext, s + 2)) b = log_add(b, beta(t + 1, s + 2));
      beta(t, s) = b == kNegInf ? kNegInf : b + logp(t, ext[s]);
    }
  }

  CtcResult r;
  r.loss = -lp;
  r.grad = Matrix::Zero(logp.rows(), logp.cols());
  Matrix occ = Matrix::Constant(logp.rows(), logp.cols(), kNegInf);
  for (int t = 0; t < T; ++t) {
    for (int s = 0; s < S; ++s) {
      // alpha and beta both include frame t's emission.
      const double ab = alpha(t, s) + beta(t, s) - logp(t, ext[s]);
      if (ab != kNegInf) occ(t, ext[s]) = log_add(occ(t, ext[s]), ab);
    }
  }
  for (int t = 0; t < T; ++t) {
    for (Eigen::Index k = 0; k < logp.cols(); ++k) {
      if (occ(t, k) != kNegInf) r.grad(t, k) = -std::exp(occ(t, k) - lp);
    }
  }
  return r;
}

Matrix log_softmax_backward(const Matrix& logp, const Matrix& grad_logp) {
  const Matrix probs = logp.array().exp().matrix();
  Matrix out = grad_logp;
  for (Eigen::Index t = 0; t < logp.rows(); ++t) out.row(t) -= probs.row(t) * grad_logp.row(t).sum();
  return out;
}

std::vector<int> greedy_decode(const Matrix& logp) {
  std::vector<int> out;
  int prev = -1;
  for (Eigen::Index t = 0; t < logp.rows(); ++t) {
    Eigen::Index best;
    logp.row(t).maxCoeff(&best);
    const int k = static_cast<int>(best);
    if (k != prev && k != kBlank) out.push_back(k);
    prev = k;
  }
  return out;
}

int edit_distance(const std::vector<int>& a, const std::vector<int>& b) {
  std::vector<int> row(b.size() + 1);
  for (std::size_t j = 0; j <= b.size(); ++j) row[j] = static_cast<int>(j);
  for (std::size_t i = 1; i <= a.size(); ++i) {
    int diag = row[0];
    row[0] = static_cast<int>(i);
    for (std::size_t j = 1; j <= b.size(); ++j) {
      const int up = row[j];
      row[j] = std::min({row[j] + 1, row[j - 1] + 1, diag + (a[i - 1] == b[j - 1] ? 0 : 1)});
      diag = up;
    }
  }
  return row[b.size()];
}

}  // namespace hubert_ap
