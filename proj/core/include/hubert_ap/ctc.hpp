#pragma once

#include <string>
#include <string_view>
#include <vector>

#include "hubert_ap/common.hpp"

namespace hubert_ap {

inline constexpr int kBlank = 0;

/// Character inventory for CTC: id 0 is the blank, ids 1..C map to chars.
class CharVocab {
 public:
  explicit CharVocab(std::string chars);

  /// Space plus the lowercase letters of the synthetic corpus phones.
  static CharVocab synthetic(int num_phones);

  int size() const { return static_cast<int>(chars_.size()) + 1; }  // including blank
  int num_chars() const { return static_cast<int>(chars_.size()); }
  const std::string& chars() const { return chars_; }
  int id(char c) const;  // throws for characters outside the vocabulary
  char symbol(int id) const;
  std::vector<int> encode(std::string_view text) const;
  std::string decode(const std::vector<int>& ids) const;

 private:
  std::string chars_;
};

/// Row-wise log-softmax.
Matrix log_softmax(const Matrix& logits);

struct CtcResult {
  double loss = 0.0;  // -log P(target | logp)
  Matrix grad;        // d loss / d logp, same shape as logp
};

/// Negative log-likelihood via the log-domain forward recursion over the
/// blank-interleaved target. logp is T x (C+1) with the blank in column 0.
double ctc_loss(const Matrix& logp, const std::vector<int>& target);

/// Forward-backward: the loss and its gradient with respect to every entry
/// of logp (treated as free variables), i.e. minus the state occupancies.
CtcResult ctc_grad(const Matrix& logp, const std::vector<int>& target);

/// Chains a gradient with respect to log-probabilities back through the
/// log-softmax to the logits.
Matrix log_softmax_backward(const Matrix& logp, const Matrix& grad_logp);

/// Per-frame argmax, collapse repeats, drop blanks.
std::vector<int> greedy_decode(const Matrix& logp);

/// Levenshtein distance between two id sequences.
int edit_distance(const std::vector<int>& a, const std::vector<int>& b);

}  // namespace hubert_ap
