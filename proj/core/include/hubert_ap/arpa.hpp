#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <unordered_map>
#include <vector>

namespace hubert_ap {

/// Backoff n-gram model read from ARPA text. Scores are log10.
class NGramLM {
 public:
  static constexpr const char* kBos = "<s>";
  static constexpr const char* kEos = "</s>";
  static constexpr const char* kUnk = "<unk>";
  /// Score of an unknown word when the model has no <unk> entry.
  static constexpr double kMissingUnkLog10 = -100.0;

  int order() const { return order_; }
  /// Word id, mapping out-of-vocabulary words to <unk> (or -1 when absent).
  int word_id(const std::string& word) const;
  bool has_word(const std::string& word) const { return vocab_.count(word) > 0; }
  std::size_t num_ngrams(int n) const { return tables_.at(n - 1).size(); }

  /// log10 P(word | context) with the standard backoff chain; only the last
  /// order-1 context words are used.
  double conditional(const std::vector<int>& context, int word) const;

  /// Stored (log10 prob, log10 backoff) of an explicit n-gram, if listed.
  struct Entry {
    double logprob = 0.0;
    double backoff = 0.0;
  };
  const Entry* find(const std::vector<int>& ngram) const;

  friend NGramLM arpa_load(const std::string& text);

 private:
  int order_ = 0;
  std::unordered_map<std::string, int> vocab_;
  std::vector<std::map<std::vector<int>, Entry>> tables_;  // index n-1
};

/// Parses ARPA text; malformed input raises Error naming the line number.
NGramLM arpa_load(const std::string& text);
NGramLM arpa_load_file(const std::filesystem::path& path);

/// log10 P(words) starting from <s>, optionally scoring </s>. Empty input
/// without </s> scores 0.
double lm_logprob(const NGramLM& lm, const std::vector<std::string>& words, bool add_eos);

/// Splits on spaces, dropping empty tokens.
std::vector<std::string> split_words(const std::string& text);

/// Bigram ARPA text with absolute discounting estimated from sentences
/// (space-separated words). Unigrams are add-one smoothed over the observed
/// vocabulary plus </s> and <unk>.
std::string estimate_bigram_arpa(const std::vector<std::string>& sentences, double discount = 0.5);

}  // namespace hubert_ap
