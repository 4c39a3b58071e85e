#include "hubert_ap/beam_search.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>

namespace hubert_ap {
namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

double log_add(double a, double b) {
  if (a == kNegInf) return b;
  if (b == kNegInf) return a;
  const double m = std::max(a, b);
  return m + std::log1p(std::exp(-std::abs(a - b)));
}

int text_length(const std::string& text, LengthUnit unit) {
  if (unit == LengthUnit::kWords) return static_cast<int>(split_words(text).size());
  return static_cast<int>(std::count_if(text.begin(), text.end(), [](char c) { return c != ' '; }));
}

struct Prefix {
  double p_blank = kNegInf;
  double p_nonblank = kNegInf;
  // Charges for completed words only.
  double lm_log10 = 0.0;
  int length = 0;
  std::vector<int> lm_context;
  std::string current_word;

  double ctc() const { return log_add(p_blank, p_nonblank); }
};

}  // namespace

std::optional<FusionWeights> fusion_preset(std::string_view name) {
  if (name == "1h") return FusionWeights{3.09, -2.33};
  if (name == "10h") return FusionWeights{2.12, -0.90};
  if (name == "100h") return FusionWeights{2.15, -0.52};
  return std::nullopt;
}

FusedScore fused_score(double ctc_logprob, const std::string& text, const NGramLM* lm,
                       const BeamSearchOptions& options) {
  FusedScore s;
  s.ctc_logprob = ctc_logprob;
  s.lm_log10 = lm ? lm_logprob(*lm, split_words(text), options.add_eos) : 0.0;
  s.length = text_length(text, options.length_unit);
  s.fused = ctc_logprob + options.weights.lm_weight * s.lm_log10 + options.weights.word_score * s.length;
  return s;
}

DecodeResult beam_search_fused(const Matrix& logp, const NGramLM* lm, const CharVocab& vocab,
                               const BeamSearchOptions& options) {
  if (options.beam_width < 1) throw Error("beam search: beam_width must be >= 1");
  if (logp.cols() != vocab.size()) {
    throw Error("beam search: logp has " + std::to_string(logp.cols()) + " classes, vocabulary has " +
                std::to_string(vocab.size()));
  }
  const double w1 = options.weights.lm_weight;
  const double w2 = options.weights.word_score;
  const int space = vocab.chars().find(' ') == std::string::npos ? -1 : vocab.id(' ');
  const std::vector<int> bos_context = lm ? std::vector<int>{lm->word_id(NGramLM::kBos)} : std::vector<int>{};

  auto partial_score = [&](const Prefix& p) { return p.ctc() + w1 * p.lm_log10 + w2 * p.length; };

  // Extends `src`'s word bookkeeping by one character.
  auto extend_state = [&](const Prefix& src, int c, Prefix& dst) {
    dst.lm_log10 = src.lm_log10;
    dst.length = src.length;
    dst.lm_context = src.lm_context;
    dst.current_word = src.current_word;
    if (c == space) {
      if (!dst.current_word.empty()) {
        if (lm) {
          const int id = lm->word_id(dst.current_word);
          dst.lm_log10 += lm->conditional(dst.lm_context, id);
          dst.lm_context.push_back(id);
          if (static_cast<int>(dst.lm_context.size()) > lm->order()) dst.lm_context.erase(dst.lm_context.begin());
        }
        if (options.length_unit == LengthUnit::kWords) ++dst.length;
        dst.current_word.clear();
      }
    } else {
      dst.current_word.push_back(vocab.symbol(c));
      if (options.length_unit == LengthUnit::kChars) ++dst.length;
    }
  };

  std::map<std::string, Prefix> beam;
  {
    Prefix root;
    root.p_blank = 0.0;
    root.lm_context = bos_context;
    beam.emplace(std::string(), std::move(root));
  }
  const int classes = static_cast<int>(logp.cols());
  for (Eigen::Index t = 0; t < logp.rows(); ++t) {
    std::map<std::string, Prefix> next;
    for (const auto& [text, p] : beam) {
      const double total = p.ctc();
      // Blank keeps the prefix.
      if (logp(t, kBlank) != kNegInf) {
        auto [it, fresh] = next.try_emplace(text);
        if (fresh) it->second = Prefix{kNegInf, kNegInf, p.lm_log10, p.length, p.lm_context, p.current_word};
        it->second.p_blank = log_add(it->second.p_blank, total + logp(t, kBlank));
      }
      const int last = text.empty() ? -1 : vocab.id(text.back());
      for (int c = 1; c < classes; ++c) {
        const double lp = logp(t, c);
        if (lp == kNegInf) continue;
        if (c == last) {
          // Repeat without an intervening blank collapses onto the prefix.
          auto [it, fresh] = next.try_emplace(text);
          if (fresh) it->second = Prefix{kNegInf, kNegInf, p.lm_log10, p.length, p.lm_context, p.current_word};
          it->second.p_nonblank = log_add(it->second.p_nonblank, p.p_nonblank + lp);
        }
        const double from = c == last ? p.p_blank : total;
        if (from == kNegInf) continue;
        std::string ext = text;
        ext.push_back(vocab.symbol(c));
        auto [it, fresh] = next.try_emplace(ext);
        if (fresh) extend_state(p, c, it->second);
        it->second.p_nonblank = log_add(it->second.p_nonblank, from + lp);
      }
    }
    if (static_cast<int>(next.size()) > options.beam_width) {
      std::vector<std::pair<double, std::string>> ranked;
      ranked.reserve(next.size());
      for (const auto& [text, p] : next) ranked.emplace_back(partial_score(p), text);
      std::sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
        return a.first != b.first ? a.first > b.first : a.second < b.second;
      });
      std::map<std::string, Prefix> kept;
      for (int i = 0; i < options.beam_width; ++i) kept.insert(next.extract(ranked[i].second));
      next = std::move(kept);
    }
    beam = std::move(next);
  }

  DecodeResult best;
  best.score.fused = kNegInf;
  bool found = false;
  for (const auto& [text, p] : beam) {
    const double ctc = p.ctc();
    if (ctc == kNegInf) continue;
    const FusedScore s = fused_score(ctc, text, lm, options);
    if (!found || s.fused > best.score.fused) {
      best.text = text;
      best.score = s;
      found = true;
    }
  }
  if (!found) throw Error("beam search: no hypothesis with non-zero probability");
  return best;
}

}  // namespace hubert_ap
