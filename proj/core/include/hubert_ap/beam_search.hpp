#pragma once

#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "hubert_ap/arpa.hpp"
#include "hubert_ap/ctc.hpp"

namespace hubert_ap {

/// What |Y| counts in the fused objective.
enum class LengthUnit { kWords, kChars };

/// (w1, w2) of  ln P_ctc(Y|X) + w1 log10 P_lm(Y) + w2 |Y|.
struct FusionWeights {
  double lm_weight = 0.0;
  double word_score = 0.0;
};

/// Named presets tuned for the 1h / 10h / 100h labeled-data setups.
std::optional<FusionWeights> fusion_preset(std::string_view name);

struct BeamSearchOptions {
  int beam_width = 32;
  FusionWeights weights;
  LengthUnit length_unit = LengthUnit::kWords;
  bool add_eos = true;
};

struct FusedScore {
  double ctc_logprob = 0.0;  // natural log
  double lm_log10 = 0.0;
  int length = 0;
  double fused = 0.0;
};

/// Fused objective of a complete text. The LM term stays in log10, the scale
/// the preset weights were tuned on; the CTC term is a natural log.
FusedScore fused_score(double ctc_logprob, const std::string& text, const NGramLM* lm,
                       const BeamSearchOptions& options);

struct DecodeResult {
  std::string text;
  FusedScore score;
};

/// Character-level CTC prefix beam search. LM and length terms are charged as
/// each word completes (space emitted, or end of input); the final choice is
/// the best complete fused score among surviving prefixes. `lm` may be null
/// (LM term zero).
DecodeResult beam_search_fused(const Matrix& logp, const NGramLM* lm, const CharVocab& vocab,
                               const BeamSearchOptions& options);

}  // namespace hubert_ap
