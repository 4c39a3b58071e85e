#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include "hubert_ap/config.hpp"
#include "hubert_ap/mfcc.hpp"
#include "hubert_ap/wav.hpp"

namespace hubert_ap {

struct PipelineResult {
  std::string report_json;
  std::string report_text;
};

/// Runs synth -> features -> kmeans -> pieces -> evaluation -> pretrain ->
/// finetune -> decode (-> iteration 2) and writes every artifact plus
/// report.json / report.txt under config.out_dir. Reports carry no timestamps,
/// so a fixed seed reproduces them byte for byte. A failing stage aborts with
/// an Error prefixed by the stage name. Progress lines go to `log` if given.
PipelineResult run_pipeline(const PipelineConfig& config, std::ostream* log = nullptr);

/// MFCC features rounded through float32, i.e. exactly what a saved feature
/// file reloads to.
FeatureMatrix features_as_stored(const AudioBuffer& audio, const MfccConfig& config, const std::string& utt_id);

/// Word error counts: edit distance over whitespace-separated words.
struct ErrorCounts {
  long long edits = 0;
  long long reference = 0;
  double rate() const { return reference == 0 ? 0.0 : static_cast<double>(edits) / static_cast<double>(reference); }
};
ErrorCounts word_errors(const std::string& hypothesis, const std::string& reference);
ErrorCounts char_errors(const std::string& hypothesis, const std::string& reference);

}  // namespace hubert_ap
