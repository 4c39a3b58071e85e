#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "hubert_ap/evaluation.hpp"
#include "hubert_ap/wav.hpp"

namespace hubert_ap {

/// Desk-scale stand-in for a force-aligned speech corpus. Pseudo-phones are
/// fixed mixtures of gliding sinusoids plus resonator-filtered noise; words
/// are drawn from a random lexicon and separated by low-level "sil".
struct SynthConfig {
  int num_phones = 12;
  int min_phone_frames = 4;
  int max_phone_frames = 12;
  int min_utt_phones = 8;
  int max_utt_phones = 20;
  int num_utterances = 200;
  int lexicon_size = 96;
  int max_word_phones = 4;
  int min_sil_frames = 2;
  int max_sil_frames = 4;
  double noise_level = 0.003; // white noise floor added everywhere

  void validate() const;
};

inline constexpr const char* kSilencePhone = "sil";

struct SynthUtterance {
  std::string utt_id;
  AudioBuffer audio;
  AlignmentTier alignment;
  std::string transcript;
};

struct SynthCorpus {
  std::vector<std::string> phones;       // pseudo-phone names, index = phone id
  std::vector<std::string> lexicon;      // words spelled in transcript characters
  std::vector<SynthUtterance> utterances;
};

/// Transcript character of pseudo-phone `p`: 'a' + p.
char phone_char(int p);

/// Deterministic given (config, seed).
SynthCorpus synth_corpus(const SynthConfig& config, std::uint64_t seed);

/// Writes wav/<utt>.wav, align.tsv, text.tsv and manifest.tsv under `dir`.
/// Manifest paths are relative to `dir`.
void write_synth_corpus(const std::filesystem::path& dir, const SynthCorpus& corpus);

}  // namespace hubert_ap
