#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "hubert_ap/acoustic_piece.hpp"
#include "hubert_ap/beam_search.hpp"
#include "hubert_ap/kmeans.hpp"
#include "hubert_ap/mfcc.hpp"
#include "hubert_ap/probe.hpp"
#include "hubert_ap/probe_train.hpp"
#include "hubert_ap/synth.hpp"

namespace hubert_ap {

/// Every stage's settings for one end-to-end run. Stage seeds are not stored
/// here: they are derived from `seed` with derive_seed(seed, "<stage>").
struct PipelineConfig {
  std::uint64_t seed = 1;
  std::filesystem::path out_dir = "hubert_ap_out";

  SynthConfig synth;
  MfccConfig mfcc;
  KMeansConfig kmeans;
  ApConfig ap;
  ProbeConfig probe;
  TrainConfig pretrain;
  TrainConfig finetune;
  int finetune_utterances = 50;

  int eval_tolerance = 1;

  std::string decode_preset = "100h";
  int beam_width = 16;
  LengthUnit length_unit = LengthUnit::kWords;

  bool run_pretrain = true;
  bool run_finetune = true;
  bool run_decode = true;
  bool run_iteration2 = true;
  int iteration2_layer = 1;
  int iteration2_k = 100;
  int iteration2_max_iters = 20;

  PipelineConfig();

  /// Throws Error describing the first inconsistency found.
  void validate() const;
};

/// Applies `section.key=value`; unknown keys and malformed values raise Error.
void apply_config_override(PipelineConfig& config, const std::string& assignment);

/// Parses INI-style `[section]` + `key = value` text on top of the defaults.
PipelineConfig parse_pipeline_config(const std::string& text);
PipelineConfig load_pipeline_config(const std::filesystem::path& path);

/// Effective configuration in the same INI format (round-trips through
/// parse_pipeline_config).
std::string pipeline_config_to_ini(const PipelineConfig& config);

}  // namespace hubert_ap
