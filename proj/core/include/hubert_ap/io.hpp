#pragma once

#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "hubert_ap/mfcc.hpp"

namespace hubert_ap {

/// A per-utterance sequence of integer ids, one per frame. Raw k-means codes
/// and frame-level piece labels share this representation and text format.
struct IdSequence {
  std::string utt_id;
  std::vector<int> ids;

  bool operator==(const IdSequence&) const = default;
};

using CodeSequence = IdSequence;
using FrameLabelSequence = IdSequence;

/// Line format: `utt_id<TAB>id id id ...`.
void write_id_sequences(std::ostream& out, const std::vector<IdSequence>& seqs);
void write_id_sequences(const std::filesystem::path& path, const std::vector<IdSequence>& seqs);
std::vector<IdSequence> read_id_sequences(std::istream& in);
std::vector<IdSequence> read_id_sequences(const std::filesystem::path& path);

/// Binary feature matrix: "HAPF" magic, uint32 T, uint32 D (little-endian),
/// then T*D row-major float32 values.
void save_features(const std::filesystem::path& path, const FeatureMatrix& feats);
FeatureMatrix load_features(const std::filesystem::path& path);

/// Writes a whole file atomically enough for our purposes (truncate + write).
void write_text_file(const std::filesystem::path& path, const std::string& text);
std::string read_text_file(const std::filesystem::path& path);

}  // namespace hubert_ap
