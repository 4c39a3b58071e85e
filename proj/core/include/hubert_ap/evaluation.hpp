#pragma once

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "hubert_ap/io.hpp"

namespace hubert_ap {

struct PhoneInterval {
  std::string phone;
  int start = 0;
  int end = 0;  // exclusive

  bool operator==(const PhoneInterval&) const = default;
};

/// Golden phone intervals of one utterance, tiling [0, T).
struct AlignmentTier {
  std::string utt_id;
  std::vector<PhoneInterval> intervals;

  int num_frames() const { return intervals.empty() ? 0 : intervals.back().end; }
  /// Interior interval starts.
  std::vector<int> boundaries() const;
  /// Throws unless intervals tile [0, T) contiguously with non-empty labels.
  void validate() const;

  bool operator==(const AlignmentTier&) const = default;
};

/// TSV rows `utt_id<TAB>phone<TAB>start_frame<TAB>end_frame`, grouped per
/// utterance in file order.
void write_alignments(std::ostream& out, const std::vector<AlignmentTier>& tiers);
void write_alignments(const std::filesystem::path& path, const std::vector<AlignmentTier>& tiers);
std::vector<AlignmentTier> read_alignments(std::istream& in);
std::vector<AlignmentTier> read_alignments(const std::filesystem::path& path);

/// Indices t in [1, T) with labels[t] != labels[t-1].
std::vector<int> label_boundaries(const std::vector<int>& labels);

struct BoundaryCounts {
  long long matched = 0;
  long long predicted = 0;
  long long golden = 0;

  BoundaryCounts& operator+=(const BoundaryCounts& o) {
    matched += o.matched;
    predicted += o.predicted;
    golden += o.golden;
    return *this;
  }
};

struct BoundaryMetrics {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  int tolerance_frames = 0;
  BoundaryCounts counts;
};

/// One-to-one matching in ascending order: each predicted boundary takes the
/// earliest unmatched golden boundary within +-tolerance. Inputs must be
/// strictly ascending.
BoundaryCounts match_boundaries(const std::vector<int>& predicted, const std::vector<int>& golden,
                                int tolerance_frames);

BoundaryMetrics metrics_from_counts(const BoundaryCounts& counts, int tolerance_frames);

BoundaryMetrics boundary_prf(const std::vector<int>& predicted, const std::vector<int>& golden,
                             int tolerance_frames);

/// Pools match/predicted/golden counts over utterances (matched by utt_id)
/// before dividing.
BoundaryMetrics corpus_boundary_prf(const std::vector<IdSequence>& labels,
                                    const std::vector<AlignmentTier>& alignments, int tolerance_frames);

struct PhoneSharing {
  std::string phone;
  int occurrences = 0;
  /// Mean fraction of an occurrence's frames carrying a shared code; empty
  /// when the phone occurs fewer than twice.
  std::optional<double> percentage;
};

struct SharingReport {
  /// Defined phones sorted by ascending percentage (then name), undefined last.
  std::vector<PhoneSharing> phones;
  /// Mean percentage over defined phones; empty when none is defined.
  std::optional<double> mean_percentage;
};

/// A code type is shared for a phone when it appears in at least two distinct
/// occurrences of that phone.
bool is_shared_code(int occurrences_containing_code);

SharingReport sharing_percentage(const std::vector<CodeSequence>& corpus,
                                 const std::vector<AlignmentTier>& alignments);

std::string metrics_to_json(const BoundaryMetrics& m);
std::string sharing_to_json(const SharingReport& r);
std::string sharing_to_table(const SharingReport& r);

}  // namespace hubert_ap
