#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "hubert_ap/io.hpp"

namespace hubert_ap {

struct ApConfig {
  int vocab_size = 1000;
  int base_alphabet = 100;  // codebook size k
  int min_pair_freq = 2;
  std::uint64_t seed = 0;  // reserved; BPE training is seed-free
};

struct Merge {
  int left = 0;
  int right = 0;

  bool operator==(const Merge&) const = default;
};

/// Acoustic-piece inventory. Piece ids [0, base_alphabet) are the raw codes;
/// merge r creates piece base_alphabet + r.
class PieceVocab {
 public:
  PieceVocab() = default;
  /// Validates that every merge only references already existing pieces and
  /// that all expansions are distinct.
  PieceVocab(int base_alphabet, std::vector<Merge> merges);

  int base_alphabet() const { return base_alphabet_; }
  int size() const { return base_alphabet_ + static_cast<int>(merges_.size()); }
  const std::vector<Merge>& merges() const { return merges_; }

  /// Code sequence a piece stands for.
  const std::vector<int>& expansion(int piece) const { return expansions_.at(piece); }
  int piece_length(int piece) const { return static_cast<int>(expansions_.at(piece).size()); }

  /// Rank of the merge producing (left, right), or -1.
  int merge_rank(int left, int right) const;

  bool operator==(const PieceVocab& o) const {
    return base_alphabet_ == o.base_alphabet_ && merges_ == o.merges_;
  }

 private:
  int base_alphabet_ = 0;
  std::vector<Merge> merges_;
  std::vector<std::vector<int>> expansions_;
  std::vector<std::pair<std::uint64_t, int>> rank_index_;  // sorted (pair key, rank)
};

struct Span {
  int piece = 0;
  int start = 0;
  int end = 0;  // exclusive

  bool operator==(const Span&) const = default;
};

struct Segmentation {
  std::string utt_id;
  std::vector<Span> spans;
};

struct BpeTrace {
  /// Pair frequency at the time each merge was selected.
  std::vector<long long> merge_counts;
};

/// Byte-pair-style merging over code streams. Adjacent pairs are counted with
/// overlap inside each utterance (never across), the most frequent pair is
/// merged (ties: smallest (left, right)), and each merge is applied greedily
/// left to right. Stops at vocab_size or when the best count < min_pair_freq.
PieceVocab train_bpe(const std::vector<CodeSequence>& corpus, const ApConfig& config,
                     BpeTrace* trace = nullptr);

/// Applies merges in rank order, each greedily left to right.
Segmentation encode(const PieceVocab& vocab, const CodeSequence& codes);

/// Concatenated expansions of all spans.
std::vector<int> expand(const PieceVocab& vocab, const Segmentation& seg);

/// Each frame receives the id of the piece covering it.
FrameLabelSequence remap_frames(const Segmentation& seg);

/// Convenience: remap_frames(encode(vocab, codes)).
FrameLabelSequence piece_labels(const PieceVocab& vocab, const CodeSequence& codes);

/// JSON: {"version":1,"base_alphabet":k,"merges":[[l,r],...]}.
std::string vocab_to_json(const PieceVocab& vocab);
PieceVocab vocab_from_json(const std::string& text);
void save_vocab(const std::filesystem::path& path, const PieceVocab& vocab);
PieceVocab load_vocab(const std::filesystem::path& path);

}  // namespace hubert_ap
