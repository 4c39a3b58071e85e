#include "hubert_ap/acoustic_piece.hpp"

#include <algorithm>
#include <map>
#include <set>
#include <unordered_map>

#include "json.hpp"

namespace hubert_ap {
namespace {

constexpr int kVocabVersion = 1;

std::uint64_t pair_key(int left, int right) {
  return (static_cast<std::uint64_t>(static_cast<std::uint32_t>(left)) << 32) |
         static_cast<std::uint32_t>(right);
}

void check_codes(const CodeSequence& seq, int alphabet) {
  for (std::size_t i = 0; i < seq.ids.size(); ++i) {
    const int c = seq.ids[i];
    if (c < 0 || c >= alphabet) {
      throw Error("acoustic_piece: code " + std::to_string(c) + " at frame " + std::to_string(i) + " of '" +
                  seq.utt_id + "' outside base alphabet [0, " + std::to_string(alphabet) + ")");
    }
  }
}

using PairCounts = std::unordered_map<std::uint64_t, long long>;

void add_pairs(const std::vector<int>& syms, PairCounts& counts, long long sign) {
  for (std::size_t i = 1; i < syms.size(); ++i) {
    auto& c = counts[pair_key(syms[i - 1], syms[i])];
    c += sign;
  }
}

bool contains_pair(const std::vector<int>& syms, int left, int right) {
  for (std::size_t i = 1; i < syms.size(); ++i) {
    if (syms[i - 1] == left && syms[i] == right) return true;
  }
  return false;
}

/// Greedy left-to-right replacement of (left, right) by merged.
void apply_merge(std::vector<int>& syms, int left, int right, int merged) {
  std::size_t out = 0;
  for (std::size_t i = 0; i < syms.size();) {
    if (i + 1 < syms.size() && syms[i] == left && syms[i + 1] == right) {
      syms[out++] = merged;
      i += 2;
    } else {
      syms[out++] = syms[i++];
    }
  }
  syms.resize(out);
}

}  // namespace

PieceVocab::PieceVocab(int base_alphabet, std::vector<Merge> merges)
    : base_alphabet_(base_alphabet), merges_(std::move(merges)) {
  if (base_alphabet_ < 1) throw Error("acoustic_piece: base_alphabet must be >= 1");
  expansions_.reserve(base_alphabet_ + merges_.size());
  for (int c = 0; c < base_alphabet_; ++c) expansions_.push_back({c});
  std::set<std::vector<int>> seen;
  for (std::size_t r = 0; r < merges_.size(); ++r) {
    const int existing = base_alphabet_ + static_cast<int>(r);
    const auto [l, rt] = merges_[r];
    if (l < 0 || rt < 0 || l >= existing || rt >= existing) {
      throw Error("acoustic_piece: merge " + std::to_string(r) + " (" + std::to_string(l) + "," +
                  std::to_string(rt) + ") references a piece that does not exist yet");
    }
    std::vector<int> e = expansions_[l];
    e.insert(e.end(), expansions_[rt].begin(), expansions_[rt].end());
    if (!seen.insert(e).second) {
      throw Error("acoustic_piece: merge " + std::to_string(r) + " duplicates an existing expansion");
    }
    expansions_.push_back(std::move(e));
    rank_index_.emplace_back(pair_key(l, rt), static_cast<int>(r));
  }
  std::sort(rank_index_.begin(), rank_index_.end());
  for (std::size_t i = 1; i < rank_index_.size(); ++i) {
    if (rank_index_[i].first == rank_index_[i - 1].first) throw Error("acoustic_piece: duplicate merge pair");
  }
}

int PieceVocab::merge_rank(int left, int right) const {
  const auto key = pair_key(left, right);
  const auto it = std::lower_bound(rank_index_.begin(), rank_index_.end(), std::make_pair(key, -1));
  return it != rank_index_.end() && it->first == key ? it->second : -1;
}

PieceVocab train_bpe(const std::vector<CodeSequence>& corpus, const ApConfig& config, BpeTrace* trace) {
  if (corpus.empty()) throw Error("acoustic_piece: empty training corpus");
  if (config.base_alphabet < 1) throw Error("acoustic_piece: base_alphabet must be >= 1");
  if (config.vocab_size < config.base_alphabet) {
    throw Error("acoustic_piece: vocab_size " + std::to_string(config.vocab_size) + " < base_alphabet " +
                std::to_string(config.base_alphabet));
  }
  std::vector<std::vector<int>> seqs;
  seqs.reserve(corpus.size());
  for (const auto& s : corpus) {
    check_codes(s, config.base_alphabet);
    seqs.push_back(s.ids);
  }

  PairCounts counts;
  for (const auto& s : seqs) add_pairs(s, counts, +1);

  std::vector<Merge> merges;
  std::vector<std::vector<int>> expansions;
  for (int c = 0; c < config.base_alphabet; ++c) expansions.push_back({c});
  std::set<std::vector<int>> seen(expansions.begin(), expansions.end());
  std::set<std::uint64_t> blocked;

  while (config.base_alphabet + static_cast<int>(merges.size()) < config.vocab_size) {
    std::uint64_t best_key = 0;
    long long best = 0;
    for (const auto& [key, c] : counts) {
      if (c <= 0 || blocked.count(key)) continue;
      if (c > best || (c == best && key < best_key)) {
        best = c;
        best_key = key;
      }
    }
    if (best < config.min_pair_freq || best == 0) break;
    const int left = static_cast<int>(best_key >> 32);
    const int right = static_cast<int>(best_key & 0xFFFFFFFFULL);
    std::vector<int> e = expansions[left];
    e.insert(e.end(), expansions[right].begin(), expansions[right].end());
    if (seen.count(e)) {
      // Another merge path already produced this code string; skip the pair.
      blocked.insert(best_key);
      continue;
    }
    const int merged = config.base_alphabet + static_cast<int>(merges.size());
    for (auto& s : seqs) {
      if (!contains_pair(s, left, right)) continue;
      add_pairs(s, counts, -1);
      apply_merge(s, left, right, merged);
      add_pairs(s, counts, +1);
    }
    std::erase_if(counts, [](const auto& kv) { return kv.second == 0; });
    seen.insert(e);
    expansions.push_back(std::move(e));
    merges.push_back({left, right});
    if (trace) trace->merge_counts.push_back(best);
  }
  return PieceVocab(config.base_alphabet, std::move(merges));
}

Segmentation encode(const PieceVocab& vocab, const CodeSequence& codes) {
  check_codes(codes, vocab.base_alphabet());
  std::vector<int> syms = codes.ids;
  // Repeatedly apply the lowest-rank merge present. A merge can only create
  // pairs whose rank is higher than its own, so this equals applying every
  // merge in rank order.
  while (syms.size() > 1) {
    int best_rank = -1;
    for (std::size_t i = 1; i < syms.size(); ++i) {
      const int r = vocab.merge_rank(syms[i - 1], syms[i]);
      if (r >= 0 && (best_rank < 0 || r < best_rank)) best_rank = r;
    }
    if (best_rank < 0) break;
    const Merge& m = vocab.merges()[best_rank];
    apply_merge(syms, m.left, m.right, vocab.base_alphabet() + best_rank);
  }
  Segmentation seg;
  seg.utt_id = codes.utt_id;
  seg.spans.reserve(syms.size());
  int at = 0;
  for (int p : syms) {
    const int len = vocab.piece_length(p);
    seg.spans.push_back({p, at, at + len});
    at += len;
  }
  return seg;
}

std::vector<int> expand(const PieceVocab& vocab, const Segmentation& seg) {
  std::vector<int> out;
  for (const auto& s : seg.spans) {
    const auto& e = vocab.expansion(s.piece);
    out.insert(out.end(), e.begin(), e.end());
  }
  return out;
}

FrameLabelSequence remap_frames(const Segmentation& seg) {
  FrameLabelSequence out;
  out.utt_id = seg.utt_id;
  int expect = 0;
  for (const auto& s : seg.spans) {
    if (s.start != expect || s.end <= s.start) {
      throw Error("acoustic_piece: segmentation of '" + seg.utt_id + "' does not tile frames at " +
                  std::to_string(expect));
    }
    out.ids.insert(out.ids.end(), static_cast<std::size_t>(s.end - s.start), s.piece);
    expect = s.end;
  }
  return out;
}

FrameLabelSequence piece_labels(const PieceVocab& vocab, const CodeSequence& codes) {
  return remap_frames(encode(vocab, codes));
}

std::string vocab_to_json(const PieceVocab& vocab) {
  nlohmann::json j;
  j["version"] = kVocabVersion;
  j["base_alphabet"] = vocab.base_alphabet();
  j["size"] = vocab.size();
  auto merges = nlohmann::json::array();
  for (const auto& m : vocab.merges()) merges.push_back({m.left, m.right});
  j["merges"] = std::move(merges);
  return j.dump() + "\n";
}

PieceVocab vocab_from_json(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw Error(std::string("acoustic_piece: vocab is not valid JSON: ") + e.what());
  }
  try {
    const int version = j.at("version").get<int>();
    if (version != kVocabVersion) throw Error("acoustic_piece: unknown vocab version " + std::to_string(version));
    const int base = j.at("base_alphabet").get<int>();
    std::vector<Merge> merges;
    for (const auto& m : j.at("merges")) {
      if (!m.is_array() || m.size() != 2) throw Error("acoustic_piece: merge entries must be [left, right]");
      merges.push_back({m[0].get<int>(), m[1].get<int>()});
    }
    return PieceVocab(base, std::move(merges));
  } catch (const nlohmann::json::exception& e) {
    throw Error(std::string("acoustic_piece: malformed vocab: ") + e.what());
  }
}

void save_vocab(const std::filesystem::path& path, const PieceVocab& vocab) {
  write_text_file(path, vocab_to_json(vocab));
}

PieceVocab load_vocab(const std::filesystem::path& path) {
  return vocab_from_json(read_text_file(path));
}

}  // namespace hubert_ap
