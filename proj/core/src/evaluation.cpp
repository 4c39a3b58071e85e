#include "hubert_ap/evaluation.hpp"

#include <algorithm>
#include <fstream>
#include <iomanip>
#include <map>
#include <set>
#include <sstream>
#include <unordered_map>

#include "json.hpp"

namespace hubert_ap {

std::vector<int> AlignmentTier::boundaries() const {
  std::vector<int> out;
  for (std::size_t i = 1; i < intervals.size(); ++i) out.push_back(intervals[i].start);
  return out;
}

void AlignmentTier::validate() const {
  if (intervals.empty()) throw Error("alignment '" + utt_id + "' has no intervals");
  int expect = 0;
  for (const auto& iv : intervals) {
    if (iv.phone.empty()) throw Error("alignment '" + utt_id + "' has an empty phone label");
    if (iv.start != expect || iv.end <= iv.start) {
      throw Error("alignment '" + utt_id + "' does not tile frames at " + std::to_string(expect));
    }
    expect = iv.end;
  }
}

void write_alignments(std::ostream& out, const std::vector<AlignmentTier>& tiers) {
  for (const auto& t : tiers) {
    for (const auto& iv : t.intervals) {
      out << t.utt_id << '\t' << iv.phone << '\t' << iv.start << '\t' << iv.end << '\n';
    }
  }
}

void write_alignments(const std::filesystem::path& path, const std::vector<AlignmentTier>& tiers) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  write_alignments(out, tiers);
}

std::vector<AlignmentTier> read_alignments(std::istream& in) {
  std::vector<AlignmentTier> tiers;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::size_t pos = 0;
    while (true) {
      const auto tab = line.find('\t', pos);
      f.push_back(line.substr(pos, tab - pos));
      if (tab == std::string::npos) break;
      pos = tab + 1;
    }
    if (f.size() != 4) throw Error("alignment line " + std::to_string(lineno) + ": expected 4 tab-separated fields");
    PhoneInterval iv;
    iv.phone = f[1];
    try {
      std::size_t a = 0, b = 0;
      iv.start = std::stoi(f[2], &a);
      iv.end = std::stoi(f[3], &b);
      if (a != f[2].size() || b != f[3].size()) throw std::invalid_argument("trailing");
    } catch (const std::exception&) {
      throw Error("alignment line " + std::to_string(lineno) + ": bad frame index");
    }
    if (tiers.empty() || tiers.back().utt_id != f[0]) tiers.push_back({f[0], {}});
    tiers.back().intervals.push_back(std::move(iv));
  }
  std::set<std::string> ids;
  for (const auto& t : tiers) {
    if (!ids.insert(t.utt_id).second) throw Error("alignment for '" + t.utt_id + "' is not contiguous in the file");
    t.validate();
  }
  return tiers;
}

std::vector<AlignmentTier> read_alignments(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open " + path.string());
  try {
    return read_alignments(in);
  } catch (const Error& e) {
    throw Error(path.string() + ": " + e.what());
  }
}

std::vector<int> label_boundaries(const std::vector<int>& labels) {
  std::vector<int> out;
  for (std::size_t t = 1; t < labels.size(); ++t) {
    if (labels[t] != labels[t - 1]) out.push_back(static_cast<int>(t));
  }
  return out;
}

namespace {

void require_ascending(const std::vector<int>& v, const char* which) {
  for (std::size_t i = 1; i < v.size(); ++i) {
    if (v[i] <= v[i - 1]) throw Error(std::string("boundary_prf: ") + which + " boundaries not strictly ascending");
  }
}

}  // namespace

BoundaryCounts match_boundaries(const std::vector<int>& predicted, const std::vector<int>& golden,
                                int tolerance_frames) {
  require_ascending(predicted, "predicted");
  require_ascending(golden, "golden");
  if (tolerance_frames < 0) throw Error("boundary_prf: negative tolerance");
  BoundaryCounts c;
  c.predicted = static_cast<long long>(predicted.size());
  c.golden = static_cast<long long>(golden.size());
  std::size_t g = 0;
  for (int p : predicted) {
    while (g < golden.size() && golden[g] < p - tolerance_frames) ++g;
    if (g < golden.size() && golden[g] <= p + tolerance_frames) {
      ++c.matched;
      ++g;
    }
  }
  return c;
}

BoundaryMetrics metrics_from_counts(const BoundaryCounts& counts, int tolerance_frames) {
  BoundaryMetrics m;
  m.tolerance_frames = tolerance_frames;
  m.counts = counts;
  m.precision = counts.predicted > 0 ? static_cast<double>(counts.matched) / counts.predicted : 0.0;
  m.recall = counts.golden > 0 ? static_cast<double>(counts.matched) / counts.golden : 0.0;
  m.f1 = m.precision + m.recall > 0 ? 2 * m.precision * m.recall / (m.precision + m.recall) : 0.0;
  return m;
}

BoundaryMetrics boundary_prf(const std::vector<int>& predicted, const std::vector<int>& golden,
                             int tolerance_frames) {
  return metrics_from_counts(match_boundaries(predicted, golden, tolerance_frames), tolerance_frames);
}

BoundaryMetrics corpus_boundary_prf(const std::vector<IdSequence>& labels,
                                    const std::vector<AlignmentTier>& alignments, int tolerance_frames) {
  std::unordered_map<std::string, const AlignmentTier*> by_id;
  for (const auto& a : alignments) by_id[a.utt_id] = &a;
  BoundaryCounts total;
  for (const auto& seq : labels) {
    const auto it = by_id.find(seq.utt_id);
    if (it == by_id.end()) throw Error("boundary_prf: no alignment for '" + seq.utt_id + "'");
    if (static_cast<int>(seq.ids.size()) != it->second->num_frames()) {
      throw Error("boundary_prf: '" + seq.utt_id + "' has " + std::to_string(seq.ids.size()) +
                  " labels but alignment covers " + std::to_string(it->second->num_frames()) + " frames");
    }
    total += match_boundaries(label_boundaries(seq.ids), it->second->boundaries(), tolerance_frames);
  }
  return metrics_from_counts(total, tolerance_frames);
}

bool is_shared_code(int occurrences_containing_code) { return occurrences_containing_code >= 2; }

SharingReport sharing_percentage(const std::vector<CodeSequence>& corpus,
                                 const std::vector<AlignmentTier>& alignments) {
  std::unordered_map<std::string, const CodeSequence*> by_id;
  for (const auto& c : corpus) by_id[c.utt_id] = &c;

  // Per phone: the code slice of every occurrence.
  std::map<std::string, std::vector<std::vector<int>>> occurrences;
  for (const auto& tier : alignments) {
    const auto it = by_id.find(tier.utt_id);
    if (it == by_id.end()) throw Error("sharing: no code sequence for '" + tier.utt_id + "'");
    const auto& codes = it->second->ids;
    for (const auto& iv : tier.intervals) {
      if (iv.start < 0 || iv.end > static_cast<int>(codes.size()) || iv.end <= iv.start) {
        throw Error("sharing: interval [" + std::to_string(iv.start) + "," + std::to_string(iv.end) + ") of '" +
                    tier.utt_id + "' exceeds its " + std::to_string(codes.size()) + " codes");
      }
      occurrences[iv.phone].emplace_back(codes.begin() + iv.start, codes.begin() + iv.end);
    }
  }

  SharingReport report;
  for (const auto& [phone, occ] : occurrences) {
    PhoneSharing ps;
    ps.phone = phone;
    ps.occurrences = static_cast<int>(occ.size());
    if (occ.size() >= 2) {
      std::map<int, int> presence;
      for (const auto& o : occ) {
        for (int c : std::set<int>(o.begin(), o.end())) ++presence[c];
      }
      double sum = 0.0;
      for (const auto& o : occ) {
        const auto shared = std::count_if(o.begin(), o.end(), [&](int c) { return is_shared_code(presence[c]); });
        sum += static_cast<double>(shared) / static_cast<double>(o.size());
      }
      ps.percentage = sum / static_cast<double>(occ.size());
    }
    report.phones.push_back(std::move(ps));
  }
  std::stable_sort(report.phones.begin(), report.phones.end(), [](const PhoneSharing& a, const PhoneSharing& b) {
    if (a.percentage.has_value() != b.percentage.has_value()) return a.percentage.has_value();
    if (a.percentage && *a.percentage != *b.percentage) return *a.percentage < *b.percentage;
    return a.phone < b.phone;
  });
  double sum = 0.0;
  int defined = 0;
  for (const auto& p : report.phones) {
    if (p.percentage) {
      sum += *p.percentage;
      ++defined;
    }
  }
  if (defined > 0) report.mean_percentage = sum / defined;
  return report;
}

std::string metrics_to_json(const BoundaryMetrics& m) {
  nlohmann::ordered_json j;
  j["precision"] = m.precision;
  j["recall"] = m.recall;
  j["f1"] = m.f1;
  j["tolerance_frames"] = m.tolerance_frames;
  j["matched"] = m.counts.matched;
  j["predicted"] = m.counts.predicted;
  j["golden"] = m.counts.golden;
  return j.dump(2);
}

std::string sharing_to_json(const SharingReport& r) {
  nlohmann::ordered_json j;
  auto phones = nlohmann::ordered_json::array();
  for (const auto& p : r.phones) {
    nlohmann::ordered_json e;
    e["phone"] = p.phone;
    e["occurrences"] = p.occurrences;
    e["percentage"] = p.percentage ? nlohmann::ordered_json(*p.percentage) : nlohmann::ordered_json(nullptr);
    phones.push_back(std::move(e));
  }
  j["phones"] = std::move(phones);
  j["mean_percentage"] = r.mean_percentage ? nlohmann::ordered_json(*r.mean_percentage) : nlohmann::ordered_json(nullptr);
  return j.dump(2);
}

std::string sharing_to_table(const SharingReport& r) {
  std::ostringstream out;
  out << std::left << std::setw(12) << "phone" << std::right << std::setw(12) << "occurrences" << std::setw(12)
      << "shared" << '\n';
  out << std::fixed << std::setprecision(4);
  for (const auto& p : r.phones) {
    out << std::left << std::setw(12) << p.phone << std::right << std::setw(12) << p.occurrences << std::setw(12);
    if (p.percentage) {
      out << *p.percentage;
    } else {
      out << "n/a";
    }
    out << '\n';
  }
  out << "mean: ";
  if (r.mean_percentage) {
    out << *r.mean_percentage;
  } else {
    out << "n/a";
  }
  out << '\n';
  return out.str();
}

}  // namespace hubert_ap
