#include "hubert_ap/io.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

namespace hubert_ap {

static_assert(std::endian::native == std::endian::little, "binary formats assume a little-endian host");

void write_id_sequences(std::ostream& out, const std::vector<IdSequence>& seqs) {
  for (const auto& s : seqs) {
    out << s.utt_id << '\t';
    for (std::size_t i = 0; i < s.ids.size(); ++i) {
      if (i) out << ' ';
      out << s.ids[i];
    }
    out << '\n';
  }
}

void write_id_sequences(const std::filesystem::path& path, const std::vector<IdSequence>& seqs) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  write_id_sequences(out, seqs);
}

std::vector<IdSequence> read_id_sequences(std::istream& in) {
  std::vector<IdSequence> seqs;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    const auto tab = line.find('\t');
    if (tab == std::string::npos || tab == 0) {
      throw Error("id sequence line " + std::to_string(lineno) + ": expected utt_id<TAB>ids");
    }
    IdSequence s;
    s.utt_id = line.substr(0, tab);
    std::istringstream fields(line.substr(tab + 1));
    std::string tok;
    while (fields >> tok) {
      std::size_t used = 0;
      long v = -1;
      try {
        v = std::stol(tok, &used);
      } catch (const std::exception&) {
        used = 0;
      }
      if (used != tok.size() || v < 0 || v > 0x7FFFFFFF) {
        throw Error("id sequence line " + std::to_string(lineno) + ": bad id '" + tok + "'");
      }
      s.ids.push_back(static_cast<int>(v));
    }
    seqs.push_back(std::move(s));
  }
  return seqs;
}

std::vector<IdSequence> read_id_sequences(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open " + path.string());
  try {
    return read_id_sequences(in);
  } catch (const Error& e) {
    throw Error(path.string() + ": " + e.what());
  }
}

namespace {
constexpr char kFeatureMagic[4] = {'H', 'A', 'P', 'F'};
}

void save_features(const std::filesystem::path& path, const FeatureMatrix& feats) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  const auto T = static_cast<std::uint32_t>(feats.frames.rows());
  const auto D = static_cast<std::uint32_t>(feats.frames.cols());
  out.write(kFeatureMagic, 4);
  out.write(reinterpret_cast<const char*>(&T), 4);
  out.write(reinterpret_cast<const char*>(&D), 4);
  std::vector<float> row(D);
  for (std::uint32_t t = 0; t < T; ++t) {
    for (std::uint32_t d = 0; d < D; ++d) row[d] = static_cast<float>(feats.frames(t, d));
    out.write(reinterpret_cast<const char*>(row.data()), static_cast<std::streamsize>(D * sizeof(float)));
  }
}

FeatureMatrix load_features(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path.string());
  char magic[4];
  std::uint32_t T = 0, D = 0;
  in.read(magic, 4);
  in.read(reinterpret_cast<char*>(&T), 4);
  in.read(reinterpret_cast<char*>(&D), 4);
  if (!in) throw Error(path.string() + ": truncated feature header");
  if (std::memcmp(magic, kFeatureMagic, 4) != 0) throw Error(path.string() + ": bad feature magic");
  FeatureMatrix f;
  f.utt_id = path.stem().string();
  f.frames.resize(T, D);
  std::vector<float> row(D);
  for (std::uint32_t t = 0; t < T; ++t) {
    in.read(reinterpret_cast<char*>(row.data()), static_cast<std::streamsize>(D * sizeof(float)));
    if (!in) throw Error(path.string() + ": truncated feature data");
    for (std::uint32_t d = 0; d < D; ++d) {
      if (!std::isfinite(row[d])) throw Error(path.string() + ": non-finite feature value");
      f.frames(t, d) = row[d];
    }
  }
  return f;
}

void write_text_file(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  out << text;
}

std::string read_text_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace hubert_ap
