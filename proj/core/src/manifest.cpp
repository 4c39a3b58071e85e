#include "hubert_ap/manifest.hpp"

#include <fstream>
#include <set>

#include "hubert_ap/common.hpp"

namespace hubert_ap {

Manifest read_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open manifest " + path.string());
  const auto base = path.parent_path();
  auto resolve = [&](const std::string& p) {
    std::filesystem::path fp(p);
    return fp.is_absolute() ? fp : base / fp;
  };
  Manifest m;
  std::set<std::string> ids;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line[0] == '#') continue;
    std::vector<std::string> f;
    std::size_t pos = 0;
    while (true) {
      const auto tab = line.find('\t', pos);
      f.push_back(line.substr(pos, tab - pos));
      if (tab == std::string::npos) break;
      pos = tab + 1;
    }
    const std::string where = path.string() + ":" + std::to_string(lineno);
    if (f.size() < 2 || f.size() > 4 || f[0].empty() || f[1].empty()) {
      throw Error(where + ": expected utt_id<TAB>wav[<TAB>transcript[<TAB>alignment]]");
    }
    if (!ids.insert(f[0]).second) throw Error(where + ": duplicate utt_id '" + f[0] + "'");
    ManifestRecord r;
    r.utt_id = f[0];
    r.wav = resolve(f[1]);
    if (f.size() > 2 && !f[2].empty()) r.transcript = f[2];
    if (f.size() > 3 && !f[3].empty()) r.alignment = resolve(f[3]);
    m.records.push_back(std::move(r));
  }
  return m;
}

void write_manifest(const std::filesystem::path& path, const Manifest& manifest) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  for (const auto& r : manifest.records) {
    out << r.utt_id << '\t' << r.wav.generic_string() << '\t' << r.transcript.value_or("") << '\t'
        << (r.alignment ? r.alignment->generic_string() : std::string()) << '\n';
  }
}

}  // namespace hubert_ap
