#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace hubert_ap {

struct ManifestRecord {
  std::string utt_id;
  std::filesystem::path wav;
  std::optional<std::string> transcript;
  std::optional<std::filesystem::path> alignment;
};

/// TSV `utt_id<TAB>wav_path[<TAB>transcript[<TAB>alignment_path]]`; empty
/// optional fields are allowed, `#` starts a comment line.
struct Manifest {
  std::vector<ManifestRecord> records;
};

/// Relative paths are resolved against the manifest's directory. Duplicate
/// utt_ids are rejected.
Manifest read_manifest(const std::filesystem::path& path);
void write_manifest(const std::filesystem::path& path, const Manifest& manifest);

}  // namespace hubert_ap
