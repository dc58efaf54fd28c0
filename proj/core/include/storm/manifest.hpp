#pragma once

#include <string>
#include <vector>

namespace storm {

// One dataset utterance. Optional fields are empty strings (or has_snr ==
// false) when absent. Paths must not contain spaces (the manifest format is
// space-separated key=value records).
struct ManifestRow {
  std::string id;
  std::string split;  // train | valid | test
  std::string clean_path;
  std::string corrupt_path;
  std::string noise_path;  // scaled noise reference (denoise task)
  std::string rir_id;      // impulse-response id (dereverb task)
  double snr_db = 0.0;
  bool has_snr = false;
};

struct DatasetManifest {
  std::vector<ManifestRow> rows;

  std::vector<ManifestRow> split_rows(const std::string& split) const;

  // Checks id uniqueness, valid split names, and non-empty required paths;
  // with check_files_exist also stats every referenced file.
  void validate(bool check_files_exist) const;
};

// First line of every manifest file; bump the trailing number on breaking
// format changes.
inline constexpr const char* kManifestSchema = "# storm-manifest v1";

// Paths are written exactly as stored in the rows (normally relative to the
// manifest's directory).
void save_manifest(const std::string& path, const DatasetManifest& manifest);

// Loads a manifest and resolves relative paths against the manifest file's
// directory, so returned rows are directly openable.
DatasetManifest load_manifest(const std::string& path);

}  // namespace storm
