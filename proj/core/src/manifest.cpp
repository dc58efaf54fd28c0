#include "storm/manifest.hpp"

#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>
#include <stdexcept>

#include "storm/kvconfig.hpp"

namespace storm {

namespace fs = std::filesystem;

std::vector<ManifestRow> DatasetManifest::split_rows(
    const std::string& split) const {
  std::vector<ManifestRow> out;
  for (const ManifestRow& r : rows)
    if (r.split == split) out.push_back(r);
  return out;
}

void DatasetManifest::validate(bool check_files_exist) const {
  std::set<std::string> ids;
  for (const ManifestRow& r : rows) {
    if (r.id.empty()) throw std::runtime_error("manifest row with empty id");
    if (!ids.insert(r.id).second)
      throw std::runtime_error("duplicate manifest id: " + r.id);
    if (r.split != "train" && r.split != "valid" && r.split != "test")
      throw std::runtime_error("manifest row " + r.id + ": bad split '" +
                               r.split + "'");
    if (r.clean_path.empty() || r.corrupt_path.empty())
      throw std::runtime_error("manifest row " + r.id + ": missing paths");
    if (check_files_exist) {
      for (const std::string* p :
           {&r.clean_path, &r.corrupt_path, &r.noise_path}) {
        if (!p->empty() && !fs::exists(*p))
          throw std::runtime_error("manifest row " + r.id +
                                   ": missing file " + *p);
      }
    }
  }
}

void save_manifest(const std::string& path, const DatasetManifest& manifest) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot write manifest: " + path);
  os << kManifestSchema << "\n";
  for (const ManifestRow& r : manifest.rows) {
    os << "id=" << r.id << " split=" << r.split << " clean=" << r.clean_path
       << " corrupt=" << r.corrupt_path;
    if (!r.noise_path.empty()) os << " noise=" << r.noise_path;
    if (r.has_snr) os << " snr_db=" << format_double(r.snr_db);
    if (!r.rir_id.empty()) os << " rir_id=" << r.rir_id;
    os << "\n";
  }
  if (!os) throw std::runtime_error("write error on manifest: " + path);
}

DatasetManifest load_manifest(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot open manifest: " + path);
  std::string line;
  if (!std::getline(is, line) || line != kManifestSchema)
    throw std::runtime_error("unrecognized manifest schema line in " + path +
                             " (expected '" + std::string(kManifestSchema) +
                             "')");
  const std::string base = fs::path(path).parent_path().string();
  auto resolve = [&base](const std::string& p) {
    if (p.empty() || p.front() == '/' || base.empty()) return p;
    return base + "/" + p;
  };
  DatasetManifest m;
  while (std::getline(is, line)) {
    if (line.empty() || line[0] == '#') continue;
    ManifestRow row;
    std::istringstream ls(line);
    std::string tok;
    while (ls >> tok) {
      const size_t eq = tok.find('=');
      if (eq == std::string::npos)
        throw std::runtime_error("bad manifest token: " + tok);
      const std::string key = tok.substr(0, eq);
      const std::string val = tok.substr(eq + 1);
      if (key == "id")
        row.id = val;
      else if (key == "split")
        row.split = val;
      else if (key == "clean")
        row.clean_path = resolve(val);
      else if (key == "corrupt")
        row.corrupt_path = resolve(val);
      else if (key == "noise")
        row.noise_path = resolve(val);
      else if (key == "snr_db") {
        row.snr_db = std::stod(val);
        row.has_snr = true;
      } else if (key == "rir_id")
        row.rir_id = val;
      else
        throw std::runtime_error("unknown manifest key: " + key);
    }
    m.rows.push_back(std::move(row));
  }
  m.validate(/*check_files_exist=*/false);
  return m;
}

}  // namespace storm
