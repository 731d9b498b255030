#pragma once

#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace p2s {

inline constexpr const char* kLibraryVersion = "0.1.0";

/// Lowercase hex SHA-256 of a file's bytes. Throws DataError when unreadable.
std::string sha256_file(const std::filesystem::path& path);

struct FileRecord {
  std::string path;  ///< relative to the manifest's directory when possible
  std::string sha256;
  bool operator==(const FileRecord&) const = default;
};

struct RunManifest {
  std::string command;
  nlohmann::json config = nlohmann::json::object();
  std::vector<FileRecord> inputs;
  std::vector<FileRecord> outputs;
  std::map<std::string, std::uint64_t> seeds;
  double wall_time_s = 0.0;
  std::string library_version = kLibraryVersion;
  std::string status = "ok";  ///< "ok" or "failed"
  std::string failed_stage;
  std::string error;
  std::vector<std::string> partial_outputs;  ///< files left behind by a failed run, unhashed
};

/// Collects file hashes while a command runs, relative to the manifest location.
class ManifestBuilder {
 public:
  ManifestBuilder(std::string command, std::filesystem::path manifest_path);

  void add_input(const std::filesystem::path& p);
  void add_output(const std::filesystem::path& p);
  void set_config(nlohmann::json config) { m_.config = std::move(config); }
  void set_seed(const std::string& name, std::uint64_t seed) { m_.seeds[name] = seed; }

  /// Hashes everything and writes the manifest atomically.
  RunManifest finish_ok();
  /// Records the failure; outputs produced so far are listed as partial.
  RunManifest finish_failed(const std::string& stage, const std::string& error);

  const std::filesystem::path& path() const { return path_; }

 private:
  std::string relative(const std::filesystem::path& p) const;
  RunManifest m_;
  std::filesystem::path path_;
  std::vector<std::filesystem::path> in_, out_;
  double start_ = 0.0;
};

nlohmann::json to_json(const RunManifest& m);
RunManifest manifest_from_json(const nlohmann::json& j);

/// Writes to a temporary sibling and renames over `path`.
void write_manifest(const RunManifest& m, const std::filesystem::path& path);
RunManifest read_manifest(const std::filesystem::path& path);

/// Writes `text` to a temporary sibling of `path` and renames it into place.
void write_file_atomic(const std::filesystem::path& path, const std::string& text);

struct VerifyReport {
  bool ok = true;
  std::vector<std::string> problems;
};

/// Recomputes every recorded hash. A failed run never verifies.
VerifyReport verify_manifest(const std::filesystem::path& path);

}  // namespace p2s
