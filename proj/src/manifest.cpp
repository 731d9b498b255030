#include "p2s/manifest.hpp"

#include "p2s/error.hpp"

#include <openssl/evp.h>

#include <array>
#include <chrono>
#include <cstdio>
#include <fstream>
#include <memory>

namespace p2s {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

double now_s() {
  return std::chrono::duration<double>(std::chrono::steady_clock::now().time_since_epoch()).count();
}

}  // namespace

std::string sha256_file(const fs::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot open '" + path.string() + "' for hashing");
  std::unique_ptr<EVP_MD_CTX, decltype(&EVP_MD_CTX_free)> ctx(EVP_MD_CTX_new(), &EVP_MD_CTX_free);
  if (!ctx || EVP_DigestInit_ex(ctx.get(), EVP_sha256(), nullptr) != 1) throw DataError("SHA-256 unavailable");
  std::array<char, 1 << 16> buf;
  while (f) {
    f.read(buf.data(), buf.size());
    if (f.gcount() > 0) EVP_DigestUpdate(ctx.get(), buf.data(), static_cast<std::size_t>(f.gcount()));
  }
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  EVP_DigestFinal_ex(ctx.get(), md, &len);
  static const char* hex = "0123456789abcdef";
  std::string out;
  for (unsigned int i = 0; i < len; ++i) {
    out.push_back(hex[md[i] >> 4]);
    out.push_back(hex[md[i] & 15]);
  }
  return out;
}

ManifestBuilder::ManifestBuilder(std::string command, fs::path manifest_path)
    : path_(std::move(manifest_path)), start_(now_s()) {
  m_.command = std::move(command);
}

void ManifestBuilder::add_input(const fs::path& p) { in_.push_back(p); }
void ManifestBuilder::add_output(const fs::path& p) { out_.push_back(p); }

std::string ManifestBuilder::relative(const fs::path& p) const {
  const fs::path base = fs::absolute(path_).parent_path();
  const fs::path abs = fs::absolute(p).lexically_normal();
  const fs::path rel = abs.lexically_relative(base);
  if (rel.empty() || *rel.begin() == "..") return abs.generic_string();
  return rel.generic_string();
}

RunManifest ManifestBuilder::finish_ok() {
  m_.inputs.clear();
  m_.outputs.clear();
  for (const auto& p : in_) m_.inputs.push_back({relative(p), sha256_file(p)});
  for (const auto& p : out_) m_.outputs.push_back({relative(p), sha256_file(p)});
  m_.wall_time_s = now_s() - start_;
  m_.status = "ok";
  write_manifest(m_, path_);
  return m_;
}

RunManifest ManifestBuilder::finish_failed(const std::string& stage, const std::string& error) {
  m_.inputs.clear();
  m_.outputs.clear();
  for (const auto& p : in_)
    if (fs::exists(p)) m_.inputs.push_back({relative(p), sha256_file(p)});
  for (const auto& p : out_)
    if (fs::exists(p)) m_.partial_outputs.push_back(relative(p));
  m_.wall_time_s = now_s() - start_;
  m_.status = "failed";
  m_.failed_stage = stage;
  m_.error = error;
  write_manifest(m_, path_);
  return m_;
}

json to_json(const RunManifest& m) {
  auto files = [](const std::vector<FileRecord>& v) {
    json a = json::array();
    for (const auto& r : v) a.push_back({{"path", r.path}, {"sha256", r.sha256}});
    return a;
  };
  json j = {{"command", m.command},
            {"config", m.config},
            {"inputs", files(m.inputs)},
            {"outputs", files(m.outputs)},
            {"seeds", m.seeds},
            {"wall_time_s", m.wall_time_s},
            {"library_version", m.library_version},
            {"status", m.status}};
  if (m.status != "ok") {
    j["failed_stage"] = m.failed_stage;
    j["error"] = m.error;
    j["partial_outputs"] = m.partial_outputs;
  }
  return j;
}

RunManifest manifest_from_json(const json& j) {
  RunManifest m;
  try {
    m.command = j.at("command").get<std::string>();
    m.config = j.at("config");
    for (const auto& r : j.at("inputs")) m.inputs.push_back({r.at("path"), r.at("sha256")});
    for (const auto& r : j.at("outputs")) m.outputs.push_back({r.at("path"), r.at("sha256")});
    m.seeds = j.at("seeds").get<std::map<std::string, std::uint64_t>>();
    m.wall_time_s = j.at("wall_time_s").get<double>();
    m.library_version = j.at("library_version").get<std::string>();
    m.status = j.at("status").get<std::string>();
    if (m.status != "ok") {
      m.failed_stage = j.value("failed_stage", "");
      m.error = j.value("error", "");
      m.partial_outputs = j.value("partial_outputs", std::vector<std::string>{});
    }
  } catch (const json::exception& e) {
    throw DataError(std::string("malformed manifest: ") + e.what());
  }
  return m;
}

void write_file_atomic(const fs::path& path, const std::string& text) {
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    if (!f) throw DataError("cannot write '" + tmp.string() + "'");
    f << text;
    f.flush();
    if (!f) throw DataError("write failed for '" + tmp.string() + "'");
  }
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec) {
    fs::remove(tmp);
    throw DataError("cannot move '" + tmp.string() + "' into place: " + ec.message());
  }
}

void write_manifest(const RunManifest& m, const fs::path& path) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  write_file_atomic(path, to_json(m).dump(2) + "\n");
}

RunManifest read_manifest(const fs::path& path) {
  std::ifstream f(path);
  if (!f) throw DataError("cannot open manifest '" + path.string() + "'");
  try {
    return manifest_from_json(json::parse(f));
  } catch (const json::parse_error& e) {
    throw DataError("manifest '" + path.string() + "' is not valid JSON: " + e.what());
  }
}

VerifyReport verify_manifest(const fs::path& path) {
  const RunManifest m = read_manifest(path);
  VerifyReport rep;
  if (m.status != "ok") {
    rep.ok = false;
    rep.problems.push_back("run failed at stage '" + m.failed_stage + "': " + m.error);
  }
  const fs::path base = fs::absolute(path).parent_path();
  auto check = [&](const FileRecord& r) {
    const fs::path p = fs::path(r.path).is_absolute() ? fs::path(r.path) : base / r.path;
    if (!fs::exists(p)) {
      rep.ok = false;
      rep.problems.push_back("missing: " + r.path);
      return;
    }
    if (sha256_file(p) != r.sha256) {
      rep.ok = false;
      rep.problems.push_back("hash mismatch: " + r.path);
    }
  };
  for (const auto& r : m.inputs) check(r);
  for (const auto& r : m.outputs) check(r);
  return rep;
}

}  // namespace p2s
