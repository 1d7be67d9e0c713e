#pragma once

// Run manifests and output-directory plumbing shared by the command-line tools.

#include <atomic>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>
#include <openssl/evp.h>
#include <unistd.h>

#include "meal/errors.hpp"

namespace meal {

inline std::string sha256_hex(const std::string& bytes) {
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), md, &len, EVP_sha256(), nullptr) != 1)
    throw Error("sha256 failed");
  std::ostringstream os;
  for (unsigned int i = 0; i < len; ++i) os << std::hex << std::setw(2) << std::setfill('0') << int(md[i]);
  return os.str();
}

inline std::string read_file_bytes(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw IoError("cannot read '" + p.string() + "'");
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

inline std::string sha256_file(const std::filesystem::path& p) { return sha256_hex(read_file_bytes(p)); }

/// What a command was asked to do. The digest covers the canonical JSON
/// (sorted keys) plus the digest of the dataset manifest contents, so
/// identical requests on identical data share a digest wherever they run.
struct RunManifest {
  std::string command;
  std::string config_path;
  std::string dataset_manifest;
  std::string dataset_digest;  // sha256 of the dataset manifest file, if any
  std::uint64_t seed = 0;
  std::string output;
  std::vector<std::string> variants;
  std::vector<std::string> conditions;
  nlohmann::json options = nlohmann::json::object();

  nlohmann::json to_json() const {
    return {{"command", command},       {"config", config_path}, {"dataset_manifest", dataset_manifest},
            {"dataset_sha256", dataset_digest}, {"seed", seed}, {"output", output},
            {"variants", variants},     {"conditions", conditions}, {"options", options}};
  }

  /// Output location is excluded so that reruns into another directory agree.
  std::string digest() const {
    auto j = to_json();
    j.erase("output");
    return sha256_hex(j.dump());
  }
};

/// Stages an output directory as <dir>.partial-<pid> and moves it into place
/// on commit(); an uncommitted stage is removed on destruction.
class StagedDir {
 public:
  explicit StagedDir(std::filesystem::path final_dir) : final_(std::move(final_dir)) {
    static std::atomic<unsigned> counter{0};
    stage_ = final_;
    stage_ += ".partial-" + std::to_string(::getpid()) + "-" + std::to_string(counter++);
    std::filesystem::remove_all(stage_);
    std::filesystem::create_directories(stage_);
  }
  StagedDir(const StagedDir&) = delete;
  StagedDir& operator=(const StagedDir&) = delete;
  ~StagedDir() {
    if (!committed_) {
      std::error_code ec;
      std::filesystem::remove_all(stage_, ec);
    }
  }

  const std::filesystem::path& path() const { return stage_; }
  std::filesystem::path operator/(const std::string& name) const { return stage_ / name; }

  void commit() {
    std::error_code ec;
    std::filesystem::remove_all(final_, ec);
    if (final_.has_parent_path()) std::filesystem::create_directories(final_.parent_path());
    std::filesystem::rename(stage_, final_);
    committed_ = true;
  }

 private:
  std::filesystem::path final_, stage_;
  bool committed_ = false;
};

/// Writes `bytes` to `path` via a temporary file and rename.
inline void write_file_atomic(const std::filesystem::path& path, const std::string& bytes) {
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw IoError("cannot write '" + path.string() + "'");
    out << bytes;
    if (!out) throw IoError("short write to '" + path.string() + "'");
  }
  std::filesystem::rename(tmp, path);
}

}  // namespace meal
