#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <pyrpoint/config.hpp>

namespace pyrpoint::cli {

/// Provenance record of one command run. Written before any work starts and
/// rewritten with the exit status when the command finishes.
class RunManifest {
 public:
  RunManifest(std::string command, std::string path);

  RunManifest& config_path(const std::string& role, const std::string& path);
  RunManifest& seed(std::uint64_t seed);
  RunManifest& out_dir(const std::string& dir);
  RunManifest& arguments(const std::vector<std::string>& argv);
  RunManifest& note(const std::string& key, const json& value);

  void begin();
  void finish(int exit_code, const std::string& error = {});

  const json& document() const { return doc_; }
  const std::string& path() const { return path_; }

 private:
  void write() const;

  std::string path_;
  json doc_;
};

std::string utc_timestamp();
std::string tool_version();

}  // namespace pyrpoint::cli
