#include "pyrpoint_tools/manifest.hpp"

#include <chrono>
#include <ctime>
#include <filesystem>

namespace pyrpoint::cli {

std::string utc_timestamp() {
  const auto now = std::chrono::system_clock::now();
  const std::time_t t = std::chrono::system_clock::to_time_t(now);
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

std::string tool_version() { return PYRPOINT_VERSION; }

RunManifest::RunManifest(std::string command, std::string path) : path_(std::move(path)) {
  doc_ = {{"command", std::move(command)}, {"tool_version", tool_version()}, {"config_paths", json::object()}};
}

RunManifest& RunManifest::config_path(const std::string& role, const std::string& path) {
  std::error_code ec;
  const auto abs = std::filesystem::absolute(path, ec);
  doc_["config_paths"][role] = ec ? path : abs.string();
  return *this;
}

RunManifest& RunManifest::seed(std::uint64_t seed) {
  doc_["seed"] = seed;
  return *this;
}

RunManifest& RunManifest::out_dir(const std::string& dir) {
  std::error_code ec;
  const auto abs = std::filesystem::absolute(dir, ec);
  doc_["out_dir"] = ec ? dir : abs.string();
  return *this;
}

RunManifest& RunManifest::arguments(const std::vector<std::string>& argv) {
  doc_["arguments"] = argv;
  return *this;
}

RunManifest& RunManifest::note(const std::string& key, const json& value) {
  doc_[key] = value;
  return *this;
}

void RunManifest::begin() {
  doc_["started"] = utc_timestamp();
  doc_["status"] = "running";
  write();
}

void RunManifest::finish(int exit_code, const std::string& error) {
  doc_["finished"] = utc_timestamp();
  doc_["exit_code"] = exit_code;
  doc_["status"] = exit_code == 0 ? "ok" : "failed";
  if (!error.empty()) doc_["error"] = error;
  write();
}

void RunManifest::write() const {
  const auto parent = std::filesystem::path(path_).parent_path();
  if (!parent.empty()) std::filesystem::create_directories(parent);
  write_json_file(path_, doc_);
}

}  // namespace pyrpoint::cli
