#include "cxr/run_manifest.hpp"

#include <chrono>
#include <ctime>
#include <fstream>
#include <iterator>
#include <stdexcept>

#include <nlohmann/json.hpp>

namespace cxr {

std::string utc_timestamp() {
  const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

void write_text_atomic(const std::filesystem::path& path, const std::string& text) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    if (!f) throw std::runtime_error("cannot write " + tmp.string());
    f << text;
    if (!f) throw std::runtime_error("cannot write " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

void write_manifest(const std::filesystem::path& path, const RunManifest& m) {
  nlohmann::ordered_json j;
  j["subcommand"] = m.subcommand;
  j["argv"] = m.argv;
  j["config"] = nlohmann::ordered_json::parse(m.config_json);
  j["inputs"] = m.inputs;
  j["outputs"] = m.outputs;
  j["seed"] = m.seed;
  j["tool_version"] = m.tool_version;
  j["started"] = m.started;
  j["finished"] = m.finished;
  write_text_atomic(path, j.dump(2) + "\n");
}

RunManifest read_manifest(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot open manifest " + path.string());
  const std::string text((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const std::exception& e) {
    throw std::runtime_error("manifest " + path.string() + " is not valid JSON: " + e.what());
  }
  RunManifest m;
  m.subcommand = j.at("subcommand").get<std::string>();
  m.argv = j.at("argv").get<std::vector<std::string>>();
  m.config_json = j.value("config", nlohmann::json::object()).dump();
  m.inputs = j.value("inputs", std::map<std::string, std::string>{});
  m.outputs = j.value("outputs", std::map<std::string, std::string>{});
  m.seed = j.value("seed", std::uint64_t{0});
  m.tool_version = j.value("tool_version", std::string());
  m.started = j.value("started", std::string());
  m.finished = j.value("finished", std::string());
  return m;
}

}  // namespace cxr
