#pragma once

// Per-command run record: resolved configuration, paths and content hashes.

#include "ruie/config.hpp"

#include <json.hpp>

#include <chrono>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

namespace ruie {

inline std::string utc_now() {
  const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open '" + path.string() + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline std::string file_hash(const std::filesystem::path& path) { return hex64(fnv1a(read_file(path))); }

struct RunManifest {
  std::string command;
  std::vector<std::string> argv;
  std::string config_ini;  // resolved configuration
  std::string config_fingerprint;
  std::uint64_t seed = 0;
  std::map<std::string, std::string> inputs, outputs;  // role -> path
  std::map<std::string, std::string> hashes;           // path -> FNV-1a
  std::string started, finished;
  nlohmann::json extra = nlohmann::json::object();

  void add_input(const std::string& role, const std::filesystem::path& p) {
    inputs[role] = p.string();
    hashes[p.string()] = file_hash(p);
  }
  void add_output(const std::string& role, const std::filesystem::path& p) {
    outputs[role] = p.string();
    hashes[p.string()] = file_hash(p);
  }

  nlohmann::json to_json() const {
    return {{"command", command},
            {"argv", argv},
            {"config", config_ini},
            {"config_fingerprint", config_fingerprint},
            {"seed", seed},
            {"inputs", inputs},
            {"outputs", outputs},
            {"hashes", hashes},
            {"started", started},
            {"finished", finished},
            {"extra", extra}};
  }

  static RunManifest from_json(const nlohmann::json& j) {
    RunManifest m;
    m.command = j.at("command").get<std::string>();
    m.argv = j.at("argv").get<std::vector<std::string>>();
    m.config_ini = j.at("config").get<std::string>();
    m.config_fingerprint = j.at("config_fingerprint").get<std::string>();
    m.seed = j.at("seed").get<std::uint64_t>();
    m.inputs = j.at("inputs").get<std::map<std::string, std::string>>();
    m.outputs = j.at("outputs").get<std::map<std::string, std::string>>();
    m.hashes = j.at("hashes").get<std::map<std::string, std::string>>();
    m.started = j.at("started").get<std::string>();
    m.finished = j.at("finished").get<std::string>();
    m.extra = j.value("extra", nlohmann::json::object());
    return m;
  }

  void write(const std::filesystem::path& path) const {
    std::ofstream out(path);
    if (!out) throw DataError("cannot write '" + path.string() + "'");
    out << to_json().dump(2) << '\n';
  }
};

}  // namespace ruie
