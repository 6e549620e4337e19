#pragma once

#include <array>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <memory>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "todflow/db.h"
#include "todflow/ontology.h"
#include "todflow/pipeline.h"

namespace fixtures {

namespace fs = std::filesystem;

inline fs::path source_dir() { return TODFLOW_SOURCE_DIR; }
inline fs::path fixture(const std::string& rel) { return source_dir() / "tests" / "fixtures" / rel; }
inline fs::path ontology_path() { return source_dir() / "config" / "ontology.json"; }
inline fs::path pipeline_path() { return source_dir() / "config" / "pipeline.json"; }

inline std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline const todflow::Ontology& ontology() {
  static const todflow::Ontology o = todflow::load_ontology_file(ontology_path());
  return o;
}

inline const todflow::Database& db() {
  static const todflow::Database d = todflow::Database::load_dir(fixture("db"));
  return d;
}

inline todflow::PipelineConfig pipeline_config(todflow::Variant v = todflow::Variant::kFull) {
  todflow::PipelineConfig c;
  todflow::load_pipeline_settings(pipeline_path(), c);
  c.variant = v;
  c.lexicon.places = db().place_names();
  return c;
}

// Fresh scratch directory under the system temp dir, removed at exit.
inline fs::path scratch(const std::string& name) {
  struct Registry {
    std::vector<fs::path> paths;
    ~Registry() {
      std::error_code ec;
      for (const auto& p : paths) fs::remove_all(p, ec);
    }
  };
  static Registry registry;
  static std::mt19937_64 rng(std::random_device{}());
  fs::path p = fs::temp_directory_path() / ("todflow-" + name + "-" + std::to_string(rng() % 1000000000));
  fs::remove_all(p);
  fs::create_directories(p);
  registry.paths.push_back(p);
  return p;
}

// Processed fixture corpus (FULL, k=5, seed=0), prepared once per process.
inline const fs::path& processed_dir() {
  static const fs::path dir = [] {
    fs::path out = scratch("processed");
    todflow::prepare_data(fixture("corpus"), db(), ontology(), pipeline_config(), out);
    return out;
  }();
  return dir;
}

inline const todflow::ProcessedData& processed() {
  static const todflow::ProcessedData d = todflow::load_processed(processed_dir());
  return d;
}

struct CommandResult {
  int status = -1;
  std::string output;
};

inline CommandResult run(const std::string& command) {
  CommandResult r;
  FILE* pipe = popen((command + " 2>&1").c_str(), "r");
  if (!pipe) return r;
  std::array<char, 4096> buf{};
  size_t n;
  while ((n = fread(buf.data(), 1, buf.size(), pipe)) > 0) r.output.append(buf.data(), n);
  int st = pclose(pipe);
  r.status = WIFEXITED(st) ? WEXITSTATUS(st) : -1;
  return r;
}

inline std::string cli() { return TODFLOW_CLI; }

}  // namespace fixtures
