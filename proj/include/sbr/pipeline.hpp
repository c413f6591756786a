#pragma once

#include "sbr/envs.hpp"
#include "sbr/policy.hpp"
#include "sbr/retrieval.hpp"
#include "sbr/world_model.hpp"

#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace sbr {

// Dataset generation mix, or explicit paths to pre-generated files. When
// paths are set the counts are ignored.
struct DataGenConfig {
  std::uint64_t seed = 1;
  int noise_dims = 0;
  int expert = 5;
  int wrong_goal = 0;  // split round-robin across alt_goals
  int random_walk = 0;
  int early_failure = 0;
  std::vector<Eigen::Vector2d> alt_goals;
  std::string expert_path;
  std::string offline_path;

  void validate() const;
};

struct PipelineConfig {
  int schema_version = 1;
  std::string layout = "umaze";  // shipped name or layout file path
  BcMode mode = BcMode::Sbr;
  std::string out_dir;
  DataGenConfig data;
  WmConfig wm;
  RetrievalConfig retrieval;
  BcConfig bc;
  EvalConfig eval;
  std::vector<std::uint64_t> seeds{0};

  // Strict: unknown keys anywhere are ConfigErrors.
  static PipelineConfig from_json(const nlohmann::json& j);
  static PipelineConfig from_file(const std::filesystem::path& path);
  // Every defaultable field resolved; embedding this back reproduces the run.
  nlohmann::json to_json() const;

  void validate() const;
};

struct StageInfo {
  std::string name;
  std::string status;  // "run" | "cached" | "skipped"
  double seconds = 0.0;
};

struct SeedRunRecord {
  std::uint64_t seed = 0;
  std::vector<StageInfo> stages;
  std::vector<double> wm_epoch_loss;
  nlohmann::json search_report;  // null when retrieval skipped
  std::vector<double> bc_epoch_loss;
  EvalReport eval;
  double norm_score = 0.0;
  std::map<std::string, std::string> artifact_hashes;
};

struct RunRecord {
  nlohmann::json config;
  nlohmann::json data_summary;
  ReferenceReturns reference;
  std::vector<SeedRunRecord> runs;

  nlohmann::json to_json() const;
  // to_json() with every timing field removed; the determinism contract
  // compares these.
  nlohmann::json to_comparable_json() const;
};

std::string file_hash(const std::filesystem::path& path);

// Single pipeline stages, runnable standalone; each consults the cache
// manifest in cfg.out_dir when use_cache is set.
void stage_gen_data(const PipelineConfig& cfg, bool use_cache);
StageInfo stage_train_wm(const PipelineConfig& cfg, std::uint64_t seed, bool use_cache,
                         std::vector<double>* epoch_loss = nullptr);
StageInfo stage_retrieve(const PipelineConfig& cfg, std::uint64_t seed, bool use_cache,
                         nlohmann::json* report = nullptr);
StageInfo stage_train_policy(const PipelineConfig& cfg, std::uint64_t seed, bool use_cache,
                             std::vector<double>* epoch_loss = nullptr);
StageInfo stage_eval(const PipelineConfig& cfg, std::uint64_t seed, bool use_cache,
                     EvalReport* report = nullptr, double* norm_score = nullptr);

// The full run: data, then per seed the four stages in order (retrieval and
// world-model stages are skipped for the plain BC modes).
RunRecord run_pipeline(const PipelineConfig& cfg, bool use_cache);

void export_embeddings_cmd(const PipelineConfig& cfg, std::uint64_t seed,
                           const std::filesystem::path& out_csv);

struct ExperimentConfig {
  std::vector<std::string> layouts;
  std::vector<std::string> modes;
  std::vector<std::uint64_t> seeds;
  PipelineConfig base;
  std::string out_dir;

  static ExperimentConfig from_file(const std::filesystem::path& path);
};

struct ExperimentCell {
  std::string layout;
  std::string mode;
  std::string status;  // "ok" | "error"
  std::string error;
  RunRecord record;
};

// Runs the mode x seed x layout matrix, sharing generated data per layout.
// Writes <out>/results.csv (one row per cell-seed plus one aggregate row per
// mode/layout) and <out>/experiment.json. Cell failures are recorded and the
// matrix continues.
std::vector<ExperimentCell> run_experiment(const ExperimentConfig& cfg, bool use_cache);

}  // namespace sbr
