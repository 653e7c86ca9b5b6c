#pragma once

// Stage driver shared by the command-line tool and the end-to-end tests.
// A run directory holds every artifact; each stage reads the files earlier
// stages wrote and fails with a dependency error when one is missing.

#include <cstdint>
#include <filesystem>
#include <map>
#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

#include "hsmstack/metasvm.hpp"
#include "hsmstack/network.hpp"
#include "hsmstack/synth.hpp"
#include "hsmstack/training.hpp"
#include "hsmstack/triage.hpp"

namespace hsmstack {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A required input artifact does not exist yet.
class DependencyError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct PipelineConfig {
  std::uint64_t seed = 1;
  std::filesystem::path out_dir = "run";

  // Artifact names; relative paths resolve against out_dir.
  std::filesystem::path images = "images.gly";
  std::filesystem::path annotations = "annotations.csv";
  std::filesystem::path truth = "truth.csv";
  std::filesystem::path hsm = "hsm.csv";
  std::filesystem::path model_cxe = "model_cxe.netc";
  std::filesystem::path model_kld = "model_kld.netc";
  std::filesystem::path pred_cxe = "pred_cxe.csv";
  std::filesystem::path pred_kld = "pred_kld.csv";
  std::filesystem::path pred_knn = "pred_knn.csv";
  std::filesystem::path features = "features.csv";
  std::filesystem::path analysis_dir = "analysis";
  std::filesystem::path svm = "svm.csv";
  std::filesystem::path report_dir = "report";
  std::filesystem::path decisions = "decisions.jsonl";
  std::filesystem::path static_dir;  // empty: no UI bundle

  SynthConfig synth;
  AnnotatorPoolConfig annotators;
  NetConfig net;
  TrainConfig cxe;
  TrainConfig kld;
  double holdout_fraction = 0.1;

  std::size_t knn_k = 15;  // desk-scale neighborhood; see README
  bool knn_exclude_self = true;

  SvmConfig svm_params;
  std::size_t bins = 40;
  std::string focus_character = "Alpha";

  TriageThresholds triage;
  std::string host = "127.0.0.1";
  int port = 8080;

  PipelineConfig();

  [[nodiscard]] std::filesystem::path resolve(const std::filesystem::path& p) const;
};

/// Applies `key = value` lines (`#` comments, blank lines allowed).
/// Throws ConfigError naming the line for unknown keys or bad values.
void apply_config_text(PipelineConfig& config, std::string_view text);
/// Applies a single `key=value` override.
void apply_override(PipelineConfig& config, std::string_view assignment);
[[nodiscard]] PipelineConfig load_config(const std::filesystem::path& path);

/// Every key with its current value, one `key = value` per line, sorted.
[[nodiscard]] std::string dump_config(const PipelineConfig& config);
[[nodiscard]] std::vector<std::string> config_keys();

/// FNV-1a over the non-path settings, so moving a run does not change it.
[[nodiscard]] std::uint64_t config_hash(const PipelineConfig& config);
/// `hsmstack config_hash=<hex> seed=<n> stage=<name>`
[[nodiscard]] std::string artifact_header(const PipelineConfig& config, std::string_view stage);

/// Range checks and path collisions; empty means valid. Touches no data.
[[nodiscard]] std::vector<std::string> validate_config(const PipelineConfig& config);

[[nodiscard]] const std::vector<std::string>& stage_names();

enum ExitCode : int { kExitOk = 0, kExitUsage = 1, kExitData = 2 };

/// Runs one stage. Progress goes to `log`; errors are reported to `err` and
/// mapped to an exit code. "serve" blocks.
int run_stage(std::string_view stage, const PipelineConfig& config, std::ostream& log, std::ostream& err);

// Individual stages. They throw DependencyError, DataError or ConfigError.
void stage_synth(const PipelineConfig& config, std::ostream& log);
void stage_hsm(const PipelineConfig& config, std::ostream& log);
void stage_train(const PipelineConfig& config, std::ostream& log);
void stage_infer(const PipelineConfig& config, std::ostream& log);
void stage_stack(const PipelineConfig& config, std::ostream& log);
void stage_analyze(const PipelineConfig& config, std::ostream& log);
void stage_svm(const PipelineConfig& config, std::ostream& log);
void stage_report(const PipelineConfig& config, std::ostream& log);
void stage_serve(const PipelineConfig& config, std::ostream& log);

/// Ids held out of training (a seeded, class-stratified fraction).
[[nodiscard]] std::vector<std::string> holdout_ids(const std::vector<HsmRecord>& hsm, double fraction,
                                                   std::uint64_t seed);

}  // namespace hsmstack
