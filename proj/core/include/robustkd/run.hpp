#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "robustkd/evaluation.hpp"
#include "robustkd/training.hpp"

namespace rkd {

// Environment variable overriding RunConfig::output_root.
inline constexpr const char* kOutputRootEnv = "RKD_OUTPUT_ROOT";

struct DataConfig {
  DatasetSpec train;
  DatasetSpec test;
  DatasetSpec transfer_train;
  DatasetSpec transfer_test;
};

struct ModelConfig {
  std::string arch = "student20";
  int num_classes = 10;
  uint64_t init_seed = 7;
};

struct PretrainConfig {
  int epochs = 25;
  double learning_rate = 1e-3;
  int batch_size = 64;
  uint64_t seed = 2;
};

struct TeacherConfig {
  std::string arch = "teacher7";
  int clean_epochs = 25;   // supervised pretraining of the small model
  int robust_epochs = 30;  // full fine-tune on the augmented data
  double learning_rate = 1e-3;
  int batch_size = 64;
  uint64_t seed = 5;
};

struct AugmentationConfig {
  double aug_ratio = 1.0;
  AugmentPolicy policy;
  uint64_t seed = 9;
};

struct EvalConfig {
  std::vector<std::string> kinds;  // held-out shift suite
  int mc_samples = 10;
  std::string selector = "full";
  std::string uncertainty_agg = "mean_std";
  uint64_t seed = 17;
  bool write_traces = false;
  bool transfer = true;
  std::string baseline_report;      // mCE reference (eval record path)
  std::string baseline_checkpoint;  // original model for the transfer probe
  std::string mfr_kind = "noise_walk";
  int mfr_length = 8;
  int mfr_sequences = 40;
  double mfr_step = 0.02;
};

struct AblateConfig {
  std::vector<std::string> modes = {"ours", "apt"};
  std::vector<std::string> selectors = {"full"};
  std::vector<double> fractions = {0.10};
  std::vector<uint64_t> seeds = {3};
};

struct RunConfig {
  std::string experiment = "desk";
  std::string output_root = "runs";
  uint64_t seed = 1;
  int threads = 1;
  std::string corruption_table;  // optional path; builtin catalogue otherwise
  DataConfig data;
  ModelConfig model;
  PretrainConfig pretrain;
  TeacherConfig teacher;
  PartitionConfig partition;
  DistillConfig distill;
  AugmentationConfig augmentation;
  EvalConfig evaluation;
  AblateConfig ablate;

  // Canonical serialization (sorted keys, output_root and threads excluded so
  // relocating or parallelizing a run never changes any artifact hash).
  std::string canonical_json() const;
  std::string config_hash() const;

  // Sub-config hashes: each artifact embeds the hash of the configuration
  // slice that produced it, which is what ablation caching keys on.
  std::string teacher_config_hash() const;
  std::string pretrain_config_hash() const;
  std::string distill_config_hash() const;

  SeverityTables severity_tables() const;
  // Output root after applying the environment override.
  std::string effective_output_root() const;
};

RunConfig default_run_config();
// Parses, applies dotted-path overrides ("a.b.c=value"), validates. Throws
// ConfigError carrying the offending field path.
RunConfig load_run_config(const std::string& path, const std::vector<std::string>& overrides = {});
RunConfig run_config_from_json_text(const std::string& text,
                                    const std::vector<std::string>& overrides = {});
void save_run_config(const RunConfig& cfg, const std::string& path);

// <output_root>/<experiment>/<config-hash>/{checkpoints,logs,reports,plots,data}
struct RunPaths {
  std::filesystem::path root;
  std::filesystem::path checkpoints;
  std::filesystem::path logs;
  std::filesystem::path reports;
  std::filesystem::path plots;
  std::filesystem::path data;

  static RunPaths locate(const RunConfig& cfg);  // no side effects
  static RunPaths create(const RunConfig& cfg);  // mkdir -p + config.json
};

// Deterministically corrupted copy of a clean dataset (the "shifted split"):
// example i gets kinds[i % |kinds|] at severity 1 + (i % 5).
Dataset make_shifted_dataset(const Dataset& clean, const std::vector<std::string>& kinds,
                             uint64_t seed, const SeverityTables& tables);

// ---------------------------------------------------------------------------
// Commands (the CLI is a thin wrapper over these)
// ---------------------------------------------------------------------------

// Trains the small model on clean data, robustifies it on the augmented
// dataset, writes checkpoint + logs + stats. Returns the checkpoint path.
std::string cmd_train_teacher(const RunConfig& cfg);

// Supervised pretraining of the base (student) classifier on clean data.
std::string cmd_pretrain(const RunConfig& cfg);

// Builds the multi-head student around the pretrained base and runs the
// distillation loop in the configured mode.
std::string cmd_distill(const RunConfig& cfg, const std::string& teacher_checkpoint,
                        const std::string& base_checkpoint);

struct EvalOutputs {
  std::string record_path;
  EvalRecord record;
};
// Runs the full evaluation suite with the configured selector and writes
// reports + plots. Refuses checkpoints whose architecture does not match cfg.
EvalOutputs cmd_eval(const RunConfig& cfg, const std::string& checkpoint);

struct AblateOutputs {
  std::string table_path;
  AblationTable table;
  std::vector<std::string> child_run_dirs;
};
// Cross product of ablate.modes x fractions x seeds (plus the frozen
// fraction-0 baseline used as the mCE reference), evaluated under every
// configured selector. Existing checkpoints are reused (cache keyed by the
// distill sub-config hash embedded in the child run directory).
AblateOutputs cmd_ablate(const RunConfig& cfg);

// Formats the comparison table over existing run directories.
std::string cmd_report(const std::vector<std::string>& run_dirs, const std::string& out_path = "");

}  // namespace rkd
