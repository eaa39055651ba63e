#pragma once

#include <array>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "robustkd/corruptions.hpp"
#include "robustkd/inference.hpp"

namespace rkd {

using PredictFn = std::function<int(const Image&)>;

// Fraction of argmax-correct predictions. Parallel over examples with an
// ordered reduction; never mutates anything reachable from predict.
double evaluate_accuracy(const PredictFn& predict, const Dataset& dataset, int threads = 1);

using PerCorruption = std::map<std::string, std::array<double, 5>>;

// Accuracy at each severity 1..5 per kind; corruptions are generated on the
// fly, deterministically from (seed, kind, severity, example index).
PerCorruption severity_sweep(const PredictFn& predict, const Dataset& clean_test,
                             const std::vector<std::string>& kinds, uint64_t seed,
                             int threads = 1,
                             const SeverityTables& tables = default_severity_tables());

struct RobustnessReport {
  double clean_accuracy = 0.0;
  PerCorruption per_corruption;
  std::optional<double> mce;
  std::vector<std::string> mce_skipped_kinds;
  std::optional<double> mfr;
  std::optional<double> f_correct_clean;
  std::optional<double> f_correct_shifted;
  // split name -> head name -> count
  std::map<std::string, std::map<std::string, long>> head_usage;

  // Mean accuracy over all kinds and severities of the shifted suite.
  double shifted_accuracy_mean() const;
};

struct MceResult {
  double value = 0.0;
  std::map<std::string, double> per_kind;       // per-kind corruption error, x100
  std::vector<std::string> skipped_kinds;       // baseline had zero total error
};

// Mean over kinds of (sum_s error_s) / (sum_s baseline_error_s) * 100.
// Kinds where the baseline has zero total error are reported in
// skipped_kinds and excluded from the mean; if nothing remains, EvalError.
MceResult mce(const RobustnessReport& report, const RobustnessReport& baseline);

// Mean flipping rate: mean over sequences of
// (#consecutive-frame prediction changes) / (length - 1).
double mfr(const PredictFn& predict, const std::vector<PerturbationSequence>& sequences);

enum class Split { kClean, kShifted };

// Fraction of traces routed to the split-appropriate head (clean head for the
// clean split, unclean head for the shifted one).
double f_correct(const std::vector<SelectionResult>& traces, Split split);

// Linear probe on frozen features: trains a single dense layer and returns
// test accuracy. Deterministic given seed.
double transfer_probe(const std::function<Eigen::VectorXd(const Image&)>& feature_fn,
                      const Dataset& train, const Dataset& test, uint64_t seed);

struct TransferReport {
  std::string dataset;
  double probe_accuracy_original = 0.0;
  double probe_accuracy_distilled = 0.0;
  double delta = 0.0;
};

// ---------------------------------------------------------------------------
// Persisted evaluation records and ablation tables
// ---------------------------------------------------------------------------

struct EvalRecord {
  std::map<std::string, std::string> context;  // experiment, mode, selector, fraction, seed, ...
  RobustnessReport report;
  std::optional<TransferReport> transfer;
};

void write_eval_record(const EvalRecord& record, const std::string& path);
EvalRecord read_eval_record(const std::string& path);

struct AblationTable {
  struct Row {
    std::string label;
    std::map<std::string, std::optional<double>> cells;  // absent metric -> nullopt
  };
  std::vector<std::string> columns;
  std::vector<Row> rows;
  std::optional<Row> diff;  // present when the table compares exactly two runs
};

// One row per evaluation record found under the run directories
// (reports/eval_*.json); row order is stable under permutation of the input.
AblationTable ablation_table(const std::vector<std::string>& run_dirs);
AblationTable ablation_table_from_records(
    const std::vector<std::pair<std::string, EvalRecord>>& records);
std::string format_ablation_table(const AblationTable& table);

}  // namespace rkd
