#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include "test_support.hpp"

using namespace rkd;
using rkdtest::run_cli;
using rkdtest::TempDir;
using rkdtest::tiny_config_json;

namespace fs = std::filesystem;

namespace {

std::string write_config(const TempDir& tmp, const std::string& text,
                         const std::string& name = "config.json") {
  const std::string path = tmp.path() + "/" + name;
  std::ofstream(path) << text;
  return path;
}

RunConfig tiny_config(const TempDir& tmp, const std::vector<std::string>& overrides = {}) {
  return run_config_from_json_text(tiny_config_json(tmp.path() + "/runs"), overrides);
}

}  // namespace

// --- configuration ----------------------------------------------------------

TEST(RunConfigTest, ParsesTheTinyConfig) {
  TempDir tmp("cfg");
  const RunConfig cfg = tiny_config(tmp);
  EXPECT_EQ(cfg.experiment, "tiny");
  EXPECT_EQ(cfg.model.arch, "student20");
  EXPECT_EQ(cfg.distill.mode, DistillMode::kOurs);
  EXPECT_EQ(cfg.data.train.size, 120);
}

TEST(RunConfigTest, MissingFieldErrorNamesTheFieldPath) {
  TempDir tmp("cfg");
  std::string text = tiny_config_json(tmp.path());
  text.replace(text.find("\"name\": \"shapes10\""), 18, "\"nam\": \"shapes10\"");
  try {
    run_config_from_json_text(text);
    FAIL() << "expected ConfigError";
  } catch (const ConfigError& e) {
    EXPECT_EQ(e.field(), "data.train.nam");  // unknown-field check fires first
  }
}

TEST(RunConfigTest, BadValuesNameTheFieldPath) {
  TempDir tmp("cfg");
  try {
    tiny_config(tmp, {"data.train.name=\"unknown_ds\""});
    FAIL() << "expected ConfigError";
  } catch (const ConfigError& e) {
    EXPECT_EQ(e.field(), "data.train.name");
  }
  try {
    tiny_config(tmp, {"distill.mode=\"sideways\""});
    FAIL() << "expected ConfigError";
  } catch (const ConfigError& e) {
    EXPECT_EQ(e.field(), "distill");
  }
  try {
    tiny_config(tmp, {"evaluation.kinds=[\"not_real\"]"});
    FAIL() << "expected ConfigError";
  } catch (const ConfigError& e) {
    EXPECT_EQ(e.field(), "evaluation.kinds");
  }
}

TEST(RunConfigTest, OverridesApplyToLeaves) {
  TempDir tmp("cfg");
  const RunConfig cfg =
      tiny_config(tmp, {"distill.epochs=7", "partition.fraction_tuned=0.2", "distill.mode=\"apt\""});
  EXPECT_EQ(cfg.distill.epochs, 7);
  EXPECT_DOUBLE_EQ(cfg.partition.fraction_tuned, 0.2);
  EXPECT_EQ(cfg.distill.mode, DistillMode::kApt);
}

TEST(RunConfigTest, HashIgnoresOutputRootAndThreads) {
  TempDir tmp("cfg");
  const RunConfig a = tiny_config(tmp);
  RunConfig b = a;
  b.output_root = "/elsewhere";
  b.threads = 8;
  EXPECT_EQ(a.config_hash(), b.config_hash());
  RunConfig c = a;
  c.distill.epochs += 1;
  EXPECT_NE(a.config_hash(), c.config_hash());
  // Evaluation settings produce reports, not artifacts: same run directory.
  RunConfig d = a;
  d.evaluation.selector = "max_logit";
  EXPECT_EQ(a.config_hash(), d.config_hash());
  EXPECT_EQ(a.distill_config_hash(), d.distill_config_hash());
}

TEST(RunConfigTest, SubConfigHashesTrackTheirSlices) {
  TempDir tmp("cfg");
  const RunConfig a = tiny_config(tmp);
  RunConfig b = a;
  b.teacher.robust_epochs += 1;
  EXPECT_NE(a.teacher_config_hash(), b.teacher_config_hash());
  EXPECT_EQ(a.pretrain_config_hash(), b.pretrain_config_hash());
  RunConfig c = a;
  c.partition.fraction_tuned = 0.2;
  EXPECT_EQ(a.teacher_config_hash(), c.teacher_config_hash());
  EXPECT_EQ(a.pretrain_config_hash(), c.pretrain_config_hash());
  EXPECT_NE(a.distill_config_hash(), c.distill_config_hash());
}

TEST(RunConfigTest, EnvironmentVariableOverridesOutputRoot) {
  TempDir tmp("cfg");
  const RunConfig cfg = tiny_config(tmp);
  setenv(kOutputRootEnv, "/tmp/rkd_env_root", 1);
  EXPECT_EQ(cfg.effective_output_root(), "/tmp/rkd_env_root");
  unsetenv(kOutputRootEnv);
  EXPECT_EQ(cfg.effective_output_root(), tmp.path() + "/runs");
}

// --- command pipeline ---------------------------------------------------------

namespace {

// Shared tiny pipeline artifacts so the expensive steps run once.
struct Pipeline {
  TempDir tmp{"pipeline"};
  RunConfig cfg;
  std::string teacher_ckpt;
  std::string base_ckpt;
  std::string distilled_ckpt;

  Pipeline() : cfg(run_config_from_json_text(tiny_config_json(tmp.path() + "/runs"))) {
    teacher_ckpt = cmd_train_teacher(cfg);
    base_ckpt = cmd_pretrain(cfg);
    distilled_ckpt = cmd_distill(cfg, teacher_ckpt, base_ckpt);
  }
};

Pipeline& pipeline() {
  static Pipeline p;
  return p;
}

}  // namespace

TEST(CmdTrainTeacherTest, ProducesCheckpointLogsAndStats) {
  Pipeline& p = pipeline();
  EXPECT_TRUE(fs::exists(p.teacher_ckpt));
  const CheckpointMeta meta = peek_checkpoint_meta(p.teacher_ckpt);
  EXPECT_EQ(meta.kind, "classifier");
  EXPECT_EQ(meta.role, "teacher_robust");
  EXPECT_EQ(meta.config_hash, p.cfg.teacher_config_hash());
  const RunPaths paths = RunPaths::locate(p.cfg);
  EXPECT_TRUE(fs::exists(paths.reports / "teacher_stats.json"));
  EXPECT_TRUE(fs::exists(paths.logs / "teacher_robust.jsonl"));
  EXPECT_TRUE(fs::exists(paths.data / "manifest.jsonl"));
  EXPECT_TRUE(fs::exists(paths.root / "config.json"));
}

TEST(CmdDistillTest, ProducesThreeHeadCheckpointForOurs) {
  Pipeline& p = pipeline();
  const CheckpointMeta meta = peek_checkpoint_meta(p.distilled_ckpt);
  EXPECT_EQ(meta.kind, "multihead");
  EXPECT_EQ(meta.num_heads, 3);
  EXPECT_EQ(meta.role, "distilled:ours");
  EXPECT_EQ(meta.config_hash, p.cfg.distill_config_hash());
}

TEST(CmdDistillTest, AptModeProducesSingleHeadCheckpoint) {
  Pipeline& p = pipeline();
  RunConfig cfg = p.cfg;
  cfg.distill.mode = DistillMode::kApt;
  const std::string ckpt = cmd_distill(cfg, p.teacher_ckpt, p.base_ckpt);
  const CheckpointMeta meta = peek_checkpoint_meta(ckpt);
  EXPECT_EQ(meta.num_heads, 1);
  EXPECT_EQ(meta.role, "distilled:apt");
}

TEST(CmdDistillTest, ZeroEpochsKeepsHeadsEqualToTheBaseTail) {
  Pipeline& p = pipeline();
  RunConfig cfg = p.cfg;
  cfg.distill.epochs = 0;
  const std::string ckpt = cmd_distill(cfg, p.teacher_ckpt, p.base_ckpt);
  const MultiHeadModel model = load_multihead(ckpt);
  const LayerNet base = load_classifier(p.base_ckpt);
  const MultiHeadModel fresh = build_multihead(base, cfg.partition, cfg.distill.seed, 3);
  EXPECT_EQ(model.head(Head::kClean).serialize_params(),
            fresh.head(Head::kClean).serialize_params());
  EXPECT_EQ(model.shared().serialize_params(), fresh.shared().serialize_params());
}

TEST(CmdDistillTest, ClassSetMismatchRejected) {
  Pipeline& p = pipeline();
  // A teacher trained for a different class count.
  TempDir tmp("wrongteacher");
  LayerNet wrong = make_arch("teacher7", 7, 16);
  wrong.init_params(3);
  const std::string wrong_path = tmp.path() + "/teacher.ckpt";
  save_classifier(wrong, wrong_path, "h", 3, "teacher_robust");
  EXPECT_THROW(cmd_distill(p.cfg, wrong_path, p.base_ckpt), ValidationError);
}

TEST(CmdEvalTest, WritesRecordReportsAndPlots) {
  Pipeline& p = pipeline();
  const EvalOutputs out = cmd_eval(p.cfg, p.distilled_ckpt);
  EXPECT_TRUE(fs::exists(out.record_path));
  EXPECT_TRUE(out.record.report.f_correct_clean.has_value());
  EXPECT_TRUE(out.record.report.f_correct_shifted.has_value());
  EXPECT_TRUE(out.record.report.mfr.has_value());
  EXPECT_EQ(out.record.report.per_corruption.size(), 2u);
  const RunPaths paths = RunPaths::locate(p.cfg);
  EXPECT_TRUE(fs::exists(paths.reports / "eval_full.txt"));
  EXPECT_TRUE(fs::exists(paths.plots / "severity_full.svg"));
  EXPECT_TRUE(fs::exists(paths.plots / "head_usage_full.svg"));
  const EvalRecord back = read_eval_record(out.record_path);
  EXPECT_EQ(back.context.at("selector"), "full");
}

TEST(CmdEvalTest, SingleHeadCheckpointHasNoFCorrect) {
  Pipeline& p = pipeline();
  RunConfig cfg = p.cfg;
  cfg.distill.mode = DistillMode::kApt;
  const std::string ckpt = cmd_distill(cfg, p.teacher_ckpt, p.base_ckpt);
  const EvalOutputs out = cmd_eval(cfg, ckpt);
  EXPECT_FALSE(out.record.report.f_correct_clean.has_value());
  EXPECT_FALSE(out.record.report.f_correct_shifted.has_value());
  EXPECT_EQ(out.record.context.at("selector"), "argmax");
}

TEST(CmdEvalTest, RefusesArchitectureMismatch) {
  Pipeline& p = pipeline();
  RunConfig cfg = p.cfg;
  cfg.partition.fraction_tuned = 0.2;  // does not match the checkpoint partition
  EXPECT_THROW(cmd_eval(cfg, p.distilled_ckpt), ConfigError);
}

TEST(CmdEvalTest, TeacherCheckpointIsEvaluable) {
  Pipeline& p = pipeline();
  const EvalOutputs out = cmd_eval(p.cfg, p.teacher_ckpt);
  EXPECT_GT(out.record.report.clean_accuracy, 0.0);
  EXPECT_EQ(out.record.context.at("checkpoint_role"), "teacher_robust");
}

TEST(CmdEvalTest, MceAgainstSelfIsHundredAndTransferReportsAppear) {
  Pipeline& p = pipeline();
  const EvalOutputs first = cmd_eval(p.cfg, p.distilled_ckpt);
  RunConfig cfg = p.cfg;
  cfg.evaluation.baseline_report = first.record_path;
  cfg.evaluation.transfer = true;
  cfg.evaluation.baseline_checkpoint = p.base_ckpt;
  const EvalOutputs second = cmd_eval(cfg, p.distilled_ckpt);
  ASSERT_TRUE(second.record.report.mce.has_value());
  EXPECT_DOUBLE_EQ(*second.record.report.mce, 100.0);
  ASSERT_TRUE(second.record.transfer.has_value());
  EXPECT_EQ(second.record.transfer->dataset, "glyphs5");
  EXPECT_NEAR(second.record.transfer->delta,
              second.record.transfer->probe_accuracy_distilled -
                  second.record.transfer->probe_accuracy_original,
              1e-12);
}

// --- determinism ----------------------------------------------------------------

TEST(DeterminismTest, CommandsAreByteIdenticalAcrossReruns) {
  TempDir tmp("det");
  const RunConfig cfg_a =
      run_config_from_json_text(tiny_config_json(tmp.path() + "/rootA"));
  const RunConfig cfg_b =
      run_config_from_json_text(tiny_config_json(tmp.path() + "/rootB"));
  ASSERT_EQ(cfg_a.config_hash(), cfg_b.config_hash());

  const std::string teacher_a = cmd_train_teacher(cfg_a);
  const std::string teacher_b = cmd_train_teacher(cfg_b);
  EXPECT_TRUE(rkdtest::files_byte_equal(teacher_a, teacher_b));

  const std::string base_a = cmd_pretrain(cfg_a);
  const std::string base_b = cmd_pretrain(cfg_b);
  EXPECT_TRUE(rkdtest::files_byte_equal(base_a, base_b));

  const std::string dist_a = cmd_distill(cfg_a, teacher_a, base_a);
  const std::string dist_b = cmd_distill(cfg_b, teacher_b, base_b);
  EXPECT_TRUE(rkdtest::files_byte_equal(dist_a, dist_b));

  const EvalOutputs eval_a = cmd_eval(cfg_a, dist_a);
  const EvalOutputs eval_b = cmd_eval(cfg_b, dist_b);
  EXPECT_TRUE(rkdtest::files_byte_equal(eval_a.record_path, eval_b.record_path));

  const RunPaths pa = RunPaths::locate(cfg_a);
  const RunPaths pb = RunPaths::locate(cfg_b);
  for (const std::string rel :
       {"logs/distill.jsonl", "data/manifest.jsonl", "reports/eval_full.txt",
        "plots/severity_full.svg"})
    EXPECT_TRUE(rkdtest::files_byte_equal((pa.root / rel).string(), (pb.root / rel).string()))
        << rel;
}

// --- ablate ----------------------------------------------------------------------

TEST(CmdAblateTest, TwoByOneSubsetProducesBaselinePlusRows) {
  TempDir tmp("ablate");
  RunConfig cfg = run_config_from_json_text(tiny_config_json(tmp.path() + "/runs"));
  cfg.ablate.modes = {"ours", "apt"};
  cfg.ablate.selectors = {"full", "max_logit"};
  cfg.ablate.fractions = {0.1};
  cfg.ablate.seeds = {3};

  const AblateOutputs out = cmd_ablate(cfg);
  // baseline row + ours x {full, max_logit} + apt x {argmax}.
  ASSERT_EQ(out.table.rows.size(), 4u);
  EXPECT_TRUE(fs::exists(out.table_path));
  const RunPaths paths = RunPaths::locate(cfg);
  EXPECT_TRUE(fs::exists(paths.reports / "ablation.json"));
  EXPECT_TRUE(fs::exists(paths.plots / "ablation_shifted_acc.svg"));

  // mCE exists for non-baseline rows and is exactly 100 for the baseline row
  // evaluated against itself elsewhere; here baseline row carries no mce.
  int with_mce = 0;
  for (const auto& row : out.table.rows)
    if (row.cells.at("mce").has_value()) ++with_mce;
  EXPECT_EQ(with_mce, 3);
}

TEST(CmdAblateTest, SecondInvocationHitsTheCache) {
  TempDir tmp("ablate2");
  RunConfig cfg = run_config_from_json_text(tiny_config_json(tmp.path() + "/runs"));
  cfg.ablate.modes = {"ours"};
  cfg.ablate.selectors = {"full"};
  cfg.ablate.fractions = {0.1};
  cfg.ablate.seeds = {3};
  const AblateOutputs first = cmd_ablate(cfg);

  // Capture stdout of the second run to confirm cache hits skip retraining.
  testing::internal::CaptureStdout();
  const AblateOutputs second = cmd_ablate(cfg);
  const std::string log = testing::internal::GetCapturedStdout();
  EXPECT_NE(log.find("cache hit"), std::string::npos);
  EXPECT_EQ(first.table.rows.size(), second.table.rows.size());
}

// --- process-level checks ---------------------------------------------------------

TEST(CliProcessTest, MissingConfigFileExitsWithConfigError) {
  const auto result = run_cli({"eval", "--config", "/nonexistent.json", "--checkpoint", "x"});
  EXPECT_EQ(result.exit_code, 2);
  EXPECT_NE(result.output.find("cannot open config file"), std::string::npos);
}

TEST(CliProcessTest, BadFieldExitsWithConfigErrorNamingField) {
  TempDir tmp("cli");
  const std::string path =
      write_config(tmp, tiny_config_json(tmp.path() + "/runs"), "bad.json");
  const auto result =
      run_cli({"pretrain", "--config", path, "--set", "data.train.size=-5"});
  EXPECT_EQ(result.exit_code, 2);
  EXPECT_NE(result.output.find("data.train.size"), std::string::npos);
}

TEST(CliProcessTest, PretrainSmokeRunSucceeds) {
  TempDir tmp("cli");
  const std::string path = write_config(tmp, tiny_config_json(tmp.path() + "/runs"));
  const auto result = run_cli({"pretrain", "--config", path, "--set", "pretrain.epochs=1"});
  EXPECT_EQ(result.exit_code, 0);
  EXPECT_NE(result.output.find("pretrained checkpoint:"), std::string::npos);
}

TEST(CliProcessTest, ReportCommandFormatsRunDirectories) {
  Pipeline& p = pipeline();
  cmd_eval(p.cfg, p.distilled_ckpt);
  const RunPaths paths = RunPaths::locate(p.cfg);
  const auto result = run_cli({"report", "--runs", paths.root.string()});
  EXPECT_EQ(result.exit_code, 0);
  EXPECT_NE(result.output.find("clean_acc"), std::string::npos);
}
