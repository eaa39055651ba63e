// rkd: experiment driver for the robustness-distillation toolkit.
//
// Subcommands compose the library into reproducible runs:
//   train-teacher  robustify the small teacher on augmented data
//   pretrain       supervised pretraining of the base (student) classifier
//   distill        multi-head distillation in the configured mode
//   eval           robustness / transfer evaluation of a checkpoint
//   ablate         mode x fraction x seed x selector sweep with caching
//   report         comparison table over existing run directories
//
// Exit codes: 0 success, 2 config error, 3 training failure, 4 evaluation
// failure.

#include <cstdio>
#include <exception>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "robustkd/run.hpp"

namespace {

enum ExitCode { kOk = 0, kGeneric = 1, kConfigError = 2, kTrainingError = 3, kEvalError = 4 };

rkd::RunConfig load(const std::string& config_path, const std::vector<std::string>& overrides) {
  return rkd::load_run_config(config_path, overrides);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"robustness distillation toolkit"};
  app.require_subcommand(1);

  std::string config_path;
  std::vector<std::string> overrides;
  std::string teacher_ckpt, base_ckpt, checkpoint, out_path;
  std::vector<std::string> run_dirs;

  auto add_config_options = [&](CLI::App* cmd) {
    cmd->add_option("-c,--config", config_path, "run configuration file (JSON)")->required();
    cmd->add_option("--set", overrides,
                    "override a config leaf via a dotted path, e.g. --set distill.epochs=5");
  };

  CLI::App* train_teacher = app.add_subcommand("train-teacher", "robustify the small teacher");
  add_config_options(train_teacher);

  CLI::App* pretrain = app.add_subcommand("pretrain", "pretrain the base classifier on clean data");
  add_config_options(pretrain);

  CLI::App* distill = app.add_subcommand("distill", "run multi-head distillation");
  add_config_options(distill);
  distill->add_option("--teacher", teacher_ckpt, "robust teacher checkpoint")->required();
  distill->add_option("--base", base_ckpt, "pretrained base model checkpoint")->required();

  CLI::App* eval = app.add_subcommand("eval", "evaluate a checkpoint");
  add_config_options(eval);
  eval->add_option("--checkpoint", checkpoint, "checkpoint to evaluate")->required();

  CLI::App* ablate = app.add_subcommand("ablate", "run the ablation sweep");
  add_config_options(ablate);

  CLI::App* report = app.add_subcommand("report", "format a comparison table over run dirs");
  report->add_option("--runs", run_dirs, "run directories")->required();
  report->add_option("-o,--out", out_path, "write the table to this file");

  CLI11_PARSE(app, argc, argv);

  try {
    if (train_teacher->parsed()) {
      rkd::cmd_train_teacher(load(config_path, overrides));
    } else if (pretrain->parsed()) {
      rkd::cmd_pretrain(load(config_path, overrides));
    } else if (distill->parsed()) {
      rkd::cmd_distill(load(config_path, overrides), teacher_ckpt, base_ckpt);
    } else if (eval->parsed()) {
      rkd::cmd_eval(load(config_path, overrides), checkpoint);
    } else if (ablate->parsed()) {
      rkd::cmd_ablate(load(config_path, overrides));
    } else if (report->parsed()) {
      rkd::cmd_report(run_dirs, out_path);
    }
  } catch (const rkd::ConfigError& e) {
    fprintf(stderr, "error: %s\n", e.what());
    return kConfigError;
  } catch (const rkd::TrainingError& e) {
    fprintf(stderr, "error: %s\n", e.what());
    return kTrainingError;
  } catch (const rkd::EvalError& e) {
    fprintf(stderr, "error: %s\n", e.what());
    return kEvalError;
  } catch (const rkd::ValidationError& e) {
    fprintf(stderr, "error: %s\n", e.what());
    return kConfigError;
  } catch (const std::exception& e) {
    fprintf(stderr, "error: %s\n", e.what());
    return kGeneric;
  }
  return kOk;
}
