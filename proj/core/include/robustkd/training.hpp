#pragma once

#include <optional>
#include <string>
#include <vector>

#include "robustkd/corruptions.hpp"
#include "robustkd/losses.hpp"
#include "robustkd/model.hpp"

namespace rkd {

enum class DistillMode { kOurs, kApt, kOnlyKd, kCombinedHead, kSingleTeacher, kNoKd };

DistillMode distill_mode_from_name(const std::string& name);
std::string distill_mode_name(DistillMode mode);
// apt / only_kd / combined_head train a single head; the rest use three.
int distill_mode_num_heads(DistillMode mode);

struct DistillConfig {
  double temperature = 2.0;
  double lambda_c = 1.0;
  double lambda_d = 1.0;
  double learning_rate = 1e-3;
  int batch_size = 64;
  int epochs = 30;
  double data_fraction = 1.0;  // a: deterministic subsample of the augmented data
  uint64_t seed = 0;
  DistillMode mode = DistillMode::kOurs;

  void validate() const;  // lambda_c + lambda_d > 0, temperature > 0, ...
};

// Running decomposition of the gated loss.
struct LossParts {
  double c_clean = 0.0;
  double d_clean = 0.0;
  double c_aug = 0.0;
  double d_aug = 0.0;
  double total() const { return c_clean + d_clean + c_aug + d_aug; }
  LossParts& operator+=(const LossParts& o);
  LossParts scaled(double s) const;
};

struct EpochLog {
  int epoch = 0;
  long step = 0;
  double lr = 0.0;
  LossParts parts;  // mean per example
  std::string mode;
};

struct TrainLog {
  std::vector<EpochLog> epochs;
  long steps = 0;
  bool warning_non_improving = false;
};

// Adam over an ordered list of trainable layers; moment buffers are created
// lazily on the first step, so optimizer state exists only for layers that
// actually train.
class AdamOptimizer {
 public:
  explicit AdamOptimizer(double lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
      : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {}

  void step(const std::vector<Layer*>& layers);
  long steps_taken() const { return t_; }
  size_t state_size() const { return m_.size(); }

 private:
  double lr_, beta1_, beta2_, eps_;
  long t_ = 0;
  std::vector<double> m_, v_;
};

// Training-loop state: step counter, optimizer moments over the tunable
// sections, running loss decomposition. Backbone layers never appear in
// `trainable`, so no optimizer state can exist for them.
struct TrainState {
  long step = 0;
  AdamOptimizer optimizer;
  LossParts running;
  std::vector<Layer*> trainable;
};

// ---------------------------------------------------------------------------
// Eq.-style losses on the multi-head model
// ---------------------------------------------------------------------------

// Clean-gate loss: lambda_c L_c + lambda_d L_d on the clean head plus the same
// pair on the combined head, both against the clean teacher. Requires
// beta == 1. With backprop=true the parameter gradients (scaled by `scale`)
// are accumulated into the tuned sections; the unclean head receives none.
double loss_clean(const AugmentedExample& ex, MultiHeadModel& model,
                  const TeacherHandle& clean_teacher, const DistillConfig& cfg,
                  const DropoutMode& dropout = DropoutMode::off(), bool backprop = false,
                  double scale = 1.0, LossParts* parts = nullptr);

// Mirror on the unclean and combined heads against the robust teacher;
// requires beta == 0. The clean head receives no gradient.
double loss_aug(const AugmentedExample& ex, MultiHeadModel& model,
                const TeacherHandle& robust_teacher, const DistillConfig& cfg,
                const DropoutMode& dropout = DropoutMode::off(), bool backprop = false,
                double scale = 1.0, LossParts* parts = nullptr);

// Batch mean of beta * L_clean + (1 - beta) * L_aug, beta read per example.
double loss_total(const std::vector<AugmentedExample>& batch, MultiHeadModel& model,
                  const TeacherHandle& clean_teacher, const TeacherHandle& robust_teacher,
                  const DistillConfig& cfg, const DropoutMode& dropout = DropoutMode::off(),
                  bool backprop = false, LossParts* parts = nullptr);

// ---------------------------------------------------------------------------
// Training loops
// ---------------------------------------------------------------------------

struct FitConfig {
  double learning_rate = 1e-3;
  int batch_size = 64;
  int epochs = 20;
  uint64_t seed = 0;
  std::string log_path;  // optional JSONL epoch log
};

// Plain cross-entropy supervised training of a full network (teacher
// robustification, student pretraining, linear probes).
TrainLog fit_classifier(LayerNet& net, const std::vector<Eigen::VectorXd>& inputs,
                        const std::vector<int>& labels, const FitConfig& cfg);

struct RobustifyStats {
  bool evaluated = false;
  double pre_accuracy = 0.0;   // input model on the corrupted holdout
  double post_accuracy = 0.0;  // robustified model on the corrupted holdout
  bool improved = true;
};

// Full fine-tune of the small model on the augmented dataset. When a
// corrupted holdout is supplied, the pre/post accuracies are recorded and a
// non-improving run is flagged as a warning (the handle is still returned).
TeacherHandle robustify_teacher(const LayerNet& small_model, const AugmentedDataset& data,
                                int epochs, uint64_t seed, double learning_rate = 1e-3,
                                int batch_size = 64, const Dataset* corrupted_holdout = nullptr,
                                RobustifyStats* stats = nullptr,
                                const std::string& log_path = "");

// Uncertainty-aware distillation loop. Updates only the shared section and
// the heads (the frozen backbone is forwarded once per example and cached).
// Mode selects the training scheme:
//   ours           three heads, beta-gated dual-teacher losses
//   apt            single head, cross-entropy only, clean+augmented data
//   only_kd        single head, CE + KD from the robust teacher everywhere
//   combined_head  single head, CE + beta-gated dual-teacher KD
//   single_teacher three heads, robust teacher for clean and augmented KD
//   no_kd          three heads, lambda_d forced to 0
// Throws TrainingError with a diagnostic snapshot on non-finite loss.
TrainLog distill(MultiHeadModel& model, const TeacherHandle& clean_teacher,
                 const TeacherHandle& robust_teacher, const AugmentedDataset& data,
                 const DistillConfig& cfg, const std::string& log_path = "", int threads = 1);

}  // namespace rkd
