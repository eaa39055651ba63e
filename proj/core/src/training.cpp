#include "robustkd/training.hpp"

#include <cmath>
#include <fstream>

#include <nlohmann/json.hpp>

#include "robustkd/parallel.hpp"

namespace rkd {

using nlohmann::json;

// ---------------------------------------------------------------------------
// Modes and config
// ---------------------------------------------------------------------------

DistillMode distill_mode_from_name(const std::string& name) {
  if (name == "ours") return DistillMode::kOurs;
  if (name == "apt") return DistillMode::kApt;
  if (name == "only_kd") return DistillMode::kOnlyKd;
  if (name == "combined_head") return DistillMode::kCombinedHead;
  if (name == "single_teacher") return DistillMode::kSingleTeacher;
  if (name == "no_kd") return DistillMode::kNoKd;
  throw ValidationError("unknown distill mode: " + name);
}

std::string distill_mode_name(DistillMode mode) {
  switch (mode) {
    case DistillMode::kOurs: return "ours";
    case DistillMode::kApt: return "apt";
    case DistillMode::kOnlyKd: return "only_kd";
    case DistillMode::kCombinedHead: return "combined_head";
    case DistillMode::kSingleTeacher: return "single_teacher";
    case DistillMode::kNoKd: return "no_kd";
  }
  throw ValidationError("bad distill mode");
}

int distill_mode_num_heads(DistillMode mode) {
  switch (mode) {
    case DistillMode::kApt:
    case DistillMode::kOnlyKd:
    case DistillMode::kCombinedHead: return 1;
    default: return 3;
  }
}

void DistillConfig::validate() const {
  if (!(temperature > 0.0)) throw ValidationError("distill: temperature must be > 0");
  if (lambda_c < 0.0 || lambda_d < 0.0) throw ValidationError("distill: negative loss weight");
  if (lambda_c + lambda_d <= 0.0)
    throw ValidationError("distill: lambda_c + lambda_d must be > 0");
  if (!(learning_rate > 0.0)) throw ValidationError("distill: learning_rate must be > 0");
  if (batch_size < 1) throw ValidationError("distill: batch_size must be >= 1");
  if (epochs < 0) throw ValidationError("distill: epochs must be >= 0");
  if (!(data_fraction > 0.0 && data_fraction <= 1.0))
    throw ValidationError("distill: data_fraction must be in (0, 1]");
}

LossParts& LossParts::operator+=(const LossParts& o) {
  c_clean += o.c_clean;
  d_clean += o.d_clean;
  c_aug += o.c_aug;
  d_aug += o.d_aug;
  return *this;
}

LossParts LossParts::scaled(double s) const {
  return {c_clean * s, d_clean * s, c_aug * s, d_aug * s};
}

// ---------------------------------------------------------------------------
// Adam
// ---------------------------------------------------------------------------

void AdamOptimizer::step(const std::vector<Layer*>& layers) {
  size_t total = 0;
  for (const Layer* l : layers) total += l->param_count();
  if (m_.size() != total) {
    m_.assign(total, 0.0);
    v_.assign(total, 0.0);
  }
  ++t_;
  const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  size_t i = 0;
  for (Layer* l : layers) {
    l->for_each_param([&](double& p, double& g) {
      m_[i] = beta1_ * m_[i] + (1.0 - beta1_) * g;
      v_[i] = beta2_ * v_[i] + (1.0 - beta2_) * g * g;
      const double mhat = m_[i] / bc1;
      const double vhat = v_[i] / bc2;
      p -= lr_ * mhat / (std::sqrt(vhat) + eps_);
      ++i;
    });
  }
}

// ---------------------------------------------------------------------------
// Per-example losses on cached backbone features
// ---------------------------------------------------------------------------

namespace {

struct HeadEval {
  Eigen::VectorXd logits;
  MultiHeadModel::SectionPass pass;
};

// Forward through shared + one head with a common shared pass; returns logits.
// Dropout masks are drawn from `rng` in a fixed order (shared first, then
// heads in call order) so value-only and backprop paths see identical masks.
Eigen::VectorXd forward_one_head(const MultiHeadModel& model, const Eigen::VectorXd& shared_out,
                                 Head head, Rng* rng, MultiHeadModel::SectionPass& pass) {
  return model.head_forward_train(shared_out, head, rng, pass);
}

// lambda_c * CE + lambda_d * KD gradient on the logits.
Eigen::VectorXd logit_grad(const Eigen::VectorXd& logits, int label,
                           const Eigen::VectorXd* teacher_logits, const DistillConfig& cfg) {
  Eigen::VectorXd g = Eigen::VectorXd::Zero(logits.size());
  if (cfg.lambda_c > 0.0) g += cfg.lambda_c * classification_loss_grad(logits, label);
  if (cfg.lambda_d > 0.0 && teacher_logits != nullptr)
    g += cfg.lambda_d * distillation_loss_grad(logits, *teacher_logits, cfg.temperature);
  return g;
}

// Gated pair loss (primary head + combined head against one teacher).
double pair_loss_features(MultiHeadModel& model, const Eigen::VectorXd& features, int label,
                          const Eigen::VectorXd* teacher_logits, Head primary,
                          const DistillConfig& cfg, Rng* dropout_rng, bool backprop, double scale,
                          LossParts* parts) {
  MultiHeadModel::SectionPass shared_pass;
  const Eigen::VectorXd shared_out = model.shared_forward_train(features, dropout_rng, shared_pass);

  HeadEval primary_eval, combined_eval;
  primary_eval.logits = forward_one_head(model, shared_out, primary, dropout_rng,
                                         primary_eval.pass);
  combined_eval.logits = forward_one_head(model, shared_out, Head::kCombined, dropout_rng,
                                          combined_eval.pass);

  double ce = 0.0, kd = 0.0;
  if (cfg.lambda_c > 0.0)
    ce = cfg.lambda_c *
         (classification_loss(primary_eval.logits, label) +
          classification_loss(combined_eval.logits, label));
  if (cfg.lambda_d > 0.0 && teacher_logits != nullptr)
    kd = cfg.lambda_d *
         (distillation_loss(primary_eval.logits, *teacher_logits, cfg.temperature) +
          distillation_loss(combined_eval.logits, *teacher_logits, cfg.temperature));

  if (parts) {
    if (primary == Head::kClean) {
      parts->c_clean += scale * ce;
      parts->d_clean += scale * kd;
    } else {
      parts->c_aug += scale * ce;
      parts->d_aug += scale * kd;
    }
  }

  if (backprop) {
    const Eigen::VectorXd gp = scale * logit_grad(primary_eval.logits, label, teacher_logits, cfg);
    const Eigen::VectorXd gm =
        scale * logit_grad(combined_eval.logits, label, teacher_logits, cfg);
    Eigen::VectorXd dshared = model.head_backward(gp, primary, primary_eval.pass);
    dshared += model.head_backward(gm, Head::kCombined, combined_eval.pass);
    model.shared_backward(dshared, shared_pass);
  }
  return ce + kd;
}

// Single-head loss for the apt / only_kd / combined_head baselines.
double single_loss_features(MultiHeadModel& model, const Eigen::VectorXd& features, int label,
                            const Eigen::VectorXd* teacher_logits, bool clean_example,
                            const DistillConfig& cfg, Rng* dropout_rng, bool backprop,
                            double scale, LossParts* parts) {
  MultiHeadModel::SectionPass shared_pass;
  const Eigen::VectorXd shared_out = model.shared_forward_train(features, dropout_rng, shared_pass);
  HeadEval eval;
  eval.logits = forward_one_head(model, shared_out, Head::kClean, dropout_rng, eval.pass);

  double ce = 0.0, kd = 0.0;
  if (cfg.lambda_c > 0.0) ce = cfg.lambda_c * classification_loss(eval.logits, label);
  if (cfg.lambda_d > 0.0 && teacher_logits != nullptr)
    kd = cfg.lambda_d * distillation_loss(eval.logits, *teacher_logits, cfg.temperature);

  if (parts) {
    if (clean_example) {
      parts->c_clean += scale * ce;
      parts->d_clean += scale * kd;
    } else {
      parts->c_aug += scale * ce;
      parts->d_aug += scale * kd;
    }
  }
  if (backprop) {
    const Eigen::VectorXd g = scale * logit_grad(eval.logits, label, teacher_logits, cfg);
    model.shared_backward(model.head_backward(g, Head::kClean, eval.pass), shared_pass);
  }
  return ce + kd;
}

void require_three_heads(const MultiHeadModel& model, const char* what) {
  if (!model.three_headed())
    throw ValidationError(std::string(what) + ": model must have three heads");
}

void require_frozen_teacher(const TeacherHandle& t, const char* what) {
  if (!t.model.frozen())
    throw ValidationError(std::string(what) + ": teacher must be frozen");
}

}  // namespace

double loss_clean(const AugmentedExample& ex, MultiHeadModel& model,
                  const TeacherHandle& clean_teacher, const DistillConfig& cfg,
                  const DropoutMode& dropout, bool backprop, double scale, LossParts* parts) {
  cfg.validate();
  require_three_heads(model, "loss_clean");
  if (ex.beta != 1)
    throw ValidationError("loss_clean: contract violation, example has beta == 0");
  if (backprop && !model.tuned())
    throw ValidationError("loss_clean: cannot backprop through a fully frozen model");
  const Eigen::VectorXd x = to_chw(ex.input);
  const Eigen::VectorXd features = model.backbone_forward(x);
  Eigen::VectorXd teacher;
  const Eigen::VectorXd* teacher_ptr = nullptr;
  if (cfg.lambda_d > 0.0) {
    require_frozen_teacher(clean_teacher, "loss_clean");
    teacher = clean_teacher.logits(x);
    teacher_ptr = &teacher;
  }
  std::optional<Rng> rng;
  if (dropout.stochastic) rng.emplace(dropout.seed);
  return pair_loss_features(model, features, ex.label, teacher_ptr, Head::kClean, cfg,
                            rng ? &*rng : nullptr, backprop, scale, parts);
}

double loss_aug(const AugmentedExample& ex, MultiHeadModel& model,
                const TeacherHandle& robust_teacher, const DistillConfig& cfg,
                const DropoutMode& dropout, bool backprop, double scale, LossParts* parts) {
  cfg.validate();
  require_three_heads(model, "loss_aug");
  if (ex.beta != 0)
    throw ValidationError("loss_aug: contract violation, example has beta == 1");
  if (backprop && !model.tuned())
    throw ValidationError("loss_aug: cannot backprop through a fully frozen model");
  const Eigen::VectorXd x = to_chw(ex.input);
  const Eigen::VectorXd features = model.backbone_forward(x);
  Eigen::VectorXd teacher;
  const Eigen::VectorXd* teacher_ptr = nullptr;
  if (cfg.lambda_d > 0.0) {
    require_frozen_teacher(robust_teacher, "loss_aug");
    teacher = robust_teacher.logits(x);
    teacher_ptr = &teacher;
  }
  std::optional<Rng> rng;
  if (dropout.stochastic) rng.emplace(dropout.seed);
  return pair_loss_features(model, features, ex.label, teacher_ptr, Head::kUnclean, cfg,
                            rng ? &*rng : nullptr, backprop, scale, parts);
}

double loss_total(const std::vector<AugmentedExample>& batch, MultiHeadModel& model,
                  const TeacherHandle& clean_teacher, const TeacherHandle& robust_teacher,
                  const DistillConfig& cfg, const DropoutMode& dropout, bool backprop,
                  LossParts* parts) {
  cfg.validate();
  require_three_heads(model, "loss_total");
  if (batch.empty()) throw ValidationError("loss_total: batch is empty");
  const double scale = 1.0 / static_cast<double>(batch.size());
  double acc = 0.0;
  for (size_t i = 0; i < batch.size(); ++i) {
    const DropoutMode mode = dropout.stochastic
                                 ? DropoutMode::with_seed(mix_seed(dropout.seed, i))
                                 : DropoutMode::off();
    if (batch[i].beta == 1)
      acc += scale * loss_clean(batch[i], model, clean_teacher, cfg, mode, backprop, scale, parts);
    else
      acc += scale * loss_aug(batch[i], model, robust_teacher, cfg, mode, backprop, scale, parts);
  }
  return acc;
}

// ---------------------------------------------------------------------------
// fit_classifier
// ---------------------------------------------------------------------------

namespace {

void append_epoch_log(std::ofstream* out, const EpochLog& e) {
  if (!out || !out->is_open()) return;
  json rec;
  rec["epoch"] = e.epoch;
  rec["step"] = e.step;
  rec["lr"] = e.lr;
  rec["loss_c_clean"] = e.parts.c_clean;
  rec["loss_d_clean"] = e.parts.d_clean;
  rec["loss_c_aug"] = e.parts.c_aug;
  rec["loss_d_aug"] = e.parts.d_aug;
  rec["mode"] = e.mode;
  *out << rec.dump() << "\n";
}

}  // namespace

TrainLog fit_classifier(LayerNet& net, const std::vector<Eigen::VectorXd>& inputs,
                        const std::vector<int>& labels, const FitConfig& cfg) {
  if (inputs.size() != labels.size() || inputs.empty())
    throw ValidationError("fit_classifier: empty or mismatched dataset");
  net.check_mutable("fit_classifier");

  std::vector<Layer*> trainable;
  net.for_each_trainable([&](Layer& l) { trainable.push_back(&l); });
  AdamOptimizer opt(cfg.learning_rate);

  std::ofstream log;
  if (!cfg.log_path.empty()) log.open(cfg.log_path);

  TrainLog out;
  std::vector<int> order(inputs.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
  Rng shuffle_rng(mix_seed(cfg.seed, 0x50FF1EULL));
  long step = 0;

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    shuffle_rng.shuffle(order);
    double loss_sum = 0.0;
    for (size_t start = 0; start < order.size(); start += static_cast<size_t>(cfg.batch_size)) {
      const size_t end = std::min(order.size(), start + static_cast<size_t>(cfg.batch_size));
      const double scale = 1.0 / static_cast<double>(end - start);
      for (auto& l : trainable) l->zero_grads();
      double batch_loss = 0.0;
      for (size_t k = start; k < end; ++k) {
        const auto i = static_cast<size_t>(order[k]);
        std::vector<LayerCtx> ctxs;
        const Eigen::VectorXd logits = net.forward_collect(inputs[i], ctxs);
        batch_loss += scale * classification_loss(logits, labels[i]);
        Eigen::VectorXd dy = scale * classification_loss_grad(logits, labels[i]);
        for (int li = net.depth() - 1; li >= 0; --li)
          dy = net.layer(li).backward(dy, ctxs[static_cast<size_t>(li)]);
      }
      if (!std::isfinite(batch_loss))
        throw TrainingError("fit_classifier: non-finite loss at epoch " + std::to_string(epoch) +
                            ", step " + std::to_string(step));
      opt.step(trainable);
      ++step;
      loss_sum += batch_loss * static_cast<double>(end - start);
    }
    EpochLog e;
    e.epoch = epoch;
    e.step = step;
    e.lr = cfg.learning_rate;
    e.parts.c_clean = loss_sum / static_cast<double>(inputs.size());
    e.mode = "fit";
    append_epoch_log(log.is_open() ? &log : nullptr, e);
    out.epochs.push_back(e);
  }
  out.steps = step;
  return out;
}

// ---------------------------------------------------------------------------
// robustify_teacher
// ---------------------------------------------------------------------------

TeacherHandle robustify_teacher(const LayerNet& small_model, const AugmentedDataset& data,
                                int epochs, uint64_t seed, double learning_rate, int batch_size,
                                const Dataset* corrupted_holdout, RobustifyStats* stats,
                                const std::string& log_path) {
  if (data.empty()) throw ValidationError("robustify_teacher: empty dataset");

  auto holdout_accuracy = [&](const LayerNet& net) {
    size_t correct = 0;
    for (size_t i = 0; i < corrupted_holdout->size(); ++i) {
      const Eigen::VectorXd logits = net.forward(to_chw(corrupted_holdout->images[i]));
      Eigen::Index argmax;
      logits.maxCoeff(&argmax);
      if (static_cast<int>(argmax) == corrupted_holdout->labels[i]) ++correct;
    }
    return static_cast<double>(correct) / static_cast<double>(corrupted_holdout->size());
  };

  RobustifyStats local;
  if (corrupted_holdout && !corrupted_holdout->empty()) {
    local.evaluated = true;
    local.pre_accuracy = holdout_accuracy(small_model);
  }

  LayerNet net = small_model;  // full fine-tune: every parameter trains
  std::vector<Eigen::VectorXd> xs;
  std::vector<int> ys;
  xs.reserve(data.size());
  ys.reserve(data.size());
  for (const auto& ex : data) {
    xs.push_back(to_chw(ex.input));
    ys.push_back(ex.label);
  }
  FitConfig fit;
  fit.learning_rate = learning_rate;
  fit.batch_size = batch_size;
  fit.epochs = epochs;
  fit.seed = seed;
  fit.log_path = log_path;
  fit_classifier(net, xs, ys, fit);

  if (local.evaluated) {
    local.post_accuracy = holdout_accuracy(net);
    local.improved = local.post_accuracy > local.pre_accuracy;
    if (!local.improved)
      fprintf(stderr, "warning: robustify_teacher did not improve corrupted accuracy "
                      "(%.4f -> %.4f) after %d epochs\n",
              local.pre_accuracy, local.post_accuracy, epochs);
  }
  if (stats) *stats = local;

  TeacherHandle handle;
  handle.kind = TeacherHandle::Kind::kRobustSmall;
  handle.model = std::move(net);
  handle.model.set_frozen(true);
  return handle;
}

// ---------------------------------------------------------------------------
// distill
// ---------------------------------------------------------------------------

TrainLog distill(MultiHeadModel& model, const TeacherHandle& clean_teacher,
                 const TeacherHandle& robust_teacher, const AugmentedDataset& data,
                 const DistillConfig& cfg, const std::string& log_path, int threads) {
  cfg.validate();
  if (data.empty()) throw ValidationError("distill: empty dataset");
  if (model.num_heads() != distill_mode_num_heads(cfg.mode))
    throw ValidationError("distill: mode '" + distill_mode_name(cfg.mode) + "' needs " +
                          std::to_string(distill_mode_num_heads(cfg.mode)) +
                          " heads, model has " + std::to_string(model.num_heads()));

  DistillConfig eff = cfg;
  if (cfg.mode == DistillMode::kNoKd) eff.lambda_d = 0.0;
  if (cfg.mode == DistillMode::kApt) eff.lambda_d = 0.0;

  const bool need_clean_teacher =
      eff.lambda_d > 0.0 &&
      (cfg.mode == DistillMode::kOurs || cfg.mode == DistillMode::kCombinedHead);
  const bool need_robust_teacher =
      eff.lambda_d > 0.0 &&
      (cfg.mode == DistillMode::kOurs || cfg.mode == DistillMode::kOnlyKd ||
       cfg.mode == DistillMode::kCombinedHead || cfg.mode == DistillMode::kSingleTeacher);
  if (need_clean_teacher) {
    require_frozen_teacher(clean_teacher, "distill");
    if (clean_teacher.model.output_shape().flat() != model.num_classes())
      throw ValidationError("distill: clean teacher class set does not match the student");
  }
  if (need_robust_teacher) {
    require_frozen_teacher(robust_teacher, "distill");
    if (robust_teacher.model.output_shape().flat() != model.num_classes())
      throw ValidationError("distill: robust teacher class set does not match the student");
  }

  const AugmentedDataset subset = take_fraction(data, cfg.data_fraction, mix_seed(cfg.seed, 0xDA7AULL));
  const int n = static_cast<int>(subset.size());

  std::ofstream log;
  if (!log_path.empty()) log.open(log_path);

  TrainLog out;
  if (cfg.epochs == 0 || !model.tuned() || model.trainable_param_count() == 0) {
    out.steps = 0;
    return out;  // nothing to update; parameters stay untouched
  }

  // The backbone is frozen, so its forward pass (and the teachers' logits,
  // computed dropout-off) are cached once for the whole run.
  const auto features = ordered_parallel_map<Eigen::VectorXd>(n, threads, [&](int i) {
    return model.backbone_forward(to_chw(subset[static_cast<size_t>(i)].input));
  });
  std::vector<Eigen::VectorXd> clean_logits, robust_logits;
  if (need_clean_teacher)
    clean_logits = ordered_parallel_map<Eigen::VectorXd>(n, threads, [&](int i) {
      return clean_teacher.logits(to_chw(subset[static_cast<size_t>(i)].input));
    });
  if (need_robust_teacher)
    robust_logits = ordered_parallel_map<Eigen::VectorXd>(n, threads, [&](int i) {
      return robust_teacher.logits(to_chw(subset[static_cast<size_t>(i)].input));
    });

  std::vector<Layer*> trainable;
  model.for_each_trainable_layer([&](Layer& l) { trainable.push_back(&l); });
  TrainState state{0, AdamOptimizer(eff.learning_rate), {}, trainable};

  std::vector<int> order(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i) order[static_cast<size_t>(i)] = i;
  Rng shuffle_rng(mix_seed(cfg.seed, 0x50FF1EULL));
  Rng dropout_rng(mix_seed(cfg.seed, 0xD120ULL));

  auto abort_training = [&](int epoch, long step, const LossParts& parts,
                            const std::string& why) -> void {
    if (log.is_open()) {
      json diag;
      diag["event"] = "training_aborted";
      diag["why"] = why;
      diag["epoch"] = epoch;
      diag["step"] = step;
      diag["loss_c_clean"] = parts.c_clean;
      diag["loss_d_clean"] = parts.d_clean;
      diag["loss_c_aug"] = parts.c_aug;
      diag["loss_d_aug"] = parts.d_aug;
      log << diag.dump() << "\n";
      log.flush();
    }
    throw TrainingError("distill: " + why + " at epoch " + std::to_string(epoch) + ", step " +
                        std::to_string(step) + " (diagnostic snapshot " +
                        (log_path.empty() ? "unavailable" : "appended to " + log_path) + ")");
  };

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    shuffle_rng.shuffle(order);
    LossParts epoch_parts;
    for (size_t start = 0; start < order.size(); start += static_cast<size_t>(cfg.batch_size)) {
      const size_t end = std::min(order.size(), start + static_cast<size_t>(cfg.batch_size));
      const double scale = 1.0 / static_cast<double>(end - start);
      model.zero_grads();
      double batch_loss = 0.0;
      LossParts batch_parts;
      for (size_t k = start; k < end; ++k) {
        const auto i = static_cast<size_t>(order[k]);
        const auto& ex = subset[i];
        const bool clean = ex.beta == 1;
        const Eigen::VectorXd* teacher = nullptr;
        switch (cfg.mode) {
          case DistillMode::kOurs:
            teacher = eff.lambda_d > 0.0 ? (clean ? &clean_logits[i] : &robust_logits[i]) : nullptr;
            break;
          case DistillMode::kSingleTeacher:
            teacher = eff.lambda_d > 0.0 ? &robust_logits[i] : nullptr;
            break;
          case DistillMode::kOnlyKd: teacher = &robust_logits[i]; break;
          case DistillMode::kCombinedHead:
            teacher = clean ? &clean_logits[i] : &robust_logits[i];
            break;
          default: break;  // apt / no_kd: no teacher term
        }
        double value = 0.0;
        try {
          if (model.three_headed())
            value = pair_loss_features(model, features[i], ex.label, teacher,
                                       clean ? Head::kClean : Head::kUnclean, eff, &dropout_rng,
                                       /*backprop=*/true, scale, &batch_parts);
          else
            value = single_loss_features(model, features[i], ex.label, teacher, clean, eff,
                                         &dropout_rng, /*backprop=*/true, scale, &batch_parts);
        } catch (const ValidationError& e) {
          // A diverged model produces non-finite activations that the loss
          // layer rejects; surface it as a training abort, not bad input.
          abort_training(epoch, state.step, batch_parts, std::string("diverged: ") + e.what());
        }
        batch_loss += scale * value;
      }
      if (!std::isfinite(batch_loss))
        abort_training(epoch, state.step, batch_parts, "non-finite loss");
      state.optimizer.step(trainable);
      ++state.step;
      epoch_parts += batch_parts.scaled(static_cast<double>(end - start));
    }
    EpochLog e;
    e.epoch = epoch;
    e.step = state.step;
    e.lr = eff.learning_rate;
    e.parts = epoch_parts.scaled(1.0 / static_cast<double>(n));
    e.mode = distill_mode_name(cfg.mode);
    append_epoch_log(log.is_open() ? &log : nullptr, e);
    out.epochs.push_back(e);
  }
  out.steps = state.step;
  return out;
}

}  // namespace rkd
