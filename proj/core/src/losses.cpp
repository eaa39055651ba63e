#include "robustkd/losses.hpp"

#include <cmath>

#include "robustkd/errors.hpp"

namespace rkd {

Eigen::VectorXd log_softmax(const Eigen::VectorXd& logits) {
  const double m = logits.maxCoeff();
  const Eigen::VectorXd shifted = logits.array() - m;
  const double lse = std::log(shifted.array().exp().sum());
  return shifted.array() - lse;
}

Eigen::VectorXd softmax(const Eigen::VectorXd& logits) {
  return log_softmax(logits).array().exp();
}

namespace {

void check_logits(const Eigen::VectorXd& logits) {
  if (logits.size() == 0) throw ValidationError("loss: empty logit vector");
  if (!logits.allFinite()) throw ValidationError("loss: logits are not finite");
}

}  // namespace

double classification_loss(const Eigen::VectorXd& logits, int label) {
  check_logits(logits);
  if (label < 0 || label >= logits.size()) throw ValidationError("loss: label out of range");
  return -log_softmax(logits)[label];
}

Eigen::VectorXd classification_loss_grad(const Eigen::VectorXd& logits, int label) {
  check_logits(logits);
  if (label < 0 || label >= logits.size()) throw ValidationError("loss: label out of range");
  Eigen::VectorXd g = softmax(logits);
  g[label] -= 1.0;
  return g;
}

double distillation_loss(const Eigen::VectorXd& student_logits,
                         const Eigen::VectorXd& teacher_logits, double temperature) {
  check_logits(student_logits);
  check_logits(teacher_logits);
  if (student_logits.size() != teacher_logits.size())
    throw ValidationError("distillation loss: logit length mismatch");
  if (!(temperature > 0.0)) throw ValidationError("distillation loss: temperature must be > 0");
  const Eigen::VectorXd log_pt = log_softmax(teacher_logits / temperature);
  const Eigen::VectorXd log_ps = log_softmax(student_logits / temperature);
  const Eigen::VectorXd pt = log_pt.array().exp();
  double kl = 0.0;
  for (Eigen::Index i = 0; i < pt.size(); ++i) kl += pt[i] * (log_pt[i] - log_ps[i]);
  return temperature * temperature * std::max(kl, 0.0);
}

Eigen::VectorXd distillation_loss_grad(const Eigen::VectorXd& student_logits,
                                       const Eigen::VectorXd& teacher_logits, double temperature) {
  if (student_logits.size() != teacher_logits.size())
    throw ValidationError("distillation loss: logit length mismatch");
  if (!(temperature > 0.0)) throw ValidationError("distillation loss: temperature must be > 0");
  const Eigen::VectorXd ps = softmax(student_logits / temperature);
  const Eigen::VectorXd pt = softmax(teacher_logits / temperature);
  return temperature * (ps - pt);
}

}  // namespace rkd
