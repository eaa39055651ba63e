#pragma once

#include <Eigen/Dense>

namespace rkd {

Eigen::VectorXd softmax(const Eigen::VectorXd& logits);
Eigen::VectorXd log_softmax(const Eigen::VectorXd& logits);

// Cross-entropy of softmax(logits) against the label; >= 0.
double classification_loss(const Eigen::VectorXd& logits, int label);
// d loss / d logits = softmax(logits) - onehot(label).
Eigen::VectorXd classification_loss_grad(const Eigen::VectorXd& logits, int label);

// T^2 * KL(softmax(teacher/T) || softmax(student/T)); >= 0, and 0 exactly when
// the logit vectors are equal up to an additive constant.
double distillation_loss(const Eigen::VectorXd& student_logits,
                         const Eigen::VectorXd& teacher_logits, double temperature);
// d loss / d student_logits = T * (softmax(student/T) - softmax(teacher/T)).
Eigen::VectorXd distillation_loss_grad(const Eigen::VectorXd& student_logits,
                                       const Eigen::VectorXd& teacher_logits, double temperature);

}  // namespace rkd
