#pragma once

#include <functional>
#include <string>

#include "robustkd/model.hpp"

namespace rkd {

// Per-head predictive distribution from mc_samples stochastic forward passes:
// per-class mean and standard deviation of the softmax outputs.
struct PredictiveDistribution {
  Eigen::VectorXd mean_probs;
  Eigen::VectorXd std_probs;
  int mc_samples = 0;
  Head head = Head::kClean;
};

// Dropout stays active only in the tuned layers, so the frozen backbone is
// forwarded once and reused across all passes and heads.
PredictiveDistribution mc_predict(const MultiHeadModel& model, const Image& x, Head head,
                                  int mc_samples, uint64_t seed);
PredictiveDistribution mc_predict_cached(const MultiHeadModel& model,
                                         const Eigen::VectorXd& features, Head head,
                                         int mc_samples, uint64_t seed);

// How the per-class std vector is collapsed into the scalar U_mc.
enum class UncertaintyAgg { kMeanStd, kMaxClassStd };
UncertaintyAgg uncertainty_agg_from_name(const std::string& name);

double uncertainty_scalar(const PredictiveDistribution& dist,
                          UncertaintyAgg agg = UncertaintyAgg::kMeanStd);

// Smoothed KL: sum_i p_i * ln((p_i + eps) / (q_i + eps)). Inputs must be on
// the simplex (nonnegative); result is >= -1e-9 and exactly 0 for p == q.
double kl_divergence(const Eigen::VectorXd& p, const Eigen::VectorXd& q, double epsilon = 1e-12);

struct SelectionResult {
  Head chosen_head = Head::kClean;  // never kCombined
  int predicted_class = -1;
  double score_clean = 0.0;
  double score_unclean = 0.0;
  double u_clean = 0.0;
  double u_unclean = 0.0;
  double kl_clean = 0.0;
  double kl_unclean = 0.0;
  PredictiveDistribution distribution_used;
};

enum class SelectorVariant { kFull, kNoKld, kNoUmc, kMaxLogit };
SelectorVariant selector_from_name(const std::string& name);
std::string selector_name(SelectorVariant v);

// Pure selection core: scores the clean/unclean candidates against the
// combined head and picks the argmin (ties resolve to clean). The combined
// head exists only as the KL reference and is never chosen.
//   kFull     score_k = U_mc(k) * KL(mean_m || mean_k)
//   kNoKld    score_k = U_mc(k)
//   kNoUmc    score_k = KL(mean_m || mean_k)
//   kMaxLogit picks the head with the larger maximum mean probability
SelectionResult select_from_distributions(const PredictiveDistribution& clean,
                                          const PredictiveDistribution& combined,
                                          const PredictiveDistribution& unclean,
                                          SelectorVariant variant = SelectorVariant::kFull,
                                          UncertaintyAgg agg = UncertaintyAgg::kMeanStd);

SelectionResult select_head(const MultiHeadModel& model, const Image& x, int mc_samples,
                            uint64_t seed, UncertaintyAgg agg = UncertaintyAgg::kMeanStd);
SelectionResult select_head_cached(const MultiHeadModel& model, const Eigen::VectorXd& features,
                                   int mc_samples, uint64_t seed,
                                   UncertaintyAgg agg = UncertaintyAgg::kMeanStd);
SelectionResult select_head_variant(const MultiHeadModel& model, const Image& x,
                                    SelectorVariant variant, int mc_samples, uint64_t seed,
                                    UncertaintyAgg agg = UncertaintyAgg::kMeanStd);
SelectionResult select_head_variant_cached(const MultiHeadModel& model,
                                           const Eigen::VectorXd& features,
                                           SelectorVariant variant, int mc_samples, uint64_t seed,
                                           UncertaintyAgg agg = UncertaintyAgg::kMeanStd);

// ---------------------------------------------------------------------------
// Zero-shot path
// ---------------------------------------------------------------------------

// C dot products between an L2-normalized image embedding and per-class
// embeddings (rows of class_embeddings).
Eigen::VectorXd zero_shot_logits(const Eigen::VectorXd& image_embedding,
                                 const Eigen::MatrixXd& class_embeddings);

// Pluggable class-embedding provider; the default is a seeded synthetic
// provider with L2-normalized rows.
using ClassEmbeddingProvider = std::function<Eigen::MatrixXd(int num_classes, int dim)>;
ClassEmbeddingProvider seeded_embedding_provider(uint64_t seed);

}  // namespace rkd
