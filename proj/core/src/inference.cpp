#include "robustkd/inference.hpp"

#include <cmath>

#include "robustkd/losses.hpp"

namespace rkd {

PredictiveDistribution mc_predict_cached(const MultiHeadModel& model,
                                         const Eigen::VectorXd& features, Head head,
                                         int mc_samples, uint64_t seed) {
  if (mc_samples < 2) throw ValidationError("mc_predict: mc_samples must be >= 2");
  PredictiveDistribution dist;
  dist.head = head;
  dist.mc_samples = mc_samples;

  const bool stochastic = model.tuned() && model.partition().dropout_rate > 0.0;
  if (!stochastic) {
    // Every pass is identical: the mean is the deterministic softmax and the
    // dispersion is exactly zero.
    dist.mean_probs = softmax(model.head_forward_cached(features, head, DropoutMode::off()));
    dist.std_probs = Eigen::VectorXd::Zero(dist.mean_probs.size());
    return dist;
  }

  const int classes = model.num_classes();
  Eigen::VectorXd sum = Eigen::VectorXd::Zero(classes);
  Eigen::VectorXd sumsq = Eigen::VectorXd::Zero(classes);
  const uint64_t head_seed = mix_seed(seed, static_cast<uint64_t>(head));
  for (int k = 0; k < mc_samples; ++k) {
    const DropoutMode mode = DropoutMode::with_seed(mix_seed(head_seed, static_cast<uint64_t>(k)));
    const Eigen::VectorXd probs = softmax(model.head_forward_cached(features, head, mode));
    sum += probs;
    sumsq += probs.cwiseProduct(probs);
  }
  dist.mean_probs = sum / mc_samples;
  dist.std_probs = Eigen::VectorXd(classes);
  for (int c = 0; c < classes; ++c) {
    // Unbiased sample variance over the passes, floored at zero for roundoff.
    const double var =
        (sumsq[c] - sum[c] * sum[c] / mc_samples) / static_cast<double>(mc_samples - 1);
    dist.std_probs[c] = std::sqrt(std::max(var, 0.0));
  }
  return dist;
}

PredictiveDistribution mc_predict(const MultiHeadModel& model, const Image& x, Head head,
                                  int mc_samples, uint64_t seed) {
  return mc_predict_cached(model, model.backbone_forward(to_chw(x)), head, mc_samples, seed);
}

UncertaintyAgg uncertainty_agg_from_name(const std::string& name) {
  if (name == "mean_std") return UncertaintyAgg::kMeanStd;
  if (name == "max_class_std") return UncertaintyAgg::kMaxClassStd;
  throw ValidationError("unknown uncertainty aggregation: " + name);
}

double uncertainty_scalar(const PredictiveDistribution& dist, UncertaintyAgg agg) {
  if (dist.std_probs.size() == 0) throw ValidationError("uncertainty_scalar: empty distribution");
  switch (agg) {
    case UncertaintyAgg::kMeanStd: return dist.std_probs.mean();
    case UncertaintyAgg::kMaxClassStd: {
      Eigen::Index argmax;
      dist.mean_probs.maxCoeff(&argmax);
      return dist.std_probs[argmax];
    }
  }
  throw ValidationError("bad uncertainty aggregation");
}

double kl_divergence(const Eigen::VectorXd& p, const Eigen::VectorXd& q, double epsilon) {
  if (p.size() != q.size()) throw ValidationError("kl_divergence: length mismatch");
  if (p.size() == 0) throw ValidationError("kl_divergence: empty vectors");
  double kl = 0.0;
  for (Eigen::Index i = 0; i < p.size(); ++i) {
    if (p[i] < 0.0 || q[i] < 0.0) throw ValidationError("kl_divergence: negative entries");
    if (p[i] > 0.0) kl += p[i] * std::log((p[i] + epsilon) / (q[i] + epsilon));
  }
  return kl;
}

SelectorVariant selector_from_name(const std::string& name) {
  if (name == "full") return SelectorVariant::kFull;
  if (name == "no_kld") return SelectorVariant::kNoKld;
  if (name == "no_umc") return SelectorVariant::kNoUmc;
  if (name == "max_logit") return SelectorVariant::kMaxLogit;
  throw ValidationError("unknown selector variant: " + name);
}

std::string selector_name(SelectorVariant v) {
  switch (v) {
    case SelectorVariant::kFull: return "full";
    case SelectorVariant::kNoKld: return "no_kld";
    case SelectorVariant::kNoUmc: return "no_umc";
    case SelectorVariant::kMaxLogit: return "max_logit";
  }
  throw ValidationError("bad selector variant");
}

SelectionResult select_from_distributions(const PredictiveDistribution& clean,
                                          const PredictiveDistribution& combined,
                                          const PredictiveDistribution& unclean,
                                          SelectorVariant variant, UncertaintyAgg agg) {
  SelectionResult r;
  r.u_clean = uncertainty_scalar(clean, agg);
  r.u_unclean = uncertainty_scalar(unclean, agg);
  r.kl_clean = kl_divergence(combined.mean_probs, clean.mean_probs);
  r.kl_unclean = kl_divergence(combined.mean_probs, unclean.mean_probs);
  switch (variant) {
    case SelectorVariant::kFull:
      r.score_clean = r.u_clean * r.kl_clean;
      r.score_unclean = r.u_unclean * r.kl_unclean;
      break;
    case SelectorVariant::kNoKld:
      r.score_clean = r.u_clean;
      r.score_unclean = r.u_unclean;
      break;
    case SelectorVariant::kNoUmc:
      r.score_clean = r.kl_clean;
      r.score_unclean = r.kl_unclean;
      break;
    case SelectorVariant::kMaxLogit:
      // Larger peak confidence wins; expressed as an argmin score.
      r.score_clean = -clean.mean_probs.maxCoeff();
      r.score_unclean = -unclean.mean_probs.maxCoeff();
      break;
  }
  r.chosen_head = r.score_clean <= r.score_unclean ? Head::kClean : Head::kUnclean;
  r.distribution_used = r.chosen_head == Head::kClean ? clean : unclean;
  Eigen::Index argmax;
  r.distribution_used.mean_probs.maxCoeff(&argmax);
  r.predicted_class = static_cast<int>(argmax);
  return r;
}

SelectionResult select_head_variant_cached(const MultiHeadModel& model,
                                           const Eigen::VectorXd& features,
                                           SelectorVariant variant, int mc_samples, uint64_t seed,
                                           UncertaintyAgg agg) {
  if (!model.three_headed())
    throw ValidationError("select_head: model must have three heads");
  const auto clean = mc_predict_cached(model, features, Head::kClean, mc_samples, seed);
  const auto combined = mc_predict_cached(model, features, Head::kCombined, mc_samples, seed);
  const auto unclean = mc_predict_cached(model, features, Head::kUnclean, mc_samples, seed);
  return select_from_distributions(clean, combined, unclean, variant, agg);
}

SelectionResult select_head_cached(const MultiHeadModel& model, const Eigen::VectorXd& features,
                                   int mc_samples, uint64_t seed, UncertaintyAgg agg) {
  return select_head_variant_cached(model, features, SelectorVariant::kFull, mc_samples, seed,
                                    agg);
}

SelectionResult select_head(const MultiHeadModel& model, const Image& x, int mc_samples,
                            uint64_t seed, UncertaintyAgg agg) {
  return select_head_variant_cached(model, model.backbone_forward(to_chw(x)),
                                    SelectorVariant::kFull, mc_samples, seed, agg);
}

SelectionResult select_head_variant(const MultiHeadModel& model, const Image& x,
                                    SelectorVariant variant, int mc_samples, uint64_t seed,
                                    UncertaintyAgg agg) {
  return select_head_variant_cached(model, model.backbone_forward(to_chw(x)), variant, mc_samples,
                                    seed, agg);
}

Eigen::VectorXd zero_shot_logits(const Eigen::VectorXd& image_embedding,
                                 const Eigen::MatrixXd& class_embeddings) {
  if (class_embeddings.cols() != image_embedding.size())
    throw ValidationError("zero_shot_logits: embedding dimension mismatch");
  if (class_embeddings.rows() == 0) throw ValidationError("zero_shot_logits: no classes");
  return class_embeddings * image_embedding;
}

ClassEmbeddingProvider seeded_embedding_provider(uint64_t seed) {
  return [seed](int num_classes, int dim) {
    if (num_classes <= 0 || dim <= 0)
      throw ValidationError("class embedding provider: bad dimensions");
    Rng rng(seed);
    Eigen::MatrixXd m(num_classes, dim);
    for (int c = 0; c < num_classes; ++c) {
      for (int d = 0; d < dim; ++d) m(c, d) = rng.normal();
      m.row(c).normalize();
    }
    return m;
  };
}

}  // namespace rkd
