#include "robustkd/model.hpp"

#include <cmath>

namespace rkd {

void PartitionConfig::validate() const {
  if (fraction_tuned < 0.0 || fraction_tuned > 1.0)
    throw ValidationError("partition: fraction_tuned must be in [0, 1]");
  if (head_fraction <= 0.0 || head_fraction >= 1.0)
    throw ValidationError("partition: head_fraction must be in (0, 1)");
  if (dropout_rate < 0.0 || dropout_rate >= 1.0)
    throw ValidationError("partition: dropout_rate must be in [0, 1)");
}

std::string head_name(Head h) {
  switch (h) {
    case Head::kClean: return "clean";
    case Head::kCombined: return "combined";
    case Head::kUnclean: return "unclean";
  }
  throw ValidationError("bad head");
}

int round_layer_count(double fraction, int depth) {
  const double x = fraction * depth;
  const double fl = std::floor(x);
  const double rem = x - fl;
  if (rem > 0.5) return static_cast<int>(fl) + 1;
  return static_cast<int>(fl);  // ties go toward fewer layers
}

const LayerNet& MultiHeadModel::head(Head h) const {
  const auto idx = static_cast<size_t>(h);
  if (idx >= heads_.size())
    throw ValidationError("head '" + head_name(h) + "' not present on this model");
  return heads_[idx];
}

LayerNet& MultiHeadModel::mutable_head(Head h) {
  const auto idx = static_cast<size_t>(h);
  if (idx >= heads_.size())
    throw ValidationError("head '" + head_name(h) + "' not present on this model");
  return heads_[idx];
}

Eigen::VectorXd MultiHeadModel::backbone_forward(const Eigen::VectorXd& x) const {
  if (x.size() != backbone_.input_shape().flat())
    throw ValidationError("forward: input size does not match model input shape");
  return backbone_.forward(x);
}

namespace {

Eigen::VectorXd draw_mask(int n, double rate, Rng& rng) {
  Eigen::VectorXd mask(n);
  const double scale = 1.0 / (1.0 - rate);  // inverted dropout
  for (int i = 0; i < n; ++i) mask[i] = rng.uniform01() < rate ? 0.0 : scale;
  return mask;
}

// Dropout precedes every parameterized tuned layer, so masks never sit on the
// logit output and the frozen backbone needs only one pass per input.
Eigen::VectorXd run_section(const LayerNet& section, Eigen::VectorXd x, double rate, Rng* rng,
                            MultiHeadModel::SectionPass* pass) {
  if (pass) {
    pass->ctxs.resize(static_cast<size_t>(section.depth()));
    pass->masks.assign(static_cast<size_t>(section.depth()), Eigen::VectorXd());
  }
  for (int i = 0; i < section.depth(); ++i) {
    const Layer& layer = section.layer(i);
    if (rng != nullptr && rate > 0.0 && layer.has_params()) {
      Eigen::VectorXd mask = draw_mask(static_cast<int>(x.size()), rate, *rng);
      x = x.cwiseProduct(mask);
      if (pass) pass->masks[static_cast<size_t>(i)] = std::move(mask);
    }
    x = layer.forward(x, pass ? &pass->ctxs[static_cast<size_t>(i)] : nullptr);
  }
  return x;
}

Eigen::VectorXd run_section_backward(LayerNet& section, Eigen::VectorXd dy,
                                     const MultiHeadModel::SectionPass& pass) {
  for (int i = section.depth() - 1; i >= 0; --i) {
    dy = section.layer(i).backward(dy, pass.ctxs[static_cast<size_t>(i)]);
    const auto& mask = pass.masks[static_cast<size_t>(i)];
    if (mask.size() > 0) dy = dy.cwiseProduct(mask);
  }
  return dy;
}

}  // namespace

Eigen::VectorXd MultiHeadModel::head_forward_cached(const Eigen::VectorXd& features, Head h,
                                                    const DropoutMode& mode) const {
  const bool stochastic = mode.stochastic && tuned_ && partition_.dropout_rate > 0.0;
  if (!stochastic) {
    Eigen::VectorXd out = shared_.forward(features);
    return head(h).forward(out);
  }
  Rng rng(mode.seed);
  Eigen::VectorXd out =
      run_section(shared_, features, partition_.dropout_rate, &rng, nullptr);
  return run_section(head(h), std::move(out), partition_.dropout_rate, &rng, nullptr);
}

Eigen::VectorXd MultiHeadModel::forward_head(const Eigen::VectorXd& x, Head h,
                                             const DropoutMode& mode) const {
  return head_forward_cached(backbone_forward(x), h, mode);
}

Eigen::VectorXd MultiHeadModel::forward_head(const Image& img, Head h,
                                             const DropoutMode& mode) const {
  return forward_head(to_chw(img), h, mode);
}

Eigen::VectorXd MultiHeadModel::feature_forward(const Eigen::VectorXd& x) const {
  return shared_.forward(backbone_forward(x));
}

Eigen::VectorXd MultiHeadModel::shared_forward_train(const Eigen::VectorXd& features,
                                                     Rng* dropout_rng, SectionPass& pass) const {
  const double rate = tuned_ ? partition_.dropout_rate : 0.0;
  return run_section(shared_, features, rate, rate > 0.0 ? dropout_rng : nullptr, &pass);
}

Eigen::VectorXd MultiHeadModel::head_forward_train(const Eigen::VectorXd& shared_out, Head h,
                                                   Rng* dropout_rng, SectionPass& pass) const {
  const double rate = tuned_ ? partition_.dropout_rate : 0.0;
  return run_section(head(h), shared_out, rate, rate > 0.0 ? dropout_rng : nullptr, &pass);
}

Eigen::VectorXd MultiHeadModel::head_backward(const Eigen::VectorXd& dlogits, Head h,
                                              const SectionPass& pass) {
  if (!tuned_) throw ValidationError("head_backward: model has no tuned layers");
  return run_section_backward(mutable_head(h), dlogits, pass);
}

void MultiHeadModel::shared_backward(const Eigen::VectorXd& dout, const SectionPass& pass) {
  if (!tuned_) throw ValidationError("shared_backward: model has no tuned layers");
  if (shared_.depth() == 0) return;
  run_section_backward(shared_, dout, pass);
}

void MultiHeadModel::zero_grads() {
  if (!tuned_) return;
  for (int i = 0; i < shared_.depth(); ++i) shared_.layer(i).zero_grads();
  for (auto& head : heads_)
    for (int i = 0; i < head.depth(); ++i) head.layer(i).zero_grads();
}

void MultiHeadModel::for_each_trainable_layer(const std::function<void(Layer&)>& fn) {
  if (!tuned_) return;
  shared_.for_each_trainable(fn);
  for (auto& head : heads_) head.for_each_trainable(fn);
}

size_t MultiHeadModel::trainable_param_count() const {
  if (!tuned_) return 0;
  size_t n = shared_.param_count();
  for (const auto& head : heads_) n += head.param_count();
  return n;
}

std::string MultiHeadModel::arch_hash() const {
  return fnv1a_hex(base_arch_ + "#heads=" + std::to_string(num_heads()) +
                   "#classes=" + std::to_string(num_classes_));
}

void MultiHeadModel::validate() const {
  if (heads_.empty()) throw ValidationError("model has no heads");
  const std::string ref = heads_[0].arch_string();
  for (const auto& head : heads_)
    if (head.arch_string() != ref)
      throw ValidationError("heads are not structurally identical");
  if (!backbone_.empty() && shared_.depth() > 0 &&
      !(backbone_.output_shape() == shared_.input_shape()))
    throw ValidationError("backbone/shared shape mismatch");
  const LayerNet& tail_in = shared_.depth() > 0 ? shared_ : backbone_;
  if (!(tail_in.output_shape() == heads_[0].input_shape()))
    throw ValidationError("shared/head shape mismatch");
  if (heads_[0].output_shape().flat() != num_classes_)
    throw ValidationError("head output does not match num_classes");
}

MultiHeadModel build_multihead(const LayerNet& base, const PartitionConfig& config, uint64_t seed,
                               int num_heads) {
  config.validate();
  if (num_heads != 1 && num_heads != 3)
    throw ValidationError("build_multihead: num_heads must be 1 or 3");
  const int depth = base.depth();
  if (depth < 3) throw ValidationError("build_multihead: base model needs at least 3 layers");

  const int tuned = round_layer_count(config.fraction_tuned, depth);
  if (config.fraction_tuned > 0.0 && tuned == 0)
    throw ConfigError("partition.fraction_tuned",
                      "fraction " + std::to_string(config.fraction_tuned) + " rounds to 0 tuned "
                      "layers on a " + std::to_string(depth) + "-layer model");

  int head_depth;
  if (tuned == 0) {
    head_depth = 1;  // degenerate frozen model: heads are the classifier layer
  } else {
    head_depth = std::clamp(round_layer_count(config.head_fraction, tuned), 1, tuned);
  }

  MultiHeadModel m;
  m.partition_ = config;
  m.tuned_ = tuned > 0;
  m.build_seed_ = seed;
  m.base_arch_ = base.arch_string();
  m.num_classes_ = base.output_shape().flat();

  const int n_backbone = tuned == 0 ? depth - 1 : depth - tuned;
  const int n_shared = tuned == 0 ? 0 : tuned - head_depth;
  m.backbone_ = base.slice(0, n_backbone);
  m.backbone_.set_frozen(true);
  m.shared_ = base.slice(n_backbone, n_backbone + n_shared);
  m.heads_.reserve(static_cast<size_t>(num_heads));
  for (int h = 0; h < num_heads; ++h) m.heads_.push_back(base.slice(n_backbone + n_shared, depth));
  if (!m.tuned_) {
    m.shared_.set_frozen(true);
    for (auto& head : m.heads_) head.set_frozen(true);
  }
  m.validate();
  return m;
}

TeacherHandle clone_frozen_teacher(const LayerNet& base) {
  TeacherHandle t;
  t.kind = TeacherHandle::Kind::kCleanCopy;
  t.model = base;
  t.model.set_frozen(true);
  return t;
}

std::string fnv1a_hex(const std::string& s) {
  uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return std::string(buf);
}

}  // namespace rkd
