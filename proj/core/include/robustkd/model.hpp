#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "robustkd/layers.hpp"

namespace rkd {

// How the base network is split into frozen backbone, shared tunable section
// and prediction heads. fraction_tuned counts layers from the output end;
// head_fraction is the portion of the tuned region replicated into heads.
struct PartitionConfig {
  double fraction_tuned = 0.10;
  double head_fraction = 0.20;
  double dropout_rate = 0.25;

  void validate() const;
};

enum class Head { kClean = 0, kCombined = 1, kUnclean = 2 };
std::string head_name(Head h);

struct DropoutMode {
  bool stochastic = false;
  uint64_t seed = 0;
  static DropoutMode off() { return {false, 0}; }
  static DropoutMode with_seed(uint64_t seed) { return {true, seed}; }
};

// Rounds fraction * depth to the nearest layer boundary, ties toward fewer
// layers.
int round_layer_count(double fraction, int depth);

// Partitioned network: frozen backbone, dropout-bearing shared tunable
// section, and one (single-head baselines) or three prediction heads that are
// exact copies of the base model's tail at build time.
class MultiHeadModel {
 public:
  struct SectionPass {
    std::vector<LayerCtx> ctxs;
    std::vector<Eigen::VectorXd> masks;  // empty entry = no dropout at that layer
  };

  MultiHeadModel() = default;

  int num_heads() const { return static_cast<int>(heads_.size()); }
  bool three_headed() const { return heads_.size() == 3; }
  bool tuned() const { return tuned_; }
  int n_backbone() const { return backbone_.depth(); }
  int n_shared() const { return shared_.depth(); }
  int n_head() const { return heads_.empty() ? 0 : heads_[0].depth(); }
  int num_classes() const { return num_classes_; }
  uint64_t build_seed() const { return build_seed_; }
  const PartitionConfig& partition() const { return partition_; }
  const std::string& base_arch() const { return base_arch_; }
  const TensorShape& input_shape() const { return backbone_.input_shape(); }

  const LayerNet& backbone() const { return backbone_; }
  const LayerNet& shared() const { return shared_; }
  LayerNet& mutable_shared() { return shared_; }
  const LayerNet& head(Head h) const;
  LayerNet& mutable_head(Head h);

  // --- read-only forward paths (safe to call concurrently) ---
  Eigen::VectorXd backbone_forward(const Eigen::VectorXd& x) const;
  // From cached backbone features through shared + head; stochastic mode
  // derives all dropout masks from mode.seed.
  Eigen::VectorXd head_forward_cached(const Eigen::VectorXd& features, Head h,
                                      const DropoutMode& mode) const;
  Eigen::VectorXd forward_head(const Eigen::VectorXd& x, Head h, const DropoutMode& mode) const;
  Eigen::VectorXd forward_head(const Image& img, Head h, const DropoutMode& mode) const;
  // Backbone + shared output in deterministic mode (transfer-probe features).
  Eigen::VectorXd feature_forward(const Eigen::VectorXd& x) const;

  // --- training passes (single writer) ---
  Eigen::VectorXd shared_forward_train(const Eigen::VectorXd& features, Rng* dropout_rng,
                                       SectionPass& pass) const;
  Eigen::VectorXd head_forward_train(const Eigen::VectorXd& shared_out, Head h, Rng* dropout_rng,
                                     SectionPass& pass) const;
  Eigen::VectorXd head_backward(const Eigen::VectorXd& dlogits, Head h, const SectionPass& pass);
  void shared_backward(const Eigen::VectorXd& dout, const SectionPass& pass);

  void zero_grads();
  void for_each_trainable_layer(const std::function<void(Layer&)>& fn);
  size_t trainable_param_count() const;

  std::string arch_hash() const;
  // Checks head structural identity and section composition.
  void validate() const;

  friend MultiHeadModel build_multihead(const LayerNet& base, const PartitionConfig& config,
                                        uint64_t seed, int num_heads);
  friend class CheckpointCodec;

 private:
  LayerNet backbone_;
  LayerNet shared_;
  std::vector<LayerNet> heads_;
  PartitionConfig partition_;
  bool tuned_ = false;
  int num_classes_ = 0;
  uint64_t build_seed_ = 0;
  std::string base_arch_;
};

// Splits `base` per `config`. The layer split index is fraction * depth
// rounded to the nearest boundary (ties toward fewer tuned layers); heads are
// exact copies of the tail. fraction_tuned > 0 that rounds to zero tuned
// layers is a configuration error; fraction_tuned == 0 builds the degenerate
// fully frozen model whose heads are the original classifier layer.
MultiHeadModel build_multihead(const LayerNet& base, const PartitionConfig& config, uint64_t seed,
                               int num_heads = 3);

// Frozen reference classifiers used as distillation targets.
struct TeacherHandle {
  enum class Kind { kCleanCopy, kRobustSmall };
  Kind kind = Kind::kCleanCopy;
  LayerNet model;  // frozen

  Eigen::VectorXd logits(const Eigen::VectorXd& x) const { return model.forward(x); }
};

// Deep copy of the base model, frozen for the lifetime of distillation.
TeacherHandle clone_frozen_teacher(const LayerNet& base);

// 64-bit FNV-1a, hex-encoded; used for architecture and config hashes.
std::string fnv1a_hex(const std::string& s);

}  // namespace rkd
