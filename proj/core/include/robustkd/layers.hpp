#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "robustkd/errors.hpp"
#include "robustkd/image.hpp"
#include "robustkd/rng.hpp"

namespace rkd {

enum class Activation { kNone, kRelu };

// CHW activation shape; dense outputs use {features, 1, 1}.
struct TensorShape {
  int c = 0;
  int h = 1;
  int w = 1;
  int flat() const { return c * h * w; }
  bool operator==(const TensorShape& o) const = default;
};

// Per-call forward context captured for backprop. Kept outside the layer so
// read-only forwards stay reentrant.
struct LayerCtx {
  Eigen::VectorXd input;
  Eigen::VectorXd pre_act;
  Eigen::MatrixXd im2col;
  std::vector<int> pool_argmax;
};

// One network layer. Owns parameters and (lazily allocated) gradient buffers;
// gradient buffers exist only on layers that have been trained.
class Layer {
 public:
  enum class Kind { kConv, kDense, kMaxPool };

  static Layer conv(int in_c, int out_c, int ksize, Activation act);
  static Layer dense(int in_dim, int out_dim, Activation act);
  static Layer maxpool(int window);

  Kind kind() const { return kind_; }
  Activation activation() const { return act_; }
  bool has_params() const { return kind_ != Kind::kMaxPool; }
  size_t param_count() const;

  TensorShape infer_output(const TensorShape& in) const;
  void bind_shapes(const TensorShape& in);
  const TensorShape& in_shape() const { return in_shape_; }
  const TensorShape& out_shape() const { return out_shape_; }

  void init_params(Rng& rng);

  Eigen::VectorXd forward(const Eigen::VectorXd& x, LayerCtx* ctx) const;
  // Accumulates parameter gradients (allocating buffers on first use) and
  // returns the gradient w.r.t. the layer input.
  Eigen::VectorXd backward(const Eigen::VectorXd& dy, const LayerCtx& ctx);

  bool grads_allocated() const { return grads_allocated_; }
  void zero_grads();
  std::vector<double> grads_flat() const;

  // Deterministic parameter iteration order: W row-major, then b.
  void for_each_param(const std::function<void(double& param, double& grad)>& fn);
  void append_params(std::vector<double>& out) const;
  size_t load_params(const double* src);

  std::string kind_name() const;
  // Structural description (kind, sizes, activation) for checkpoints.
  std::string spec_string() const;
  static Layer from_spec_string(const std::string& spec);

 private:
  Layer() = default;

  Kind kind_ = Kind::kDense;
  Activation act_ = Activation::kNone;
  int in_c_ = 0, out_c_ = 0, ksize_ = 0, window_ = 0;
  TensorShape in_shape_, out_shape_;

  Eigen::MatrixXd weight_;
  Eigen::VectorXd bias_;
  Eigen::MatrixXd grad_weight_;
  Eigen::VectorXd grad_bias_;
  bool grads_allocated_ = false;

  void ensure_grads();
};

// Sequential stack of layers with a frozen flag. Sections of a partitioned
// model are themselves LayerNets.
class LayerNet {
 public:
  LayerNet() = default;
  LayerNet(const TensorShape& input, std::vector<Layer> layers);

  int depth() const { return static_cast<int>(layers_.size()); }
  bool empty() const { return layers_.empty(); }
  const TensorShape& input_shape() const { return input_shape_; }
  const TensorShape& output_shape() const { return output_shape_; }

  Layer& layer(int i) { return layers_[static_cast<size_t>(i)]; }
  const Layer& layer(int i) const { return layers_[static_cast<size_t>(i)]; }

  void init_params(uint64_t seed);

  Eigen::VectorXd forward(const Eigen::VectorXd& x) const;
  Eigen::VectorXd forward_collect(const Eigen::VectorXd& x, std::vector<LayerCtx>& ctxs) const;

  // Sub-network [begin, end); the slice owns copies of the layers.
  LayerNet slice(int begin, int end) const;

  size_t param_count() const;
  std::vector<double> serialize_params() const;
  void load_params(const std::vector<double>& blob);

  // Frozen nets refuse mutable parameter access.
  void set_frozen(bool frozen) { frozen_ = frozen; }
  bool frozen() const { return frozen_; }
  void check_mutable(const char* what) const;
  void for_each_trainable(const std::function<void(Layer&)>& fn);

  std::string arch_string() const;
  static LayerNet from_arch_string(const std::string& arch);

 private:
  TensorShape input_shape_;
  TensorShape output_shape_;
  std::vector<Layer> layers_;
  bool frozen_ = false;
};

// Image (HWC) -> network input (CHW).
Eigen::VectorXd to_chw(const Image& img);

// Named architectures used by the toolkit and its tests.
//   student20 : 20-layer ~100k-parameter convolutional classifier
//   teacher7  : 7-layer ~30k-parameter classifier (strictly smaller)
//   toy<N>    : N dense layers on a small flat input (tests)
LayerNet make_arch(const std::string& name, int num_classes, int image_size);
bool arch_exists(const std::string& name);

}  // namespace rkd
