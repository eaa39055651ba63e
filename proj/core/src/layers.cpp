#include "robustkd/layers.hpp"

#include <cmath>
#include <sstream>

namespace rkd {

// ---------------------------------------------------------------------------
// Layer
// ---------------------------------------------------------------------------

Layer Layer::conv(int in_c, int out_c, int ksize, Activation act) {
  if (in_c <= 0 || out_c <= 0) throw ValidationError("conv: channel counts must be positive");
  if (ksize <= 0 || ksize % 2 == 0) throw ValidationError("conv: kernel size must be odd");
  Layer l;
  l.kind_ = Kind::kConv;
  l.act_ = act;
  l.in_c_ = in_c;
  l.out_c_ = out_c;
  l.ksize_ = ksize;
  l.weight_ = Eigen::MatrixXd::Zero(out_c, in_c * ksize * ksize);
  l.bias_ = Eigen::VectorXd::Zero(out_c);
  return l;
}

Layer Layer::dense(int in_dim, int out_dim, Activation act) {
  if (in_dim <= 0 || out_dim <= 0) throw ValidationError("dense: dimensions must be positive");
  Layer l;
  l.kind_ = Kind::kDense;
  l.act_ = act;
  l.in_c_ = in_dim;
  l.out_c_ = out_dim;
  l.weight_ = Eigen::MatrixXd::Zero(out_dim, in_dim);
  l.bias_ = Eigen::VectorXd::Zero(out_dim);
  return l;
}

Layer Layer::maxpool(int window) {
  if (window < 2) throw ValidationError("maxpool: window must be >= 2");
  Layer l;
  l.kind_ = Kind::kMaxPool;
  l.window_ = window;
  return l;
}

size_t Layer::param_count() const {
  if (!has_params()) return 0;
  return static_cast<size_t>(weight_.size()) + static_cast<size_t>(bias_.size());
}

TensorShape Layer::infer_output(const TensorShape& in) const {
  switch (kind_) {
    case Kind::kConv:
      if (in.c != in_c_) throw ValidationError("conv: input channel mismatch");
      return {out_c_, in.h, in.w};
    case Kind::kDense:
      if (in.flat() != in_c_) throw ValidationError("dense: input size mismatch");
      return {out_c_, 1, 1};
    case Kind::kMaxPool:
      if (in.h % window_ != 0 || in.w % window_ != 0)
        throw ValidationError("maxpool: input not divisible by window");
      return {in.c, in.h / window_, in.w / window_};
  }
  throw ValidationError("bad layer kind");
}

void Layer::bind_shapes(const TensorShape& in) {
  in_shape_ = in;
  out_shape_ = infer_output(in);
}

void Layer::init_params(Rng& rng) {
  if (!has_params()) return;
  const double fan_in = static_cast<double>(weight_.cols());
  const double limit = std::sqrt(6.0 / fan_in);
  for (Eigen::Index r = 0; r < weight_.rows(); ++r)
    for (Eigen::Index c = 0; c < weight_.cols(); ++c) weight_(r, c) = rng.uniform(-limit, limit);
  bias_.setZero();
}

namespace {

inline void apply_activation(Activation act, Eigen::VectorXd& v) {
  if (act == Activation::kRelu)
    for (Eigen::Index i = 0; i < v.size(); ++i) v[i] = v[i] > 0.0 ? v[i] : 0.0;
}

}  // namespace

Eigen::VectorXd Layer::forward(const Eigen::VectorXd& x, LayerCtx* ctx) const {
  if (x.size() != in_shape_.flat()) throw ValidationError("layer forward: input size mismatch");
  switch (kind_) {
    case Kind::kDense: {
      Eigen::VectorXd z = weight_ * x + bias_;
      if (ctx) {
        ctx->input = x;
        ctx->pre_act = z;
      }
      apply_activation(act_, z);
      return z;
    }
    case Kind::kConv: {
      const int h = in_shape_.h, w = in_shape_.w, k = ksize_, pad = ksize_ / 2;
      const int cols = h * w;
      Eigen::MatrixXd col(in_c_ * k * k, cols);
      for (int ci = 0; ci < in_c_; ++ci)
        for (int ky = 0; ky < k; ++ky)
          for (int kx = 0; kx < k; ++kx) {
            const int row = (ci * k + ky) * k + kx;
            for (int y = 0; y < h; ++y) {
              const int sy = y + ky - pad;
              for (int xle = 0; xle < w; ++xle) {
                const int sx = xle + kx - pad;
                double v = 0.0;
                if (sy >= 0 && sy < h && sx >= 0 && sx < w)
                  v = x[(ci * h + sy) * w + sx];
                col(row, y * w + xle) = v;
              }
            }
          }
      Eigen::MatrixXd z = weight_ * col;
      z.colwise() += bias_;
      Eigen::VectorXd out(out_c_ * cols);
      for (int co = 0; co < out_c_; ++co)
        for (int p = 0; p < cols; ++p) out[co * cols + p] = z(co, p);
      if (ctx) {
        ctx->input = x;
        ctx->pre_act = out;
        ctx->im2col = std::move(col);
      }
      apply_activation(act_, out);
      return out;
    }
    case Kind::kMaxPool: {
      const int c = in_shape_.c, h = in_shape_.h, w = in_shape_.w, m = window_;
      const int oh = h / m, ow = w / m;
      Eigen::VectorXd out(c * oh * ow);
      std::vector<int> argmax;
      if (ctx) argmax.resize(static_cast<size_t>(c) * oh * ow);
      for (int ci = 0; ci < c; ++ci)
        for (int oy = 0; oy < oh; ++oy)
          for (int ox = 0; ox < ow; ++ox) {
            double best = -1e300;
            int best_idx = -1;
            for (int dy = 0; dy < m; ++dy)
              for (int dx = 0; dx < m; ++dx) {
                const int idx = (ci * h + oy * m + dy) * w + ox * m + dx;
                if (x[idx] > best) {
                  best = x[idx];
                  best_idx = idx;
                }
              }
            const int oidx = (ci * oh + oy) * ow + ox;
            out[oidx] = best;
            if (ctx) argmax[static_cast<size_t>(oidx)] = best_idx;
          }
      if (ctx) {
        ctx->input = x;
        ctx->pool_argmax = std::move(argmax);
      }
      return out;
    }
  }
  throw ValidationError("bad layer kind");
}

void Layer::ensure_grads() {
  if (grads_allocated_) return;
  grad_weight_ = Eigen::MatrixXd::Zero(weight_.rows(), weight_.cols());
  grad_bias_ = Eigen::VectorXd::Zero(bias_.size());
  grads_allocated_ = true;
}

Eigen::VectorXd Layer::backward(const Eigen::VectorXd& dy, const LayerCtx& ctx) {
  switch (kind_) {
    case Kind::kDense: {
      ensure_grads();
      Eigen::VectorXd dz = dy;
      if (act_ == Activation::kRelu)
        for (Eigen::Index i = 0; i < dz.size(); ++i)
          if (ctx.pre_act[i] <= 0.0) dz[i] = 0.0;
      grad_weight_.noalias() += dz * ctx.input.transpose();
      grad_bias_ += dz;
      return weight_.transpose() * dz;
    }
    case Kind::kConv: {
      ensure_grads();
      const int h = in_shape_.h, w = in_shape_.w, k = ksize_, pad = ksize_ / 2;
      const int cols = h * w;
      Eigen::MatrixXd dz(out_c_, cols);
      for (int co = 0; co < out_c_; ++co)
        for (int p = 0; p < cols; ++p) {
          double g = dy[co * cols + p];
          if (act_ == Activation::kRelu && ctx.pre_act[co * cols + p] <= 0.0) g = 0.0;
          dz(co, p) = g;
        }
      grad_weight_.noalias() += dz * ctx.im2col.transpose();
      grad_bias_ += dz.rowwise().sum();
      Eigen::MatrixXd dcol = weight_.transpose() * dz;
      Eigen::VectorXd dx = Eigen::VectorXd::Zero(in_shape_.flat());
      for (int ci = 0; ci < in_c_; ++ci)
        for (int ky = 0; ky < k; ++ky)
          for (int kx = 0; kx < k; ++kx) {
            const int row = (ci * k + ky) * k + kx;
            for (int y = 0; y < h; ++y) {
              const int sy = y + ky - pad;
              if (sy < 0 || sy >= h) continue;
              for (int xle = 0; xle < w; ++xle) {
                const int sx = xle + kx - pad;
                if (sx < 0 || sx >= w) continue;
                dx[(ci * h + sy) * w + sx] += dcol(row, y * w + xle);
              }
            }
          }
      return dx;
    }
    case Kind::kMaxPool: {
      Eigen::VectorXd dx = Eigen::VectorXd::Zero(in_shape_.flat());
      for (Eigen::Index i = 0; i < dy.size(); ++i)
        dx[ctx.pool_argmax[static_cast<size_t>(i)]] += dy[i];
      return dx;
    }
  }
  throw ValidationError("bad layer kind");
}

void Layer::zero_grads() {
  if (!grads_allocated_) return;
  grad_weight_.setZero();
  grad_bias_.setZero();
}

std::vector<double> Layer::grads_flat() const {
  std::vector<double> out(param_count(), 0.0);
  if (!grads_allocated_) return out;
  size_t i = 0;
  for (Eigen::Index r = 0; r < grad_weight_.rows(); ++r)
    for (Eigen::Index c = 0; c < grad_weight_.cols(); ++c) out[i++] = grad_weight_(r, c);
  for (Eigen::Index r = 0; r < grad_bias_.size(); ++r) out[i++] = grad_bias_[r];
  return out;
}

void Layer::for_each_param(const std::function<void(double&, double&)>& fn) {
  if (!has_params()) return;
  ensure_grads();
  for (Eigen::Index r = 0; r < weight_.rows(); ++r)
    for (Eigen::Index c = 0; c < weight_.cols(); ++c) fn(weight_(r, c), grad_weight_(r, c));
  for (Eigen::Index r = 0; r < bias_.size(); ++r) fn(bias_[r], grad_bias_[r]);
}

void Layer::append_params(std::vector<double>& out) const {
  if (!has_params()) return;
  for (Eigen::Index r = 0; r < weight_.rows(); ++r)
    for (Eigen::Index c = 0; c < weight_.cols(); ++c) out.push_back(weight_(r, c));
  for (Eigen::Index r = 0; r < bias_.size(); ++r) out.push_back(bias_[r]);
}

size_t Layer::load_params(const double* src) {
  if (!has_params()) return 0;
  size_t i = 0;
  for (Eigen::Index r = 0; r < weight_.rows(); ++r)
    for (Eigen::Index c = 0; c < weight_.cols(); ++c) weight_(r, c) = src[i++];
  for (Eigen::Index r = 0; r < bias_.size(); ++r) bias_[r] = src[i++];
  return i;
}

std::string Layer::kind_name() const {
  switch (kind_) {
    case Kind::kConv: return "conv";
    case Kind::kDense: return "dense";
    case Kind::kMaxPool: return "maxpool";
  }
  throw ValidationError("bad layer kind");
}

std::string Layer::spec_string() const {
  std::ostringstream os;
  const char* act = act_ == Activation::kRelu ? "relu" : "none";
  switch (kind_) {
    case Kind::kConv: os << "conv:" << in_c_ << ":" << out_c_ << ":" << ksize_ << ":" << act; break;
    case Kind::kDense: os << "dense:" << in_c_ << ":" << out_c_ << ":" << act; break;
    case Kind::kMaxPool: os << "maxpool:" << window_; break;
  }
  return os.str();
}

Layer Layer::from_spec_string(const std::string& spec) {
  std::vector<std::string> parts;
  std::stringstream ss(spec);
  std::string tok;
  while (std::getline(ss, tok, ':')) parts.push_back(tok);
  auto act_of = [](const std::string& s) {
    if (s == "relu") return Activation::kRelu;
    if (s == "none") return Activation::kNone;
    throw ValidationError("bad activation in layer spec: " + s);
  };
  if (parts.empty()) throw ValidationError("empty layer spec");
  if (parts[0] == "conv" && parts.size() == 5)
    return conv(std::stoi(parts[1]), std::stoi(parts[2]), std::stoi(parts[3]), act_of(parts[4]));
  if (parts[0] == "dense" && parts.size() == 4)
    return dense(std::stoi(parts[1]), std::stoi(parts[2]), act_of(parts[3]));
  if (parts[0] == "maxpool" && parts.size() == 2) return maxpool(std::stoi(parts[1]));
  throw ValidationError("bad layer spec: " + spec);
}

// ---------------------------------------------------------------------------
// LayerNet
// ---------------------------------------------------------------------------

LayerNet::LayerNet(const TensorShape& input, std::vector<Layer> layers)
    : input_shape_(input), layers_(std::move(layers)) {
  TensorShape cur = input_shape_;
  for (auto& l : layers_) {
    l.bind_shapes(cur);
    cur = l.out_shape();
  }
  output_shape_ = cur;
}

void LayerNet::init_params(uint64_t seed) {
  check_mutable("init_params");
  Rng rng(seed);
  for (auto& l : layers_) l.init_params(rng);
}

Eigen::VectorXd LayerNet::forward(const Eigen::VectorXd& x) const {
  Eigen::VectorXd cur = x;
  for (const auto& l : layers_) cur = l.forward(cur, nullptr);
  return cur;
}

Eigen::VectorXd LayerNet::forward_collect(const Eigen::VectorXd& x,
                                          std::vector<LayerCtx>& ctxs) const {
  ctxs.resize(layers_.size());
  Eigen::VectorXd cur = x;
  for (size_t i = 0; i < layers_.size(); ++i) cur = layers_[i].forward(cur, &ctxs[i]);
  return cur;
}

LayerNet LayerNet::slice(int begin, int end) const {
  if (begin < 0 || end > depth() || begin > end) throw ValidationError("bad layer slice");
  const TensorShape in = begin == depth() ? output_shape_
                         : layers_[static_cast<size_t>(begin)].in_shape();
  std::vector<Layer> copy(layers_.begin() + begin, layers_.begin() + end);
  return LayerNet(in, std::move(copy));
}

size_t LayerNet::param_count() const {
  size_t n = 0;
  for (const auto& l : layers_) n += l.param_count();
  return n;
}

std::vector<double> LayerNet::serialize_params() const {
  std::vector<double> out;
  out.reserve(param_count());
  for (const auto& l : layers_) l.append_params(out);
  return out;
}

void LayerNet::load_params(const std::vector<double>& blob) {
  check_mutable("load_params");
  if (blob.size() != param_count())
    throw ValidationError("load_params: blob size mismatch (expected " +
                          std::to_string(param_count()) + ", got " + std::to_string(blob.size()) +
                          ")");
  const double* src = blob.data();
  for (auto& l : layers_) src += l.load_params(src);
}

void LayerNet::check_mutable(const char* what) const {
  if (frozen_)
    throw ValidationError(std::string(what) + ": network is frozen and immutable");
}

void LayerNet::for_each_trainable(const std::function<void(Layer&)>& fn) {
  check_mutable("for_each_trainable");
  for (auto& l : layers_)
    if (l.has_params()) fn(l);
}

std::string LayerNet::arch_string() const {
  std::ostringstream os;
  os << input_shape_.c << "x" << input_shape_.h << "x" << input_shape_.w;
  for (const auto& l : layers_) os << "|" << l.spec_string();
  return os.str();
}

LayerNet LayerNet::from_arch_string(const std::string& arch) {
  std::vector<std::string> parts;
  std::stringstream ss(arch);
  std::string tok;
  while (std::getline(ss, tok, '|')) parts.push_back(tok);
  if (parts.empty()) throw ValidationError("empty arch string");
  TensorShape in;
  if (sscanf(parts[0].c_str(), "%dx%dx%d", &in.c, &in.h, &in.w) != 3)
    throw ValidationError("bad arch input shape: " + parts[0]);
  std::vector<Layer> layers;
  for (size_t i = 1; i < parts.size(); ++i) layers.push_back(Layer::from_spec_string(parts[i]));
  return LayerNet(in, std::move(layers));
}

Eigen::VectorXd to_chw(const Image& img) {
  Eigen::VectorXd v(img.channels * img.height * img.width);
  for (int c = 0; c < img.channels; ++c)
    for (int y = 0; y < img.height; ++y)
      for (int x = 0; x < img.width; ++x)
        v[(c * img.height + y) * img.width + x] = img.at(y, x, c);
  return v;
}

// ---------------------------------------------------------------------------
// Architecture registry
// ---------------------------------------------------------------------------

bool arch_exists(const std::string& name) {
  return name == "student20" || name == "teacher7" || name.rfind("toy", 0) == 0 ||
         name == "tiny6";
}

LayerNet make_arch(const std::string& name, int num_classes, int image_size) {
  const Activation relu = Activation::kRelu;
  if (name == "student20") {
    // ~96k parameters; the long dense tail makes layer-fraction partitioning
    // meaningful at small tuned fractions.
    if (image_size % 8 != 0) throw ValidationError("student20 requires image_size % 8 == 0");
    const int flat = 32 * (image_size / 8) * (image_size / 8);
    std::vector<Layer> layers;
    layers.push_back(Layer::conv(3, 8, 3, relu));
    layers.push_back(Layer::maxpool(2));
    layers.push_back(Layer::conv(8, 16, 3, relu));
    layers.push_back(Layer::maxpool(2));
    layers.push_back(Layer::conv(16, 32, 3, relu));
    layers.push_back(Layer::maxpool(2));
    layers.push_back(Layer::dense(flat, 128, relu));
    layers.push_back(Layer::dense(128, 96, relu));
    layers.push_back(Layer::dense(96, 96, relu));
    layers.push_back(Layer::dense(96, 96, relu));
    layers.push_back(Layer::dense(96, 80, relu));
    layers.push_back(Layer::dense(80, 80, relu));
    layers.push_back(Layer::dense(80, 80, relu));
    layers.push_back(Layer::dense(80, 64, relu));
    layers.push_back(Layer::dense(64, 64, relu));
    layers.push_back(Layer::dense(64, 64, relu));
    layers.push_back(Layer::dense(64, 48, relu));
    layers.push_back(Layer::dense(48, 48, relu));
    layers.push_back(Layer::dense(48, 48, relu));
    layers.push_back(Layer::dense(48, num_classes, Activation::kNone));
    return LayerNet({3, image_size, image_size}, std::move(layers));
  }
  if (name == "teacher7") {
    // ~30k parameters, strictly smaller than student20.
    if (image_size % 4 != 0) throw ValidationError("teacher7 requires image_size % 4 == 0");
    const int flat = 12 * (image_size / 4) * (image_size / 4);
    std::vector<Layer> layers;
    layers.push_back(Layer::conv(3, 8, 3, relu));
    layers.push_back(Layer::maxpool(2));
    layers.push_back(Layer::conv(8, 12, 3, relu));
    layers.push_back(Layer::maxpool(2));
    layers.push_back(Layer::dense(flat, 96, relu));
    layers.push_back(Layer::dense(96, 96, relu));
    layers.push_back(Layer::dense(96, num_classes, Activation::kNone));
    return LayerNet({3, image_size, image_size}, std::move(layers));
  }
  if (name.rfind("toy", 0) == 0) {
    // toy<N>: N dense layers of width 8 on a flat 8-d input.
    const int n = std::stoi(name.substr(3));
    if (n < 1) throw ValidationError("toy arch needs at least one layer");
    std::vector<Layer> layers;
    for (int i = 0; i < n - 1; ++i) layers.push_back(Layer::dense(8, 8, relu));
    layers.push_back(Layer::dense(8, num_classes, Activation::kNone));
    return LayerNet({8, 1, 1}, std::move(layers));
  }
  if (name == "tiny6") {
    // Small conv net for gradient checks: exercises conv, pool and dense.
    std::vector<Layer> layers;
    layers.push_back(Layer::conv(2, 3, 3, relu));
    layers.push_back(Layer::maxpool(2));
    layers.push_back(Layer::dense(3 * (image_size / 2) * (image_size / 2), 12, relu));
    layers.push_back(Layer::dense(12, 10, relu));
    layers.push_back(Layer::dense(10, 8, relu));
    layers.push_back(Layer::dense(8, num_classes, Activation::kNone));
    return LayerNet({2, image_size, image_size}, std::move(layers));
  }
  throw ValidationError("unknown architecture: " + name);
}

}  // namespace rkd
