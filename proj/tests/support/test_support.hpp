#pragma once

#include <functional>
#include <string>
#include <vector>

#include "robustkd/checkpoint.hpp"
#include "robustkd/corruptions.hpp"
#include "robustkd/run.hpp"

namespace rkdtest {

rkd::Image random_image(int height, int width, int channels, uint64_t seed);
rkd::Image constant_image(int height, int width, int channels, double value);

// 2x2x2 images feeding the 8-input toy architectures.
rkd::Image toy_image(uint64_t seed);
rkd::AugmentedExample toy_example(uint64_t seed, int label, int beta);

// toy<depth> dense net partitioned per config; heads copied from the tail.
rkd::MultiHeadModel toy_multihead(int depth, int classes, const rkd::PartitionConfig& cfg,
                                  uint64_t seed, int num_heads = 3);
rkd::LayerNet toy_base(int depth, int classes, uint64_t seed);

// Adds small random offsets to every parameter (biases included). Gradient
// checks need this: freshly built nets have zero biases, so a fully dropped
// layer input puts pre-activations exactly on the ReLU kink where central
// differences and the subgradient legitimately disagree.
rkd::LayerNet jittered(rkd::LayerNet net, uint64_t seed);

// Small conv net (conv/pool/dense mix) on 2x6x6 inputs for gradient checks.
rkd::LayerNet tiny_conv_base(int classes, uint64_t seed);
rkd::Image tiny_conv_image(uint64_t seed);

// Analytic-vs-central-difference check over every tunable parameter.
struct GradCheck {
  double max_rel_err = 0.0;
  size_t params_checked = 0;
};
GradCheck grad_check(rkd::MultiHeadModel& model,
                     const std::function<double(rkd::MultiHeadModel&)>& value_fn,
                     const std::function<void(rkd::MultiHeadModel&)>& backprop_fn,
                     double h = 1e-5);

// Flat gradient vector of one head (zeros when buffers were never touched).
std::vector<double> head_grads(const rkd::MultiHeadModel& model, rkd::Head head);
std::vector<double> shared_grads(const rkd::MultiHeadModel& model);

// Scratch directory under the system temp root; removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& hint);
  ~TempDir();
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const std::string& path() const { return path_; }

 private:
  std::string path_;
};

bool files_byte_equal(const std::string& a, const std::string& b);
std::string slurp(const std::string& path);

// Fast run configuration for integration tests (tiny datasets, few epochs).
std::string tiny_config_json(const std::string& output_root);

struct CliResult {
  int exit_code = -1;
  std::string output;  // stdout + stderr
};
CliResult run_cli(const std::vector<std::string>& args);

}  // namespace rkdtest
