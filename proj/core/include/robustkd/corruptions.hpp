#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "robustkd/dataset.hpp"
#include "robustkd/image.hpp"

namespace rkd {

// ---------------------------------------------------------------------------
// Corruption catalogue
// ---------------------------------------------------------------------------

enum class CorruptionFamily { kNoise, kBlur, kDigital, kWeatherProxy };

std::string family_name(CorruptionFamily f);
CorruptionFamily family_from_name(const std::string& name);

// Five distortion magnitudes per kind, non-decreasing in severity. The
// interpretation of a magnitude is kind-specific (noise sigma, blur sigma,
// quantization coarseness, ...).
struct KindEntry {
  CorruptionFamily family;
  std::array<double, 5> magnitudes;
};

class SeverityTables {
 public:
  SeverityTables() = default;
  explicit SeverityTables(std::map<std::string, KindEntry> kinds);

  bool has_kind(const std::string& kind) const { return kinds_.count(kind) > 0; }
  const KindEntry& entry(const std::string& kind) const;
  double magnitude(const std::string& kind, int severity) const;
  std::vector<std::string> kind_names() const;
  const std::map<std::string, KindEntry>& kinds() const { return kinds_; }

 private:
  std::map<std::string, KindEntry> kinds_;
};

// Catalogue frozen in configs/corruptions.json; the builtin copy keeps the
// toolkit usable without a file path. A unit test pins the two to each other.
const SeverityTables& default_severity_tables();

// Loads and schema-validates a severity-table file. Rejects unknown families,
// magnitude vectors that are not length 5, and decreasing magnitudes.
SeverityTables load_severity_tables(const std::string& path);

struct CorruptionSpec {
  std::string kind;
  int severity = 1;  // 1..5
  uint64_t seed = 0;

  CorruptionSpec(std::string kind_, int severity_, uint64_t seed_);
  CorruptionFamily family(const SeverityTables& tables) const;
};

// Applies one corruption. Pure function of (image, spec, tables): identical
// inputs give bit-identical outputs. Output is clamped to [0, 1].
Image corrupt(const Image& image, const CorruptionSpec& spec,
              const SeverityTables& tables = default_severity_tables());

// ---------------------------------------------------------------------------
// Augmentation chains (mixture-of-branches, convex skip with the clean image)
// ---------------------------------------------------------------------------

enum class ChainOpKind {
  kTranslateX,
  kTranslateY,
  kRotate,
  kShear,
  kBrightness,
  kContrast,
  kSaturate,
  kPosterize,
  kSolarize,
};

std::string chain_op_name(ChainOpKind k);

struct ChainOp {
  ChainOpKind kind;
  double magnitude;  // in [-1, 1]; 0 means identity (the op is skipped)
};

struct AugmentationChain {
  int depth = 1;                        // ops per branch
  std::vector<ChainOp> ops;             // branch-major, size = branches * depth
  std::vector<double> branch_weights;   // simplex over branches
  double skip_weight = 0.0;             // convex mix with the clean image
  uint64_t seed = 0;

  int branches() const { return static_cast<int>(branch_weights.size()); }
  // Throws ValidationError on empty ops, weight-sum off the simplex by more
  // than 1e-9, out-of-range skip weight, or ops/branches size mismatch.
  void validate() const;
};

struct ChainPolicy {
  int max_depth = 3;
  int max_branches = 3;
};

// Draws a random chain: Dirichlet(1,..,1) branch weights, uniform skip
// weight, uniform op kinds and magnitudes.
AugmentationChain sample_chain(const ChainPolicy& policy, uint64_t seed);

// out = skip * image + (1 - skip) * sum_b w_b * branch_b(image), clamped.
Image augment_chain(const Image& image, const AugmentationChain& chain);

// ---------------------------------------------------------------------------
// Augmented dataset (clean + shifted pairs with the beta gate)
// ---------------------------------------------------------------------------

struct Provenance {
  enum class Type { kCorruption, kChain } type;
  std::string kind;  // corruption kind, or "chain"
  int severity = 0;  // corruption only
  int depth = 0;     // chain only
  uint64_t seed = 0;
};

struct AugmentedExample {
  Image input;
  int label = 0;
  int beta = 1;  // 1 = clean, 0 = augmented
  std::optional<Provenance> provenance;

  // beta = 1 implies provenance is absent.
  void validate() const;
};

using AugmentedDataset = std::vector<AugmentedExample>;

struct AugmentPolicy {
  double chain_probability = 0.5;       // chain vs single corruption
  std::vector<std::string> kinds;       // corruption kinds used when not chaining
  int severity_min = 1;
  int severity_max = 5;
  ChainPolicy chain;
};

// Every clean example with beta=1 plus round(aug_ratio * |clean|) augmented
// examples with beta=0. Augmented sources are drawn class-stratified so the
// label distribution of the shifted part matches the clean part up to
// rounding. `threads` parallelizes generation; output order is by index.
AugmentedDataset build_augmented_dataset(const Dataset& clean, const AugmentPolicy& policy,
                                         double aug_ratio, uint64_t seed, int threads = 1,
                                         const SeverityTables& tables = default_severity_tables());

// Deterministic subsample of fraction `a`, stratified over the beta gate so
// clean/augmented proportions survive subsampling.
AugmentedDataset take_fraction(const AugmentedDataset& data, double a, uint64_t seed);

// Line-delimited manifest: one JSON record per example
// (index, beta, label, provenance, seed).
void write_manifest(const AugmentedDataset& data, const std::string& path);

// ---------------------------------------------------------------------------
// Perturbation sequences (stability / flipping-rate inputs)
// ---------------------------------------------------------------------------

struct PerturbationSequence {
  Image base;
  std::vector<Image> frames;  // frames[0] == base
  std::string kind;
  int length = 0;
};

struct PerturbationPolicy {
  double step = 0.02;  // per-frame perturbation scale
};

// kinds: "noise_walk" (additive gaussian random walk) and "brightness_walk"
// (drifting global brightness). frames[0] is the untouched base image.
PerturbationSequence build_perturbation_sequence(const Image& image, const std::string& kind,
                                                 int length, uint64_t seed,
                                                 const PerturbationPolicy& policy = {});

// Upper bound on the L2 distance between consecutive frames for a policy;
// used by callers that assert the small-step contract.
double perturbation_step_bound(const Image& image, const PerturbationPolicy& policy);

}  // namespace rkd
