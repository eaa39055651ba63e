#include "robustkd/corruptions.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include <nlohmann/json.hpp>

#include "robustkd/parallel.hpp"
#include "robustkd/rng.hpp"

namespace rkd {

using nlohmann::json;

// ---------------------------------------------------------------------------
// Catalogue
// ---------------------------------------------------------------------------

std::string family_name(CorruptionFamily f) {
  switch (f) {
    case CorruptionFamily::kNoise: return "noise";
    case CorruptionFamily::kBlur: return "blur";
    case CorruptionFamily::kDigital: return "digital";
    case CorruptionFamily::kWeatherProxy: return "weather-proxy";
  }
  throw ValidationError("bad corruption family");
}

CorruptionFamily family_from_name(const std::string& name) {
  if (name == "noise") return CorruptionFamily::kNoise;
  if (name == "blur") return CorruptionFamily::kBlur;
  if (name == "digital") return CorruptionFamily::kDigital;
  if (name == "weather-proxy") return CorruptionFamily::kWeatherProxy;
  throw ValidationError("unknown corruption family: " + name);
}

namespace {

void validate_entry(const std::string& kind, const KindEntry& e) {
  double prev = -1.0;
  for (double m : e.magnitudes) {
    if (!(m >= 0.0)) throw ValidationError("severity table for '" + kind + "': negative magnitude");
    if (m < prev)
      throw ValidationError("severity table for '" + kind + "': magnitudes must be non-decreasing");
    prev = m;
  }
}

}  // namespace

SeverityTables::SeverityTables(std::map<std::string, KindEntry> kinds) : kinds_(std::move(kinds)) {
  for (const auto& [kind, entry] : kinds_) validate_entry(kind, entry);
}

const KindEntry& SeverityTables::entry(const std::string& kind) const {
  auto it = kinds_.find(kind);
  if (it == kinds_.end()) throw UnsupportedCorruptionError("unsupported corruption kind: " + kind);
  return it->second;
}

double SeverityTables::magnitude(const std::string& kind, int severity) const {
  if (severity < 1 || severity > 5)
    throw ValidationError("severity must be in 1..5, got " + std::to_string(severity));
  return entry(kind).magnitudes[static_cast<size_t>(severity - 1)];
}

std::vector<std::string> SeverityTables::kind_names() const {
  std::vector<std::string> names;
  names.reserve(kinds_.size());
  for (const auto& [k, _] : kinds_) names.push_back(k);
  return names;
}

const SeverityTables& default_severity_tables() {
  // Magnitudes frozen after eyeballing monotone degradation on generated
  // samples; configs/corruptions.json carries the same values.
  static const SeverityTables tables(std::map<std::string, KindEntry>{
      {"gaussian_noise", {CorruptionFamily::kNoise, {0.04, 0.07, 0.10, 0.14, 0.20}}},
      {"shot_noise", {CorruptionFamily::kNoise, {0.004, 0.010, 0.020, 0.040, 0.085}}},
      {"impulse_noise", {CorruptionFamily::kNoise, {0.03, 0.06, 0.10, 0.15, 0.22}}},
      {"gaussian_blur", {CorruptionFamily::kBlur, {0.50, 0.75, 1.00, 1.40, 1.90}}},
      {"box_blur", {CorruptionFamily::kBlur, {1.0, 1.0, 2.0, 2.0, 3.0}}},
      {"quantize", {CorruptionFamily::kDigital, {0.0833, 0.125, 0.1667, 0.25, 0.3333}}},
      {"pixelate", {CorruptionFamily::kDigital, {2.0, 2.0, 3.0, 4.0, 5.0}}},
      {"contrast", {CorruptionFamily::kDigital, {0.35, 0.50, 0.62, 0.72, 0.80}}},
      {"identity", {CorruptionFamily::kDigital, {0.0, 0.0, 0.0, 0.0, 0.0}}},
      {"brightness", {CorruptionFamily::kWeatherProxy, {0.09, 0.15, 0.21, 0.28, 0.36}}},
      {"fog", {CorruptionFamily::kWeatherProxy, {0.20, 0.30, 0.42, 0.55, 0.70}}},
  });
  return tables;
}

SeverityTables load_severity_tables(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open severity table file: " + path);
  json doc;
  try {
    in >> doc;
  } catch (const json::exception& e) {
    throw ValidationError("severity table parse error in " + path + ": " + e.what());
  }
  if (!doc.is_object() || !doc.contains("kinds") || !doc["kinds"].is_object())
    throw ValidationError("severity table file must contain a 'kinds' object");
  std::map<std::string, KindEntry> kinds;
  for (const auto& [name, spec] : doc["kinds"].items()) {
    if (!spec.contains("family") || !spec.contains("magnitudes"))
      throw ValidationError("kind '" + name + "': requires 'family' and 'magnitudes'");
    KindEntry e;
    e.family = family_from_name(spec["family"].get<std::string>());
    const auto& mags = spec["magnitudes"];
    if (!mags.is_array() || mags.size() != 5)
      throw ValidationError("kind '" + name + "': magnitudes must have exactly 5 entries");
    for (size_t i = 0; i < 5; ++i) e.magnitudes[i] = mags[i].get<double>();
    validate_entry(name, e);
    kinds.emplace(name, e);
  }
  return SeverityTables(std::move(kinds));
}

CorruptionSpec::CorruptionSpec(std::string kind_, int severity_, uint64_t seed_)
    : kind(std::move(kind_)), severity(severity_), seed(seed_) {
  if (severity < 1 || severity > 5)
    throw ValidationError("corruption severity must be in 1..5, got " + std::to_string(severity));
}

CorruptionFamily CorruptionSpec::family(const SeverityTables& tables) const {
  return tables.entry(kind).family;
}

// ---------------------------------------------------------------------------
// Corruption generators
// ---------------------------------------------------------------------------

namespace {

Image gaussian_noise(const Image& src, double sigma, Rng& rng) {
  Image out = src;
  for (auto& v : out.pix) v += sigma * rng.normal();
  return out;
}

Image shot_noise(const Image& src, double inv_peak, Rng& rng) {
  Image out = src;
  const double peak = 1.0 / std::max(inv_peak, 1e-9);
  for (auto& v : out.pix) v = rng.poisson(std::max(v, 0.0) * peak) / peak;
  return out;
}

Image impulse_noise(const Image& src, double fraction, Rng& rng) {
  Image out = src;
  for (int y = 0; y < out.height; ++y)
    for (int x = 0; x < out.width; ++x) {
      const double u = rng.uniform01();
      if (u < fraction) {
        const double value = u < fraction * 0.5 ? 0.0 : 1.0;
        for (int c = 0; c < out.channels; ++c) out.at(y, x, c) = value;
      }
    }
  return out;
}

std::vector<double> gaussian_kernel(double sigma) {
  const int radius = std::max(1, static_cast<int>(std::ceil(2.5 * sigma)));
  std::vector<double> k(static_cast<size_t>(2 * radius + 1));
  double sum = 0.0;
  for (int i = -radius; i <= radius; ++i) {
    const double w = std::exp(-0.5 * (i * i) / (sigma * sigma));
    k[static_cast<size_t>(i + radius)] = w;
    sum += w;
  }
  for (auto& w : k) w /= sum;
  return k;
}

Image convolve_separable(const Image& src, const std::vector<double>& kernel) {
  const int radius = (static_cast<int>(kernel.size()) - 1) / 2;
  Image tmp = src;
  // horizontal
  for (int y = 0; y < src.height; ++y)
    for (int x = 0; x < src.width; ++x)
      for (int c = 0; c < src.channels; ++c) {
        double acc = 0.0;
        for (int i = -radius; i <= radius; ++i) {
          const int xi = std::clamp(x + i, 0, src.width - 1);
          acc += kernel[static_cast<size_t>(i + radius)] * src.at(y, xi, c);
        }
        tmp.at(y, x, c) = acc;
      }
  Image out = tmp;
  // vertical
  for (int y = 0; y < src.height; ++y)
    for (int x = 0; x < src.width; ++x)
      for (int c = 0; c < src.channels; ++c) {
        double acc = 0.0;
        for (int i = -radius; i <= radius; ++i) {
          const int yi = std::clamp(y + i, 0, src.height - 1);
          acc += kernel[static_cast<size_t>(i + radius)] * tmp.at(yi, x, c);
        }
        out.at(y, x, c) = acc;
      }
  return out;
}

Image box_blur(const Image& src, int radius) {
  Image out = src;
  const double norm = 1.0 / ((2 * radius + 1) * (2 * radius + 1));
  for (int y = 0; y < src.height; ++y)
    for (int x = 0; x < src.width; ++x)
      for (int c = 0; c < src.channels; ++c) {
        double acc = 0.0;
        for (int dy = -radius; dy <= radius; ++dy)
          for (int dx = -radius; dx <= radius; ++dx) {
            const int yi = std::clamp(y + dy, 0, src.height - 1);
            const int xi = std::clamp(x + dx, 0, src.width - 1);
            acc += src.at(yi, xi, c);
          }
        out.at(y, x, c) = acc * norm;
      }
  return out;
}

Image quantize(const Image& src, double coarseness) {
  const int levels = std::max(2, static_cast<int>(std::lround(1.0 / std::max(coarseness, 1e-9))));
  Image out = src;
  for (auto& v : out.pix) v = std::round(v * (levels - 1)) / (levels - 1);
  return out;
}

Image pixelate(const Image& src, int block) {
  Image out = src;
  for (int y0 = 0; y0 < src.height; y0 += block)
    for (int x0 = 0; x0 < src.width; x0 += block) {
      const int y1 = std::min(y0 + block, src.height);
      const int x1 = std::min(x0 + block, src.width);
      for (int c = 0; c < src.channels; ++c) {
        double acc = 0.0;
        for (int y = y0; y < y1; ++y)
          for (int x = x0; x < x1; ++x) acc += src.at(y, x, c);
        acc /= (y1 - y0) * (x1 - x0);
        for (int y = y0; y < y1; ++y)
          for (int x = x0; x < x1; ++x) out.at(y, x, c) = acc;
      }
    }
  return out;
}

Image contrast(const Image& src, double reduction) {
  const double scale = 1.0 - reduction;
  Image out = src;
  for (auto& v : out.pix) v = (v - 0.5) * scale + 0.5;
  return out;
}

Image brightness(const Image& src, double shift) {
  Image out = src;
  for (auto& v : out.pix) v += shift;
  return out;
}

Image fog(const Image& src, double haze) {
  Image out = src;
  for (auto& v : out.pix) v = (1.0 - haze) * v + haze;
  return out;
}

}  // namespace

Image corrupt(const Image& image, const CorruptionSpec& spec, const SeverityTables& tables) {
  const double mag = tables.magnitude(spec.kind, spec.severity);
  Rng rng(spec.seed);
  Image out;
  if (spec.kind == "identity") {
    return image;
  } else if (spec.kind == "gaussian_noise") {
    out = gaussian_noise(image, mag, rng);
  } else if (spec.kind == "shot_noise") {
    out = shot_noise(image, mag, rng);
  } else if (spec.kind == "impulse_noise") {
    out = impulse_noise(image, mag, rng);
  } else if (spec.kind == "gaussian_blur") {
    out = convolve_separable(image, gaussian_kernel(mag));
  } else if (spec.kind == "box_blur") {
    out = box_blur(image, static_cast<int>(std::lround(mag)));
  } else if (spec.kind == "quantize") {
    out = quantize(image, mag);
  } else if (spec.kind == "pixelate") {
    out = pixelate(image, static_cast<int>(std::lround(mag)));
  } else if (spec.kind == "contrast") {
    out = contrast(image, mag);
  } else if (spec.kind == "brightness") {
    out = brightness(image, mag);
  } else if (spec.kind == "fog") {
    out = fog(image, mag);
  } else {
    // Kind present in the table but without a generator: refuse rather than
    // silently pass the image through.
    throw UnsupportedCorruptionError("no generator for corruption kind: " + spec.kind);
  }
  out.clamp01();
  return out;
}

// ---------------------------------------------------------------------------
// Augmentation chains
// ---------------------------------------------------------------------------

std::string chain_op_name(ChainOpKind k) {
  switch (k) {
    case ChainOpKind::kTranslateX: return "translate_x";
    case ChainOpKind::kTranslateY: return "translate_y";
    case ChainOpKind::kRotate: return "rotate";
    case ChainOpKind::kShear: return "shear";
    case ChainOpKind::kBrightness: return "brightness";
    case ChainOpKind::kContrast: return "contrast";
    case ChainOpKind::kSaturate: return "saturate";
    case ChainOpKind::kPosterize: return "posterize";
    case ChainOpKind::kSolarize: return "solarize";
  }
  throw ValidationError("bad chain op kind");
}

void AugmentationChain::validate() const {
  if (depth < 1) throw ValidationError("augmentation chain: depth must be >= 1");
  if (ops.empty()) throw ValidationError("augmentation chain: ops sequence is empty");
  if (branch_weights.empty()) throw ValidationError("augmentation chain: no branches");
  if (ops.size() != static_cast<size_t>(branches()) * static_cast<size_t>(depth))
    throw ValidationError("augmentation chain: ops size must equal branches * depth");
  double sum = 0.0;
  for (double w : branch_weights) {
    if (w < 0.0) throw ValidationError("augmentation chain: negative branch weight");
    sum += w;
  }
  if (std::abs(sum - 1.0) > 1e-9)
    throw ValidationError("augmentation chain: branch weights must sum to 1 within 1e-9");
  if (skip_weight < 0.0 || skip_weight > 1.0)
    throw ValidationError("augmentation chain: skip weight must be in [0, 1]");
  for (const auto& op : ops)
    if (op.magnitude < -1.0 || op.magnitude > 1.0)
      throw ValidationError("augmentation chain: op magnitude must be in [-1, 1]");
}

namespace {

Image apply_geometric(const Image& src, ChainOpKind kind, double m) {
  Image out(src.height, src.width, src.channels);
  const double cy = (src.height - 1) / 2.0;
  const double cx = (src.width - 1) / 2.0;
  for (int y = 0; y < src.height; ++y)
    for (int x = 0; x < src.width; ++x) {
      double sy = y, sx = x;
      switch (kind) {
        case ChainOpKind::kTranslateX: sx = x - m * 0.25 * src.width; break;
        case ChainOpKind::kTranslateY: sy = y - m * 0.25 * src.height; break;
        case ChainOpKind::kRotate: {
          const double a = m * (30.0 * M_PI / 180.0);
          const double dy = y - cy, dx = x - cx;
          sy = cy + std::cos(a) * dy - std::sin(a) * dx;
          sx = cx + std::sin(a) * dy + std::cos(a) * dx;
          break;
        }
        case ChainOpKind::kShear: sx = x - m * 0.3 * (y - cy); break;
        default: throw ValidationError("not a geometric op");
      }
      for (int c = 0; c < src.channels; ++c) out.at(y, x, c) = src.sample(sy, sx, c);
    }
  return out;
}

Image apply_chain_op(const Image& src, const ChainOp& op) {
  if (op.magnitude == 0.0) return src;  // magnitude 0 is the identity by contract
  const double m = op.magnitude;
  switch (op.kind) {
    case ChainOpKind::kTranslateX:
    case ChainOpKind::kTranslateY:
    case ChainOpKind::kRotate:
    case ChainOpKind::kShear: return apply_geometric(src, op.kind, m);
    case ChainOpKind::kBrightness: {
      Image out = src;
      for (auto& v : out.pix) v += 0.3 * m;
      return out;
    }
    case ChainOpKind::kContrast: {
      Image out = src;
      for (auto& v : out.pix) v = (v - 0.5) * (1.0 + m) + 0.5;
      return out;
    }
    case ChainOpKind::kSaturate: {
      Image out = src;
      for (int y = 0; y < src.height; ++y)
        for (int x = 0; x < src.width; ++x) {
          double lum = 0.0;
          for (int c = 0; c < src.channels; ++c) lum += src.at(y, x, c);
          lum /= src.channels;
          for (int c = 0; c < src.channels; ++c)
            out.at(y, x, c) = lum + (1.0 + m) * (src.at(y, x, c) - lum);
        }
      return out;
    }
    case ChainOpKind::kPosterize: {
      const int levels = std::max(3, static_cast<int>(std::lround(18.0 - std::abs(m) * 14.0)));
      Image out = src;
      for (auto& v : out.pix)
        v = std::round(std::clamp(v, 0.0, 1.0) * (levels - 1)) / (levels - 1);
      return out;
    }
    case ChainOpKind::kSolarize: {
      const double threshold = 1.0 - std::abs(m) * 0.7;
      Image out = src;
      for (auto& v : out.pix)
        if (v > threshold) v = 1.0 - v;
      return out;
    }
  }
  throw ValidationError("bad chain op kind");
}

}  // namespace

AugmentationChain sample_chain(const ChainPolicy& policy, uint64_t seed) {
  Rng rng(seed);
  AugmentationChain chain;
  chain.seed = seed;
  const int branches = rng.uniform_int(1, std::max(1, policy.max_branches));
  chain.depth = rng.uniform_int(1, std::max(1, policy.max_depth));
  chain.branch_weights = rng.dirichlet_ones(branches);
  chain.skip_weight = rng.uniform01();  // Beta(1,1)
  chain.ops.reserve(static_cast<size_t>(branches) * chain.depth);
  for (int b = 0; b < branches; ++b)
    for (int d = 0; d < chain.depth; ++d) {
      ChainOp op;
      op.kind = static_cast<ChainOpKind>(rng.uniform_int(0, 8));
      const double sign = rng.uniform01() < 0.5 ? -1.0 : 1.0;
      op.magnitude = sign * rng.uniform(0.1, 1.0);
      chain.ops.push_back(op);
    }
  chain.validate();
  return chain;
}

Image augment_chain(const Image& image, const AugmentationChain& chain) {
  chain.validate();
  Image out(image.height, image.width, image.channels);
  for (auto& v : out.pix) v = 0.0;
  if (chain.skip_weight < 1.0) {
    for (int b = 0; b < chain.branches(); ++b) {
      Image branch = image;
      for (int d = 0; d < chain.depth; ++d)
        branch = apply_chain_op(branch, chain.ops[static_cast<size_t>(b) * chain.depth + d]);
      const double w = (1.0 - chain.skip_weight) * chain.branch_weights[static_cast<size_t>(b)];
      for (size_t i = 0; i < out.pix.size(); ++i) out.pix[i] += w * branch.pix[i];
    }
  }
  for (size_t i = 0; i < out.pix.size(); ++i) out.pix[i] += chain.skip_weight * image.pix[i];
  out.clamp01();
  return out;
}

// ---------------------------------------------------------------------------
// Augmented dataset
// ---------------------------------------------------------------------------

void AugmentedExample::validate() const {
  if (beta != 0 && beta != 1) throw ValidationError("beta gate must be 0 or 1");
  if (beta == 1 && provenance.has_value())
    throw ValidationError("clean example (beta=1) must not carry provenance");
}

namespace {

// Largest-remainder allocation of `total` augmented slots over class counts.
std::vector<int> allocate_per_class(const std::vector<int>& class_counts, long total) {
  const long n = std::accumulate(class_counts.begin(), class_counts.end(), 0L);
  std::vector<int> alloc(class_counts.size(), 0);
  std::vector<std::pair<double, size_t>> remainders;
  long assigned = 0;
  for (size_t c = 0; c < class_counts.size(); ++c) {
    const double quota = static_cast<double>(total) * class_counts[c] / static_cast<double>(n);
    alloc[c] = static_cast<int>(std::floor(quota));
    assigned += alloc[c];
    remainders.emplace_back(quota - alloc[c], c);
  }
  std::sort(remainders.begin(), remainders.end(), [](const auto& a, const auto& b) {
    if (a.first != b.first) return a.first > b.first;
    return a.second < b.second;
  });
  for (long i = 0; i < total - assigned; ++i) alloc[remainders[static_cast<size_t>(i)].second]++;
  return alloc;
}

AugmentedExample make_augmented(const Dataset& clean, int source, uint64_t item_seed,
                                const AugmentPolicy& policy, const SeverityTables& tables) {
  Rng rng(item_seed);
  AugmentedExample ex;
  ex.label = clean.labels[static_cast<size_t>(source)];
  ex.beta = 0;
  const bool use_chain = !policy.kinds.empty()
                             ? rng.uniform01() < policy.chain_probability
                             : true;
  if (use_chain) {
    const AugmentationChain chain = sample_chain(policy.chain, rng.next_u64());
    ex.input = augment_chain(clean.images[static_cast<size_t>(source)], chain);
    ex.provenance = Provenance{Provenance::Type::kChain, "chain", 0, chain.depth, chain.seed};
  } else {
    const auto& kind = policy.kinds[static_cast<size_t>(
        rng.uniform_int(0, static_cast<int>(policy.kinds.size()) - 1))];
    const int severity = rng.uniform_int(policy.severity_min, policy.severity_max);
    const CorruptionSpec spec(kind, severity, rng.next_u64());
    ex.input = corrupt(clean.images[static_cast<size_t>(source)], spec, tables);
    ex.provenance = Provenance{Provenance::Type::kCorruption, kind, severity, 0, spec.seed};
  }
  return ex;
}

}  // namespace

AugmentedDataset build_augmented_dataset(const Dataset& clean, const AugmentPolicy& policy,
                                         double aug_ratio, uint64_t seed, int threads,
                                         const SeverityTables& tables) {
  if (clean.empty()) throw ValidationError("build_augmented_dataset: clean dataset is empty");
  if (!(aug_ratio > 0.0 && aug_ratio <= 1.0))
    throw ValidationError("build_augmented_dataset: aug_ratio must be in (0, 1]");
  if (policy.severity_min < 1 || policy.severity_max > 5 ||
      policy.severity_min > policy.severity_max)
    throw ValidationError("build_augmented_dataset: bad severity range");
  for (const auto& kind : policy.kinds) tables.entry(kind);  // throws on unknown kinds

  // Class-stratified choice of augmentation sources.
  std::vector<std::vector<int>> by_class(static_cast<size_t>(clean.num_classes));
  for (size_t i = 0; i < clean.size(); ++i)
    by_class[static_cast<size_t>(clean.labels[i])].push_back(static_cast<int>(i));
  std::vector<int> class_counts;
  class_counts.reserve(by_class.size());
  for (const auto& v : by_class) class_counts.push_back(static_cast<int>(v.size()));

  const long total_aug = std::lround(aug_ratio * static_cast<double>(clean.size()));
  const std::vector<int> alloc = allocate_per_class(class_counts, total_aug);

  std::vector<int> sources;
  sources.reserve(static_cast<size_t>(total_aug));
  for (size_t c = 0; c < by_class.size(); ++c) {
    auto pool = by_class[c];
    Rng rng(mix_seed(seed, 0x5eed0000ULL + c));
    rng.shuffle(pool);
    for (int k = 0; k < alloc[c]; ++k) sources.push_back(pool[static_cast<size_t>(k)]);
  }
  std::sort(sources.begin(), sources.end());

  AugmentedDataset out;
  out.reserve(clean.size() + sources.size());
  for (size_t i = 0; i < clean.size(); ++i) {
    AugmentedExample ex;
    ex.input = clean.images[i];
    ex.label = clean.labels[i];
    ex.beta = 1;
    out.push_back(std::move(ex));
  }
  auto augmented = ordered_parallel_map<AugmentedExample>(
      static_cast<int>(sources.size()), threads, [&](int i) {
        const int source = sources[static_cast<size_t>(i)];
        return make_augmented(clean, source, mix_seed(seed, 0xa06aaaULL + source), policy, tables);
      });
  for (auto& ex : augmented) out.push_back(std::move(ex));
  for (const auto& ex : out) ex.validate();
  return out;
}

AugmentedDataset take_fraction(const AugmentedDataset& data, double a, uint64_t seed) {
  if (!(a > 0.0 && a <= 1.0)) throw ValidationError("take_fraction: fraction must be in (0, 1]");
  if (a == 1.0) return data;
  std::vector<int> keep;
  for (int beta : {1, 0}) {
    std::vector<int> group;
    for (size_t i = 0; i < data.size(); ++i)
      if (data[i].beta == beta) group.push_back(static_cast<int>(i));
    Rng rng(mix_seed(seed, static_cast<uint64_t>(beta)));
    rng.shuffle(group);
    const long take = std::lround(a * static_cast<double>(group.size()));
    keep.insert(keep.end(), group.begin(), group.begin() + take);
  }
  std::sort(keep.begin(), keep.end());
  AugmentedDataset out;
  out.reserve(keep.size());
  for (int i : keep) out.push_back(data[static_cast<size_t>(i)]);
  return out;
}

void write_manifest(const AugmentedDataset& data, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw ValidationError("cannot open manifest for writing: " + path);
  for (size_t i = 0; i < data.size(); ++i) {
    const auto& ex = data[i];
    json rec;
    rec["index"] = i;
    rec["beta"] = ex.beta;
    rec["label"] = ex.label;
    if (ex.provenance) {
      json prov;
      prov["type"] = ex.provenance->type == Provenance::Type::kChain ? "chain" : "corruption";
      prov["kind"] = ex.provenance->kind;
      if (ex.provenance->type == Provenance::Type::kCorruption)
        prov["severity"] = ex.provenance->severity;
      else
        prov["depth"] = ex.provenance->depth;
      rec["provenance"] = prov;
      rec["seed"] = ex.provenance->seed;
    } else {
      rec["provenance"] = nullptr;
      rec["seed"] = nullptr;
    }
    out << rec.dump() << "\n";
  }
}

// ---------------------------------------------------------------------------
// Perturbation sequences
// ---------------------------------------------------------------------------

PerturbationSequence build_perturbation_sequence(const Image& image, const std::string& kind,
                                                 int length, uint64_t seed,
                                                 const PerturbationPolicy& policy) {
  if (length < 2) throw ValidationError("perturbation sequence length must be >= 2");
  if (kind != "noise_walk" && kind != "brightness_walk")
    throw ValidationError("unknown perturbation kind: " + kind);
  PerturbationSequence seq;
  seq.base = image;
  seq.kind = kind;
  seq.length = length;
  seq.frames.reserve(static_cast<size_t>(length));
  seq.frames.push_back(image);
  Rng rng(seed);
  if (kind == "noise_walk") {
    Image cur = image;
    for (int t = 1; t < length; ++t) {
      for (auto& v : cur.pix) v += policy.step * rng.normal();
      cur.clamp01();
      seq.frames.push_back(cur);
    }
  } else {
    double shift = 0.0;
    for (int t = 1; t < length; ++t) {
      // Truncated step keeps every frame-to-frame distance under the bound.
      shift += policy.step * std::clamp(rng.normal(), -3.0, 3.0);
      Image cur = image;
      for (auto& v : cur.pix) v += shift;
      cur.clamp01();
      seq.frames.push_back(cur);
    }
  }
  return seq;
}

double perturbation_step_bound(const Image& image, const PerturbationPolicy& policy) {
  return 5.0 * policy.step * std::sqrt(static_cast<double>(image.size()));
}

}  // namespace rkd
