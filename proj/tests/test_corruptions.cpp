#include <gtest/gtest.h>

#include <cmath>
#include <fstream>
#include <numeric>
#include <set>

#include "test_support.hpp"

using namespace rkd;
using rkdtest::constant_image;
using rkdtest::random_image;

namespace {

double empirical_std(const Image& img) {
  const double mean = std::accumulate(img.pix.begin(), img.pix.end(), 0.0) /
                      static_cast<double>(img.pix.size());
  double acc = 0.0;
  for (double v : img.pix) acc += (v - mean) * (v - mean);
  return std::sqrt(acc / static_cast<double>(img.pix.size()));
}

}  // namespace

TEST(CorruptionSpecTest, RejectsSeverityOutOfRange) {
  EXPECT_THROW(CorruptionSpec("gaussian_noise", 0, 1), ValidationError);
  EXPECT_THROW(CorruptionSpec("gaussian_noise", 6, 1), ValidationError);
  EXPECT_NO_THROW(CorruptionSpec("gaussian_noise", 5, 1));
}

TEST(CorruptionSpecTest, UnknownKindIsUnsupported) {
  const Image img = random_image(8, 8, 3, 1);
  EXPECT_THROW(corrupt(img, CorruptionSpec("melt", 3, 1)), UnsupportedCorruptionError);
}

TEST(CorruptTest, IdentityKindReturnsInputExactly) {
  const Image img = random_image(16, 16, 3, 42);
  for (int severity = 1; severity <= 5; ++severity) {
    const Image out = corrupt(img, CorruptionSpec("identity", severity, 9));
    EXPECT_EQ(out.pix, img.pix);
  }
}

// Oracle: empirical pixel std of gaussian noise applied to a mid-gray image
// must match the configured sigma. Clipping at [0,1] shaves at most ~1.2% off
// at the largest table entry, well inside the 5% tolerance.
TEST(CorruptTest, GaussianNoiseStdMatchesSeverityTable) {
  const Image img = constant_image(64, 64, 3, 0.5);  // 12288 pixels
  ASSERT_GE(img.size(), 10000u);
  for (int severity = 1; severity <= 5; ++severity) {
    const double sigma = default_severity_tables().magnitude("gaussian_noise", severity);
    const Image out = corrupt(img, CorruptionSpec("gaussian_noise", severity, 7));
    const double measured = empirical_std(out);
    EXPECT_NEAR(measured, sigma, 0.05 * sigma) << "severity " << severity;
  }
}

TEST(CorruptTest, DeterministicGivenSpec) {
  const Image img = random_image(16, 16, 3, 5);
  for (const auto& kind : default_severity_tables().kind_names()) {
    const CorruptionSpec spec(kind, 4, 123);
    const Image a = corrupt(img, spec);
    const Image b = corrupt(img, spec);
    EXPECT_EQ(a.pix, b.pix) << kind;
  }
}

TEST(CorruptTest, OutputStaysInRangeAndSameShape) {
  const Image img = random_image(16, 16, 3, 6);
  for (const auto& kind : default_severity_tables().kind_names()) {
    const Image out = corrupt(img, CorruptionSpec(kind, 5, 3));
    EXPECT_TRUE(out.same_shape(img));
    for (double v : out.pix) {
      EXPECT_GE(v, 0.0);
      EXPECT_LE(v, 1.0);
    }
  }
}

TEST(SeverityTablesTest, MagnitudesNonDecreasingInSeverity) {
  for (const auto& [kind, entry] : default_severity_tables().kinds()) {
    for (size_t s = 1; s < 5; ++s)
      EXPECT_GE(entry.magnitudes[s], entry.magnitudes[s - 1]) << kind << " severity " << s + 1;
  }
}

TEST(SeverityTablesTest, CatalogueCoversAllFourFamiliesWithAtLeastEightKinds) {
  std::set<CorruptionFamily> families;
  int kinds = 0;
  for (const auto& [kind, entry] : default_severity_tables().kinds()) {
    if (kind == "identity") continue;
    families.insert(entry.family);
    ++kinds;
  }
  EXPECT_GE(kinds, 8);
  EXPECT_EQ(families.size(), 4u);
}

TEST(SeverityTablesTest, ShippedConfigFileMatchesBuiltin) {
  const SeverityTables loaded =
      load_severity_tables(std::string(RKD_SOURCE_DIR) + "/configs/corruptions.json");
  const auto& builtin = default_severity_tables().kinds();
  ASSERT_EQ(loaded.kinds().size(), builtin.size());
  for (const auto& [kind, entry] : builtin) {
    ASSERT_TRUE(loaded.has_kind(kind)) << kind;
    EXPECT_EQ(loaded.entry(kind).family, entry.family);
    for (size_t s = 0; s < 5; ++s)
      EXPECT_DOUBLE_EQ(loaded.entry(kind).magnitudes[s], entry.magnitudes[s]) << kind;
  }
}

TEST(SeverityTablesTest, LoadRejectsBadSchemas) {
  rkdtest::TempDir tmp("tables");
  auto write = [&](const std::string& name, const std::string& text) {
    const std::string path = tmp.path() + "/" + name;
    std::ofstream(path) << text;
    return path;
  };
  EXPECT_THROW(load_severity_tables(tmp.path() + "/missing.json"), ValidationError);
  EXPECT_THROW(load_severity_tables(write("a.json", "not json")), ValidationError);
  EXPECT_THROW(load_severity_tables(write("b.json", R"({"kinds": 3})")), ValidationError);
  EXPECT_THROW(load_severity_tables(write(
                   "c.json", R"({"kinds":{"x":{"family":"noise","magnitudes":[1,2,3]}}})")),
               ValidationError);
  EXPECT_THROW(load_severity_tables(write(
                   "d.json", R"({"kinds":{"x":{"family":"fire","magnitudes":[1,2,3,4,5]}}})")),
               ValidationError);
  EXPECT_THROW(load_severity_tables(write(
                   "e.json", R"({"kinds":{"x":{"family":"noise","magnitudes":[5,4,3,2,1]}}})")),
               ValidationError);
}

// --- augmentation chains ----------------------------------------------------

TEST(AugmentChainTest, SkipWeightOneReturnsInputExactly) {
  const Image img = random_image(16, 16, 3, 8);
  AugmentationChain chain;
  chain.depth = 1;
  chain.ops = {{ChainOpKind::kBrightness, 0.7}};
  chain.branch_weights = {1.0};
  chain.skip_weight = 1.0;
  const Image out = augment_chain(img, chain);
  EXPECT_EQ(out.pix, img.pix);
}

TEST(AugmentChainTest, ZeroMagnitudeOpsAreIdentity) {
  const Image img = random_image(16, 16, 3, 9);
  AugmentationChain chain;
  chain.depth = 3;
  chain.ops = {{ChainOpKind::kRotate, 0.0},
               {ChainOpKind::kPosterize, 0.0},
               {ChainOpKind::kSolarize, 0.0}};
  chain.branch_weights = {1.0};
  chain.skip_weight = 0.0;
  const Image out = augment_chain(img, chain);
  for (size_t i = 0; i < img.pix.size(); ++i) EXPECT_NEAR(out.pix[i], img.pix[i], 1e-12);
}

TEST(AugmentChainTest, EmptyOpsRejected) {
  const Image img = random_image(8, 8, 3, 1);
  AugmentationChain chain;
  chain.depth = 1;
  chain.branch_weights = {1.0};
  EXPECT_THROW(augment_chain(img, chain), ValidationError);
}

TEST(AugmentChainTest, BranchWeightsMustBeSimplex) {
  AugmentationChain chain;
  chain.depth = 1;
  chain.ops = {{ChainOpKind::kBrightness, 0.5}, {ChainOpKind::kContrast, 0.5}};
  chain.branch_weights = {0.6, 0.6};
  EXPECT_THROW(chain.validate(), ValidationError);
  chain.branch_weights = {0.5, 0.5};
  EXPECT_NO_THROW(chain.validate());
}

// Oracle corpus: 100 random images through random depth<=3 chains never leave
// the legal pixel range.
TEST(AugmentChainTest, RandomChainsKeepPixelRangeOverCorpus) {
  ChainPolicy policy;
  policy.max_depth = 3;
  policy.max_branches = 3;
  for (int i = 0; i < 100; ++i) {
    const Image img = random_image(16, 16, 3, 1000 + static_cast<uint64_t>(i));
    const AugmentationChain chain = sample_chain(policy, 2000 + static_cast<uint64_t>(i));
    EXPECT_LE(chain.depth, 3);
    EXPECT_LE(chain.branches(), 3);
    const double wsum =
        std::accumulate(chain.branch_weights.begin(), chain.branch_weights.end(), 0.0);
    EXPECT_NEAR(wsum, 1.0, 1e-9);
    const Image out = augment_chain(img, chain);
    for (double v : out.pix) {
      ASSERT_GE(v, 0.0);
      ASSERT_LE(v, 1.0);
    }
  }
}

TEST(AugmentChainTest, SampledChainDeterministicBySeed) {
  ChainPolicy policy;
  const Image img = random_image(16, 16, 3, 77);
  const Image a = augment_chain(img, sample_chain(policy, 99));
  const Image b = augment_chain(img, sample_chain(policy, 99));
  EXPECT_EQ(a.pix, b.pix);
}

// --- augmented dataset -------------------------------------------------------

namespace {

Dataset tiny_dataset(int size, uint64_t seed) {
  return make_dataset({"shapes10", size, 16, seed});
}

AugmentPolicy tiny_policy() {
  AugmentPolicy p;
  p.chain_probability = 0.5;
  p.kinds = {"gaussian_noise", "contrast"};
  return p;
}

}  // namespace

TEST(BuildAugmentedDatasetTest, RatioOneDoublesTheDataset) {
  const Dataset clean = tiny_dataset(100, 21);
  const AugmentedDataset out = build_augmented_dataset(clean, tiny_policy(), 1.0, 4);
  EXPECT_EQ(out.size(), 200u);
  long clean_count = 0;
  for (const auto& ex : out)
    if (ex.beta == 1) ++clean_count;
  EXPECT_EQ(clean_count, 100);
}

TEST(BuildAugmentedDatasetTest, RatioHalfAddsFiftyPercent) {
  const Dataset clean = tiny_dataset(100, 22);
  EXPECT_EQ(build_augmented_dataset(clean, tiny_policy(), 0.5, 4).size(), 150u);
}

TEST(BuildAugmentedDatasetTest, AugmentedClassDistributionMatchesClean) {
  const Dataset clean = tiny_dataset(200, 23);
  const AugmentedDataset out = build_augmented_dataset(clean, tiny_policy(), 1.0, 4);
  std::vector<int> clean_counts(10, 0), aug_counts(10, 0);
  for (const auto& ex : out) (ex.beta == 1 ? clean_counts : aug_counts)[ex.label]++;
  for (int c = 0; c < 10; ++c) EXPECT_NEAR(aug_counts[c], clean_counts[c], 1.0) << "class " << c;
}

TEST(BuildAugmentedDatasetTest, BetaGateAndProvenanceInvariants) {
  const Dataset clean = tiny_dataset(60, 24);
  const AugmentedDataset out = build_augmented_dataset(clean, tiny_policy(), 1.0, 4);
  for (const auto& ex : out) {
    ex.validate();
    if (ex.beta == 1)
      EXPECT_FALSE(ex.provenance.has_value());
    else
      EXPECT_TRUE(ex.provenance.has_value());
  }
}

TEST(BuildAugmentedDatasetTest, DeterministicAndThreadCountInvariant) {
  const Dataset clean = tiny_dataset(80, 25);
  const AugmentedDataset a = build_augmented_dataset(clean, tiny_policy(), 1.0, 4, 1);
  const AugmentedDataset b = build_augmented_dataset(clean, tiny_policy(), 1.0, 4, 4);
  ASSERT_EQ(a.size(), b.size());
  for (size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i].beta, b[i].beta);
    EXPECT_EQ(a[i].label, b[i].label);
    EXPECT_EQ(a[i].input.pix, b[i].input.pix);
  }
}

TEST(BuildAugmentedDatasetTest, RejectsEmptyAndBadRatio) {
  const Dataset clean = tiny_dataset(10, 26);
  EXPECT_THROW(build_augmented_dataset(Dataset{}, tiny_policy(), 1.0, 4), ValidationError);
  EXPECT_THROW(build_augmented_dataset(clean, tiny_policy(), 0.0, 4), ValidationError);
  EXPECT_THROW(build_augmented_dataset(clean, tiny_policy(), 1.5, 4), ValidationError);
  AugmentPolicy bad = tiny_policy();
  bad.kinds = {"not_a_kind"};
  EXPECT_THROW(build_augmented_dataset(clean, bad, 1.0, 4), UnsupportedCorruptionError);
}

TEST(TakeFractionTest, HalfKeepsProportionsAndIsDeterministic) {
  const Dataset clean = tiny_dataset(100, 27);
  const AugmentedDataset full = build_augmented_dataset(clean, tiny_policy(), 1.0, 4);
  const AugmentedDataset half = take_fraction(full, 0.5, 9);
  EXPECT_EQ(half.size(), 100u);
  long clean_count = 0;
  for (const auto& ex : half)
    if (ex.beta == 1) ++clean_count;
  EXPECT_EQ(clean_count, 50);
  const AugmentedDataset again = take_fraction(full, 0.5, 9);
  ASSERT_EQ(half.size(), again.size());
  for (size_t i = 0; i < half.size(); ++i) EXPECT_EQ(half[i].input.pix, again[i].input.pix);
  EXPECT_THROW(take_fraction(full, 0.0, 9), ValidationError);
}

TEST(ManifestTest, OneRecordPerExample) {
  const Dataset clean = tiny_dataset(20, 28);
  const AugmentedDataset out = build_augmented_dataset(clean, tiny_policy(), 0.5, 4);
  rkdtest::TempDir tmp("manifest");
  const std::string path = tmp.path() + "/manifest.jsonl";
  write_manifest(out, path);
  std::ifstream in(path);
  std::string line;
  size_t lines = 0;
  while (std::getline(in, line)) {
    EXPECT_NE(line.find("\"beta\""), std::string::npos);
    ++lines;
  }
  EXPECT_EQ(lines, out.size());
}

// --- perturbation sequences --------------------------------------------------

TEST(PerturbationSequenceTest, FirstFrameIsTheBase) {
  const Image img = random_image(16, 16, 3, 31);
  const PerturbationSequence seq = build_perturbation_sequence(img, "noise_walk", 2, 5);
  ASSERT_EQ(seq.frames.size(), 2u);
  EXPECT_EQ(seq.frames[0].pix, img.pix);
  EXPECT_EQ(seq.base.pix, img.pix);
}

TEST(PerturbationSequenceTest, DeterministicGivenSeed) {
  const Image img = random_image(16, 16, 3, 32);
  const auto a = build_perturbation_sequence(img, "noise_walk", 10, 6);
  const auto b = build_perturbation_sequence(img, "noise_walk", 10, 6);
  ASSERT_EQ(a.frames.size(), b.frames.size());
  for (size_t t = 0; t < a.frames.size(); ++t) EXPECT_EQ(a.frames[t].pix, b.frames[t].pix);
}

// Oracle: measured per-step L2 distance stays below the policy bound.
TEST(PerturbationSequenceTest, StepDistanceBelowBound) {
  const Image img = random_image(16, 16, 3, 33);
  PerturbationPolicy policy;
  policy.step = 0.02;
  for (const std::string kind : {"noise_walk", "brightness_walk"}) {
    const auto seq = build_perturbation_sequence(img, kind, 10, 7, policy);
    const double bound = perturbation_step_bound(img, policy);
    for (size_t t = 1; t < seq.frames.size(); ++t)
      EXPECT_LE(l2_distance(seq.frames[t], seq.frames[t - 1]), bound) << kind << " step " << t;
  }
}

TEST(PerturbationSequenceTest, RejectsShortSequencesAndUnknownKinds) {
  const Image img = random_image(8, 8, 3, 34);
  EXPECT_THROW(build_perturbation_sequence(img, "noise_walk", 1, 5), ValidationError);
  EXPECT_THROW(build_perturbation_sequence(img, "tornado", 5, 5), ValidationError);
}

// --- datasets ----------------------------------------------------------------

TEST(DatasetTest, GeneratorsAreDeterministicAndBalanced) {
  const Dataset a = tiny_dataset(50, 41);
  const Dataset b = tiny_dataset(50, 41);
  for (size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a.labels[i], b.labels[i]);
    EXPECT_EQ(a.images[i].pix, b.images[i].pix);
  }
  std::vector<int> counts(10, 0);
  for (int y : a.labels) counts[static_cast<size_t>(y)]++;
  for (int c : counts) EXPECT_EQ(c, 5);
}

TEST(DatasetTest, PixelRangeAndUnknownNames) {
  const Dataset ds = make_dataset({"glyphs5", 25, 16, 3});
  EXPECT_EQ(ds.num_classes, 5);
  for (const auto& img : ds.images)
    for (double v : img.pix) {
      ASSERT_GE(v, 0.0);
      ASSERT_LE(v, 1.0);
    }
  EXPECT_THROW(make_dataset({"nope", 10, 16, 1}), ValidationError);
  EXPECT_THROW(make_dataset({"shapes10", 0, 16, 1}), ValidationError);
}
