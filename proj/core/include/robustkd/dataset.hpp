#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "robustkd/image.hpp"

namespace rkd {

struct Dataset {
  std::vector<Image> images;
  std::vector<int> labels;
  int num_classes = 0;

  size_t size() const { return images.size(); }
  bool empty() const { return images.empty(); }
};

// Parameters of a procedurally generated dataset. Generators are pure
// functions of (name, size, image_size, seed): the i-th example is always the
// same image regardless of how many examples are requested before it.
struct DatasetSpec {
  std::string name;  // "shapes10" | "glyphs5"
  int size = 0;
  int image_size = 16;
  uint64_t seed = 0;
};

// Names of available generators, for config validation.
bool dataset_exists(const std::string& name);
int dataset_num_classes(const std::string& name);

// Builds the dataset. Labels cycle 0..C-1 so classes are balanced up to
// rounding. Throws ValidationError for unknown names or non-positive sizes.
Dataset make_dataset(const DatasetSpec& spec);

// Single example (used by streaming corruption suites).
Image make_example(const DatasetSpec& spec, int index, int label);

}  // namespace rkd
