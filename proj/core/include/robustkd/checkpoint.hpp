#pragma once

#include <string>
#include <vector>

#include "robustkd/model.hpp"

namespace rkd {

// Archive metadata. Serialized as canonical JSON inside the checkpoint file;
// loading verifies the stored config hash when the caller supplies one.
struct CheckpointMeta {
  std::string kind;       // "multihead" | "classifier"
  std::string role;       // free-form: "pretrained", "teacher_robust", "distilled", ...
  std::string base_arch;  // LayerNet arch string
  int num_classes = 0;
  int num_heads = 0;      // multihead only
  PartitionConfig partition;  // multihead only
  uint64_t build_seed = 0;
  std::string config_hash;
  std::string arch_hash;
};

struct CheckpointSection {
  std::string name;
  std::vector<double> data;
};

struct CheckpointFile {
  CheckpointMeta meta;
  std::vector<CheckpointSection> sections;
};

// Single-file container: magic, length-prefixed JSON header (meta + section
// table), then raw little-endian double blobs in table order.
void write_checkpoint_file(const std::string& path, const CheckpointMeta& meta,
                           const std::vector<CheckpointSection>& sections);
CheckpointFile read_checkpoint_file(const std::string& path);
CheckpointMeta peek_checkpoint_meta(const std::string& path);

// Parameter blobs are keyed by section name: backbone / shared / head_c
// (and head_m, head_u on three-headed models).
void save_multihead(const MultiHeadModel& model, const std::string& path,
                    const std::string& config_hash, const std::string& role = "distilled");
MultiHeadModel load_multihead(const std::string& path, CheckpointMeta* meta_out = nullptr);
// Throws ValidationError when the stored config hash differs.
MultiHeadModel load_multihead_verified(const std::string& path,
                                       const std::string& expected_config_hash,
                                       CheckpointMeta* meta_out = nullptr);

// Plain classifier checkpoints (teachers, pretrained base models).
void save_classifier(const LayerNet& net, const std::string& path, const std::string& config_hash,
                     uint64_t build_seed, const std::string& role);
LayerNet load_classifier(const std::string& path, CheckpointMeta* meta_out = nullptr);

}  // namespace rkd
