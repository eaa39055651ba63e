#include "robustkd/checkpoint.hpp"

#include <cstring>
#include <fstream>

#include <nlohmann/json.hpp>

namespace rkd {

using nlohmann::json;

namespace {

constexpr char kMagic[8] = {'R', 'K', 'D', 'C', 'K', 'P', 'T', '1'};

json meta_to_json(const CheckpointMeta& m) {
  json j;
  j["kind"] = m.kind;
  j["role"] = m.role;
  j["base_arch"] = m.base_arch;
  j["num_classes"] = m.num_classes;
  j["num_heads"] = m.num_heads;
  j["partition"] = {{"fraction_tuned", m.partition.fraction_tuned},
                    {"head_fraction", m.partition.head_fraction},
                    {"dropout_rate", m.partition.dropout_rate}};
  j["build_seed"] = m.build_seed;
  j["config_hash"] = m.config_hash;
  j["arch_hash"] = m.arch_hash;
  return j;
}

CheckpointMeta meta_from_json(const json& j) {
  CheckpointMeta m;
  m.kind = j.at("kind").get<std::string>();
  m.role = j.value("role", "");
  m.base_arch = j.at("base_arch").get<std::string>();
  m.num_classes = j.at("num_classes").get<int>();
  m.num_heads = j.at("num_heads").get<int>();
  m.partition.fraction_tuned = j.at("partition").at("fraction_tuned").get<double>();
  m.partition.head_fraction = j.at("partition").at("head_fraction").get<double>();
  m.partition.dropout_rate = j.at("partition").at("dropout_rate").get<double>();
  m.build_seed = j.at("build_seed").get<uint64_t>();
  m.config_hash = j.at("config_hash").get<std::string>();
  m.arch_hash = j.at("arch_hash").get<std::string>();
  return m;
}

}  // namespace

void write_checkpoint_file(const std::string& path, const CheckpointMeta& meta,
                           const std::vector<CheckpointSection>& sections) {
  json header;
  header["meta"] = meta_to_json(meta);
  json table = json::array();
  for (const auto& s : sections) table.push_back({{"name", s.name}, {"count", s.data.size()}});
  header["sections"] = table;
  const std::string text = header.dump();

  std::ofstream out(path, std::ios::binary);
  if (!out) throw ValidationError("cannot open checkpoint for writing: " + path);
  out.write(kMagic, sizeof(kMagic));
  const uint64_t len = text.size();
  out.write(reinterpret_cast<const char*>(&len), sizeof(len));
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  for (const auto& s : sections)
    out.write(reinterpret_cast<const char*>(s.data.data()),
              static_cast<std::streamsize>(s.data.size() * sizeof(double)));
  if (!out) throw ValidationError("checkpoint write failed: " + path);
}

CheckpointFile read_checkpoint_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("cannot open checkpoint: " + path);
  char magic[8];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0)
    throw ValidationError("not a checkpoint file: " + path);
  uint64_t len = 0;
  in.read(reinterpret_cast<char*>(&len), sizeof(len));
  std::string text(len, '\0');
  in.read(text.data(), static_cast<std::streamsize>(len));
  if (!in) throw ValidationError("truncated checkpoint header: " + path);
  json header;
  try {
    header = json::parse(text);
  } catch (const json::exception& e) {
    throw ValidationError("corrupt checkpoint header in " + path + ": " + e.what());
  }
  CheckpointFile f;
  f.meta = meta_from_json(header.at("meta"));
  for (const auto& entry : header.at("sections")) {
    CheckpointSection s;
    s.name = entry.at("name").get<std::string>();
    s.data.resize(entry.at("count").get<size_t>());
    in.read(reinterpret_cast<char*>(s.data.data()),
            static_cast<std::streamsize>(s.data.size() * sizeof(double)));
    if (!in) throw ValidationError("truncated checkpoint section '" + s.name + "' in " + path);
    f.sections.push_back(std::move(s));
  }
  return f;
}

CheckpointMeta peek_checkpoint_meta(const std::string& path) {
  // Reads only the header.
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("cannot open checkpoint: " + path);
  char magic[8];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0)
    throw ValidationError("not a checkpoint file: " + path);
  uint64_t len = 0;
  in.read(reinterpret_cast<char*>(&len), sizeof(len));
  std::string text(len, '\0');
  in.read(text.data(), static_cast<std::streamsize>(len));
  if (!in) throw ValidationError("truncated checkpoint header: " + path);
  return meta_from_json(json::parse(text).at("meta"));
}

// Friend of MultiHeadModel: rebuilds section nets and toggles freezing around
// parameter loads.
class CheckpointCodec {
 public:
  static std::vector<CheckpointSection> encode(const MultiHeadModel& m) {
    std::vector<CheckpointSection> sections;
    sections.push_back({"backbone", m.backbone_.serialize_params()});
    sections.push_back({"shared", m.shared_.serialize_params()});
    const char* names[3] = {"head_c", "head_m", "head_u"};
    for (size_t h = 0; h < m.heads_.size(); ++h)
      sections.push_back({names[h], m.heads_[h].serialize_params()});
    return sections;
  }

  static MultiHeadModel decode(const CheckpointFile& f) {
    const LayerNet base = LayerNet::from_arch_string(f.meta.base_arch);
    MultiHeadModel m = build_multihead(base, f.meta.partition, f.meta.build_seed,
                                       f.meta.num_heads);
    auto blob = [&](const std::string& name) -> const std::vector<double>& {
      for (const auto& s : f.sections)
        if (s.name == name) return s.data;
      throw ValidationError("checkpoint missing section: " + name);
    };
    load_into(m.backbone_, blob("backbone"));
    load_into(m.shared_, blob("shared"));
    const char* names[3] = {"head_c", "head_m", "head_u"};
    for (size_t h = 0; h < m.heads_.size(); ++h) load_into(m.heads_[h], blob(names[h]));
    m.validate();
    return m;
  }

 private:
  static void load_into(LayerNet& net, const std::vector<double>& blob) {
    const bool was_frozen = net.frozen();
    net.set_frozen(false);
    net.load_params(blob);
    net.set_frozen(was_frozen);
  }
};

void save_multihead(const MultiHeadModel& model, const std::string& path,
                    const std::string& config_hash, const std::string& role) {
  CheckpointMeta meta;
  meta.kind = "multihead";
  meta.role = role;
  meta.base_arch = model.base_arch();
  meta.num_classes = model.num_classes();
  meta.num_heads = model.num_heads();
  meta.partition = model.partition();
  meta.build_seed = model.build_seed();
  meta.config_hash = config_hash;
  meta.arch_hash = model.arch_hash();
  write_checkpoint_file(path, meta, CheckpointCodec::encode(model));
}

MultiHeadModel load_multihead(const std::string& path, CheckpointMeta* meta_out) {
  const CheckpointFile f = read_checkpoint_file(path);
  if (f.meta.kind != "multihead")
    throw ValidationError("checkpoint is not a multihead model: " + path);
  if (meta_out) *meta_out = f.meta;
  return CheckpointCodec::decode(f);
}

MultiHeadModel load_multihead_verified(const std::string& path,
                                       const std::string& expected_config_hash,
                                       CheckpointMeta* meta_out) {
  CheckpointMeta meta;
  MultiHeadModel m = load_multihead(path, &meta);
  if (meta.config_hash != expected_config_hash)
    throw ValidationError("checkpoint config hash mismatch for " + path + ": expected " +
                          expected_config_hash + ", found " + meta.config_hash);
  if (meta_out) *meta_out = meta;
  return m;
}

void save_classifier(const LayerNet& net, const std::string& path, const std::string& config_hash,
                     uint64_t build_seed, const std::string& role) {
  CheckpointMeta meta;
  meta.kind = "classifier";
  meta.role = role;
  meta.base_arch = net.arch_string();
  meta.num_classes = net.output_shape().flat();
  meta.num_heads = 0;
  meta.build_seed = build_seed;
  meta.config_hash = config_hash;
  meta.arch_hash = fnv1a_hex(net.arch_string());
  write_checkpoint_file(path, meta, {{"model", net.serialize_params()}});
}

LayerNet load_classifier(const std::string& path, CheckpointMeta* meta_out) {
  const CheckpointFile f = read_checkpoint_file(path);
  if (f.meta.kind != "classifier")
    throw ValidationError("checkpoint is not a classifier: " + path);
  if (f.sections.size() != 1 || f.sections[0].name != "model")
    throw ValidationError("classifier checkpoint must contain a single 'model' section");
  LayerNet net = LayerNet::from_arch_string(f.meta.base_arch);
  net.load_params(f.sections[0].data);
  if (meta_out) *meta_out = f.meta;
  return net;
}

}  // namespace rkd
