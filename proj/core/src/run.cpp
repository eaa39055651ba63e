#include "robustkd/run.hpp"

#include <algorithm>
#include <cstdlib>
#include <fstream>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

#include "robustkd/checkpoint.hpp"
#include "robustkd/parallel.hpp"
#include "robustkd/svgplot.hpp"

namespace rkd {

namespace fs = std::filesystem;
using nlohmann::json;

// ---------------------------------------------------------------------------
// Config parsing
// ---------------------------------------------------------------------------

namespace {

std::string subpath(const std::string& p, const std::string& k) {
  return p.empty() ? k : p + "." + k;
}

const json& member(const json& j, const std::string& path, const std::string& key) {
  if (!j.is_object()) throw ConfigError(path, "expected an object");
  auto it = j.find(key);
  if (it == j.end()) throw ConfigError(subpath(path, key), "missing required field");
  return *it;
}

void check_keys(const json& j, const std::string& path, const std::set<std::string>& allowed) {
  if (!j.is_object()) throw ConfigError(path, "expected an object");
  for (const auto& [key, _] : j.items())
    if (allowed.find(key) == allowed.end())
      throw ConfigError(subpath(path, key), "unknown field");
}

double get_num(const json& j, const std::string& path, const std::string& key) {
  const json& v = member(j, path, key);
  if (!v.is_number()) throw ConfigError(subpath(path, key), "expected a number");
  return v.get<double>();
}

int get_int(const json& j, const std::string& path, const std::string& key) {
  const json& v = member(j, path, key);
  if (!v.is_number_integer()) throw ConfigError(subpath(path, key), "expected an integer");
  return v.get<int>();
}

uint64_t get_u64(const json& j, const std::string& path, const std::string& key) {
  const json& v = member(j, path, key);
  if (!v.is_number_unsigned() && !v.is_number_integer())
    throw ConfigError(subpath(path, key), "expected an unsigned integer");
  return v.get<uint64_t>();
}

std::string get_str(const json& j, const std::string& path, const std::string& key) {
  const json& v = member(j, path, key);
  if (!v.is_string()) throw ConfigError(subpath(path, key), "expected a string");
  return v.get<std::string>();
}

bool get_bool(const json& j, const std::string& path, const std::string& key) {
  const json& v = member(j, path, key);
  if (!v.is_boolean()) throw ConfigError(subpath(path, key), "expected a boolean");
  return v.get<bool>();
}

DatasetSpec parse_dataset(const json& j, const std::string& path) {
  check_keys(j, path, {"name", "size", "image_size", "seed"});
  DatasetSpec spec;
  spec.name = get_str(j, path, "name");
  spec.size = get_int(j, path, "size");
  spec.image_size = get_int(j, path, "image_size");
  spec.seed = get_u64(j, path, "seed");
  if (!dataset_exists(spec.name))
    throw ConfigError(subpath(path, "name"), "unknown dataset '" + spec.name + "'");
  if (spec.size <= 0) throw ConfigError(subpath(path, "size"), "must be positive");
  if (spec.image_size < 8) throw ConfigError(subpath(path, "image_size"), "must be >= 8");
  return spec;
}

json dataset_json(const DatasetSpec& d) {
  return {{"name", d.name}, {"size", d.size}, {"image_size", d.image_size}, {"seed", d.seed}};
}

}  // namespace

RunConfig default_run_config() {
  RunConfig cfg;
  cfg.data.train = {"shapes10", 2400, 16, 11};
  cfg.data.test = {"shapes10", 600, 16, 12};
  cfg.data.transfer_train = {"glyphs5", 1000, 16, 13};
  cfg.data.transfer_test = {"glyphs5", 400, 16, 14};
  cfg.augmentation.policy.kinds = {"gaussian_noise", "gaussian_blur", "contrast", "brightness"};
  cfg.evaluation.kinds = {"shot_noise", "impulse_noise", "box_blur", "pixelate", "fog"};
  cfg.distill.epochs = 30;
  cfg.distill.data_fraction = 0.5;
  return cfg;
}

namespace {

json config_to_json(const RunConfig& c) {
  json j;
  j["experiment"] = c.experiment;
  j["output_root"] = c.output_root;
  j["seed"] = c.seed;
  j["threads"] = c.threads;
  j["corruption_table"] = c.corruption_table;
  j["data"] = {{"train", dataset_json(c.data.train)},
               {"test", dataset_json(c.data.test)},
               {"transfer_train", dataset_json(c.data.transfer_train)},
               {"transfer_test", dataset_json(c.data.transfer_test)}};
  j["model"] = {{"arch", c.model.arch},
                {"num_classes", c.model.num_classes},
                {"init_seed", c.model.init_seed}};
  j["pretrain"] = {{"epochs", c.pretrain.epochs},
                   {"learning_rate", c.pretrain.learning_rate},
                   {"batch_size", c.pretrain.batch_size},
                   {"seed", c.pretrain.seed}};
  j["teacher"] = {{"arch", c.teacher.arch},
                  {"clean_epochs", c.teacher.clean_epochs},
                  {"robust_epochs", c.teacher.robust_epochs},
                  {"learning_rate", c.teacher.learning_rate},
                  {"batch_size", c.teacher.batch_size},
                  {"seed", c.teacher.seed}};
  j["partition"] = {{"fraction_tuned", c.partition.fraction_tuned},
                    {"head_fraction", c.partition.head_fraction},
                    {"dropout_rate", c.partition.dropout_rate}};
  j["distill"] = {{"temperature", c.distill.temperature},
                  {"lambda_c", c.distill.lambda_c},
                  {"lambda_d", c.distill.lambda_d},
                  {"learning_rate", c.distill.learning_rate},
                  {"batch_size", c.distill.batch_size},
                  {"epochs", c.distill.epochs},
                  {"data_fraction", c.distill.data_fraction},
                  {"mode", distill_mode_name(c.distill.mode)},
                  {"seed", c.distill.seed}};
  j["augmentation"] = {{"aug_ratio", c.augmentation.aug_ratio},
                       {"chain_probability", c.augmentation.policy.chain_probability},
                       {"kinds", c.augmentation.policy.kinds},
                       {"severity_min", c.augmentation.policy.severity_min},
                       {"severity_max", c.augmentation.policy.severity_max},
                       {"max_depth", c.augmentation.policy.chain.max_depth},
                       {"max_branches", c.augmentation.policy.chain.max_branches},
                       {"seed", c.augmentation.seed}};
  j["evaluation"] = {{"kinds", c.evaluation.kinds},
                     {"mc_samples", c.evaluation.mc_samples},
                     {"selector", c.evaluation.selector},
                     {"uncertainty_agg", c.evaluation.uncertainty_agg},
                     {"seed", c.evaluation.seed},
                     {"write_traces", c.evaluation.write_traces},
                     {"transfer", c.evaluation.transfer},
                     {"baseline_report", c.evaluation.baseline_report},
                     {"baseline_checkpoint", c.evaluation.baseline_checkpoint},
                     {"mfr_kind", c.evaluation.mfr_kind},
                     {"mfr_length", c.evaluation.mfr_length},
                     {"mfr_sequences", c.evaluation.mfr_sequences},
                     {"mfr_step", c.evaluation.mfr_step}};
  j["ablate"] = {{"modes", c.ablate.modes},
                 {"selectors", c.ablate.selectors},
                 {"fractions", c.ablate.fractions},
                 {"seeds", c.ablate.seeds}};
  return j;
}

RunConfig config_from_json(const json& j) {
  check_keys(j, "", {"experiment", "output_root", "seed", "threads", "corruption_table", "data",
                     "model", "pretrain", "teacher", "partition", "distill", "augmentation",
                     "evaluation", "ablate"});
  RunConfig c;
  c.experiment = get_str(j, "", "experiment");
  if (c.experiment.empty()) throw ConfigError("experiment", "must not be empty");
  c.output_root = get_str(j, "", "output_root");
  c.seed = get_u64(j, "", "seed");
  c.threads = get_int(j, "", "threads");
  if (c.threads < 1) throw ConfigError("threads", "must be >= 1");
  c.corruption_table = get_str(j, "", "corruption_table");

  const json& data = member(j, "", "data");
  check_keys(data, "data", {"train", "test", "transfer_train", "transfer_test"});
  c.data.train = parse_dataset(member(data, "data", "train"), "data.train");
  c.data.test = parse_dataset(member(data, "data", "test"), "data.test");
  c.data.transfer_train =
      parse_dataset(member(data, "data", "transfer_train"), "data.transfer_train");
  c.data.transfer_test = parse_dataset(member(data, "data", "transfer_test"), "data.transfer_test");
  if (c.data.train.name != c.data.test.name)
    throw ConfigError("data.test.name", "train/test datasets must match");

  const json& model = member(j, "", "model");
  check_keys(model, "model", {"arch", "num_classes", "init_seed"});
  c.model.arch = get_str(model, "model", "arch");
  c.model.num_classes = get_int(model, "model", "num_classes");
  c.model.init_seed = get_u64(model, "model", "init_seed");
  if (!arch_exists(c.model.arch)) throw ConfigError("model.arch", "unknown architecture");
  if (c.model.num_classes != dataset_num_classes(c.data.train.name))
    throw ConfigError("model.num_classes", "does not match the training dataset class count");

  const json& pre = member(j, "", "pretrain");
  check_keys(pre, "pretrain", {"epochs", "learning_rate", "batch_size", "seed"});
  c.pretrain.epochs = get_int(pre, "pretrain", "epochs");
  c.pretrain.learning_rate = get_num(pre, "pretrain", "learning_rate");
  c.pretrain.batch_size = get_int(pre, "pretrain", "batch_size");
  c.pretrain.seed = get_u64(pre, "pretrain", "seed");
  if (c.pretrain.epochs < 0) throw ConfigError("pretrain.epochs", "must be >= 0");

  const json& tea = member(j, "", "teacher");
  check_keys(tea, "teacher",
             {"arch", "clean_epochs", "robust_epochs", "learning_rate", "batch_size", "seed"});
  c.teacher.arch = get_str(tea, "teacher", "arch");
  c.teacher.clean_epochs = get_int(tea, "teacher", "clean_epochs");
  c.teacher.robust_epochs = get_int(tea, "teacher", "robust_epochs");
  c.teacher.learning_rate = get_num(tea, "teacher", "learning_rate");
  c.teacher.batch_size = get_int(tea, "teacher", "batch_size");
  c.teacher.seed = get_u64(tea, "teacher", "seed");
  if (!arch_exists(c.teacher.arch)) throw ConfigError("teacher.arch", "unknown architecture");

  const json& part = member(j, "", "partition");
  check_keys(part, "partition", {"fraction_tuned", "head_fraction", "dropout_rate"});
  c.partition.fraction_tuned = get_num(part, "partition", "fraction_tuned");
  c.partition.head_fraction = get_num(part, "partition", "head_fraction");
  c.partition.dropout_rate = get_num(part, "partition", "dropout_rate");
  try {
    c.partition.validate();
  } catch (const ValidationError& e) {
    throw ConfigError("partition", e.what());
  }

  const json& dis = member(j, "", "distill");
  check_keys(dis, "distill",
             {"temperature", "lambda_c", "lambda_d", "learning_rate", "batch_size", "epochs",
              "data_fraction", "mode", "seed"});
  c.distill.temperature = get_num(dis, "distill", "temperature");
  c.distill.lambda_c = get_num(dis, "distill", "lambda_c");
  c.distill.lambda_d = get_num(dis, "distill", "lambda_d");
  c.distill.learning_rate = get_num(dis, "distill", "learning_rate");
  c.distill.batch_size = get_int(dis, "distill", "batch_size");
  c.distill.epochs = get_int(dis, "distill", "epochs");
  c.distill.data_fraction = get_num(dis, "distill", "data_fraction");
  c.distill.seed = get_u64(dis, "distill", "seed");
  try {
    c.distill.mode = distill_mode_from_name(get_str(dis, "distill", "mode"));
    c.distill.validate();
  } catch (const ValidationError& e) {
    throw ConfigError("distill", e.what());
  }

  const json& aug = member(j, "", "augmentation");
  check_keys(aug, "augmentation",
             {"aug_ratio", "chain_probability", "kinds", "severity_min", "severity_max",
              "max_depth", "max_branches", "seed"});
  c.augmentation.aug_ratio = get_num(aug, "augmentation", "aug_ratio");
  c.augmentation.policy.chain_probability = get_num(aug, "augmentation", "chain_probability");
  c.augmentation.policy.kinds =
      member(aug, "augmentation", "kinds").get<std::vector<std::string>>();
  c.augmentation.policy.severity_min = get_int(aug, "augmentation", "severity_min");
  c.augmentation.policy.severity_max = get_int(aug, "augmentation", "severity_max");
  c.augmentation.policy.chain.max_depth = get_int(aug, "augmentation", "max_depth");
  c.augmentation.policy.chain.max_branches = get_int(aug, "augmentation", "max_branches");
  c.augmentation.seed = get_u64(aug, "augmentation", "seed");
  if (!(c.augmentation.aug_ratio > 0.0 && c.augmentation.aug_ratio <= 1.0))
    throw ConfigError("augmentation.aug_ratio", "must be in (0, 1]");
  if (c.augmentation.policy.chain_probability < 0.0 ||
      c.augmentation.policy.chain_probability > 1.0)
    throw ConfigError("augmentation.chain_probability", "must be in [0, 1]");

  const json& ev = member(j, "", "evaluation");
  check_keys(ev, "evaluation",
             {"kinds", "mc_samples", "selector", "uncertainty_agg", "seed", "write_traces",
              "transfer", "baseline_report", "baseline_checkpoint", "mfr_kind", "mfr_length",
              "mfr_sequences", "mfr_step"});
  c.evaluation.kinds = member(ev, "evaluation", "kinds").get<std::vector<std::string>>();
  c.evaluation.mc_samples = get_int(ev, "evaluation", "mc_samples");
  c.evaluation.selector = get_str(ev, "evaluation", "selector");
  c.evaluation.uncertainty_agg = get_str(ev, "evaluation", "uncertainty_agg");
  c.evaluation.seed = get_u64(ev, "evaluation", "seed");
  c.evaluation.write_traces = get_bool(ev, "evaluation", "write_traces");
  c.evaluation.transfer = get_bool(ev, "evaluation", "transfer");
  c.evaluation.baseline_report = get_str(ev, "evaluation", "baseline_report");
  c.evaluation.baseline_checkpoint = get_str(ev, "evaluation", "baseline_checkpoint");
  c.evaluation.mfr_kind = get_str(ev, "evaluation", "mfr_kind");
  c.evaluation.mfr_length = get_int(ev, "evaluation", "mfr_length");
  c.evaluation.mfr_sequences = get_int(ev, "evaluation", "mfr_sequences");
  c.evaluation.mfr_step = get_num(ev, "evaluation", "mfr_step");
  if (c.evaluation.mc_samples < 2) throw ConfigError("evaluation.mc_samples", "must be >= 2");
  if (c.evaluation.mfr_length < 2) throw ConfigError("evaluation.mfr_length", "must be >= 2");
  try {
    selector_from_name(c.evaluation.selector);
    uncertainty_agg_from_name(c.evaluation.uncertainty_agg);
  } catch (const ValidationError& e) {
    throw ConfigError("evaluation", e.what());
  }

  const json& ab = member(j, "", "ablate");
  check_keys(ab, "ablate", {"modes", "selectors", "fractions", "seeds"});
  c.ablate.modes = member(ab, "ablate", "modes").get<std::vector<std::string>>();
  c.ablate.selectors = member(ab, "ablate", "selectors").get<std::vector<std::string>>();
  c.ablate.fractions = member(ab, "ablate", "fractions").get<std::vector<double>>();
  c.ablate.seeds = member(ab, "ablate", "seeds").get<std::vector<uint64_t>>();
  try {
    for (const auto& m : c.ablate.modes) distill_mode_from_name(m);
    for (const auto& s : c.ablate.selectors) selector_from_name(s);
  } catch (const ValidationError& e) {
    throw ConfigError("ablate", e.what());
  }

  // Corruption kinds must exist in the active severity tables.
  const SeverityTables tables = c.severity_tables();
  for (const auto& kind : c.augmentation.policy.kinds)
    if (!tables.has_kind(kind))
      throw ConfigError("augmentation.kinds", "unknown corruption kind '" + kind + "'");
  for (const auto& kind : c.evaluation.kinds)
    if (!tables.has_kind(kind))
      throw ConfigError("evaluation.kinds", "unknown corruption kind '" + kind + "'");
  return c;
}

void apply_override(json& root, const std::string& spec) {
  const auto eq = spec.find('=');
  if (eq == std::string::npos)
    throw ConfigError(spec, "override must look like path.to.field=value");
  const std::string path = spec.substr(0, eq);
  const std::string value = spec.substr(eq + 1);
  std::vector<std::string> parts;
  std::stringstream ss(path);
  std::string tok;
  while (std::getline(ss, tok, '.')) parts.push_back(tok);
  if (parts.empty()) throw ConfigError(spec, "empty override path");
  json* cur = &root;
  for (size_t i = 0; i + 1 < parts.size(); ++i) cur = &(*cur)[parts[i]];
  json parsed = json::parse(value, nullptr, /*allow_exceptions=*/false);
  (*cur)[parts.back()] = parsed.is_discarded() ? json(value) : parsed;
}

}  // namespace

std::string RunConfig::canonical_json() const { return config_to_json(*this).dump(2); }

namespace {

// Artifact-producing slice of the configuration. Evaluation and ablation
// settings only produce reports inside an existing run directory, so they do
// not participate in the run-directory hash.
json producing_slice(const RunConfig& c) {
  json full = config_to_json(c);
  json j;
  for (const char* key :
       {"experiment", "seed", "corruption_table", "data", "model", "pretrain", "teacher",
        "partition", "distill", "augmentation"})
    j[key] = full.at(key);
  return j;
}

}  // namespace

std::string RunConfig::config_hash() const { return fnv1a_hex(producing_slice(*this).dump()); }

std::string RunConfig::teacher_config_hash() const {
  const json full = config_to_json(*this);
  json j;
  j["data_train"] = full.at("data").at("train");
  j["teacher"] = full.at("teacher");
  j["augmentation"] = full.at("augmentation");
  j["corruption_table"] = corruption_table;
  return fnv1a_hex(j.dump());
}

std::string RunConfig::pretrain_config_hash() const {
  const json full = config_to_json(*this);
  json j;
  j["data_train"] = full.at("data").at("train");
  j["model"] = full.at("model");
  j["pretrain"] = full.at("pretrain");
  return fnv1a_hex(j.dump());
}

std::string RunConfig::distill_config_hash() const {
  const json full = config_to_json(*this);
  json j;
  j["data_train"] = full.at("data").at("train");
  j["model"] = full.at("model");
  j["pretrain"] = full.at("pretrain");
  j["teacher"] = full.at("teacher");
  j["augmentation"] = full.at("augmentation");
  j["partition"] = full.at("partition");
  j["distill"] = full.at("distill");
  j["corruption_table"] = corruption_table;
  return fnv1a_hex(j.dump());
}

SeverityTables RunConfig::severity_tables() const {
  if (corruption_table.empty()) return default_severity_tables();
  return load_severity_tables(corruption_table);
}

std::string RunConfig::effective_output_root() const {
  const char* env = std::getenv(kOutputRootEnv);
  if (env != nullptr && env[0] != '\0') return env;
  return output_root;
}

RunConfig run_config_from_json_text(const std::string& text,
                                    const std::vector<std::string>& overrides) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw ConfigError("<root>", std::string("config parse error: ") + e.what());
  }
  for (const auto& o : overrides) apply_override(j, o);
  return config_from_json(j);
}

RunConfig load_run_config(const std::string& path, const std::vector<std::string>& overrides) {
  std::ifstream in(path);
  if (!in) throw ConfigError("<file>", "cannot open config file: " + path);
  std::stringstream buf;
  buf << in.rdbuf();
  return run_config_from_json_text(buf.str(), overrides);
}

void save_run_config(const RunConfig& cfg, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw ConfigError("<file>", "cannot write config file: " + path);
  out << cfg.canonical_json() << "\n";
}

RunPaths RunPaths::locate(const RunConfig& cfg) {
  RunPaths p;
  p.root = fs::path(cfg.effective_output_root()) / cfg.experiment / cfg.config_hash();
  p.checkpoints = p.root / "checkpoints";
  p.logs = p.root / "logs";
  p.reports = p.root / "reports";
  p.plots = p.root / "plots";
  p.data = p.root / "data";
  return p;
}

RunPaths RunPaths::create(const RunConfig& cfg) {
  RunPaths p = locate(cfg);
  for (const auto& dir : {p.root, p.checkpoints, p.logs, p.reports, p.plots, p.data})
    fs::create_directories(dir);
  const fs::path cfg_path = p.root / "config.json";
  if (!fs::exists(cfg_path)) save_run_config(cfg, cfg_path.string());
  return p;
}

Dataset make_shifted_dataset(const Dataset& clean, const std::vector<std::string>& kinds,
                             uint64_t seed, const SeverityTables& tables) {
  if (kinds.empty()) throw ValidationError("make_shifted_dataset: no corruption kinds");
  Dataset out;
  out.num_classes = clean.num_classes;
  out.labels = clean.labels;
  out.images.reserve(clean.size());
  for (size_t i = 0; i < clean.size(); ++i) {
    const auto& kind = kinds[i % kinds.size()];
    const int severity = 1 + static_cast<int>(i % 5);
    const CorruptionSpec spec(kind, severity, mix_seed(seed, i));
    out.images.push_back(corrupt(clean.images[i], spec, tables));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Command helpers
// ---------------------------------------------------------------------------

namespace {

uint64_t image_content_seed(const Image& img, uint64_t base) {
  uint64_t h = 0xcbf29ce484222325ULL;
  const auto* bytes = reinterpret_cast<const unsigned char*>(img.pix.data());
  for (size_t i = 0; i < img.pix.size() * sizeof(double); ++i) {
    h ^= bytes[i];
    h *= 0x100000001b3ULL;
  }
  return mix_seed(h, base);
}

std::vector<Eigen::VectorXd> dataset_inputs(const Dataset& ds) {
  std::vector<Eigen::VectorXd> xs;
  xs.reserve(ds.size());
  for (const auto& img : ds.images) xs.push_back(to_chw(img));
  return xs;
}

double classifier_accuracy(const LayerNet& net, const Dataset& ds) {
  long correct = 0;
  for (size_t i = 0; i < ds.size(); ++i) {
    Eigen::Index argmax;
    net.forward(to_chw(ds.images[i])).maxCoeff(&argmax);
    if (static_cast<int>(argmax) == ds.labels[i]) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(ds.size());
}

std::string expected_base_arch(const RunConfig& cfg) {
  return make_arch(cfg.model.arch, cfg.model.num_classes, cfg.data.train.image_size)
      .arch_string();
}

}  // namespace

// ---------------------------------------------------------------------------
// cmd_train_teacher
// ---------------------------------------------------------------------------

std::string cmd_train_teacher(const RunConfig& cfg) {
  const RunPaths paths = RunPaths::create(cfg);
  const SeverityTables tables = cfg.severity_tables();
  const Dataset train = make_dataset(cfg.data.train);
  const Dataset test = make_dataset(cfg.data.test);

  LayerNet teacher = make_arch(cfg.teacher.arch, cfg.model.num_classes, cfg.data.train.image_size);
  teacher.init_params(mix_seed(cfg.teacher.seed, 0x7EACULL));

  FitConfig clean_fit;
  clean_fit.learning_rate = cfg.teacher.learning_rate;
  clean_fit.batch_size = cfg.teacher.batch_size;
  clean_fit.epochs = cfg.teacher.clean_epochs;
  clean_fit.seed = mix_seed(cfg.teacher.seed, 1);
  clean_fit.log_path = (paths.logs / "teacher_clean.jsonl").string();
  fit_classifier(teacher, dataset_inputs(train), train.labels, clean_fit);

  const AugmentedDataset aug = build_augmented_dataset(train, cfg.augmentation.policy,
                                                       cfg.augmentation.aug_ratio,
                                                       cfg.augmentation.seed, cfg.threads, tables);
  write_manifest(aug, (paths.data / "manifest.jsonl").string());

  const Dataset holdout = make_shifted_dataset(test, cfg.evaluation.kinds,
                                               mix_seed(cfg.evaluation.seed, 0x5217ULL), tables);
  RobustifyStats stats;
  TeacherHandle handle = robustify_teacher(
      teacher, aug, cfg.teacher.robust_epochs, mix_seed(cfg.teacher.seed, 2),
      cfg.teacher.learning_rate, cfg.teacher.batch_size, &holdout, &stats,
      (paths.logs / "teacher_robust.jsonl").string());

  const std::string ckpt = (paths.checkpoints / "teacher.ckpt").string();
  save_classifier(handle.model, ckpt, cfg.teacher_config_hash(), cfg.teacher.seed,
                  "teacher_robust");

  json stats_json;
  stats_json["pre_corrupted_accuracy"] = stats.pre_accuracy;
  stats_json["post_corrupted_accuracy"] = stats.post_accuracy;
  stats_json["improved"] = stats.improved;
  stats_json["clean_accuracy_after"] = classifier_accuracy(handle.model, test);
  write_text_file((paths.reports / "teacher_stats.json").string(), stats_json.dump(2) + "\n");
  printf("teacher checkpoint: %s (corrupted acc %.4f -> %.4f)\n", ckpt.c_str(),
         stats.pre_accuracy, stats.post_accuracy);
  return ckpt;
}

// ---------------------------------------------------------------------------
// cmd_pretrain
// ---------------------------------------------------------------------------

std::string cmd_pretrain(const RunConfig& cfg) {
  const RunPaths paths = RunPaths::create(cfg);
  const Dataset train = make_dataset(cfg.data.train);

  LayerNet net = make_arch(cfg.model.arch, cfg.model.num_classes, cfg.data.train.image_size);
  net.init_params(cfg.model.init_seed);

  FitConfig fit;
  fit.learning_rate = cfg.pretrain.learning_rate;
  fit.batch_size = cfg.pretrain.batch_size;
  fit.epochs = cfg.pretrain.epochs;
  fit.seed = cfg.pretrain.seed;
  fit.log_path = (paths.logs / "pretrain.jsonl").string();
  fit_classifier(net, dataset_inputs(train), train.labels, fit);

  const std::string ckpt = (paths.checkpoints / "pretrained.ckpt").string();
  save_classifier(net, ckpt, cfg.pretrain_config_hash(), cfg.model.init_seed, "pretrained");
  printf("pretrained checkpoint: %s\n", ckpt.c_str());
  return ckpt;
}

// ---------------------------------------------------------------------------
// cmd_distill
// ---------------------------------------------------------------------------

std::string cmd_distill(const RunConfig& cfg, const std::string& teacher_checkpoint,
                        const std::string& base_checkpoint) {
  const RunPaths paths = RunPaths::create(cfg);
  const SeverityTables tables = cfg.severity_tables();

  CheckpointMeta teacher_meta;
  LayerNet teacher_net = load_classifier(teacher_checkpoint, &teacher_meta);
  CheckpointMeta base_meta;
  LayerNet base = load_classifier(base_checkpoint, &base_meta);

  if (teacher_meta.num_classes != cfg.model.num_classes ||
      base_meta.num_classes != cfg.model.num_classes)
    throw ValidationError("cmd_distill: class-set mismatch between teacher (" +
                          std::to_string(teacher_meta.num_classes) + "), student (" +
                          std::to_string(base_meta.num_classes) + ") and config (" +
                          std::to_string(cfg.model.num_classes) + ")");
  if (base_meta.base_arch != expected_base_arch(cfg))
    throw ValidationError("cmd_distill: base checkpoint architecture does not match the config");

  TeacherHandle robust;
  robust.kind = TeacherHandle::Kind::kRobustSmall;
  robust.model = std::move(teacher_net);
  robust.model.set_frozen(true);
  const TeacherHandle clean = clone_frozen_teacher(base);

  MultiHeadModel model = build_multihead(base, cfg.partition, cfg.distill.seed,
                                         distill_mode_num_heads(cfg.distill.mode));

  const Dataset train = make_dataset(cfg.data.train);
  const AugmentedDataset aug = build_augmented_dataset(train, cfg.augmentation.policy,
                                                       cfg.augmentation.aug_ratio,
                                                       cfg.augmentation.seed, cfg.threads, tables);
  write_manifest(aug, (paths.data / "manifest.jsonl").string());

  distill(model, clean, robust, aug, cfg.distill, (paths.logs / "distill.jsonl").string(),
          cfg.threads);

  const std::string ckpt = (paths.checkpoints / "distilled.ckpt").string();
  save_multihead(model, ckpt, cfg.distill_config_hash(),
                 "distilled:" + distill_mode_name(cfg.distill.mode));
  printf("distilled checkpoint: %s\n", ckpt.c_str());
  return ckpt;
}

// ---------------------------------------------------------------------------
// cmd_eval
// ---------------------------------------------------------------------------

namespace {

struct Predictor {
  PredictFn predict;
  bool three_headed = false;
  std::function<SelectionResult(const Image&)> select;  // three-headed only
};

Predictor build_predictor(const RunConfig& cfg, const MultiHeadModel* multi,
                          const LayerNet* classifier) {
  Predictor p;
  if (classifier != nullptr) {
    const LayerNet* net = classifier;
    p.predict = [net](const Image& img) {
      Eigen::Index argmax;
      net->forward(to_chw(img)).maxCoeff(&argmax);
      return static_cast<int>(argmax);
    };
    return p;
  }
  const MultiHeadModel* model = multi;
  if (!model->three_headed()) {
    p.predict = [model](const Image& img) {
      Eigen::Index argmax;
      model->forward_head(img, Head::kClean, DropoutMode::off()).maxCoeff(&argmax);
      return static_cast<int>(argmax);
    };
    return p;
  }
  const SelectorVariant variant = selector_from_name(cfg.evaluation.selector);
  const UncertaintyAgg agg = uncertainty_agg_from_name(cfg.evaluation.uncertainty_agg);
  const int mc = cfg.evaluation.mc_samples;
  const uint64_t seed = cfg.evaluation.seed;
  p.three_headed = true;
  p.select = [model, variant, agg, mc, seed](const Image& img) {
    const Eigen::VectorXd features = model->backbone_forward(to_chw(img));
    return select_head_variant_cached(*model, features, variant, mc,
                                      image_content_seed(img, seed), agg);
  };
  p.predict = [p](const Image& img) { return p.select(img).predicted_class; };
  return p;
}

void write_traces(const std::string& path, const std::vector<SelectionResult>& traces,
                  const Dataset& ds, const std::string& split) {
  std::ofstream out(path, std::ios::app);
  for (size_t i = 0; i < traces.size(); ++i) {
    const auto& t = traces[i];
    json rec;
    rec["split"] = split;
    rec["index"] = i;
    rec["label"] = ds.labels[i];
    rec["chosen_head"] = head_name(t.chosen_head);
    rec["predicted_class"] = t.predicted_class;
    rec["score_clean"] = t.score_clean;
    rec["score_unclean"] = t.score_unclean;
    rec["u_clean"] = t.u_clean;
    rec["u_unclean"] = t.u_unclean;
    rec["kl_clean"] = t.kl_clean;
    rec["kl_unclean"] = t.kl_unclean;
    out << rec.dump() << "\n";
  }
}

}  // namespace

EvalOutputs cmd_eval(const RunConfig& cfg, const std::string& checkpoint) {
  const RunPaths paths = RunPaths::create(cfg);
  const SeverityTables tables = cfg.severity_tables();
  const CheckpointMeta meta = peek_checkpoint_meta(checkpoint);

  // Refuse checkpoints whose architecture does not match this config.
  if (meta.num_classes != cfg.model.num_classes)
    throw ConfigError("model.num_classes", "checkpoint was produced for " +
                                               std::to_string(meta.num_classes) + " classes");
  std::optional<MultiHeadModel> multi;
  std::optional<LayerNet> classifier;
  if (meta.kind == "multihead") {
    if (meta.base_arch != expected_base_arch(cfg))
      throw ConfigError("model.arch",
                        "checkpoint architecture hash mismatch (expected arch '" +
                            expected_base_arch(cfg) + "')");
    if (std::abs(meta.partition.fraction_tuned - cfg.partition.fraction_tuned) > 1e-12 ||
        std::abs(meta.partition.head_fraction - cfg.partition.head_fraction) > 1e-12 ||
        std::abs(meta.partition.dropout_rate - cfg.partition.dropout_rate) > 1e-12)
      throw ConfigError("partition", "checkpoint partition does not match the config");
    multi = load_multihead(checkpoint);
  } else {
    const std::string teacher_arch =
        make_arch(cfg.teacher.arch, cfg.model.num_classes, cfg.data.train.image_size)
            .arch_string();
    if (meta.base_arch != expected_base_arch(cfg) && meta.base_arch != teacher_arch)
      throw ConfigError("model.arch", "classifier checkpoint matches neither the student nor "
                                      "the teacher architecture");
    classifier = load_classifier(checkpoint);
  }

  const Dataset test = make_dataset(cfg.data.test);
  const Predictor predictor =
      build_predictor(cfg, multi ? &*multi : nullptr, classifier ? &*classifier : nullptr);

  RobustnessReport report;
  report.clean_accuracy = evaluate_accuracy(predictor.predict, test, cfg.threads);
  report.per_corruption = severity_sweep(predictor.predict, test, cfg.evaluation.kinds,
                                         cfg.evaluation.seed, cfg.threads, tables);

  const std::string selector_label =
      predictor.three_headed ? cfg.evaluation.selector : "argmax";

  // Head-selection traces on the clean and shifted splits (three heads only).
  if (predictor.three_headed) {
    const Dataset shifted = make_shifted_dataset(test, cfg.evaluation.kinds,
                                                 mix_seed(cfg.evaluation.seed, 0x5217ULL), tables);
    const int n = static_cast<int>(test.size());
    auto clean_traces = ordered_parallel_map<SelectionResult>(
        n, cfg.threads, [&](int i) { return predictor.select(test.images[static_cast<size_t>(i)]); });
    auto shifted_traces = ordered_parallel_map<SelectionResult>(
        n, cfg.threads,
        [&](int i) { return predictor.select(shifted.images[static_cast<size_t>(i)]); });
    report.f_correct_clean = f_correct(clean_traces, Split::kClean);
    report.f_correct_shifted = f_correct(shifted_traces, Split::kShifted);
    for (const auto& t : clean_traces) report.head_usage["clean"][head_name(t.chosen_head)]++;
    for (const auto& t : shifted_traces) report.head_usage["shifted"][head_name(t.chosen_head)]++;
    if (cfg.evaluation.write_traces) {
      const std::string tpath = (paths.reports / ("traces_" + selector_label + ".jsonl")).string();
      std::ofstream(tpath, std::ios::trunc).close();
      write_traces(tpath, clean_traces, test, "clean");
      write_traces(tpath, shifted_traces, shifted, "shifted");
    }
  }

  // Stability under gradually varying perturbations.
  {
    std::vector<PerturbationSequence> sequences;
    PerturbationPolicy policy;
    policy.step = cfg.evaluation.mfr_step;
    const int count = std::min<int>(cfg.evaluation.mfr_sequences, static_cast<int>(test.size()));
    for (int i = 0; i < count; ++i)
      sequences.push_back(build_perturbation_sequence(
          test.images[static_cast<size_t>(i)], cfg.evaluation.mfr_kind, cfg.evaluation.mfr_length,
          mix_seed(cfg.evaluation.seed, 0xFB0ULL + static_cast<uint64_t>(i)), policy));
    report.mfr = mfr(predictor.predict, sequences);
  }

  if (!cfg.evaluation.baseline_report.empty()) {
    const EvalRecord baseline = read_eval_record(cfg.evaluation.baseline_report);
    const MceResult m = mce(report, baseline.report);
    report.mce = m.value;
    report.mce_skipped_kinds = m.skipped_kinds;
  }

  EvalRecord record;
  record.report = report;
  record.context["experiment"] = cfg.experiment;
  record.context["config_hash"] = cfg.config_hash();
  // File name only: report bytes must not depend on where the run tree lives.
  record.context["checkpoint"] = fs::path(checkpoint).filename().string();
  record.context["checkpoint_role"] = meta.role;
  record.context["selector"] = selector_label;
  record.context["mode"] = distill_mode_name(cfg.distill.mode);
  record.context["fraction_tuned"] = std::to_string(cfg.partition.fraction_tuned);
  record.context["seed"] = std::to_string(cfg.distill.seed);
  {
    char label[160];
    snprintf(label, sizeof(label), "%s/f%.2f/s%llu/%s", distill_mode_name(cfg.distill.mode).c_str(),
             cfg.partition.fraction_tuned,
             static_cast<unsigned long long>(cfg.distill.seed), selector_label.c_str());
    record.context["row_label"] = label;
  }

  // Transfer-learning probe against the original (pre-distillation) features.
  if (cfg.evaluation.transfer && multi && !cfg.evaluation.baseline_checkpoint.empty()) {
    const LayerNet original = load_classifier(cfg.evaluation.baseline_checkpoint);
    const int boundary = multi->n_backbone() + multi->n_shared();
    const LayerNet original_features = original.slice(0, boundary);
    const Dataset ttrain = make_dataset(cfg.data.transfer_train);
    const Dataset ttest = make_dataset(cfg.data.transfer_test);
    const MultiHeadModel* model = &*multi;
    TransferReport transfer;
    transfer.dataset = cfg.data.transfer_train.name;
    transfer.probe_accuracy_original = transfer_probe(
        [&](const Image& img) { return original_features.forward(to_chw(img)); }, ttrain, ttest,
        cfg.evaluation.seed);
    transfer.probe_accuracy_distilled = transfer_probe(
        [&](const Image& img) { return model->feature_forward(to_chw(img)); }, ttrain, ttest,
        cfg.evaluation.seed);
    transfer.delta = transfer.probe_accuracy_distilled - transfer.probe_accuracy_original;
    record.transfer = transfer;
  }

  const std::string record_path =
      (paths.reports / ("eval_" + selector_label + ".json")).string();
  write_eval_record(record, record_path);

  // Text summary.
  {
    std::ostringstream os;
    os << "evaluation (" << record.context["row_label"] << ")\n";
    char line[160];
    snprintf(line, sizeof(line), "clean accuracy:        %.4f\n", report.clean_accuracy);
    os << line;
    snprintf(line, sizeof(line), "shifted accuracy mean: %.4f\n", report.shifted_accuracy_mean());
    os << line;
    if (report.mce) {
      snprintf(line, sizeof(line), "mCE:                   %.2f\n", *report.mce);
      os << line;
    }
    if (report.mfr) {
      snprintf(line, sizeof(line), "mFR:                   %.4f\n", *report.mfr);
      os << line;
    }
    if (report.f_correct_clean) {
      snprintf(line, sizeof(line), "F_correct clean:       %.4f\n", *report.f_correct_clean);
      os << line;
    }
    if (report.f_correct_shifted) {
      snprintf(line, sizeof(line), "F_correct shifted:     %.4f\n", *report.f_correct_shifted);
      os << line;
    }
    for (const auto& [kind, accs] : report.per_corruption) {
      snprintf(line, sizeof(line), "%-16s %.4f %.4f %.4f %.4f %.4f\n", kind.c_str(), accs[0],
               accs[1], accs[2], accs[3], accs[4]);
      os << line;
    }
    write_text_file((paths.reports / ("eval_" + selector_label + ".txt")).string(), os.str());
  }

  // Plot bundle.
  {
    std::vector<PlotSeries> series;
    for (const auto& [kind, accs] : report.per_corruption) {
      PlotSeries s;
      s.name = kind;
      for (int sev = 1; sev <= 5; ++sev)
        s.points.emplace_back(sev, accs[static_cast<size_t>(sev - 1)]);
      series.push_back(std::move(s));
    }
    write_text_file((paths.plots / ("severity_" + selector_label + ".svg")).string(),
                    render_line_chart("accuracy vs severity", "severity", "accuracy", series));
    if (predictor.three_headed) {
      std::vector<std::pair<std::string, double>> bars;
      for (const auto& [split, usage] : report.head_usage)
        for (const auto& [head, count] : usage)
          bars.emplace_back(split + ":" + head, static_cast<double>(count));
      write_text_file((paths.plots / ("head_usage_" + selector_label + ".svg")).string(),
                      render_bar_chart("head usage", "examples", bars));
    }
  }

  EvalOutputs out;
  out.record_path = record_path;
  out.record = record;
  printf("evaluation record: %s\n", record_path.c_str());
  return out;
}

// ---------------------------------------------------------------------------
// cmd_ablate
// ---------------------------------------------------------------------------

namespace {

RunConfig child_config(const RunConfig& base, const std::string& mode, double fraction,
                       uint64_t seed) {
  RunConfig child = base;
  child.distill.mode = distill_mode_from_name(mode);
  child.partition.fraction_tuned = fraction;
  child.distill.seed = seed;
  return child;
}

// Fraction 0 with a single head: the frozen pretrained model, used as the
// registered mCE baseline.
RunConfig baseline_config(const RunConfig& base) {
  RunConfig child = base;
  child.distill.mode = DistillMode::kApt;
  child.partition.fraction_tuned = 0.0;
  child.distill.seed = base.ablate.seeds.empty() ? base.distill.seed : base.ablate.seeds[0];
  return child;
}

std::string ensure_distilled(const RunConfig& child, const std::string& teacher_ckpt,
                             const std::string& base_ckpt) {
  const RunPaths paths = RunPaths::locate(child);
  const fs::path ckpt = paths.checkpoints / "distilled.ckpt";
  if (fs::exists(ckpt)) {
    const CheckpointMeta meta = peek_checkpoint_meta(ckpt.string());
    if (meta.config_hash == child.distill_config_hash()) {
      printf("cache hit: %s\n", ckpt.string().c_str());
      return ckpt.string();
    }
  }
  return cmd_distill(child, teacher_ckpt, base_ckpt);
}

EvalOutputs ensure_eval(const RunConfig& child, const std::string& ckpt,
                        const std::string& selector) {
  RunConfig eval_cfg = child;
  eval_cfg.evaluation.selector = selector;
  const RunPaths paths = RunPaths::locate(eval_cfg);
  const bool three = distill_mode_num_heads(eval_cfg.distill.mode) == 3;
  const std::string label = three ? selector : "argmax";
  const fs::path record = paths.reports / ("eval_" + label + ".json");
  if (fs::exists(record)) {
    printf("cache hit: %s\n", record.string().c_str());
    EvalOutputs out;
    out.record_path = record.string();
    out.record = read_eval_record(record.string());
    return out;
  }
  return cmd_eval(eval_cfg, ckpt);
}

}  // namespace

AblateOutputs cmd_ablate(const RunConfig& cfg) {
  if (cfg.ablate.modes.empty() || cfg.ablate.fractions.empty() || cfg.ablate.seeds.empty() ||
      cfg.ablate.selectors.empty())
    throw ConfigError("ablate", "modes, selectors, fractions and seeds must be non-empty");

  const RunPaths paths = RunPaths::create(cfg);

  // Shared artifacts, cached by sub-config hash in this run directory.
  const fs::path teacher_path = paths.checkpoints / "teacher.ckpt";
  std::string teacher_ckpt;
  if (fs::exists(teacher_path) &&
      peek_checkpoint_meta(teacher_path.string()).config_hash == cfg.teacher_config_hash()) {
    printf("cache hit: %s\n", teacher_path.string().c_str());
    teacher_ckpt = teacher_path.string();
  } else {
    teacher_ckpt = cmd_train_teacher(cfg);
  }
  const fs::path base_path = paths.checkpoints / "pretrained.ckpt";
  std::string base_ckpt;
  if (fs::exists(base_path) &&
      peek_checkpoint_meta(base_path.string()).config_hash == cfg.pretrain_config_hash()) {
    printf("cache hit: %s\n", base_path.string().c_str());
    base_ckpt = base_path.string();
  } else {
    base_ckpt = cmd_pretrain(cfg);
  }

  std::vector<std::pair<std::string, EvalRecord>> records;
  std::vector<std::string> child_dirs;

  // Frozen fraction-0 baseline first; it becomes the mCE reference.
  const RunConfig base_child = baseline_config(cfg);
  const std::string base_child_ckpt = ensure_distilled(base_child, teacher_ckpt, base_ckpt);
  const EvalOutputs baseline_eval = ensure_eval(base_child, base_child_ckpt, "full");
  records.emplace_back(baseline_eval.record.context.at("row_label"), baseline_eval.record);
  child_dirs.push_back(RunPaths::locate(base_child).root.string());

  for (const auto& mode : cfg.ablate.modes) {
    for (const double fraction : cfg.ablate.fractions) {
      for (const uint64_t seed : cfg.ablate.seeds) {
        RunConfig child = child_config(cfg, mode, fraction, seed);
        child.evaluation.baseline_report = baseline_eval.record_path;
        if (child.distill_config_hash() == base_child.distill_config_hash()) continue;
        const std::string ckpt = ensure_distilled(child, teacher_ckpt, base_ckpt);
        const bool three = distill_mode_num_heads(child.distill.mode) == 3;
        std::vector<std::string> selectors =
            three ? cfg.ablate.selectors : std::vector<std::string>{"full"};
        for (const auto& selector : selectors) {
          const EvalOutputs eval = ensure_eval(child, ckpt, selector);
          records.emplace_back(eval.record.context.at("row_label"), eval.record);
        }
        child_dirs.push_back(RunPaths::locate(child).root.string());
      }
    }
  }

  // Mean rows over seeds for each (mode, fraction, selector) cell.
  if (cfg.ablate.seeds.size() > 1) {
    std::map<std::string, std::vector<const EvalRecord*>> groups;
    for (const auto& [label, rec] : records) {
      auto mode_it = rec.context.find("mode");
      auto frac_it = rec.context.find("fraction_tuned");
      auto sel_it = rec.context.find("selector");
      if (mode_it == rec.context.end()) continue;
      groups[mode_it->second + "/f" + frac_it->second + "/" + sel_it->second].push_back(&rec);
    }
    for (const auto& [key, members] : groups) {
      if (members.size() < 2) continue;
      EvalRecord mean;
      mean.context["row_label"] = key + "/mean";
      auto avg = [&](auto get) {
        double acc = 0.0;
        for (const auto* r : members) acc += get(*r);
        return acc / static_cast<double>(members.size());
      };
      mean.report.clean_accuracy = avg([](const EvalRecord& r) { return r.report.clean_accuracy; });
      mean.report.per_corruption = members[0]->report.per_corruption;
      for (auto& [kind, accs] : mean.report.per_corruption)
        for (size_t s = 0; s < 5; ++s) {
          double acc = 0.0;
          for (const auto* r : members) acc += r->report.per_corruption.at(kind)[s];
          accs[s] = acc / static_cast<double>(members.size());
        }
      if (members[0]->report.mfr)
        mean.report.mfr = avg([](const EvalRecord& r) { return r.report.mfr.value_or(0.0); });
      if (members[0]->report.f_correct_clean)
        mean.report.f_correct_clean =
            avg([](const EvalRecord& r) { return r.report.f_correct_clean.value_or(0.0); });
      if (members[0]->report.f_correct_shifted)
        mean.report.f_correct_shifted =
            avg([](const EvalRecord& r) { return r.report.f_correct_shifted.value_or(0.0); });
      if (members[0]->report.mce)
        mean.report.mce = avg([](const EvalRecord& r) { return r.report.mce.value_or(0.0); });
      records.emplace_back(mean.context.at("row_label"), mean);
    }
  }

  const AblationTable table = ablation_table_from_records(records);
  const std::string text = format_ablation_table(table);
  write_text_file((paths.reports / "ablation.txt").string(), text);
  {
    json j;
    j["columns"] = table.columns;
    json rows = json::array();
    for (const auto& row : table.rows) {
      json r;
      r["label"] = row.label;
      for (const auto& [col, v] : row.cells) r[col] = v ? json(*v) : json(nullptr);
      rows.push_back(r);
    }
    j["rows"] = rows;
    write_text_file((paths.reports / "ablation.json").string(), j.dump(2) + "\n");
  }
  {
    std::vector<std::pair<std::string, double>> bars;
    for (const auto& row : table.rows) {
      const auto it = row.cells.find("shifted_acc");
      if (it != row.cells.end() && it->second) bars.emplace_back(row.label, *it->second);
    }
    write_text_file((paths.plots / "ablation_shifted_acc.svg").string(),
                    render_bar_chart("shifted accuracy by variant", "accuracy", bars));
  }
  printf("%s", text.c_str());

  AblateOutputs out;
  out.table_path = (paths.reports / "ablation.txt").string();
  out.table = table;
  out.child_run_dirs = child_dirs;
  return out;
}

std::string cmd_report(const std::vector<std::string>& run_dirs, const std::string& out_path) {
  const AblationTable table = ablation_table(run_dirs);
  const std::string text = format_ablation_table(table);
  if (!out_path.empty()) write_text_file(out_path, text);
  printf("%s", text.c_str());
  return text;
}

}  // namespace rkd
