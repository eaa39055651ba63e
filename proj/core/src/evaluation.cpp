#include "robustkd/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "robustkd/parallel.hpp"
#include "robustkd/training.hpp"

namespace rkd {

namespace fs = std::filesystem;
using nlohmann::json;

double evaluate_accuracy(const PredictFn& predict, const Dataset& dataset, int threads) {
  if (dataset.empty()) throw ValidationError("evaluate_accuracy: empty dataset");
  const int n = static_cast<int>(dataset.size());
  const auto hits = ordered_parallel_map<int>(n, threads, [&](int i) {
    return predict(dataset.images[static_cast<size_t>(i)]) == dataset.labels[static_cast<size_t>(i)]
               ? 1
               : 0;
  });
  long correct = 0;
  for (int h : hits) correct += h;
  return static_cast<double>(correct) / static_cast<double>(n);
}

namespace {

// Stable 64-bit FNV-1a so severity-sweep seeds do not depend on the standard
// library's std::hash.
uint64_t fnv1a64(const std::string& s) {
  uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace

PerCorruption severity_sweep(const PredictFn& predict, const Dataset& clean_test,
                             const std::vector<std::string>& kinds, uint64_t seed, int threads,
                             const SeverityTables& tables) {
  if (clean_test.empty()) throw ValidationError("severity_sweep: empty dataset");
  PerCorruption out;
  for (const auto& kind : kinds) {
    tables.entry(kind);
    std::array<double, 5> accs{};
    for (int severity = 1; severity <= 5; ++severity) {
      const uint64_t kind_seed =
          mix_seed(mix_seed(seed, fnv1a64(kind)), static_cast<uint64_t>(severity));
      const int n = static_cast<int>(clean_test.size());
      const auto hits = ordered_parallel_map<int>(n, threads, [&](int i) {
        const CorruptionSpec spec(kind, severity, mix_seed(kind_seed, static_cast<uint64_t>(i)));
        const Image corrupted = corrupt(clean_test.images[static_cast<size_t>(i)], spec, tables);
        return predict(corrupted) == clean_test.labels[static_cast<size_t>(i)] ? 1 : 0;
      });
      long correct = 0;
      for (int h : hits) correct += h;
      accs[static_cast<size_t>(severity - 1)] =
          static_cast<double>(correct) / static_cast<double>(n);
    }
    out[kind] = accs;
  }
  return out;
}

double RobustnessReport::shifted_accuracy_mean() const {
  if (per_corruption.empty()) return 0.0;
  double acc = 0.0;
  long n = 0;
  for (const auto& [kind, severities] : per_corruption)
    for (double a : severities) {
      acc += a;
      ++n;
    }
  return acc / static_cast<double>(n);
}

MceResult mce(const RobustnessReport& report, const RobustnessReport& baseline) {
  if (report.per_corruption.size() != baseline.per_corruption.size())
    throw ValidationError("mce: reports cover different corruption kinds");
  for (const auto& [kind, _] : report.per_corruption)
    if (baseline.per_corruption.find(kind) == baseline.per_corruption.end())
      throw ValidationError("mce: baseline is missing kind '" + kind + "'");

  MceResult result;
  double sum = 0.0;
  long used = 0;
  for (const auto& [kind, accs] : report.per_corruption) {
    const auto& base_accs = baseline.per_corruption.at(kind);
    double err = 0.0, base_err = 0.0;
    for (size_t s = 0; s < 5; ++s) {
      err += 1.0 - accs[s];
      base_err += 1.0 - base_accs[s];
    }
    if (base_err <= 0.0) {
      result.skipped_kinds.push_back(kind);
      continue;
    }
    const double ce = err / base_err * 100.0;
    result.per_kind[kind] = ce;
    sum += ce;
    ++used;
  }
  if (used == 0) throw EvalError("mce: baseline has zero error for every kind");
  result.value = sum / static_cast<double>(used);
  return result;
}

double mfr(const PredictFn& predict, const std::vector<PerturbationSequence>& sequences) {
  if (sequences.empty()) throw ValidationError("mfr: no sequences");
  double acc = 0.0;
  for (const auto& seq : sequences) {
    if (seq.frames.size() < 2) throw ValidationError("mfr: sequence shorter than 2 frames");
    int flips = 0;
    int prev = predict(seq.frames[0]);
    for (size_t t = 1; t < seq.frames.size(); ++t) {
      const int cur = predict(seq.frames[t]);
      if (cur != prev) ++flips;
      prev = cur;
    }
    acc += static_cast<double>(flips) / static_cast<double>(seq.frames.size() - 1);
  }
  return acc / static_cast<double>(sequences.size());
}

double f_correct(const std::vector<SelectionResult>& traces, Split split) {
  if (traces.empty()) throw ValidationError("f_correct: no traces");
  const Head want = split == Split::kClean ? Head::kClean : Head::kUnclean;
  long hits = 0;
  for (const auto& t : traces)
    if (t.chosen_head == want) ++hits;
  return static_cast<double>(hits) / static_cast<double>(traces.size());
}

double transfer_probe(const std::function<Eigen::VectorXd(const Image&)>& feature_fn,
                      const Dataset& train, const Dataset& test, uint64_t seed) {
  if (train.empty() || test.empty()) throw ValidationError("transfer_probe: empty dataset");
  std::vector<Eigen::VectorXd> xs;
  xs.reserve(train.size());
  for (const auto& img : train.images) xs.push_back(feature_fn(img));
  const int dim = static_cast<int>(xs[0].size());

  LayerNet probe({dim, 1, 1}, {Layer::dense(dim, train.num_classes, Activation::kNone)});
  probe.init_params(mix_seed(seed, 0x9120BEULL));
  FitConfig cfg;
  cfg.learning_rate = 0.02;
  cfg.batch_size = 32;
  cfg.epochs = 60;
  cfg.seed = seed;
  fit_classifier(probe, xs, train.labels, cfg);

  long correct = 0;
  for (size_t i = 0; i < test.size(); ++i) {
    Eigen::Index argmax;
    probe.forward(feature_fn(test.images[i])).maxCoeff(&argmax);
    if (static_cast<int>(argmax) == test.labels[i]) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(test.size());
}

// ---------------------------------------------------------------------------
// Records and tables
// ---------------------------------------------------------------------------

namespace {

json report_to_json(const RobustnessReport& r) {
  json j;
  j["clean_accuracy"] = r.clean_accuracy;
  json per = json::object();
  for (const auto& [kind, accs] : r.per_corruption) per[kind] = accs;
  j["per_corruption"] = per;
  j["shifted_accuracy_mean"] = r.shifted_accuracy_mean();
  j["mce"] = r.mce.has_value() ? json(*r.mce) : json(nullptr);
  j["mce_skipped_kinds"] = r.mce_skipped_kinds;
  j["mfr"] = r.mfr.has_value() ? json(*r.mfr) : json(nullptr);
  j["f_correct_clean"] = r.f_correct_clean.has_value() ? json(*r.f_correct_clean) : json(nullptr);
  j["f_correct_shifted"] =
      r.f_correct_shifted.has_value() ? json(*r.f_correct_shifted) : json(nullptr);
  j["head_usage"] = r.head_usage;
  return j;
}

RobustnessReport report_from_json(const json& j) {
  RobustnessReport r;
  r.clean_accuracy = j.at("clean_accuracy").get<double>();
  for (const auto& [kind, accs] : j.at("per_corruption").items())
    r.per_corruption[kind] = accs.get<std::array<double, 5>>();
  if (!j.at("mce").is_null()) r.mce = j.at("mce").get<double>();
  r.mce_skipped_kinds = j.value("mce_skipped_kinds", std::vector<std::string>{});
  if (!j.at("mfr").is_null()) r.mfr = j.at("mfr").get<double>();
  if (!j.at("f_correct_clean").is_null())
    r.f_correct_clean = j.at("f_correct_clean").get<double>();
  if (!j.at("f_correct_shifted").is_null())
    r.f_correct_shifted = j.at("f_correct_shifted").get<double>();
  if (j.contains("head_usage"))
    r.head_usage =
        j.at("head_usage").get<std::map<std::string, std::map<std::string, long>>>();
  return r;
}

}  // namespace

void write_eval_record(const EvalRecord& record, const std::string& path) {
  json j;
  j["context"] = record.context;
  j["report"] = report_to_json(record.report);
  if (record.transfer) {
    j["transfer"] = {{"dataset", record.transfer->dataset},
                     {"probe_accuracy_original", record.transfer->probe_accuracy_original},
                     {"probe_accuracy_distilled", record.transfer->probe_accuracy_distilled},
                     {"delta", record.transfer->delta}};
  } else {
    j["transfer"] = nullptr;
  }
  std::ofstream out(path);
  if (!out) throw EvalError("cannot write evaluation record: " + path);
  out << j.dump(2) << "\n";
}

EvalRecord read_eval_record(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw EvalError("cannot read evaluation record: " + path);
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw EvalError("bad evaluation record " + path + ": " + e.what());
  }
  EvalRecord rec;
  rec.context = j.at("context").get<std::map<std::string, std::string>>();
  rec.report = report_from_json(j.at("report"));
  if (j.contains("transfer") && !j.at("transfer").is_null()) {
    TransferReport t;
    t.dataset = j["transfer"].at("dataset").get<std::string>();
    t.probe_accuracy_original = j["transfer"].at("probe_accuracy_original").get<double>();
    t.probe_accuracy_distilled = j["transfer"].at("probe_accuracy_distilled").get<double>();
    t.delta = j["transfer"].at("delta").get<double>();
    rec.transfer = t;
  }
  return rec;
}

namespace {

const std::vector<std::string> kTableColumns = {
    "clean_acc", "shifted_acc", "mce", "mfr", "f_correct_clean", "f_correct_shifted"};

AblationTable::Row record_to_row(const std::string& label, const EvalRecord& rec) {
  AblationTable::Row row;
  row.label = label;
  row.cells["clean_acc"] = rec.report.clean_accuracy;
  row.cells["shifted_acc"] = rec.report.shifted_accuracy_mean();
  row.cells["mce"] = rec.report.mce ? std::optional<double>(*rec.report.mce) : std::nullopt;
  row.cells["mfr"] = rec.report.mfr ? std::optional<double>(*rec.report.mfr) : std::nullopt;
  row.cells["f_correct_clean"] = rec.report.f_correct_clean
                                     ? std::optional<double>(*rec.report.f_correct_clean)
                                     : std::nullopt;
  row.cells["f_correct_shifted"] = rec.report.f_correct_shifted
                                       ? std::optional<double>(*rec.report.f_correct_shifted)
                                       : std::nullopt;
  return row;
}

}  // namespace

AblationTable ablation_table_from_records(
    const std::vector<std::pair<std::string, EvalRecord>>& records) {
  AblationTable table;
  table.columns = kTableColumns;
  for (const auto& [label, rec] : records) table.rows.push_back(record_to_row(label, rec));
  std::sort(table.rows.begin(), table.rows.end(),
            [](const auto& a, const auto& b) { return a.label < b.label; });
  if (table.rows.size() == 2) {
    AblationTable::Row diff;
    diff.label = "diff";
    for (const auto& col : table.columns) {
      const auto& a = table.rows[0].cells.at(col);
      const auto& b = table.rows[1].cells.at(col);
      diff.cells[col] =
          (a && b) ? std::optional<double>(*b - *a) : std::nullopt;
    }
    table.diff = diff;
  }
  return table;
}

AblationTable ablation_table(const std::vector<std::string>& run_dirs) {
  std::vector<std::pair<std::string, EvalRecord>> records;
  for (const auto& dir : run_dirs) {
    const fs::path reports = fs::path(dir) / "reports";
    if (!fs::exists(reports)) continue;
    std::vector<fs::path> files;
    for (const auto& entry : fs::directory_iterator(reports)) {
      const std::string name = entry.path().filename().string();
      if (name.rfind("eval_", 0) == 0 && entry.path().extension() == ".json")
        files.push_back(entry.path());
    }
    std::sort(files.begin(), files.end());
    for (const auto& f : files) {
      EvalRecord rec = read_eval_record(f.string());
      std::string label = fs::path(dir).filename().string();
      if (auto it = rec.context.find("row_label"); it != rec.context.end()) label = it->second;
      else label += ":" + f.stem().string();
      records.emplace_back(label, std::move(rec));
    }
  }
  return ablation_table_from_records(records);
}

std::string format_ablation_table(const AblationTable& table) {
  std::ostringstream os;
  size_t label_width = 5;
  for (const auto& row : table.rows) label_width = std::max(label_width, row.label.size());
  if (table.diff) label_width = std::max(label_width, table.diff->label.size());

  auto emit_cell = [&](const std::optional<double>& v) {
    char buf[32];
    if (v)
      snprintf(buf, sizeof(buf), "%18.4f", *v);
    else
      snprintf(buf, sizeof(buf), "%18s", "-");
    os << buf;
  };
  os << std::string(label_width, ' ');
  for (const auto& col : table.columns) {
    char buf[32];
    snprintf(buf, sizeof(buf), "%18s", col.c_str());
    os << buf;
  }
  os << "\n";
  auto emit_row = [&](const AblationTable::Row& row) {
    os << row.label << std::string(label_width - row.label.size(), ' ');
    for (const auto& col : table.columns) {
      auto it = row.cells.find(col);
      emit_cell(it == row.cells.end() ? std::nullopt : it->second);
    }
    os << "\n";
  };
  for (const auto& row : table.rows) emit_row(row);
  if (table.diff) emit_row(*table.diff);
  return os.str();
}

}  // namespace rkd
