#pragma once

// Experiment manifests (INI), batch execution of (config, seed) runs, and the
// CSV/JSON artifacts they leave on disk.

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <istream>
#include <map>
#include <ostream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>
#include <json.hpp>

#include "ogmge/data.hpp"
#include "ogmge/eval.hpp"
#include "ogmge/trainer.hpp"

namespace ogmge {

class ManifestError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline void to_json(nlohmann::json& j, const SyntheticSpec& s) {
  j = {{"num_classes", s.num_classes}, {"dim_a", s.dim_a},         {"dim_v", s.dim_v},
       {"separation_a", s.separation_a}, {"separation_v", s.separation_v}, {"noise_std", s.noise_std},
       {"label_noise", s.label_noise},   {"n_train", s.n_train},     {"n_val", s.n_val},
       {"n_test", s.n_test},             {"seed", s.seed}};
}

inline void from_json(const nlohmann::json& j, SyntheticSpec& s) {
  j.at("num_classes").get_to(s.num_classes);
  j.at("dim_a").get_to(s.dim_a);
  j.at("dim_v").get_to(s.dim_v);
  j.at("separation_a").get_to(s.separation_a);
  j.at("separation_v").get_to(s.separation_v);
  j.at("noise_std").get_to(s.noise_std);
  j.at("label_noise").get_to(s.label_noise);
  j.at("n_train").get_to(s.n_train);
  j.at("n_val").get_to(s.n_val);
  j.at("n_test").get_to(s.n_test);
  j.at("seed").get_to(s.seed);
}

struct DataSource {
  bool synthetic = true;
  SyntheticSpec spec;
  std::string train_csv, val_csv, test_csv;  // used when !synthetic

  nlohmann::json describe() const {
    if (synthetic) return {{"source", "synthetic"}, {"spec", spec}};
    return {{"source", "csv"}, {"train", train_csv}, {"val", val_csv}, {"test", test_csv}};
  }

  /// CSV splits are used as stored; gen-data writes them already
  /// standardized.
  Splits load() const {
    if (synthetic) return generate_synthetic(spec);
    Splits s{load_csv(train_csv), load_csv(val_csv), load_csv(test_csv)};
    const std::size_t classes = std::max({s.train.num_classes, s.val.num_classes, s.test.num_classes});
    for (auto* b : {&s.train, &s.val, &s.test}) {
      b->num_classes = classes;
      if (b->x_a.cols() != s.train.x_a.cols() || b->x_v.cols() != s.train.x_v.cols())
        throw DataError("csv splits disagree on feature dimensions");
    }
    return s;
  }
};

struct ExperimentManifest {
  std::string name = "experiment";
  std::filesystem::path output_dir = "runs";
  std::vector<std::uint64_t> seeds;
  std::vector<double> alphas;  // sweep-alpha grid
  DataSource data;
  std::vector<TrainConfig> configs;

  void validate() const {
    if (seeds.empty()) throw ManifestError("manifest: seeds list is empty");
    if (configs.empty()) throw ManifestError("manifest: no [config ...] sections");
    std::set<std::string> names;
    for (const auto& c : configs) {
      if (!names.insert(c.name).second) throw ManifestError("manifest: duplicate config name '" + c.name + "'");
      if (c.name.empty() || c.name.find_first_of("/\\ ,") != std::string::npos)
        throw ManifestError("manifest: config name '" + c.name + "' is not a plain identifier");
      try {
        c.validate();
      } catch (const ContractError& e) {
        throw ManifestError(c.name + ": " + e.what());
      }
    }
    for (double a : alphas)
      if (!(a >= 0.0)) throw ManifestError("manifest: alphas must be non-negative");
    if (data.synthetic) {
      try {
        data.spec.validate();
      } catch (const ContractError& e) {
        throw ManifestError(std::string("[data] ") + e.what());
      }
    } else if (data.train_csv.empty() || data.val_csv.empty() || data.test_csv.empty()) {
      throw ManifestError("[data] csv source needs train, val and test paths");
    }
  }
};

namespace detail {

inline std::string strip(std::string s) {
  const auto b = s.find_first_not_of(" \t");
  const auto e = s.find_last_not_of(" \t\r");
  return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
}

inline std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream in(s);
  std::string item;
  while (std::getline(in, item, ',')) {
    item = strip(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

inline double parse_real(const std::string& key, const std::string& v) {
  double x = 0.0;
  const auto t = strip(v);
  auto [p, ec] = std::from_chars(t.data(), t.data() + t.size(), x);
  if (ec != std::errc() || p != t.data() + t.size() || t.empty())
    throw ManifestError(key + ": expected a number, got '" + v + "'");
  return x;
}

inline std::uint64_t parse_count(const std::string& key, const std::string& v) {
  std::uint64_t x = 0;
  const auto t = strip(v);
  auto [p, ec] = std::from_chars(t.data(), t.data() + t.size(), x);
  if (ec != std::errc() || p != t.data() + t.size() || t.empty())
    throw ManifestError(key + ": expected a non-negative integer, got '" + v + "'");
  return x;
}

inline bool parse_bool(const std::string& key, const std::string& v) {
  const auto t = strip(v);
  if (t == "true" || t == "1" || t == "yes" || t == "on") return true;
  if (t == "false" || t == "0" || t == "no" || t == "off") return false;
  throw ManifestError(key + ": expected a boolean, got '" + v + "'");
}

inline const std::map<std::string, std::string>& probe_keys() {
  static const std::map<std::string, std::string> keys{
      {"probe_learning_rate", "learning_rate"}, {"probe_epochs", "epochs"}, {"probe_batch_size", "batch_size"}};
  return keys;
}

}  // namespace detail

/// Sets one TrainConfig field from its manifest spelling. The field's
/// current JSON type decides how the text is parsed.
inline void set_config_field(TrainConfig& cfg, const std::string& key, const std::string& value) {
  nlohmann::json j = cfg;
  nlohmann::json* slot = nullptr;
  if (auto it = detail::probe_keys().find(key); it != detail::probe_keys().end())
    slot = &j["probe_config"][it->second];
  else if (key != "name" && key != "probe_config" && j.contains(key))
    slot = &j[key];
  if (!slot) throw ManifestError("unknown config key '" + key + "'");
  switch (slot->type()) {
    case nlohmann::json::value_t::boolean:
      *slot = detail::parse_bool(key, value);
      break;
    case nlohmann::json::value_t::number_unsigned:
    case nlohmann::json::value_t::number_integer:
      *slot = detail::parse_count(key, value);
      break;
    case nlohmann::json::value_t::number_float:
      *slot = detail::parse_real(key, value);
      break;
    case nlohmann::json::value_t::array: {
      nlohmann::json arr = nlohmann::json::array();
      for (const auto& item : detail::split_list(value)) arr.push_back(detail::parse_count(key, item));
      *slot = arr;
      break;
    }
    default:
      *slot = detail::strip(value);
  }
  const nlohmann::json assigned = *slot;
  TrainConfig parsed;
  try {
    parsed = j.get<TrainConfig>();
  } catch (const nlohmann::json::exception&) {
    throw ManifestError(key + ": invalid value '" + value + "'");
  }
  // Unknown enum spellings deserialize to the first enumerator; catch that.
  if (assigned.is_string() && nlohmann::json(parsed)[key] != assigned)
    throw ManifestError(key + ": invalid value '" + value + "'");
  cfg = parsed;
}

inline void set_data_field(DataSource& d, const std::string& key, const std::string& value) {
  auto& s = d.spec;
  if (key == "source") {
    const auto v = detail::strip(value);
    if (v != "synthetic" && v != "csv") throw ManifestError("[data] source must be synthetic or csv");
    d.synthetic = v == "synthetic";
  } else if (key == "train") {
    d.train_csv = detail::strip(value);
  } else if (key == "val") {
    d.val_csv = detail::strip(value);
  } else if (key == "test") {
    d.test_csv = detail::strip(value);
  } else {
    nlohmann::json j = s;
    if (!j.contains(key)) throw ManifestError("unknown [data] key '" + key + "'");
    if (j[key].is_number_float())
      j[key] = detail::parse_real(key, value);
    else
      j[key] = detail::parse_count(key, value);
    s = j.get<SyntheticSpec>();
  }
}

inline void set_experiment_field(ExperimentManifest& m, const std::string& key, const std::string& value) {
  if (key == "name") {
    m.name = detail::strip(value);
  } else if (key == "output_dir") {
    m.output_dir = detail::strip(value);
  } else if (key == "seeds") {
    m.seeds.clear();
    for (const auto& s : detail::split_list(value)) m.seeds.push_back(detail::parse_count(key, s));
  } else if (key == "alphas") {
    m.alphas.clear();
    for (const auto& a : detail::split_list(value)) m.alphas.push_back(detail::parse_real(key, a));
  } else {
    throw ManifestError("unknown [experiment] key '" + key + "'");
  }
}

/// Sections: [experiment], [data], and one [config NAME] per training config.
/// Relative CSV paths are resolved against `base_dir`.
inline ExperimentManifest parse_manifest(std::istream& in, const std::filesystem::path& base_dir = {}) {
  boost::property_tree::ptree tree;
  try {
    boost::property_tree::ini_parser::read_ini(in, tree);
  } catch (const boost::property_tree::ini_parser_error& e) {
    throw ManifestError(std::string("manifest: ") + e.what());
  }
  ExperimentManifest m;
  for (const auto& [section, body] : tree) {
    if (body.empty() && !body.data().empty()) throw ManifestError("manifest: key '" + section + "' outside a section");
    if (section == "experiment") {
      for (const auto& [k, v] : body) set_experiment_field(m, k, v.data());
    } else if (section == "data") {
      for (const auto& [k, v] : body) set_data_field(m.data, k, v.data());
    } else if (section.rfind("config ", 0) == 0) {
      TrainConfig cfg;
      cfg.name = detail::strip(section.substr(7));
      for (const auto& [k, v] : body) set_config_field(cfg, k, v.data());
      m.configs.push_back(cfg);
    } else {
      throw ManifestError("manifest: unknown section [" + section + "]");
    }
  }
  if (!m.data.synthetic && !base_dir.empty())
    for (auto* p : {&m.data.train_csv, &m.data.val_csv, &m.data.test_csv})
      if (!p->empty() && std::filesystem::path(*p).is_relative()) *p = (base_dir / *p).string();
  return m;
}

inline ExperimentManifest load_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ManifestError("cannot open manifest " + path.string());
  return parse_manifest(in, path.parent_path());
}

/// `--set` overrides: `experiment.KEY`, `data.KEY`, `CONFIG.KEY`, or a bare
/// KEY applied to every config.
inline void apply_override(ExperimentManifest& m, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos) throw ManifestError("override '" + assignment + "' is not KEY=VALUE");
  const std::string lhs = detail::strip(assignment.substr(0, eq));
  const std::string value = assignment.substr(eq + 1);
  const auto dot = lhs.find('.');
  if (dot == std::string::npos) {
    for (auto& c : m.configs) set_config_field(c, lhs, value);
    return;
  }
  const std::string scope = lhs.substr(0, dot), key = lhs.substr(dot + 1);
  if (scope == "experiment") return set_experiment_field(m, key, value);
  if (scope == "data") return set_data_field(m.data, key, value);
  for (auto& c : m.configs)
    if (c.name == scope) return set_config_field(c, key, value);
  throw ManifestError("override names unknown config '" + scope + "'");
}

// ---- artifacts -------------------------------------------------------------

inline std::string run_stem(const RunRecord& r) { return r.name + "_seed" + std::to_string(r.seed); }

inline void write_trace_csv(const std::filesystem::path& path, const RunRecord& r) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  out << "step,loss,rho_a,k_a,k_v\n";
  for (std::size_t t = 0; t < r.steps(); ++t)
    out << t << ',' << detail::format_double(r.loss[t]) << ',' << detail::format_double(r.rho_a[t]) << ','
        << detail::format_double(r.k_a[t]) << ',' << detail::format_double(r.k_v[t]) << '\n';
}

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  std::size_t column(const std::string& name) const {
    const auto it = std::find(header.begin(), header.end(), name);
    if (it == header.end()) throw DataError("table has no column '" + name + "'");
    return static_cast<std::size_t>(it - header.begin());
  }
  double number(std::size_t row, const std::string& name) const {
    return detail::parse_real(name, rows.at(row).at(column(name)));
  }
};

inline CsvTable read_table(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  CsvTable t;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (detail::trim(line).empty()) continue;
    std::vector<std::string> fields;
    for (auto f : detail::split_commas(detail::trim(line))) fields.emplace_back(f);
    if (t.header.empty()) {
      t.header = std::move(fields);
    } else {
      if (fields.size() != t.header.size())
        throw DataError(path.string() + ":" + std::to_string(line_no) + ": wrong field count");
      t.rows.push_back(std::move(fields));
    }
  }
  if (t.header.empty()) throw DataError(path.string() + ": empty table");
  return t;
}

/// Reads a trace CSV back into the step columns of a RunRecord.
inline RunRecord read_trace_csv(const std::filesystem::path& path) {
  const CsvTable t = read_table(path);
  if (t.header != std::vector<std::string>{"step", "loss", "rho_a", "k_a", "k_v"})
    throw DataError(path.string() + ": unexpected trace header");
  RunRecord r;
  for (std::size_t i = 0; i < t.rows.size(); ++i) {
    r.loss.push_back(t.number(i, "loss"));
    r.rho_a.push_back(t.number(i, "rho_a"));
    r.k_a.push_back(t.number(i, "k_a"));
    r.k_v.push_back(t.number(i, "k_v"));
  }
  return r;
}

inline RunRecord read_run_record(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  return nlohmann::json::parse(in).get<RunRecord>();
}

inline std::string optional_cell(const std::optional<double>& v) {
  return v ? detail::format_double(*v) : std::string();
}

inline const char* results_header() {
  return "name,strategy,alpha,seed,steps,test_accuracy,test_map,final_val_accuracy,probe_a,probe_v,"
         "rho_a_final_window";
}

inline std::string results_row(const RunRecord& r) {
  const TrainConfig cfg = r.config.get<TrainConfig>();
  std::ostringstream row;
  row << r.name << ',' << nlohmann::json(cfg.strategy).get<std::string>() << ',' << detail::format_double(cfg.alpha)
      << ',' << r.seed << ',' << r.steps() << ',' << detail::format_double(r.test_accuracy) << ','
      << detail::format_double(r.test_map) << ',' << detail::format_double(r.final_val_accuracy()) << ','
      << optional_cell(r.probe_a) << ',' << optional_cell(r.probe_v) << ','
      << (r.rho_a.empty() ? std::string() : detail::format_double(summarize_ratio_trace(r.rho_a).final_window_mean));
  return row.str();
}

/// Writes `<stem>.json` and `<stem>_trace.csv` and appends a results row.
inline void write_run_artifacts(const std::filesystem::path& dir, const RunRecord& r) {
  std::filesystem::create_directories(dir);
  {
    std::ofstream out(dir / (run_stem(r) + ".json"));
    if (!out) throw DataError("cannot write run record in " + dir.string());
    out << nlohmann::json(r).dump(1) << '\n';
  }
  write_trace_csv(dir / (run_stem(r) + "_trace.csv"), r);
  const auto results = dir / "results.csv";
  const bool fresh = !std::filesystem::exists(results);
  std::ofstream out(results, std::ios::app);
  if (fresh) out << results_header() << '\n';
  out << results_row(r) << '\n';
}

// ---- execution ---------------------------------------------------------------

/// Trains one config at one seed on already materialized splits.
inline RunRecord run_one(const Splits& splits, TrainConfig cfg, std::uint64_t seed, const nlohmann::json& data) {
  cfg.seed = seed;
  RunRecord r = train(splits, cfg).record;
  r.data = data;
  return r;
}

struct RunFailure : std::runtime_error {
  std::string stem;
  RunFailure(std::string s, const std::string& what) : std::runtime_error(what), stem(std::move(s)) {}
};

/// Every (config, seed) pair in manifest order, artifacts written as each run
/// finishes. A training abort leaves `<stem>.FAILED` and rethrows.
inline std::vector<RunRecord> run_manifest(const ExperimentManifest& m, std::ostream& log, bool force_probe = false) {
  m.validate();
  const Splits splits = m.data.load();
  const auto data = m.data.describe();
  std::filesystem::create_directories(m.output_dir);
  std::filesystem::remove(m.output_dir / "results.csv");
  std::vector<RunRecord> out;
  for (TrainConfig cfg : m.configs) {
    if (force_probe) cfg.probe = true;
    for (auto seed : m.seeds) {
      const std::string stem = cfg.name + "_seed" + std::to_string(seed);
      try {
        out.push_back(run_one(splits, cfg, seed, data));
      } catch (const TrainingAborted& e) {
        std::ofstream(m.output_dir / (stem + ".FAILED")) << e.what() << '\n';
        throw RunFailure(stem, e.what());
      }
      write_run_artifacts(m.output_dir, out.back());
      log << stem << ": test accuracy " << detail::format_double(out.back().test_accuracy) << '\n';
    }
  }
  return out;
}

struct MeanStd {
  double mean = 0.0;
  double std = 0.0;  // population
  std::size_t n = 0;
};

inline MeanStd mean_std(std::span<const double> xs) {
  MeanStd r;
  r.n = xs.size();
  if (xs.empty()) return r;
  for (double x : xs) r.mean += x;
  r.mean /= static_cast<double>(xs.size());
  for (double x : xs) r.std += (x - r.mean) * (x - r.mean);
  r.std = std::sqrt(r.std / static_cast<double>(xs.size()));
  return r;
}

struct ComparisonRow {
  std::string name;
  Strategy strategy = Strategy::joint;
  MeanStd test_accuracy, test_map, probe_a, probe_v;
};

/// Groups records by config name (first-seen order) and aggregates over seeds.
inline std::vector<ComparisonRow> summarize_by_config(const std::vector<RunRecord>& records) {
  std::vector<ComparisonRow> rows;
  std::vector<std::vector<const RunRecord*>> groups;
  for (const auto& r : records) {
    auto it = std::find_if(rows.begin(), rows.end(), [&](const auto& row) { return row.name == r.name; });
    if (it == rows.end()) {
      rows.push_back({r.name, r.config.at("strategy").get<Strategy>(), {}, {}, {}, {}});
      groups.emplace_back();
      it = rows.end() - 1;
    }
    groups[static_cast<std::size_t>(it - rows.begin())].push_back(&r);
  }
  for (std::size_t i = 0; i < rows.size(); ++i) {
    std::vector<double> acc, map, pa, pv;
    for (const auto* r : groups[i]) {
      acc.push_back(r->test_accuracy);
      map.push_back(r->test_map);
      if (r->probe_a) pa.push_back(*r->probe_a);
      if (r->probe_v) pv.push_back(*r->probe_v);
    }
    rows[i].test_accuracy = mean_std(acc);
    rows[i].test_map = mean_std(map);
    rows[i].probe_a = mean_std(pa);
    rows[i].probe_v = mean_std(pv);
  }
  return rows;
}

inline void write_comparison(std::ostream& out, const std::vector<ComparisonRow>& rows) {
  out << "name,strategy,seeds,test_accuracy_mean,test_accuracy_std,test_map_mean,test_map_std,probe_a_mean,"
         "probe_a_std,probe_v_mean,probe_v_std\n";
  for (const auto& r : rows) {
    out << r.name << ',' << nlohmann::json(r.strategy).get<std::string>() << ',' << r.test_accuracy.n;
    for (const auto* ms : {&r.test_accuracy, &r.test_map, &r.probe_a, &r.probe_v})
      out << ',' << detail::format_double(ms->mean) << ',' << detail::format_double(ms->std);
    out << '\n';
  }
}

struct SweepPoint {
  double alpha = 0.0;
  double val_accuracy = 0.0;   // mean final-epoch validation accuracy over seeds
  double test_accuracy = 0.0;  // mean over seeds
  std::vector<RunRecord> runs;
};

struct SweepResult {
  std::string config;
  std::vector<SweepPoint> points;  // ascending alpha
  std::size_t chosen = 0;

  const SweepPoint& best() const { return points.at(chosen); }
};

/// Sorted, duplicate-free copy of an alpha grid.
inline std::vector<double> dedupe_alphas(std::vector<double> alphas) {
  std::sort(alphas.begin(), alphas.end());
  alphas.erase(std::unique(alphas.begin(), alphas.end()), alphas.end());
  return alphas;
}

/// Trains `base` at each alpha over all seeds and picks the alpha with the
/// best mean validation accuracy; ties go to the smaller alpha.
inline SweepResult sweep_alpha(const Splits& splits, const TrainConfig& base, const std::vector<double>& alphas,
                               const std::vector<std::uint64_t>& seeds, const nlohmann::json& data = {}) {
  require(!alphas.empty(), "sweep_alpha: empty alpha grid");
  require(!seeds.empty(), "sweep_alpha: empty seed list");
  SweepResult res;
  res.config = base.name;
  for (double a : dedupe_alphas(alphas)) {
    require(a >= 0.0, "sweep_alpha: alphas must be non-negative");
    TrainConfig cfg = base;
    cfg.alpha = a;
    cfg.name = base.name + "_alpha" + detail::format_double(a);
    SweepPoint p;
    p.alpha = a;
    for (auto seed : seeds) {
      p.runs.push_back(run_one(splits, cfg, seed, data));
      p.val_accuracy += p.runs.back().final_val_accuracy();
      p.test_accuracy += p.runs.back().test_accuracy;
    }
    p.val_accuracy /= static_cast<double>(seeds.size());
    p.test_accuracy /= static_cast<double>(seeds.size());
    res.points.push_back(std::move(p));
  }
  for (std::size_t i = 1; i < res.points.size(); ++i)
    if (res.points[i].val_accuracy > res.points[res.chosen].val_accuracy) res.chosen = i;
  return res;
}

inline void write_sweep(std::ostream& out, const std::vector<SweepResult>& sweeps) {
  out << "config,alpha,val_accuracy_mean,test_accuracy_mean,chosen\n";
  for (const auto& s : sweeps)
    for (std::size_t i = 0; i < s.points.size(); ++i)
      out << s.config << ',' << detail::format_double(s.points[i].alpha) << ','
          << detail::format_double(s.points[i].val_accuracy) << ',' << detail::format_double(s.points[i].test_accuracy)
          << ',' << (i == s.chosen ? 1 : 0) << '\n';
}

}  // namespace ogmge
