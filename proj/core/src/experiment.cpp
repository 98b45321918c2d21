#include "smalt/experiment.hpp"

#include <atomic>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <json.hpp>
#include <mutex>
#include <sstream>
#include <stdexcept>
#include <thread>

#include "smalt/losses.hpp"

namespace smalt {
namespace {

namespace fs = std::filesystem;
using nlohmann::json;

constexpr unsigned long kSubsetSeed = 9001;  // shared across repeats

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string quoted = "\"";
  for (char c : s) {
    if (c == '"') quoted += '"';
    quoted += c;
  }
  quoted += '"';
  return quoted;
}

std::string sanitize(const std::string& label) {
  std::string out;
  for (char c : label) {
    out += (std::isalnum(static_cast<unsigned char>(c)) || c == '.' ||
            c == '_' || c == '-')
               ? c
               : '_';
  }
  return out;
}

struct Dataset {
  LabeledBatch train;
  LabeledBatch test;
  DatasetMeta meta;
};

std::string resolve_mnist_root(const DatasetSpec& spec) {
  if (!spec.root.empty()) return spec.root;
  if (const char* env = std::getenv(kDataDirEnv)) return env;
  return "data/mnist";
}

Dataset load_dataset(const DatasetSpec& spec) {
  Dataset d;
  switch (spec.kind) {
    case DatasetSpec::Kind::mnist:
    case DatasetSpec::Kind::mnist_subset: {
      const std::string root = resolve_mnist_root(spec);
      MnistData m;
      try {
        m = load_mnist(root);
      } catch (const std::runtime_error& e) {
        throw std::runtime_error(
            std::string(e.what()) +
            "\nhint: run scripts/prepare_mnist.py or set " + kDataDirEnv);
      }
      d.train = std::move(m.train);
      d.test = std::move(m.test);
      d.meta = m.meta;
      if (spec.kind == DatasetSpec::Kind::mnist_subset) {
        d.train = subset(d.train, spec.subset_n, kSubsetSeed);
        d.meta.name = "mnist_subset_" + std::to_string(spec.subset_n);
        d.meta.n_train = d.train.size();
      }
      break;
    }
    case DatasetSpec::Kind::blobs: {
      Blobs b = make_blobs(spec.blobs_classes, spec.blobs_per_class,
                           spec.blobs_dim, spec.blobs_separation,
                           spec.blobs_seed);
      d.train = std::move(b.train);
      d.test = std::move(b.test);
      d.meta.name = spec.label();
      d.meta.n_train = d.train.size();
      d.meta.n_test = d.test.size();
      d.meta.num_classes = spec.blobs_classes;
      d.meta.shape = d.train.shape;
      break;
    }
  }
  return d;
}

Network build_network(const DatasetSpec& spec, TopologyName topology,
                      const VariantConfig& variant) {
  if (spec.kind == DatasetSpec::Kind::blobs) {
    // MNIST topologies expect 28x28x1 inputs; blobs get a small MLP of the
    // matching input/output width instead.
    Network net({1, 1, spec.blobs_dim}, variant);
    net.add(make_dense(spec.blobs_dim, 64));
    net.add(make_relu());
    net.add(make_dense(64, spec.blobs_classes));
    return net;
  }
  return build_topology(topology, variant);
}

struct RunOutput {
  ResultRow row;
  std::vector<EpochRecord> records;
};

RunOutput run_single(const ExperimentConfig& config,
                     const VariantConfig& variant, unsigned long seed,
                     const Dataset& data) {
  Network net = build_network(config.dataset, config.topology, variant);
  net.init(seed);
  TrainConfig tc = config.train;
  tc.seed = seed;
  RunOutput out;
  out.row.variant_label = variant.label();
  if (variant.has_order()) out.row.order = variant.order().value();
  if (variant.has_margin()) out.row.margin = variant.margin();
  out.row.seed = seed;
  try {
    out.records = train(net, data.train, data.test, tc);
  } catch (const std::domain_error&) {
    // Parameters went non-finite mid-run (possible for unstable update
    // rules). Record the run as diverged rather than killing the sweep.
    out.row.diverged = true;
    out.records.clear();
    return out;
  }
  out.row.final_test_accuracy = out.records.back().test_accuracy;
  out.row.best_test_accuracy = 0.0;
  for (const EpochRecord& r : out.records) {
    out.row.best_test_accuracy =
        std::max(out.row.best_test_accuracy, r.test_accuracy);
  }
  return out;
}

// Executes jobs with up to `workers` threads; results land at their input
// index, so aggregation order is deterministic.
void parallel_runs(std::vector<std::function<void()>>& tasks, int workers) {
  if (workers <= 1 || tasks.size() <= 1) {
    for (auto& t : tasks) t();
    return;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::thread> pool;
  std::mutex error_mutex;
  std::exception_ptr first_error;
  const int n = std::min<int>(workers, static_cast<int>(tasks.size()));
  for (int w = 0; w < n; ++w) {
    pool.emplace_back([&] {
      for (;;) {
        const std::size_t i = next.fetch_add(1);
        if (i >= tasks.size()) return;
        try {
          tasks[i]();
        } catch (...) {
          std::lock_guard<std::mutex> lock(error_mutex);
          if (!first_error) first_error = std::current_exception();
        }
      }
    });
  }
  for (auto& t : pool) t.join();
  if (first_error) std::rethrow_exception(first_error);
}

json variant_to_json(const VariantConfig& v) {
  json j;
  j["kind"] = to_string(v.kind());
  if (v.has_order()) j["order"] = v.order().value();
  if (v.has_margin()) j["margin"] = v.margin();
  return j;
}

VariantConfig variant_from_json(const json& j) {
  std::optional<int> order;
  std::optional<double> margin;
  if (j.contains("order")) order = j["order"].get<int>();
  if (j.contains("margin")) margin = j["margin"].get<double>();
  return VariantConfig::make(variant_kind_from_string(j["kind"]), order,
                             margin);
}

json row_to_json(const ResultRow& r) {
  json j;
  j["variant"] = r.variant_label;
  if (r.order) j["order"] = *r.order;
  if (r.margin) j["margin"] = *r.margin;
  j["seed"] = r.seed;
  j["final_test_accuracy"] = r.final_test_accuracy;
  j["best_test_accuracy"] = r.best_test_accuracy;
  if (!r.metrics_file.empty()) j["metrics_file"] = r.metrics_file;
  if (r.diverged) j["diverged"] = true;
  return j;
}

json meta_to_json(const DatasetMeta& m) {
  json j;
  j["name"] = m.name;
  j["n_train"] = m.n_train;
  j["n_test"] = m.n_test;
  j["num_classes"] = m.num_classes;
  j["shape"] = {m.shape[0], m.shape[1], m.shape[2]};
  j["source_checksum"] = m.source_checksum;
  return j;
}

void write_result_json(const std::string& path, const ExperimentConfig& config,
                       const std::vector<ResultRow>& rows,
                       const DatasetMeta& meta) {
  json j = json::parse(config_to_json(config));
  json out;
  out["config"] = j;
  out["dataset"] = meta_to_json(meta);
  out["rows"] = json::array();
  for (const ResultRow& r : rows) out["rows"].push_back(row_to_json(r));
  out["version"] = kVersion;
  out["thread_count"] = 1;  // per-run training threads
  atomic_write(path, out.dump(2) + "\n");
}

double mean(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

double stddev(const std::vector<double>& v) {
  if (v.size() < 2) return 0.0;
  const double m = mean(v);
  double s = 0.0;
  for (double x : v) s += (x - m) * (x - m);
  return std::sqrt(s / static_cast<double>(v.size() - 1));
}

}  // namespace

std::string format_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

void atomic_write(const std::string& path, const std::string& content) {
  fs::create_directories(fs::path(path).parent_path().empty()
                             ? "."
                             : fs::path(path).parent_path().string());
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + tmp);
    out << content;
  }
  fs::rename(tmp, path);
}

void write_metrics_csv(const std::string& path,
                       const std::vector<EpochRecord>& records) {
  std::ostringstream out;
  out << "epoch,train_loss,train_accuracy,test_accuracy\n";
  for (const EpochRecord& r : records) {
    out << r.epoch << ',' << format_double(r.train_loss) << ','
        << format_double(r.train_accuracy) << ','
        << format_double(r.test_accuracy) << '\n';
  }
  atomic_write(path, out.str());
}

DatasetSpec DatasetSpec::parse(const std::string& text) {
  DatasetSpec spec;
  if (text == "mnist") {
    spec.kind = Kind::mnist;
    return spec;
  }
  if (text.rfind("mnist_subset:", 0) == 0) {
    spec.kind = Kind::mnist_subset;
    spec.subset_n = std::stol(text.substr(13));
    if (spec.subset_n < 1) throw std::invalid_argument("subset size must be >= 1");
    return spec;
  }
  if (text == "blobs") {
    spec.kind = Kind::blobs;
    return spec;
  }
  if (text.rfind("blobs:", 0) == 0) {
    spec.kind = Kind::blobs;
    std::istringstream in(text.substr(6));
    char sep;
    if (!(in >> spec.blobs_classes >> sep >> spec.blobs_per_class >> sep >>
          spec.blobs_dim >> sep >> spec.blobs_separation)) {
      throw std::invalid_argument(
          "expected blobs:K,per_class,dim,separation, got " + text);
    }
    return spec;
  }
  throw std::invalid_argument("unknown dataset: " + text);
}

std::string DatasetSpec::label() const {
  switch (kind) {
    case Kind::mnist: return "mnist";
    case Kind::mnist_subset: return "mnist_subset:" + std::to_string(subset_n);
    case Kind::blobs: {
      std::ostringstream out;
      out << "blobs:" << blobs_classes << ',' << blobs_per_class << ','
          << blobs_dim << ',' << blobs_separation;
      return out.str();
    }
  }
  throw std::logic_error("unreachable");
}

void ExperimentConfig::validate() const {
  train.validate();
  if (repeats < 1) throw std::invalid_argument("repeats must be >= 1");
  if (jobs < 1) throw std::invalid_argument("jobs must be >= 1");
  if (out_dir.empty()) throw std::invalid_argument("out_dir must be set");
}

ExperimentConfig preset_config(const std::string& name) {
  ExperimentConfig cfg;
  if (name == "paper-mnist-desk") {
    cfg.dataset = DatasetSpec::parse("mnist_subset:10000");
    cfg.topology = TopologyName::mnist_mlp;
    cfg.train.epochs = 5;
    cfg.train.batch_size = 32;
    cfg.train.learning_rate = 0.1;
    cfg.train.momentum = 0.9;
    cfg.train.lr_decay = 0.9;
    cfg.repeats = 3;
    return cfg;
  }
  if (name == "paper-mnist-full") {
    cfg.dataset = DatasetSpec::parse("mnist");
    cfg.topology = TopologyName::mnist_table1;
    cfg.train.epochs = 20;
    cfg.repeats = 3;
    return cfg;
  }
  throw std::invalid_argument("unknown preset: " + name);
}

std::string config_to_json(const ExperimentConfig& config) {
  json j;
  json ds;
  ds["spec"] = config.dataset.label();
  if (config.dataset.kind != DatasetSpec::Kind::blobs) {
    ds["root"] = resolve_mnist_root(config.dataset);
  } else {
    ds["blobs_seed"] = config.dataset.blobs_seed;
  }
  j["dataset"] = ds;
  j["topology"] = to_string(config.topology);
  j["variant"] = variant_to_json(config.variant);
  json t;
  t["epochs"] = config.train.epochs;
  t["batch_size"] = config.train.batch_size;
  t["learning_rate"] = config.train.learning_rate;
  t["momentum"] = config.train.momentum;
  t["lr_decay"] = config.train.lr_decay;
  t["weight_decay"] = config.train.weight_decay;
  t["seed"] = config.train.seed;
  j["train"] = t;
  j["out_dir"] = config.out_dir;
  j["repeats"] = config.repeats;
  j["jobs"] = config.jobs;
  return j.dump(2);
}

ExperimentConfig config_from_json_text(const std::string& text) {
  const json j = json::parse(text);
  ExperimentConfig c;
  c.dataset = DatasetSpec::parse(j["dataset"]["spec"]);
  if (j["dataset"].contains("root")) c.dataset.root = j["dataset"]["root"];
  if (j["dataset"].contains("blobs_seed")) {
    c.dataset.blobs_seed = j["dataset"]["blobs_seed"].get<unsigned long>();
  }
  c.topology = topology_from_string(j["topology"]);
  c.variant = variant_from_json(j["variant"]);
  const json& t = j["train"];
  c.train.epochs = t["epochs"];
  c.train.batch_size = t["batch_size"];
  c.train.learning_rate = t["learning_rate"];
  c.train.momentum = t["momentum"];
  c.train.lr_decay = t["lr_decay"];
  if (t.contains("weight_decay")) c.train.weight_decay = t["weight_decay"];
  c.train.seed = t["seed"].get<unsigned long>();
  c.out_dir = j["out_dir"];
  c.repeats = j["repeats"];
  c.jobs = j["jobs"];
  c.validate();
  return c;
}

ExperimentConfig config_from_result_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path);
  std::stringstream buf;
  buf << in.rdbuf();
  const json j = json::parse(buf.str());
  return config_from_json_text(
      (j.contains("config") ? j["config"] : j).dump());
}

ResultRow cmd_train(const ExperimentConfig& config) {
  config.validate();
  const Dataset data = load_dataset(config.dataset);
  RunOutput run = run_single(config, config.variant, config.train.seed, data);
  fs::create_directories(config.out_dir);
  run.row.metrics_file = "metrics.csv";
  write_metrics_csv(config.out_dir + "/metrics.csv", run.records);
  write_result_json(config.out_dir + "/result.json", config, {run.row},
                    data.meta);
  return run.row;
}

namespace {

// Shared sweep driver: one training run per (variant, repeat); metrics files
// land in out_dir/runs/.
std::vector<RunOutput> run_grid(const ExperimentConfig& config,
                                const std::vector<VariantConfig>& variants,
                                const Dataset& data) {
  std::vector<RunOutput> outputs(variants.size() *
                                 static_cast<std::size_t>(config.repeats));
  std::vector<std::function<void()>> tasks;
  for (std::size_t v = 0; v < variants.size(); ++v) {
    for (int r = 0; r < config.repeats; ++r) {
      const std::size_t slot = v * config.repeats + r;
      const unsigned long seed = config.train.seed + static_cast<unsigned long>(r);
      tasks.push_back([&, v, slot, seed] {
        outputs[slot] = run_single(config, variants[v], seed, data);
      });
    }
  }
  parallel_runs(tasks, config.jobs);

  fs::create_directories(config.out_dir + "/runs");
  for (RunOutput& out : outputs) {
    const std::string rel = "runs/" + sanitize(out.row.variant_label) +
                            "_seed" + std::to_string(out.row.seed) + ".csv";
    out.row.metrics_file = rel;
    write_metrics_csv(config.out_dir + "/" + rel, out.records);
  }
  return outputs;
}

}  // namespace

SweepResult cmd_sweep_margin(const ExperimentConfig& config,
                             const std::vector<double>& margins) {
  config.validate();
  if (margins.empty()) throw std::invalid_argument("margin list is empty");
  const Dataset data = load_dataset(config.dataset);

  std::vector<VariantConfig> variants;
  for (double m : margins) {
    if (config.variant.kind() == VariantKind::sm_taylor ||
        config.variant.kind() == VariantKind::taylor ||
        config.variant.kind() == VariantKind::taylor_inf) {
      variants.push_back(VariantConfig::sm_taylor(config.variant.order(), m));
    } else {
      variants.push_back(VariantConfig::sm_softmax(m));
    }
  }
  std::vector<RunOutput> outputs = run_grid(config, variants, data);

  // One column per margin; one row per repeat, then mean and sd.
  std::ostringstream csv;
  csv << "row";
  for (double m : margins) csv << ',' << format_double(m);
  csv << '\n';
  std::vector<std::vector<double>> cells(margins.size());
  for (int r = 0; r < config.repeats; ++r) {
    csv << "repeat" << r;
    for (std::size_t v = 0; v < margins.size(); ++v) {
      const double acc =
          outputs[v * config.repeats + r].row.final_test_accuracy;
      cells[v].push_back(acc);
      csv << ',' << format_double(acc);
    }
    csv << '\n';
  }
  csv << "mean";
  double best_acc = -1.0;
  double best_margin = margins.front();
  for (std::size_t v = 0; v < margins.size(); ++v) {
    const double m = mean(cells[v]);
    if (m > best_acc) {
      best_acc = m;
      best_margin = margins[v];
    }
    csv << ',' << format_double(m);
  }
  csv << "\nsd";
  for (std::size_t v = 0; v < margins.size(); ++v) {
    csv << ',' << format_double(stddev(cells[v]));
  }
  csv << '\n';

  SweepResult result;
  result.csv_path = config.out_dir + "/sweep_margin.csv";
  result.best_margin = best_margin;
  atomic_write(result.csv_path, csv.str());
  for (const RunOutput& out : outputs) result.rows.push_back(out.row);
  write_result_json(config.out_dir + "/result.json", config, result.rows,
                    data.meta);
  return result;
}

SweepResult cmd_sweep_order(const ExperimentConfig& config,
                            const std::vector<int>& orders, double margin) {
  config.validate();
  if (orders.empty()) throw std::invalid_argument("order list is empty");
  std::vector<TaylorOrder> parsed;
  for (int n : orders) parsed.emplace_back(n);  // rejects odd/out-of-range
  const Dataset data = load_dataset(config.dataset);

  // Grid rows, one per variant family: softmax and sm_softmax baselines have no
  // order cells; the three Taylor families span all requested orders.
  struct GridRow {
    std::string label;
    std::vector<VariantConfig> variants;  // empty cells for baselines
    std::optional<VariantConfig> baseline;
  };
  std::vector<GridRow> grid;
  grid.push_back({"softmax", {}, VariantConfig::softmax()});
  GridRow taylor{"taylor", {}, std::nullopt};
  GridRow taylor_inf{"taylor_inf", {}, std::nullopt};
  GridRow sm_taylor{"sm_taylor", {}, std::nullopt};
  for (TaylorOrder n : parsed) {
    taylor.variants.push_back(VariantConfig::taylor(n));
    taylor_inf.variants.push_back(VariantConfig::taylor_inf(n));
    sm_taylor.variants.push_back(VariantConfig::sm_taylor(n, margin));
  }
  grid.push_back(taylor);
  grid.push_back(taylor_inf);
  grid.push_back({"sm_softmax", {}, VariantConfig::sm_softmax(margin)});
  grid.push_back(sm_taylor);

  std::vector<VariantConfig> flat;
  for (const GridRow& row : grid) {
    if (row.baseline) flat.push_back(*row.baseline);
    for (const VariantConfig& v : row.variants) flat.push_back(v);
  }
  std::vector<RunOutput> outputs = run_grid(config, flat, data);

  auto cell_stats = [&](std::size_t flat_idx) {
    std::vector<double> accs;
    for (int r = 0; r < config.repeats; ++r) {
      accs.push_back(
          outputs[flat_idx * config.repeats + r].row.final_test_accuracy);
    }
    return std::pair<double, double>(mean(accs), stddev(accs));
  };

  std::ostringstream csv, csv_sd;
  for (std::ostringstream* out : {&csv, &csv_sd}) {
    *out << "variant,accuracy";
    for (int n : orders) *out << ',' << n;
    *out << '\n';
  }
  std::size_t flat_idx = 0;
  for (const GridRow& row : grid) {
    std::vector<std::pair<double, double>> cells;
    std::pair<double, double> base{0.0, 0.0};
    if (row.baseline) base = cell_stats(flat_idx++);
    for (std::size_t i = 0; i < row.variants.size(); ++i) {
      cells.push_back(cell_stats(flat_idx++));
    }
    // The summary Accuracy column repeats the best order's cell
    // (or the baseline's own accuracy for the order-free rows).
    std::pair<double, double> best = base;
    for (const auto& c : cells) {
      if (c.first > best.first) best = c;
    }
    csv << csv_field(row.label) << ',' << format_double(best.first);
    csv_sd << csv_field(row.label) << ',' << format_double(best.second);
    for (std::size_t i = 0; i < orders.size(); ++i) {
      if (i < cells.size()) {
        csv << ',' << format_double(cells[i].first);
        csv_sd << ',' << format_double(cells[i].second);
      } else {
        csv << ',';
        csv_sd << ',';
      }
    }
    csv << '\n';
    csv_sd << '\n';
  }

  SweepResult result;
  result.csv_path = config.out_dir + "/sweep_order.csv";
  atomic_write(result.csv_path, csv.str());
  if (config.repeats > 1) {
    atomic_write(config.out_dir + "/sweep_order_sd.csv", csv_sd.str());
  }
  for (const RunOutput& out : outputs) result.rows.push_back(out.row);
  write_result_json(config.out_dir + "/result.json", config, result.rows,
                    data.meta);
  return result;
}

SweepResult cmd_compare(const ExperimentConfig& config, bool derive_margin) {
  double margin = 0.6;
  if (derive_margin) {
    ExperimentConfig sweep_cfg = config;
    sweep_cfg.out_dir = config.out_dir + "/margin_sweep";
    std::vector<double> margins;
    for (int i = 0; i <= 9; ++i) margins.push_back(i * 0.1);
    margin = cmd_sweep_margin(sweep_cfg, margins).best_margin;
  }
  return cmd_sweep_order(config, {2, 4, 6, 8, 10}, margin);
}

GradCheckSummary cmd_gradcheck(const VariantConfig& variant, int num_classes,
                               unsigned long seed,
                               const std::string& json_out) {
  if (num_classes < 2) throw std::invalid_argument("need K >= 2");
  std::mt19937 rng(static_cast<std::uint32_t>(seed));
  std::uniform_real_distribution<double> logit(-4.0, 4.0);
  Vec z(num_classes);
  for (int i = 0; i < num_classes; ++i) z[i] = logit(rng);
  const Eigen::Index target =
      std::uniform_int_distribution<int>(0, num_classes - 1)(rng);

  GradCheckSummary summary;
  const LossGrad analytic = ce_loss(z, target, variant);
  auto nll = [&](const Vec& probe) {
    // The reported loss (the true NLL of the variant's probabilities); for
    // taylor_inf this deliberately disagrees with the descent direction.
    return ce_loss(probe, target, variant).loss;
  };
  summary.loss_report = check_loss_gradient(nll, analytic.grad, z);

  // Tiny dense network on synthetic blobs.
  const int dim = 8;
  Blobs blobs = make_blobs(num_classes, 12, dim, 6.0, seed + 1);
  Network net({1, 1, dim}, variant);
  net.add(make_dense(dim, 16));
  net.add(make_relu());
  net.add(make_dense(16, num_classes));
  net.init(seed + 2);
  LabeledBatch small = blobs.train;
  const Eigen::Index probe_n = std::min<Eigen::Index>(small.size(), 16);
  small.features = small.features.topRows(probe_n).eval();
  small.labels = small.labels.head(probe_n).eval();
  summary.network_report =
      check_network_gradient(net, small, 1e-5, 1e-5, seed + 3);

  if (variant.kind() == VariantKind::taylor_inf) {
    // Expected: the limit-form direction is not the gradient of the NLL.
    summary.expected_mismatch = true;
    summary.ok = summary.loss_report.max_rel_error > 0.01;
  } else {
    summary.ok = summary.loss_report.passed && summary.network_report.passed;
  }

  if (!json_out.empty()) {
    json j;
    j["variant"] = variant.label();
    j["num_classes"] = num_classes;
    j["seed"] = seed;
    auto rep = [](const GradCheckReport& r) {
      json out;
      out["max_rel_error"] = r.max_rel_error;
      out["worst_index"] = r.worst_index;
      out["passed"] = r.passed;
      out["step"] = r.step;
      return out;
    };
    j["loss_check"] = rep(summary.loss_report);
    j["network_check"] = rep(summary.network_report);
    j["expected_mismatch"] = summary.expected_mismatch;
    j["ok"] = summary.ok;
    j["version"] = kVersion;
    atomic_write(json_out, j.dump(2) + "\n");
  }
  return summary;
}

}  // namespace smalt
