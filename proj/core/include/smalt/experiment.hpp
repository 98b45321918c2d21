#pragma once

#include <optional>
#include <string>
#include <vector>

#include "smalt/activations.hpp"
#include "smalt/data.hpp"
#include "smalt/gradcheck.hpp"
#include "smalt/nn.hpp"

namespace smalt {

inline constexpr const char* kVersion = "0.1.0";
inline constexpr const char* kDataDirEnv = "SMALT_DATA_DIR";

struct DatasetSpec {
  enum class Kind { mnist, mnist_subset, blobs };
  Kind kind = Kind::blobs;
  Eigen::Index subset_n = 0;     // mnist_subset only
  std::string root;              // mnist root directory; empty = $SMALT_DATA_DIR
  int blobs_classes = 10;
  int blobs_per_class = 200;
  int blobs_dim = 16;
  double blobs_separation = 6.0;
  unsigned long blobs_seed = 7;

  // "mnist", "mnist_subset:N", "blobs" or "blobs:K,per_class,dim,separation"
  static DatasetSpec parse(const std::string& text);
  std::string label() const;
};

struct ExperimentConfig {
  DatasetSpec dataset;
  TopologyName topology = TopologyName::mnist_mlp;
  VariantConfig variant = VariantConfig::softmax();
  TrainConfig train;
  std::string out_dir = "out";
  int repeats = 1;
  int jobs = 1;

  void validate() const;
};

struct ResultRow {
  std::string variant_label;
  std::optional<int> order;
  std::optional<double> margin;
  unsigned long seed = 0;
  double final_test_accuracy = 0.0;
  double best_test_accuracy = 0.0;
  std::string metrics_file;  // relative to out_dir
  // Training blew up to non-finite values; accuracies read 0 and the run is
  // reported instead of aborting the surrounding sweep.
  bool diverged = false;
};

// Named experiment presets. "paper-mnist-desk" is the desk-scale miniature
// of the full MNIST comparison protocol: mnist_subset:10000, mnist_mlp, 5 epochs,
// repeats 3, batch 32, lr 0.1, momentum 0.9, lr decay 0.9. "paper-mnist-full"
// is the patient full run: mnist, mnist_table1, 20 epochs, repeats 3.
// Unknown names raise invalid_argument.
ExperimentConfig preset_config(const std::string& name);

// JSON round trip for configs (the schema of result.json's "config" object).
std::string config_to_json(const ExperimentConfig& config);
ExperimentConfig config_from_json_text(const std::string& text);
ExperimentConfig config_from_result_file(const std::string& path);

// Trains once per the config (repeats ignored), writes metrics.csv and
// result.json into out_dir, returns the row. Deterministic for a fixed
// config; re-running from result.json reproduces metrics.csv byte for byte.
ResultRow cmd_train(const ExperimentConfig& config);

struct SweepResult {
  std::vector<ResultRow> rows;
  std::string csv_path;
  double best_margin = 0.0;  // sweep-margin only
};

// One training run per margin per repeat; emits sweep_margin.csv with one
// column per margin (one row per repeat plus mean/sd rows) and per-run
// metrics files under out_dir/runs/.
SweepResult cmd_sweep_margin(const ExperimentConfig& config,
                             const std::vector<double>& margins);

// Table-style grid over {taylor, taylor_inf, sm_taylor} x orders with
// softmax and sm_softmax baseline rows (blank order cells); emits
// sweep_order.csv (means) and sweep_order_sd.csv when repeats > 1.
SweepResult cmd_sweep_order(const ExperimentConfig& config,
                            const std::vector<int>& orders, double margin);

// The full comparison protocol: orders {2,4,6,8,10}, margin fixed at 0.6 or
// re-derived from a margin sweep first when derive_margin is set.
SweepResult cmd_compare(const ExperimentConfig& config, bool derive_margin);

struct GradCheckSummary {
  GradCheckReport loss_report;
  GradCheckReport network_report;
  bool expected_mismatch = false;  // taylor_inf vs the true NLL
  bool ok = false;                 // process-level verdict (exit code 0)
};

// Loss-level plus tiny-network checks for the configured variant; for
// taylor_inf the loss-level mismatch against the true NLL is the documented
// expectation and reported as such.
GradCheckSummary cmd_gradcheck(const VariantConfig& variant, int num_classes,
                               unsigned long seed,
                               const std::string& json_out = "");

// Helpers shared by the CLI and tests.
void write_metrics_csv(const std::string& path,
                       const std::vector<EpochRecord>& records);
void atomic_write(const std::string& path, const std::string& content);
std::string format_double(double v);  // round-trip decimal (%.17g)

}  // namespace smalt
