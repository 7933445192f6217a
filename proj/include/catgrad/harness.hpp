#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "catgrad/data.hpp"
#include "catgrad/models.hpp"

namespace catgrad {

/// Declarative experiment description. Defaults mirror the reference
/// experimental setup: learning rates {3e-5, 1e-5, 3e-4, 1e-4, 3e-3, 1e-3},
/// anneal r in {1e-5, 1e-4} with N in {500, 1000}, alpha in
/// {0.1, 0.2, 0.3, 0.8, 1.0}.
struct ExperimentConfig {
  std::string task = "vae";  // sbn | vae | ssvae | audit | density | speed
  std::string estimator = "gs";

  // architecture
  std::string latent_kind = "categorical";  // bernoulli | categorical
  std::size_t classes = 10;
  std::size_t groups = 20;
  std::size_t bernoulli_units = 200;
  std::size_t sbn_layers = 2;
  std::size_t style_dim = 8;
  std::size_t hidden = 32;
  double scale = 1.0;          // width multiplier (groups / units / hidden)
  std::size_t image_size = 28; // downsample target; 28 keeps native size

  // optimization
  std::vector<double> lr_grid = {3e-5, 1e-5, 3e-4, 1e-4, 3e-3, 1e-3};
  std::size_t steps = 5000;
  std::size_t batch = 20;
  double momentum = 0.9;

  // temperature
  bool anneal = true;
  double tau = 1.0;
  double tau_floor = 0.5;
  std::vector<double> anneal_rates = {1e-5, 1e-4};
  std::vector<std::uint64_t> anneal_every = {500, 1000};
  double ssvae_anneal_rate = 3e-5;
  std::uint64_t ssvae_anneal_every = 2000;

  // ssvae
  std::vector<double> alpha_grid = {0.1, 0.2, 0.3, 0.8, 1.0};
  std::string inference_mode = "gumbel";
  std::size_t labeled_per_class = 2;
  bool dynamic_binarization = true;

  // evaluation
  std::size_t eval_every = 1000;
  int eval_m = 100;
  std::size_t eval_subset = 64;

  // reproducibility / data
  std::uint64_t master_seed = 0;
  std::vector<std::uint64_t> seeds = {1};
  std::string data_dir;  // empty: use CATGRAD_DATA_DIR, else synthetic fixture
  std::size_t fixture_n = 200;

  // speed benchmark
  std::vector<std::size_t> k_list = {2, 5, 10, 20, 50, 100};
  std::size_t speed_steps = 30;
  std::size_t warmup_steps = 5;
  std::size_t speed_reps = 3;  // best-of-N timing to suppress scheduler noise
};

ExperimentConfig config_from_json_text(const std::string& text);
ExperimentConfig config_from_json_file(const std::string& path);
std::string config_to_json(const ExperimentConfig& config);
/// FNV-1a over the canonical JSON serialization; stable across
/// re-serialization round trips.
std::uint64_t config_hash(const ExperimentConfig& config);

struct MetricRow {
  std::uint64_t step = 0;
  std::string split;   // train | valid | test
  std::string metric;  // loss | bound | tau | accuracy
  double value = 0;
};

struct RunRecord {
  std::uint64_t config_hash_value = 0;
  std::uint64_t seed = 0;
  std::string cell_id;
  std::vector<MetricRow> rows;
  double final_validation = 0;
  double final_test = 0;
  // timing lives outside the deterministic metric set
  double wall_seconds = 0;
  double steps_per_sec = 0;
};

/// Deterministic CSV (step, split, metric, value) with full-precision values.
std::string metrics_to_csv(const std::vector<MetricRow>& rows);
void write_text_file(const std::string& path, const std::string& text);

struct DatasetSplits {
  ImageBatch train, valid, test;
  std::string provenance;  // "idx:<dir>" or "fixture"
};

/// Loads IDX files from the configured directory when present, otherwise
/// builds the deterministic bundled-style fixture. Images are downsampled
/// to config.image_size and fixed-binarized.
DatasetSplits prepare_dataset(const ExperimentConfig& config);

/// Index of the run with the best (lowest) validation metric. The reported
/// test number always comes from this run.
std::size_t select_best(const std::vector<RunRecord>& records);

struct GridResult {
  std::vector<RunRecord> records;
  std::size_t best_index = 0;
  double reported_test = 0;
};

/// Runs every grid cell (hyperparameters x seeds), selects by validation,
/// writes per-cell CSVs plus a summary JSON under out_dir.
GridResult run_grid(const ExperimentConfig& config, const std::string& out_dir);

/// One training run; exposed for tests and the determinism check.
RunRecord run_single_cell(const ExperimentConfig& config, const DatasetSplits& data, double lr,
                          double alpha, double anneal_rate, std::uint64_t anneal_every_n,
                          std::uint64_t seed, std::uint64_t cell_index);

struct SpeedRow {
  std::size_t k = 0;
  std::string mode;  // marginalize | gumbel
  double steps_per_sec = 0;
};

std::vector<SpeedRow> run_speed_benchmark(const ExperimentConfig& config);
std::string speed_rows_to_csv(const std::vector<SpeedRow>& rows);
/// single-sample / marginalize steps-per-second ratio at a given k.
double speed_ratio_at(const std::vector<SpeedRow>& rows, std::size_t k);

/// Density / sample-mean tables behind the temperature-sweep figure.
/// density.csv rows: tau,y1[,y2],density — exactly grid_points rows per tau.
/// sample_means.csv rows: tau,coord,mean over `samples` draws.
void emit_density_figure_data(std::size_t k, const std::vector<double>& taus,
                              const Tensor& logits, std::size_t grid_points,
                              std::size_t samples, std::uint64_t seed,
                              const std::string& out_dir);

}  // namespace catgrad
