#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>

#include "catgrad/harness.hpp"
#include "catgrad/stats.hpp"

using namespace catgrad;

namespace {

ExperimentConfig tiny_config(const std::string& task) {
  ExperimentConfig c;
  c.task = task;
  c.estimator = "gs";
  c.latent_kind = "categorical";
  c.classes = 4;
  c.groups = 10;
  c.scale = 0.2;  // -> 2 groups
  c.image_size = 8;
  c.lr_grid = {3e-3};
  c.steps = 30;
  c.batch = 8;
  c.anneal = false;
  c.tau = 1.0;
  c.eval_every = 10;
  c.eval_m = 5;
  c.eval_subset = 8;
  c.seeds = {1};
  c.master_seed = 7;
  c.fixture_n = 60;
  c.hidden = 8;
  c.style_dim = 2;
  c.labeled_per_class = 1;
  c.alpha_grid = {0.2};
  c.inference_mode = "gumbel";
  return c;
}

}  // namespace

TEST_CASE("config defaults mirror the experimental grids") {
  ExperimentConfig c;
  CHECK(c.lr_grid == std::vector<double>{3e-5, 1e-5, 3e-4, 1e-4, 3e-3, 1e-3});
  CHECK(c.anneal_rates == std::vector<double>{1e-5, 1e-4});
  CHECK(c.anneal_every == std::vector<std::uint64_t>{500, 1000});
  CHECK(c.alpha_grid == std::vector<double>{0.1, 0.2, 0.3, 0.8, 1.0});
  CHECK(c.momentum == 0.9);
  CHECK(c.tau_floor == 0.5);
  CHECK(c.ssvae_anneal_rate == 3e-5);
  CHECK(c.ssvae_anneal_every == 2000);
}

TEST_CASE("config hash is stable across re-serialization") {
  ExperimentConfig c = tiny_config("vae");
  std::string json = config_to_json(c);
  ExperimentConfig c2 = config_from_json_text(json);
  CHECK(config_hash(c) == config_hash(c2));
  CHECK(config_to_json(c2) == json);

  ExperimentConfig c3 = c;
  c3.steps = 31;
  CHECK(config_hash(c3) != config_hash(c));
}

TEST_CASE("config parsing validates and fills defaults") {
  ExperimentConfig c = config_from_json_text(R"({"task":"sbn","estimator":"st"})");
  CHECK(c.task == "sbn");
  CHECK(c.estimator == "st");
  CHECK(c.lr_grid.size() == 6);  // default preserved
  CHECK_THROWS_AS(config_from_json_text(R"({"steps":0})"), Error);
  CHECK_THROWS(config_from_json_text("not json"));
}

TEST_CASE("metrics csv has the fixed column order") {
  std::vector<MetricRow> rows{{0, "train", "loss", 1.5}, {10, "valid", "bound", 2.25}};
  std::string csv = metrics_to_csv(rows);
  CHECK(csv == "step,split,metric,value\n0,train,loss,1.5\n10,valid,bound,2.25\n");
}

TEST_CASE("selection always reports the validation winner") {
  // rigged: record b has the best test value but worse validation
  RunRecord a;
  a.cell_id = "a";
  a.final_validation = 1.0;
  a.final_test = 100.0;
  RunRecord b;
  b.cell_id = "b";
  b.final_validation = 2.0;
  b.final_test = 0.0;
  std::vector<RunRecord> records{a, b};
  CHECK(select_best(records) == 0);
  CHECK(records[select_best(records)].final_test == 100.0);
}

TEST_CASE("fixture dataset prepares deterministic splits") {
  ExperimentConfig c = tiny_config("vae");
  DatasetSplits d1 = prepare_dataset(c);
  DatasetSplits d2 = prepare_dataset(c);
  CHECK(d1.provenance == "fixture");
  CHECK(d1.train.size() == 36);
  CHECK(d1.valid.size() == 12);
  CHECK(d1.test.size() == 12);
  CHECK(d1.train.height() == 8);
  CHECK(max_abs_diff(d1.train.images, d2.train.images) == 0.0);
  for (double v : d1.train.images.data()) CHECK((v == 0.0 || v == 1.0));
}

TEST_CASE("idx directory is preferred over the fixture") {
  ExperimentConfig c = tiny_config("vae");
  RngStream rng(5);
  ImageBatch batch = make_fixture(40, rng);
  auto dir = std::filesystem::temp_directory_path() / "catgrad_idx_dir";
  std::filesystem::create_directories(dir);
  save_idx(batch, (dir / "train-images-idx3-ubyte").string(),
           (dir / "train-labels-idx1-ubyte").string());
  c.data_dir = dir.string();
  DatasetSplits d = prepare_dataset(c);
  CHECK(d.provenance == std::string("idx:") + dir.string());
  CHECK(d.train.size() == 24);
  CHECK(d.train.has_labels());
  std::filesystem::remove_all(dir);
}

TEST_CASE("single cells reproduce bit for bit") {
  for (const char* task : {"sbn", "vae", "ssvae"}) {
    CAPTURE(task);
    ExperimentConfig c = tiny_config(task);
    DatasetSplits data = prepare_dataset(c);
    RunRecord r1 = run_single_cell(c, data, 3e-3, 0.2, 1e-4, 500, 1, 0);
    RunRecord r2 = run_single_cell(c, data, 3e-3, 0.2, 1e-4, 500, 1, 0);
    CHECK(metrics_to_csv(r1.rows) == metrics_to_csv(r2.rows));
    CHECK(r1.final_test == r2.final_test);
  }
}

TEST_CASE("same cell with different seeds differs but shares the config hash") {
  ExperimentConfig c = tiny_config("vae");
  DatasetSplits data = prepare_dataset(c);
  RunRecord r1 = run_single_cell(c, data, 3e-3, 0.0, 1e-4, 500, 1, 0);
  RunRecord r2 = run_single_cell(c, data, 3e-3, 0.0, 1e-4, 500, 2, 1);
  CHECK(r1.config_hash_value == r2.config_hash_value);
  CHECK(metrics_to_csv(r1.rows) != metrics_to_csv(r2.rows));
}

TEST_CASE("run_grid writes metrics, summary and config sidecar") {
  ExperimentConfig c = tiny_config("vae");
  c.lr_grid = {3e-3, 1e-3};
  c.seeds = {1, 2};
  auto out = std::filesystem::temp_directory_path() / "catgrad_grid_out";
  std::filesystem::remove_all(out);
  GridResult result = run_grid(c, out.string());
  CHECK(result.records.size() == 4);
  CHECK(std::filesystem::exists(out / "summary.json"));
  CHECK(std::filesystem::exists(out / "config.json"));
  std::size_t csv_count = 0;
  for (const auto& entry : std::filesystem::directory_iterator(out)) {
    if (entry.path().extension() == ".csv") ++csv_count;
  }
  CHECK(csv_count == 4);
  CHECK(result.reported_test == result.records[result.best_index].final_test);
  for (const RunRecord& r : result.records) {
    std::uint64_t prev = 0;
    for (const MetricRow& row : r.rows) {
      CHECK(row.step >= prev);
      prev = row.step;
    }
  }
  std::filesystem::remove_all(out);
}

TEST_CASE("speed benchmark: k=1 modes are close, ratios computable") {
  ExperimentConfig c = tiny_config("ssvae");
  c.k_list = {1, 4};
  c.speed_steps = 60;
  c.warmup_steps = 10;
  c.image_size = 4;
  c.hidden = 8;
  c.scale = 1.0;
  std::vector<SpeedRow> rows = run_speed_benchmark(c);
  CHECK(rows.size() == 4);
  double r1 = speed_ratio_at(rows, 1);
  CHECK(r1 > 0.8);
  CHECK(r1 < 1.25);
  CHECK(speed_ratio_at(rows, 4) > r1);
  std::string csv = speed_rows_to_csv(rows);
  CHECK(csv.find("k,mode,steps_per_sec") == 0);
}

TEST_CASE("density figure data has the promised shape and limits") {
  auto out = std::filesystem::temp_directory_path() / "catgrad_density_out";
  std::filesystem::remove_all(out);
  Tensor logits({3}, {std::log(0.2), std::log(0.3), std::log(0.5)});
  emit_density_figure_data(3, {0.1, 10.0}, logits, 40, 20000, 99, out.string());

  std::ifstream density((out / "density.csv").string());
  std::string line;
  std::size_t rows = 0;
  std::getline(density, line);  // header
  while (std::getline(density, line)) ++rows;
  CHECK(rows == 40 * 2);  // grid size x |tau list|

  // sample means: tau=10 near uniform, tau=0.1 near pi
  std::ifstream means((out / "sample_means.csv").string());
  std::getline(means, line);
  std::map<std::pair<double, int>, double> table;
  while (std::getline(means, line)) {
    double tau = 0, value = 0;
    int coord = 0;
    std::sscanf(line.c_str(), "%lf,%d,%lf", &tau, &coord, &value);
    table[{tau, coord}] = value;
  }
  std::vector<double> pi{0.2, 0.3, 0.5};
  for (int c = 0; c < 3; ++c) {
    CHECK(std::abs(table[{10.0, c}] - 1.0 / 3.0) < 0.02);
    CHECK(std::abs(table[{0.1, c}] - pi[static_cast<std::size_t>(c)]) < 0.02);
  }
  std::filesystem::remove_all(out);
}
