#include "catgrad/harness.hpp"

#include <chrono>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <future>
#include <sstream>

#include <nlohmann/json.hpp>

#include "catgrad/distributions.hpp"

namespace catgrad {

namespace {

using nlohmann::json;

template <typename T>
void maybe(const json& j, const char* key, T& dst) {
  if (j.contains(key)) dst = j.at(key).get<T>();
}

std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace

ExperimentConfig config_from_json_text(const std::string& text) {
  json j = json::parse(text);
  ExperimentConfig c;
  maybe(j, "task", c.task);
  maybe(j, "estimator", c.estimator);
  maybe(j, "latent_kind", c.latent_kind);
  maybe(j, "classes", c.classes);
  maybe(j, "groups", c.groups);
  maybe(j, "bernoulli_units", c.bernoulli_units);
  maybe(j, "sbn_layers", c.sbn_layers);
  maybe(j, "style_dim", c.style_dim);
  maybe(j, "hidden", c.hidden);
  maybe(j, "scale", c.scale);
  maybe(j, "image_size", c.image_size);
  maybe(j, "lr_grid", c.lr_grid);
  maybe(j, "steps", c.steps);
  maybe(j, "batch", c.batch);
  maybe(j, "momentum", c.momentum);
  maybe(j, "anneal", c.anneal);
  maybe(j, "tau", c.tau);
  maybe(j, "tau_floor", c.tau_floor);
  maybe(j, "anneal_rates", c.anneal_rates);
  maybe(j, "anneal_every", c.anneal_every);
  maybe(j, "ssvae_anneal_rate", c.ssvae_anneal_rate);
  maybe(j, "ssvae_anneal_every", c.ssvae_anneal_every);
  maybe(j, "alpha_grid", c.alpha_grid);
  maybe(j, "inference_mode", c.inference_mode);
  maybe(j, "labeled_per_class", c.labeled_per_class);
  maybe(j, "dynamic_binarization", c.dynamic_binarization);
  maybe(j, "eval_every", c.eval_every);
  maybe(j, "eval_m", c.eval_m);
  maybe(j, "eval_subset", c.eval_subset);
  maybe(j, "master_seed", c.master_seed);
  maybe(j, "seeds", c.seeds);
  maybe(j, "data_dir", c.data_dir);
  maybe(j, "fixture_n", c.fixture_n);
  maybe(j, "k_list", c.k_list);
  maybe(j, "speed_steps", c.speed_steps);
  maybe(j, "warmup_steps", c.warmup_steps);
  if (c.lr_grid.empty() || c.seeds.empty() || c.steps == 0 || c.batch == 0) {
    throw Error("config: grids must be non-empty and steps/batch positive");
  }
  return c;
}

ExperimentConfig config_from_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("config: cannot open " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return config_from_json_text(ss.str());
}

std::string config_to_json(const ExperimentConfig& c) {
  json j;
  j["task"] = c.task;
  j["estimator"] = c.estimator;
  j["latent_kind"] = c.latent_kind;
  j["classes"] = c.classes;
  j["groups"] = c.groups;
  j["bernoulli_units"] = c.bernoulli_units;
  j["sbn_layers"] = c.sbn_layers;
  j["style_dim"] = c.style_dim;
  j["hidden"] = c.hidden;
  j["scale"] = c.scale;
  j["image_size"] = c.image_size;
  j["lr_grid"] = c.lr_grid;
  j["steps"] = c.steps;
  j["batch"] = c.batch;
  j["momentum"] = c.momentum;
  j["anneal"] = c.anneal;
  j["tau"] = c.tau;
  j["tau_floor"] = c.tau_floor;
  j["anneal_rates"] = c.anneal_rates;
  j["anneal_every"] = c.anneal_every;
  j["ssvae_anneal_rate"] = c.ssvae_anneal_rate;
  j["ssvae_anneal_every"] = c.ssvae_anneal_every;
  j["alpha_grid"] = c.alpha_grid;
  j["inference_mode"] = c.inference_mode;
  j["labeled_per_class"] = c.labeled_per_class;
  j["dynamic_binarization"] = c.dynamic_binarization;
  j["eval_every"] = c.eval_every;
  j["eval_m"] = c.eval_m;
  j["eval_subset"] = c.eval_subset;
  j["master_seed"] = c.master_seed;
  j["seeds"] = c.seeds;
  j["data_dir"] = c.data_dir;
  j["fixture_n"] = c.fixture_n;
  j["k_list"] = c.k_list;
  j["speed_steps"] = c.speed_steps;
  j["warmup_steps"] = c.warmup_steps;
  return j.dump(2);
}

std::uint64_t config_hash(const ExperimentConfig& config) {
  std::string canonical = config_to_json(config);
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : canonical) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string metrics_to_csv(const std::vector<MetricRow>& rows) {
  std::string out = "step,split,metric,value\n";
  for (const MetricRow& r : rows) {
    out += std::to_string(r.step) + "," + r.split + "," + r.metric + "," +
           format_double(r.value) + "\n";
  }
  return out;
}

void write_text_file(const std::string& path, const std::string& text) {
  std::filesystem::path p(path);
  if (p.has_parent_path()) std::filesystem::create_directories(p.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path);
  out << text;
}

DatasetSplits prepare_dataset(const ExperimentConfig& config) {
  std::string dir = config.data_dir;
  if (dir.empty()) {
    if (const char* env = std::getenv("CATGRAD_DATA_DIR")) dir = env;
  }
  ImageBatch all;
  std::string provenance;
  std::string imgs = dir + "/train-images-idx3-ubyte";
  std::string lbls = dir + "/train-labels-idx1-ubyte";
  if (!dir.empty() && std::filesystem::exists(imgs)) {
    all = std::filesystem::exists(lbls) ? load_idx(imgs, lbls) : load_idx(imgs);
    provenance = "idx:" + dir;
  } else {
    RngStream rng = RngStream::derive(config.master_seed, 0, 777);
    all = make_fixture(config.fixture_n, rng);
    provenance = "fixture";
  }
  if (config.image_size < all.height()) all = downsample(all, config.image_size);
  all = binarize_fixed(all);

  std::size_t n = all.size();
  if (n < 10) throw Error("dataset: too few images");
  std::size_t n_train = n * 6 / 10;
  std::size_t n_valid = n * 2 / 10;
  DatasetSplits splits;
  splits.train = all.subset(0, n_train);
  splits.valid = all.subset(n_train, n_valid);
  splits.test = all.subset(n_train + n_valid, n - n_train - n_valid);
  splits.provenance = provenance;
  return splits;
}

namespace {

std::size_t scaled(std::size_t value, double scale) {
  auto s = static_cast<std::size_t>(std::lround(static_cast<double>(value) * scale));
  return std::max<std::size_t>(1, s);
}

LayerSpec latent_spec_from_config(const ExperimentConfig& c) {
  LayerSpec spec;
  if (c.latent_kind == "bernoulli") {
    spec.kind = LatentKind::Bernoulli;
    spec.out = scaled(c.bernoulli_units, c.scale);
  } else if (c.latent_kind == "categorical") {
    spec.kind = LatentKind::Categorical;
    spec.classes = c.classes;
    spec.groups = scaled(c.groups, c.scale);
  } else {
    throw Error("config: latent_kind must be bernoulli or categorical");
  }
  return spec;
}

/// Deterministic minibatch: rows (step*batch + i) mod n.
Tensor batch_rows(const Tensor& flat, std::size_t step, std::size_t batch) {
  std::size_t n = flat.rows(), d = flat.cols();
  Tensor out({batch, d});
  for (std::size_t i = 0; i < batch; ++i) {
    std::size_t row = (step * batch + i) % n;
    std::copy_n(flat.data().data() + row * d, d, out.data().data() + i * d);
  }
  return out;
}

struct CellParams {
  double lr = 1e-3;
  double alpha = 0.1;
  double anneal_rate = 1e-4;
  std::uint64_t anneal_every_n = 500;
  std::uint64_t seed = 1;
};

std::string cell_id_string(const ExperimentConfig& c, const CellParams& p) {
  std::ostringstream os;
  os << "lr" << p.lr;
  if (c.task == "vae" && c.anneal) os << "_r" << p.anneal_rate << "_N" << p.anneal_every_n;
  if (c.task == "ssvae") os << "_a" << p.alpha;
  os << "_seed" << p.seed;
  return os.str();
}

double cell_tau(const ExperimentConfig& c, const CellParams& p, std::uint64_t step) {
  if (c.task == "ssvae") {
    return anneal_temperature(step, {c.ssvae_anneal_rate, c.tau_floor, c.ssvae_anneal_every});
  }
  if (c.anneal && c.task == "vae") {
    return anneal_temperature(step, {p.anneal_rate, c.tau_floor, p.anneal_every_n});
  }
  return c.tau;
}

RunRecord run_sbn_or_vae_cell(const ExperimentConfig& c, const DatasetSplits& data,
                              const CellParams& p, std::uint64_t cell_index) {
  bool is_sbn = c.task == "sbn";
  EstimatorConfig est;
  est.kind = estimator_from_name(c.estimator);
  est.slope = 1.0;

  Tensor train_flat, valid_flat, test_flat;
  Tensor train_upper, train_lower, valid_upper, valid_lower, test_upper, test_lower;
  std::size_t x_dim = data.train.height() * data.train.width();
  if (is_sbn) {
    auto [tu, tl] = split_halves(data.train);
    auto [vu, vl] = split_halves(data.valid);
    auto [su, sl] = split_halves(data.test);
    train_upper = tu.flattened();
    train_lower = tl.flattened();
    valid_upper = vu.flattened();
    valid_lower = vl.flattened();
    test_upper = su.flattened();
    test_lower = sl.flattened();
  } else {
    train_flat = data.train.flattened();
    valid_flat = data.valid.flattened();
    test_flat = data.test.flattened();
  }

  RngStream init = RngStream::derive(c.master_seed, cell_index, p.seed);
  RngStream train_rng = RngStream::derive(c.master_seed, cell_index, p.seed + 1000003);
  RngStream baseline_rng = RngStream::derive(c.master_seed, cell_index, p.seed + 2000003);

  RunRecord record;
  record.config_hash_value = config_hash(c);
  record.seed = p.seed;
  record.cell_id = cell_id_string(c, p);

  LayerSpec latent = latent_spec_from_config(c);
  SgdMomentum opt{.lr = p.lr, .momentum = c.momentum};
  auto t0 = std::chrono::steady_clock::now();

  auto eval_pair = [&](auto&& eval_fn, std::uint64_t step) {
    RngStream valid_rng = RngStream::derive(c.master_seed, cell_index, p.seed + 3000003 + step);
    RngStream test_rng = RngStream::derive(c.master_seed, cell_index, p.seed + 4000003 + step);
    double v = eval_fn(0, valid_rng);
    double t = eval_fn(1, test_rng);
    record.rows.push_back({step, "valid", "bound", v});
    record.rows.push_back({step, "test", "bound", t});
    record.final_validation = v;
    record.final_test = t;
  };

  if (is_sbn) {
    SbnConfig mc;
    mc.in_dim = x_dim / 2;
    mc.out_dim = x_dim / 2;
    mc.latent_layers.assign(c.sbn_layers, latent);
    Sbn model(mc, init);
    auto baselines = model.make_baselines(baseline_rng);
    auto eval_fn = [&](int which, RngStream& r) {
      std::size_t cap = c.eval_subset;
      const Tensor& up = which == 0 ? valid_upper : test_upper;
      const Tensor& lo = which == 0 ? valid_lower : test_lower;
      std::size_t nrows = std::min<std::size_t>(cap, up.rows());
      Tensor u({nrows, up.cols()});
      Tensor l({nrows, lo.cols()});
      std::copy_n(up.data().data(), nrows * up.cols(), u.data().data());
      std::copy_n(lo.data().data(), nrows * lo.cols(), l.data().data());
      return model.eval_bound(u, l, c.eval_m, r);
    };
    for (std::uint64_t step = 0; step < c.steps; ++step) {
      est.tau = cell_tau(c, p, step);
      Tensor bu = batch_rows(train_upper, step, c.batch);
      Tensor bl = batch_rows(train_lower, step, c.batch);
      StepResult res = model.training_step(bu, bl, est, train_rng, &baselines);
      sgd_momentum_step(model.params().values(), res.grads, opt);
      if (step % c.eval_every == 0) {
        record.rows.push_back({step, "train", "loss", res.loss});
        record.rows.push_back({step, "train", "tau", est.tau});
        eval_pair(eval_fn, step);
      }
    }
    eval_pair(eval_fn, c.steps);
  } else {
    VaeConfig mc;
    mc.x_dim = x_dim;
    mc.latent = latent;
    Vae model(mc, init);
    auto baselines = model.make_baselines(baseline_rng);
    auto eval_fn = [&](int which, RngStream& r) {
      const Tensor& xs = which == 0 ? valid_flat : test_flat;
      std::size_t nrows = std::min<std::size_t>(c.eval_subset, xs.rows());
      Tensor x({nrows, xs.cols()});
      std::copy_n(xs.data().data(), nrows * xs.cols(), x.data().data());
      return model.eval_bound(x, c.eval_m, r);
    };
    for (std::uint64_t step = 0; step < c.steps; ++step) {
      est.tau = cell_tau(c, p, step);
      Tensor bx = batch_rows(train_flat, step, c.batch);
      StepResult res = model.training_step(bx, est, train_rng, &baselines);
      sgd_momentum_step(model.params().values(), res.grads, opt);
      if (step % c.eval_every == 0) {
        record.rows.push_back({step, "train", "loss", res.loss});
        record.rows.push_back({step, "train", "tau", est.tau});
        eval_pair(eval_fn, step);
      }
    }
    eval_pair(eval_fn, c.steps);
  }

  auto t1 = std::chrono::steady_clock::now();
  record.wall_seconds = std::chrono::duration<double>(t1 - t0).count();
  record.steps_per_sec =
      record.wall_seconds > 0 ? static_cast<double>(c.steps) / record.wall_seconds : 0.0;
  return record;
}

Tensor one_hot_labels(const std::vector<int>& labels, std::size_t k) {
  Tensor y({labels.size(), k});
  for (std::size_t i = 0; i < labels.size(); ++i) {
    y[i * k + static_cast<std::size_t>(labels[i]) % k] = 1.0;
  }
  return y;
}

RunRecord run_ssvae_cell(const ExperimentConfig& c, const DatasetSplits& data,
                         const CellParams& p, std::uint64_t cell_index) {
  if (!data.train.has_labels()) throw Error("ssvae: dataset has no labels");
  if (c.classes < 2) throw Error("ssvae: training needs at least 2 classes");
  std::size_t k = c.classes;
  std::size_t x_dim = data.train.height() * data.train.width();

  // labeled subset: labeled_per_class examples per class, rest unlabeled
  std::vector<std::size_t> labeled_idx;
  std::vector<std::size_t> per_class(k, 0);
  for (std::size_t i = 0; i < data.train.size(); ++i) {
    auto cls = static_cast<std::size_t>(data.train.labels[i]) % k;
    if (per_class[cls] < c.labeled_per_class) {
      labeled_idx.push_back(i);
      ++per_class[cls];
    }
  }
  Tensor train_flat = data.train.flattened();
  Tensor x_labeled({labeled_idx.size(), x_dim});
  std::vector<int> y_labels(labeled_idx.size());
  for (std::size_t i = 0; i < labeled_idx.size(); ++i) {
    std::copy_n(train_flat.data().data() + labeled_idx[i] * x_dim, x_dim,
                x_labeled.data().data() + i * x_dim);
    y_labels[i] = data.train.labels[labeled_idx[i]];
  }
  Tensor y_onehot = one_hot_labels(y_labels, k);

  RngStream init = RngStream::derive(c.master_seed, cell_index, p.seed);
  RngStream train_rng = RngStream::derive(c.master_seed, cell_index, p.seed + 1000003);

  SsvaeConfig mc;
  mc.x_dim = x_dim;
  mc.classes = k;
  mc.style_dim = scaled(c.style_dim, c.scale);
  mc.hidden = scaled(c.hidden, c.scale);
  mc.alpha = p.alpha;
  mc.mode = inference_mode_from_name(c.inference_mode);
  Ssvae model(mc, init);

  RunRecord record;
  record.config_hash_value = config_hash(c);
  record.seed = p.seed;
  record.cell_id = cell_id_string(c, p);

  SgdMomentum opt{.lr = p.lr, .momentum = c.momentum};
  Tensor test_flat = data.test.flattened();
  auto eval_at = [&](std::uint64_t step) {
    double acc = data.test.has_labels() ? model.classifier_accuracy(test_flat, data.test.labels)
                                        : 0.0;
    RngStream er = RngStream::derive(c.master_seed, cell_index, p.seed + 3000003 + step);
    double bound =
        model.unlabeled_bound(test_flat, InferenceMode::Marginalize, cell_tau(c, p, step), er);
    record.rows.push_back({step, "test", "accuracy", acc});
    record.rows.push_back({step, "test", "bound", -bound});
    record.final_validation = -bound;  // ssvae selects on the bound
    record.final_test = -bound;
  };

  auto t0 = std::chrono::steady_clock::now();
  for (std::uint64_t step = 0; step < c.steps; ++step) {
    double tau = cell_tau(c, p, step);
    Tensor xu_raw = batch_rows(train_flat, step, c.batch);
    Tensor xu = xu_raw;
    if (c.dynamic_binarization) {
      // per-minibatch redraw of the unlabeled pixels
      for (std::size_t i = 0; i < xu.numel(); ++i) {
        xu[i] = train_rng.uniform() < xu_raw[i] ? 1.0 : 0.0;
      }
    }
    StepResult res = model.training_step(x_labeled, y_onehot, xu, tau, train_rng);
    sgd_momentum_step(model.params().values(), res.grads, opt);
    if (step % c.eval_every == 0) {
      record.rows.push_back({step, "train", "loss", res.loss});
      record.rows.push_back({step, "train", "tau", tau});
      eval_at(step);
    }
  }
  eval_at(c.steps);
  auto t1 = std::chrono::steady_clock::now();
  record.wall_seconds = std::chrono::duration<double>(t1 - t0).count();
  record.steps_per_sec =
      record.wall_seconds > 0 ? static_cast<double>(c.steps) / record.wall_seconds : 0.0;
  return record;
}

}  // namespace

RunRecord run_single_cell(const ExperimentConfig& config, const DatasetSplits& data, double lr,
                          double alpha, double anneal_rate, std::uint64_t anneal_every_n,
                          std::uint64_t seed, std::uint64_t cell_index) {
  CellParams p{lr, alpha, anneal_rate, anneal_every_n, seed};
  if (config.task == "ssvae") return run_ssvae_cell(config, data, p, cell_index);
  if (config.task == "sbn" || config.task == "vae") {
    return run_sbn_or_vae_cell(config, data, p, cell_index);
  }
  throw Error("run_single_cell: task must be sbn, vae or ssvae");
}

std::size_t select_best(const std::vector<RunRecord>& records) {
  if (records.empty()) throw Error("select_best: no records");
  std::size_t best = 0;
  for (std::size_t i = 1; i < records.size(); ++i) {
    if (records[i].final_validation < records[best].final_validation) best = i;
  }
  return best;
}

GridResult run_grid(const ExperimentConfig& config, const std::string& out_dir) {
  DatasetSplits data = prepare_dataset(config);

  std::vector<CellParams> cells;
  bool vae_anneal = config.task == "vae" && config.anneal;
  for (double lr : config.lr_grid) {
    std::vector<double> alphas =
        config.task == "ssvae" ? config.alpha_grid : std::vector<double>{0.0};
    std::vector<double> rates = vae_anneal ? config.anneal_rates : std::vector<double>{0.0};
    std::vector<std::uint64_t> everies =
        vae_anneal ? config.anneal_every : std::vector<std::uint64_t>{1};
    for (double alpha : alphas) {
      for (double rate : rates) {
        for (std::uint64_t every : everies) {
          for (std::uint64_t seed : config.seeds) {
            cells.push_back({lr, alpha, rate, every, seed});
          }
        }
      }
    }
  }

  std::vector<std::future<RunRecord>> futures;
  futures.reserve(cells.size());
  for (std::size_t i = 0; i < cells.size(); ++i) {
    futures.push_back(std::async(std::launch::async, [&, i] {
      return run_single_cell(config, data, cells[i].lr, cells[i].alpha, cells[i].anneal_rate,
                             cells[i].anneal_every_n, cells[i].seed, i);
    }));
  }

  GridResult result;
  for (auto& f : futures) result.records.push_back(f.get());
  result.best_index = select_best(result.records);
  result.reported_test = result.records[result.best_index].final_test;

  if (!out_dir.empty()) {
    json summary;
    summary["config_hash"] = config_hash(config);
    summary["dataset"] = data.provenance;
    summary["best_cell"] = result.records[result.best_index].cell_id;
    summary["reported_test"] = result.reported_test;
    json cells_json = json::array();
    for (const RunRecord& r : result.records) {
      write_text_file(out_dir + "/metrics_" + r.cell_id + ".csv", metrics_to_csv(r.rows));
      json cj;
      cj["cell"] = r.cell_id;
      cj["seed"] = r.seed;
      cj["final_validation"] = r.final_validation;
      cj["final_test"] = r.final_test;
      cj["wall_seconds"] = r.wall_seconds;       // timing is not reproducible
      cj["steps_per_sec"] = r.steps_per_sec;
      cells_json.push_back(cj);
    }
    summary["cells"] = cells_json;
    write_text_file(out_dir + "/summary.json", summary.dump(2));
    write_text_file(out_dir + "/config.json", config_to_json(config));
  }
  return result;
}

std::vector<SpeedRow> run_speed_benchmark(const ExperimentConfig& config) {
  std::vector<SpeedRow> rows;
  RngStream data_rng = RngStream::derive(config.master_seed, 0, 555);
  std::size_t side = config.image_size;
  ImageBatch images = synthetic_batch(SyntheticKind::Blobs, std::max<std::size_t>(config.batch * 4, 64),
                                      side, side, data_rng);
  images = binarize_fixed(images);

  for (std::size_t k : config.k_list) {
    ImageBatch labeled = images;
    assign_random_labels(labeled, k, data_rng);
    Tensor flat = labeled.flattened();
    Tensor xl({config.batch, flat.cols()});
    std::copy_n(flat.data().data(), config.batch * flat.cols(), xl.data().data());
    std::vector<int> yl(labeled.labels.begin(),
                        labeled.labels.begin() + static_cast<std::ptrdiff_t>(config.batch));
    Tensor y = one_hot_labels(yl, k);

    for (const char* mode : {"marginalize", "gumbel"}) {
      SsvaeConfig mc;
      mc.x_dim = flat.cols();
      mc.classes = k;
      mc.style_dim = scaled(config.style_dim, config.scale);
      mc.hidden = scaled(config.hidden, config.scale);
      mc.alpha = 0.1;
      mc.mode = inference_mode_from_name(mode);
      RngStream init = RngStream::derive(config.master_seed, k, 1);
      Ssvae model(mc, init);
      SgdMomentum opt{.lr = 1e-4, .momentum = config.momentum};
      RngStream rng = RngStream::derive(config.master_seed, k, 2);

      auto run_steps = [&](std::size_t n) {
        for (std::size_t s = 0; s < n; ++s) {
          Tensor xu = batch_rows(flat, s, config.batch);
          StepResult res = model.training_step(xl, y, xu, 1.0, rng);
          sgd_momentum_step(model.params().values(), res.grads, opt);
        }
      };
      run_steps(config.warmup_steps);
      double best_secs = std::numeric_limits<double>::infinity();
      for (std::size_t rep = 0; rep < std::max<std::size_t>(1, config.speed_reps); ++rep) {
        auto t0 = std::chrono::steady_clock::now();
        run_steps(config.speed_steps);
        auto t1 = std::chrono::steady_clock::now();
        best_secs = std::min(best_secs, std::chrono::duration<double>(t1 - t0).count());
      }
      rows.push_back({k, mode, static_cast<double>(config.speed_steps) / best_secs});
    }
  }
  return rows;
}

std::string speed_rows_to_csv(const std::vector<SpeedRow>& rows) {
  std::string out = "k,mode,steps_per_sec\n";
  for (const SpeedRow& r : rows) {
    out += std::to_string(r.k) + "," + r.mode + "," + format_double(r.steps_per_sec) + "\n";
  }
  return out;
}

double speed_ratio_at(const std::vector<SpeedRow>& rows, std::size_t k) {
  double marg = 0, single = 0;
  for (const SpeedRow& r : rows) {
    if (r.k != k) continue;
    if (r.mode == "marginalize") marg = r.steps_per_sec;
    if (r.mode == "gumbel") single = r.steps_per_sec;
  }
  if (marg <= 0 || single <= 0) throw Error("speed_ratio_at: missing rows for k");
  return single / marg;
}

void emit_density_figure_data(std::size_t k, const std::vector<double>& taus,
                              const Tensor& logits, std::size_t grid_points,
                              std::size_t samples, std::uint64_t seed,
                              const std::string& out_dir) {
  if (k != 2 && k != 3) throw Error("density figure: k must be 2 or 3");
  CategoricalParams params(logits);
  std::string density_csv = k == 2 ? "tau,y1,density\n" : "tau,y1,y2,density\n";
  for (double tau : taus) {
    for (std::size_t i = 0; i < grid_points; ++i) {
      double y1 = (static_cast<double>(i) + 0.5) / static_cast<double>(grid_points);
      if (k == 2) {
        Tensor y({2}, {y1, 1.0 - y1});
        double d = std::exp(gumbel_softmax_log_density(y, params, tau));
        density_csv += format_double(tau) + "," + format_double(y1) + "," + format_double(d) + "\n";
      } else {
        // diagonal slice through the triangle keeps one row per grid point
        double y2 = (1.0 - y1) / 2.0;
        Tensor y({3}, {y1, y2, 1.0 - y1 - y2});
        double d = std::exp(gumbel_softmax_log_density(y, params, tau));
        density_csv += format_double(tau) + "," + format_double(y1) + "," + format_double(y2) +
                       "," + format_double(d) + "\n";
      }
    }
  }
  write_text_file(out_dir + "/density.csv", density_csv);

  std::string means_csv = "tau,coord,mean\n";
  for (double tau : taus) {
    RngStream rng = RngStream::derive(seed, static_cast<std::uint64_t>(tau * 1e6), 3);
    Tensor acc({k});
    for (std::size_t s = 0; s < samples; ++s) {
      add_inplace(acc, gumbel_softmax_sample(params, tau, rng));
    }
    scale_inplace(acc, 1.0 / static_cast<double>(samples));
    for (std::size_t c = 0; c < k; ++c) {
      means_csv += format_double(tau) + "," + std::to_string(c) + "," + format_double(acc[c]) +
                   "\n";
    }
  }
  write_text_file(out_dir + "/sample_means.csv", means_csv);
}

}  // namespace catgrad
