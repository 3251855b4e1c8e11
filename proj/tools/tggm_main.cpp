#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "tggm/checkpoint.hpp"
#include "tggm/datasets.hpp"
#include "tggm/errors.hpp"
#include "tggm/meanfield.hpp"
#include "tggm/model.hpp"
#include "tggm/trainers.hpp"
#include "tggm/truncnorm.hpp"

namespace {

using nlohmann::json;

constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitDiverged = 3;
constexpr int kExitPartial = 4;

tggm::Head parse_head(const std::string& s) {
  if (s == "regression") return tggm::Head::Regression;
  if (s == "classification") return tggm::Head::Classification;
  throw tggm::ConfigError("unknown head: " + s);
}

tggm::TrainConfig parse_train_config(const json& j, tggm::Head head) {
  tggm::TrainConfig cfg;
  cfg.step_size = j.value("step_size", 1e-3);
  cfg.rmsprop_decay = j.value("rmsprop_decay", 0.95);
  cfg.rmsprop_epsilon = j.value("rmsprop_epsilon", 1e-8);
  cfg.batch_size = j.value("batch_size", 50);
  cfg.epochs = j.value("epochs", 100);
  cfg.seed = j.value("seed", std::uint64_t{1});
  cfg.sigma0_sq = j.value("sigma0_sq", 0.5);
  cfg.sigma1_sq = j.value("sigma1_sq", 0.5);
  cfg.valid_fraction = j.value("valid_fraction", 0.1);
  const std::string trainer = j.value("trainer", "ML");
  if (trainer == "ML")
    cfg.trainer = tggm::TrainerKind::ML;
  else if (trainer == "BP")
    cfg.trainer = tggm::TrainerKind::BP;
  else
    throw tggm::ConfigError("trainer must be ML or BP");
  if (j.contains("vb_cycles")) {
    const auto& v = j.at("vb_cycles");
    if (v.is_number_integer()) {
      cfg.vb_cycles = {v.get<int>(), v.get<int>(), 0};
    } else {
      cfg.vb_cycles.start = v.value("start", 10);
      cfg.vb_cycles.end = v.value("end", cfg.vb_cycles.start);
      cfg.vb_cycles.decay_epochs = v.value("decay_epochs", 0);
    }
  } else if (head == tggm::Head::Classification) {
    cfg.vb_cycles = {30, 5, 10};
  } else {
    cfg.vb_cycles = {10, 10, 0};
  }
  if (!(cfg.step_size > 0.0) || !(cfg.rmsprop_decay > 0.0) ||
      !(cfg.rmsprop_decay < 1.0) || cfg.batch_size <= 0 || cfg.epochs < 0 ||
      !(cfg.sigma0_sq > 0.0) || !(cfg.sigma1_sq > 0.0))
    throw tggm::ConfigError("train config value out of range");
  return cfg;
}

tggm::Dataset load_from_json(const json& j, bool classification) {
  if (j.contains("csv")) {
    return tggm::load_csv_regression(
        j.at("csv").get<std::string>(), j.value("target_column", "-1"),
        j.value("delimiter", std::string(",")).at(0));
  }
  if (j.contains("idx_images")) {
    return tggm::load_idx(j.at("idx_images").get<std::string>(),
                          j.at("idx_labels").get<std::string>(),
                          j.value("subset", 0));
  }
  if (j.contains("sparse_docs")) {
    return tggm::load_sparse_docs(j.at("sparse_docs").get<std::string>(),
                                  j.value("vocab_size", 0),
                                  j.value("binarize", false));
  }
  throw tggm::ConfigError(
      classification ? "dataset needs csv, idx_images or sparse_docs"
                     : "dataset needs csv, idx_images or sparse_docs");
}

int cmd_train(const std::string& config_path) {
  json cfg_json;
  {
    std::ifstream in(config_path);
    if (!in) {
      std::cerr << "config not readable: " << config_path << "\n";
      return kExitConfig;
    }
    try {
      in >> cfg_json;
    } catch (const json::exception& e) {
      std::cerr << "invalid JSON config: " << e.what() << "\n";
      return kExitConfig;
    }
  }

  try {
    const auto& mj = cfg_json.at("model");
    const tggm::Head head = parse_head(mj.value("head", "regression"));
    const auto dims = mj.at("dims").get<std::vector<int>>();
    const tggm::TrainConfig tcfg =
        parse_train_config(cfg_json.value("train", json::object()), head);

    tggm::Dataset train = load_from_json(cfg_json.at("data").at("train"),
                                         head == tggm::Head::Classification);
    tggm::Dataset test;
    if (cfg_json.at("data").contains("test"))
      test = load_from_json(cfg_json.at("data").at("test"),
                            head == tggm::Head::Classification);
    if (cfg_json.at("data").value("standardize", head == tggm::Head::Regression))
      std::tie(train, test) = tggm::standardize(train, test);

    tggm::TggmModel model =
        tggm::init_params(dims, head, tcfg.seed, mj.value("init_std", 0.1),
                          tcfg.sigma0_sq, tcfg.sigma1_sq);
    const tggm::RatioTable& table = tggm::default_ratio_table();
    const tggm::TrainResult result =
        tcfg.trainer == tggm::TrainerKind::ML
            ? tggm::train_ml(model, train, tcfg, table)
            : tggm::train_bp(model, train, tcfg, table);

    const auto& oj = cfg_json.value("out", json::object());
    const std::string dir = oj.value("dir", ".");
    std::filesystem::create_directories(dir);
    const std::string ckpt =
        dir + "/" + oj.value("checkpoint", std::string("model.tggm"));
    const std::string metrics =
        dir + "/" + oj.value("metrics", std::string("metrics.csv"));
    tggm::save_checkpoint(result.model, ckpt, tcfg.seed);
    tggm::write_metrics_csv(metrics, result.trace);

    if (result.diverged) {
      std::cerr << "training diverged; last finished epoch written to " << ckpt
                << "\n";
      return kExitDiverged;
    }
    if (test.n() > 0) {
      std::cout << "test_metric,"
                << tggm::evaluate(result.model, test, table) << "\n";
    }
    std::cout << "checkpoint," << ckpt << "\nmetrics," << metrics << "\n";
    return kExitOk;
  } catch (const tggm::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const json::exception& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitConfig;
  }
}

int cmd_eval(const std::string& ckpt, const std::string& data_path,
             const std::string& head_str, const std::string& target,
             const std::string& delim, const std::string& idx_labels,
             const std::string& out_csv) {
  try {
    const tggm::TggmModel model = tggm::load_checkpoint(ckpt);
    const tggm::Head head = parse_head(head_str);
    if (head != model.head) {
      std::cerr << "checkpoint head does not match --head\n";
      return kExitConfig;
    }
    tggm::Dataset data;
    if (!idx_labels.empty())
      data = tggm::load_idx(data_path, idx_labels);
    else
      data = tggm::load_csv_regression(data_path, target, delim.at(0));
    if (data.classification() != (head == tggm::Head::Classification)) {
      std::cerr << "dataset/head mismatch\n";
      return kExitConfig;
    }
    const double metric =
        tggm::evaluate(model, data, tggm::default_ratio_table());
    const char* name =
        head == tggm::Head::Regression ? "rmse" : "accuracy";
    std::cout << name << "," << metric << ",n," << data.n() << "\n";
    if (!out_csv.empty()) {
      std::ofstream out(out_csv);
      out << "metric,value,n\n" << name << "," << metric << "," << data.n()
          << "\n";
    }
    return kExitOk;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitConfig;
  }
}

int cmd_bench(const std::string& suite_path) {
  json suite;
  {
    std::ifstream in(suite_path);
    if (!in) {
      std::cerr << "suite not readable: " << suite_path << "\n";
      return kExitConfig;
    }
    try {
      in >> suite;
    } catch (const json::exception& e) {
      std::cerr << "invalid JSON suite: " << e.what() << "\n";
      return kExitConfig;
    }
  }

  int failures = 0;
  std::string out_path;
  try {
    const int repeats = suite.value("repeats", 20);
    const double fraction = suite.value("train_fraction", 0.9);
    const std::uint64_t seed = suite.value("seed", std::uint64_t{1});
    out_path = suite.value("out", std::string("bench.csv"));
    std::vector<std::string> trainers =
        suite.value("trainers", std::vector<std::string>{"ML", "BP"});

    std::ofstream out(out_path);
    if (!out) throw tggm::ConfigError("cannot write " + out_path);
    out << "dataset,trainer,mean_metric,std_error,repeats\n";
    out.precision(10);

    const tggm::RatioTable& table = tggm::default_ratio_table();
    for (const auto& dj : suite.at("datasets")) {
      const std::string name = dj.at("name").get<std::string>();
      for (const auto& trainer : trainers) {
        try {
          tggm::Dataset full = load_from_json(dj, false);
          const auto splits =
              tggm::split_protocol(full, repeats, fraction, seed);
          json tj = dj.value("train", json::object());
          tj["trainer"] = trainer;
          if (dj.contains(trainer == "ML" ? "ml" : "bp"))
            for (const auto& [k, v] :
                 dj.at(trainer == "ML" ? "ml" : "bp").items())
              tj[k] = v;
          const tggm::TrainConfig tcfg =
              parse_train_config(tj, tggm::Head::Regression);

          const int hidden = dj.value("hidden", 50);
          double sum = 0.0, sumsq = 0.0;
          int r = 0;
          for (const auto& [tr_idx, te_idx] : splits) {
            auto [tr, te] = tggm::standardize(tggm::subset(full, tr_idx),
                                              tggm::subset(full, te_idx));
            tggm::TggmModel model = tggm::init_params(
                {full.dim(), hidden, 1}, tggm::Head::Regression,
                tcfg.seed + static_cast<std::uint64_t>(r),
                dj.value("init_std", 0.1), tcfg.sigma0_sq, tcfg.sigma1_sq);
            const tggm::TrainResult res =
                trainer == "ML" ? tggm::train_ml(model, tr, tcfg, table)
                                : tggm::train_bp(model, tr, tcfg, table);
            const double rmse = tggm::evaluate(res.model, te, table);
            sum += rmse;
            sumsq += rmse * rmse;
            ++r;
          }
          const double mean = sum / r;
          const double var = std::max(0.0, sumsq / r - mean * mean);
          const double stderr_mean = std::sqrt(var / r);
          out << name << ',' << trainer << ',' << mean << ',' << stderr_mean
              << ',' << r << "\n";
          std::cout << name << " " << trainer << " mean=" << mean
                    << " stderr=" << stderr_mean << "\n";
        } catch (const std::exception& e) {
          out << name << ',' << trainer << ",failed,failed,0\n";
          std::cerr << "row failed (" << name << "," << trainer
                    << "): " << e.what() << "\n";
          ++failures;
        }
      }
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitConfig;
  }
  return failures == 0 ? kExitOk : kExitPartial;
}

std::vector<double> parse_grid(const std::string& spec) {
  // forms: "a,b,c" | "lo:hi:step" | "lo:hi:logN"
  std::vector<double> grid;
  if (spec.find(':') == std::string::npos) {
    std::stringstream ss(spec);
    std::string tok;
    while (std::getline(ss, tok, ',')) grid.push_back(std::stod(tok));
    return grid;
  }
  const auto p1 = spec.find(':');
  const auto p2 = spec.find(':', p1 + 1);
  if (p2 == std::string::npos)
    throw tggm::ConfigError("grid must be lo:hi:step or lo:hi:logN");
  const double lo = std::stod(spec.substr(0, p1));
  const double hi = std::stod(spec.substr(p1 + 1, p2 - p1 - 1));
  const std::string tail = spec.substr(p2 + 1);
  if (tail.rfind("log", 0) == 0) {
    const int n = std::stoi(tail.substr(3));
    if (n < 1 || !(lo > 0.0) || !(hi > lo))
      throw tggm::ConfigError("bad log grid");
    for (int i = 0; i < n; ++i)
      grid.push_back(n == 1 ? lo
                            : std::exp(std::log(lo) +
                                       (std::log(hi) - std::log(lo)) * i /
                                           (n - 1)));
    return grid;
  }
  const double step = std::stod(tail);
  if (!(step > 0.0)) throw tggm::ConfigError("bad grid step");
  for (double v = lo; v <= hi + 1e-12 * std::abs(step); v += step)
    grid.push_back(v);
  return grid;
}

int cmd_curve(const std::string& sigmas_spec, const std::string& mu_spec,
              const std::string& out_path) {
  try {
    const std::vector<double> sigmas = parse_grid(sigmas_spec);
    const std::vector<double> mus = parse_grid(mu_spec);
    for (double s : sigmas)
      if (!(s > 0.0)) throw tggm::ConfigError("sigmas must be positive");
    const tggm::RatioTable& table = tggm::default_ratio_table();
    std::ofstream out(out_path);
    if (!out) throw tggm::ConfigError("cannot write " + out_path);
    out.precision(12);
    out << "mu,relu";
    for (double s : sigmas) out << ",g_sigma_" << s;
    out << "\n";
    for (double mu : mus) {
      out << mu << ',' << std::max(0.0, mu);
      for (double s : sigmas) out << ',' << tggm::trunc_mean(mu, s, table);
      out << "\n";
    }
    std::cout << "wrote " << out_path << "\n";
    return kExitOk;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitConfig;
  }
}

int cmd_sweep(const std::string& data_path, const std::string& target,
              const std::string& delim, const std::string& sigma0_spec,
              int hidden, int epochs, double step_size, int batch_size,
              std::uint64_t seed, const std::string& out_path) {
  try {
    const std::vector<double> grid = parse_grid(sigma0_spec);
    for (double s : grid)
      if (!(s > 0.0)) throw tggm::ConfigError("sigma0 grid must be positive");
    tggm::Dataset full =
        tggm::load_csv_regression(data_path, target, delim.at(0));
    const auto splits = tggm::split_protocol(full, 1, 0.9, seed);
    auto [tr, te] = tggm::standardize(tggm::subset(full, splits[0].first),
                                      tggm::subset(full, splits[0].second));
    const tggm::RatioTable& table = tggm::default_ratio_table();

    std::ofstream out(out_path);
    if (!out) throw tggm::ConfigError("cannot write " + out_path);
    out << "sigma0_sq,rmse\n";
    out.precision(10);
    for (double s0 : grid) {
      tggm::TrainConfig cfg;
      cfg.trainer = tggm::TrainerKind::BP;
      cfg.sigma0_sq = s0;
      cfg.sigma1_sq = 1.0;
      cfg.step_size = step_size;
      cfg.epochs = epochs;
      cfg.batch_size = batch_size;
      cfg.seed = seed;
      tggm::TggmModel model = tggm::init_params(
          {full.dim(), hidden, 1}, tggm::Head::Regression, seed, 0.1, s0, 1.0);
      const tggm::TrainResult res = tggm::train_bp(model, tr, cfg, table);
      if (res.diverged) {
        std::cerr << "diverged at sigma0_sq=" << s0 << "\n";
        return kExitDiverged;
      }
      out << s0 << ',' << tggm::evaluate(res.model, te, table) << "\n";
    }
    std::cout << "wrote " << out_path << "\n";
    return kExitOk;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitConfig;
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"truncated Gaussian graphical models: training and benchmarks"};
  app.require_subcommand(1);

  std::string config_path;
  auto* train = app.add_subcommand("train", "train a model from a JSON config");
  train->add_option("--config", config_path, "JSON config path")->required();

  std::string ckpt, data_path, head_str = "regression", target = "-1",
              delim = ",", idx_labels, out_csv;
  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint on a dataset");
  eval->add_option("--ckpt", ckpt)->required();
  eval->add_option("--data", data_path)->required();
  eval->add_option("--head", head_str);
  eval->add_option("--target", target, "CSV target column (index or name)");
  eval->add_option("--delim", delim);
  eval->add_option("--idx-labels", idx_labels,
                   "treat --data as IDX images with this label file");
  eval->add_option("--out", out_csv);

  std::string suite_path;
  auto* bench = app.add_subcommand("bench", "run a benchmark suite");
  bench->add_option("--suite", suite_path)->required();

  std::string sigmas_spec, mu_spec = "-6:6:0.01", curve_out = "curve.csv";
  auto* curve = app.add_subcommand("curve", "activation curve CSV");
  curve->add_option("--sigmas", sigmas_spec)->required();
  curve->add_option("--mu", mu_spec);
  curve->add_option("--out", curve_out);

  std::string sweep_data, sweep_sigma0, sweep_out = "sweep.csv",
              sweep_target = "-1", sweep_delim = ",";
  int sweep_hidden = 50, sweep_epochs = 100, sweep_batch = 50;
  double sweep_step = 1e-3;
  std::uint64_t sweep_seed = 1;
  auto* sweep = app.add_subcommand("sweep", "hidden-noise sweep for BP training");
  sweep->add_option("--data", sweep_data)->required();
  sweep->add_option("--sigma0", sweep_sigma0)->required();
  sweep->add_option("--target", sweep_target);
  sweep->add_option("--delim", sweep_delim);
  sweep->add_option("--hidden", sweep_hidden);
  sweep->add_option("--epochs", sweep_epochs);
  sweep->add_option("--step", sweep_step);
  sweep->add_option("--batch", sweep_batch);
  sweep->add_option("--seed", sweep_seed);
  sweep->add_option("--out", sweep_out);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitConfig;
  }

  if (train->parsed()) return cmd_train(config_path);
  if (eval->parsed())
    return cmd_eval(ckpt, data_path, head_str, target, delim, idx_labels,
                    out_csv);
  if (bench->parsed()) return cmd_bench(suite_path);
  if (curve->parsed()) return cmd_curve(sigmas_spec, mu_spec, curve_out);
  if (sweep->parsed())
    return cmd_sweep(sweep_data, sweep_target, sweep_delim, sweep_sigma0,
                     sweep_hidden, sweep_epochs, sweep_step, sweep_batch,
                     sweep_seed, sweep_out);
  return kExitConfig;
}
