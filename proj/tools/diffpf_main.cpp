// Command-line front end: dataset generation, training, evaluation and
// benchmarking. Every command is deterministic given its flags and --seed;
// wall-clock throughput numbers are the one exception.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "diffpf/eval.hpp"
#include "diffpf/filter.hpp"
#include "diffpf/tasks.hpp"
#include "diffpf/train.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;
using diffpf::i64;
namespace tasks = diffpf::tasks;
namespace filter = diffpf::filter;
namespace train = diffpf::train;
namespace eval = diffpf::eval;

namespace {

std::vector<std::uint64_t> parse_seeds(const std::string& s) {
  std::vector<std::uint64_t> out;
  std::stringstream ss(s);
  std::string tok;
  while (std::getline(ss, tok, ',')) {
    if (tok.empty()) continue;
    size_t pos = 0;
    out.push_back(std::stoull(tok, &pos));
    if (pos != tok.size()) throw std::invalid_argument("bad seed list: " + s);
  }
  if (out.empty()) throw std::invalid_argument("empty seed list");
  return out;
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string tok;
  while (std::getline(ss, tok, ','))
    if (!tok.empty()) out.push_back(tok);
  return out;
}

struct GenArgs {
  std::string task;
  i64 sequences = 0, test_sequences = 5, length = 50, image_size = 64;
  std::uint64_t seed = 0;
  std::string out;
  bool force = false;
};

int cmd_gen_data(const GenArgs& a) {
  auto id = tasks::task_from_name(a.task);
  auto ds = tasks::gen_dataset(id, a.sequences, a.test_sequences, a.length,
                               a.seed, a.image_size);
  tasks::save_dataset(ds, a.out, a.force);
  std::cout << "wrote " << ds.meta.num_train << "+" << ds.meta.num_test
            << " sequences of length " << ds.meta.seq_len << " to " << a.out
            << "\n";
  return 0;
}

struct TrainArgs {
  std::string task, data, out, from, config, method = "diffpf";
  i64 phase = 1;
  std::uint64_t seed = 0;
  i64 iterations = -1, batch = -1, particles = -1, diffusion_steps = -1,
      feature_dim = -1;
  double lr_start = -1, lr_end = -1;
};

// --config JSON supplies any knob not set on the command line
void apply_config_file(TrainArgs& a, const CLI::App* cmd) {
  if (a.config.empty()) return;
  std::ifstream f(a.config);
  if (!f) throw std::runtime_error("cannot read config " + a.config);
  json j = json::parse(f);
  auto take_i = [&](const char* flag, const char* key, i64& dst) {
    if (cmd->count(flag) == 0 && j.contains(key)) dst = j.at(key).get<i64>();
  };
  take_i("--iterations", "iterations", a.iterations);
  take_i("--batch", "batch", a.batch);
  take_i("--particles", "particles", a.particles);
  take_i("--diffusion-steps", "diffusion_steps", a.diffusion_steps);
  take_i("--feature-dim", "feature_dim", a.feature_dim);
  take_i("--phase", "phase", a.phase);
  if (cmd->count("--method") == 0 && j.contains("method"))
    a.method = j.at("method").get<std::string>();
  if (cmd->count("--lr-start") == 0 && j.contains("lr_start"))
    a.lr_start = j.at("lr_start").get<double>();
  if (cmd->count("--lr-end") == 0 && j.contains("lr_end"))
    a.lr_end = j.at("lr_end").get<double>();
}

int cmd_train(TrainArgs& a, const CLI::App* cmd) {
  apply_config_file(a, cmd);
  if (a.phase == 2 && a.from.empty())
    throw std::invalid_argument("--phase 2 requires --from CHECKPOINT");

  auto ds = tasks::load_dataset(a.data);
  if (!a.task.empty() && a.task != ds.meta.task)
    throw std::invalid_argument("requested task '" + a.task +
                                "' but dataset " + a.data + " holds '" +
                                ds.meta.task + "'");

  filter::Model m = [&] {
    if (!a.from.empty()) return filter::load_model(a.from);
    filter::ModelConfig mc;
    mc.method = a.method;
    mc.task = tasks::task_from_name(ds.meta.task);
    mc.image_size = ds.meta.image_size;
    mc.init_seed = a.seed;
    if (a.particles > 0) mc.particles = a.particles;
    if (a.diffusion_steps > 0) mc.diffusion_steps = a.diffusion_steps;
    if (a.feature_dim > 0) mc.feature_dim = a.feature_dim;
    return filter::fresh_model(mc, ds.meta);
  }();

  train::TrainConfig tc;
  tc.phase = a.phase;
  tc.seed = a.seed;
  if (a.iterations > 0) tc.iterations = a.iterations;
  if (a.batch > 0) tc.batch = a.batch;
  if (a.lr_start > 0) tc.adam.lr_start = a.lr_start;
  if (a.lr_end > 0) tc.adam.lr_end = a.lr_end;

  auto res = train::train_model(m, ds, tc);

  fs::create_directories(a.out);
  filter::save_model(m, fs::path(a.out) / "model.ckpt");
  train::write_loss_trace(res.loss_trace, fs::path(a.out) / "loss_trace.csv");

  double last = res.loss_trace.empty() ? 0.0 : res.loss_trace.back();
  std::cout << "phase " << tc.phase << " done: " << res.loss_trace.size()
            << " iterations, final loss " << last << ", checkpoint "
            << (fs::path(a.out) / "model.ckpt").string() << "\n";
  if (res.skipped_updates > 0)
    std::cout << "skipped " << res.skipped_updates
              << " non-finite updates\n";
  return 0;
}

struct EvalArgs {
  std::string model, data, seeds = "0,1,2", metric = "rmse", report;
  std::string trajectories;
  i64 particles = -1, diffusion_steps = -1;
};

eval::Report eval_checkpoint(const EvalArgs& a) {
  auto m = filter::load_model(a.model);
  auto ds = tasks::load_dataset(a.data);
  if (ds.meta.task != tasks::task_name(m.cfg.task))
    throw std::invalid_argument("checkpoint task '" +
                                tasks::task_name(m.cfg.task) +
                                "' but dataset holds '" + ds.meta.task + "'");
  if (a.diffusion_steps > 0 && a.diffusion_steps != m.cfg.diffusion_steps)
    throw std::invalid_argument(
        "checkpoint was trained with " +
        std::to_string(m.cfg.diffusion_steps) +
        " diffusion steps; the schedule is part of the trained model");

  eval::EvalConfig ec;
  ec.particles = a.particles > 0 ? a.particles
                 : m.cfg.method == "regressor" ? 100
                                               : m.cfg.particles;
  ec.seeds = parse_seeds(a.seeds);
  if (!a.trajectories.empty()) ec.trajectory_csv = a.trajectories;
  return m.cfg.method == "regressor" ? eval::run_bpf(m, ds, ec)
                                     : eval::run_diffpf(m, ds, ec);
}

int cmd_eval(const EvalArgs& a) {
  auto rep = eval_checkpoint(a);
  double value;
  if (a.metric == "mse")
    value = rep.median_mse();
  else if (a.metric == "rmse")
    value = rep.median_rmse();
  else if (a.metric == "final-rmse")
    value = rep.median_final_rmse();
  else
    throw std::invalid_argument("unknown metric " + a.metric);
  std::cout << a.metric << " " << value << " (median over "
            << rep.per_seed.size() << " seeds)\n";
  if (!a.report.empty()) rep.write(a.report);
  return 0;
}

struct BenchArgs {
  std::string tasks_list, methods = "diffpf,bpf,kf", models, seeds = "0,1,2";
  std::string report, csv;
  i64 particles = -1;
};

json report_cell(const eval::Report& rep) { return json::parse(rep.to_json()); }

int cmd_benchmark(const BenchArgs& a) {
  std::ifstream mf(a.models);
  if (!mf) throw std::runtime_error("cannot read manifest " + a.models);
  json manifest = json::parse(mf);
  if (!manifest.contains("datasets"))
    throw std::invalid_argument("manifest needs a 'datasets' map");
  auto models = manifest.value("models", json::object());

  auto task_names = split_list(a.tasks_list);
  auto methods = split_list(a.methods);
  auto seeds = parse_seeds(a.seeds);

  json cells = json::array();
  for (const auto& tname : task_names) {
    tasks::task_from_name(tname);  // validates the name early
    if (!manifest.at("datasets").contains(tname)) {
      cells.push_back({{"task", tname},
                       {"method", nullptr},
                       {"absent", true},
                       {"note", "no dataset listed for this task"}});
      continue;
    }
    auto ds = tasks::load_dataset(
        manifest.at("datasets").at(tname).get<std::string>());
    for (const auto& method : methods) {
      json cell{{"task", tname}, {"method", method}};
      try {
        if (method == "kf") {
          cell.merge_patch(report_cell(eval::run_kalman(ds)));
        } else {
          std::string key = tname + "/" + method;
          if (!models.contains(key)) {
            cell["absent"] = true;
            cell["note"] = "no checkpoint listed under '" + key + "'";
            cells.push_back(cell);
            continue;
          }
          auto m = filter::load_model(models.at(key).get<std::string>());
          eval::EvalConfig ec;
          ec.particles = a.particles > 0 ? a.particles
                         : method == "bpf" ? 100
                                           : m.cfg.particles;
          ec.seeds = seeds;
          cell.merge_patch(report_cell(method == "bpf"
                                           ? eval::run_bpf(m, ds, ec)
                                           : eval::run_diffpf(m, ds, ec)));
        }
      } catch (const std::exception& e) {
        cell["absent"] = true;
        cell["note"] = e.what();
      }
      cells.push_back(cell);
    }
  }

  json out;
  out["config"] = {{"tasks", task_names},
                   {"methods", methods},
                   {"models", a.models},
                   {"seeds", seeds}};
  out["cells"] = cells;

  std::string text = out.dump(2);
  if (!a.report.empty()) {
    std::ofstream f(a.report, std::ios::trunc);
    if (!f) throw std::runtime_error("cannot write " + a.report);
    f << text << "\n";
  } else {
    std::cout << text << "\n";
  }

  if (!a.csv.empty()) {
    std::ofstream f(a.csv, std::ios::trunc);
    if (!f) throw std::runtime_error("cannot write " + a.csv);
    f << "task,method,seed,mse,rmse,final_rmse,hz\n";
    for (const auto& cell : cells) {
      if (cell.value("absent", false)) continue;
      for (const auto& ps : cell.at("per_seed"))
        f << cell.at("task").get<std::string>() << ","
          << cell.at("method").get<std::string>() << "," << ps.at("seed")
          << "," << ps.at("mse") << "," << ps.at("rmse") << ","
          << ps.at("final_rmse") << "," << ps.at("hz") << "\n";
    }
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"differentiable particle filtering toolkit"};
  app.require_subcommand(1);

  GenArgs ga;
  auto* gen = app.add_subcommand("gen-data", "generate a trajectory dataset");
  gen->add_option("--task", ga.task, "disk, maze, lg or bimodal")->required();
  gen->add_option("--sequences", ga.sequences, "training sequences")->required();
  gen->add_option("--test-sequences", ga.test_sequences, "held-out sequences");
  gen->add_option("--length", ga.length, "steps per sequence");
  gen->add_option("--seed", ga.seed, "generator seed");
  gen->add_option("--out", ga.out, "output directory")->required();
  gen->add_option("--image-size", ga.image_size, "square image side");
  gen->add_flag("--force", ga.force, "overwrite an existing dataset");

  TrainArgs ta;
  auto* tr = app.add_subcommand("train", "train a filter or regressor");
  tr->add_option("--task", ta.task, "cross-checked against the dataset");
  tr->add_option("--data", ta.data, "dataset directory")->required();
  tr->add_option("--out", ta.out, "output directory")->required();
  tr->add_option("--phase", ta.phase, "1: zero summary, 2: teacher-forced");
  tr->add_option("--from", ta.from, "checkpoint to continue from");
  tr->add_option("--config", ta.config, "JSON file with training knobs");
  tr->add_option("--seed", ta.seed, "training seed");
  tr->add_option("--method", ta.method, "diffpf or regressor");
  tr->add_option("--iterations", ta.iterations);
  tr->add_option("--batch", ta.batch);
  tr->add_option("--particles", ta.particles);
  tr->add_option("--diffusion-steps", ta.diffusion_steps);
  tr->add_option("--feature-dim", ta.feature_dim);
  tr->add_option("--lr-start", ta.lr_start);
  tr->add_option("--lr-end", ta.lr_end);

  EvalArgs ea;
  auto* ev = app.add_subcommand("eval", "evaluate a checkpoint on a dataset");
  ev->add_option("--model", ea.model, "checkpoint path")->required();
  ev->add_option("--data", ea.data, "dataset directory")->required();
  ev->add_option("--particles", ea.particles, "particle count");
  ev->add_option("--diffusion-steps", ea.diffusion_steps,
                 "must match the checkpoint");
  ev->add_option("--seeds", ea.seeds, "comma-separated seed list");
  ev->add_option("--metric", ea.metric, "mse, rmse or final-rmse");
  ev->add_option("--report", ea.report, "JSON report path");
  ev->add_option("--export-trajectories", ea.trajectories,
                 "per-step CSV with estimates, truth and particles");

  BenchArgs ba;
  auto* be = app.add_subcommand("benchmark", "compare methods across tasks");
  be->add_option("--tasks", ba.tasks_list, "comma-separated task list")
      ->required();
  be->add_option("--methods", ba.methods, "subset of diffpf,bpf,kf");
  be->add_option("--models", ba.models, "JSON manifest of datasets and checkpoints")
      ->required();
  be->add_option("--seeds", ba.seeds, "comma-separated seed list");
  be->add_option("--particles", ba.particles, "override particle count");
  be->add_option("--report", ba.report, "JSON report path (default stdout)");
  be->add_option("--csv", ba.csv, "flat per-seed CSV mirror");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);  // --help
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }

  try {
    if (gen->parsed()) return cmd_gen_data(ga);
    if (tr->parsed()) return cmd_train(ta, tr);
    if (ev->parsed()) return cmd_eval(ea);
    if (be->parsed()) return cmd_benchmark(ba);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
