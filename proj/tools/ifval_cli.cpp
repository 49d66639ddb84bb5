// Configuration-driven experiment runner: trains sweep cells, validates
// influence estimates against leave-one-out retraining, probes Hessian
// spectra, and reduces run artifacts to plot-ready CSV tables.

#include <atomic>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <mutex>
#include <sstream>
#include <thread>

#include "CLI11.hpp"
#include "ifval/checkpoint.hpp"
#include "ifval/config.hpp"
#include "ifval/hessian.hpp"
#include "ifval/loo.hpp"
#include "ifval/stats.hpp"
#include "json.hpp"

namespace fs = std::filesystem;
using namespace ifval;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitDivergence = 3;
constexpr int kExitIncomplete = 4;

struct CliOptions {
  std::string config_path;
  std::string out_dir;
  std::string into_dir;  // write into an existing run directory
  std::string run_dir;   // report
  std::size_t workers = 1;
  std::uint64_t seed = 0;
  bool seed_set = false;
};

std::string cell_tag(const SweepCell& cell) {
  std::string arm = to_string(cell.arm);
  for (auto& ch : arm) {
    if (ch == '+') ch = '-';
  }
  return arm + "_w" + std::to_string(cell.width) + "_d" + std::to_string(cell.depth);
}

// No-clobber run directory: base, base_1, base_2, ...
fs::path fresh_run_dir(const fs::path& base) {
  if (!fs::exists(base)) return base;
  for (int i = 1;; ++i) {
    fs::path candidate = base;
    candidate += "_" + std::to_string(i);
    if (!fs::exists(candidate)) return candidate;
  }
}

// Write-temp-then-rename so concurrent writers never interleave bytes.
void atomic_write(const fs::path& path, const std::string& content) {
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw std::runtime_error("cannot open " + tmp.string());
    out << content;
  }
  fs::rename(tmp, path);
}

std::string fmt(double v) {
  std::ostringstream s;
  s.precision(12);
  s << v;
  return s.str();
}

struct LoadedData {
  Dataset train;
  Dataset test;
};

LoadedData load_experiment_data(const ExperimentConfig& cfg) {
  Dataset full;
  switch (cfg.dataset.kind) {
    case DatasetKind::iris:
      full = load_iris(cfg.dataset.path);
      break;
    case DatasetKind::csv:
      full = load_csv(cfg.dataset.path);
      break;
    case DatasetKind::idx:
      full = load_idx(cfg.dataset.images, cfg.dataset.labels,
                      cfg.dataset.limit ? std::optional(cfg.dataset.limit)
                                        : std::nullopt);
      break;
    case DatasetKind::blobs: {
      RngStream stream(cfg.protocol.base_seed ^ 0x9e3779b97f4a7c15ull);
      full = synth_blobs(cfg.dataset.n, cfg.dataset.d, cfg.dataset.k,
                         cfg.dataset.spread, stream);
      break;
    }
  }
  RngStream split_stream(cfg.protocol.base_seed);
  LoadedData data;
  auto [train, test] = split(full, cfg.dataset.test_fraction, split_stream);
  data.train = std::move(train);
  data.test = std::move(test);
  if (cfg.dataset.standardize) {
    standardize(data.train, {&data.test});
  }
  return data;
}

std::string train_log_csv(const TrainLog& log, double initial_lr) {
  std::ostringstream out;
  out.precision(12);
  const bool probe = !log.probe_loss.empty();
  out << "epoch,loss,lr" << (probe ? ",probe_test_loss" : "") << "\n";
  double lr = initial_lr;
  std::size_t next_event = 0;
  for (std::size_t e = 0; e < log.epoch_loss.size(); ++e) {
    if (next_event < log.lr_events.size() && log.lr_events[next_event].first == e) {
      lr = log.lr_events[next_event].second;
      ++next_event;
    }
    out << (e + 1) << "," << log.epoch_loss[e] << "," << lr;
    if (probe) out << "," << log.probe_loss[e];
    out << "\n";
  }
  return out.str();
}

// Runs fn over [0, jobs) on up to `workers` threads; rethrows the first
// failure. Outputs must be written into pre-sized slots for determinism.
void parallel_for(std::size_t jobs, std::size_t workers,
                  const std::function<void(std::size_t)>& fn) {
  workers = std::max<std::size_t>(1, std::min(workers, jobs));
  if (workers == 1) {
    for (std::size_t j = 0; j < jobs; ++j) fn(j);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mu;
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&]() {
      for (;;) {
        const std::size_t j = next.fetch_add(1);
        if (j >= jobs) return;
        try {
          fn(j);
        } catch (...) {
          std::lock_guard<std::mutex> lock(failure_mu);
          if (!failure) failure = std::current_exception();
          return;
        }
      }
    });
  }
  for (auto& t : pool) t.join();
  if (failure) std::rethrow_exception(failure);
}

ExperimentConfig load_and_override(const CliOptions& opts) {
  ExperimentConfig cfg = load_config(opts.config_path);
  if (!opts.out_dir.empty()) cfg.output_dir = opts.out_dir;
  if (opts.seed_set) cfg.protocol.base_seed = opts.seed;
  return cfg;
}

fs::path prepare_run_dir(const ExperimentConfig& cfg, const CliOptions& opts) {
  const fs::path dir = opts.into_dir.empty()
                           ? fresh_run_dir(fs::path(cfg.output_dir) / "run")
                           : fs::path(opts.into_dir);
  fs::create_directories(dir);
  atomic_write(dir / "config.ini", serialize_config(cfg));
  return dir;
}

struct Job {
  SweepCell cell;
  std::size_t rep = 0;
};

std::vector<Job> make_jobs(const ExperimentConfig& cfg) {
  std::vector<Job> jobs;
  for (const SweepCell& cell : sweep_cells(cfg)) {
    for (std::size_t r = 0; r < cfg.protocol.repetitions; ++r) {
      jobs.push_back({cell, r});
    }
  }
  return jobs;
}

int cmd_train(const CliOptions& opts) {
  const ExperimentConfig cfg = load_and_override(opts);
  const LoadedData data = load_experiment_data(cfg);
  const fs::path dir = prepare_run_dir(cfg, opts);
  fs::create_directories(dir / "checkpoints");
  fs::create_directories(dir / "trainlogs");

  const std::vector<Job> jobs = make_jobs(cfg);
  parallel_for(jobs.size(), opts.workers, [&](std::size_t j) {
    const Job& job = jobs[j];
    const std::uint64_t seed = cfg.protocol.base_seed + job.rep;
    const ModelSpec spec =
        cell_model_spec(cfg, job.cell, data.train.n_features, data.train.n_classes);
    TrainConfig tc = cell_train_config(cfg, job.cell);
    tc.seed = seed;
    AnyModel model = build_model(spec, seed, data.train.size());
    const TrainLog log = train_model(model, data.train, tc);
    const std::string tag = cell_tag(job.cell) + "_rep" + std::to_string(job.rep);
    save_checkpoint(model, (dir / "checkpoints" / (tag + ".bin")).string());
    atomic_write(dir / "trainlogs" / (tag + ".csv"), train_log_csv(log, tc.lr));
  });
  std::cout << "run directory: " << dir.string() << "\n";
  return kExitOk;
}

std::string influence_csv(const ValidationReport& report, const LooProtocol& proto) {
  std::ostringstream out;
  out.precision(12);
  out << "train_index,test_index,i_up_loss,approx_loss_diff,method,epsilon,scope,"
         "residual\n";
  for (const auto& rec : report.records) {
    out << rec.train_index << "," << report.test_index << "," << rec.i_up_loss << ","
        << rec.approx_loss_diff << "," << to_string(proto.influence) << ","
        << report.epsilon << "," << to_string(proto.scope) << ",0\n";
  }
  return out.str();
}

int cmd_validate(const CliOptions& opts) {
  const ExperimentConfig cfg = load_and_override(opts);
  const LoadedData data = load_experiment_data(cfg);
  const fs::path dir = prepare_run_dir(cfg, opts);
  fs::create_directories(dir / "reports");
  fs::create_directories(dir / "influence");

  const std::vector<Job> jobs = make_jobs(cfg);
  std::vector<ValidationReport> reports(jobs.size());
  parallel_for(jobs.size(), opts.workers, [&](std::size_t j) {
    const Job& job = jobs[j];
    const ModelSpec spec =
        cell_model_spec(cfg, job.cell, data.train.n_features, data.train.n_classes);
    const LooProtocol proto = cell_protocol(cfg, job.cell);
    reports[j] = single_validation_run(proto, spec, data.train, data.test,
                                       cfg.protocol.base_seed + job.rep,
                                       to_string(job.cell.arm));
    const std::string tag = cell_tag(job.cell) + "_rep" + std::to_string(job.rep);
    atomic_write(dir / "reports" / (tag + ".json"), report_to_json(reports[j]));
    atomic_write(dir / "influence" / (tag + ".csv"),
                 influence_csv(reports[j], proto));
    if (proto.capture_trajectories) {
      save_trajectories(reports[j], (dir / "trajectories" / tag).string());
    }
  });

  std::ostringstream summary;
  summary.precision(12);
  summary << "arm,width,depth,rep,spearman,pearson\n";
  for (std::size_t j = 0; j < jobs.size(); ++j) {
    summary << to_string(jobs[j].cell.arm) << "," << jobs[j].cell.width << ","
            << jobs[j].cell.depth << "," << jobs[j].rep << ","
            << reports[j].spearman << "," << reports[j].pearson << "\n";
  }
  atomic_write(dir / "summary.csv", summary.str());
  std::cout << "run directory: " << dir.string() << "\n";
  return kExitOk;
}

int cmd_eigen(const CliOptions& opts) {
  const ExperimentConfig cfg = load_and_override(opts);
  const LoadedData data = load_experiment_data(cfg);
  const fs::path dir = prepare_run_dir(cfg, opts);

  const std::vector<Job> jobs = make_jobs(cfg);
  std::vector<std::string> rows(jobs.size());
  parallel_for(jobs.size(), opts.workers, [&](std::size_t j) {
    const Job& job = jobs[j];
    const std::uint64_t seed = cfg.protocol.base_seed + job.rep;
    const ModelSpec spec =
        cell_model_spec(cfg, job.cell, data.train.n_features, data.train.n_classes);
    TrainConfig tc = cell_train_config(cfg, job.cell);
    tc.seed = seed;
    AnyModel model = build_model(spec, seed, data.train.size());
    train_model(model, data.train, tc);
    // Spectral probe of the raw training Hessian: whole network, no damping.
    HessianOperator op;
    op.sys = std::shared_ptr<ScopedSystem>(
        make_system(model, data.train, tc.weight_decay, HessianScope::all_params));
    op.damping = 0.0;
    op.scope = HessianScope::all_params;
    const EigenEstimate est = top_eigenvalue(op, 2000, 1e-7, seed);
    rows[j] = to_string(job.cell.arm) + "," + std::to_string(job.cell.width) + "," +
              std::to_string(job.cell.depth) + "," + std::to_string(job.rep) + "," +
              fmt(est.lambda_max) + "," + (est.converged ? "true" : "false");
  });

  std::ostringstream csv;
  csv << "arm,width,depth,rep,lambda_max,converged\n";
  for (const auto& row : rows) csv << row << "\n";
  atomic_write(dir / "eigen.csv", csv.str());
  std::cout << "run directory: " << dir.string() << "\n";
  return kExitOk;
}

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;
};

CsvTable read_csv(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  CsvTable t;
  std::string line;
  bool first = true;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string> fields;
    std::istringstream ls(line);
    std::string field;
    while (std::getline(ls, field, ',')) fields.push_back(field);
    if (first) {
      t.header = std::move(fields);
      first = false;
    } else {
      t.rows.push_back(std::move(fields));
    }
  }
  return t;
}

// Median plus percentile 95% interval of a group of repetition values.
std::string group_summary_row(const std::string& key, Vec values) {
  std::sort(values.begin(), values.end());
  const double median = values.size() % 2
                            ? values[values.size() / 2]
                            : 0.5 * (values[values.size() / 2 - 1] +
                                     values[values.size() / 2]);
  double lo = values.front(), hi = values.back();
  if (values.size() >= 2) {
    const Interval iv = interval95(values, IntervalMethod::percentile);
    lo = iv.low;
    hi = iv.high;
  }
  return key + "," + fmt(median) + "," + fmt(lo) + "," + fmt(hi);
}

int cmd_report(const CliOptions& opts) {
  const fs::path dir = opts.run_dir;
  std::vector<std::string> missing;
  if (!fs::exists(dir / "summary.csv")) missing.push_back("summary.csv");
  if (!fs::exists(dir / "reports") || fs::is_empty(dir / "reports")) {
    missing.push_back("reports/");
  }
  if (!missing.empty()) {
    std::cerr << "incomplete run, missing:";
    for (const auto& m : missing) std::cerr << " " << m;
    std::cerr << "\n";
    return kExitIncomplete;
  }

  // fig1: Spearman vs model size per arm; fig3: the same for lambda_max.
  auto reduce = [&](const CsvTable& t, std::size_t value_col,
                    const std::string& value_name) {
    std::map<std::string, Vec> groups;  // key: arm,width,depth
    std::vector<std::string> order;
    for (const auto& row : t.rows) {
      const std::string key = row[0] + "," + row[1] + "," + row[2];
      if (!groups.count(key)) order.push_back(key);
      groups[key].push_back(std::stod(row[value_col]));
    }
    std::ostringstream out;
    out << "arm,width,depth," << value_name << "_median,lo95,hi95\n";
    for (const auto& key : order) out << group_summary_row(key, groups[key]) << "\n";
    return out.str();
  };
  const CsvTable summary = read_csv(dir / "summary.csv");
  atomic_write(dir / "fig1.csv", reduce(summary, 4, "spearman"));
  // The spectral figure needs the (optional) eigen pass.
  if (fs::exists(dir / "eigen.csv")) {
    const CsvTable eigen = read_csv(dir / "eigen.csv");
    atomic_write(dir / "fig3.csv", reduce(eigen, 4, "lambda_max"));
  }

  // ANOVA across widths (at the first depth) and depths per arm.
  {
    std::map<std::string, std::map<std::string, Vec>> by_arm_width, by_arm_depth;
    std::string first_depth, first_width;
    for (const auto& row : summary.rows) {
      if (first_depth.empty()) {
        first_depth = row[2];
        first_width = row[1];
      }
      const double v = std::stod(row[4]);
      if (row[2] == first_depth) by_arm_width[row[0]][row[1]].push_back(v);
      if (row[1] == first_width) by_arm_depth[row[0]][row[2]].push_back(v);
    }
    std::ostringstream out;
    out << "arm,axis,f_stat,p_value,df_between,df_within,degenerate\n";
    auto emit = [&](const std::string& axis, auto& by_arm) {
      for (auto& [arm, groups] : by_arm) {
        std::vector<Vec> g;
        for (auto& [_, v] : groups) {
          if (v.size() >= 2) g.push_back(v);
        }
        if (g.size() < 2) continue;
        const AnovaResult a = anova_oneway(g);
        out << arm << "," << axis << "," << fmt(a.f_stat) << "," << fmt(a.p_value)
            << "," << a.df_between << "," << a.df_within << ","
            << (a.degenerate ? "true" : "false") << "\n";
      }
    };
    emit("width", by_arm_width);
    emit("depth", by_arm_depth);
    atomic_write(dir / "anova.csv", out.str());
  }

  // fig4/fig5 come from the first report (the figures show single runs).
  std::vector<fs::path> report_files;
  for (const auto& entry : fs::directory_iterator(dir / "reports")) {
    if (entry.path().extension() == ".json") report_files.push_back(entry.path());
  }
  std::sort(report_files.begin(), report_files.end());
  std::ifstream rin(report_files.front());
  nlohmann::json rep = nlohmann::json::parse(rin);

  struct Fig4Row {
    double approx, truth;
    std::size_t train_index;
  };
  std::vector<Fig4Row> fig4;
  for (const auto& rec : rep["records"]) {
    if (rec["excluded"].get<bool>()) continue;
    fig4.push_back({rec["approx_loss_diff"].get<double>(),
                    rec["true_loss_diff"].get<double>(),
                    rec["train_index"].get<std::size_t>()});
  }
  std::sort(fig4.begin(), fig4.end(), [](const Fig4Row& a, const Fig4Row& b) {
    return std::abs(a.approx) > std::abs(b.approx);
  });
  std::ostringstream f4;
  f4 << "rank,train_index,approx_diff,true_diff\n";
  for (std::size_t i = 0; i < fig4.size(); ++i) {
    f4 << (i + 1) << "," << fig4[i].train_index << "," << fmt(fig4[i].approx) << ","
       << fmt(fig4[i].truth) << "\n";
  }
  atomic_write(dir / "fig4.csv", f4.str());

  std::ostringstream f5;
  f5 << "train_index,epoch,test_loss\n";
  const std::string first_tag = report_files.front().stem().string();
  const fs::path traj_dir = dir / "trajectories" / first_tag;
  if (fs::exists(traj_dir)) {
    std::vector<fs::path> traj_files;
    for (const auto& entry : fs::directory_iterator(traj_dir)) {
      traj_files.push_back(entry.path());
    }
    std::sort(traj_files.begin(), traj_files.end());
    for (const auto& path : traj_files) {
      const std::string stem = path.stem().string();
      const std::string index = stem.substr(stem.rfind('_') + 1);
      const CsvTable t = read_csv(path);
      for (const auto& row : t.rows) {
        f5 << index << "," << row[0] << "," << row[1] << "\n";
      }
    }
  }
  atomic_write(dir / "fig5.csv", f5.str());
  std::cout << "report written to " << dir.string() << "\n";
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"influence-function validation experiments"};
  app.require_subcommand(1);
  CliOptions opts;

  auto add_common = [&](CLI::App* sub, bool needs_config) {
    if (needs_config) {
      sub->add_option("--config", opts.config_path, "experiment config path")
          ->required();
    }
    sub->add_option("--out", opts.out_dir, "output directory override");
    sub->add_option("--into", opts.into_dir, "existing run directory to write into");
    sub->add_option("--workers", opts.workers, "worker thread count");
    sub->add_option("--seed", opts.seed, "base seed override")
        ->each([&](const std::string&) { opts.seed_set = true; });
  };
  add_common(app.add_subcommand("train", "train all sweep cells"), true);
  add_common(app.add_subcommand("validate", "influence vs leave-one-out"), true);
  add_common(app.add_subcommand("eigen", "top Hessian eigenvalues"), true);
  CLI::App* report = app.add_subcommand("report", "reduce a run to figure CSVs");
  report->add_option("run_dir", opts.run_dir, "run directory")->required();

  CLI11_PARSE(app, argc, argv);
  const std::string sub = app.get_subcommands().front()->get_name();
  try {
    if (sub == "train") return cmd_train(opts);
    if (sub == "validate") return cmd_validate(opts);
    if (sub == "eigen") return cmd_eigen(opts);
    return cmd_report(opts);
  } catch (const ConfigError& e) {
    std::cerr << e.what() << "\n";
    return kExitConfig;
  } catch (const DivergenceError& e) {
    std::cerr << e.what() << "\n";
    return kExitDivergence;
  } catch (const std::exception& e) {
    // Dataset problems surface before any training: treat as config errors.
    std::cerr << e.what() << "\n";
    return kExitConfig;
  }
}
