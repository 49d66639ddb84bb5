#include "ifval/loo.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <stdexcept>

#include "ifval/stats.hpp"
#include "json.hpp"

namespace ifval {

std::string to_string(ModelFamily f) {
  return f == ModelFamily::mlp ? "mlp" : "bnn";
}

ModelFamily model_family_from_string(const std::string& s) {
  if (s == "mlp") return ModelFamily::mlp;
  if (s == "bnn") return ModelFamily::bnn;
  throw std::invalid_argument("unknown model family: " + s);
}

std::string to_string(SelectionKind s) {
  return s == SelectionKind::top_loss ? "top_loss" : "top_influence";
}

std::string to_string(RetrainKind r) {
  return r == RetrainKind::from_optimal ? "from_optimal" : "from_scratch";
}

void LooProtocol::validate(std::size_t n_train) const {
  if (k > n_train) {
    throw std::invalid_argument("LooProtocol: k = " + std::to_string(k) +
                                " exceeds n_train = " + std::to_string(n_train));
  }
  if (repetitions < 1) throw std::invalid_argument("LooProtocol: repetitions >= 1");
  train_cfg.validate();
  finetune_cfg.validate();
}

AnyModel build_model(const ModelSpec& spec, std::uint64_t seed,
                     std::size_t n_train) {
  RngStream stream(seed);
  if (spec.family == ModelFamily::mlp) {
    return build_mlp(spec.arch, stream);
  }
  BnnModel m = build_bnn(spec.arch, spec.init_logvar, stream);
  m.kl_weight = spec.kl_weight > 0
                    ? spec.kl_weight
                    : 1.0 / static_cast<double>(std::max<std::size_t>(1, n_train));
  return m;
}

TrainLog train_model(AnyModel& model, const Dataset& train_set,
                     const TrainConfig& cfg, const LabeledInstance* probe) {
  if (auto* mlp = std::get_if<MlpModel>(&model)) {
    MlpObjective obj(*mlp, cfg.weight_decay);
    return train(obj, train_set, cfg, probe);
  }
  BnnObjective obj(std::get<BnnModel>(model));
  return train(obj, train_set, cfg, probe);
}

double instance_data_loss(const AnyModel& model, const LabeledInstance& z) {
  const std::span<const LabeledInstance> one(&z, 1);
  if (auto* mlp = std::get_if<MlpModel>(&model)) return loss(*mlp, one, 0.0);
  return bnn_nll(std::get<BnnModel>(model), one);
}

std::size_t pick_test_point(const AnyModel& model, const Dataset& test,
                            TestPointKind kind, std::size_t explicit_index) {
  if (test.instances.empty()) throw std::invalid_argument("pick_test_point: empty set");
  if (kind == TestPointKind::explicit_index) {
    if (explicit_index >= test.size()) {
      throw std::invalid_argument("pick_test_point: index out of range");
    }
    return explicit_index;
  }
  std::size_t best = 0;
  double best_loss = instance_data_loss(model, test.instances[0]);
  for (std::size_t i = 1; i < test.size(); ++i) {
    const double l = instance_data_loss(model, test.instances[i]);
    if (l > best_loss) {
      best_loss = l;
      best = i;
    }
  }
  return best;
}

std::unique_ptr<ScopedSystem> make_system(const AnyModel& model,
                                          const Dataset& train_set, double l2,
                                          HessianScope scope) {
  if (auto* mlp = std::get_if<MlpModel>(&model)) {
    return make_mlp_system(*mlp, train_set, l2, scope,
                           HvpMethod::analytic_double_backward);
  }
  const auto& bnn = std::get<BnnModel>(model);
  return scope == HessianScope::last_layer ? make_bnn_system(bnn, train_set)
                                           : make_bnn_full_system(bnn, train_set);
}

std::vector<std::size_t> select_points(const Vec& scores, std::size_t k) {
  if (k > scores.size()) {
    throw std::invalid_argument("select_points: k exceeds candidate count");
  }
  std::vector<std::size_t> idx(scores.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
    return scores[a] > scores[b];
  });
  idx.resize(k);
  return idx;
}

namespace {

Dataset without_instance(const Dataset& ds, std::size_t removed) {
  Dataset out;
  out.n_features = ds.n_features;
  out.n_classes = ds.n_classes;
  out.name = ds.name;
  out.instances.reserve(ds.size() - 1);
  for (std::size_t i = 0; i < ds.size(); ++i) {
    if (i != removed) out.instances.push_back(ds.instances[i]);
  }
  return out;
}

std::vector<TrajectorySample> to_trajectory(const Vec& probe_loss) {
  std::vector<TrajectorySample> t(probe_loss.size());
  for (std::size_t e = 0; e < probe_loss.size(); ++e) {
    t[e] = {e + 1, probe_loss[e]};
  }
  return t;
}

}  // namespace

std::pair<double, std::vector<TrajectorySample>> true_loss_diff(
    const AnyModel& model, const ModelSpec& spec, const Dataset& train_set,
    std::size_t removed_index, const LabeledInstance& z_test,
    const LooProtocol& proto, std::uint64_t seed) {
  if (removed_index >= train_set.size()) {
    throw std::invalid_argument("true_loss_diff: removed_index out of range");
  }
  const double base = instance_data_loss(model, z_test);
  const Dataset reduced = without_instance(train_set, removed_index);

  TrainLog log;
  AnyModel retrained = model;
  if (proto.retrain == RetrainKind::from_optimal) {
    TrainConfig cfg = proto.finetune_cfg;
    cfg.seed = seed;
    if (auto* mlp = std::get_if<MlpModel>(&retrained)) {
      log = finetune_last_layer(*mlp, reduced, proto.finetune_epochs, cfg, &z_test);
    } else {
      log = finetune_last_layer(std::get<BnnModel>(retrained), reduced,
                                proto.finetune_epochs, cfg, &z_test);
    }
  } else {
    // Same init seed as the original run: the removal is the only change.
    retrained = build_model(spec, seed, train_set.size());
    TrainConfig cfg = proto.train_cfg;
    cfg.seed = seed;
    log = train_model(retrained, reduced, cfg, &z_test);
  }
  const double after = instance_data_loss(retrained, z_test);
  return {after - base, to_trajectory(log.probe_loss)};
}

ValidationReport single_validation_run(const LooProtocol& proto,
                                       const ModelSpec& spec,
                                       const Dataset& train_set,
                                       const Dataset& test_set,
                                       std::uint64_t seed,
                                       const std::string& arm) {
  proto.validate(train_set.size());
  AnyModel model = build_model(spec, seed, train_set.size());
  TrainConfig cfg = proto.train_cfg;
  cfg.seed = seed;
  train_model(model, train_set, cfg);

  ValidationReport report;
  report.family = spec.family;
  report.arch = spec.arch;
  report.arm = arm;
  report.seed = seed;
  report.epsilon = -1.0 / static_cast<double>(train_set.size());
  report.test_index =
      pick_test_point(model, test_set, proto.test_point, proto.test_index);
  const LabeledInstance& z_test = test_set.instances[report.test_index];

  HessianOperator op;
  op.sys = std::shared_ptr<ScopedSystem>(
      make_system(model, train_set, cfg.weight_decay, proto.scope));
  op.damping = proto.damping;
  op.scope = proto.scope;
  InfluenceCalculator calc(op, proto.influence, proto.lissa, seed);
  const std::vector<InfluenceRecord> influences =
      calc.influence_all(train_set, z_test, report.test_index);

  Vec scores(train_set.size());
  for (std::size_t i = 0; i < train_set.size(); ++i) {
    scores[i] = proto.selection == SelectionKind::top_loss
                    ? instance_data_loss(model, train_set.instances[i])
                    : std::abs(influences[i].i_up_loss);
  }
  const std::vector<std::size_t> selected = select_points(scores, proto.k);

  std::size_t succeeded = 0;
  for (std::size_t idx : selected) {
    LooRecord rec;
    rec.train_index = idx;
    rec.i_up_loss = influences[idx].i_up_loss;
    rec.approx_loss_diff = influences[idx].approx_loss_diff;
    try {
      auto [delta, traj] =
          true_loss_diff(model, spec, train_set, idx, z_test, proto, seed);
      rec.true_loss_diff = delta;
      if (proto.capture_trajectories) rec.trajectory = std::move(traj);
      ++succeeded;
    } catch (const DivergenceError& e) {
      rec.excluded = true;
      rec.reason = e.what();
    }
    report.records.push_back(std::move(rec));
  }
  if (10 * succeeded < 9 * selected.size()) {
    throw std::runtime_error(
        "validation_run: fewer than 90% of removal retrainings succeeded (" +
        std::to_string(succeeded) + "/" + std::to_string(selected.size()) + ")");
  }

  Vec approx, truth;
  for (const auto& rec : report.records) {
    if (rec.excluded) continue;
    approx.push_back(rec.approx_loss_diff);
    truth.push_back(rec.true_loss_diff);
  }
  report.spearman = spearman(approx, truth);
  report.pearson = pearson(approx, truth);
  return report;
}

std::vector<ValidationReport> validation_run(const LooProtocol& proto,
                                             const ModelSpec& spec,
                                             const Dataset& train_set,
                                             const Dataset& test_set,
                                             const std::string& arm) {
  std::vector<ValidationReport> reports;
  reports.reserve(proto.repetitions);
  for (std::size_t r = 0; r < proto.repetitions; ++r) {
    reports.push_back(single_validation_run(proto, spec, train_set, test_set,
                                            proto.base_seed + r, arm));
  }
  return reports;
}

std::string report_to_json(const ValidationReport& report) {
  nlohmann::json j;
  j["family"] = to_string(report.family);
  j["arch"] = {{"n_in", report.arch.n_in},
               {"hidden_layers", report.arch.hidden_layers},
               {"hidden_width", report.arch.hidden_width},
               {"n_out", report.arch.n_out},
               {"activation", to_string(report.arch.activation)}};
  j["arm"] = report.arm;
  j["seed"] = report.seed;
  j["test_index"] = report.test_index;
  j["epsilon"] = report.epsilon;
  j["spearman"] = report.spearman;
  j["pearson"] = report.pearson;
  j["records"] = nlohmann::json::array();
  for (const auto& rec : report.records) {
    nlohmann::json r;
    r["train_index"] = rec.train_index;
    r["i_up_loss"] = rec.i_up_loss;
    r["approx_loss_diff"] = rec.approx_loss_diff;
    r["true_loss_diff"] = rec.true_loss_diff;
    r["excluded"] = rec.excluded;
    if (rec.excluded) r["reason"] = rec.reason;
    j["records"].push_back(std::move(r));
  }
  return j.dump(2);
}

void save_report(const ValidationReport& report, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("save_report: cannot open " + path);
  out << report_to_json(report) << "\n";
}

void save_trajectories(const ValidationReport& report, const std::string& dir) {
  std::filesystem::create_directories(dir);
  for (const auto& rec : report.records) {
    if (rec.trajectory.empty()) continue;
    const std::string path =
        dir + "/trajectory_" + std::to_string(rec.train_index) + ".csv";
    std::ofstream out(path);
    if (!out) throw std::runtime_error("save_trajectories: cannot open " + path);
    out << "epoch,test_loss\n";
    for (const auto& s : rec.trajectory) out << s.epoch << "," << s.test_loss << "\n";
  }
}

namespace {

// Dense Hessian of mean-CE(train, l2) + eps * CE(z) at the current params.
DenseMatrix mixed_hessian(const MlpModel& m, const Dataset& train_set,
                          double l2, const LabeledInstance& z, double eps) {
  const std::size_t d = m.layout.size;
  const std::span<const LabeledInstance> all(train_set.instances);
  const std::span<const LabeledInstance> one(&z, 1);
  DenseMatrix h(d, d);
  Vec e(d, 0.0);
  for (std::size_t j = 0; j < d; ++j) {
    e[j] = 1.0;
    Vec col = hvp_full(m, all, l2, e);
    if (eps != 0.0) {
      const Vec cz = hvp_full(m, one, 0.0, e);
      axpy(eps, cz, col);
    }
    for (std::size_t i = 0; i < d; ++i) h.at(i, j) = col[i];
    e[j] = 0.0;
  }
  return h;
}

// Newton on mean-CE(train, l2) + eps * CE(z); returns ||grad|| reached.
double newton_minimize(MlpModel& m, const Dataset& train_set, double l2,
                       const LabeledInstance& z, double eps) {
  const std::span<const LabeledInstance> all(train_set.instances);
  const std::span<const LabeledInstance> one(&z, 1);
  double gnorm = 0.0;
  for (int it = 0; it < 200; ++it) {
    Vec g = grad(m, all, l2);
    if (eps != 0.0) {
      const Vec gz = grad(m, one, 0.0);
      axpy(eps, gz, g);
    }
    gnorm = norm2(g);
    if (gnorm < 1e-12) break;
    const DenseMatrix h = mixed_hessian(m, train_set, l2, z, eps);
    const Vec step = solve_spd(h, g, 1e-12);
    axpy(-1.0, step, m.params);
  }
  return gnorm;
}

}  // namespace

DerivationReport derivation_check(const Dataset& train_set,
                                  const LabeledInstance& z,
                                  const std::vector<double>& epsilons, double l2,
                                  std::uint64_t seed) {
  if (!(l2 > 0)) throw std::invalid_argument("derivation_check: l2 must be > 0");
  ArchSpec arch;
  arch.n_in = train_set.n_features;
  arch.hidden_layers = 0;
  arch.hidden_width = 0;
  arch.n_out = train_set.n_classes;
  RngStream stream(seed);
  MlpModel base = build_mlp(arch, stream);
  if (newton_minimize(base, train_set, l2, z, 0.0) >= 1e-10) {
    throw std::runtime_error("derivation_check: base optimization did not converge");
  }

  const DenseMatrix h = mixed_hessian(base, train_set, l2, z, 0.0);
  const std::span<const LabeledInstance> one(&z, 1);
  const Vec gz = grad(base, one, 0.0);
  Vec unit_pred = solve_spd(h, gz, 0.0);
  scal(-1.0, unit_pred);  // delta(eps) ~ eps * unit_pred

  DerivationReport report;
  for (double eps : epsilons) {
    DerivationRow row;
    row.epsilon = eps;
    if (eps == 0.0) {
      row.converged = true;
      report.rows.push_back(row);
      continue;
    }
    MlpModel perturbed = base;
    row.converged = newton_minimize(perturbed, train_set, l2, z, eps) < 1e-10;
    Vec delta = perturbed.params;
    axpy(-1.0, base.params, delta);
    row.delta_norm = norm2(delta);
    Vec err = delta;
    axpy(-eps, unit_pred, err);
    row.linear_error = norm2(err);
    report.rows.push_back(row);
  }

  // O(eps^2) decay: error shrinks >= 3x whenever |eps| halves.
  report.decay_ok = true;
  for (std::size_t i = 0; i < report.rows.size(); ++i) {
    for (std::size_t j = 0; j < report.rows.size(); ++j) {
      const double ei = std::abs(report.rows[i].epsilon);
      const double ej = std::abs(report.rows[j].epsilon);
      if (ei == 0.0 || ej == 0.0) continue;
      if (std::abs(ei - 2.0 * ej) < 1e-12 * ei) {
        if (!(report.rows[i].linear_error >= 3.0 * report.rows[j].linear_error)) {
          report.decay_ok = false;
        }
      }
    }
  }
  return report;
}

}  // namespace ifval
