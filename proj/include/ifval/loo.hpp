#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include "ifval/bnn.hpp"
#include "ifval/data.hpp"
#include "ifval/hessian.hpp"
#include "ifval/mlp.hpp"
#include "ifval/train.hpp"

namespace ifval {

enum class ModelFamily { mlp, bnn };

std::string to_string(ModelFamily f);
ModelFamily model_family_from_string(const std::string& s);

struct ModelSpec {
  ModelFamily family = ModelFamily::mlp;
  ArchSpec arch;
  double init_logvar = -6.0;  // bnn
  double kl_weight = 0.0;     // bnn; 0 = 1/n_train at build time
};

enum class SelectionKind { top_loss, top_influence };
enum class RetrainKind { from_optimal, from_scratch };
enum class TestPointKind { max_loss, explicit_index };

std::string to_string(SelectionKind s);
std::string to_string(RetrainKind r);

struct LooProtocol {
  SelectionKind selection = SelectionKind::top_loss;
  std::size_t k = 40;
  RetrainKind retrain = RetrainKind::from_optimal;
  std::size_t finetune_epochs = 7500;
  TrainConfig train_cfg;
  TrainConfig finetune_cfg;  // epochs field ignored; finetune_epochs governs
  TestPointKind test_point = TestPointKind::max_loss;
  std::size_t test_index = 0;  // explicit_index only
  std::size_t repetitions = 1;
  std::uint64_t base_seed = 0;

  InfluenceMethod influence = InfluenceMethod::direct_solve;
  double damping = 0.01;
  HessianScope scope = HessianScope::last_layer;
  LissaConfig lissa;
  bool capture_trajectories = true;

  void validate(std::size_t n_train) const;  // k <= n_train, repetitions >= 1
};

struct TrajectorySample {
  std::size_t epoch = 0;
  double test_loss = 0.0;
};

struct LooRecord {
  std::size_t train_index = 0;
  double i_up_loss = 0.0;
  double approx_loss_diff = 0.0;
  double true_loss_diff = 0.0;
  std::vector<TrajectorySample> trajectory;
  bool excluded = false;
  std::string reason;
};

struct ValidationReport {
  std::vector<LooRecord> records;
  double spearman = 0.0;
  double pearson = 0.0;
  double epsilon = 0.0;  // -1/n_train
  ModelFamily family = ModelFamily::mlp;
  ArchSpec arch;
  std::string arm;  // regularization arm label
  std::uint64_t seed = 0;
  std::size_t test_index = 0;
};

// One model of either family plus the dispatch the pipeline needs.
using AnyModel = std::variant<MlpModel, BnnModel>;

AnyModel build_model(const ModelSpec& spec, std::uint64_t seed,
                     std::size_t n_train);
TrainLog train_model(AnyModel& model, const Dataset& train,
                     const TrainConfig& cfg, const LabeledInstance* probe = nullptr);
// Data-term loss of one instance (cross-entropy / NLL, no regularization).
double instance_data_loss(const AnyModel& model, const LabeledInstance& z);
std::size_t pick_test_point(const AnyModel& model, const Dataset& test,
                            TestPointKind kind, std::size_t explicit_index);
std::unique_ptr<ScopedSystem> make_system(const AnyModel& model,
                                          const Dataset& train, double l2,
                                          HessianScope scope);

// Indices of the k largest scores, descending; ties by lowest index.
std::vector<std::size_t> select_points(const Vec& scores, std::size_t k);

// L(z_test, retrained-without-removed) - L(z_test, model), plus the
// per-epoch test-loss trajectory of the retraining.
std::pair<double, std::vector<TrajectorySample>> true_loss_diff(
    const AnyModel& model, const ModelSpec& spec, const Dataset& train,
    std::size_t removed_index, const LabeledInstance& z_test,
    const LooProtocol& proto, std::uint64_t seed);

// One repetition: train, pick test point, approximate vs true diffs.
ValidationReport single_validation_run(const LooProtocol& proto,
                                       const ModelSpec& spec,
                                       const Dataset& train, const Dataset& test,
                                       std::uint64_t seed,
                                       const std::string& arm = "");

// All repetitions; repetition r uses base_seed + r.
std::vector<ValidationReport> validation_run(const LooProtocol& proto,
                                             const ModelSpec& spec,
                                             const Dataset& train,
                                             const Dataset& test,
                                             const std::string& arm = "");

std::string report_to_json(const ValidationReport& report);
void save_report(const ValidationReport& report, const std::string& path);
// One CSV per removal: epoch,test_loss.
void save_trajectories(const ValidationReport& report, const std::string& dir);

struct DerivationRow {
  double epsilon = 0.0;
  double linear_error = 0.0;  // ||delta_exact - delta_predicted||
  double delta_norm = 0.0;
  bool converged = false;
};

struct DerivationReport {
  std::vector<DerivationRow> rows;  // ordered as the input epsilons
  bool decay_ok = false;  // error shrinks >= 3x whenever epsilon halves
};

// Appendix check on a depth-0 softmax model with l2 > 0: exact
// theta(epsilon) by Newton against the linear influence prediction.
DerivationReport derivation_check(const Dataset& train, const LabeledInstance& z,
                                  const std::vector<double>& epsilons, double l2,
                                  std::uint64_t seed = 0);

}  // namespace ifval
