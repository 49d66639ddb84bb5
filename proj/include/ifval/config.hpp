#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "ifval/hessian.hpp"
#include "ifval/loo.hpp"
#include "ifval/train.hpp"

namespace ifval {

struct ConfigError : std::runtime_error {
  ConfigError(const std::string& field, const std::string& message)
      : std::runtime_error("config: [" + field + "] " + message), field(field) {}
  std::string field;
};

enum class DatasetKind { iris, csv, idx, blobs };

struct DatasetSpec {
  DatasetKind kind = DatasetKind::iris;
  std::string path;          // iris / csv
  std::string images;        // idx
  std::string labels;        // idx
  std::size_t limit = 0;     // idx; 0 = all
  std::size_t n = 300;       // blobs
  std::size_t d = 4;
  std::size_t k = 3;
  double spread = 0.3;
  double test_fraction = 0.2;
  bool standardize = true;
};

// Regularization arm: the training-regime variant under comparison.
enum class Arm { none, weight_decay, swa, weight_decay_swa, bnn };

std::string to_string(Arm a);
Arm arm_from_string(const std::string& s);

struct ExperimentConfig {
  DatasetSpec dataset;

  ModelFamily family = ModelFamily::mlp;  // bnn arm overrides per cell
  std::vector<std::size_t> widths = {5, 10, 20, 40};
  std::vector<std::size_t> depths = {1, 2, 3, 4, 5};
  Activation activation = Activation::relu;
  double init_logvar = -6.0;
  double kl_weight = 0.0;  // 0 = 1/n_train

  std::vector<Arm> arms = {Arm::weight_decay};
  double weight_decay = 0.005;

  TrainConfig train;       // per-arm weight_decay/swa applied on top
  LooProtocol protocol;    // train_cfg/finetune_cfg filled per cell
  double finetune_lr = 1e-3;

  std::string output_dir = "runs";

  void validate() const;  // throws ConfigError naming the field
};

// One reproducible run: arm x (width, depth); repetition seeds derive
// from protocol.base_seed + repetition index.
struct SweepCell {
  Arm arm = Arm::weight_decay;
  std::size_t width = 5;
  std::size_t depth = 1;
};

// Width sweep at the first depth plus depth sweep at the first width
// (the two figure axes), deduplicated, in declaration order.
std::vector<SweepCell> sweep_cells(const ExperimentConfig& cfg);

// Model/training settings for one cell, with the arm applied.
ModelSpec cell_model_spec(const ExperimentConfig& cfg, const SweepCell& cell,
                          std::size_t n_in, std::size_t n_out);
TrainConfig cell_train_config(const ExperimentConfig& cfg, const SweepCell& cell);
LooProtocol cell_protocol(const ExperimentConfig& cfg, const SweepCell& cell);

// INI-style sections and key = value lines; '#' comments.
ExperimentConfig parse_config(const std::string& text);
ExperimentConfig load_config(const std::string& path);
std::string serialize_config(const ExperimentConfig& cfg);

}  // namespace ifval
