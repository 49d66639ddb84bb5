#include <set>

#include "doctest.h"
#include "ifval/config.hpp"

using namespace ifval;

TEST_SUITE_BEGIN("config");

TEST_CASE("parse reads sections, keys and comments") {
  const std::string text = R"(
# experiment definition
[dataset]
kind = blobs
n = 200
k = 4
test_fraction = 0.25

[model]
family = mlp
widths = 5, 10
depths = 1, 3
activation = selu

[arms]
arms = none, weight_decay, bnn
weight_decay = 0.01

[train]
optimizer = adam
lr = 0.002
epochs = 1234
batch_size = 32

[protocol]
selection = top_loss
k = 12
retrain = from_scratch
finetune_epochs = 800
test_point = 7
repetitions = 2
base_seed = 99

[influence]
method = lissa
damping = 0.02
scope = all_params

[output]
dir = out_runs
)";
  const ExperimentConfig cfg = parse_config(text);
  CHECK(cfg.dataset.kind == DatasetKind::blobs);
  CHECK(cfg.dataset.n == 200);
  CHECK(cfg.dataset.k == 4);
  CHECK(cfg.dataset.test_fraction == doctest::Approx(0.25));
  CHECK(cfg.widths == std::vector<std::size_t>{5, 10});
  CHECK(cfg.depths == std::vector<std::size_t>{1, 3});
  CHECK(cfg.activation == Activation::selu);
  CHECK(cfg.arms == std::vector<Arm>{Arm::none, Arm::weight_decay, Arm::bnn});
  CHECK(cfg.weight_decay == doctest::Approx(0.01));
  CHECK(cfg.train.lr == doctest::Approx(0.002));
  CHECK(cfg.train.epochs == 1234);
  CHECK(cfg.train.batch_size == 32);
  CHECK(cfg.protocol.k == 12);
  CHECK(cfg.protocol.retrain == RetrainKind::from_scratch);
  CHECK(cfg.protocol.finetune_epochs == 800);
  CHECK(cfg.protocol.test_point == TestPointKind::explicit_index);
  CHECK(cfg.protocol.test_index == 7);
  CHECK(cfg.protocol.repetitions == 2);
  CHECK(cfg.protocol.base_seed == 99);
  CHECK(cfg.protocol.influence == InfluenceMethod::lissa);
  CHECK(cfg.protocol.damping == doctest::Approx(0.02));
  CHECK(cfg.protocol.scope == HessianScope::all_params);
  CHECK(cfg.output_dir == "out_runs");
}

TEST_CASE("serialize then parse is the identity") {
  ExperimentConfig cfg;
  cfg.dataset.kind = DatasetKind::blobs;
  cfg.dataset.n = 150;
  cfg.dataset.spread = 0.123456789012345;
  cfg.widths = {7, 13};
  cfg.depths = {2};
  cfg.arms = {Arm::weight_decay_swa, Arm::bnn};
  cfg.train.lr = 3.25e-4;
  cfg.protocol.k = 17;
  cfg.protocol.damping = 0.03125;
  cfg.finetune_lr = 2e-3;
  const std::string once = serialize_config(cfg);
  const ExperimentConfig back = parse_config(once);
  CHECK(serialize_config(back) == once);
  CHECK(back.dataset.spread == cfg.dataset.spread);
  CHECK(back.arms == cfg.arms);
  CHECK(back.protocol.k == 17);
}

TEST_CASE("errors name the offending field") {
  SUBCASE("unknown key") {
    try {
      parse_config("[train]\nlearning_rate = 0.1\n");
      FAIL("expected ConfigError");
    } catch (const ConfigError& e) {
      CHECK(e.field == "train.learning_rate");
    }
  }
  SUBCASE("bad value") {
    try {
      parse_config("[train]\nlr = banana\n");
      FAIL("expected ConfigError");
    } catch (const ConfigError& e) {
      CHECK(e.field == "train.lr");
    }
  }
  SUBCASE("unknown section") {
    CHECK_THROWS_AS(parse_config("[nope]\nx = 1\n"), ConfigError);
  }
  SUBCASE("validation: empty widths") {
    ExperimentConfig cfg;
    cfg.widths.clear();
    try {
      cfg.validate();
      FAIL("expected ConfigError");
    } catch (const ConfigError& e) {
      CHECK(e.field == "model.widths");
    }
  }
  SUBCASE("validation: csv without path") {
    ExperimentConfig cfg;
    cfg.dataset.kind = DatasetKind::csv;
    cfg.dataset.path.clear();
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
  }
}

TEST_CASE("sweep covers both axes once, without duplicates") {
  ExperimentConfig cfg;
  cfg.widths = {5, 10, 20};
  cfg.depths = {1, 2, 3};
  cfg.arms = {Arm::weight_decay, Arm::swa};
  const auto cells = sweep_cells(cfg);
  // Per arm: widths at depth 1 (3 cells) + depths 2,3 at width 5 (2 cells).
  CHECK(cells.size() == 10);
  std::set<std::tuple<int, std::size_t, std::size_t>> seen;
  for (const auto& c : cells) {
    CHECK(seen.insert({static_cast<int>(c.arm), c.width, c.depth}).second);
    CHECK((c.depth == 1 || c.width == 5));
  }
  CHECK(cells.front().arm == Arm::weight_decay);
  CHECK(cells.front().width == 5);
  CHECK(cells.front().depth == 1);
}

TEST_CASE("cell_train_config applies the arm semantics") {
  ExperimentConfig cfg;
  cfg.weight_decay = 0.02;
  cfg.train.swa = false;
  SweepCell cell{Arm::none, 5, 1};
  CHECK(cell_train_config(cfg, cell).weight_decay == 0.0);
  CHECK_FALSE(cell_train_config(cfg, cell).swa);
  cell.arm = Arm::weight_decay;
  CHECK(cell_train_config(cfg, cell).weight_decay == doctest::Approx(0.02));
  cell.arm = Arm::swa;
  CHECK(cell_train_config(cfg, cell).weight_decay == 0.0);
  CHECK(cell_train_config(cfg, cell).swa);
  cell.arm = Arm::weight_decay_swa;
  CHECK(cell_train_config(cfg, cell).weight_decay == doctest::Approx(0.02));
  CHECK(cell_train_config(cfg, cell).swa);
  cell.arm = Arm::bnn;
  CHECK(cell_train_config(cfg, cell).weight_decay == 0.0);
  CHECK_FALSE(cell_train_config(cfg, cell).swa);
}

TEST_CASE("cell_model_spec and cell_protocol propagate cell settings") {
  ExperimentConfig cfg;
  cfg.finetune_lr = 5e-4;
  cfg.init_logvar = -5.0;
  const SweepCell cell{Arm::bnn, 10, 2};
  const ModelSpec spec = cell_model_spec(cfg, cell, 4, 3);
  CHECK(spec.family == ModelFamily::bnn);
  CHECK(spec.arch.hidden_width == 10);
  CHECK(spec.arch.hidden_layers == 2);
  CHECK(spec.arch.n_in == 4);
  CHECK(spec.arch.n_out == 3);
  CHECK(spec.init_logvar == doctest::Approx(-5.0));
  const LooProtocol proto = cell_protocol(cfg, cell);
  CHECK(proto.finetune_cfg.lr == doctest::Approx(5e-4));
  CHECK_FALSE(proto.finetune_cfg.swa);
}

TEST_CASE("arm names round-trip") {
  for (Arm a : {Arm::none, Arm::weight_decay, Arm::swa, Arm::weight_decay_swa,
                Arm::bnn}) {
    CHECK(arm_from_string(to_string(a)) == a);
  }
  CHECK(to_string(Arm::weight_decay_swa) == "weight_decay+swa");
  CHECK_THROWS_AS(arm_from_string("dropout"), ConfigError);
}

TEST_SUITE_END();
