#pragma once

#include <cstdint>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "ifval/bnn.hpp"
#include "ifval/data.hpp"
#include "ifval/linalg.hpp"
#include "ifval/mlp.hpp"

namespace ifval {

enum class OptimizerKind { gd, adam };

struct TrainConfig {
  OptimizerKind optimizer = OptimizerKind::adam;
  double lr = 1e-3;
  double weight_decay = 0.0;
  std::size_t epochs = 0;
  std::size_t batch_size = 0;  // 0 = full batch
  std::size_t plateau_patience = 100;
  double plateau_factor = 0.1;
  double min_lr = 1e-7;
  bool swa = false;
  // Snapshot accumulation start; default (max) means 75% of epochs.
  std::size_t swa_start_epoch = std::numeric_limits<std::size_t>::max();
  std::uint64_t seed = 0;

  void validate() const;
};

struct TrainLog {
  Vec epoch_loss;
  std::vector<std::pair<std::size_t, double>> lr_events;
  std::size_t final_epoch = 0;
  double wall_time_sec = 0.0;
  Vec probe_loss;  // per-epoch test-point loss when a probe is supplied
};

struct DivergenceError : std::runtime_error {
  DivergenceError(std::size_t e)
      : std::runtime_error("diverged at epoch " + std::to_string(e)), epoch(e) {}
  std::size_t epoch;
};

struct SwaState {
  Vec mean;
  std::size_t count = 0;
};

// Running mean update; layouts must match once initialized.
void swa_update(SwaState& state, const Vec& params);

struct AdamState {
  Vec m;
  Vec v;
  std::size_t t = 0;
};

// Standard Adam with beta1=0.9, beta2=0.999, eps=1e-8, bias correction.
void adam_step(Vec& params, const Vec& grad, AdamState& state, double lr);

// Anything the generic loop can optimize: flat parameters plus an
// objective over instances.
class TrainableObjective {
 public:
  virtual ~TrainableObjective() = default;
  virtual std::size_t dim() const = 0;
  virtual Vec get_params() const = 0;
  virtual void set_params(const Vec& p) = 0;
  virtual double value(std::span<const LabeledInstance> batch) const = 0;
  virtual Vec gradient(std::span<const LabeledInstance> batch) const = 0;
  // Data-term loss of one instance (no regularization), for probes.
  virtual double instance_loss(const LabeledInstance& z) const = 0;
};

// MLP under mean cross-entropy + (l2/2)||theta||^2.
class MlpObjective final : public TrainableObjective {
 public:
  MlpObjective(MlpModel& m, double l2) : model_(m), l2_(l2) {}
  std::size_t dim() const override { return model_.layout.size; }
  Vec get_params() const override { return model_.params; }
  void set_params(const Vec& p) override { model_.params = p; }
  double value(std::span<const LabeledInstance> b) const override {
    return loss(model_, b, l2_);
  }
  Vec gradient(std::span<const LabeledInstance> b) const override {
    return grad(model_, b, l2_);
  }
  double instance_loss(const LabeledInstance& z) const override {
    return loss(model_, std::span<const LabeledInstance>(&z, 1), 0.0);
  }

 private:
  MlpModel& model_;
  double l2_;
};

// BNN under the ELBO objective.
class BnnObjective final : public TrainableObjective {
 public:
  explicit BnnObjective(BnnModel& m) : model_(m) {}
  std::size_t dim() const override { return model_.value_count(); }
  Vec get_params() const override { return bnn_flatten(model_); }
  void set_params(const Vec& p) override { bnn_unflatten(model_, p); }
  double value(std::span<const LabeledInstance> b) const override {
    return elbo_loss(model_, b);
  }
  Vec gradient(std::span<const LabeledInstance> b) const override {
    return bnn_grad(model_, b);
  }
  double instance_loss(const LabeledInstance& z) const override {
    return bnn_nll(model_, std::span<const LabeledInstance>(&z, 1));
  }

 private:
  BnnModel& model_;
};

// Runs cfg.epochs optimizer steps (one per epoch in full-batch mode),
// plateau scheduling on training loss, optional SWA finalization.
TrainLog train(TrainableObjective& obj, const Dataset& train_set,
               const TrainConfig& cfg, const LabeledInstance* probe = nullptr);

// Fine-tunes only the final affine layer against the reduced training
// set; the penultimate features are frozen so they are cached once.
TrainLog finetune_last_layer(MlpModel& model, const Dataset& reduced_train,
                             std::size_t epochs, const TrainConfig& cfg,
                             const LabeledInstance* probe = nullptr);

// Same contract for the BNN: only the final variational layer moves,
// the cached quantities are the input moments feeding it.
TrainLog finetune_last_layer(BnnModel& model, const Dataset& reduced_train,
                             std::size_t epochs, const TrainConfig& cfg,
                             const LabeledInstance* probe = nullptr);

}  // namespace ifval
