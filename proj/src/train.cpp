#include "ifval/train.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>

#include "ifval/rng.hpp"

namespace ifval {

void TrainConfig::validate() const {
  if (lr < 0) throw std::invalid_argument("TrainConfig: lr must be >= 0");
  if (!(plateau_factor > 0 && plateau_factor < 1)) {
    throw std::invalid_argument("TrainConfig: plateau_factor must be in (0,1)");
  }
}

void swa_update(SwaState& state, const Vec& params) {
  if (state.count == 0) {
    state.mean = params;
    state.count = 1;
    return;
  }
  if (state.mean.size() != params.size()) {
    throw std::invalid_argument("swa_update: parameter layout mismatch");
  }
  ++state.count;
  const double inv = 1.0 / static_cast<double>(state.count);
  for (std::size_t i = 0; i < params.size(); ++i) {
    state.mean[i] += (params[i] - state.mean[i]) * inv;
  }
}

void adam_step(Vec& params, const Vec& grad, AdamState& state, double lr) {
  if (grad.size() != params.size()) {
    throw std::invalid_argument("adam_step: shape mismatch");
  }
  constexpr double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
  if (state.m.empty()) {
    state.m.assign(params.size(), 0.0);
    state.v.assign(params.size(), 0.0);
    state.t = 0;
  }
  ++state.t;
  const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(state.t));
  const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(state.t));
  for (std::size_t i = 0; i < params.size(); ++i) {
    state.m[i] = beta1 * state.m[i] + (1.0 - beta1) * grad[i];
    state.v[i] = beta2 * state.v[i] + (1.0 - beta2) * grad[i] * grad[i];
    const double mhat = state.m[i] / bc1;
    const double vhat = state.v[i] / bc2;
    params[i] -= lr * mhat / (std::sqrt(vhat) + eps);
  }
}

namespace {

// Shared epoch loop: step() performs one epoch of updates given lr and
// returns nothing; value() evaluates the scheduled (training) loss.
template <typename StepFn, typename ValueFn, typename SnapshotFn>
TrainLog run_epochs(std::size_t epochs, const TrainConfig& cfg, StepFn step,
                    ValueFn value, SnapshotFn snapshot) {
  const auto t0 = std::chrono::steady_clock::now();
  TrainLog log;
  log.epoch_loss.reserve(epochs);
  double lr = cfg.lr;
  double best = std::numeric_limits<double>::infinity();
  std::size_t stale = 0;
  const std::size_t swa_start =
      cfg.swa_start_epoch == std::numeric_limits<std::size_t>::max()
          ? (epochs * 3) / 4
          : cfg.swa_start_epoch;
  for (std::size_t e = 0; e < epochs; ++e) {
    step(lr);
    const double l = value();
    if (!std::isfinite(l)) throw DivergenceError(e);
    log.epoch_loss.push_back(l);
    if (cfg.swa && e >= swa_start) snapshot();
    if (l < best - 1e-12) {
      best = l;
      stale = 0;
    } else if (++stale > cfg.plateau_patience) {
      const double next = std::max(lr * cfg.plateau_factor, cfg.min_lr);
      if (next < lr) {
        lr = next;
        log.lr_events.emplace_back(e, lr);
      }
      stale = 0;
    }
    log.final_epoch = e + 1;
  }
  log.wall_time_sec =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return log;
}

}  // namespace

TrainLog train(TrainableObjective& obj, const Dataset& train_set,
               const TrainConfig& cfg, const LabeledInstance* probe) {
  cfg.validate();
  if (train_set.instances.empty()) throw std::invalid_argument("train: empty set");
  std::span<const LabeledInstance> all(train_set.instances);
  Vec params = obj.get_params();
  AdamState adam;
  SwaState swa;
  RngStream stream(cfg.seed);
  std::vector<std::size_t> order(train_set.size());
  std::iota(order.begin(), order.end(), 0);
  std::vector<LabeledInstance> batch;

  auto apply = [&](const Vec& g, double lr) {
    if (cfg.optimizer == OptimizerKind::adam) {
      adam_step(params, g, adam, lr);
    } else {
      axpy(-lr, g, params);
    }
    obj.set_params(params);
  };
  TrainLog probe_log;
  auto step = [&](double lr) {
    if (cfg.batch_size == 0 || cfg.batch_size >= train_set.size()) {
      apply(obj.gradient(all), lr);
    } else {
      stream.shuffle(order);
      for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
        const std::size_t end = std::min(order.size(), start + cfg.batch_size);
        batch.clear();
        for (std::size_t i = start; i < end; ++i) {
          batch.push_back(train_set.instances[order[i]]);
        }
        apply(obj.gradient(batch), lr);
      }
    }
    if (probe) probe_log.probe_loss.push_back(obj.instance_loss(*probe));
  };
  auto value = [&]() { return obj.value(all); };
  auto snapshot = [&]() { swa_update(swa, params); };

  TrainLog log = run_epochs(cfg.epochs, cfg, step, value, snapshot);
  log.probe_loss = std::move(probe_log.probe_loss);
  if (cfg.swa && swa.count > 0) {
    params = swa.mean;
    obj.set_params(params);
  }
  return log;
}

TrainLog finetune_last_layer(MlpModel& model, const Dataset& reduced_train,
                             std::size_t epochs, const TrainConfig& cfg,
                             const LabeledInstance* probe) {
  cfg.validate();
  const auto& lay = model.layout;
  const auto& head = lay.layers.back();
  const std::size_t n = reduced_train.size();
  if (n == 0) throw std::invalid_argument("finetune_last_layer: empty set");

  // Frozen penultimate features; the head is a softmax regression on them.
  std::vector<Vec> feats(n);
  for (std::size_t i = 0; i < n; ++i) {
    feats[i] = hidden_features(model, reduced_train.instances[i].features);
  }
  Vec probe_feat;
  if (probe) probe_feat = hidden_features(model, probe->features);

  Vec w(model.params.begin() + lay.last_off,
        model.params.begin() + lay.last_off + lay.last_len);
  const double l2 = cfg.weight_decay;
  AdamState adam;

  auto head_logits = [&](const Vec& theta, const Vec& f) {
    Vec logits(head.out);
    for (std::size_t o = 0; o < head.out; ++o) {
      double acc = theta[head.in * head.out + o];  // bias block follows weights
      const double* wo = &theta[o * head.in];
      for (std::size_t i = 0; i < head.in; ++i) acc += wo[i] * f[i];
      logits[o] = acc;
    }
    return logits;
  };
  auto objective = [&]() {
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const Vec logits = head_logits(w, feats[i]);
      total += log_sum_exp(logits) - logits[reduced_train.instances[i].label];
    }
    total /= static_cast<double>(n);
    if (l2 > 0) total += 0.5 * l2 * dot(w, w);
    return total;
  };
  auto gradient = [&]() {
    Vec g(w.size(), 0.0);
    const double inv = 1.0 / static_cast<double>(n);
    for (std::size_t i = 0; i < n; ++i) {
      Vec p = softmax(head_logits(w, feats[i]));
      p[reduced_train.instances[i].label] -= 1.0;
      for (std::size_t o = 0; o < head.out; ++o) {
        const double d = inv * p[o];
        double* gw = &g[o * head.in];
        for (std::size_t k = 0; k < head.in; ++k) gw[k] += d * feats[i][k];
        g[head.in * head.out + o] += d;
      }
    }
    if (l2 > 0) axpy(l2, w, g);
    return g;
  };

  TrainLog probe_log;
  auto step = [&](double lr) {
    const Vec g = gradient();
    if (cfg.optimizer == OptimizerKind::adam) {
      adam_step(w, g, adam, lr);
    } else {
      axpy(-lr, g, w);
    }
    if (probe) {
      const Vec logits = head_logits(w, probe_feat);
      probe_log.probe_loss.push_back(log_sum_exp(logits) - logits[probe->label]);
    }
  };
  TrainLog log = run_epochs(epochs, cfg, step, objective, []() {});
  log.probe_loss = std::move(probe_log.probe_loss);
  std::copy(w.begin(), w.end(), model.params.begin() + lay.last_off);
  return log;
}

TrainLog finetune_last_layer(BnnModel& model, const Dataset& reduced_train,
                             std::size_t epochs, const TrainConfig& cfg,
                             const LabeledInstance* probe) {
  cfg.validate();
  const std::size_t n = reduced_train.size();
  if (n == 0) throw std::invalid_argument("finetune_last_layer: empty set");
  std::vector<MomentPair> moments(n);
  for (std::size_t i = 0; i < n; ++i) {
    moments[i] = bnn_penultimate_moments(model, reduced_train.instances[i].features);
  }
  MomentPair probe_moments;
  if (probe) probe_moments = bnn_penultimate_moments(model, probe->features);

  VariationalLayer& head = model.layers.back();
  const std::size_t nw = head.in * head.out;
  auto pack = [&]() {
    Vec w;
    w.reserve(2 * (nw + head.out));
    w.insert(w.end(), head.weight_mean.begin(), head.weight_mean.end());
    w.insert(w.end(), head.bias_mean.begin(), head.bias_mean.end());
    w.insert(w.end(), head.weight_logvar.begin(), head.weight_logvar.end());
    w.insert(w.end(), head.bias_logvar.begin(), head.bias_logvar.end());
    return w;
  };
  auto unpack = [&](const Vec& w) {
    std::copy(w.begin(), w.begin() + nw, head.weight_mean.begin());
    std::copy(w.begin() + nw, w.begin() + nw + head.out, head.bias_mean.begin());
    std::copy(w.begin() + nw + head.out, w.begin() + 2 * nw + head.out,
              head.weight_logvar.begin());
    std::copy(w.begin() + 2 * nw + head.out, w.end(), head.bias_logvar.begin());
  };
  Vec w = pack();
  const double klw = model.kl_weight;
  AdamState adam;

  auto head_kl = [&]() {
    double kl = 0.0;
    for (std::size_t i = 0; i < nw; ++i) {
      kl += 0.5 * (std::exp(head.weight_logvar[i]) +
                   head.weight_mean[i] * head.weight_mean[i] - 1.0 -
                   head.weight_logvar[i]);
    }
    for (std::size_t o = 0; o < head.out; ++o) {
      kl += 0.5 * (std::exp(head.bias_logvar[o]) +
                   head.bias_mean[o] * head.bias_mean[o] - 1.0 - head.bias_logvar[o]);
    }
    return kl;
  };
  auto objective = [&]() {
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      total += bnn_head_nll(head, moments[i], reduced_train.instances[i].label);
    }
    return total / static_cast<double>(n) + klw * head_kl();
  };
  auto gradient = [&]() {
    Vec g(w.size(), 0.0);
    const double inv = 1.0 / static_cast<double>(n);
    for (std::size_t i = 0; i < n; ++i) {
      const Vec gi = bnn_head_grad(head, moments[i], reduced_train.instances[i].label);
      axpy(inv, gi, g);
    }
    for (std::size_t i = 0; i < nw; ++i) {
      g[i] += klw * head.weight_mean[i];
      g[nw + head.out + i] += klw * 0.5 * (std::exp(head.weight_logvar[i]) - 1.0);
    }
    for (std::size_t o = 0; o < head.out; ++o) {
      g[nw + o] += klw * head.bias_mean[o];
      g[2 * nw + head.out + o] += klw * 0.5 * (std::exp(head.bias_logvar[o]) - 1.0);
    }
    return g;
  };

  TrainLog probe_log;
  auto step = [&](double lr) {
    const Vec g = gradient();
    if (cfg.optimizer == OptimizerKind::adam) {
      adam_step(w, g, adam, lr);
    } else {
      axpy(-lr, g, w);
    }
    unpack(w);
    if (probe) {
      probe_log.probe_loss.push_back(bnn_head_nll(head, probe_moments, probe->label));
    }
  };
  TrainLog log = run_epochs(epochs, cfg, step, objective, []() {});
  log.probe_loss = std::move(probe_log.probe_loss);
  return log;
}

}  // namespace ifval
