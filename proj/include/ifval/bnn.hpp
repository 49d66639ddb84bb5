#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "ifval/data.hpp"
#include "ifval/linalg.hpp"
#include "ifval/mlp.hpp"
#include "ifval/rng.hpp"

namespace ifval {

struct MomentPair {
  Vec mean;
  Vec variance;  // elementwise, >= 0
};

// Gaussian weight posteriors, variance carried as exp(logvar).
struct VariationalLayer {
  std::size_t in = 0;
  std::size_t out = 0;
  Vec weight_mean;    // row-major out x in
  Vec weight_logvar;
  Vec bias_mean;
  Vec bias_logvar;
};

struct BnnModel {
  ArchSpec arch;
  std::vector<VariationalLayer> layers;
  double kl_weight = 1.0;

  std::size_t value_count() const;  // trainable scalars (means + logvars)
};

// Means initialized as build_mlp, logvars constant (default -6).
BnnModel build_bnn(const ArchSpec& arch, double init_logvar, RngStream& stream);

// Closed-form mean/variance propagation to the softmax output.
MomentPair propagate_moments(const BnnModel& m, const Vec& x);

// Pre-softmax moments, for the Monte-Carlo oracle.
MomentPair propagate_moments_presoftmax(const BnnModel& m, const Vec& x);

// Gaussian NLL of the one-hot label under the propagated output moments,
// averaged over the batch, plus kl_weight * KL(q || N(0, I)).
double elbo_loss(const BnnModel& m, std::span<const LabeledInstance> batch);

double kl_to_standard_normal(const BnnModel& m);

// Flat parameter order: per layer [w_mean, b_mean, w_logvar, b_logvar],
// so the final layer occupies one contiguous trailing range.
Vec bnn_flatten(const BnnModel& m);
void bnn_unflatten(BnnModel& m, const Vec& flat);
std::pair<std::size_t, std::size_t> bnn_last_layer_range(const BnnModel& m);
// Index range of the final layer's weight+bias means inside the flat vector.
std::pair<std::size_t, std::size_t> bnn_last_layer_mean_range(const BnnModel& m);

// Exact analytic gradient of elbo_loss in flat order.
Vec bnn_grad(const BnnModel& m, std::span<const LabeledInstance> batch);

// Gradient of the NLL term w.r.t. the final layer's means only.
Vec bnn_last_layer_grad(const BnnModel& m, const LabeledInstance& z);

// NLL-only value/gradient (no KL), used by the influence machinery.
double bnn_nll(const BnnModel& m, std::span<const LabeledInstance> batch);

// Moments entering the final layer; fixed while earlier layers are frozen.
MomentPair bnn_penultimate_moments(const BnnModel& m, const Vec& x);

// Per-instance NLL through the final layer + softmax from cached input
// moments, and its gradient in [w_mean, b_mean, w_logvar, b_logvar] order.
double bnn_head_nll(const VariationalLayer& head, const MomentPair& in,
                    std::size_t label);
Vec bnn_head_grad(const VariationalLayer& head, const MomentPair& in,
                  std::size_t label);

}  // namespace ifval
