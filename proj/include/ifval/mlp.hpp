#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "ifval/data.hpp"
#include "ifval/linalg.hpp"
#include "ifval/rng.hpp"

namespace ifval {

enum class Activation { relu, selu };

Activation activation_from_string(const std::string& s);
std::string to_string(Activation a);

double activation_value(Activation a, double x);
double activation_d1(Activation a, double x);
double activation_d2(Activation a, double x);

Vec softmax(const Vec& logits);
double log_sum_exp(const Vec& logits);

struct ArchSpec {
  std::size_t n_in = 0;
  std::size_t hidden_layers = 0;  // depth
  std::size_t hidden_width = 0;
  std::size_t n_out = 0;
  Activation activation = Activation::relu;
};

struct LayerShape {
  std::size_t in = 0;
  std::size_t out = 0;
  std::size_t w_off = 0;  // weights, row-major out x in
  std::size_t b_off = 0;
};

struct ParameterLayout {
  std::vector<LayerShape> layers;
  std::size_t size = 0;
  std::size_t last_off = 0;  // final affine layer (weights + biases)
  std::size_t last_len = 0;

  static ParameterLayout from(const ArchSpec& arch);
};

struct MlpModel {
  ArchSpec arch;
  ParameterLayout layout;
  Vec params;
};

// Fan-in-scaled normal init (std = sqrt(2/fan_in)), zero biases.
MlpModel build_mlp(const ArchSpec& arch, RngStream& stream);

Vec forward(const MlpModel& m, const Vec& x);

// Penultimate activation with the raw input as the depth-0 case.
Vec hidden_features(const MlpModel& m, const Vec& x);

// Mean softmax cross-entropy over the batch + (l2/2)*||theta||^2.
double loss(const MlpModel& m, std::span<const LabeledInstance> batch, double l2);

// Exact analytic gradient of loss, same layout as params.
Vec grad(const MlpModel& m, std::span<const LabeledInstance> batch, double l2);

// Gradient restricted to the final affine layer.
Vec last_layer_grad(const MlpModel& m, const LabeledInstance& z, double l2);

// Argmax of per-instance cross-entropy (l2 = 0); ties break low.
std::size_t max_loss_instance(const MlpModel& m, const Dataset& ds);

// Exact Hessian-vector product of loss (forward-over-reverse), H v.
Vec hvp_full(const MlpModel& m, std::span<const LabeledInstance> batch, double l2,
             const Vec& v);

}  // namespace ifval
