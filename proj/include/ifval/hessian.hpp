#pragma once

#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "ifval/bnn.hpp"
#include "ifval/data.hpp"
#include "ifval/linalg.hpp"
#include "ifval/mlp.hpp"

namespace ifval {

enum class HessianScope { last_layer, all_params };
enum class HvpMethod { analytic_double_backward, grad_finite_difference };
enum class InfluenceMethod { direct_solve, lissa };

std::string to_string(HessianScope s);
std::string to_string(InfluenceMethod m);

// Scope-restricted view of a frozen model + training set: Hessian-vector
// products of the mean training objective and per-instance data gradients.
class ScopedSystem {
 public:
  virtual ~ScopedSystem() = default;
  virtual std::size_t dim() const = 0;
  // H v over the full training set (objective includes any l2 term).
  virtual Vec hvp(const Vec& v) const = 0;
  // H v where the data term is averaged over a subset of train indices.
  virtual Vec hvp_subset(const Vec& v, std::span<const std::size_t> idx) const = 0;
  // Data-term gradient of one instance (no regularization), scope slice.
  virtual Vec instance_grad(const LabeledInstance& z) const = 0;
  std::size_t n_train = 0;
};

std::unique_ptr<ScopedSystem> make_mlp_system(const MlpModel& m,
                                              const Dataset& train, double l2,
                                              HessianScope scope,
                                              HvpMethod method);

// BNN scope: final-layer weight/bias means under the NLL objective.
std::unique_ptr<ScopedSystem> make_bnn_system(const BnnModel& m,
                                              const Dataset& train);

// Whole-network BNN Hessian (ELBO objective) via finite differences of
// the analytic gradient; used for spectral probing.
std::unique_ptr<ScopedSystem> make_bnn_full_system(const BnnModel& m,
                                                   const Dataset& train);

// Matrix-free damped Hessian (H + damping*I) over the system's scope.
struct HessianOperator {
  std::shared_ptr<ScopedSystem> sys;
  double damping = 0.0;
  HessianScope scope = HessianScope::last_layer;

  std::size_t dim() const { return sys->dim(); }
  std::size_t n_train() const { return sys->n_train; }
};

// (H + damping*I) v.
Vec hvp(const HessianOperator& op, const Vec& v);

// Materializes (H + damping*I) column-by-column; dim must be <= 2000.
DenseMatrix dense_hessian(const HessianOperator& op);

struct EigenEstimate {
  double lambda_max = 0.0;
  Vec eigenvector;
  bool converged = false;
  std::size_t iterations = 0;
};

// Power iteration on the undamped H from a seeded random start.
EigenEstimate top_eigenvalue(const HessianOperator& op, std::size_t max_iters,
                             double tol, std::uint64_t seed = 7);

struct LissaConfig {
  std::size_t recursion_depth = 5000;
  double scale = 0.0;  // 0 = auto (0.9 / damped top-eigenvalue estimate)
  std::size_t repeats = 4;
  double convergence_tol = 1e-9;
  std::size_t batch_size = 8;  // sampled Hessian minibatch per iteration
};

struct SolveResult {
  Vec x;
  double residual = 0.0;  // ||(H+damping I)x - b|| / ||b||
  bool converged = false;
};

// Stochastic recursion x <- b + (I - s(H+damping I))x, averaged over
// repeats; throws on sustained residual growth.
SolveResult lissa_inverse_hvp(const HessianOperator& op, const Vec& b,
                              const LissaConfig& cfg, std::uint64_t seed = 11);

struct InfluenceRecord {
  std::size_t train_index = 0;
  std::size_t test_index = 0;
  double i_up_loss = 0.0;
  InfluenceMethod method = InfluenceMethod::direct_solve;
  double epsilon = 0.0;  // always -1/n_train
  HessianScope scope = HessianScope::last_layer;
  double approx_loss_diff = 0.0;  // epsilon * i_up_loss
  double residual = 0.0;
};

// Caches the dense factorization (direct) or the LiSSA state so one test
// point can be scored against many training points.
class InfluenceCalculator {
 public:
  InfluenceCalculator(HessianOperator op, InfluenceMethod method,
                      LissaConfig lissa = {}, std::uint64_t seed = 11);

  Vec inverse_hvp(const Vec& b) const;
  double last_residual() const { return last_residual_; }

  // -(H + damping I)^{-1} grad L(z)
  Vec influence_up_params(const LabeledInstance& z) const;

  InfluenceRecord influence_up_loss(const LabeledInstance& z,
                                    std::size_t train_index,
                                    const LabeledInstance& z_test,
                                    std::size_t test_index) const;

  // All training points against one test point; solves once on the test
  // gradient and reuses it (valid by symmetry of H).
  std::vector<InfluenceRecord> influence_all(const Dataset& train,
                                             const LabeledInstance& z_test,
                                             std::size_t test_index) const;

  const HessianOperator& op() const { return op_; }

 private:
  HessianOperator op_;
  InfluenceMethod method_;
  LissaConfig lissa_;
  std::uint64_t seed_;
  std::shared_ptr<const Cholesky> factor_;  // direct method only
  mutable double last_residual_ = 0.0;
};

}  // namespace ifval
