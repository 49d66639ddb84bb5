#include "ifval/hessian.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "ifval/rng.hpp"

namespace ifval {

std::string to_string(HessianScope s) {
  return s == HessianScope::last_layer ? "last_layer" : "all_params";
}

std::string to_string(InfluenceMethod m) {
  return m == InfluenceMethod::direct_solve ? "direct_solve" : "lissa";
}

namespace {

void check_finite(const Vec& v, const char* what) {
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (!std::isfinite(v[i])) {
      throw std::runtime_error(std::string(what) + ": non-finite value at coordinate " +
                               std::to_string(i));
    }
  }
}

class MlpSystem final : public ScopedSystem {
 public:
  MlpSystem(const MlpModel& m, const Dataset& train, double l2, HessianScope scope,
            HvpMethod method)
      : model_(m), train_(train), l2_(l2), scope_(scope), method_(method) {
    n_train = train.size();
    if (scope_ == HessianScope::last_layer) {
      // Frozen penultimate features and output probabilities.
      feats_.reserve(train.size());
      probs_.reserve(train.size());
      for (const auto& z : train.instances) {
        feats_.push_back(hidden_features(model_, z.features));
        probs_.push_back(softmax(forward(model_, z.features)));
      }
    }
  }

  std::size_t dim() const override {
    return scope_ == HessianScope::last_layer ? model_.layout.last_len
                                              : model_.layout.size;
  }

  Vec hvp(const Vec& v) const override {
    std::vector<std::size_t> all(train_.size());
    std::iota(all.begin(), all.end(), 0);
    return hvp_subset(v, all);
  }

  Vec hvp_subset(const Vec& v, std::span<const std::size_t> idx) const override {
    if (v.size() != dim()) throw std::invalid_argument("hvp: bad vector length");
    Vec out;
    if (scope_ == HessianScope::last_layer) {
      out = last_layer_hvp(v, idx);
    } else if (method_ == HvpMethod::analytic_double_backward) {
      std::vector<LabeledInstance> batch;
      batch.reserve(idx.size());
      for (std::size_t i : idx) batch.push_back(train_.instances[i]);
      out = hvp_full(model_, batch, l2_, v);
    } else {
      out = fd_hvp(v, idx);
    }
    check_finite(out, "hvp");
    return out;
  }

  Vec instance_grad(const LabeledInstance& z) const override {
    if (scope_ == HessianScope::last_layer) return last_layer_grad(model_, z, 0.0);
    return grad(model_, std::span<const LabeledInstance>(&z, 1), 0.0);
  }

 private:
  // Logits are linear in the final layer, so the scope Hessian is the
  // exact Gauss-Newton form sum_i f_i (diag(p)-pp^T) f_i^T + l2 I.
  Vec last_layer_hvp(const Vec& v, std::span<const std::size_t> idx) const {
    const auto& head = model_.layout.layers.back();
    const std::size_t h = head.in, k = head.out;
    Vec out(v.size(), 0.0);
    const double inv = 1.0 / static_cast<double>(idx.size());
    Vec u(k);
    for (std::size_t ii : idx) {
      const Vec& f = feats_[ii];
      const Vec& p = probs_[ii];
      for (std::size_t o = 0; o < k; ++o) {
        double acc = v[h * k + o];
        const double* vw = &v[o * h];
        for (std::size_t j = 0; j < h; ++j) acc += vw[j] * f[j];
        u[o] = acc;
      }
      double pu = 0.0;
      for (std::size_t o = 0; o < k; ++o) pu += p[o] * u[o];
      for (std::size_t o = 0; o < k; ++o) {
        const double q = inv * p[o] * (u[o] - pu);
        double* ow = &out[o * h];
        for (std::size_t j = 0; j < h; ++j) ow[j] += q * f[j];
        out[h * k + o] += q;
      }
    }
    if (l2_ > 0) axpy(l2_, v, out);
    return out;
  }

  Vec fd_hvp(const Vec& v, std::span<const std::size_t> idx) const {
    const double nv = norm2(v);
    if (nv == 0.0) return Vec(v.size(), 0.0);
    const double h = 1e-4 / nv;
    std::vector<LabeledInstance> batch;
    batch.reserve(idx.size());
    for (std::size_t i : idx) batch.push_back(train_.instances[i]);
    MlpModel pert = model_;
    axpy(h, v, pert.params);
    Vec gp = grad(pert, batch, l2_);
    pert.params = model_.params;
    axpy(-h, v, pert.params);
    Vec gm = grad(pert, batch, l2_);
    Vec out(v.size());
    for (std::size_t i = 0; i < v.size(); ++i) out[i] = (gp[i] - gm[i]) / (2.0 * h);
    return out;
  }

  const MlpModel& model_;
  const Dataset& train_;
  double l2_;
  HessianScope scope_;
  HvpMethod method_;
  std::vector<Vec> feats_;
  std::vector<Vec> probs_;
};

// Final-layer weight/bias means of a BNN under the mean NLL; Hessian
// products via central differences of the analytic head gradient.
class BnnSystem final : public ScopedSystem {
 public:
  BnnSystem(const BnnModel& m, const Dataset& train) : model_(m), train_(train) {
    n_train = train.size();
    moments_.reserve(train.size());
    for (const auto& z : train.instances) {
      moments_.push_back(bnn_penultimate_moments(model_, z.features));
    }
    const auto& head = model_.layers.back();
    dim_ = head.in * head.out + head.out;
  }

  std::size_t dim() const override { return dim_; }

  Vec hvp(const Vec& v) const override {
    std::vector<std::size_t> all(train_.size());
    std::iota(all.begin(), all.end(), 0);
    return hvp_subset(v, all);
  }

  Vec hvp_subset(const Vec& v, std::span<const std::size_t> idx) const override {
    if (v.size() != dim_) throw std::invalid_argument("hvp: bad vector length");
    const double nv = norm2(v);
    if (nv == 0.0) return Vec(dim_, 0.0);
    const double h = 1e-4 / nv;
    VariationalLayer head = model_.layers.back();
    perturb(head, v, h);
    Vec gp = mean_head_grad(head, idx);
    head = model_.layers.back();
    perturb(head, v, -h);
    Vec gm = mean_head_grad(head, idx);
    Vec out(dim_);
    for (std::size_t i = 0; i < dim_; ++i) out[i] = (gp[i] - gm[i]) / (2.0 * h);
    check_finite(out, "hvp");
    return out;
  }

  Vec instance_grad(const LabeledInstance& z) const override {
    const MomentPair in = bnn_penultimate_moments(model_, z.features);
    return mean_slice(bnn_head_grad(model_.layers.back(), in, z.label));
  }

 private:
  static void perturb(VariationalLayer& head, const Vec& v, double h) {
    const std::size_t nw = head.in * head.out;
    for (std::size_t i = 0; i < nw; ++i) head.weight_mean[i] += h * v[i];
    for (std::size_t o = 0; o < head.out; ++o) head.bias_mean[o] += h * v[nw + o];
  }

  Vec mean_slice(const Vec& full) const { return Vec(full.begin(), full.begin() + dim_); }

  Vec mean_head_grad(const VariationalLayer& head, std::span<const std::size_t> idx) const {
    Vec g(dim_, 0.0);
    const double inv = 1.0 / static_cast<double>(idx.size());
    for (std::size_t i : idx) {
      const Vec gi = bnn_head_grad(head, moments_[i], train_.instances[i].label);
      for (std::size_t j = 0; j < dim_; ++j) g[j] += inv * gi[j];
    }
    return g;
  }

  const BnnModel& model_;
  const Dataset& train_;
  std::vector<MomentPair> moments_;
  std::size_t dim_ = 0;
};

// Whole-network BNN system over all flat values (means + logvars) of the
// ELBO objective; Hessian products via central differences of bnn_grad.
class BnnFullSystem final : public ScopedSystem {
 public:
  BnnFullSystem(const BnnModel& m, const Dataset& train) : model_(m), train_(train) {
    n_train = train.size();
    dim_ = m.value_count();
    flat_ = bnn_flatten(m);
  }

  std::size_t dim() const override { return dim_; }

  Vec hvp(const Vec& v) const override {
    std::vector<std::size_t> all(train_.size());
    std::iota(all.begin(), all.end(), 0);
    return hvp_subset(v, all);
  }

  Vec hvp_subset(const Vec& v, std::span<const std::size_t> idx) const override {
    if (v.size() != dim_) throw std::invalid_argument("hvp: bad vector length");
    const double nv = norm2(v);
    if (nv == 0.0) return Vec(dim_, 0.0);
    const double h = 1e-4 / nv;
    std::vector<LabeledInstance> batch;
    batch.reserve(idx.size());
    for (std::size_t i : idx) batch.push_back(train_.instances[i]);
    BnnModel pert = model_;
    Vec p = flat_;
    axpy(h, v, p);
    bnn_unflatten(pert, p);
    const Vec gp = bnn_grad(pert, batch);
    p = flat_;
    axpy(-h, v, p);
    bnn_unflatten(pert, p);
    const Vec gm = bnn_grad(pert, batch);
    Vec out(dim_);
    for (std::size_t i = 0; i < dim_; ++i) out[i] = (gp[i] - gm[i]) / (2.0 * h);
    check_finite(out, "hvp");
    return out;
  }

  Vec instance_grad(const LabeledInstance& z) const override {
    // NLL term only: evaluate the gradient with the KL weight zeroed.
    BnnModel zero_kl = model_;
    zero_kl.kl_weight = 0.0;
    return bnn_grad(zero_kl, std::span<const LabeledInstance>(&z, 1));
  }

 private:
  const BnnModel& model_;
  const Dataset& train_;
  std::size_t dim_ = 0;
  Vec flat_;
};

}  // namespace

std::unique_ptr<ScopedSystem> make_mlp_system(const MlpModel& m, const Dataset& train,
                                              double l2, HessianScope scope,
                                              HvpMethod method) {
  return std::make_unique<MlpSystem>(m, train, l2, scope, method);
}

std::unique_ptr<ScopedSystem> make_bnn_system(const BnnModel& m, const Dataset& train) {
  return std::make_unique<BnnSystem>(m, train);
}

std::unique_ptr<ScopedSystem> make_bnn_full_system(const BnnModel& m,
                                                   const Dataset& train) {
  return std::make_unique<BnnFullSystem>(m, train);
}

Vec hvp(const HessianOperator& op, const Vec& v) {
  Vec out = op.sys->hvp(v);
  if (op.damping > 0) axpy(op.damping, v, out);
  return out;
}

DenseMatrix dense_hessian(const HessianOperator& op) {
  const std::size_t n = op.dim();
  if (n > 2000) throw std::invalid_argument("dense_hessian: dimension > 2000");
  DenseMatrix a(n, n);
  Vec e(n, 0.0);
  for (std::size_t j = 0; j < n; ++j) {
    e[j] = 1.0;
    const Vec col = hvp(op, e);
    for (std::size_t i = 0; i < n; ++i) a.at(i, j) = col[i];
    e[j] = 0.0;
  }
  return a;
}

EigenEstimate top_eigenvalue(const HessianOperator& op, std::size_t max_iters,
                             double tol, std::uint64_t seed) {
  const std::size_t n = op.dim();
  RngStream stream(seed);
  Vec v = stream.normal_vec(n);
  scal(1.0 / norm2(v), v);
  EigenEstimate est;
  double prev = std::numeric_limits<double>::infinity();
  for (std::size_t it = 0; it < max_iters; ++it) {
    Vec w = op.sys->hvp(v);  // spectral probing stays undamped
    const double lambda = dot(v, w);
    const double wn = norm2(w);
    est.iterations = it + 1;
    est.lambda_max = lambda;
    if (wn < 1e-300) {
      est.lambda_max = 0.0;
      est.eigenvector = v;
      est.converged = true;
      return est;
    }
    scal(1.0 / wn, w);
    if (std::abs(lambda - prev) <= tol * std::max(std::abs(lambda), 1e-300)) {
      est.eigenvector = w;
      est.converged = true;
      return est;
    }
    prev = lambda;
    v = std::move(w);
  }
  est.eigenvector = v;
  est.converged = false;
  return est;
}

SolveResult lissa_inverse_hvp(const HessianOperator& op, const Vec& b,
                              const LissaConfig& cfg, std::uint64_t seed) {
  const std::size_t n = op.dim();
  if (b.size() != n) throw std::invalid_argument("lissa: rhs length mismatch");
  const double bn = norm2(b);
  SolveResult res;
  if (bn == 0.0) {
    res.x.assign(n, 0.0);
    res.converged = true;
    return res;
  }
  double scale = cfg.scale;
  if (scale <= 0.0) {
    const EigenEstimate est = top_eigenvalue(op, 50, 1e-4, seed ^ 0xABCDu);
    const double lam = std::abs(est.lambda_max) + op.damping;
    scale = 0.9 / std::max(lam, 1e-12);
  }

  const std::size_t n_train = op.n_train();
  Vec accum(n, 0.0);
  for (std::size_t r = 0; r < cfg.repeats; ++r) {
    RngStream stream = RngStream(seed).split(r);
    Vec x = b;
    Vec tail(n, 0.0);
    std::size_t tail_count = 0;
    const std::size_t tail_start = cfg.recursion_depth - cfg.recursion_depth / 5;
    std::size_t growth_streak = 0;
    double prev_res = std::numeric_limits<double>::infinity();
    std::vector<std::size_t> idx(std::min<std::size_t>(cfg.batch_size, n_train));
    for (std::size_t j = 0; j < cfg.recursion_depth; ++j) {
      for (auto& ix : idx) ix = stream.uniform_below(n_train);
      Vec hx = op.sys->hvp_subset(x, idx);
      axpy(op.damping, x, hx);
      double step2 = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        const double xn = b[i] + x[i] - scale * hx[i];
        step2 += (xn - x[i]) * (xn - x[i]);
        x[i] = xn;
      }
      const double step = std::sqrt(step2);
      if (j >= tail_start) {
        axpy(1.0, x, tail);
        ++tail_count;
      }
      if ((j + 1) % 25 == 0) {
        // residual of the scaled system s(H+damping I) x = b
        const Vec ax = hvp(op, x);
        double rres = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
          const double d = scale * ax[i] - b[i];
          rres += d * d;
        }
        rres = std::sqrt(rres) / bn;
        if (rres > prev_res * (1.0 + 1e-12)) {
          if (++growth_streak >= 10) {
            throw std::runtime_error("lissa: diverging; reduce scale");
          }
        } else {
          growth_streak = 0;
        }
        prev_res = rres;
      }
      if (step <= cfg.convergence_tol * std::max(norm2(x), 1e-300)) {
        // converged: pad the tail with the fixed point
        if (tail_count == 0) {
          tail = x;
          tail_count = 1;
        }
        break;
      }
    }
    Vec xr = tail_count > 0 ? tail : x;
    if (tail_count > 1) scal(1.0 / static_cast<double>(tail_count), xr);
    scal(scale, xr);  // undo the system scaling
    axpy(1.0, xr, accum);
  }
  scal(1.0 / static_cast<double>(cfg.repeats), accum);
  Vec ax = hvp(op, accum);
  double rr = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double d = ax[i] - b[i];
    rr += d * d;
  }
  res.x = std::move(accum);
  res.residual = std::sqrt(rr) / bn;
  res.converged = true;
  return res;
}

InfluenceCalculator::InfluenceCalculator(HessianOperator op, InfluenceMethod method,
                                         LissaConfig lissa, std::uint64_t seed)
    : op_(std::move(op)), method_(method), lissa_(lissa), seed_(seed) {
  if (method_ == InfluenceMethod::direct_solve) {
    factor_ = std::make_shared<Cholesky>(dense_hessian(op_), 0.0);
  }
}

Vec InfluenceCalculator::inverse_hvp(const Vec& b) const {
  if (method_ == InfluenceMethod::direct_solve) {
    Vec x = factor_->solve(b);
    const Vec ax = hvp(op_, x);
    double rr = 0.0, bb = 0.0;
    for (std::size_t i = 0; i < b.size(); ++i) {
      rr += (ax[i] - b[i]) * (ax[i] - b[i]);
      bb += b[i] * b[i];
    }
    last_residual_ = bb > 0 ? std::sqrt(rr / bb) : 0.0;
    return x;
  }
  SolveResult r = lissa_inverse_hvp(op_, b, lissa_, seed_);
  last_residual_ = r.residual;
  return r.x;
}

Vec InfluenceCalculator::influence_up_params(const LabeledInstance& z) const {
  Vec x = inverse_hvp(op_.sys->instance_grad(z));
  scal(-1.0, x);
  return x;
}

InfluenceRecord InfluenceCalculator::influence_up_loss(const LabeledInstance& z,
                                                       std::size_t train_index,
                                                       const LabeledInstance& z_test,
                                                       std::size_t test_index) const {
  const Vec g_test = op_.sys->instance_grad(z_test);
  const Vec x = inverse_hvp(op_.sys->instance_grad(z));
  InfluenceRecord rec;
  rec.train_index = train_index;
  rec.test_index = test_index;
  rec.i_up_loss = -dot(g_test, x);
  rec.method = method_;
  rec.epsilon = -1.0 / static_cast<double>(op_.n_train());
  rec.scope = op_.scope;
  rec.approx_loss_diff = rec.epsilon * rec.i_up_loss;
  rec.residual = last_residual_;
  return rec;
}

std::vector<InfluenceRecord> InfluenceCalculator::influence_all(
    const Dataset& train, const LabeledInstance& z_test, std::size_t test_index) const {
  const Vec s = inverse_hvp(op_.sys->instance_grad(z_test));
  const double residual = last_residual_;
  const double eps = -1.0 / static_cast<double>(op_.n_train());
  std::vector<InfluenceRecord> out;
  out.reserve(train.size());
  for (std::size_t i = 0; i < train.size(); ++i) {
    InfluenceRecord rec;
    rec.train_index = i;
    rec.test_index = test_index;
    rec.i_up_loss = -dot(op_.sys->instance_grad(train.instances[i]), s);
    rec.method = method_;
    rec.epsilon = eps;
    rec.scope = op_.scope;
    rec.approx_loss_diff = eps * rec.i_up_loss;
    rec.residual = residual;
    out.push_back(rec);
  }
  return out;
}

}  // namespace ifval
