#include "ifval/bnn.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace ifval {

namespace {

constexpr double kVarFloor = 1e-8;  // output-variance clamp before log/inverse

struct BnnTrace {
  // Per layer: pre-activation moments; per hidden layer: post-activation.
  std::vector<Vec> mu_z, var_z;
  std::vector<Vec> mu_a, var_a;  // mu_a[l] feeds layer l (mu_a[0] = input x)
  Vec p;                         // softmax of final mean
  Vec var_out;                   // clamped output variance
  Vec var_out_raw;               // before clamping
};

BnnTrace forward_bnn(const BnnModel& m, const Vec& x) {
  if (x.size() != m.arch.n_in) {
    throw std::invalid_argument("propagate_moments: input size mismatch");
  }
  const std::size_t L = m.layers.size();
  BnnTrace t;
  t.mu_z.resize(L);
  t.var_z.resize(L);
  t.mu_a.resize(L);
  t.var_a.resize(L);
  t.mu_a[0] = x;
  t.var_a[0].assign(x.size(), 0.0);
  for (std::size_t l = 0; l < L; ++l) {
    const auto& ly = m.layers[l];
    Vec mz(ly.out), vz(ly.out);
    const bool deterministic_input = (l == 0);
    for (std::size_t o = 0; o < ly.out; ++o) {
      double mu = ly.bias_mean[o];
      double var = std::exp(ly.bias_logvar[o]);
      const double* wm = &ly.weight_mean[o * ly.in];
      const double* wlv = &ly.weight_logvar[o * ly.in];
      for (std::size_t i = 0; i < ly.in; ++i) {
        const double s = std::exp(wlv[i]);
        const double ma = t.mu_a[l][i];
        mu += wm[i] * ma;
        if (deterministic_input) {
          var += s * ma * ma;
        } else {
          const double va = t.var_a[l][i];
          var += s * va + wm[i] * wm[i] * va + s * ma * ma;
        }
      }
      mz[o] = mu;
      vz[o] = var;
    }
    t.mu_z[l] = std::move(mz);
    t.var_z[l] = std::move(vz);
    if (l + 1 < L) {
      Vec ma(ly.out), va(ly.out);
      for (std::size_t o = 0; o < ly.out; ++o) {
        const double d1 = activation_d1(m.arch.activation, t.mu_z[l][o]);
        ma[o] = activation_value(m.arch.activation, t.mu_z[l][o]);
        va[o] = t.var_z[l][o] * d1 * d1;
      }
      t.mu_a[l + 1] = std::move(ma);
      t.var_a[l + 1] = std::move(va);
    }
  }
  t.p = softmax(t.mu_z.back());
  t.var_out_raw.resize(t.p.size());
  t.var_out.resize(t.p.size());
  for (std::size_t k = 0; k < t.p.size(); ++k) {
    const double j = t.p[k] * (1.0 - t.p[k]);
    t.var_out_raw[k] = j * j * t.var_z.back()[k];
    t.var_out[k] = std::max(t.var_out_raw[k], kVarFloor);
  }
  return t;
}

struct FlatLayout {
  // Offsets of [w_mean, b_mean, w_logvar, b_logvar] per layer.
  struct L {
    std::size_t wm, bm, wlv, blv, next;
  };
  std::vector<L> layer;
  std::size_t size = 0;
};

FlatLayout flat_layout(const BnnModel& m) {
  FlatLayout f;
  std::size_t off = 0;
  for (const auto& ly : m.layers) {
    FlatLayout::L e;
    e.wm = off;
    e.bm = e.wm + ly.in * ly.out;
    e.wlv = e.bm + ly.out;
    e.blv = e.wlv + ly.in * ly.out;
    e.next = e.blv + ly.out;
    off = e.next;
    f.layer.push_back(e);
  }
  f.size = off;
  return f;
}

struct LayerGrad {
  Vec wm, bm, wlv, blv;
};

// Backprop of the per-instance NLL through moment propagation.
// Accumulates weight * d(NLL)/d(layer params) into grads.
void backprop_nll(const BnnModel& m, const LabeledInstance& z, double weight,
                  std::vector<LayerGrad>& grads) {
  const std::size_t L = m.layers.size();
  BnnTrace t = forward_bnn(m, z.features);
  const std::size_t k_out = t.p.size();

  // Head: NLL = sum_k 0.5 log s_k + 0.5 (y_k - p_k)^2 / s_k,
  // s = max((p(1-p))^2 var_yt, floor).
  Vec g_p(k_out, 0.0), g_vyt(k_out, 0.0);
  for (std::size_t k = 0; k < k_out; ++k) {
    const double y = (z.label == k) ? 1.0 : 0.0;
    const double s = t.var_out[k];
    const double r = y - t.p[k];
    const double g_s_clamped = 0.5 / s - 0.5 * r * r / (s * s);
    const double mask = (t.var_out_raw[k] > kVarFloor) ? 1.0 : 0.0;
    const double g_s = mask * g_s_clamped;
    const double pk = t.p[k];
    const double j = pk * (1.0 - pk);
    // d/dp of 0.5 (y-p)^2/s is -(y-p)/s; the clamp path adds the s(p) chain.
    g_p[k] = -r / s + g_s * 2.0 * j * (1.0 - 2.0 * pk) * t.var_z.back()[k];
    g_vyt[k] = g_s * j * j;
  }
  // Softmax Jacobian (symmetric): g_mu = p .* g_p - p * (p . g_p).
  Vec g_mz(k_out), g_vz(k_out);
  {
    double pd = 0.0;
    for (std::size_t k = 0; k < k_out; ++k) pd += t.p[k] * g_p[k];
    for (std::size_t k = 0; k < k_out; ++k) g_mz[k] = t.p[k] * (g_p[k] - pd);
    g_vz = g_vyt;
  }

  for (std::size_t li = L; li-- > 0;) {
    const auto& ly = m.layers[li];
    auto& g = grads[li];
    const bool deterministic_input = (li == 0);
    const Vec& mu_in = t.mu_a[li];
    const Vec& var_in = t.var_a[li];
    Vec g_mua(ly.in, 0.0), g_vara(ly.in, 0.0);
    for (std::size_t o = 0; o < ly.out; ++o) {
      const double gmo = g_mz[o];
      const double gvo = g_vz[o];
      double* gwm = &g.wm[o * ly.in];
      double* gwlv = &g.wlv[o * ly.in];
      const double* wm = &ly.weight_mean[o * ly.in];
      const double* wlv = &ly.weight_logvar[o * ly.in];
      for (std::size_t i = 0; i < ly.in; ++i) {
        const double s = std::exp(wlv[i]);
        const double ma = mu_in[i];
        if (deterministic_input) {
          gwm[i] += weight * gmo * ma;
          gwlv[i] += weight * gvo * ma * ma * s;
        } else {
          const double va = var_in[i];
          gwm[i] += weight * (gmo * ma + gvo * 2.0 * wm[i] * va);
          gwlv[i] += weight * gvo * (va + ma * ma) * s;
          g_mua[i] += gmo * wm[i] + gvo * 2.0 * s * ma;
          g_vara[i] += gvo * (s + wm[i] * wm[i]);
        }
      }
      g.bm[o] += weight * gmo;
      g.blv[o] += weight * gvo * std::exp(ly.bias_logvar[o]);
    }
    if (li == 0) break;
    // Activation between layer li-1 and li: mu_a = f(mu_z), var_a = var_z f'^2.
    const Vec& mzp = t.mu_z[li - 1];
    const Vec& vzp = t.var_z[li - 1];
    g_mz.assign(mzp.size(), 0.0);
    g_vz.assign(mzp.size(), 0.0);
    for (std::size_t i = 0; i < mzp.size(); ++i) {
      const double d1 = activation_d1(m.arch.activation, mzp[i]);
      const double d2 = activation_d2(m.arch.activation, mzp[i]);
      g_mz[i] = g_mua[i] * d1 + g_vara[i] * vzp[i] * 2.0 * d1 * d2;
      g_vz[i] = g_vara[i] * d1 * d1;
    }
  }
}

double instance_nll(const BnnTrace& t, std::size_t label) {
  double nll = 0.0;
  for (std::size_t k = 0; k < t.p.size(); ++k) {
    const double y = (label == k) ? 1.0 : 0.0;
    const double r = y - t.p[k];
    nll += 0.5 * std::log(t.var_out[k]) + 0.5 * r * r / t.var_out[k];
  }
  return nll;
}

}  // namespace

std::size_t BnnModel::value_count() const {
  std::size_t n = 0;
  for (const auto& ly : layers) n += 2 * (ly.in * ly.out + ly.out);
  return n;
}

BnnModel build_bnn(const ArchSpec& arch, double init_logvar, RngStream& stream) {
  BnnModel m;
  m.arch = arch;
  const ParameterLayout lay = ParameterLayout::from(arch);
  for (const auto& ls : lay.layers) {
    VariationalLayer ly;
    ly.in = ls.in;
    ly.out = ls.out;
    const double std = std::sqrt(2.0 / static_cast<double>(ls.in));
    ly.weight_mean.resize(ls.in * ls.out);
    for (auto& w : ly.weight_mean) w = std * stream.normal();
    ly.bias_mean.assign(ls.out, 0.0);
    ly.weight_logvar.assign(ls.in * ls.out, init_logvar);
    ly.bias_logvar.assign(ls.out, init_logvar);
    m.layers.push_back(std::move(ly));
  }
  return m;
}

MomentPair propagate_moments(const BnnModel& m, const Vec& x) {
  BnnTrace t = forward_bnn(m, x);
  return {t.p, t.var_out_raw};
}

MomentPair propagate_moments_presoftmax(const BnnModel& m, const Vec& x) {
  BnnTrace t = forward_bnn(m, x);
  return {t.mu_z.back(), t.var_z.back()};
}

double bnn_nll(const BnnModel& m, std::span<const LabeledInstance> batch) {
  if (batch.empty()) throw std::invalid_argument("bnn_nll: empty batch");
  double total = 0.0;
  for (const auto& z : batch) total += instance_nll(forward_bnn(m, z.features), z.label);
  return total / static_cast<double>(batch.size());
}

double kl_to_standard_normal(const BnnModel& m) {
  double kl = 0.0;
  auto add = [&kl](const Vec& mu, const Vec& lv) {
    for (std::size_t i = 0; i < mu.size(); ++i) {
      kl += 0.5 * (std::exp(lv[i]) + mu[i] * mu[i] - 1.0 - lv[i]);
    }
  };
  for (const auto& ly : m.layers) {
    add(ly.weight_mean, ly.weight_logvar);
    add(ly.bias_mean, ly.bias_logvar);
  }
  return kl;
}

double elbo_loss(const BnnModel& m, std::span<const LabeledInstance> batch) {
  return bnn_nll(m, batch) + m.kl_weight * kl_to_standard_normal(m);
}

Vec bnn_flatten(const BnnModel& m) {
  const FlatLayout f = flat_layout(m);
  Vec flat(f.size);
  for (std::size_t l = 0; l < m.layers.size(); ++l) {
    const auto& ly = m.layers[l];
    const auto& e = f.layer[l];
    std::copy(ly.weight_mean.begin(), ly.weight_mean.end(), flat.begin() + e.wm);
    std::copy(ly.bias_mean.begin(), ly.bias_mean.end(), flat.begin() + e.bm);
    std::copy(ly.weight_logvar.begin(), ly.weight_logvar.end(), flat.begin() + e.wlv);
    std::copy(ly.bias_logvar.begin(), ly.bias_logvar.end(), flat.begin() + e.blv);
  }
  return flat;
}

void bnn_unflatten(BnnModel& m, const Vec& flat) {
  const FlatLayout f = flat_layout(m);
  if (flat.size() != f.size) throw std::invalid_argument("bnn_unflatten: size mismatch");
  for (std::size_t l = 0; l < m.layers.size(); ++l) {
    auto& ly = m.layers[l];
    const auto& e = f.layer[l];
    std::copy(flat.begin() + e.wm, flat.begin() + e.bm, ly.weight_mean.begin());
    std::copy(flat.begin() + e.bm, flat.begin() + e.wlv, ly.bias_mean.begin());
    std::copy(flat.begin() + e.wlv, flat.begin() + e.blv, ly.weight_logvar.begin());
    std::copy(flat.begin() + e.blv, flat.begin() + e.next, ly.bias_logvar.begin());
  }
}

std::pair<std::size_t, std::size_t> bnn_last_layer_range(const BnnModel& m) {
  const FlatLayout f = flat_layout(m);
  const auto& e = f.layer.back();
  return {e.wm, e.next - e.wm};
}

std::pair<std::size_t, std::size_t> bnn_last_layer_mean_range(const BnnModel& m) {
  const FlatLayout f = flat_layout(m);
  const auto& e = f.layer.back();
  return {e.wm, e.wlv - e.wm};
}

Vec bnn_grad(const BnnModel& m, std::span<const LabeledInstance> batch) {
  if (batch.empty()) throw std::invalid_argument("bnn_grad: empty batch");
  std::vector<LayerGrad> grads(m.layers.size());
  for (std::size_t l = 0; l < m.layers.size(); ++l) {
    const auto& ly = m.layers[l];
    grads[l].wm.assign(ly.in * ly.out, 0.0);
    grads[l].bm.assign(ly.out, 0.0);
    grads[l].wlv.assign(ly.in * ly.out, 0.0);
    grads[l].blv.assign(ly.out, 0.0);
  }
  const double w = 1.0 / static_cast<double>(batch.size());
  for (const auto& z : batch) backprop_nll(m, z, w, grads);
  // KL term: d/dmu = klw * mu, d/dlv = klw * 0.5 (exp(lv) - 1).
  const double klw = m.kl_weight;
  const FlatLayout f = flat_layout(m);
  Vec g(f.size, 0.0);
  for (std::size_t l = 0; l < m.layers.size(); ++l) {
    const auto& ly = m.layers[l];
    const auto& e = f.layer[l];
    for (std::size_t i = 0; i < ly.weight_mean.size(); ++i) {
      g[e.wm + i] = grads[l].wm[i] + klw * ly.weight_mean[i];
      g[e.wlv + i] = grads[l].wlv[i] + klw * 0.5 * (std::exp(ly.weight_logvar[i]) - 1.0);
    }
    for (std::size_t o = 0; o < ly.out; ++o) {
      g[e.bm + o] = grads[l].bm[o] + klw * ly.bias_mean[o];
      g[e.blv + o] = grads[l].blv[o] + klw * 0.5 * (std::exp(ly.bias_logvar[o]) - 1.0);
    }
  }
  return g;
}

Vec bnn_last_layer_grad(const BnnModel& m, const LabeledInstance& z) {
  std::vector<LayerGrad> grads(m.layers.size());
  for (std::size_t l = 0; l < m.layers.size(); ++l) {
    const auto& ly = m.layers[l];
    grads[l].wm.assign(ly.in * ly.out, 0.0);
    grads[l].bm.assign(ly.out, 0.0);
    grads[l].wlv.assign(ly.in * ly.out, 0.0);
    grads[l].blv.assign(ly.out, 0.0);
  }
  backprop_nll(m, z, 1.0, grads);
  const auto& g = grads.back();
  Vec out;
  out.reserve(g.wm.size() + g.bm.size());
  out.insert(out.end(), g.wm.begin(), g.wm.end());
  out.insert(out.end(), g.bm.begin(), g.bm.end());
  return out;
}

MomentPair bnn_penultimate_moments(const BnnModel& m, const Vec& x) {
  if (m.layers.size() == 1) return {x, Vec(x.size(), 0.0)};
  BnnTrace t = forward_bnn(m, x);
  return {t.mu_a.back(), t.var_a.back()};
}

namespace {

struct HeadTrace {
  Vec mu_yt, var_yt, p, var_out_raw, var_out;
};

HeadTrace forward_head(const VariationalLayer& ly, const MomentPair& in) {
  HeadTrace t;
  t.mu_yt.resize(ly.out);
  t.var_yt.resize(ly.out);
  for (std::size_t o = 0; o < ly.out; ++o) {
    double mu = ly.bias_mean[o];
    double var = std::exp(ly.bias_logvar[o]);
    const double* wm = &ly.weight_mean[o * ly.in];
    const double* wlv = &ly.weight_logvar[o * ly.in];
    for (std::size_t i = 0; i < ly.in; ++i) {
      const double s = std::exp(wlv[i]);
      const double ma = in.mean[i];
      const double va = in.variance[i];
      mu += wm[i] * ma;
      var += s * va + wm[i] * wm[i] * va + s * ma * ma;
    }
    t.mu_yt[o] = mu;
    t.var_yt[o] = var;
  }
  t.p = softmax(t.mu_yt);
  t.var_out_raw.resize(ly.out);
  t.var_out.resize(ly.out);
  for (std::size_t k = 0; k < ly.out; ++k) {
    const double j = t.p[k] * (1.0 - t.p[k]);
    t.var_out_raw[k] = j * j * t.var_yt[k];
    t.var_out[k] = std::max(t.var_out_raw[k], kVarFloor);
  }
  return t;
}

}  // namespace

double bnn_head_nll(const VariationalLayer& head, const MomentPair& in,
                    std::size_t label) {
  const HeadTrace t = forward_head(head, in);
  double nll = 0.0;
  for (std::size_t k = 0; k < t.p.size(); ++k) {
    const double y = (label == k) ? 1.0 : 0.0;
    const double r = y - t.p[k];
    nll += 0.5 * std::log(t.var_out[k]) + 0.5 * r * r / t.var_out[k];
  }
  return nll;
}

Vec bnn_head_grad(const VariationalLayer& head, const MomentPair& in,
                  std::size_t label) {
  const HeadTrace t = forward_head(head, in);
  const std::size_t k_out = head.out;
  Vec g_p(k_out), g_vyt(k_out);
  for (std::size_t k = 0; k < k_out; ++k) {
    const double y = (label == k) ? 1.0 : 0.0;
    const double s = t.var_out[k];
    const double r = y - t.p[k];
    const double mask = (t.var_out_raw[k] > kVarFloor) ? 1.0 : 0.0;
    const double g_s = mask * (0.5 / s - 0.5 * r * r / (s * s));
    const double pk = t.p[k];
    const double j = pk * (1.0 - pk);
    g_p[k] = -r / s + g_s * 2.0 * j * (1.0 - 2.0 * pk) * t.var_yt[k];
    g_vyt[k] = g_s * j * j;
  }
  Vec g_mz(k_out);
  double pd = 0.0;
  for (std::size_t k = 0; k < k_out; ++k) pd += t.p[k] * g_p[k];
  for (std::size_t k = 0; k < k_out; ++k) g_mz[k] = t.p[k] * (g_p[k] - pd);

  const std::size_t nw = head.in * head.out;
  Vec g(2 * (nw + head.out), 0.0);  // [wm, bm, wlv, blv]
  double* gwm = &g[0];
  double* gbm = &g[nw];
  double* gwlv = &g[nw + head.out];
  double* gblv = &g[2 * nw + head.out];
  for (std::size_t o = 0; o < k_out; ++o) {
    const double gmo = g_mz[o];
    const double gvo = g_vyt[o];
    const double* wm = &head.weight_mean[o * head.in];
    const double* wlv = &head.weight_logvar[o * head.in];
    for (std::size_t i = 0; i < head.in; ++i) {
      const double s = std::exp(wlv[i]);
      const double ma = in.mean[i];
      const double va = in.variance[i];
      gwm[o * head.in + i] += gmo * ma + gvo * 2.0 * wm[i] * va;
      gwlv[o * head.in + i] += gvo * (va + ma * ma) * s;
    }
    gbm[o] += gmo;
    gblv[o] += gvo * std::exp(head.bias_logvar[o]);
  }
  return g;
}

}  // namespace ifval
