#include "ifval/mlp.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace ifval {

namespace {

constexpr double kSeluLambda = 1.0507009873554804934193349852946;
constexpr double kSeluAlpha = 1.6732632423543772848170429916717;

}  // namespace

double activation_value(Activation a, double x) {
  switch (a) {
    case Activation::relu:
      return x > 0 ? x : 0.0;
    case Activation::selu:
      return x > 0 ? kSeluLambda * x : kSeluLambda * kSeluAlpha * std::expm1(x);
  }
  return 0.0;
}

double activation_d1(Activation a, double x) {
  switch (a) {
    case Activation::relu:
      return x > 0 ? 1.0 : 0.0;
    case Activation::selu:
      return x > 0 ? kSeluLambda : kSeluLambda * kSeluAlpha * std::exp(x);
  }
  return 0.0;
}

double activation_d2(Activation a, double x) {
  switch (a) {
    case Activation::relu:
      return 0.0;
    case Activation::selu:
      return x > 0 ? 0.0 : kSeluLambda * kSeluAlpha * std::exp(x);
  }
  return 0.0;
}

Vec softmax(const Vec& logits) {
  Vec p(logits.size());
  const double mx = *std::max_element(logits.begin(), logits.end());
  double s = 0.0;
  for (std::size_t k = 0; k < logits.size(); ++k) {
    p[k] = std::exp(logits[k] - mx);
    s += p[k];
  }
  for (auto& pk : p) pk /= s;
  return p;
}

double log_sum_exp(const Vec& logits) {
  const double mx = *std::max_element(logits.begin(), logits.end());
  double s = 0.0;
  for (double l : logits) s += std::exp(l - mx);
  return mx + std::log(s);
}

namespace {

// One full forward pass keeping per-layer pre-activations and activations.
struct ForwardTrace {
  std::vector<Vec> z;  // pre-activation per layer
  std::vector<Vec> a;  // a[0] = input, a[l+1] = activation after layer l
};

ForwardTrace forward_trace(const MlpModel& m, const Vec& x) {
  if (x.size() != m.arch.n_in) {
    throw std::invalid_argument("forward: input has " + std::to_string(x.size()) +
                                " features, model expects " +
                                std::to_string(m.arch.n_in));
  }
  ForwardTrace t;
  const auto& L = m.layout.layers;
  t.a.resize(L.size() + 1);
  t.z.resize(L.size());
  t.a[0] = x;
  for (std::size_t l = 0; l < L.size(); ++l) {
    const auto& ls = L[l];
    Vec z(ls.out);
    for (std::size_t o = 0; o < ls.out; ++o) {
      double acc = m.params[ls.b_off + o];
      const double* w = &m.params[ls.w_off + o * ls.in];
      for (std::size_t i = 0; i < ls.in; ++i) acc += w[i] * t.a[l][i];
      z[o] = acc;
    }
    t.z[l] = std::move(z);
    if (l + 1 < L.size()) {
      Vec a(ls.out);
      for (std::size_t o = 0; o < ls.out; ++o) a[o] = activation_value(m.arch.activation, t.z[l][o]);
      t.a[l + 1] = std::move(a);
    } else {
      t.a[l + 1] = t.z[l];  // logits
    }
  }
  return t;
}

// Accumulates the cross-entropy gradient for one instance into g.
void accumulate_grad(const MlpModel& m, const LabeledInstance& zi, double weight,
                     Vec& g) {
  const auto& L = m.layout.layers;
  ForwardTrace t = forward_trace(m, zi.features);
  Vec delta = softmax(t.z.back());
  delta[zi.label] -= 1.0;
  for (std::size_t li = L.size(); li-- > 0;) {
    const auto& ls = L[li];
    for (std::size_t o = 0; o < ls.out; ++o) {
      const double d = weight * delta[o];
      double* gw = &g[ls.w_off + o * ls.in];
      for (std::size_t i = 0; i < ls.in; ++i) gw[i] += d * t.a[li][i];
      g[ls.b_off + o] += d;
    }
    if (li == 0) break;
    Vec prev(ls.in, 0.0);
    for (std::size_t i = 0; i < ls.in; ++i) {
      double acc = 0.0;
      for (std::size_t o = 0; o < ls.out; ++o) {
        acc += m.params[ls.w_off + o * ls.in + i] * delta[o];
      }
      prev[i] = acc * activation_d1(m.arch.activation, t.z[li - 1][i]);
    }
    delta = std::move(prev);
  }
}

}  // namespace

Activation activation_from_string(const std::string& s) {
  if (s == "relu") return Activation::relu;
  if (s == "selu") return Activation::selu;
  throw std::invalid_argument("unknown activation: " + s);
}

std::string to_string(Activation a) {
  return a == Activation::relu ? "relu" : "selu";
}

ParameterLayout ParameterLayout::from(const ArchSpec& arch) {
  if (arch.hidden_layers >= 1 && arch.hidden_width < 1) {
    throw std::invalid_argument("arch: hidden_width must be >= 1 when depth >= 1");
  }
  ParameterLayout lay;
  std::size_t off = 0;
  std::size_t in = arch.n_in;
  for (std::size_t l = 0; l <= arch.hidden_layers; ++l) {
    const std::size_t out = (l == arch.hidden_layers) ? arch.n_out : arch.hidden_width;
    LayerShape ls;
    ls.in = in;
    ls.out = out;
    ls.w_off = off;
    ls.b_off = off + in * out;
    off = ls.b_off + out;
    lay.layers.push_back(ls);
    in = out;
  }
  lay.size = off;
  lay.last_off = lay.layers.back().w_off;
  lay.last_len = lay.layers.back().in * lay.layers.back().out + lay.layers.back().out;
  return lay;
}

MlpModel build_mlp(const ArchSpec& arch, RngStream& stream) {
  MlpModel m;
  m.arch = arch;
  m.layout = ParameterLayout::from(arch);
  m.params.assign(m.layout.size, 0.0);
  for (const auto& ls : m.layout.layers) {
    const double std = std::sqrt(2.0 / static_cast<double>(ls.in));
    for (std::size_t i = 0; i < ls.in * ls.out; ++i) {
      m.params[ls.w_off + i] = std * stream.normal();
    }
  }
  return m;
}

Vec forward(const MlpModel& m, const Vec& x) {
  return forward_trace(m, x).a.back();
}

Vec hidden_features(const MlpModel& m, const Vec& x) {
  ForwardTrace t = forward_trace(m, x);
  return t.a[t.a.size() - 2];
}

double loss(const MlpModel& m, std::span<const LabeledInstance> batch, double l2) {
  if (batch.empty()) throw std::invalid_argument("loss: empty batch");
  double total = 0.0;
  for (const auto& zi : batch) {
    const Vec logits = forward(m, zi.features);
    total += log_sum_exp(logits) - logits[zi.label];
  }
  total /= static_cast<double>(batch.size());
  if (l2 > 0) total += 0.5 * l2 * dot(m.params, m.params);
  return total;
}

Vec grad(const MlpModel& m, std::span<const LabeledInstance> batch, double l2) {
  if (batch.empty()) throw std::invalid_argument("grad: empty batch");
  Vec g(m.layout.size, 0.0);
  const double w = 1.0 / static_cast<double>(batch.size());
  for (const auto& zi : batch) accumulate_grad(m, zi, w, g);
  if (l2 > 0) axpy(l2, m.params, g);
  return g;
}

Vec last_layer_grad(const MlpModel& m, const LabeledInstance& z, double l2) {
  Vec g(m.layout.size, 0.0);
  accumulate_grad(m, z, 1.0, g);
  Vec out(m.layout.last_len);
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = g[m.layout.last_off + i];
    if (l2 > 0) out[i] += l2 * m.params[m.layout.last_off + i];
  }
  return out;
}

std::size_t max_loss_instance(const MlpModel& m, const Dataset& ds) {
  if (ds.instances.empty()) throw std::invalid_argument("max_loss_instance: empty");
  std::size_t best = 0;
  double best_loss = -1.0;
  for (std::size_t i = 0; i < ds.size(); ++i) {
    const Vec logits = forward(m, ds.instances[i].features);
    const double li = log_sum_exp(logits) - logits[ds.instances[i].label];
    if (li > best_loss) {
      best_loss = li;
      best = i;
    }
  }
  return best;
}

Vec hvp_full(const MlpModel& m, std::span<const LabeledInstance> batch, double l2,
             const Vec& v) {
  if (v.size() != m.layout.size) throw std::invalid_argument("hvp_full: bad v size");
  const auto& L = m.layout.layers;
  const Activation actk = m.arch.activation;
  Vec hv(m.layout.size, 0.0);
  const double wgt = 1.0 / static_cast<double>(batch.size());

  std::vector<Vec> da(L.size() + 1), dz(L.size());
  for (const auto& zi : batch) {
    ForwardTrace t = forward_trace(m, zi.features);

    // Forward tangent pass: directional derivative of every activation.
    da[0].assign(zi.features.size(), 0.0);
    for (std::size_t l = 0; l < L.size(); ++l) {
      const auto& ls = L[l];
      dz[l].assign(ls.out, 0.0);
      for (std::size_t o = 0; o < ls.out; ++o) {
        double acc = v[ls.b_off + o];
        const double* wv = &v[ls.w_off + o * ls.in];
        const double* w = &m.params[ls.w_off + o * ls.in];
        for (std::size_t i = 0; i < ls.in; ++i) {
          acc += wv[i] * t.a[l][i] + w[i] * da[l][i];
        }
        dz[l][o] = acc;
      }
      if (l + 1 < L.size()) {
        da[l + 1].assign(ls.out, 0.0);
        for (std::size_t o = 0; o < ls.out; ++o) {
          da[l + 1][o] = activation_d1(actk, t.z[l][o]) * dz[l][o];
        }
      } else {
        da[l + 1] = dz[l];
      }
    }

    // Backward pass with adjoints and their tangents.
    Vec p = softmax(t.z.back());
    Vec delta = p;
    delta[zi.label] -= 1.0;
    const double pdot = dot(p, dz.back());
    Vec ddelta(p.size());
    for (std::size_t k = 0; k < p.size(); ++k) {
      ddelta[k] = p[k] * (dz.back()[k] - pdot);  // (diag(p) - p p^T) dz
    }
    for (std::size_t li = L.size(); li-- > 0;) {
      const auto& ls = L[li];
      for (std::size_t o = 0; o < ls.out; ++o) {
        double* hw = &hv[ls.w_off + o * ls.in];
        for (std::size_t i = 0; i < ls.in; ++i) {
          hw[i] += wgt * (ddelta[o] * t.a[li][i] + delta[o] * da[li][i]);
        }
        hv[ls.b_off + o] += wgt * ddelta[o];
      }
      if (li == 0) break;
      const auto& lsp = L[li - 1];
      Vec wd(ls.in, 0.0), dwd(ls.in, 0.0);
      for (std::size_t i = 0; i < ls.in; ++i) {
        double acc = 0.0, dacc = 0.0;
        for (std::size_t o = 0; o < ls.out; ++o) {
          const double w = m.params[ls.w_off + o * ls.in + i];
          const double dw = v[ls.w_off + o * ls.in + i];
          acc += w * delta[o];
          dacc += dw * delta[o] + w * ddelta[o];
        }
        wd[i] = acc;
        dwd[i] = dacc;
      }
      Vec ndelta(ls.in), nddelta(ls.in);
      for (std::size_t i = 0; i < ls.in; ++i) {
        const double f1 = activation_d1(actk, t.z[li - 1][i]);
        const double f2 = activation_d2(actk, t.z[li - 1][i]);
        ndelta[i] = f1 * wd[i];
        nddelta[i] = f2 * dz[li - 1][i] * wd[i] + f1 * dwd[i];
      }
      (void)lsp;
      delta = std::move(ndelta);
      ddelta = std::move(nddelta);
    }
  }
  if (l2 > 0) axpy(l2, v, hv);
  return hv;
}

}  // namespace ifval
