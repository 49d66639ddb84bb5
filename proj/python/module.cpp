// Python bindings for the core operations: datasets, training, influence
// estimation, leave-one-out validation, and the evaluation statistics.

#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "ifval/checkpoint.hpp"
#include "ifval/config.hpp"
#include "ifval/hessian.hpp"
#include "ifval/loo.hpp"
#include "ifval/stats.hpp"

namespace py = pybind11;
using namespace ifval;

namespace {

HessianScope scope_from_string(const std::string& s) {
  if (s == "last_layer") return HessianScope::last_layer;
  if (s == "all_params") return HessianScope::all_params;
  throw std::invalid_argument("unknown scope: " + s);
}

InfluenceMethod method_from_string(const std::string& s) {
  if (s == "direct_solve") return InfluenceMethod::direct_solve;
  if (s == "lissa") return InfluenceMethod::lissa;
  throw std::invalid_argument("unknown influence method: " + s);
}

ModelSpec make_spec(const std::string& family, std::size_t n_in,
                    std::size_t n_out, std::size_t width, std::size_t depth,
                    const std::string& activation) {
  ModelSpec spec;
  spec.family = model_family_from_string(family);
  spec.arch.n_in = n_in;
  spec.arch.n_out = n_out;
  spec.arch.hidden_width = width;
  spec.arch.hidden_layers = depth;
  spec.arch.activation = activation_from_string(activation);
  return spec;
}

struct PyModel {
  AnyModel model;
};

}  // namespace

PYBIND11_MODULE(_ifval, m) {
  m.doc() = "influence-function validation core";

  py::class_<LabeledInstance>(m, "LabeledInstance")
      .def(py::init<>())
      .def_readwrite("features", &LabeledInstance::features)
      .def_readwrite("label", &LabeledInstance::label);

  py::class_<Dataset>(m, "Dataset")
      .def(py::init<>())
      .def_readonly("n_features", &Dataset::n_features)
      .def_readonly("n_classes", &Dataset::n_classes)
      .def_readonly("name", &Dataset::name)
      .def("__len__", &Dataset::size)
      .def("instance",
           [](const Dataset& ds, std::size_t i) {
             if (i >= ds.size()) throw py::index_error();
             return ds.instances[i];
           })
      .def("labels", [](const Dataset& ds) {
        std::vector<std::size_t> out;
        for (const auto& z : ds.instances) out.push_back(z.label);
        return out;
      });

  m.def("load_iris", &load_iris, py::arg("path"));
  m.def("load_csv", &load_csv, py::arg("path"), py::arg("name") = "csv");
  m.def(
      "load_idx",
      [](const std::string& images, const std::string& labels, std::size_t limit) {
        return load_idx(images, labels,
                        limit ? std::optional(limit) : std::nullopt);
      },
      py::arg("images"), py::arg("labels"), py::arg("limit") = 0);
  m.def(
      "synth_blobs",
      [](std::size_t n, std::size_t d, std::size_t k, double spread,
         std::uint64_t seed) {
        RngStream stream(seed);
        return synth_blobs(n, d, k, spread, stream);
      },
      py::arg("n"), py::arg("d"), py::arg("k"), py::arg("spread"), py::arg("seed"));
  m.def(
      "split",
      [](const Dataset& ds, double test_fraction, std::uint64_t seed) {
        RngStream stream(seed);
        return split(ds, test_fraction, stream);
      },
      py::arg("dataset"), py::arg("test_fraction"), py::arg("seed"));
  m.def(
      "standardize",
      [](Dataset& train, Dataset& test) {
        standardize(train, {&test});
        return py::make_tuple(train, test);
      },
      py::arg("train"), py::arg("test"),
      "Fits on train, applies to both; returns the transformed pair.");

  py::class_<PyModel>(m, "Model")
      .def("family",
           [](const PyModel& h) {
             return to_string(std::holds_alternative<MlpModel>(h.model)
                                  ? ModelFamily::mlp
                                  : ModelFamily::bnn);
           })
      .def("loss",
           [](const PyModel& h, const LabeledInstance& z) {
             return instance_data_loss(h.model, z);
           })
      .def("save", [](const PyModel& h, const std::string& path) {
        save_checkpoint(h.model, path);
      });

  m.def(
      "load_checkpoint",
      [](const std::string& path) { return PyModel{load_checkpoint(path)}; },
      py::arg("path"));

  m.def(
      "train_model",
      [](const Dataset& train_set, const std::string& family, std::size_t width,
         std::size_t depth, double lr, double weight_decay, std::size_t epochs,
         std::uint64_t seed, bool swa, const std::string& activation) {
        const ModelSpec spec = make_spec(family, train_set.n_features,
                                         train_set.n_classes, width, depth,
                                         activation);
        AnyModel model = build_model(spec, seed, train_set.size());
        TrainConfig cfg;
        cfg.lr = lr;
        cfg.weight_decay = weight_decay;
        cfg.epochs = epochs;
        cfg.seed = seed;
        cfg.swa = swa;
        const TrainLog log = train_model(model, train_set, cfg);
        return py::make_tuple(PyModel{std::move(model)}, log.epoch_loss);
      },
      py::arg("train"), py::arg("family") = "mlp", py::arg("width") = 5,
      py::arg("depth") = 1, py::arg("lr") = 1e-3, py::arg("weight_decay") = 0.0,
      py::arg("epochs") = 1000, py::arg("seed") = 0, py::arg("swa") = false,
      py::arg("activation") = "relu",
      "Trains an MLP or BNN; returns (model, per-epoch loss).");

  m.def(
      "influence_all",
      [](const PyModel& h, const Dataset& train_set,
         const LabeledInstance& z_test, double weight_decay, double damping,
         const std::string& scope, const std::string& method,
         std::uint64_t seed) {
        HessianOperator op;
        op.scope = scope_from_string(scope);
        op.sys = std::shared_ptr<ScopedSystem>(
            make_system(h.model, train_set, weight_decay, op.scope));
        op.damping = damping;
        InfluenceCalculator calc(op, method_from_string(method), LissaConfig{},
                                 seed);
        py::list out;
        for (const auto& rec : calc.influence_all(train_set, z_test, 0)) {
          py::dict d;
          d["train_index"] = rec.train_index;
          d["i_up_loss"] = rec.i_up_loss;
          d["epsilon"] = rec.epsilon;
          d["approx_loss_diff"] = rec.approx_loss_diff;
          out.append(std::move(d));
        }
        return out;
      },
      py::arg("model"), py::arg("train"), py::arg("z_test"),
      py::arg("weight_decay") = 0.0, py::arg("damping") = 0.01,
      py::arg("scope") = "last_layer", py::arg("method") = "direct_solve",
      py::arg("seed") = 0,
      "Influence of every training point on the test-point loss.");

  m.def(
      "top_eigenvalue",
      [](const PyModel& h, const Dataset& train_set, double weight_decay,
         const std::string& scope, std::uint64_t seed) {
        HessianOperator op;
        op.scope = scope_from_string(scope);
        op.sys = std::shared_ptr<ScopedSystem>(
            make_system(h.model, train_set, weight_decay, op.scope));
        op.damping = 0.0;
        const EigenEstimate est = top_eigenvalue(op, 2000, 1e-7, seed);
        return py::make_tuple(est.lambda_max, est.converged);
      },
      py::arg("model"), py::arg("train"), py::arg("weight_decay") = 0.0,
      py::arg("scope") = "all_params", py::arg("seed") = 7);

  m.def(
      "validation_run",
      [](const Dataset& train_set, const Dataset& test_set,
         const std::string& family, std::size_t width, std::size_t depth,
         double lr, double weight_decay, std::size_t epochs, std::size_t k,
         std::size_t finetune_epochs, const std::string& retrain,
         std::uint64_t seed) {
        const ModelSpec spec = make_spec(family, train_set.n_features,
                                         train_set.n_classes, width, depth,
                                         "relu");
        LooProtocol proto;
        proto.k = k;
        proto.finetune_epochs = finetune_epochs;
        proto.retrain = retrain == "from_scratch" ? RetrainKind::from_scratch
                                                  : RetrainKind::from_optimal;
        proto.train_cfg.lr = lr;
        proto.train_cfg.weight_decay = weight_decay;
        proto.train_cfg.epochs = epochs;
        proto.finetune_cfg = proto.train_cfg;
        proto.capture_trajectories = false;
        const ValidationReport report =
            single_validation_run(proto, spec, train_set, test_set, seed);
        py::dict out;
        out["spearman"] = report.spearman;
        out["pearson"] = report.pearson;
        out["epsilon"] = report.epsilon;
        out["test_index"] = report.test_index;
        py::list records;
        for (const auto& rec : report.records) {
          py::dict r;
          r["train_index"] = rec.train_index;
          r["approx_loss_diff"] = rec.approx_loss_diff;
          r["true_loss_diff"] = rec.true_loss_diff;
          r["excluded"] = rec.excluded;
          records.append(std::move(r));
        }
        out["records"] = std::move(records);
        return out;
      },
      py::arg("train"), py::arg("test"), py::arg("family") = "mlp",
      py::arg("width") = 5, py::arg("depth") = 1, py::arg("lr") = 1e-3,
      py::arg("weight_decay") = 0.005, py::arg("epochs") = 1000,
      py::arg("k") = 10, py::arg("finetune_epochs") = 500,
      py::arg("retrain") = "from_optimal", py::arg("seed") = 0,
      "One repetition of the approximate-vs-true loss-difference protocol.");

  m.def("spearman", &spearman, py::arg("a"), py::arg("b"));
  m.def("pearson", &pearson, py::arg("a"), py::arg("b"));
  m.def(
      "anova_oneway",
      [](const std::vector<Vec>& groups) {
        const AnovaResult r = anova_oneway(groups);
        py::dict out;
        out["f_stat"] = r.f_stat;
        out["p_value"] = r.p_value;
        out["df_between"] = r.df_between;
        out["df_within"] = r.df_within;
        out["degenerate"] = r.degenerate;
        return out;
      },
      py::arg("groups"));
  m.def(
      "interval95",
      [](const Vec& samples, const std::string& method) {
        const Interval iv = interval95(samples, method == "t"
                                                    ? IntervalMethod::t
                                                    : IntervalMethod::percentile);
        return py::make_tuple(iv.low, iv.high);
      },
      py::arg("samples"), py::arg("method") = "percentile");
}
