#include "ifval/config.hpp"

#include <algorithm>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

namespace ifval {

std::string to_string(Arm a) {
  switch (a) {
    case Arm::none: return "none";
    case Arm::weight_decay: return "weight_decay";
    case Arm::swa: return "swa";
    case Arm::weight_decay_swa: return "weight_decay+swa";
    case Arm::bnn: return "bnn";
  }
  return "none";
}

Arm arm_from_string(const std::string& s) {
  if (s == "none") return Arm::none;
  if (s == "weight_decay") return Arm::weight_decay;
  if (s == "swa") return Arm::swa;
  if (s == "weight_decay+swa") return Arm::weight_decay_swa;
  if (s == "bnn") return Arm::bnn;
  throw ConfigError("arms.arms", "unknown arm '" + s + "'");
}

void ExperimentConfig::validate() const {
  if (widths.empty()) throw ConfigError("model.widths", "must be non-empty");
  if (depths.empty()) throw ConfigError("model.depths", "must be non-empty");
  if (arms.empty()) throw ConfigError("arms.arms", "must be non-empty");
  if (weight_decay < 0) throw ConfigError("arms.weight_decay", "must be >= 0");
  if (!(train.lr > 0)) throw ConfigError("train.lr", "must be > 0");
  if (!(finetune_lr > 0)) throw ConfigError("protocol.finetune_lr", "must be > 0");
  if (protocol.repetitions < 1) {
    throw ConfigError("protocol.repetitions", "must be >= 1");
  }
  if (!(dataset.test_fraction > 0 && dataset.test_fraction < 1)) {
    throw ConfigError("dataset.test_fraction", "must be in (0,1)");
  }
  if (dataset.kind == DatasetKind::iris || dataset.kind == DatasetKind::csv) {
    if (dataset.path.empty()) throw ConfigError("dataset.path", "required");
  }
  if (dataset.kind == DatasetKind::idx) {
    if (dataset.images.empty()) throw ConfigError("dataset.images", "required");
    if (dataset.labels.empty()) throw ConfigError("dataset.labels", "required");
  }
}

std::vector<SweepCell> sweep_cells(const ExperimentConfig& cfg) {
  std::vector<SweepCell> cells;
  auto add = [&](Arm arm, std::size_t w, std::size_t d) {
    for (const auto& c : cells) {
      if (c.arm == arm && c.width == w && c.depth == d) return;
    }
    cells.push_back({arm, w, d});
  };
  for (Arm arm : cfg.arms) {
    for (std::size_t w : cfg.widths) add(arm, w, cfg.depths.front());
    for (std::size_t d : cfg.depths) add(arm, cfg.widths.front(), d);
  }
  return cells;
}

ModelSpec cell_model_spec(const ExperimentConfig& cfg, const SweepCell& cell,
                          std::size_t n_in, std::size_t n_out) {
  ModelSpec spec;
  spec.family = cell.arm == Arm::bnn ? ModelFamily::bnn : cfg.family;
  spec.arch.n_in = n_in;
  spec.arch.n_out = n_out;
  spec.arch.hidden_layers = cell.depth;
  spec.arch.hidden_width = cell.width;
  spec.arch.activation = cfg.activation;
  spec.init_logvar = cfg.init_logvar;
  spec.kl_weight = cfg.kl_weight;
  return spec;
}

TrainConfig cell_train_config(const ExperimentConfig& cfg, const SweepCell& cell) {
  TrainConfig t = cfg.train;
  switch (cell.arm) {
    case Arm::none:
    case Arm::bnn:
      t.weight_decay = 0.0;
      t.swa = false;
      break;
    case Arm::weight_decay:
      t.weight_decay = cfg.weight_decay;
      t.swa = false;
      break;
    case Arm::swa:
      t.weight_decay = 0.0;
      t.swa = true;
      break;
    case Arm::weight_decay_swa:
      t.weight_decay = cfg.weight_decay;
      t.swa = true;
      break;
  }
  return t;
}

LooProtocol cell_protocol(const ExperimentConfig& cfg, const SweepCell& cell) {
  LooProtocol p = cfg.protocol;
  p.train_cfg = cell_train_config(cfg, cell);
  p.finetune_cfg = p.train_cfg;
  p.finetune_cfg.lr = cfg.finetune_lr;
  p.finetune_cfg.swa = false;
  return p;
}

namespace {

using SectionMap = std::map<std::string, std::map<std::string, std::string>>;

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

SectionMap parse_sections(const std::string& text) {
  SectionMap out;
  std::istringstream in(text);
  std::string line, section;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']') {
        throw ConfigError("line " + std::to_string(lineno), "malformed section");
      }
      section = trim(line.substr(1, line.size() - 2));
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos || section.empty()) {
      throw ConfigError("line " + std::to_string(lineno), "expected key = value");
    }
    out[section][trim(line.substr(0, eq))] = trim(line.substr(eq + 1));
  }
  return out;
}

class Reader {
 public:
  explicit Reader(const SectionMap& m) : m_(m) {}

  bool has(const std::string& sec, const std::string& key) const {
    const auto s = m_.find(sec);
    return s != m_.end() && s->second.count(key) > 0;
  }
  std::string str(const std::string& sec, const std::string& key,
                  const std::string& fallback) const {
    return has(sec, key) ? m_.at(sec).at(key) : fallback;
  }
  double real(const std::string& sec, const std::string& key, double fallback) const {
    if (!has(sec, key)) return fallback;
    try {
      return std::stod(m_.at(sec).at(key));
    } catch (...) {
      throw ConfigError(sec + "." + key, "not a number");
    }
  }
  std::size_t count(const std::string& sec, const std::string& key,
                    std::size_t fallback) const {
    if (!has(sec, key)) return fallback;
    try {
      return static_cast<std::size_t>(std::stoull(m_.at(sec).at(key)));
    } catch (...) {
      throw ConfigError(sec + "." + key, "not a count");
    }
  }
  bool flag(const std::string& sec, const std::string& key, bool fallback) const {
    if (!has(sec, key)) return fallback;
    const std::string v = m_.at(sec).at(key);
    if (v == "true" || v == "1") return true;
    if (v == "false" || v == "0") return false;
    throw ConfigError(sec + "." + key, "expected true/false");
  }
  std::vector<std::string> list(const std::string& sec, const std::string& key) const {
    std::vector<std::string> out;
    std::istringstream in(m_.at(sec).at(key));
    std::string item;
    while (std::getline(in, item, ',')) {
      item = trim(item);
      if (!item.empty()) out.push_back(item);
    }
    return out;
  }

 private:
  const SectionMap& m_;
};

void reject_unknown_keys(const SectionMap& sections) {
  static const std::map<std::string, std::set<std::string>> known = {
      {"dataset",
       {"kind", "path", "images", "labels", "limit", "n", "d", "k", "spread",
        "test_fraction", "standardize"}},
      {"model",
       {"family", "widths", "depths", "activation", "init_logvar", "kl_weight"}},
      {"arms", {"arms", "weight_decay"}},
      {"train",
       {"optimizer", "lr", "epochs", "batch_size", "plateau_patience",
        "plateau_factor", "min_lr"}},
      {"protocol",
       {"selection", "k", "retrain", "finetune_epochs", "finetune_lr",
        "test_point", "repetitions", "base_seed", "trajectories"}},
      {"influence",
       {"method", "damping", "scope", "lissa_depth", "lissa_scale",
        "lissa_repeats", "lissa_batch"}},
      {"output", {"dir"}},
  };
  for (const auto& [section, entries] : sections) {
    const auto it = known.find(section);
    if (it == known.end()) throw ConfigError(section, "unknown section");
    for (const auto& [key, value] : entries) {
      if (!it->second.count(key)) {
        throw ConfigError(section + "." + key, "unknown key");
      }
    }
  }
}

}  // namespace

ExperimentConfig parse_config(const std::string& text) {
  const SectionMap sections = parse_sections(text);
  reject_unknown_keys(sections);
  const Reader r(sections);
  ExperimentConfig c;

  const std::string kind = r.str("dataset", "kind", "iris");
  if (kind == "iris") c.dataset.kind = DatasetKind::iris;
  else if (kind == "csv") c.dataset.kind = DatasetKind::csv;
  else if (kind == "idx") c.dataset.kind = DatasetKind::idx;
  else if (kind == "blobs") c.dataset.kind = DatasetKind::blobs;
  else throw ConfigError("dataset.kind", "unknown kind '" + kind + "'");
  c.dataset.path = r.str("dataset", "path", c.dataset.path);
  c.dataset.images = r.str("dataset", "images", c.dataset.images);
  c.dataset.labels = r.str("dataset", "labels", c.dataset.labels);
  c.dataset.limit = r.count("dataset", "limit", c.dataset.limit);
  c.dataset.n = r.count("dataset", "n", c.dataset.n);
  c.dataset.d = r.count("dataset", "d", c.dataset.d);
  c.dataset.k = r.count("dataset", "k", c.dataset.k);
  c.dataset.spread = r.real("dataset", "spread", c.dataset.spread);
  c.dataset.test_fraction =
      r.real("dataset", "test_fraction", c.dataset.test_fraction);
  c.dataset.standardize = r.flag("dataset", "standardize", c.dataset.standardize);

  c.family = model_family_from_string(r.str("model", "family", "mlp"));
  if (r.has("model", "widths")) {
    c.widths.clear();
    for (const auto& w : r.list("model", "widths")) {
      c.widths.push_back(std::stoull(w));
    }
  }
  if (r.has("model", "depths")) {
    c.depths.clear();
    for (const auto& d : r.list("model", "depths")) {
      c.depths.push_back(std::stoull(d));
    }
  }
  c.activation = activation_from_string(r.str("model", "activation", "relu"));
  c.init_logvar = r.real("model", "init_logvar", c.init_logvar);
  c.kl_weight = r.real("model", "kl_weight", c.kl_weight);

  if (r.has("arms", "arms")) {
    c.arms.clear();
    for (const auto& a : r.list("arms", "arms")) c.arms.push_back(arm_from_string(a));
  }
  c.weight_decay = r.real("arms", "weight_decay", c.weight_decay);

  const std::string opt = r.str("train", "optimizer", "adam");
  if (opt == "adam") c.train.optimizer = OptimizerKind::adam;
  else if (opt == "gd") c.train.optimizer = OptimizerKind::gd;
  else throw ConfigError("train.optimizer", "unknown optimizer '" + opt + "'");
  c.train.lr = r.real("train", "lr", c.train.lr);
  c.train.epochs = r.count("train", "epochs", c.train.epochs);
  c.train.batch_size = r.count("train", "batch_size", c.train.batch_size);
  c.train.plateau_patience =
      r.count("train", "plateau_patience", c.train.plateau_patience);
  c.train.plateau_factor = r.real("train", "plateau_factor", c.train.plateau_factor);
  c.train.min_lr = r.real("train", "min_lr", c.train.min_lr);

  const std::string sel = r.str("protocol", "selection", "top_loss");
  if (sel == "top_loss") c.protocol.selection = SelectionKind::top_loss;
  else if (sel == "top_influence") c.protocol.selection = SelectionKind::top_influence;
  else throw ConfigError("protocol.selection", "unknown selection '" + sel + "'");
  c.protocol.k = r.count("protocol", "k", c.protocol.k);
  const std::string retrain = r.str("protocol", "retrain", "from_optimal");
  if (retrain == "from_optimal") c.protocol.retrain = RetrainKind::from_optimal;
  else if (retrain == "from_scratch") c.protocol.retrain = RetrainKind::from_scratch;
  else throw ConfigError("protocol.retrain", "unknown retrain '" + retrain + "'");
  c.protocol.finetune_epochs =
      r.count("protocol", "finetune_epochs", c.protocol.finetune_epochs);
  c.finetune_lr = r.real("protocol", "finetune_lr", c.finetune_lr);
  const std::string tp = r.str("protocol", "test_point", "max_loss");
  if (tp == "max_loss") {
    c.protocol.test_point = TestPointKind::max_loss;
  } else {
    c.protocol.test_point = TestPointKind::explicit_index;
    try {
      c.protocol.test_index = std::stoull(tp);
    } catch (...) {
      throw ConfigError("protocol.test_point", "expected max_loss or an index");
    }
  }
  c.protocol.repetitions = r.count("protocol", "repetitions", c.protocol.repetitions);
  c.protocol.base_seed = r.count("protocol", "base_seed", c.protocol.base_seed);
  c.protocol.capture_trajectories =
      r.flag("protocol", "trajectories", c.protocol.capture_trajectories);

  const std::string method = r.str("influence", "method", "direct_solve");
  if (method == "direct_solve") c.protocol.influence = InfluenceMethod::direct_solve;
  else if (method == "lissa") c.protocol.influence = InfluenceMethod::lissa;
  else throw ConfigError("influence.method", "unknown method '" + method + "'");
  c.protocol.damping = r.real("influence", "damping", c.protocol.damping);
  const std::string scope = r.str("influence", "scope", "last_layer");
  if (scope == "last_layer") c.protocol.scope = HessianScope::last_layer;
  else if (scope == "all_params") c.protocol.scope = HessianScope::all_params;
  else throw ConfigError("influence.scope", "unknown scope '" + scope + "'");
  c.protocol.lissa.recursion_depth =
      r.count("influence", "lissa_depth", c.protocol.lissa.recursion_depth);
  c.protocol.lissa.scale = r.real("influence", "lissa_scale", c.protocol.lissa.scale);
  c.protocol.lissa.repeats =
      r.count("influence", "lissa_repeats", c.protocol.lissa.repeats);
  c.protocol.lissa.batch_size =
      r.count("influence", "lissa_batch", c.protocol.lissa.batch_size);

  c.output_dir = r.str("output", "dir", c.output_dir);

  c.validate();
  return c;
}

ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("path", "cannot open " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_config(buf.str());
}

std::string serialize_config(const ExperimentConfig& c) {
  std::ostringstream out;
  out.precision(17);
  out << "[dataset]\n";
  switch (c.dataset.kind) {
    case DatasetKind::iris: out << "kind = iris\n"; break;
    case DatasetKind::csv: out << "kind = csv\n"; break;
    case DatasetKind::idx: out << "kind = idx\n"; break;
    case DatasetKind::blobs: out << "kind = blobs\n"; break;
  }
  if (!c.dataset.path.empty()) out << "path = " << c.dataset.path << "\n";
  if (!c.dataset.images.empty()) out << "images = " << c.dataset.images << "\n";
  if (!c.dataset.labels.empty()) out << "labels = " << c.dataset.labels << "\n";
  if (c.dataset.limit) out << "limit = " << c.dataset.limit << "\n";
  if (c.dataset.kind == DatasetKind::blobs) {
    out << "n = " << c.dataset.n << "\nd = " << c.dataset.d << "\nk = "
        << c.dataset.k << "\nspread = " << c.dataset.spread << "\n";
  }
  out << "test_fraction = " << c.dataset.test_fraction << "\n";
  out << "standardize = " << (c.dataset.standardize ? "true" : "false") << "\n";

  out << "\n[model]\n";
  out << "family = " << to_string(c.family) << "\n";
  out << "widths = ";
  for (std::size_t i = 0; i < c.widths.size(); ++i) {
    out << (i ? "," : "") << c.widths[i];
  }
  out << "\ndepths = ";
  for (std::size_t i = 0; i < c.depths.size(); ++i) {
    out << (i ? "," : "") << c.depths[i];
  }
  out << "\nactivation = " << to_string(c.activation) << "\n";
  out << "init_logvar = " << c.init_logvar << "\n";
  out << "kl_weight = " << c.kl_weight << "\n";

  out << "\n[arms]\narms = ";
  for (std::size_t i = 0; i < c.arms.size(); ++i) {
    out << (i ? "," : "") << to_string(c.arms[i]);
  }
  out << "\nweight_decay = " << c.weight_decay << "\n";

  out << "\n[train]\n";
  out << "optimizer = " << (c.train.optimizer == OptimizerKind::adam ? "adam" : "gd")
      << "\n";
  out << "lr = " << c.train.lr << "\n";
  out << "epochs = " << c.train.epochs << "\n";
  out << "batch_size = " << c.train.batch_size << "\n";
  out << "plateau_patience = " << c.train.plateau_patience << "\n";
  out << "plateau_factor = " << c.train.plateau_factor << "\n";
  out << "min_lr = " << c.train.min_lr << "\n";

  out << "\n[protocol]\n";
  out << "selection = " << to_string(c.protocol.selection) << "\n";
  out << "k = " << c.protocol.k << "\n";
  out << "retrain = " << to_string(c.protocol.retrain) << "\n";
  out << "finetune_epochs = " << c.protocol.finetune_epochs << "\n";
  out << "finetune_lr = " << c.finetune_lr << "\n";
  if (c.protocol.test_point == TestPointKind::max_loss) {
    out << "test_point = max_loss\n";
  } else {
    out << "test_point = " << c.protocol.test_index << "\n";
  }
  out << "repetitions = " << c.protocol.repetitions << "\n";
  out << "base_seed = " << c.protocol.base_seed << "\n";
  out << "trajectories = " << (c.protocol.capture_trajectories ? "true" : "false")
      << "\n";

  out << "\n[influence]\n";
  out << "method = " << to_string(c.protocol.influence) << "\n";
  out << "damping = " << c.protocol.damping << "\n";
  out << "scope = " << to_string(c.protocol.scope) << "\n";
  out << "lissa_depth = " << c.protocol.lissa.recursion_depth << "\n";
  out << "lissa_scale = " << c.protocol.lissa.scale << "\n";
  out << "lissa_repeats = " << c.protocol.lissa.repeats << "\n";
  out << "lissa_batch = " << c.protocol.lissa.batch_size << "\n";

  out << "\n[output]\ndir = " << c.output_dir << "\n";
  return out.str();
}

}  // namespace ifval
