#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "ifval/linalg.hpp"
#include "ifval/rng.hpp"

namespace ifval {

struct LabeledInstance {
  Vec features;
  std::size_t label = 0;
};

struct Dataset {
  std::vector<LabeledInstance> instances;
  std::size_t n_features = 0;
  std::size_t n_classes = 0;
  std::string name;

  std::size_t size() const { return instances.size(); }
};

struct StandardizationStats {
  Vec mean;
  Vec std;
  std::vector<bool> clamped;  // features whose std fell below 1e-12
};

// Iris-style CSV: 4 real columns + class name or index, optional header.
Dataset load_iris(const std::string& path);

// Generic CSV round-trip (columns f0..f{d-1},label).
void save_csv(const Dataset& ds, const std::string& path);
Dataset load_csv(const std::string& path, const std::string& name = "csv");

// IDX big-endian binary pair (images magic 0x803, labels 0x801).
// Pixels scaled to [0,1], images flattened.
Dataset load_idx(const std::string& images_path, const std::string& labels_path,
                 std::optional<std::size_t> limit = std::nullopt);

// k Gaussian clusters with unit-separated means, balanced within +-1.
Dataset synth_blobs(std::size_t n, std::size_t d, std::size_t k, double spread,
                    RngStream& stream);

// Stratified disjoint partition; deterministic per stream.
std::pair<Dataset, Dataset> split(const Dataset& ds, double test_fraction,
                                  RngStream& stream);

// Fit on train, apply train stats to train and every other dataset.
StandardizationStats standardize(Dataset& train, std::vector<Dataset*> others);

}  // namespace ifval
