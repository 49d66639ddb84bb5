#pragma once

#include <string>

#include "ifval/loo.hpp"

namespace ifval {

// Binary little-endian container: magic "IFVC", format-version byte,
// model-kind tag, arch fields, then flat parameter arrays (BNN stores
// means and logvars separately plus kl_weight).
void save_checkpoint(const MlpModel& m, const std::string& path);
void save_checkpoint(const BnnModel& m, const std::string& path);
void save_checkpoint(const AnyModel& m, const std::string& path);

AnyModel load_checkpoint(const std::string& path);

}  // namespace ifval
