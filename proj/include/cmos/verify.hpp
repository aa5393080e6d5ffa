#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "cmos/gradcheck.hpp"
#include "cmos/model.hpp"

namespace cmos {

/// Gradient-check suites. `core` covers conv2d, dense and softmax/cross-entropy;
/// `all` runs every suite.
enum class GradScope { all, core, conv_ki, nl_seg, nl_sub, model };

GradScope parse_grad_scope(const std::string& name);
std::string to_string(GradScope scope);

struct GradCheckEntry {
  std::string op;        // e.g. "nl-sub B=3"
  std::string argument;  // differentiated tensor, e.g. "phi_w"
  GradCheckResult result;
};

/// Runs the suite at `points` seeded random points per check.
std::vector<GradCheckEntry> run_gradchecks(GradScope scope, std::uint64_t seed = 0, int points = 5);

/// Tiny model used by the `model` suite: channels [2,2,2,2], fc 8, input [B,16,12,4].
ModelConfig tiny_model_config();

}  // namespace cmos
