#pragma once

#include <string>
#include <vector>

namespace grace {

struct GradCheckEntry {
  std::string component;
  double max_rel_err = 0;
  double tolerance = 0;
  bool pass = false;
};

/// Finite-difference validation of every analytic gradient on seeded 6-10
/// node graphs: the primitive ops, both spmm kinds, the masked feature
/// product, each encoder architecture and activation through the full
/// contrastive pipeline, the projection head, and both objectives.
std::vector<GradCheckEntry> run_gradcheck_suite();

}  // namespace grace
