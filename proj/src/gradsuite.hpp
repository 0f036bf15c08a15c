#ifndef WEAKMAP_GRADSUITE_HPP_
#define WEAKMAP_GRADSUITE_HPP_

#include <cstdint>
#include <string>
#include <vector>

namespace weakmap {

struct GradCheckEntry {
  std::string op;
  double max_rel_err = 0.0;
  int seeds = 0;
};

// Finite-difference check of every differentiable operator and the full
// model composite at small shapes, several seeds each. Seeds that land
// within 1e-3 of a relu kink or a top-k tie are redrawn. eps = 1e-5.
std::vector<GradCheckEntry> gradcheck_suite(uint64_t base_seed, int seeds_per_op = 3);

// Table with one "op max_rel_err PASS|FAIL" line per operator plus a
// verdict line; pass threshold 1e-4.
std::string format_gradcheck(const std::vector<GradCheckEntry>& entries);
bool gradcheck_all_pass(const std::vector<GradCheckEntry>& entries);

}  // namespace weakmap

#endif  // WEAKMAP_GRADSUITE_HPP_
