#pragma once

#include <cmath>
#include <numeric>
#include <span>
#include <vector>

#include "dauction/errors.hpp"
#include "dauction/rng.hpp"

namespace dauction {

using Grad = std::vector<double>;

inline double dot(std::span<const double> a, std::span<const double> b) {
  require(a.size() == b.size(), "dot: length mismatch");
  return std::inner_product(a.begin(), a.end(), b.begin(), 0.0);
}

inline double norm(std::span<const double> a) { return std::sqrt(dot(a, a)); }

// g - <g,h>/|h|^2 h; g unchanged when h is zero.
inline Grad project(std::span<const double> g, std::span<const double> h) {
  require(g.size() == h.size(), "project: length mismatch");
  Grad out(g.begin(), g.end());
  const double hh = dot(h, h);
  if (hh == 0.0) return out;
  const double c = dot(g, h) / hh;
  for (std::size_t k = 0; k < out.size(); ++k) out[k] -= c * h[k];
  return out;
}

struct GradientSet {
  Grad g0, g1, g2;

  void validate() const {
    require(g1.size() == g0.size() && g2.size() == g0.size(), "gradient set: length mismatch");
  }
};

// Which projections fired during one conflict-elimination pass.
struct ConflictFlags {
  int first = 1;  // index of g_i in the draw (1 or 2)
  bool g0_first = false;
  bool g0_second = false;
  bool mutual = false;

  bool any() const { return g0_first || g0_second || mutual; }
};

// Conditional projections in order: g0 against g_i, g0 against g_j with g_i
// removed, then g1 and g2 against each other using the original pair. The
// order (i, j) is `first` and the other index.
inline GradientSet eliminate_conflicts(const GradientSet& in, int first,
                                       ConflictFlags* flags = nullptr) {
  in.validate();
  require(first == 1 || first == 2, "eliminate_conflicts: first must be 1 or 2");
  const Grad& gi = first == 1 ? in.g1 : in.g2;
  const Grad& gj = first == 1 ? in.g2 : in.g1;
  GradientSet out = in;
  ConflictFlags f;
  f.first = first;
  if (dot(out.g0, gi) < 0.0) {
    out.g0 = project(out.g0, gi);
    f.g0_first = true;
  }
  const Grad gj_perp = project(gj, gi);
  if (dot(out.g0, gj_perp) < 0.0) {
    out.g0 = project(out.g0, gj_perp);
    f.g0_second = true;
  }
  if (dot(in.g1, in.g2) < 0.0) {
    out.g1 = project(in.g1, in.g2);
    out.g2 = project(in.g2, in.g1);
    f.mutual = true;
  }
  if (flags != nullptr) *flags = f;
  return out;
}

// Draws the order (i, j) as a uniform permutation of {1, 2}.
inline GradientSet eliminate_conflicts(const GradientSet& in, Rng& rng,
                                       ConflictFlags* flags = nullptr) {
  const int first = std::uniform_int_distribution<int>(1, 2)(rng);
  return eliminate_conflicts(in, first, flags);
}

inline Grad merge(const GradientSet& set, double lambda1, double lambda2) {
  set.validate();
  require(lambda1 >= 0.0 && lambda2 >= 0.0, "merge: weights must be nonnegative");
  Grad out = set.g0;
  for (std::size_t k = 0; k < out.size(); ++k) out[k] += lambda1 * set.g1[k] + lambda2 * set.g2[k];
  return out;
}

}  // namespace dauction
