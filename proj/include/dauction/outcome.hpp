#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>

#include "dauction/market.hpp"

namespace dauction {

// Allocation Q (m x n units), consumer prices p and supplier offers s (both
// total currency, not per unit).
struct Outcome {
  Eigen::MatrixXd Q;
  Eigen::VectorXd p;
  Eigen::VectorXd s;

  static Outcome empty(int m, int n) {
    return {Eigen::MatrixXd::Zero(m, n), Eigen::VectorXd::Zero(m), Eigen::VectorXd::Zero(n)};
  }

  double profit() const { return p.sum() - s.sum(); }
};

// Consumer utilities v_true_i * sum_j Q_ij - p_i.
inline Eigen::VectorXd utilities_consumers(std::span<const double> v_true, const Outcome& out) {
  require(static_cast<Eigen::Index>(v_true.size()) == out.p.size(),
          "utilities_consumers: length mismatch");
  Eigen::VectorXd u = -out.p;
  for (Eigen::Index i = 0; i < out.p.size(); ++i) u(i) += v_true[i] * out.Q.row(i).sum();
  return u;
}

// Supplier utilities s_j - w_true_j * sum_i Q_ij.
inline Eigen::VectorXd utilities_suppliers(std::span<const double> w_true, const Outcome& out) {
  require(static_cast<Eigen::Index>(w_true.size()) == out.s.size(),
          "utilities_suppliers: length mismatch");
  Eigen::VectorXd h = out.s;
  for (Eigen::Index j = 0; j < out.s.size(); ++j) h(j) -= w_true[j] * out.Q.col(j).sum();
  return h;
}

// Counts of violated feasibility / ex-post IR conditions. Each check allows
// `tol` times the magnitude of the bound, which absorbs the rounding of a
// single-precision forward pass re-summed in double.
struct OutcomeCheck {
  int negative = 0;
  int demand = 0;
  int supply = 0;
  int consumer_ir = 0;
  int supplier_ir = 0;

  int ir_violations() const { return consumer_ir + supplier_ir; }
  bool ok() const { return negative + demand + supply + consumer_ir + supplier_ir == 0; }
};

inline OutcomeCheck check_outcome(const Outcome& out, const MarketInstance& inst,
                                  double tol = 1e-5) {
  OutcomeCheck c;
  const auto slack = [tol](double bound) { return tol * std::max(1.0, std::abs(bound)); };
  if (out.Q.minCoeff() < 0.0 || out.p.minCoeff() < 0.0 || out.s.minCoeff() < 0.0) ++c.negative;
  for (int i = 0; i < inst.m; ++i) {
    const double row = out.Q.row(i).sum();
    if (row > inst.x[i] + slack(inst.x[i])) ++c.demand;
    const double cap = inst.v[i] * row;
    if (out.p(i) > cap + slack(cap)) ++c.consumer_ir;
  }
  for (int j = 0; j < inst.n; ++j) {
    const double col = out.Q.col(j).sum();
    if (col > inst.y[j] + slack(inst.y[j])) ++c.supply;
    const double floor = inst.w[j] * col;
    if (out.s(j) < floor - slack(floor)) ++c.supplier_ir;
  }
  return c;
}

}  // namespace dauction
