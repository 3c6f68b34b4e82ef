#pragma once

#include <cstddef>
#include <stdexcept>
#include <vector>

#include "mirrams/rng.hpp"

namespace mirrams {

class MilabError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Joint distribution over two finite alphabets, row-major p(u,v). Alphabets
// are capped at 64 symbols; the table must be nonnegative and sum to 1.
class DiscreteJoint {
 public:
  DiscreteJoint(std::size_t nu, std::size_t nv, std::vector<double> table);

  static DiscreteJoint random(std::size_t nu, std::size_t nv, Rng& rng);

  std::size_t nu() const { return nu_; }
  std::size_t nv() const { return nv_; }
  double p(std::size_t u, std::size_t v) const { return table_[u * nv_ + v]; }

  std::vector<double> marginal_u() const;
  std::vector<double> marginal_v() const;
  // P(V | U=u); requires p(u) > 0
  std::vector<double> conditional_v(std::size_t u) const;
  // joint of (xi(U), V) by exact marginalization over preimages
  DiscreteJoint apply_map(const std::vector<std::size_t>& xi) const;

 private:
  std::size_t nu_, nv_;
  std::vector<double> table_;
};

// All in nats; 0 ln 0 := 0.
double entropy(const std::vector<double>& p);
double conditional_entropy_v_given_u(const DiscreteJoint& j);
double mutual_information(const DiscreteJoint& j);
double kl_divergence(const std::vector<double>& p, const std::vector<double>& q);

inline double to_bits(double nats) { return nats / 0.6931471805599453094; }

struct PropositionReport {
  double mi_uv = 0.0;        // I(U;V)
  double mi_xi_v = 0.0;      // I(xi(U);V)
  double delta = 0.0;        // I(U;V) - I(xi(U);V)
  double expected_kl = 0.0;  // E_U[ D_KL(P(V|u) || P(V|xi(u))) ]
  double max_kl = 0.0;       // over u with p(u) > 0

  // delta equals the expected KL exactly, is bounded by the max KL, and is
  // nonnegative (information loss under a deterministic map).
  bool holds(double tol = 1e-10) const;
};

PropositionReport verify_proposition(const DiscreteJoint& joint, const std::vector<std::size_t>& xi);

}  // namespace mirrams
