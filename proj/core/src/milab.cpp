#include "mirrams/milab.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace mirrams {

DiscreteJoint::DiscreteJoint(std::size_t nu, std::size_t nv, std::vector<double> table)
    : nu_(nu), nv_(nv), table_(std::move(table)) {
  if (nu == 0 || nv == 0 || nu > 64 || nv > 64)
    throw MilabError("joint: alphabet sizes must be in [1,64], got " + std::to_string(nu) + "x" + std::to_string(nv));
  if (table_.size() != nu * nv)
    throw MilabError("joint: table has " + std::to_string(table_.size()) + " entries, expected " +
                     std::to_string(nu * nv));
  double sum = 0.0;
  for (double x : table_) {
    if (!(x >= 0.0)) throw MilabError("joint: negative or non-finite probability");
    sum += x;
  }
  if (std::abs(sum - 1.0) > 1e-12) throw MilabError("joint: table sums to " + std::to_string(sum));
}

DiscreteJoint DiscreteJoint::random(std::size_t nu, std::size_t nv, Rng& rng) {
  std::vector<double> t(nu * nv);
  double sum = 0.0;
  for (double& x : t) {
    x = -std::log(1.0 - rng.uniform());  // Exp(1) draws normalize to a flat Dirichlet
    sum += x;
  }
  for (double& x : t) x /= sum;
  // renormalize exactly against accumulated rounding
  double s2 = 0.0;
  for (double x : t) s2 += x;
  for (double& x : t) x /= s2;
  return DiscreteJoint(nu, nv, std::move(t));
}

std::vector<double> DiscreteJoint::marginal_u() const {
  std::vector<double> m(nu_, 0.0);
  for (std::size_t u = 0; u < nu_; ++u)
    for (std::size_t v = 0; v < nv_; ++v) m[u] += table_[u * nv_ + v];
  return m;
}

std::vector<double> DiscreteJoint::marginal_v() const {
  std::vector<double> m(nv_, 0.0);
  for (std::size_t u = 0; u < nu_; ++u)
    for (std::size_t v = 0; v < nv_; ++v) m[v] += table_[u * nv_ + v];
  return m;
}

std::vector<double> DiscreteJoint::conditional_v(std::size_t u) const {
  if (u >= nu_) throw MilabError("conditional_v: symbol out of range");
  double pu = 0.0;
  for (std::size_t v = 0; v < nv_; ++v) pu += table_[u * nv_ + v];
  if (pu <= 0.0) throw MilabError("conditional_v: conditioning on zero-probability symbol " + std::to_string(u));
  std::vector<double> c(nv_);
  for (std::size_t v = 0; v < nv_; ++v) c[v] = table_[u * nv_ + v] / pu;
  return c;
}

DiscreteJoint DiscreteJoint::apply_map(const std::vector<std::size_t>& xi) const {
  if (xi.size() != nu_) throw MilabError("apply_map: map defined on " + std::to_string(xi.size()) +
                                         " symbols, joint has " + std::to_string(nu_));
  std::size_t nw = 0;
  for (std::size_t w : xi) nw = std::max(nw, w + 1);
  std::vector<double> t(nw * nv_, 0.0);
  for (std::size_t u = 0; u < nu_; ++u)
    for (std::size_t v = 0; v < nv_; ++v) t[xi[u] * nv_ + v] += table_[u * nv_ + v];
  return DiscreteJoint(nw, nv_, std::move(t));
}

double entropy(const std::vector<double>& p) {
  double h = 0.0;
  for (double x : p) {
    if (!(x >= 0.0)) throw MilabError("entropy: negative or non-finite probability");
    if (x > 0.0) h -= x * std::log(x);
  }
  return h;
}

double conditional_entropy_v_given_u(const DiscreteJoint& j) {
  // H(V|U) = -sum p(u,v) ln p(v|u)
  double h = 0.0;
  const auto mu = j.marginal_u();
  for (std::size_t u = 0; u < j.nu(); ++u) {
    if (mu[u] <= 0.0) continue;
    for (std::size_t v = 0; v < j.nv(); ++v) {
      const double puv = j.p(u, v);
      if (puv > 0.0) h -= puv * std::log(puv / mu[u]);
    }
  }
  return h;
}

double mutual_information(const DiscreteJoint& j) {
  return entropy(j.marginal_v()) - conditional_entropy_v_given_u(j);
}

double kl_divergence(const std::vector<double>& p, const std::vector<double>& q) {
  if (p.size() != q.size()) throw MilabError("kl: length mismatch");
  double d = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (p[i] > 0.0) {
      if (q[i] <= 0.0) throw MilabError("kl: support violation at symbol " + std::to_string(i));
      d += p[i] * std::log(p[i] / q[i]);
    }
  }
  return d;
}

bool PropositionReport::holds(double tol) const {
  return std::abs(delta - expected_kl) <= tol && delta <= max_kl + tol && delta >= -tol;
}

PropositionReport verify_proposition(const DiscreteJoint& joint, const std::vector<std::size_t>& xi) {
  PropositionReport r;
  const DiscreteJoint mapped = joint.apply_map(xi);
  r.mi_uv = mutual_information(joint);
  r.mi_xi_v = mutual_information(mapped);
  r.delta = r.mi_uv - r.mi_xi_v;
  const auto mu = joint.marginal_u();
  for (std::size_t u = 0; u < joint.nu(); ++u) {
    if (mu[u] <= 0.0) continue;
    const double kl = kl_divergence(joint.conditional_v(u), mapped.conditional_v(xi[u]));
    r.expected_kl += mu[u] * kl;
    r.max_kl = std::max(r.max_kl, kl);
  }
  return r;
}

}  // namespace mirrams
