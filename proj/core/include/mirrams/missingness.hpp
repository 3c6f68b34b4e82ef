#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "mirrams/rng.hpp"

namespace mirrams {

class MissingnessError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// n x p binary matrix, 1 = observed. Immutable after construction in normal
// use; composable by elementwise AND.
class MaskMatrix {
 public:
  MaskMatrix() = default;
  MaskMatrix(std::size_t n, std::size_t p, std::uint8_t fill = 1) : n_(n), p_(p), bits_(n * p, fill) {}

  static MaskMatrix ones(std::size_t n, std::size_t p) { return MaskMatrix(n, p, 1); }

  std::size_t rows() const { return n_; }
  std::size_t cols() const { return p_; }
  std::uint8_t at(std::size_t i, std::size_t j) const { return bits_[i * p_ + j]; }
  void set(std::size_t i, std::size_t j, std::uint8_t v) { bits_[i * p_ + j] = v ? 1 : 0; }
  const std::vector<std::uint8_t>& data() const { return bits_; }

  double missing_rate() const;
  double column_missing_rate(std::size_t j) const;
  // observed indicators of column j, one per row
  std::vector<std::uint8_t> column(std::size_t j) const;
  std::vector<std::uint8_t> row(std::size_t i) const;
  MaskMatrix take_rows(const std::vector<std::size_t>& idx) const;

 private:
  std::size_t n_ = 0, p_ = 0;
  std::vector<std::uint8_t> bits_;
};

MaskMatrix compose_masks(const MaskMatrix& outer, const MaskMatrix& inner);

// Correlated-mask generator: z ~ N(0, P Sigma P^T) with Sigma[i][j] = rho^|i-j|,
// entry (i,j) missing iff z_ij <= Phi^{-1}(alpha).
struct Ar1Copula {
  std::size_t p = 0;
  double rho = 0.7;
  double alpha = 0.0;
  std::vector<std::size_t> permutation;  // bijection on [p]
  std::uint64_t seed = 0;
};

struct BernoulliMasker {
  double r = 0.0;  // per-variable additional masking probability
  std::uint64_t seed = 0;
};

// Missingness-shift scenario: one base AR(1) covariance, independently drawn
// train and test permutations, train/test marginal rates.
struct ShiftScenario {
  std::size_t p = 0;
  double rho = 0.7;
  double alpha_tr = 0.1;
  double alpha_ts = 0.3;
  std::uint64_t seed = 0;
  std::vector<std::size_t> perm_train, perm_test;
};

ShiftScenario make_scenario(std::size_t p, double rho, double alpha_tr, double alpha_ts, std::uint64_t seed);
Ar1Copula train_copula(const ShiftScenario& s);
// alpha stays sweepable at evaluation time; the permutation is fixed per scenario
Ar1Copula test_copula(const ShiftScenario& s, double alpha_ts);

MaskMatrix sample_shift_masks(const Ar1Copula& copula, std::size_t n, Rng& rng);
MaskMatrix sample_shift_masks(const Ar1Copula& copula, std::size_t n);

MaskMatrix sample_bernoulli_masks(double r, std::size_t n, std::size_t p, Rng& rng);
MaskMatrix sample_bernoulli_masks(const BernoulliMasker& masker, std::size_t n, std::size_t p);

void write_mask_csv(const std::string& path, const MaskMatrix& m);
MaskMatrix read_mask_csv(const std::string& path);

}  // namespace mirrams
