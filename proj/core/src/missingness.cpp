#include "mirrams/missingness.hpp"

#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

namespace mirrams {

double MaskMatrix::missing_rate() const {
  if (bits_.empty()) return 0.0;
  std::size_t zeros = 0;
  for (std::uint8_t b : bits_) zeros += (b == 0);
  return static_cast<double>(zeros) / static_cast<double>(bits_.size());
}

double MaskMatrix::column_missing_rate(std::size_t j) const {
  std::size_t zeros = 0;
  for (std::size_t i = 0; i < n_; ++i) zeros += (bits_[i * p_ + j] == 0);
  return static_cast<double>(zeros) / static_cast<double>(n_);
}

std::vector<std::uint8_t> MaskMatrix::column(std::size_t j) const {
  std::vector<std::uint8_t> c(n_);
  for (std::size_t i = 0; i < n_; ++i) c[i] = bits_[i * p_ + j];
  return c;
}

std::vector<std::uint8_t> MaskMatrix::row(std::size_t i) const {
  return std::vector<std::uint8_t>(bits_.begin() + static_cast<std::ptrdiff_t>(i * p_),
                                   bits_.begin() + static_cast<std::ptrdiff_t>((i + 1) * p_));
}

MaskMatrix MaskMatrix::take_rows(const std::vector<std::size_t>& idx) const {
  MaskMatrix out(idx.size(), p_, 0);
  for (std::size_t i = 0; i < idx.size(); ++i) {
    if (idx[i] >= n_) throw MissingnessError("take_rows: row " + std::to_string(idx[i]) + " out of range");
    for (std::size_t j = 0; j < p_; ++j) out.set(i, j, bits_[idx[i] * p_ + j]);
  }
  return out;
}

MaskMatrix compose_masks(const MaskMatrix& outer, const MaskMatrix& inner) {
  if (outer.rows() != inner.rows() || outer.cols() != inner.cols())
    throw MissingnessError("compose_masks: " + std::to_string(outer.rows()) + "x" + std::to_string(outer.cols()) +
                           " vs " + std::to_string(inner.rows()) + "x" + std::to_string(inner.cols()));
  MaskMatrix out(outer.rows(), outer.cols(), 0);
  for (std::size_t i = 0; i < outer.rows(); ++i)
    for (std::size_t j = 0; j < outer.cols(); ++j) out.set(i, j, outer.at(i, j) & inner.at(i, j));
  return out;
}

namespace {

std::vector<std::size_t> random_permutation(std::size_t p, Rng& rng) {
  std::vector<std::size_t> perm(p);
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  rng.shuffle(perm);
  return perm;
}

// lower Cholesky factor of the permuted AR(1) covariance
std::vector<double> cholesky_permuted_ar1(const Ar1Copula& c) {
  const std::size_t p = c.p;
  std::vector<double> a(p * p);
  for (std::size_t i = 0; i < p; ++i)
    for (std::size_t j = 0; j < p; ++j) {
      const double pi = static_cast<double>(c.permutation[i]), pj = static_cast<double>(c.permutation[j]);
      a[i * p + j] = std::pow(c.rho, std::abs(pi - pj));
    }
  std::vector<double> l(p * p, 0.0);
  for (std::size_t i = 0; i < p; ++i) {
    for (std::size_t j = 0; j <= i; ++j) {
      double s = a[i * p + j];
      for (std::size_t k = 0; k < j; ++k) s -= l[i * p + k] * l[j * p + k];
      if (i == j) {
        if (s <= 0.0) throw MissingnessError("copula: covariance not positive definite at pivot " + std::to_string(i));
        l[i * p + i] = std::sqrt(s);
      } else {
        l[i * p + j] = s / l[j * p + j];
      }
    }
  }
  return l;
}

void validate_copula(const Ar1Copula& c) {
  if (c.p == 0) throw MissingnessError("copula: dimension 0");
  if (!(c.rho > -1.0 && c.rho < 1.0)) throw MissingnessError("copula: rho must be in (-1,1)");
  if (!(c.alpha >= 0.0 && c.alpha < 1.0)) throw MissingnessError("copula: alpha must be in [0,1)");
  if (c.permutation.size() != c.p) throw MissingnessError("copula: permutation size != p");
  std::vector<bool> seen(c.p, false);
  for (std::size_t v : c.permutation) {
    if (v >= c.p || seen[v]) throw MissingnessError("copula: permutation is not a bijection");
    seen[v] = true;
  }
}

}  // namespace

ShiftScenario make_scenario(std::size_t p, double rho, double alpha_tr, double alpha_ts, std::uint64_t seed) {
  ShiftScenario s;
  s.p = p;
  s.rho = rho;
  s.alpha_tr = alpha_tr;
  s.alpha_ts = alpha_ts;
  s.seed = seed;
  Rng root(seed);
  Rng ptr = root.derive(0xA11CE);
  Rng pts = root.derive(0xB0B);
  s.perm_train = random_permutation(p, ptr);
  s.perm_test = random_permutation(p, pts);
  return s;
}

Ar1Copula train_copula(const ShiftScenario& s) {
  Ar1Copula c;
  c.p = s.p;
  c.rho = s.rho;
  c.alpha = s.alpha_tr;
  c.permutation = s.perm_train;
  c.seed = Rng(s.seed).derive(1).next_u64();
  return c;
}

Ar1Copula test_copula(const ShiftScenario& s, double alpha_ts) {
  Ar1Copula c;
  c.p = s.p;
  c.rho = s.rho;
  c.alpha = alpha_ts;
  c.permutation = s.perm_test;
  c.seed = Rng(s.seed).derive(2).next_u64();
  return c;
}

MaskMatrix sample_shift_masks(const Ar1Copula& copula, std::size_t n, Rng& rng) {
  validate_copula(copula);
  const std::size_t p = copula.p;
  const std::vector<double> l = cholesky_permuted_ar1(copula);
  const double threshold = inverse_normal_cdf(copula.alpha);  // -inf when alpha = 0
  MaskMatrix out(n, p, 1);
  std::vector<double> eps(p), z(p);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < p; ++j) eps[j] = rng.normal();
    for (std::size_t j = 0; j < p; ++j) {
      double s = 0.0;
      for (std::size_t k = 0; k <= j; ++k) s += l[j * p + k] * eps[k];
      z[j] = s;
    }
    for (std::size_t j = 0; j < p; ++j)
      if (z[j] <= threshold) out.set(i, j, 0);
  }
  return out;
}

MaskMatrix sample_shift_masks(const Ar1Copula& copula, std::size_t n) {
  Rng rng(copula.seed);
  return sample_shift_masks(copula, n, rng);
}

MaskMatrix sample_bernoulli_masks(double r, std::size_t n, std::size_t p, Rng& rng) {
  if (!(r >= 0.0 && r < 1.0)) throw MissingnessError("bernoulli masker: r must be in [0,1)");
  MaskMatrix out(n, p, 1);
  if (r == 0.0) return out;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < p; ++j)
      if (rng.uniform() < r) out.set(i, j, 0);
  return out;
}

MaskMatrix sample_bernoulli_masks(const BernoulliMasker& masker, std::size_t n, std::size_t p) {
  Rng rng(masker.seed);
  return sample_bernoulli_masks(masker.r, n, p, rng);
}

void write_mask_csv(const std::string& path, const MaskMatrix& m) {
  std::ofstream out(path);
  if (!out) throw MissingnessError("cannot open " + path + " for writing");
  for (std::size_t i = 0; i < m.rows(); ++i) {
    for (std::size_t j = 0; j < m.cols(); ++j) {
      if (j) out << ',';
      out << static_cast<int>(m.at(i, j));
    }
    out << '\n';
  }
}

MaskMatrix read_mask_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw MissingnessError("cannot open " + path);
  std::vector<std::vector<std::uint8_t>> rows;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::uint8_t> row;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) {
      if (cell == "0")
        row.push_back(0);
      else if (cell == "1")
        row.push_back(1);
      else
        throw MissingnessError(path + ": mask entry '" + cell + "' is not 0/1");
    }
    if (!rows.empty() && row.size() != rows[0].size()) throw MissingnessError(path + ": ragged mask rows");
    rows.push_back(std::move(row));
  }
  if (rows.empty()) throw MissingnessError(path + ": empty mask file");
  MaskMatrix m(rows.size(), rows[0].size(), 0);
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (std::size_t j = 0; j < rows[i].size(); ++j) m.set(i, j, rows[i][j]);
  return m;
}

}  // namespace mirrams
