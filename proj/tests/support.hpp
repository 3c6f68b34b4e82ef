#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "mirrams/rng.hpp"
#include "mirrams/tensor.hpp"

namespace testsup {

// fresh per-test scratch directory under the system temp root
inline std::string tmp_dir(const std::string& leaf) {
  auto d = std::filesystem::temp_directory_path() / ("mirrams_test_" + leaf);
  std::filesystem::remove_all(d);
  std::filesystem::create_directories(d);
  return d.string();
}

inline std::string tmp_file(const std::string& leaf) {
  return (std::filesystem::temp_directory_path() / ("mirrams_test_" + leaf)).string();
}

struct GradStat {
  double worst_rel = 0.0;
  std::size_t checked = 0;
};

// Central-difference check of d(f)/d(param) against an analytic gradient.
// f must re-evaluate the scalar objective from the tensors' current values.
// Checks every coordinate unless max_coords caps it (then coordinates are
// sampled with pick).
inline GradStat compare_grads(const std::function<double()>& f, mirrams::Tensor& param,
                              const mirrams::Tensor& analytic, std::size_t max_coords = SIZE_MAX,
                              mirrams::Rng* pick = nullptr, double h = 1e-5) {
  GradStat st;
  const std::size_t n = param.size();
  std::vector<std::size_t> coords;
  if (n <= max_coords) {
    coords.resize(n);
    for (std::size_t i = 0; i < n; ++i) coords[i] = i;
  } else {
    for (std::size_t i = 0; i < max_coords; ++i) coords.push_back(pick->below(n));
  }
  for (std::size_t i : coords) {
    const double x0 = param[i];
    const double step = h * std::max(1.0, std::abs(x0));
    param[i] = x0 + step;
    const double fp = f();
    param[i] = x0 - step;
    const double fm = f();
    param[i] = x0;
    const double numeric = (fp - fm) / (2.0 * step);
    const double a = analytic.empty() ? 0.0 : analytic[i];
    const double rel = std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), 1e-6});
    st.worst_rel = std::max(st.worst_rel, rel);
    ++st.checked;
  }
  return st;
}

}  // namespace testsup
