#pragma once

#include <cstdint>
#include <string>

#include "mirrams/data.hpp"

namespace mirrams {

// Deterministic synthetic tabular generators. Each draws latent factors,
// spreads them redundantly across correlated feature views (so information
// survives partial masking), and thresholds a nonlinear factor score at the
// target positive rate, with a small swap-flip label noise that preserves the
// exact class counts.
//
// Names and shapes:
//   qsar_bio  n=1055  p=41 continuous, 33.74% positive
//   htru2     n=17898 p=8  continuous,  9.16% positive
//   demo      n=400   p=6  continuous,    40% positive
struct SynthResult {
  Schema schema;
  TabularDataset data;
};

// n = 0 uses the dataset's canonical row count above.
SynthResult make_synthetic(const std::string& name, std::size_t n, std::uint64_t seed);

// two separable continuous features, no noise; training sanity checks
SynthResult make_linear_toy(std::size_t n, std::uint64_t seed);

}  // namespace mirrams
