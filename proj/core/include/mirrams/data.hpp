#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "mirrams/missingness.hpp"
#include "mirrams/tensor.hpp"

namespace mirrams {

class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class ColumnKind { Continuous, Categorical, Label };

struct Column {
  std::string name;
  ColumnKind kind = ColumnKind::Continuous;
  std::vector<std::string> values;  // categorical vocabulary, or label values (K >= 2)
  std::string positive;             // label only: which value is the positive class
};

struct Schema {
  std::vector<Column> columns;
  std::vector<std::string> na_tokens = {"", "NA", "?"};

  std::size_t label_index() const;
  const Column& label_column() const { return columns[label_index()]; }
  void validate() const;
};

// Plain-text schema file: [dataset] section with optional `na = tok1,tok2,...`,
// then one [column <name>] section per column in file order with `kind`,
// optional `values` (comma-separated) and `positive`.
Schema read_schema(const std::string& path);
void write_schema(const std::string& path, const Schema& schema);

// Features are reordered as [continuous columns in schema order, then
// categorical columns in schema order]; mask column j refers to feature j in
// that order. Masked continuous cells hold NaN and must never be read.
struct TabularDataset {
  std::vector<std::string> cont_names, cat_names;
  Tensor xcont;                                  // n x p_cont
  std::vector<std::vector<std::int32_t>> xcat;   // p_cat vectors of length n
  std::vector<int> labels;                       // values in [0, K)
  std::size_t num_classes = 2;
  MaskMatrix mask;                               // n x (p_cont + p_cat), 1 = observed

  std::size_t n() const { return labels.size(); }
  std::size_t p_cont() const { return cont_names.size(); }
  std::size_t p_cat() const { return cat_names.size(); }
  std::size_t p() const { return p_cont() + p_cat(); }
  std::vector<std::string> feature_names() const;
  double positive_ratio() const;  // binary tasks: fraction with label 1
  TabularDataset take_rows(const std::vector<std::size_t>& idx) const;
};

// `training` allows unseen categorical values to extend the schema vocabulary;
// otherwise they map to the reserved unknown index (== vocabulary size).
TabularDataset load_csv(const std::string& path, Schema& schema, bool training = false);
void write_csv(const std::string& path, const TabularDataset& ds, const Schema& schema);

struct SplitSpec {
  double train = 0.65, val = 0.15, test = 0.2;
  std::uint64_t seed = 0;
};

struct SplitIndices {
  std::vector<std::size_t> train, val, test;
};

// Label-stratified, deterministic under seed; bucket sizes match the
// largest-remainder apportionment of n over the ratios.
SplitIndices split_indices(const std::vector<int>& labels, const SplitSpec& spec);

void write_indices(const std::string& path, const std::vector<std::size_t>& idx);
std::vector<std::size_t> read_indices(const std::string& path);

// Standardization statistics from observed training entries only
// (population-variance convention; zero-variance columns get std 1).
struct Preprocessor {
  std::vector<double> mean, stdev;
};

Preprocessor fit_preprocessor(const TabularDataset& train);
void apply_preprocessor(const Preprocessor& pre, TabularDataset& ds);
void write_preprocessor(const std::string& path, const Preprocessor& pre);
Preprocessor read_preprocessor(const std::string& path);

}  // namespace mirrams
