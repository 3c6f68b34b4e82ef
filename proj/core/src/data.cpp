#include "mirrams/data.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <sstream>
#include <unordered_map>

namespace mirrams {

namespace {

std::string trim(const std::string& s) {
  std::size_t a = s.find_first_not_of(" \t\r\n");
  if (a == std::string::npos) return "";
  std::size_t b = s.find_last_not_of(" \t\r\n");
  return s.substr(a, b - a + 1);
}

std::vector<std::string> split_on(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : s) {
    if (c == sep) {
      out.push_back(cur);
      cur.clear();
    } else {
      cur += c;
    }
  }
  out.push_back(cur);
  return out;
}

std::string join(const std::vector<std::string>& xs, char sep) {
  std::string out;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    if (i) out += sep;
    out += xs[i];
  }
  return out;
}

}  // namespace

std::size_t Schema::label_index() const {
  for (std::size_t i = 0; i < columns.size(); ++i)
    if (columns[i].kind == ColumnKind::Label) return i;
  throw DataError("schema: no label column");
}

void Schema::validate() const {
  std::size_t labels = 0;
  for (const auto& c : columns) {
    if (c.name.empty()) throw DataError("schema: unnamed column");
    if (c.kind == ColumnKind::Label) {
      ++labels;
      if (c.values.size() < 2) throw DataError("schema: label column '" + c.name + "' needs at least 2 values");
      if (std::find(c.values.begin(), c.values.end(), c.positive) == c.values.end() && c.values.size() == 2)
        throw DataError("schema: positive value '" + c.positive + "' not among label values of '" + c.name + "'");
    }
    if (c.kind == ColumnKind::Categorical && c.values.empty())
      throw DataError("schema: categorical column '" + c.name + "' has empty vocabulary");
    std::vector<std::string> sorted = c.values;
    std::sort(sorted.begin(), sorted.end());
    if (std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end())
      throw DataError("schema: duplicate value in column '" + c.name + "'");
  }
  if (labels != 1) throw DataError("schema: expected exactly one label column, found " + std::to_string(labels));
}

Schema read_schema(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open schema " + path);
  Schema schema;
  schema.na_tokens = {"", "NA", "?"};
  Column* cur = nullptr;
  bool in_dataset = false;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    line = trim(line);
    if (line.empty() || line[0] == '#') continue;
    if (line.front() == '[' && line.back() == ']') {
      const std::string head = trim(line.substr(1, line.size() - 2));
      if (head == "dataset") {
        in_dataset = true;
        cur = nullptr;
      } else if (head.rfind("column ", 0) == 0) {
        in_dataset = false;
        schema.columns.emplace_back();
        cur = &schema.columns.back();
        cur->name = trim(head.substr(7));
      } else {
        throw DataError(path + ":" + std::to_string(lineno) + ": unknown section [" + head + "]");
      }
      continue;
    }
    const std::size_t eq = line.find('=');
    if (eq == std::string::npos) throw DataError(path + ":" + std::to_string(lineno) + ": expected key = value");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (in_dataset) {
      if (key == "na")
        schema.na_tokens = split_on(value, ',');
      else
        throw DataError(path + ":" + std::to_string(lineno) + ": unknown dataset key '" + key + "'");
      continue;
    }
    if (!cur) throw DataError(path + ":" + std::to_string(lineno) + ": key outside any section");
    if (key == "kind") {
      if (value == "continuous")
        cur->kind = ColumnKind::Continuous;
      else if (value == "categorical")
        cur->kind = ColumnKind::Categorical;
      else if (value == "label")
        cur->kind = ColumnKind::Label;
      else
        throw DataError(path + ":" + std::to_string(lineno) + ": unknown kind '" + value + "'");
    } else if (key == "values") {
      cur->values = split_on(value, ',');
      for (auto& v : cur->values) v = trim(v);
    } else if (key == "positive") {
      cur->positive = value;
    } else {
      throw DataError(path + ":" + std::to_string(lineno) + ": unknown column key '" + key + "'");
    }
  }
  schema.validate();
  return schema;
}

void write_schema(const std::string& path, const Schema& schema) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot open " + path + " for writing");
  out << "[dataset]\n";
  out << "na = " << join(schema.na_tokens, ',') << "\n";
  for (const auto& c : schema.columns) {
    out << "\n[column " << c.name << "]\n";
    out << "kind = "
        << (c.kind == ColumnKind::Continuous ? "continuous"
                                             : (c.kind == ColumnKind::Categorical ? "categorical" : "label"))
        << "\n";
    if (!c.values.empty()) out << "values = " << join(c.values, ',') << "\n";
    if (!c.positive.empty()) out << "positive = " << c.positive << "\n";
  }
}

std::vector<std::string> TabularDataset::feature_names() const {
  std::vector<std::string> names = cont_names;
  names.insert(names.end(), cat_names.begin(), cat_names.end());
  return names;
}

double TabularDataset::positive_ratio() const {
  if (labels.empty()) return 0.0;
  std::size_t pos = 0;
  for (int y : labels) pos += (y == 1);
  return static_cast<double>(pos) / static_cast<double>(labels.size());
}

TabularDataset TabularDataset::take_rows(const std::vector<std::size_t>& idx) const {
  TabularDataset out;
  out.cont_names = cont_names;
  out.cat_names = cat_names;
  out.num_classes = num_classes;
  out.xcont = Tensor({idx.size(), p_cont()});
  out.xcat.assign(p_cat(), std::vector<std::int32_t>(idx.size(), 0));
  out.labels.resize(idx.size());
  for (std::size_t i = 0; i < idx.size(); ++i) {
    if (idx[i] >= n()) throw DataError("take_rows: row " + std::to_string(idx[i]) + " out of range");
    for (std::size_t j = 0; j < p_cont(); ++j) out.xcont.at(i, j) = xcont.at(idx[i], j);
    for (std::size_t j = 0; j < p_cat(); ++j) out.xcat[j][i] = xcat[j][idx[i]];
    out.labels[i] = labels[idx[i]];
  }
  out.mask = mask.take_rows(idx);
  return out;
}

TabularDataset load_csv(const std::string& path, Schema& schema, bool training) {
  schema.validate();
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path);
  std::string line;
  if (!std::getline(in, line)) throw DataError(path + ": empty file");
  const std::vector<std::string> header_raw = split_on(trim(line), ',');
  std::vector<std::string> header;
  for (const auto& h : header_raw) header.push_back(trim(h));
  if (header.size() != schema.columns.size())
    throw DataError(path + ": header has " + std::to_string(header.size()) + " columns, schema has " +
                    std::to_string(schema.columns.size()));
  for (std::size_t i = 0; i < header.size(); ++i)
    if (header[i] != schema.columns[i].name)
      throw DataError(path + ": header column '" + header[i] + "' does not match schema '" +
                      schema.columns[i].name + "'");

  const auto is_na = [&](const std::string& tok) {
    return std::find(schema.na_tokens.begin(), schema.na_tokens.end(), tok) != schema.na_tokens.end();
  };

  std::vector<std::size_t> cont_cols, cat_cols;
  const std::size_t label_col = schema.label_index();
  for (std::size_t i = 0; i < schema.columns.size(); ++i) {
    if (schema.columns[i].kind == ColumnKind::Continuous) cont_cols.push_back(i);
    if (schema.columns[i].kind == ColumnKind::Categorical) cat_cols.push_back(i);
  }

  std::vector<std::unordered_map<std::string, std::int32_t>> vocab_of(cat_cols.size());
  for (std::size_t j = 0; j < cat_cols.size(); ++j) {
    const auto& vs = schema.columns[cat_cols[j]].values;
    for (std::size_t k = 0; k < vs.size(); ++k) vocab_of[j].emplace(vs[k], static_cast<std::int32_t>(k));
  }
  std::unordered_map<std::string, int> label_of;
  {
    const auto& lc = schema.columns[label_col];
    if (lc.values.size() == 2 && !lc.positive.empty()) {
      // binary: positive value maps to 1
      for (const auto& v : lc.values) label_of.emplace(v, v == lc.positive ? 1 : 0);
    } else {
      for (std::size_t k = 0; k < lc.values.size(); ++k) label_of.emplace(lc.values[k], static_cast<int>(k));
    }
  }

  std::vector<double> cont_data;
  std::vector<std::vector<std::int32_t>> cat_data(cat_cols.size());
  std::vector<int> labels;
  std::vector<std::uint8_t> maskbits;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    const std::string t = trim(line);
    if (t.empty()) continue;
    const std::vector<std::string> cells_raw = split_on(t, ',');
    if (cells_raw.size() != schema.columns.size())
      throw DataError(path + ":" + std::to_string(lineno) + ": row has " + std::to_string(cells_raw.size()) +
                      " cells, expected " + std::to_string(schema.columns.size()));
    std::vector<std::string> cells;
    for (const auto& c : cells_raw) cells.push_back(trim(c));

    const std::string& ltok = cells[label_col];
    if (is_na(ltok)) throw DataError(path + ":" + std::to_string(lineno) + ": label missing");
    const auto lit = label_of.find(ltok);
    if (lit == label_of.end())
      throw DataError(path + ":" + std::to_string(lineno) + ": label value '" + ltok + "' not in schema");
    labels.push_back(lit->second);

    for (std::size_t j = 0; j < cont_cols.size(); ++j) {
      const std::string& tok = cells[cont_cols[j]];
      if (is_na(tok)) {
        cont_data.push_back(std::numeric_limits<double>::quiet_NaN());
        maskbits.push_back(0);
      } else {
        std::size_t used = 0;
        double v = 0.0;
        try {
          v = std::stod(tok, &used);
        } catch (const std::exception&) {
          throw DataError(path + ":" + std::to_string(lineno) + ": cannot parse number '" + tok + "' in column '" +
                          schema.columns[cont_cols[j]].name + "'");
        }
        if (used != tok.size())
          throw DataError(path + ":" + std::to_string(lineno) + ": cannot parse number '" + tok + "' in column '" +
                          schema.columns[cont_cols[j]].name + "'");
        cont_data.push_back(v);
        maskbits.push_back(1);
      }
    }
    for (std::size_t j = 0; j < cat_cols.size(); ++j) {
      const std::string& tok = cells[cat_cols[j]];
      if (is_na(tok)) {
        cat_data[j].push_back(0);
        maskbits.push_back(0);
        continue;
      }
      auto it = vocab_of[j].find(tok);
      if (it == vocab_of[j].end()) {
        if (training) {
          auto& vals = schema.columns[cat_cols[j]].values;
          const auto id = static_cast<std::int32_t>(vals.size());
          vals.push_back(tok);
          it = vocab_of[j].emplace(tok, id).first;
        } else {
          // reserved unknown index, one past the vocabulary
          cat_data[j].push_back(static_cast<std::int32_t>(vocab_of[j].size()));
          maskbits.push_back(1);
          continue;
        }
      }
      cat_data[j].push_back(it->second);
      maskbits.push_back(1);
    }
  }

  TabularDataset ds;
  for (std::size_t c : cont_cols) ds.cont_names.push_back(schema.columns[c].name);
  for (std::size_t c : cat_cols) ds.cat_names.push_back(schema.columns[c].name);
  ds.num_classes = schema.columns[label_col].values.size();
  const std::size_t n = labels.size();
  ds.labels = std::move(labels);
  ds.xcont = Tensor({n, cont_cols.size()});
  // loader appended row-wise: cont cells first, then cat cells, per row
  const std::size_t pc = cont_cols.size(), pk = cat_cols.size();
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < pc; ++j) ds.xcont[i * pc + j] = cont_data[i * pc + j];
  ds.xcat = std::move(cat_data);
  ds.mask = MaskMatrix(n, pc + pk, 1);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < pc + pk; ++j) ds.mask.set(i, j, maskbits[i * (pc + pk) + j]);
  return ds;
}

void write_csv(const std::string& path, const TabularDataset& ds, const Schema& schema) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot open " + path + " for writing");
  out.precision(17);
  std::vector<std::string> header;
  for (const auto& c : schema.columns) header.push_back(c.name);
  out << join(header, ',') << "\n";
  const std::string na = schema.na_tokens.empty() ? "NA" : (schema.na_tokens[0].empty() && schema.na_tokens.size() > 1
                                                                ? schema.na_tokens[1]
                                                                : schema.na_tokens[0]);
  const std::size_t label_col = schema.label_index();
  for (std::size_t i = 0; i < ds.n(); ++i) {
    std::size_t ci = 0, ki = 0;
    std::vector<std::string> cells;
    for (std::size_t col = 0; col < schema.columns.size(); ++col) {
      const auto& c = schema.columns[col];
      if (col == label_col) {
        const auto& lc = schema.columns[label_col];
        std::string tok;
        if (lc.values.size() == 2 && !lc.positive.empty()) {
          for (const auto& v : lc.values)
            if ((v == lc.positive) == (ds.labels[i] == 1)) tok = v;
        } else {
          tok = lc.values[static_cast<std::size_t>(ds.labels[i])];
        }
        cells.push_back(tok);
      } else if (c.kind == ColumnKind::Continuous) {
        const std::size_t fj = ci;
        if (!ds.mask.at(i, fj)) {
          cells.push_back(na);
        } else {
          std::ostringstream ss;
          ss.precision(17);
          ss << ds.xcont.at(i, ci);
          cells.push_back(ss.str());
        }
        ++ci;
      } else {
        const std::size_t fj = ds.p_cont() + ki;
        if (!ds.mask.at(i, fj)) {
          cells.push_back(na);
        } else {
          const auto id = static_cast<std::size_t>(ds.xcat[ki][i]);
          cells.push_back(id < c.values.size() ? c.values[id] : "unknown");
        }
        ++ki;
      }
    }
    out << join(cells, ',') << "\n";
  }
}

SplitIndices split_indices(const std::vector<int>& labels, const SplitSpec& spec) {
  const double rsum = spec.train + spec.val + spec.test;
  if (!(spec.train > 0 && spec.val > 0 && spec.test > 0) || std::abs(rsum - 1.0) > 1e-9)
    throw DataError("split: ratios must be positive and sum to 1");
  const std::size_t n = labels.size();
  const double ratios[3] = {spec.train, spec.val, spec.test};

  // largest-remainder apportionment of n over the three buckets
  const auto apportion = [&](std::size_t total) {
    std::array<std::size_t, 3> out{};
    double frac[3];
    std::size_t assigned = 0;
    for (int b = 0; b < 3; ++b) {
      const double ideal = static_cast<double>(total) * ratios[b];
      out[b] = static_cast<std::size_t>(ideal);
      frac[b] = ideal - static_cast<double>(out[b]);
      assigned += out[b];
    }
    while (assigned < total) {
      int best = 0;
      for (int b = 1; b < 3; ++b)
        if (frac[b] > frac[best]) best = b;
      ++out[best];
      frac[best] = -1.0;
      ++assigned;
    }
    return out;
  };
  const auto target = apportion(n);
  for (int b = 0; b < 3; ++b)
    if (target[b] == 0) throw DataError("split: bucket " + std::to_string(b) + " would be empty");

  // group rows by label, shuffle each group
  std::vector<int> classes;
  for (int y : labels)
    if (std::find(classes.begin(), classes.end(), y) == classes.end()) classes.push_back(y);
  std::sort(classes.begin(), classes.end());
  Rng root(spec.seed);
  std::vector<std::vector<std::size_t>> members(classes.size());
  for (std::size_t i = 0; i < n; ++i) {
    const auto c = static_cast<std::size_t>(
        std::find(classes.begin(), classes.end(), labels[i]) - classes.begin());
    members[c].push_back(i);
  }
  for (std::size_t c = 0; c < classes.size(); ++c) {
    Rng r = root.derive(c + 1);
    r.shuffle(members[c]);
  }

  // per-class largest remainder, then move rows to hit the global targets
  std::vector<std::array<std::size_t, 3>> count(classes.size());
  std::array<std::size_t, 3> got{};
  for (std::size_t c = 0; c < classes.size(); ++c) {
    count[c] = apportion(members[c].size());
    for (int b = 0; b < 3; ++b) got[b] += count[c][b];
  }
  for (int over = 0; over < 3; ++over) {
    while (got[over] > target[over]) {
      int under = 0;
      while (got[under] >= target[under]) ++under;
      std::size_t donor = 0;
      for (std::size_t c = 1; c < classes.size(); ++c)
        if (count[c][over] > count[donor][over]) donor = c;
      if (count[donor][over] == 0) throw DataError("split: cannot satisfy ratios");
      --count[donor][over];
      ++count[donor][under];
      --got[over];
      ++got[under];
    }
  }

  SplitIndices out;
  for (std::size_t c = 0; c < classes.size(); ++c) {
    std::size_t off = 0;
    for (int b = 0; b < 3; ++b) {
      auto& bucket = (b == 0 ? out.train : b == 1 ? out.val : out.test);
      for (std::size_t k = 0; k < count[c][b]; ++k) bucket.push_back(members[c][off + k]);
      off += count[c][b];
    }
  }
  std::sort(out.train.begin(), out.train.end());
  std::sort(out.val.begin(), out.val.end());
  std::sort(out.test.begin(), out.test.end());
  return out;
}

void write_indices(const std::string& path, const std::vector<std::size_t>& idx) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot open " + path + " for writing");
  for (std::size_t i : idx) out << i << "\n";
}

std::vector<std::size_t> read_indices(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path);
  std::vector<std::size_t> idx;
  std::string line;
  while (std::getline(in, line)) {
    line = trim(line);
    if (line.empty()) continue;
    idx.push_back(static_cast<std::size_t>(std::stoull(line)));
  }
  return idx;
}

Preprocessor fit_preprocessor(const TabularDataset& train) {
  Preprocessor pre;
  const std::size_t pc = train.p_cont();
  pre.mean.assign(pc, 0.0);
  pre.stdev.assign(pc, 1.0);
  for (std::size_t j = 0; j < pc; ++j) {
    double sum = 0.0;
    std::size_t cnt = 0;
    for (std::size_t i = 0; i < train.n(); ++i) {
      if (!train.mask.at(i, j)) continue;
      sum += train.xcont.at(i, j);
      ++cnt;
    }
    if (cnt == 0) continue;
    const double mu = sum / static_cast<double>(cnt);
    double ss = 0.0;
    for (std::size_t i = 0; i < train.n(); ++i) {
      if (!train.mask.at(i, j)) continue;
      const double d = train.xcont.at(i, j) - mu;
      ss += d * d;
    }
    const double var = ss / static_cast<double>(cnt);  // population convention
    pre.mean[j] = mu;
    pre.stdev[j] = var > 0.0 ? std::sqrt(var) : 1.0;
  }
  return pre;
}

void apply_preprocessor(const Preprocessor& pre, TabularDataset& ds) {
  if (pre.mean.size() != ds.p_cont())
    throw DataError("preprocessor: fitted on " + std::to_string(pre.mean.size()) + " columns, dataset has " +
                    std::to_string(ds.p_cont()));
  for (std::size_t j = 0; j < ds.p_cont(); ++j)
    for (std::size_t i = 0; i < ds.n(); ++i)
      if (ds.mask.at(i, j)) ds.xcont.at(i, j) = (ds.xcont.at(i, j) - pre.mean[j]) / pre.stdev[j];
}

void write_preprocessor(const std::string& path, const Preprocessor& pre) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot open " + path + " for writing");
  out.precision(17);
  for (std::size_t j = 0; j < pre.mean.size(); ++j) out << pre.mean[j] << "," << pre.stdev[j] << "\n";
}

Preprocessor read_preprocessor(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path);
  Preprocessor pre;
  std::string line;
  while (std::getline(in, line)) {
    line = trim(line);
    if (line.empty()) continue;
    const auto cells = split_on(line, ',');
    if (cells.size() != 2) throw DataError(path + ": expected mean,std per line");
    pre.mean.push_back(std::stod(cells[0]));
    pre.stdev.push_back(std::stod(cells[1]));
  }
  return pre;
}

}  // namespace mirrams
