// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "flowvi/common.hpp"

namespace flowvi {

enum class LabelKind { kNumeric, kBinary01, kPm1 };

inline LabelKind label_kind_from_string(const std::string& s) {
  if (s == "numeric") return LabelKind::kNumeric;
  if (s == "binary01") return LabelKind::kBinary01;
  if (s == "pm1") return LabelKind::kPm1;
  throw std::invalid_argument("unknown label kind '" + s + "'");
}

struct CsvSchema {
  std::string target_column;
  LabelKind label_kind = LabelKind::kNumeric;
};

// In-memory dataset. Classification labels are normalized to {-1, +1};
// standardization statistics are carried along so predictions can be mapped
// back to the original units.
struct Dataset {
  std::string name;
  Mat X;
  Vec y;
  Vec feature_means;  // identity transform (0s and 1s) until standardize() runs
  Vec feature_stds;
  double target_mean = 0.0;
  double target_std = 1.0;

  Eigen::Index rows() const { return X.rows(); }
  Eigen::Index cols() const { return X.cols(); }
};

struct Split {
  std::vector<int> train;
  std::vector<int> test;
};

namespace detail {

inline double parse_cell(const std::string& cell, const std::string& path, size_t line_no) {
  // trim ascii whitespace so "1.0, 2.0" rows parse
  size_t b = cell.find_first_not_of(" \t\r");
  size_t e = cell.find_last_not_of(" \t\r");
  if (b == std::string::npos)
    throw std::runtime_error(path + ":" + std::to_string(line_no) + ": empty cell");
  double v = 0.0;
  const char* first = cell.data() + b;
  const char* last = cell.data() + e + 1;
  auto [ptr, ec] = std::from_chars(first, last, v);
  if (ec != std::errc() || ptr != last)
    throw std::runtime_error(path + ":" + std::to_string(line_no) + ": cell '" +
                             cell.substr(b, e - b + 1) + "' is not numeric");
  return v;
}

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> cells;
  std::string cur;
  std::stringstream ss(line);
  while (std::getline(ss, cur, ',')) cells.push_back(cur);
  if (!line.empty() && line.back() == ',') cells.emplace_back();
  return cells;
}

}  // namespace detail

// Strict numeric CSV with a header row. The target column is pulled out by
// name; every parse failure reports the offending line.
inline Dataset load_csv(const std::string& path, const CsvSchema& schema) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("load_csv: cannot open '" + path + "'");

  std::string line;
  if (!std::getline(in, line)) throw std::runtime_error(path + ": empty file");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  const auto header = detail::split_csv_line(line);

  Eigen::Index target_idx = -1;
  for (size_t i = 0; i < header.size(); ++i) {
    std::string h = header[i];
    h.erase(0, h.find_first_not_of(" \t"));
    h.erase(h.find_last_not_of(" \t") + 1);
    if (h == schema.target_column) target_idx = static_cast<Eigen::Index>(i);
  }
  if (target_idx < 0)
    throw std::runtime_error(path + ": no column named '" + schema.target_column + "'");

  std::vector<std::vector<double>> rows;
  std::vector<double> labels;
  size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto cells = detail::split_csv_line(line);
    if (cells.size() != header.size())
      throw std::runtime_error(path + ":" + std::to_string(line_no) + ": expected " +
                               std::to_string(header.size()) + " cells, found " +
                               std::to_string(cells.size()));
    std::vector<double> feat;
    feat.reserve(cells.size() - 1);
    for (size_t c = 0; c < cells.size(); ++c) {
      const double v = detail::parse_cell(cells[c], path, line_no);
      if (static_cast<Eigen::Index>(c) == target_idx)
        labels.push_back(v);
      else
        feat.push_back(v);
    }
    rows.push_back(std::move(feat));
  }
  if (rows.empty()) throw std::runtime_error(path + ": no data rows");

  Dataset ds;
  ds.name = path;
  ds.X.resize(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(rows.front().size()));
  ds.y.resize(static_cast<Eigen::Index>(labels.size()));
  for (size_t i = 0; i < rows.size(); ++i) {
    for (size_t j = 0; j < rows[i].size(); ++j)
      ds.X(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = rows[i][j];
    double lab = labels[i];
    switch (schema.label_kind) {
      case LabelKind::kNumeric:
        break;
      case LabelKind::kBinary01:
        if (lab != 0.0 && lab != 1.0)
          throw std::runtime_error(path + ":" + std::to_string(i + 2) + ": label " +
                                   std::to_string(lab) + " is not 0/1");
        lab = lab == 0.0 ? -1.0 : 1.0;
        break;
      case LabelKind::kPm1:
        if (lab != -1.0 && lab != 1.0)
          throw std::runtime_error(path + ":" + std::to_string(i + 2) + ": label " +
                                   std::to_string(lab) + " is not +1/-1");
        break;
    }
    ds.y[static_cast<Eigen::Index>(i)] = lab;
  }
  ds.feature_means = Vec::Zero(ds.X.cols());
  ds.feature_stds = Vec::Ones(ds.X.cols());
  return ds;
}

// Shift/scale features by statistics of the training rows only. Constant
// columns are left untouched (mean 0, std 1 recorded). When standardize_target
// is set the responses are transformed the same way, for regression tasks.
inline Dataset standardize(const Dataset& ds, const std::vector<int>& train_indices,
                           bool standardize_target) {
  if (train_indices.empty()) throw std::invalid_argument("standardize: empty training index set");
  for (int i : train_indices)
    if (i < 0 || i >= ds.rows())
      throw std::invalid_argument("standardize: index " + std::to_string(i) + " out of range");

  const double n = static_cast<double>(train_indices.size());
  Dataset out = ds;
  out.feature_means = Vec::Zero(ds.cols());
  out.feature_stds = Vec::Ones(ds.cols());

  for (Eigen::Index c = 0; c < ds.cols(); ++c) {
    double mean = 0.0;
    for (int i : train_indices) mean += ds.X(i, c);
    mean /= n;
    double var = 0.0;
    for (int i : train_indices) var += (ds.X(i, c) - mean) * (ds.X(i, c) - mean);
    const double sd = std::sqrt(var / n);
    if (sd > 0.0) {
      out.feature_means[c] = mean;
      out.feature_stds[c] = sd;
      out.X.col(c) = (ds.X.col(c).array() - mean) / sd;
    }
    // constant column: keep as is
  }

  if (standardize_target) {
    double mean = 0.0;
    for (int i : train_indices) mean += ds.y[i];
    mean /= n;
    double var = 0.0;
    for (int i : train_indices) var += (ds.y[i] - mean) * (ds.y[i] - mean);
    const double sd = std::sqrt(var / n);
    if (sd > 0.0) {
      out.target_mean = mean;
      out.target_std = sd;
      out.y = (ds.y.array() - mean) / sd;
    }
  }
  return out;
}

inline Vec destandardize_features(const Dataset& ds, const Vec& x) {
  check_same_dim(ds.feature_means, x, "destandardize_features");
  return (x.array() * ds.feature_stds.array() + ds.feature_means.array()).matrix();
}

inline double destandardize_target(const Dataset& ds, double y) {
  return y * ds.target_std + ds.target_mean;
}

// Random train/test splits by seeded permutation; split i is reproducible from
// (seed, i) alone.
inline std::vector<Split> make_splits(Eigen::Index n_rows, int n_splits, int train_count,
                                      std::uint64_t seed) {
  if (n_splits < 1) throw std::invalid_argument("make_splits: need at least one split");
  if (train_count < 1 || train_count >= n_rows)
    throw std::invalid_argument("make_splits: train count must be in [1, rows)");
  std::vector<Split> splits;
  splits.reserve(static_cast<size_t>(n_splits));
  for (int si = 0; si < n_splits; ++si) {
    std::vector<int> perm(static_cast<size_t>(n_rows));
    std::iota(perm.begin(), perm.end(), 0);
    Rng rng = derive_rng(seed, static_cast<std::uint64_t>(si), 0x51137ULL);
    std::shuffle(perm.begin(), perm.end(), rng);
    Split s;
    s.train.assign(perm.begin(), perm.begin() + train_count);
    s.test.assign(perm.begin() + train_count, perm.end());
    splits.push_back(std::move(s));
  }
  return splits;
}

// Cycles through the index set in shuffled epochs; every index appears exactly
// once per epoch and the final short batch is kept.
class MinibatchStream {
 public:
  MinibatchStream(std::vector<int> indices, int batch_size, std::uint64_t seed)
      : indices_(std::move(indices)), batch_size_(batch_size), rng_(mix64(seed)) {
    if (indices_.empty()) throw std::invalid_argument("MinibatchStream: empty index set");
    if (batch_size_ < 1) throw std::invalid_argument("MinibatchStream: batch size must be positive");
  }

  const std::vector<int>& next() {
    if (pos_ >= indices_.size()) pos_ = 0;
    if (pos_ == 0) std::shuffle(indices_.begin(), indices_.end(), rng_);
    const size_t take = std::min(static_cast<size_t>(batch_size_), indices_.size() - pos_);
    batch_.assign(indices_.begin() + static_cast<std::ptrdiff_t>(pos_),
                  indices_.begin() + static_cast<std::ptrdiff_t>(pos_ + take));
    pos_ += take;
    return batch_;
  }

 private:
  std::vector<int> indices_;
  int batch_size_;
  Rng rng_;
  size_t pos_ = 0;
  std::vector<int> batch_;
};

}  // namespace flowvi
