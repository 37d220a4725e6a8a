// SPDX-License-Identifier: Apache-2.0
// Shared fixtures and independent reference computations for the unit tests.
// The references use plain loops and textbook formulas (std::pow, direct
// sums, dense grids) rather than any library routine they are checked
// against.
#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include <unistd.h>

#include "ens/predset.hpp"

namespace ens::testing {

using Rows = std::vector<std::vector<double>>;

inline ProbMatrix matrix(const Rows& rows) {
  ProbMatrix m(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(rows.front().size()));
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (std::size_t k = 0; k < rows[i].size(); ++k) m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k)) = rows[i][k];
  return m;
}

inline Rows rows_of(const ProbMatrix& m) {
  Rows r(static_cast<std::size_t>(m.rows()), std::vector<double>(static_cast<std::size_t>(m.cols())));
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    for (Eigen::Index k = 0; k < m.cols(); ++k) r[static_cast<std::size_t>(i)][static_cast<std::size_t>(k)] = m(i, k);
  return r;
}

inline PredictionSet prediction_set(const Rows& rows, std::int64_t size = 1, std::string id = "m") {
  PredictionSet ps;
  ps.probs = matrix(rows);
  for (std::size_t i = 0; i < rows.size(); ++i) ps.obj_ids.push_back(static_cast<std::int64_t>(i));
  ps.meta.model_id = std::move(id);
  ps.meta.network_size = size;
  return ps;
}

inline LabelVector label_vector(const std::vector<int>& labels) {
  LabelVector lv;
  lv.labels = labels;
  for (std::size_t i = 0; i < labels.size(); ++i) lv.obj_ids.push_back(static_cast<std::int64_t>(i));
  return lv;
}

/// Random strictly positive rows from normalized exponentials; `sharpness`
/// raises the draws to a power to make rows more peaked.
inline Rows random_rows(std::size_t n, std::size_t k, std::uint64_t seed, double sharpness = 1.0) {
  std::mt19937_64 rng(seed);
  std::exponential_distribution<double> ex(1.0);
  Rows rows(n, std::vector<double>(k));
  for (auto& row : rows) {
    double total = 0.0;
    for (double& v : row) {
      v = std::pow(ex(rng), sharpness) + 1e-6;
      total += v;
    }
    for (double& v : row) v /= total;
  }
  return rows;
}

inline std::vector<int> random_labels(std::size_t n, int k, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<int> d(0, k - 1);
  std::vector<int> out(n);
  for (int& v : out) v = d(rng);
  return out;
}

// -- references ------------------------------------------------------------

inline double ref_nll(const Rows& probs, const std::vector<int>& labels) {
  double s = 0.0;
  for (std::size_t i = 0; i < probs.size(); ++i) s -= std::log(probs[i][static_cast<std::size_t>(labels[i])]);
  return s / static_cast<double>(probs.size());
}

/// p^(1/tau) / sum p^(1/tau), evaluated directly.
inline std::vector<double> ref_temper(const std::vector<double>& row, double tau) {
  std::vector<double> out(row.size());
  double total = 0.0;
  for (std::size_t k = 0; k < row.size(); ++k) total += out[k] = std::pow(row[k], 1.0 / tau);
  for (double& v : out) v /= total;
  return out;
}

/// Ensemble prediction from the two defining formulas.
inline Rows ref_ensemble(const std::vector<Rows>& members, double tau, bool before) {
  const std::size_t n = members.size();
  Rows out(members[0].size(), std::vector<double>(members[0][0].size(), 0.0));
  for (std::size_t i = 0; i < out.size(); ++i) {
    if (before) {
      for (const auto& m : members) {
        const auto t = ref_temper(m[i], tau);
        for (std::size_t k = 0; k < t.size(); ++k) out[i][k] += t[k] / static_cast<double>(n);
      }
    } else {
      std::vector<double> mean(out[i].size(), 0.0);
      for (const auto& m : members)
        for (std::size_t k = 0; k < mean.size(); ++k) mean[k] += m[i][k] / static_cast<double>(n);
      out[i] = ref_temper(mean, tau);
    }
  }
  return out;
}

inline double ref_ensemble_nll(const std::vector<Rows>& members, const std::vector<int>& labels, double tau,
                               bool before) {
  return ref_nll(ref_ensemble(members, tau, before), labels);
}

struct GridMin {
  double x;
  double fx;
};

/// Minimum of f over `points` log-uniform values of x in [lo, hi].
inline GridMin ref_dense_log_grid(const std::function<double(double)>& f, double lo, double hi, int points) {
  GridMin best{lo, f(lo)};
  for (int i = 1; i < points; ++i) {
    const double x = std::exp(std::log(lo) + (std::log(hi) - std::log(lo)) * i / (points - 1));
    const double fx = f(x);
    if (fx < best.fx) best = {x, fx};
  }
  return best;
}

// -- files -----------------------------------------------------------------

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    static int counter = 0;
    path_ = std::filesystem::temp_directory_path() /
            ("ens_test_" + tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

inline void write_text(const std::filesystem::path& p, const std::string& text) {
  std::ofstream out(p, std::ios::binary);
  out << text;
}

inline std::string read_text(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace ens::testing
