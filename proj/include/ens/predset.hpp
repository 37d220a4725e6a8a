// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

namespace ens {

/// N_obj x K class probabilities, one row per object.
using ProbMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

inline constexpr double kDefaultClampFloor = 1e-12;
inline constexpr double kRowSumTolerance = 1e-3;

struct ModelMeta {
  std::string model_id;
  std::int64_t network_size = 1;
  std::optional<int> width_factor;
};

/// Predictions of one model. `obj_ids[i]` names row i of `probs`.
struct PredictionSet {
  ProbMatrix probs;
  std::vector<std::int64_t> obj_ids;
  ModelMeta meta;

  std::size_t num_objects() const { return static_cast<std::size_t>(probs.rows()); }
  int num_classes() const { return static_cast<int>(probs.cols()); }
};

struct LabelVector {
  std::vector<int> labels;
  std::vector<std::int64_t> obj_ids;

  std::size_t size() const { return labels.size(); }
};

/// All prediction sets of one dataset grouped by network size. Rows of every
/// member are sorted by obj_id and aligned with `labels`.
struct ModelPool {
  std::map<std::int64_t, std::vector<PredictionSet>> groups;
  LabelVector labels;
  int num_classes = 0;

  std::size_t num_objects() const { return labels.size(); }
  std::size_t num_models() const;
  std::vector<std::int64_t> size_grid() const;
  /// Models of one network size; throws InfeasibleError for unknown sizes.
  const std::vector<PredictionSet>& group(std::int64_t network_size) const;
};

/// Reads `obj_id,class_0,...,class_{K-1}`. No clamping or renormalization.
/// Throws DataError naming the line for malformed rows or negative entries.
PredictionSet load_prediction_csv(const std::filesystem::path& path, ModelMeta meta);

/// Reads `obj_id,label`; result is sorted by obj_id ascending.
LabelVector load_labels_csv(const std::filesystem::path& path);

/// Throws DataError when a label falls outside [0, num_classes).
void check_labels(const LabelVector& labels, int num_classes);

/// Floors every entry at `eps` and renormalizes rows to sum to one.
///
/// Rows whose raw sum deviates from 1 by more than kRowSumTolerance are
/// rejected. Floored entries are pinned at exactly `eps` and the remaining
/// mass is rescaled, so the result satisfies entry >= eps and a second
/// application leaves it bit-identical.
PredictionSet validate_and_clamp(PredictionSet ps, double eps = kDefaultClampFloor);

/// Sorts rows by obj_id and checks that `ps` covers exactly the objects of
/// `labels` (which must already be sorted).
PredictionSet align_to_labels(PredictionSet ps, const LabelVector& labels);

/// Validates, clamps, aligns and groups prediction sets.
ModelPool make_pool(std::vector<PredictionSet> models, LabelVector labels, int num_classes,
                    double eps = kDefaultClampFloor);

/// Loads a manifest `{"labels", "num_classes", "models": [{"path", "network_size",
/// "width_factor"?}]}`. Relative paths resolve against the manifest directory.
ModelPool load_manifest(const std::filesystem::path& path, double eps = kDefaultClampFloor);

/// Writes predictions with 17 significant digits (lossless for doubles).
void write_prediction_csv(const std::filesystem::path& path, const PredictionSet& ps);
void write_labels_csv(const std::filesystem::path& path, const LabelVector& labels);

/// Writes every model of `pool` as `model_<size>_<index>.csv` next to a
/// labels file and a manifest. Returns the manifest path.
std::filesystem::path write_pool(const std::filesystem::path& dir, const ModelPool& pool);

/// Probability matrices of a model list, in order.
std::vector<ProbMatrix> prob_matrices(std::span<const PredictionSet> models);

}  // namespace ens
