// SPDX-License-Identifier: Apache-2.0
#include "ens/predset.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

#include "ens/error.hpp"

namespace ens {
namespace {

std::vector<std::string_view> split_fields(std::string_view line) {
  std::vector<std::string_view> fields;
  std::size_t start = 0;
  while (true) {
    const std::size_t comma = line.find(',', start);
    if (comma == std::string_view::npos) {
      fields.push_back(line.substr(start));
      return fields;
    }
    fields.push_back(line.substr(start, comma - start));
    start = comma + 1;
  }
}

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

std::string where(const std::filesystem::path& path, std::size_t line_no) {
  return path.string() + ":" + std::to_string(line_no);
}

bool parse_double(std::string_view s, double& out) {
  s = trim(s);
  if (!s.empty() && s.front() == '+') s.remove_prefix(1);
  if (s.empty()) return false;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
  return ec == std::errc() && ptr == s.data() + s.size() && std::isfinite(out);
}

bool parse_int(std::string_view s, std::int64_t& out) {
  s = trim(s);
  if (s.empty()) return false;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
  return ec == std::errc() && ptr == s.data() + s.size();
}

std::ifstream open_or_throw(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open file: " + path.string());
  return in;
}

// Reads non-empty lines; returns pairs (1-based line number, text).
std::vector<std::pair<std::size_t, std::string>> read_lines(const std::filesystem::path& path) {
  std::ifstream in = open_or_throw(path);
  std::vector<std::pair<std::size_t, std::string>> lines;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    lines.emplace_back(line_no, line);
  }
  return lines;
}

}  // namespace

std::size_t ModelPool::num_models() const {
  std::size_t total = 0;
  for (const auto& [size, models] : groups) total += models.size();
  return total;
}

std::vector<std::int64_t> ModelPool::size_grid() const {
  std::vector<std::int64_t> sizes;
  sizes.reserve(groups.size());
  for (const auto& [size, models] : groups) sizes.push_back(size);
  return sizes;
}

const std::vector<PredictionSet>& ModelPool::group(std::int64_t network_size) const {
  const auto it = groups.find(network_size);
  if (it == groups.end())
    throw InfeasibleError("no models of network size " + std::to_string(network_size));
  return it->second;
}

PredictionSet load_prediction_csv(const std::filesystem::path& path, ModelMeta meta) {
  const auto lines = read_lines(path);
  if (lines.empty()) throw DataError(path.string() + ": empty prediction file");

  const auto header = split_fields(trim(lines.front().second));
  if (header.size() < 3 || trim(header[0]) != "obj_id")
    throw DataError(where(path, lines.front().first) +
                    ": header must be obj_id,class_0,...,class_{K-1} with K >= 2");
  for (std::size_t k = 1; k < header.size(); ++k) {
    if (trim(header[k]) != "class_" + std::to_string(k - 1))
      throw DataError(where(path, lines.front().first) + ": malformed header column '" +
                      std::string(header[k]) + "', expected class_" + std::to_string(k - 1));
  }
  const std::size_t num_classes = header.size() - 1;
  const std::size_t num_rows = lines.size() - 1;
  if (num_rows == 0) throw DataError(path.string() + ": no prediction rows");

  PredictionSet ps;
  ps.meta = std::move(meta);
  if (ps.meta.model_id.empty()) ps.meta.model_id = path.stem().string();
  ps.probs.resize(static_cast<Eigen::Index>(num_rows), static_cast<Eigen::Index>(num_classes));
  ps.obj_ids.reserve(num_rows);

  for (std::size_t r = 0; r < num_rows; ++r) {
    const auto& [line_no, text] = lines[r + 1];
    const auto fields = split_fields(trim(text));
    if (fields.size() != num_classes + 1)
      throw DataError(where(path, line_no) + ": row has " + std::to_string(fields.size()) +
                      " columns, expected " + std::to_string(num_classes + 1));
    std::int64_t obj_id = 0;
    if (!parse_int(fields[0], obj_id))
      throw DataError(where(path, line_no) + ": non-integer obj_id '" + std::string(fields[0]) + "'");
    ps.obj_ids.push_back(obj_id);
    for (std::size_t k = 0; k < num_classes; ++k) {
      double value = 0.0;
      if (!parse_double(fields[k + 1], value))
        throw DataError(where(path, line_no) + ": non-numeric probability '" +
                        std::string(fields[k + 1]) + "'");
      if (value < 0.0)
        throw DataError(where(path, line_no) + ": negative probability " +
                        std::string(trim(fields[k + 1])));
      ps.probs(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(k)) = value;
    }
  }
  return ps;
}

LabelVector load_labels_csv(const std::filesystem::path& path) {
  const auto lines = read_lines(path);
  if (lines.empty()) throw DataError(path.string() + ": no labels");
  const auto header = split_fields(trim(lines.front().second));
  if (header.size() != 2 || trim(header[0]) != "obj_id" || trim(header[1]) != "label")
    throw DataError(where(path, lines.front().first) + ": header must be obj_id,label");
  if (lines.size() == 1) throw DataError(path.string() + ": no labels");

  std::vector<std::pair<std::int64_t, int>> rows;
  rows.reserve(lines.size() - 1);
  for (std::size_t r = 1; r < lines.size(); ++r) {
    const auto& [line_no, text] = lines[r];
    const auto fields = split_fields(trim(text));
    if (fields.size() != 2)
      throw DataError(where(path, line_no) + ": expected 2 columns, got " +
                      std::to_string(fields.size()));
    std::int64_t obj_id = 0;
    std::int64_t label = 0;
    if (!parse_int(fields[0], obj_id))
      throw DataError(where(path, line_no) + ": non-integer obj_id");
    if (!parse_int(fields[1], label) || label < 0 || label > std::numeric_limits<int>::max())
      throw DataError(where(path, line_no) + ": label must be a non-negative integer");
    rows.emplace_back(obj_id, static_cast<int>(label));
  }
  std::sort(rows.begin(), rows.end());
  for (std::size_t i = 1; i < rows.size(); ++i) {
    if (rows[i].first == rows[i - 1].first)
      throw DataError(path.string() + ": duplicate obj_id " + std::to_string(rows[i].first));
  }

  LabelVector out;
  out.labels.reserve(rows.size());
  out.obj_ids.reserve(rows.size());
  for (const auto& [obj_id, label] : rows) {
    out.obj_ids.push_back(obj_id);
    out.labels.push_back(label);
  }
  return out;
}

void check_labels(const LabelVector& labels, int num_classes) {
  if (labels.labels.empty()) throw DataError("no labels");
  if (labels.obj_ids.size() != labels.labels.size())
    throw DataError("label vector obj_ids and labels differ in length");
  for (std::size_t i = 0; i < labels.labels.size(); ++i) {
    if (labels.labels[i] < 0 || labels.labels[i] >= num_classes)
      throw DataError("label " + std::to_string(labels.labels[i]) + " of obj_id " +
                      std::to_string(labels.obj_ids[i]) + " is outside [0, " +
                      std::to_string(num_classes) + ")");
  }
}

PredictionSet validate_and_clamp(PredictionSet ps, double eps) {
  if (!(eps > 0.0 && eps <= 1e-3)) throw ArgumentError("clamp floor must lie in (0, 1e-3]");
  if (ps.probs.rows() < 1) throw DataError(ps.meta.model_id + ": no objects");
  if (ps.probs.cols() < 2) throw DataError(ps.meta.model_id + ": need at least 2 classes");
  const Eigen::Index num_classes = ps.probs.cols();
  if (eps * static_cast<double>(num_classes) >= 1.0)
    throw ArgumentError("clamp floor too large for the number of classes");
  const double exact_tol = 4.0 * static_cast<double>(num_classes) *
                           std::numeric_limits<double>::epsilon();

  for (Eigen::Index r = 0; r < ps.probs.rows(); ++r) {
    auto row = ps.probs.row(r);
    if (!row.allFinite() || (row.array() < 0.0).any())
      throw DataError(ps.meta.model_id + ": row " + std::to_string(r) +
                      " has a negative or non-finite entry");
    const double raw_sum = row.sum();
    if (std::abs(raw_sum - 1.0) > kRowSumTolerance) {
      std::ostringstream msg;
      msg.precision(6);
      msg << ps.meta.model_id << ": row " << r << " sums to " << raw_sum;
      throw DataError(msg.str());
    }
    if ((row.array() >= eps).all() && std::abs(raw_sum - 1.0) <= exact_tol) continue;

    // Pin small entries at eps, rescale the rest; repeat if rescaling pushed
    // another entry under the floor.
    std::vector<bool> pinned(static_cast<std::size_t>(num_classes), false);
    for (int pass = 0; pass <= num_classes; ++pass) {
      double free_mass = 0.0;
      Eigen::Index num_pinned = 0;
      for (Eigen::Index k = 0; k < num_classes; ++k) {
        if (!pinned[static_cast<std::size_t>(k)] && row(k) < eps) pinned[static_cast<std::size_t>(k)] = true;
        if (pinned[static_cast<std::size_t>(k)]) {
          ++num_pinned;
        } else {
          free_mass += row(k);
        }
      }
      const double scale = (1.0 - static_cast<double>(num_pinned) * eps) / free_mass;
      bool any_below = false;
      for (Eigen::Index k = 0; k < num_classes; ++k) {
        if (pinned[static_cast<std::size_t>(k)]) {
          row(k) = eps;
        } else {
          row(k) *= scale;
          any_below = any_below || row(k) < eps;
        }
      }
      if (!any_below) break;
    }
  }
  return ps;
}

PredictionSet align_to_labels(PredictionSet ps, const LabelVector& labels) {
  if (ps.obj_ids.size() != ps.num_objects())
    throw DataError(ps.meta.model_id + ": obj_ids do not match the number of rows");
  if (ps.num_objects() != labels.size())
    throw DataError(ps.meta.model_id + ": has " + std::to_string(ps.num_objects()) +
                    " objects but labels have " + std::to_string(labels.size()));
  std::vector<std::size_t> order(ps.num_objects());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t b) { return ps.obj_ids[a] < ps.obj_ids[b]; });

  PredictionSet out;
  out.meta = std::move(ps.meta);
  out.probs.resize(ps.probs.rows(), ps.probs.cols());
  out.obj_ids.resize(order.size());
  for (std::size_t i = 0; i < order.size(); ++i) {
    out.obj_ids[i] = ps.obj_ids[order[i]];
    if (out.obj_ids[i] != labels.obj_ids[i]) {
      if (i > 0 && out.obj_ids[i] == out.obj_ids[i - 1])
        throw DataError(out.meta.model_id + ": duplicate obj_id " + std::to_string(out.obj_ids[i]));
      throw DataError(out.meta.model_id + ": obj_id " + std::to_string(out.obj_ids[i]) +
                      " does not match labels (expected " + std::to_string(labels.obj_ids[i]) + ")");
    }
    out.probs.row(static_cast<Eigen::Index>(i)) = ps.probs.row(static_cast<Eigen::Index>(order[i]));
  }
  return out;
}

ModelPool make_pool(std::vector<PredictionSet> models, LabelVector labels, int num_classes,
                    double eps) {
  if (num_classes < 2) throw DataError("num_classes must be at least 2");
  if (models.empty()) throw DataError("model list is empty");
  check_labels(labels, num_classes);
  if (!std::is_sorted(labels.obj_ids.begin(), labels.obj_ids.end()))
    throw DataError("labels must be sorted by obj_id");

  ModelPool pool;
  pool.num_classes = num_classes;
  for (auto& model : models) {
    if (model.num_classes() != num_classes)
      throw DataError(model.meta.model_id + ": has " + std::to_string(model.num_classes()) +
                      " classes, manifest declares " + std::to_string(num_classes));
    if (model.meta.network_size <= 0)
      throw DataError(model.meta.model_id + ": network_size must be positive");
    const std::int64_t size = model.meta.network_size;
    pool.groups[size].push_back(align_to_labels(validate_and_clamp(std::move(model), eps), labels));
  }
  pool.labels = std::move(labels);
  return pool;
}

ModelPool load_manifest(const std::filesystem::path& path, double eps) {
  std::ifstream in = open_or_throw(path);
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw DataError(path.string() + ": invalid JSON: " + e.what());
  }
  const auto base = path.parent_path();
  const auto resolve = [&](const std::string& p) {
    const std::filesystem::path candidate(p);
    return candidate.is_absolute() ? candidate : base / candidate;
  };

  try {
    if (!doc.is_object() || !doc.contains("labels") || !doc.contains("num_classes") ||
        !doc.contains("models"))
      throw DataError("manifest requires labels, num_classes and models");
    const int num_classes = doc.at("num_classes").get<int>();
    const auto& entries = doc.at("models");
    if (!entries.is_array() || entries.empty()) throw DataError("manifest lists no models");

    LabelVector labels = load_labels_csv(resolve(doc.at("labels").get<std::string>()));
    std::vector<PredictionSet> models;
    models.reserve(entries.size());
    for (std::size_t i = 0; i < entries.size(); ++i) {
      const auto& entry = entries[i];
      const auto model_path = resolve(entry.at("path").get<std::string>());
      ModelMeta meta;
      meta.model_id = model_path.stem().string();
      meta.network_size = entry.at("network_size").get<std::int64_t>();
      if (entry.contains("width_factor") && !entry["width_factor"].is_null())
        meta.width_factor = entry["width_factor"].get<int>();
      if (!std::filesystem::exists(model_path))
        throw DataError("missing prediction file: " + model_path.string());
      PredictionSet ps = load_prediction_csv(model_path, meta);
      try {
        models.push_back(align_to_labels(validate_and_clamp(std::move(ps), eps), labels));
      } catch (const DataError& e) {
        throw DataError(model_path.string() + ": " + e.what());
      }
    }
    return make_pool(std::move(models), std::move(labels), num_classes, eps);
  } catch (const nlohmann::json::exception& e) {
    throw DataError(path.string() + ": invalid manifest: " + e.what());
  } catch (const DataError& e) {
    const std::string msg = e.what();
    if (msg.find(path.string()) != std::string::npos) throw;
    throw DataError(path.string() + ": " + msg);
  }
}

void write_prediction_csv(const std::filesystem::path& path, const PredictionSet& ps) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  out.precision(17);
  out << "obj_id";
  for (int k = 0; k < ps.num_classes(); ++k) out << ",class_" << k;
  out << '\n';
  for (Eigen::Index r = 0; r < ps.probs.rows(); ++r) {
    out << (ps.obj_ids.empty() ? static_cast<std::int64_t>(r) : ps.obj_ids[static_cast<std::size_t>(r)]);
    for (Eigen::Index k = 0; k < ps.probs.cols(); ++k) out << ',' << ps.probs(r, k);
    out << '\n';
  }
}

void write_labels_csv(const std::filesystem::path& path, const LabelVector& labels) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  out << "obj_id,label\n";
  for (std::size_t i = 0; i < labels.size(); ++i) {
    out << (labels.obj_ids.empty() ? static_cast<std::int64_t>(i) : labels.obj_ids[i]) << ','
        << labels.labels[i] << '\n';
  }
}

std::filesystem::path write_pool(const std::filesystem::path& dir, const ModelPool& pool) {
  std::filesystem::create_directories(dir);
  write_labels_csv(dir / "labels.csv", pool.labels);
  nlohmann::json manifest;
  manifest["labels"] = "labels.csv";
  manifest["num_classes"] = pool.num_classes;
  manifest["models"] = nlohmann::json::array();
  for (const auto& [size, models] : pool.groups) {
    for (std::size_t i = 0; i < models.size(); ++i) {
      const std::string name = "model_" + std::to_string(size) + "_" + std::to_string(i) + ".csv";
      write_prediction_csv(dir / name, models[i]);
      nlohmann::json entry{{"path", name}, {"network_size", size}};
      if (models[i].meta.width_factor) entry["width_factor"] = *models[i].meta.width_factor;
      manifest["models"].push_back(std::move(entry));
    }
  }
  const auto manifest_path = dir / "manifest.json";
  std::ofstream out(manifest_path);
  if (!out) throw DataError("cannot write " + manifest_path.string());
  out << manifest.dump(2) << '\n';
  return manifest_path;
}

std::vector<ProbMatrix> prob_matrices(std::span<const PredictionSet> models) {
  std::vector<ProbMatrix> out;
  out.reserve(models.size());
  for (const auto& m : models) out.push_back(m.probs);
  return out;
}

}  // namespace ens
