#pragma once

#include <algorithm>
#include <cstddef>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include <Eigen/Dense>

#include "clustids/error.hpp"

namespace clustids {

// Row-major so that one flow record is contiguous.
using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

struct FlowSchema {
  std::vector<std::string> feature_names;
  std::string label_column = "Label";

  std::size_t width() const noexcept { return feature_names.size(); }

  void validate() const {
    std::unordered_set<std::string> seen;
    for (const auto& name : feature_names) {
      if (name.empty()) throw Error("schema: empty feature name");
      if (!seen.insert(name).second) throw Error("schema: duplicate feature name '" + name + "'");
    }
    if (seen.contains(label_column)) {
      throw Error("schema: label column '" + label_column + "' is also a feature");
    }
  }

  std::optional<std::size_t> index_of(const std::string& name) const {
    auto it = std::find(feature_names.begin(), feature_names.end(), name);
    if (it == feature_names.end()) return std::nullopt;
    return static_cast<std::size_t>(it - feature_names.begin());
  }

  bool operator==(const FlowSchema&) const = default;
};

// Numeric flow features plus one class label per row. Missing cells are NaN.
struct FlowDataset {
  FlowSchema schema;
  Matrix rows;
  std::vector<std::string> labels;

  std::size_t size() const noexcept { return labels.size(); }
  std::size_t width() const noexcept { return schema.width(); }
  bool empty() const noexcept { return labels.empty(); }

  void validate() const {
    schema.validate();
    if (static_cast<std::size_t>(rows.rows()) != labels.size()) {
      throw Error("dataset: " + std::to_string(rows.rows()) + " rows but " +
                  std::to_string(labels.size()) + " labels");
    }
    if (static_cast<std::size_t>(rows.cols()) != schema.width()) {
      throw Error("dataset: matrix width does not match schema");
    }
  }

  // Rows at the given indices, in the given order.
  FlowDataset subset(std::span<const std::size_t> indices) const {
    FlowDataset out;
    out.schema = schema;
    out.rows.resize(static_cast<Eigen::Index>(indices.size()), rows.cols());
    out.labels.reserve(indices.size());
    for (std::size_t i = 0; i < indices.size(); ++i) {
      out.rows.row(static_cast<Eigen::Index>(i)) = rows.row(static_cast<Eigen::Index>(indices[i]));
      out.labels.push_back(labels[indices[i]]);
    }
    return out;
  }

  // Keeps the named feature columns, in the order given.
  FlowDataset select_features(std::span<const std::string> names) const {
    FlowDataset out;
    out.schema.label_column = schema.label_column;
    out.rows.resize(rows.rows(), static_cast<Eigen::Index>(names.size()));
    for (std::size_t j = 0; j < names.size(); ++j) {
      auto idx = schema.index_of(names[j]);
      if (!idx) throw Error("dataset: unknown feature '" + names[j] + "'");
      out.schema.feature_names.push_back(names[j]);
      out.rows.col(static_cast<Eigen::Index>(j)) = rows.col(static_cast<Eigen::Index>(*idx));
    }
    out.labels = labels;
    return out;
  }
};

// Per-class row counts, keyed by class name.
inline std::map<std::string, std::size_t> class_counts(std::span<const std::string> labels) {
  std::map<std::string, std::size_t> counts;
  for (const auto& l : labels) ++counts[l];
  return counts;
}

inline std::map<std::string, std::size_t> class_counts(const FlowDataset& d) {
  return class_counts(std::span<const std::string>(d.labels));
}

// Labels mapped to dense integer codes over a fixed class list.
struct LabelEncoding {
  std::vector<std::string> classes;
  std::vector<int> codes;
};

// Encodes against `classes`; labels outside the list raise an error.
inline LabelEncoding encode_labels(std::span<const std::string> labels,
                                   std::vector<std::string> classes) {
  std::unordered_map<std::string, int> index;
  for (std::size_t i = 0; i < classes.size(); ++i) index.emplace(classes[i], static_cast<int>(i));
  LabelEncoding enc{std::move(classes), {}};
  enc.codes.reserve(labels.size());
  for (std::size_t i = 0; i < labels.size(); ++i) {
    auto it = index.find(labels[i]);
    if (it == index.end()) {
      throw Error("label '" + labels[i] + "' at row " + std::to_string(i) + " is not in the class list");
    }
    enc.codes.push_back(it->second);
  }
  return enc;
}

// Encodes against the sorted set of distinct labels.
inline LabelEncoding encode_labels(std::span<const std::string> labels) {
  std::vector<std::string> classes;
  for (const auto& [name, count] : class_counts(labels)) classes.push_back(name);
  return encode_labels(labels, std::move(classes));
}

}  // namespace clustids
