#pragma once

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "clustids/dataset.hpp"
#include "clustids/error.hpp"

namespace clustids {

namespace csv {

inline std::string_view trim(std::string_view s) {
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
  return s;
}

// Splits one CSV record. Fields may be double-quoted with "" as an escaped quote.
inline std::vector<std::string> split_line(std::string_view line) {
  std::vector<std::string> fields;
  std::string field;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"') {
        if (i + 1 < line.size() && line[i + 1] == '"') {
          field.push_back('"');
          ++i;
        } else {
          quoted = false;
        }
      } else {
        field.push_back(c);
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      fields.push_back(std::move(field));
      field.clear();
    } else {
      field.push_back(c);
    }
  }
  fields.push_back(std::move(field));
  return fields;
}

// Parses a numeric cell; anything unparseable becomes NaN (a missing marker).
// "inf"/"Infinity" parse to infinities and are removed later by clean().
inline double parse_cell(std::string_view cell) {
  cell = trim(cell);
  if (cell.empty()) return std::numeric_limits<double>::quiet_NaN();
  if (cell.front() == '+') cell.remove_prefix(1);
  double value = 0.0;
  auto [ptr, ec] = std::from_chars(cell.data(), cell.data() + cell.size(), value);
  if (ec == std::errc::result_out_of_range) {
    return cell.front() == '-' ? -std::numeric_limits<double>::infinity()
                               : std::numeric_limits<double>::infinity();
  }
  if (ec != std::errc() || ptr != cell.data() + cell.size()) {
    return std::numeric_limits<double>::quiet_NaN();
  }
  return value;
}

// Header cells trimmed; repeated names get ".1", ".2", ... suffixes, so the
// second "Fwd Header Length" column of CICIDS-2017 becomes "Fwd Header Length.1".
inline std::vector<std::string> normalize_header(const std::vector<std::string>& raw) {
  std::vector<std::string> out;
  std::unordered_map<std::string, int> seen;
  std::unordered_set<std::string> used;
  for (const auto& cell : raw) {
    std::string name(trim(cell));
    if (name.size() >= 3 && static_cast<unsigned char>(name[0]) == 0xEF &&
        static_cast<unsigned char>(name[1]) == 0xBB && static_cast<unsigned char>(name[2]) == 0xBF) {
      name.erase(0, 3);  // UTF-8 BOM
    }
    std::string unique = name;
    if (used.contains(unique)) {
      int& n = seen[name];
      do {
        unique = name + "." + std::to_string(++n);
      } while (used.contains(unique));
    }
    used.insert(unique);
    out.push_back(std::move(unique));
  }
  return out;
}

inline std::vector<std::string> read_header(std::istream& in, const std::string& source) {
  std::string line;
  if (!std::getline(in, line)) throw Error(source + ": empty file, no header row");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  return normalize_header(split_line(line));
}

}  // namespace csv

// Builds a schema from a CSV header: every column except `label_column` is a feature.
inline FlowSchema infer_schema(const std::filesystem::path& path, const std::string& label_column = "Label") {
  std::ifstream in(path);
  if (!in) throw Error("cannot open '" + path.string() + "'");
  auto header = csv::read_header(in, path.string());
  FlowSchema schema;
  schema.label_column = label_column;
  bool has_label = false;
  for (auto& name : header) {
    if (name == label_column) {
      has_label = true;
    } else {
      schema.feature_names.push_back(std::move(name));
    }
  }
  if (!has_label) throw Error(path.string() + ": header has no label column '" + label_column + "'");
  schema.validate();
  return schema;
}

// Reads CSV text whose header matches `schema` (column order may differ).
// `source` names the input in diagnostics; `line_no` is the line count already consumed.
inline FlowDataset load_csv(std::istream& in, const std::string& source, const FlowSchema& schema,
                            std::size_t line_no = 0) {
  schema.validate();
  const auto header = csv::read_header(in, source);
  ++line_no;

  // Column position in the file -> feature index (or -1 for the label).
  std::unordered_map<std::string, int> wanted;
  for (std::size_t j = 0; j < schema.feature_names.size(); ++j) {
    wanted.emplace(schema.feature_names[j], static_cast<int>(j));
  }
  wanted.emplace(schema.label_column, -1);
  std::vector<int> target(header.size(), -2);
  std::set<std::string> unexpected;
  std::set<std::string> present;
  for (std::size_t c = 0; c < header.size(); ++c) {
    auto it = wanted.find(header[c]);
    if (it == wanted.end()) {
      unexpected.insert(header[c]);
    } else {
      target[c] = it->second;
      present.insert(header[c]);
    }
  }
  std::vector<std::string> missing;
  for (const auto& [name, idx] : wanted) {
    if (!present.contains(name)) missing.push_back(name);
  }
  if (!missing.empty() || !unexpected.empty()) {
    std::sort(missing.begin(), missing.end());
    std::ostringstream msg;
    msg << source << ": header mismatch;";
    if (!missing.empty()) {
      msg << " missing columns:";
      for (const auto& m : missing) msg << " '" << m << "'";
      msg << ";";
    }
    if (!unexpected.empty()) {
      msg << " unexpected columns:";
      for (const auto& u : unexpected) msg << " '" << u << "'";
    }
    throw Error(msg.str());
  }

  const std::size_t width = schema.width();
  std::vector<double> cells;
  std::vector<std::string> labels;
  std::vector<double> row(width);
  std::string line;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (csv::trim(line).empty()) continue;
    const auto fields = csv::split_line(line);
    if (fields.size() != header.size()) {
      throw Error(source + ": line " + std::to_string(line_no) + " has " +
                  std::to_string(fields.size()) + " fields, expected " + std::to_string(header.size()));
    }
    std::string label;
    for (std::size_t c = 0; c < fields.size(); ++c) {
      if (target[c] == -1) {
        label = std::string(csv::trim(fields[c]));
      } else {
        row[static_cast<std::size_t>(target[c])] = csv::parse_cell(fields[c]);
      }
    }
    cells.insert(cells.end(), row.begin(), row.end());
    labels.push_back(std::move(label));
  }

  FlowDataset d;
  d.schema = schema;
  d.rows = Eigen::Map<Matrix>(cells.data(), static_cast<Eigen::Index>(labels.size()),
                              static_cast<Eigen::Index>(width));
  d.labels = std::move(labels);
  return d;
}

inline FlowDataset load_csv(const std::filesystem::path& path, const FlowSchema& schema) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open '" + path.string() + "'");
  return load_csv(in, path.string(), schema);
}

// Concatenates several files sharing one schema, in the order given.
inline FlowDataset load_csv(const std::vector<std::filesystem::path>& paths, const FlowSchema& schema) {
  std::vector<FlowDataset> parts;
  Eigen::Index total = 0;
  for (const auto& p : paths) {
    parts.push_back(load_csv(p, schema));
    total += parts.back().rows.rows();
  }
  FlowDataset d;
  d.schema = schema;
  d.rows.resize(total, static_cast<Eigen::Index>(schema.width()));
  Eigen::Index at = 0;
  for (auto& part : parts) {
    d.rows.middleRows(at, part.rows.rows()) = part.rows;
    at += part.rows.rows();
    d.labels.insert(d.labels.end(), std::make_move_iterator(part.labels.begin()),
                    std::make_move_iterator(part.labels.end()));
  }
  return d;
}

// Drops every row holding a missing or non-finite cell. Survivor order is kept.
inline FlowDataset clean(const FlowDataset& d) {
  std::vector<std::size_t> keep;
  keep.reserve(d.size());
  for (Eigen::Index i = 0; i < d.rows.rows(); ++i) {
    if (d.rows.row(i).allFinite()) keep.push_back(static_cast<std::size_t>(i));
  }
  return d.subset(keep);
}

// Removes exact duplicate records (features and label), keeping first occurrences.
inline FlowDataset drop_duplicates(const FlowDataset& d) {
  std::unordered_set<std::string> seen;
  std::vector<std::size_t> keep;
  const auto width = static_cast<std::size_t>(d.rows.cols());
  std::string key;
  for (Eigen::Index i = 0; i < d.rows.rows(); ++i) {
    key.assign(reinterpret_cast<const char*>(d.rows.row(i).data()), width * sizeof(double));
    key.push_back('\0');
    key += d.labels[static_cast<std::size_t>(i)];
    if (seen.insert(key).second) keep.push_back(static_cast<std::size_t>(i));
  }
  return d.subset(keep);
}

// Trims, collapses internal whitespace, and rewrites dash look-alikes
// (en/em dashes, minus sign, U+FFFD, a stray cp1252 0x96 byte) as '-'.
inline std::string normalize_label(std::string_view raw) {
  std::string s;
  s.reserve(raw.size());
  for (std::size_t i = 0; i < raw.size(); ++i) {
    const auto c = static_cast<unsigned char>(raw[i]);
    if (c == 0xE2 && i + 2 < raw.size()) {
      const auto c1 = static_cast<unsigned char>(raw[i + 1]);
      const auto c2 = static_cast<unsigned char>(raw[i + 2]);
      if ((c1 == 0x80 && c2 >= 0x90 && c2 <= 0x95) || (c1 == 0x88 && c2 == 0x92)) {
        s.push_back('-');
        i += 2;
        continue;
      }
    }
    if (c == 0xEF && i + 2 < raw.size() && static_cast<unsigned char>(raw[i + 1]) == 0xBF &&
        static_cast<unsigned char>(raw[i + 2]) == 0xBD) {
      s.push_back('-');
      i += 2;
      continue;
    }
    if (c == 0x96) {
      s.push_back('-');
      continue;
    }
    if (std::isspace(c)) {
      if (!s.empty() && s.back() != ' ') s.push_back(' ');
      continue;
    }
    s.push_back(static_cast<char>(c));
  }
  while (!s.empty() && s.back() == ' ') s.pop_back();
  return s;
}

// Matching key: normalized, case-folded, no spaces around dashes.
inline std::string label_key(std::string_view raw) {
  const std::string s = normalize_label(raw);
  std::string key;
  key.reserve(s.size());
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (s[i] == ' ' && ((i + 1 < s.size() && s[i + 1] == '-') || (!key.empty() && key.back() == '-'))) {
      continue;
    }
    key.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(s[i]))));
  }
  return key;
}

// Total mapping from original class names to grouped class names.
class LabelMap {
 public:
  LabelMap() = default;

  void add(const std::string& original, const std::string& group) {
    const std::string key = label_key(original);
    if (key.empty()) throw Error("label map: empty original label");
    const std::string g = normalize_label(group);
    if (g.empty()) throw Error("label map: empty group for '" + original + "'");
    auto [it, inserted] = index_.emplace(key, entries_.size());
    if (!inserted) {
      if (entries_[it->second].second != g) {
        throw Error("label map: '" + original + "' mapped to both '" + entries_[it->second].second +
                    "' and '" + g + "'");
      }
      return;
    }
    entries_.emplace_back(normalize_label(original), g);
  }

  // Parses "original = group" lines; '#' starts a comment.
  static LabelMap parse(std::string_view text) {
    LabelMap m;
    std::istringstream in{std::string(text)};
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
      ++line_no;
      if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
      if (csv::trim(line).empty()) continue;
      const auto eq = line.find('=');
      if (eq == std::string::npos) {
        throw Error("label map: line " + std::to_string(line_no) + " has no '='");
      }
      m.add(std::string(csv::trim(std::string_view(line).substr(0, eq))),
            std::string(csv::trim(std::string_view(line).substr(eq + 1))));
    }
    return m;
  }

  static LabelMap load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw Error("cannot open label map '" + path.string() + "'");
    std::stringstream ss;
    ss << in.rdbuf();
    return parse(ss.str());
  }

  // 15 CICIDS-2017 labels grouped into 7 classes.
  static LabelMap cicids2017() { return parse(kCicids2017Text); }

  const std::string* find(std::string_view label) const {
    auto it = index_.find(label_key(label));
    return it == index_.end() ? nullptr : &entries_[it->second].second;
  }

  std::vector<std::string> domain() const {
    std::vector<std::string> out;
    for (const auto& [orig, group] : entries_) out.push_back(orig);
    return out;
  }

  std::vector<std::string> range() const {
    std::set<std::string> groups;
    for (const auto& [orig, group] : entries_) groups.insert(group);
    return {groups.begin(), groups.end()};
  }

  std::size_t size() const noexcept { return entries_.size(); }

  std::string to_text() const {
    std::string out;
    for (const auto& [orig, group] : entries_) out += orig + " = " + group + "\n";
    return out;
  }

  static constexpr std::string_view kCicids2017Text =
      "# CICIDS-2017 original label = grouped label\n"
      "BENIGN = Benign\n"
      "Bot = Bot\n"
      "FTP-Patator = Brute Force\n"
      "SSH-Patator = Brute Force\n"
      "DDoS = DoS/DDoS\n"
      "DoS GoldenEye = DoS/DDoS\n"
      "DoS Hulk = DoS/DDoS\n"
      "DoS Slowhttptest = DoS/DDoS\n"
      "DoS slowloris = DoS/DDoS\n"
      "Heartbleed = DoS/DDoS\n"
      "Infiltration = Infiltration\n"
      "PortScan = PortScan\n"
      "Web Attack - Brute Force = Web Attack\n"
      "Web Attack - Sql Injection = Web Attack\n"
      "Web Attack - XSS = Web Attack\n";

 private:
  std::vector<std::pair<std::string, std::string>> entries_;
  std::unordered_map<std::string, std::size_t> index_;
};

// Replaces every label by its group. Features are copied untouched.
inline FlowDataset group_labels(const FlowDataset& d, const LabelMap& map) {
  FlowDataset out;
  out.schema = d.schema;
  out.rows = d.rows;
  out.labels.reserve(d.size());
  // Most datasets repeat a handful of labels; cache the lookups.
  std::unordered_map<std::string, const std::string*> cache;
  for (std::size_t i = 0; i < d.labels.size(); ++i) {
    const auto& label = d.labels[i];
    auto it = cache.find(label);
    if (it == cache.end()) it = cache.emplace(label, map.find(label)).first;
    if (it->second == nullptr) {
      throw Error("unknown label '" + label + "' first seen at row " + std::to_string(i));
    }
    out.labels.push_back(*it->second);
  }
  return out;
}

// The 78 feature columns of the CICIDS-2017 MachineLearningCVE files.
inline FlowSchema cicids2017_schema() {
  return FlowSchema{
      {"Destination Port", "Flow Duration", "Total Fwd Packets", "Total Backward Packets",
       "Total Length of Fwd Packets", "Total Length of Bwd Packets", "Fwd Packet Length Max",
       "Fwd Packet Length Min", "Fwd Packet Length Mean", "Fwd Packet Length Std",
       "Bwd Packet Length Max", "Bwd Packet Length Min", "Bwd Packet Length Mean",
       "Bwd Packet Length Std", "Flow Bytes/s", "Flow Packets/s", "Flow IAT Mean", "Flow IAT Std",
       "Flow IAT Max", "Flow IAT Min", "Fwd IAT Total", "Fwd IAT Mean", "Fwd IAT Std", "Fwd IAT Max",
       "Fwd IAT Min", "Bwd IAT Total", "Bwd IAT Mean", "Bwd IAT Std", "Bwd IAT Max", "Bwd IAT Min",
       "Fwd PSH Flags", "Bwd PSH Flags", "Fwd URG Flags", "Bwd URG Flags", "Fwd Header Length",
       "Bwd Header Length", "Fwd Packets/s", "Bwd Packets/s", "Min Packet Length",
       "Max Packet Length", "Packet Length Mean", "Packet Length Std", "Packet Length Variance",
       "FIN Flag Count", "SYN Flag Count", "RST Flag Count", "PSH Flag Count", "ACK Flag Count",
       "URG Flag Count", "CWE Flag Count", "ECE Flag Count", "Down/Up Ratio", "Average Packet Size",
       "Avg Fwd Segment Size", "Avg Bwd Segment Size", "Fwd Header Length.1", "Fwd Avg Bytes/Bulk",
       "Fwd Avg Packets/Bulk", "Fwd Avg Bulk Rate", "Bwd Avg Bytes/Bulk", "Bwd Avg Packets/Bulk",
       "Bwd Avg Bulk Rate", "Subflow Fwd Packets", "Subflow Fwd Bytes", "Subflow Bwd Packets",
       "Subflow Bwd Bytes", "Init_Win_bytes_forward", "Init_Win_bytes_backward", "act_data_pkt_fwd",
       "min_seg_size_forward", "Active Mean", "Active Std", "Active Max", "Active Min", "Idle Mean",
       "Idle Std", "Idle Max", "Idle Min"},
      "Label"};
}

}  // namespace clustids
