#pragma once

#include <fstream>
#include <ostream>
#include <string>
#include <vector>

#include "json.hpp"

#include "cfvi/clustering.hpp"
#include "cfvi/data.hpp"
#include "cfvi/error.hpp"
#include "cfvi/importance.hpp"

namespace cfvi {

using Json = nlohmann::json;

inline std::vector<std::string> column_names(const FeatureSet& fs, const std::vector<std::string>& names) {
  std::vector<std::string> out;
  for (std::size_t j : fs) out.push_back(names.at(j));
  return out;
}

inline std::string join_names(const FeatureSet& fs, const std::vector<std::string>& names, char sep = '+') {
  std::string out;
  for (std::size_t j : fs) {
    if (!out.empty()) out += sep;
    out += names.at(j);
  }
  return out;
}

inline Json to_json(const Diagnostics& d) {
  return {{"degenerate_predictions", d.degenerate_predictions},
          {"zeroed_corrections", d.zeroed_corrections},
          {"excluded_rows", d.excluded_rows},
          {"base_fallbacks", d.base_fallbacks}};
}

namespace detail {

inline Json optional_number(const std::optional<double>& v) { return v ? Json(*v) : Json(nullptr); }

}  // namespace detail

/// Report body: targets[], baseline, variant, repetitions, diagnostics. With
/// Variant::both the corrected numbers fill the plain fields and the
/// uncorrected ones go to *_uncorrected fields.
inline Json report_json(const ImportanceResult& result, Variant variant, const std::vector<std::string>& names) {
  const ImportanceReport& main = result.get(variant);
  const bool both = variant == Variant::both;
  Json j;
  j["variant"] = std::string(to_string(variant));
  j["repetitions"] = main.repetitions;
  j["baseline"] = main.baseline;
  j["baseline_std_dev"] = detail::optional_number(main.baseline_std_dev);
  if (both) {
    j["baseline_uncorrected"] = result.uncorrected.baseline;
    j["baseline_std_dev_uncorrected"] = detail::optional_number(result.uncorrected.baseline_std_dev);
  }
  Json targets = Json::array();
  for (std::size_t g = 0; g < main.targets.size(); ++g) {
    const auto& t = main.targets[g];
    Json row{{"label", t.label},
             {"columns", column_names(t.columns, names)},
             {"value", t.value},
             {"std_dev", detail::optional_number(t.std_dev)},
             {"per_repetition", t.per_repetition}};
    if (both) {
      const auto& u = result.uncorrected.targets[g];
      row["value_uncorrected"] = u.value;
      row["std_dev_uncorrected"] = detail::optional_number(u.std_dev);
      row["per_repetition_uncorrected"] = u.per_repetition;
    }
    targets.push_back(std::move(row));
  }
  j["targets"] = std::move(targets);
  j["diagnostics"] = to_json(main.diagnostics);
  return j;
}

/// One line per target. Empty std_dev cells mean a single repetition.
inline void write_report_csv(std::ostream& out, const ImportanceResult& result, Variant variant,
                             const std::vector<std::string>& names) {
  const ImportanceReport& main = result.get(variant);
  const bool both = variant == Variant::both;
  auto cell = [](const std::optional<double>& v) { return v ? detail::format_real(*v) : std::string(); };
  out << "label,columns,value,std_dev";
  if (both) out << ",value_uncorrected,std_dev_uncorrected";
  out << '\n';
  auto line = [&](const std::string& label, const std::string& columns, double v, const std::optional<double>& sd,
                  double vu, const std::optional<double>& sdu) {
    out << label << ',' << columns << ',' << detail::format_real(v) << ',' << cell(sd);
    if (both) out << ',' << detail::format_real(vu) << ',' << cell(sdu);
    out << '\n';
  };
  for (std::size_t g = 0; g < main.targets.size(); ++g) {
    const auto& t = main.targets[g];
    const auto& u = result.uncorrected.targets[g];
    line(t.label, join_names(t.columns, names, ' '), t.value, t.std_dev, u.value, u.std_dev);
  }
  line("(baseline)", "", main.baseline, main.baseline_std_dev, result.uncorrected.baseline,
       result.uncorrected.baseline_std_dev);
}

/// Groups from a JSON array of {"label": ..., "columns": [names]}. Columns no
/// group mentions are appended as singletons unless `only_groups`.
inline std::vector<Group> parse_groups(const Json& doc, const std::vector<std::string>& names, bool only_groups) {
  if (!doc.is_array()) throw Error(ErrorKind::InvalidArgument, "groups file must hold a JSON array");
  std::vector<Group> groups;
  std::vector<bool> listed(names.size(), false);
  for (const auto& entry : doc) {
    if (!entry.is_object() || !entry.contains("columns") || !entry["columns"].is_array()) {
      throw Error(ErrorKind::InvalidArgument, "each group needs a \"columns\" array");
    }
    std::vector<std::size_t> idx;
    for (const auto& col : entry["columns"]) {
      if (!col.is_string()) throw Error(ErrorKind::InvalidArgument, "group columns must be names");
      const auto it = std::find(names.begin(), names.end(), col.get<std::string>());
      if (it == names.end()) {
        throw Error(ErrorKind::MissingColumn, "group column '" + col.get<std::string>() + "' not in data");
      }
      idx.push_back(static_cast<std::size_t>(it - names.begin()));
      listed[idx.back()] = true;
    }
    FeatureSet fs(std::move(idx));
    if (fs.empty()) throw Error(ErrorKind::InvalidArgument, "group with no columns");
    std::string label = entry.contains("label") && entry["label"].is_string() ? entry["label"].get<std::string>()
                                                                             : join_names(fs, names);
    groups.push_back({std::move(label), std::move(fs)});
  }
  if (!only_groups) {
    for (std::size_t j = 0; j < names.size(); ++j) {
      if (!listed[j]) groups.push_back({names[j], FeatureSet{j}});
    }
  }
  if (groups.empty()) throw Error(ErrorKind::InvalidArgument, "groups file lists no groups");
  return groups;
}

inline std::vector<Group> load_groups(const std::string& path, const std::vector<std::string>& names,
                                      bool only_groups) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::InvalidArgument, "cannot open groups file " + path);
  Json doc;
  try {
    doc = Json::parse(in);
  } catch (const Json::parse_error& e) {
    throw Error(ErrorKind::InvalidArgument, std::string("groups file is not JSON: ") + e.what());
  }
  return parse_groups(doc, names, only_groups);
}

/// Correlation clusters as groups labelled by their joined column names.
inline std::vector<Group> cluster_groups(const Dataset& d, std::size_t k) {
  std::vector<Group> groups;
  for (auto& fs : correlation_groups(d, k).groups) groups.push_back({join_names(fs, d.feature_names()), fs});
  return groups;
}

}  // namespace cfvi
