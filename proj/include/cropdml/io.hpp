#pragma once

#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "cropdml/causal.hpp"
#include "cropdml/config.hpp"
#include "cropdml/core.hpp"
#include "cropdml/csv.hpp"
#include "cropdml/geoingest.hpp"

namespace cropdml::io {

using Json = nlohmann::ordered_json;

inline void write_file(const std::filesystem::path& path, std::string_view content) {
  if (path.has_parent_path()) {
    std::error_code ec;
    std::filesystem::create_directories(path.parent_path(), ec);
    require(!ec, ErrorCode::kIo, "cannot create directory",
            {{"dir", path.parent_path().string()}, {"reason", ec.message()}});
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  require(static_cast<bool>(out), ErrorCode::kIo, "cannot write file", {{"file", path.string()}});
  out.write(content.data(), static_cast<std::streamsize>(content.size()));
  require(static_cast<bool>(out), ErrorCode::kIo, "write failed", {{"file", path.string()}});
}

inline void write_json(const std::filesystem::path& path, const Json& j) {
  write_file(path, j.dump(2) + "\n");
}

inline Json read_json(const std::filesystem::path& path) {
  const std::string text = read_file(path);
  try {
    return Json::parse(text);
  } catch (const Json::parse_error& e) {
    fail(ErrorCode::kSchema, "invalid JSON", {{"file", path.string()}, {"reason", e.what()}});
  }
}

template <typename T>
T json_get(const Json& j, const char* key, const std::filesystem::path& source) {
  require(j.contains(key), ErrorCode::kSchema, "missing JSON field",
          {{"file", source.string()}, {"field", key}});
  try {
    return j.at(key).get<T>();
  } catch (const Json::exception&) {
    fail(ErrorCode::kSchema, "wrong JSON field type", {{"file", source.string()}, {"field", key}});
  }
}

// Sidecar paths of a dataset file "dir/name.csv".
inline std::filesystem::path scaler_path(const std::filesystem::path& dataset) {
  auto p = dataset;
  return p.replace_extension(".scaler.json");
}
inline std::filesystem::path coverage_path(const std::filesystem::path& dataset) {
  auto p = dataset;
  return p.replace_extension(".coverage.csv");
}

inline Json scaler_json(const Scaler& s) {
  return {{"columns", s.column_names}, {"means", s.means}, {"stds", s.stds}};
}

inline Scaler scaler_from_json(const Json& j, const std::filesystem::path& source) {
  Scaler s;
  s.column_names = json_get<std::vector<std::string>>(j, "columns", source);
  s.means = json_get<std::vector<double>>(j, "means", source);
  s.stds = json_get<std::vector<double>>(j, "stds", source);
  require(s.means.size() == s.column_names.size() && s.stds.size() == s.column_names.size(),
          ErrorCode::kSchema, "scaler vectors differ in length", {{"file", source.string()}});
  return s;
}

// Per-cell analysis table: standardized covariates, treatment, outcome and
// cell geometry, as written by ingest and simulate --emit-dataset.
struct DatasetFile {
  LabeledDataset data;  // row ids are cell ids
  Scaler scaler;
  std::vector<CellId> cells;
  std::vector<Point> centers;
  std::optional<std::map<CellId, double>> coverage;

  FeatureMatrix raw_x() const { return scaler.inverse(data.x); }
};

inline void write_dataset(const std::filesystem::path& path, const DatasetFile& d) {
  std::string out = "cell_id,x_center,y_center";
  for (const auto& name : d.data.x.column_names()) out += "," + csv::quote(name);
  out += ",treatment,outcome\n";
  for (std::size_t i = 0; i < d.data.size(); ++i) {
    out += std::to_string(d.cells[i]) + "," + csv::format_double(d.centers[i].x) + "," +
           csv::format_double(d.centers[i].y);
    for (std::size_t j = 0; j < d.data.x.cols(); ++j) out += "," + csv::format_double(d.data.x(i, j));
    out += "," + std::to_string(d.data.t[i]) + "," + csv::format_double(d.data.y[i]) + "\n";
  }
  write_file(path, out);
  write_json(scaler_path(path), scaler_json(d.scaler));
  if (d.coverage) {
    std::string cov = "cell_id,coverage\n";
    for (const auto& [cell, c] : *d.coverage) {
      cov += std::to_string(cell) + "," + csv::format_double(c) + "\n";
    }
    write_file(coverage_path(path), cov);
  }
}

inline DatasetFile read_dataset(const std::filesystem::path& path) {
  const csv::Table table = csv::read(path.string());
  const auto& h = table.header;
  require(h.size() >= 6 && h[0] == "cell_id" && h[1] == "x_center" && h[2] == "y_center" &&
              h[h.size() - 2] == "treatment" && h.back() == "outcome",
          ErrorCode::kSchema,
          "dataset header must be cell_id,x_center,y_center,<covariates>,treatment,outcome",
          {{"file", path.string()}, {"line", "1"}});
  const std::vector<std::string> names(h.begin() + 3, h.end() - 2);
  const std::size_t p = names.size();
  DatasetFile d;
  std::vector<double> values;
  values.reserve(table.rows.size() * p);
  std::vector<std::string> ids;
  for (const auto& row : table.rows) {
    d.cells.push_back(table.integer(row, 0));
    d.centers.push_back({table.number(row, 1), table.number(row, 2)});
    for (std::size_t j = 0; j < p; ++j) values.push_back(table.number(row, 3 + j));
    const auto t = table.integer(row, h.size() - 2);
    require(t == 0 || t == 1, ErrorCode::kSchema, "treatment must be 0 or 1",
            {{"file", path.string()}, {"line", std::to_string(row.line)}, {"column", "treatment"}});
    d.data.t.push_back(static_cast<int>(t));
    d.data.y.push_back(table.number(row, h.size() - 1));
    ids.push_back(std::to_string(d.cells.back()));
  }
  d.data.x = FeatureMatrix(names, table.rows.size(), std::move(values), std::move(ids));
  d.data.validate();

  const auto sp = scaler_path(path);
  d.scaler = scaler_from_json(read_json(sp), sp);
  require(d.scaler.column_names == names, ErrorCode::kSchema,
          "scaler columns differ from dataset columns", {{"file", sp.string()}});

  const auto cp = coverage_path(path);
  if (std::filesystem::exists(cp)) {
    const csv::Table cov = csv::read(cp.string());
    const std::size_t c_cell = cov.column("cell_id");
    const std::size_t c_cov = cov.column("coverage");
    std::map<CellId, double> m;
    for (const auto& row : cov.rows) m[cov.integer(row, c_cell)] = cov.number(row, c_cov);
    d.coverage = std::move(m);
  }
  return d;
}

inline Json estimate_json(const causal::EffectEstimate& e) {
  return {{"point", e.point},
          {"std_error", e.std_error},
          {"ci_low", e.ci_low},
          {"ci_high", e.ci_high},
          {"p_value", e.p_value}};
}

inline Json model_json(const causal::LinearCateModel& m) {
  Json cov = Json::array();
  for (Eigen::Index r = 0; r < m.covariance.rows(); ++r) {
    Json row = Json::array();
    for (Eigen::Index c = 0; c < m.covariance.cols(); ++c) row.push_back(m.covariance(r, c));
    cov.push_back(std::move(row));
  }
  return {{"format", "cropdml-linear-cate"},
          {"version", 1},
          {"columns", m.column_names},
          {"intercept", m.intercept},
          {"beta", m.beta},
          {"covariance", std::move(cov)},
          {"n_obs", m.n_obs},
          {"scaler", scaler_json(m.scaler)}};
}

inline causal::LinearCateModel model_from_json(const Json& j, const std::filesystem::path& source) {
  require(j.value("format", "") == "cropdml-linear-cate" && j.value("version", 0) == 1,
          ErrorCode::kSchema, "not a version 1 cropdml model file", {{"file", source.string()}});
  causal::LinearCateModel m;
  m.column_names = json_get<std::vector<std::string>>(j, "columns", source);
  m.intercept = json_get<double>(j, "intercept", source);
  m.beta = json_get<std::vector<double>>(j, "beta", source);
  m.n_obs = json_get<std::size_t>(j, "n_obs", source);
  require(j.contains("scaler"), ErrorCode::kSchema, "missing JSON field",
          {{"file", source.string()}, {"field", "scaler"}});
  m.scaler = scaler_from_json(j.at("scaler"), source);
  const auto rows = json_get<std::vector<std::vector<double>>>(j, "covariance", source);
  const std::size_t k = m.beta.size() + 1;
  require(m.column_names.size() == m.beta.size() && rows.size() == k, ErrorCode::kSchema,
          "model dimensions disagree", {{"file", source.string()}});
  m.covariance.resize(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(k));
  for (std::size_t r = 0; r < k; ++r) {
    require(rows[r].size() == k, ErrorCode::kSchema, "covariance is not square",
            {{"file", source.string()}});
    for (std::size_t c = 0; c < k; ++c) {
      m.covariance(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = rows[r][c];
    }
  }
  return m;
}

}  // namespace cropdml::io
