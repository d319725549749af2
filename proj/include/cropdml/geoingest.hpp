#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <set>
#include <span>
#include <string>
#include <tuple>
#include <utility>
#include <vector>

#include "cropdml/core.hpp"
#include "cropdml/csv.hpp"
#include "cropdml/geometry.hpp"
#include "cropdml/parallel.hpp"

namespace cropdml {

using CellId = std::int64_t;

// Abundance below this counts as absent crop.
inline constexpr double kAbundanceEpsilon = 1e-9;

// One crop parcel. Construction validates the ring and orients it
// counterclockwise; failures carry the parcel id.
class ParcelRecord {
 public:
  ParcelRecord(std::string parcel_id, int year, std::string crop_code,
               std::vector<Point> ring)
      : parcel_id_(std::move(parcel_id)), year_(year), crop_code_(std::move(crop_code)) {
    // Drop repeated consecutive vertices (and a repeated closing vertex).
    for (const auto& p : ring) {
      if (ring_.empty() || ring_.back().x != p.x || ring_.back().y != p.y) ring_.push_back(p);
    }
    while (ring_.size() > 1 && ring_.front().x == ring_.back().x &&
           ring_.front().y == ring_.back().y) {
      ring_.pop_back();
    }
    Error::Details ctx = {{"parcel_id", parcel_id_}};
    require(ring_.size() >= 3, ErrorCode::kInvalidArgument,
            "parcel polygon needs at least 3 distinct vertices", ctx);
    for (const auto& p : ring_) {
      require(std::isfinite(p.x) && std::isfinite(p.y), ErrorCode::kInvalidArgument,
              "parcel polygon has a non-finite vertex", ctx);
    }
    const double area = signed_area(ring_);
    require(area != 0.0, ErrorCode::kInvalidArgument, "parcel polygon has zero area", ctx);
    require(is_simple(ring_), ErrorCode::kInvalidArgument,
            "parcel polygon is self-intersecting", ctx);
    if (area < 0.0) std::reverse(ring_.begin(), ring_.end());
    area_ = std::abs(area);
    bounds_ = bounding_box(ring_);
  }

  const std::string& parcel_id() const { return parcel_id_; }
  int year() const { return year_; }
  const std::string& crop_code() const { return crop_code_; }
  const std::vector<Point>& ring() const { return ring_; }
  double area() const { return area_; }
  const Rect& bounds() const { return bounds_; }

 private:
  std::string parcel_id_;
  int year_ = 0;
  std::string crop_code_;
  std::vector<Point> ring_;
  double area_ = 0.0;
  Rect bounds_;
};

// Area of parcel ∩ cell; 0 when disjoint.
inline double clip_polygon_to_cell(const ParcelRecord& parcel, const Rect& cell) {
  const Rect& b = parcel.bounds();
  if (b.max_x <= cell.min_x || b.min_x >= cell.max_x || b.max_y <= cell.min_y ||
      b.min_y >= cell.max_y) {
    return 0.0;
  }
  if (cell.contains(b)) return parcel.area();
  const auto clipped = clip_to_rect(parcel.ring(), cell);
  return std::abs(signed_area(clipped));
}

// Regular grid; row 0 is the northernmost row, cell ids are row-major.
struct GridSpec {
  double origin_x = 0.0;
  double origin_y = 0.0;
  double cell_size = 500.0;
  int n_cols = 1;
  int n_rows = 1;

  void validate() const {
    require(std::isfinite(origin_x) && std::isfinite(origin_y), ErrorCode::kInvalidArgument,
            "grid origin must be finite");
    require(cell_size > 0.0 && std::isfinite(cell_size), ErrorCode::kInvalidArgument,
            "grid cell_size must be positive");
    require(n_cols > 0 && n_rows > 0, ErrorCode::kInvalidArgument,
            "grid dimensions must be positive");
  }

  CellId cell_count() const { return static_cast<CellId>(n_cols) * n_rows; }
  CellId cell_id(int row, int col) const { return static_cast<CellId>(row) * n_cols + col; }
  bool contains(CellId id) const { return id >= 0 && id < cell_count(); }
  int row_of(CellId id) const { return static_cast<int>(id / n_cols); }
  int col_of(CellId id) const { return static_cast<int>(id % n_cols); }

  Rect cell_bounds(CellId id) const {
    const int i = row_of(id);
    const int j = col_of(id);
    return {origin_x + j * cell_size, origin_y - (i + 1) * cell_size,
            origin_x + (j + 1) * cell_size, origin_y - i * cell_size};
  }
  Point cell_center(CellId id) const {
    const Rect r = cell_bounds(id);
    return {0.5 * (r.min_x + r.max_x), 0.5 * (r.min_y + r.max_y)};
  }
  double cell_area() const { return cell_size * cell_size; }
};

struct CellYear {
  CellId cell = 0;
  int year = 0;
  auto operator<=>(const CellYear&) const = default;
};

// Fraction of each cell covered by each crop, per year.
class AbundanceTable {
 public:
  using CropMap = std::map<std::string, double>;

  void set(CellYear key, CropMap crops) { entries_[key] = std::move(crops); }

  bool contains(CellId cell, int year) const { return entries_.count({cell, year}) > 0; }

  const CropMap& crops(CellId cell, int year) const {
    auto it = entries_.find({cell, year});
    require(it != entries_.end(), ErrorCode::kInvalidArgument,
            "cell/year not present in abundance table",
            {{"cell_id", std::to_string(cell)}, {"year", std::to_string(year)}});
    return it->second;
  }

  double abundance(CellId cell, int year, const std::string& crop) const {
    const auto& m = crops(cell, year);
    auto it = m.find(crop);
    return it == m.end() ? 0.0 : it->second;
  }

  double total_coverage(CellId cell, int year) const {
    auto it = entries_.find({cell, year});
    if (it == entries_.end()) return 0.0;
    double s = 0.0;
    for (const auto& [crop, a] : it->second) s += a;
    return s;
  }

  std::set<CellId> cells() const {
    std::set<CellId> out;
    for (const auto& [k, v] : entries_) out.insert(k.cell);
    return out;
  }

  std::set<int> years() const {
    std::set<int> out;
    for (const auto& [k, v] : entries_) out.insert(k.year);
    return out;
  }

  const std::map<CellYear, CropMap>& entries() const { return entries_; }

 private:
  std::map<CellYear, CropMap> entries_;
};

// Per-crop covered fraction of each touched cell. Parcels are clipped in
// parallel; contributions are merged in parcel order so the result does not
// depend on scheduling. If overlapping parcels push a cell's total above 1,
// that cell's crops are scaled down proportionally.
inline AbundanceTable compute_abundance(std::span<const ParcelRecord> parcels,
                                        const GridSpec& grid, int threads = 1) {
  grid.validate();
  struct Contribution {
    CellId cell;
    double area;
  };
  std::vector<std::vector<Contribution>> per_parcel(parcels.size());
  parallel_for(parcels.size(), threads, [&](std::size_t p) {
    const ParcelRecord& parcel = parcels[p];
    const Rect& b = parcel.bounds();
    const double s = grid.cell_size;
    const int j0 = std::max(0, static_cast<int>(std::floor((b.min_x - grid.origin_x) / s)));
    const int j1 = std::min(grid.n_cols - 1,
                            static_cast<int>(std::ceil((b.max_x - grid.origin_x) / s)) - 1);
    const int i0 = std::max(0, static_cast<int>(std::floor((grid.origin_y - b.max_y) / s)));
    const int i1 = std::min(grid.n_rows - 1,
                            static_cast<int>(std::ceil((grid.origin_y - b.min_y) / s)) - 1);
    for (int i = i0; i <= i1; ++i) {
      for (int j = j0; j <= j1; ++j) {
        const CellId id = grid.cell_id(i, j);
        const double a = clip_polygon_to_cell(parcel, grid.cell_bounds(id));
        if (a > 0.0) per_parcel[p].push_back({id, a});
      }
    }
  });

  std::map<CellYear, std::map<std::string, double>> areas;
  for (std::size_t p = 0; p < parcels.size(); ++p) {
    for (const auto& c : per_parcel[p]) {
      areas[{c.cell, parcels[p].year()}][parcels[p].crop_code()] += c.area;
    }
  }
  AbundanceTable table;
  const double cell_area = grid.cell_area();
  for (auto& [key, crops] : areas) {
    double total = 0.0;
    for (auto& [crop, a] : crops) {
      a = std::clamp(a / cell_area, 0.0, 1.0);
      total += a;
    }
    if (total > 1.0) {
      for (auto& [crop, a] : crops) a /= total;
    }
    table.set(key, std::move(crops));
  }
  return table;
}

// Number of crops with abundance above kAbundanceEpsilon.
inline int diversification_count(const AbundanceTable& table, CellId cell, int year) {
  int count = 0;
  for (const auto& [crop, a] : table.crops(cell, year)) {
    if (a > kAbundanceEpsilon) ++count;
  }
  return count;
}

// Mean total coverage per touched cell over the study years; a year with no
// parcels in the cell contributes 0.
inline std::map<CellId, double> aggregate_coverage(const AbundanceTable& table,
                                                   std::span<const int> years) {
  require(!years.empty(), ErrorCode::kInvalidArgument, "year set is empty");
  std::map<CellId, double> out;
  for (CellId cell : table.cells()) {
    double s = 0.0;
    for (int y : years) s += table.total_coverage(cell, y);
    out[cell] = s / static_cast<double>(years.size());
  }
  return out;
}

// Cells covered at least `threshold` (inclusive, with 1e-9 slack for
// clipping round-off).
inline std::set<CellId> agricultural_mask(const std::map<CellId, double>& coverage,
                                          double threshold = 0.5) {
  require(threshold >= 0.0 && threshold <= 1.0, ErrorCode::kInvalidArgument,
          "agricultural threshold outside [0,1]");
  std::set<CellId> out;
  for (const auto& [cell, c] : coverage) {
    if (c >= threshold - 1e-9) out.insert(cell);
  }
  return out;
}

struct EnvRecord {
  CellId cell = 0;
  int year = 0;
  std::vector<double> values;  // covariate_names() order
};

struct OutcomeRecord {
  CellId cell = 0;
  int year = 0;
  double npp = 0.0;
};

struct JoinReport {
  std::size_t cells_considered = 0;
  std::size_t kept = 0;
  std::size_t dropped_missing_env = 0;
  std::size_t dropped_missing_outcome = 0;
  std::size_t dropped_missing_parcels = 0;
  std::size_t dropped_outside_grid = 0;
  std::size_t treated = 0;
  std::size_t control = 0;
  double median_threshold = 0.0;
  std::size_t median_ties = 0;
  std::vector<std::string> zero_variance_columns;
  std::vector<int> years;
};

struct AssembledDataset {
  LabeledDataset data;  // standardized X, row ids are cell ids
  FeatureMatrix raw_x;
  Scaler scaler;
  std::vector<CellId> cells;
  std::vector<Point> centers;
  std::vector<double> diversification;  // temporal mean of the crop count
  std::vector<double> coverage;         // temporal mean of total coverage
  JoinReport report;
};

struct AssembleOptions {
  std::vector<int> years;  // empty: union of env and outcome years
  double max_missing_year_fraction = 0.0;
};

// Temporal aggregation, inner join on cell id, median-binarized
// diversification as treatment and standardized covariates. Each dropped
// cell is attributed to the first failing source: env, outcome, parcels.
inline AssembledDataset assemble_dataset(const AbundanceTable& abundance,
                                         std::span<const EnvRecord> env,
                                         std::span<const OutcomeRecord> outcome,
                                         const GridSpec& grid,
                                         const AssembleOptions& options = {}) {
  grid.validate();
  std::vector<int> years = options.years;
  if (years.empty()) {
    std::set<int> ys;
    for (const auto& r : env) ys.insert(r.year);
    for (const auto& r : outcome) ys.insert(r.year);
    years.assign(ys.begin(), ys.end());
  }
  std::sort(years.begin(), years.end());
  years.erase(std::unique(years.begin(), years.end()), years.end());
  require(!years.empty(), ErrorCode::kSchema, "no study years found in env/outcome tables");

  const std::size_t p = covariate_names().size();
  std::vector<YearlyRecord<CellId>> env_rows;
  env_rows.reserve(env.size());
  for (const auto& r : env) {
    require(r.values.size() == p, ErrorCode::kSchema, "env record has wrong covariate count",
            {{"cell_id", std::to_string(r.cell)}, {"year", std::to_string(r.year)}});
    env_rows.push_back({r.cell, r.year, r.values});
  }
  std::vector<YearlyRecord<CellId>> out_rows;
  out_rows.reserve(outcome.size());
  for (const auto& r : outcome) out_rows.push_back({r.cell, r.year, {r.npp}});

  const auto env_agg = temporal_aggregate<CellId>(env_rows, years, options.max_missing_year_fraction);
  const auto out_agg = temporal_aggregate<CellId>(out_rows, years, options.max_missing_year_fraction);

  std::map<CellId, const std::vector<double>*> env_by_cell;
  for (const auto& c : env_agg.cells) env_by_cell[c.cell] = &c.values;
  std::map<CellId, double> npp_by_cell;
  for (const auto& c : out_agg.cells) npp_by_cell[c.cell] = c.values[0];
  const std::set<CellId> parcel_cells = abundance.cells();
  const auto coverage = aggregate_coverage(abundance, years);

  std::set<CellId> universe(parcel_cells);
  for (const auto& r : env) universe.insert(r.cell);
  for (const auto& r : outcome) universe.insert(r.cell);

  JoinReport report;
  report.years = years;
  report.cells_considered = universe.size();
  std::vector<CellId> kept;
  for (CellId cell : universe) {
    if (!grid.contains(cell)) {
      ++report.dropped_outside_grid;
    } else if (!env_by_cell.count(cell)) {
      ++report.dropped_missing_env;
    } else if (!npp_by_cell.count(cell)) {
      ++report.dropped_missing_outcome;
    } else if (!parcel_cells.count(cell)) {
      ++report.dropped_missing_parcels;
    } else {
      kept.push_back(cell);
    }
  }
  report.kept = kept.size();
  require(!kept.empty(), ErrorCode::kSchema, "join produced no cells");

  AssembledDataset out;
  std::vector<double> raw;
  raw.reserve(kept.size() * p);
  std::vector<std::string> ids;
  for (CellId cell : kept) {
    const auto& v = *env_by_cell.at(cell);
    raw.insert(raw.end(), v.begin(), v.end());
    ids.push_back(std::to_string(cell));
    out.cells.push_back(cell);
    out.centers.push_back(grid.cell_center(cell));
    double div = 0.0;
    for (int y : years) {
      if (abundance.contains(cell, y)) div += diversification_count(abundance, cell, y);
    }
    out.diversification.push_back(div / static_cast<double>(years.size()));
    out.coverage.push_back(coverage.at(cell));
    out.data.y.push_back(npp_by_cell.at(cell));
  }
  out.raw_x = FeatureMatrix(covariate_names(), kept.size(), std::move(raw), ids);
  auto bin = median_binarize(out.diversification);
  out.data.t = bin.labels;
  report.median_threshold = bin.threshold;
  report.median_ties = bin.ties;
  report.treated = static_cast<std::size_t>(std::count(bin.labels.begin(), bin.labels.end(), 1));
  report.control = kept.size() - report.treated;
  auto st = standardize(out.raw_x);
  out.data.x = std::move(st.scaled);
  out.scaler = std::move(st.scaler);
  report.zero_variance_columns = std::move(st.zero_variance_columns);
  out.report = std::move(report);
  out.data.validate();
  return out;
}

// ---------------------------------------------------------------------------
// CSV loaders for the ingest file schemas.

inline std::vector<ParcelRecord> load_parcels(const csv::Table& table) {
  const std::size_t c_id = table.column("parcel_id");
  const std::size_t c_year = table.column("year");
  const std::size_t c_crop = table.column("crop_code");
  const std::size_t c_wkt = table.column("wkt");
  std::vector<ParcelRecord> out;
  out.reserve(table.rows.size());
  for (const auto& row : table.rows) {
    // Unquoted WKT splits on its commas; glue the tail back together.
    std::string wkt = table.field(row, c_wkt);
    if (c_wkt + 1 == table.header.size()) {
      for (std::size_t k = c_wkt + 1; k < row.fields.size(); ++k) wkt += "," + row.fields[k];
    }
    try {
      out.emplace_back(table.field(row, c_id), static_cast<int>(table.integer(row, c_year)),
                       table.field(row, c_crop), parse_wkt_polygon(wkt));
    } catch (const Error& e) {
      auto details = e.details();
      details.push_back({"file", table.source});
      details.push_back({"line", std::to_string(row.line)});
      throw Error(e.code() == ErrorCode::kInvalidArgument ? ErrorCode::kSchema : e.code(),
                  e.message(), details);
    }
  }
  return out;
}

inline std::vector<EnvRecord> load_env(const csv::Table& table) {
  const std::size_t c_cell = table.column("cell_id");
  const std::size_t c_year = table.column("year");
  std::vector<std::size_t> cols;
  for (const auto& name : covariate_names()) cols.push_back(table.column(name));
  std::vector<EnvRecord> out;
  out.reserve(table.rows.size());
  for (const auto& row : table.rows) {
    EnvRecord r;
    r.cell = table.integer(row, c_cell);
    r.year = static_cast<int>(table.integer(row, c_year));
    for (std::size_t c : cols) {
      const double v = table.number(row, c);
      if (!std::isfinite(v)) {
        fail(ErrorCode::kSchema, "non-finite covariate",
             {{"file", table.source}, {"line", std::to_string(row.line)},
              {"column", table.header[c]}});
      }
      r.values.push_back(v);
    }
    out.push_back(std::move(r));
  }
  return out;
}

inline std::vector<OutcomeRecord> load_outcome(const csv::Table& table) {
  const std::size_t c_cell = table.column("cell_id");
  const std::size_t c_year = table.column("year");
  const std::size_t c_npp = table.column("npp");
  std::vector<OutcomeRecord> out;
  out.reserve(table.rows.size());
  for (const auto& row : table.rows) {
    OutcomeRecord r{table.integer(row, c_cell), static_cast<int>(table.integer(row, c_year)),
                    table.number(row, c_npp)};
    if (!std::isfinite(r.npp)) {
      fail(ErrorCode::kSchema, "non-finite outcome",
           {{"file", table.source}, {"line", std::to_string(row.line)}, {"column", "npp"}});
    }
    out.push_back(r);
  }
  return out;
}

}  // namespace cropdml
