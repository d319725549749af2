#include <cmath>
#include <functional>
#include <numbers>
#include <random>
#include <sstream>

#include "gtest/gtest.h"
#include "cropdml/geoingest.hpp"
#include "oracles.hpp"

namespace cropdml {
namespace {

std::vector<Point> box(double x0, double y0, double x1, double y1) {
  return {{x0, y0}, {x1, y0}, {x1, y1}, {x0, y1}};
}

ParcelRecord parcel(const std::string& id, std::vector<Point> ring, const std::string& crop = "wheat",
                    int year = 2020) {
  return ParcelRecord(id, year, crop, std::move(ring));
}

std::vector<Point> rotated_rect(double cx, double cy, double w, double h, double angle) {
  const double c = std::cos(angle);
  const double s = std::sin(angle);
  std::vector<Point> out;
  for (auto [dx, dy] : {std::pair{-w, -h}, {w, -h}, {w, h}, {-w, h}}) {
    out.push_back({cx + 0.5 * (dx * c - dy * s), cy + 0.5 * (dx * s + dy * c)});
  }
  return out;
}

const Rect kUnit{0, 0, 1, 1};

TEST(Clip, ContainedSquare) {
  EXPECT_DOUBLE_EQ(clip_polygon_to_cell(parcel("a", box(0.25, 0.25, 0.75, 0.75)), kUnit), 0.25);
}

TEST(Clip, DisjointSquare) {
  EXPECT_EQ(clip_polygon_to_cell(parcel("a", box(-1, -1, -0.5, -0.5)), kUnit), 0.0);
}

TEST(Clip, HalfOverlap) {
  EXPECT_DOUBLE_EQ(clip_polygon_to_cell(parcel("a", box(0.5, 0, 1.5, 1)), kUnit), 0.5);
}

TEST(Clip, ClockwiseRingIsReoriented) {
  auto ring = box(0.5, 0, 1.5, 1);
  std::reverse(ring.begin(), ring.end());
  const auto p = parcel("cw", ring);
  EXPECT_GT(signed_area(p.ring()), 0.0);
  EXPECT_DOUBLE_EQ(clip_polygon_to_cell(p, kUnit), 0.5);
}

TEST(Clip, ConcaveParcel) {
  // U shape spanning the cell; the notch (0.4..0.6 x 0.3..1.2) is open at the top.
  const std::vector<Point> u{{-0.2, -0.2}, {1.2, -0.2}, {1.2, 1.2}, {0.6, 1.2},
                             {0.6, 0.3},   {0.4, 0.3},  {0.4, 1.2}, {-0.2, 1.2}};
  EXPECT_NEAR(clip_polygon_to_cell(parcel("u", u), kUnit), 1.0 - 0.2 * 0.7, 1e-12);
}

TEST(Parcel, DegeneratePolygonsCarryParcelId) {
  const std::vector<std::vector<Point>> bad{
      {{0, 0}, {1, 1}, {2, 2}},              // collinear
      {{0, 0}, {1, 1}, {1, 0}, {0, 1}},      // bow tie
      {{0, 0}, {1, 0}},                      // too few vertices
  };
  for (const auto& ring : bad) {
    try {
      parcel("P-17", ring);
      FAIL();
    } catch (const Error& e) {
      EXPECT_EQ(e.detail("parcel_id"), "P-17");
    }
  }
}

TEST(Wkt, ParsesClosedRing) {
  const auto ring = parse_wkt_polygon("POLYGON((0 0, 2 0, 2 1, 0 1, 0 0))");
  ASSERT_EQ(ring.size(), 4u);
  EXPECT_EQ(ring[2].x, 2.0);
  EXPECT_EQ(ring[2].y, 1.0);
}

TEST(Wkt, RejectsMalformedInput) {
  for (const char* wkt : {"POLYGON((0 0, 1 0, 1 1, 0 0 ))x", "POINT(1 2)", "POLYGON((0 0, 1 0, 1 1, 0 1))",
                          "POLYGON((0 0, 1 0, 1 1, 0 0), (0.1 0.1, 0.2 0.1, 0.2 0.2, 0.1 0.1))",
                          "POLYGON((0 0, 1 a, 1 1, 0 0))"}) {
    EXPECT_THROW(parse_wkt_polygon(wkt), Error) << wkt;
  }
}

TEST(Grid, CellsAreRowMajorFromTheNorth) {
  const GridSpec g{100, 50, 10, 4, 3};
  EXPECT_EQ(g.cell_count(), 12);
  const Rect r = g.cell_bounds(g.cell_id(1, 2));
  EXPECT_EQ(r.min_x, 120);
  EXPECT_EQ(r.max_x, 130);
  EXPECT_EQ(r.min_y, 30);
  EXPECT_EQ(r.max_y, 40);
  for (CellId id = 0; id < g.cell_count(); ++id) EXPECT_EQ(g.cell_id(g.row_of(id), g.col_of(id)), id);
}

TEST(Abundance, FullCell) {
  const GridSpec g{0, 2, 1, 2, 2};
  const std::vector<ParcelRecord> ps{parcel("a", box(1, 0, 2, 1))};
  const auto t = compute_abundance(ps, g);
  EXPECT_DOUBLE_EQ(t.abundance(g.cell_id(1, 1), 2020, "wheat"), 1.0);
  EXPECT_EQ(t.cells(), std::set<CellId>{g.cell_id(1, 1)});
}

TEST(Abundance, DisjointParcelsAdd) {
  const GridSpec g{0, 1, 1, 1, 1};
  const std::vector<ParcelRecord> ps{parcel("a", box(0, 0, 0.3, 1), "wheat"),
                                     parcel("b", box(0.5, 0, 0.8, 1), "barley")};
  const auto t = compute_abundance(ps, g);
  EXPECT_NEAR(t.abundance(0, 2020, "wheat"), 0.3, 1e-12);
  EXPECT_NEAR(t.abundance(0, 2020, "barley"), 0.3, 1e-12);
  EXPECT_EQ(diversification_count(t, 0, 2020), 2);
}

TEST(Abundance, OverlapIsCappedAtFullCoverage) {
  const GridSpec g{0, 1, 1, 1, 1};
  const std::vector<ParcelRecord> ps{parcel("a", box(0, 0, 0.8, 1), "wheat"),
                                     parcel("b", box(0.2, 0, 1, 1), "barley")};
  const auto t = compute_abundance(ps, g);
  EXPECT_LE(t.total_coverage(0, 2020), 1.0 + 1e-12);
  EXPECT_NEAR(t.abundance(0, 2020, "wheat"), 0.5, 1e-12);
}

TEST(Abundance, SplitsAcrossCellsAndYears) {
  const GridSpec g{0, 1, 1, 2, 1};
  const std::vector<ParcelRecord> ps{parcel("a", box(0.5, 0, 1.5, 0.5), "wheat", 2019),
                                     parcel("b", box(0.5, 0, 1.5, 0.5), "wheat", 2020)};
  const auto t = compute_abundance(ps, g);
  for (int y : {2019, 2020}) {
    EXPECT_NEAR(t.abundance(0, y, "wheat"), 0.25, 1e-12);
    EXPECT_NEAR(t.abundance(1, y, "wheat"), 0.25, 1e-12);
  }
}

TEST(Abundance, MatchesSamplingOracleOnThreeByThreeGrid) {
  const GridSpec g{0, 3, 1, 3, 3};
  std::mt19937_64 rng(21);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<std::vector<Point>> rings;
  std::vector<ParcelRecord> ps;
  for (int k = 0; k < 6; ++k) {
    auto ring = rotated_rect(0.3 + 2.4 * u(rng), 0.3 + 2.4 * u(rng), 0.3 + 1.2 * u(rng),
                             0.3 + 1.2 * u(rng), std::numbers::pi * u(rng));
    rings.push_back(ring);
    // One year per parcel keeps overlaps from triggering the coverage cap.
    ps.push_back(parcel("p" + std::to_string(k), ring, "c" + std::to_string(k), 2000 + k));
  }
  const auto t = compute_abundance(ps, g);
  for (CellId id = 0; id < g.cell_count(); ++id) {
    const auto oracle = testing::sampled_fractions(rings, g.cell_bounds(id), 1000, 100 + id);
    for (std::size_t k = 0; k < rings.size(); ++k) {
      const int year = ps[k].year();
      const double got = t.contains(id, year) ? t.abundance(id, year, ps[k].crop_code()) : 0.0;
      EXPECT_NEAR(got, oracle[k], 1e-3) << "cell " << id << " parcel " << k;
    }
  }
}

TEST(Abundance, PropertySumBoundedAndCountBounded) {
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const GridSpec g{0, 4, 1, 4, 4};
  std::vector<ParcelRecord> ps;
  for (int k = 0; k < 40; ++k) {
    ps.push_back(parcel("p" + std::to_string(k),
                        rotated_rect(4 * u(rng), 4 * u(rng), 0.2 + u(rng), 0.2 + u(rng), 3 * u(rng)),
                        "c" + std::to_string(k % 5), 2019 + k % 2));
  }
  const auto t = compute_abundance(ps, g);
  for (const auto& [key, crops] : t.entries()) {
    double s = 0.0;
    for (const auto& [crop, a] : crops) {
      EXPECT_GE(a, 0.0);
      EXPECT_LE(a, 1.0);
      s += a;
    }
    EXPECT_LE(s, 1.0 + 1e-6);
    EXPECT_LE(diversification_count(t, key.cell, key.year), 5);
  }
}

TEST(Abundance, PropertyMonotoneInCellSize) {
  std::mt19937_64 rng(8);
  std::uniform_real_distribution<double> u(-2.0, 2.0);
  for (int trial = 0; trial < 200; ++trial) {
    const auto p = parcel("p", rotated_rect(u(rng), u(rng), 0.5 + std::abs(u(rng)), 0.5 + std::abs(u(rng)), u(rng)));
    Rect cell{u(rng) - 0.5, u(rng) - 0.5, 0, 0};
    cell.max_x = cell.min_x + 0.2 + std::abs(u(rng));
    cell.max_y = cell.min_y + 0.2 + std::abs(u(rng));
    double prev = clip_polygon_to_cell(p, cell);
    for (int step = 0; step < 5; ++step) {
      cell.min_x -= 0.1 * std::abs(u(rng));
      cell.max_y += 0.1 * std::abs(u(rng));
      const double next = clip_polygon_to_cell(p, cell);
      EXPECT_GE(next, prev - 1e-12);
      prev = next;
    }
  }
}

TEST(Abundance, PropertyTranslationInvariant) {
  std::mt19937_64 rng(9);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const GridSpec g{0, 3, 1, 3, 3};
  std::vector<std::vector<Point>> rings;
  for (int k = 0; k < 12; ++k) {
    rings.push_back(rotated_rect(3 * u(rng), 3 * u(rng), 0.2 + u(rng), 0.2 + u(rng), 3 * u(rng)));
  }
  auto table_at = [&](double dx, double dy) {
    std::vector<ParcelRecord> ps;
    for (std::size_t k = 0; k < rings.size(); ++k) {
      auto r = rings[k];
      for (auto& p : r) {
        p.x += dx;
        p.y += dy;
      }
      ps.push_back(parcel("p" + std::to_string(k), r, "c" + std::to_string(k % 3)));
    }
    GridSpec shifted = g;
    shifted.origin_x += dx;
    shifted.origin_y += dy;
    return compute_abundance(ps, shifted);
  };
  const auto base = table_at(0, 0);
  for (auto [dx, dy] : {std::pair{1000.0, -250.5}, {-3.25, 7.0}, {123456.0, 654321.0}}) {
    const auto moved = table_at(dx, dy);
    ASSERT_EQ(moved.entries().size(), base.entries().size());
    for (const auto& [key, crops] : base.entries()) {
      for (const auto& [crop, a] : crops) {
        EXPECT_NEAR(moved.abundance(key.cell, key.year, crop), a, 1e-9);
      }
    }
  }
}

TEST(Abundance, SameResultAtAnyThreadCount) {
  std::mt19937_64 rng(10);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const GridSpec g{0, 5, 1, 5, 5};
  std::vector<ParcelRecord> ps;
  for (int k = 0; k < 60; ++k) {
    ps.push_back(parcel("p" + std::to_string(k),
                        rotated_rect(5 * u(rng), 5 * u(rng), 0.2 + u(rng), 0.2 + u(rng), 3 * u(rng)),
                        "c" + std::to_string(k % 4)));
  }
  EXPECT_EQ(compute_abundance(ps, g, 1).entries(), compute_abundance(ps, g, 8).entries());
}

TEST(Diversification, CountsNonZeroCrops) {
  AbundanceTable t;
  t.set({1, 2020}, {{"wheat", 0.6}, {"barley", 0.4}});
  t.set({2, 2020}, {{"wheat", 1.0}});
  t.set({3, 2020}, {{"wheat", 0.6}, {"barley", 0.0}});
  EXPECT_EQ(diversification_count(t, 1, 2020), 2);
  EXPECT_EQ(diversification_count(t, 2, 2020), 1);
  EXPECT_EQ(diversification_count(t, 3, 2020), 1);
  EXPECT_THROW(diversification_count(t, 4, 2020), Error);
}

TEST(Mask, BoundaryIsInclusive) {
  const std::map<CellId, double> cov{{1, 0.50}, {2, 0.49}, {3, 0.9}};
  EXPECT_EQ(agricultural_mask(cov, 0.5), (std::set<CellId>{1, 3}));
  EXPECT_TRUE(agricultural_mask({{1, 0.0}, {2, 0.0}}, 0.5).empty());
  EXPECT_THROW(agricultural_mask(cov, 1.5), Error);
  EXPECT_THROW(agricultural_mask(cov, -0.1), Error);
}

TEST(Mask, CoverageAveragesOverYears) {
  AbundanceTable t;
  t.set({1, 2019}, {{"wheat", 0.6}});
  t.set({1, 2020}, {{"wheat", 0.2}, {"oat", 0.2}});
  t.set({2, 2019}, {{"wheat", 0.8}});
  const std::vector<int> years{2019, 2020};
  const auto cov = aggregate_coverage(t, years);
  EXPECT_NEAR(cov.at(1), 0.5, 1e-12);
  EXPECT_NEAR(cov.at(2), 0.4, 1e-12);
}

std::vector<double> env_values(double base) {
  std::vector<double> v;
  for (std::size_t k = 0; k < covariate_names().size(); ++k) v.push_back(base + 10.0 * k);
  return v;
}

TEST(Assemble, FullyCoveredCells) {
  const GridSpec g{0, 1, 1, 3, 1};
  AbundanceTable t;
  std::vector<EnvRecord> env;
  std::vector<OutcomeRecord> out;
  for (CellId c = 0; c < 3; ++c) {
    t.set({c, 2020}, c == 0 ? AbundanceTable::CropMap{{"wheat", 1.0}}
                            : AbundanceTable::CropMap{{"wheat", 0.5}, {"oat", 0.5}});
    env.push_back({c, 2020, env_values(c)});
    out.push_back({c, 2020, 0.5 + c});
  }
  const auto d = assemble_dataset(t, env, out, g);
  EXPECT_EQ(d.data.size(), 3u);
  EXPECT_EQ(d.data.x.row_ids(), (std::vector<std::string>{"0", "1", "2"}));
  EXPECT_EQ(d.diversification, (std::vector<double>{1, 2, 2}));
  EXPECT_EQ(d.data.t, (std::vector<int>{0, 0, 0}));
  EXPECT_EQ(d.data.y, (std::vector<double>{0.5, 1.5, 2.5}));
  EXPECT_EQ(d.report.kept, 3u);
  EXPECT_NEAR(d.centers[2].x, 2.5, 1e-12);
  EXPECT_NEAR(d.centers[2].y, 0.5, 1e-12);
}

TEST(Assemble, DropReasonsAreCounted) {
  const GridSpec g{0, 1, 1, 5, 1};
  AbundanceTable t;
  for (CellId c : {0, 1, 2}) t.set({c, 2020}, {{"wheat", 0.7}});
  std::vector<EnvRecord> env{{0, 2020, env_values(0)}, {1, 2020, env_values(1)},
                             {3, 2020, env_values(3)}, {4, 2020, env_values(4)}};
  std::vector<OutcomeRecord> out{{0, 2020, 1.0}, {2, 2020, 2.0}, {3, 2020, 3.0}, {4, 2020, 4.0}};
  const auto d = assemble_dataset(t, env, out, g);
  EXPECT_EQ(d.cells, std::vector<CellId>{0});
  EXPECT_EQ(d.report.dropped_missing_outcome, 1u);  // cell 1
  EXPECT_EQ(d.report.dropped_missing_env, 1u);      // cell 2
  EXPECT_EQ(d.report.dropped_missing_parcels, 2u);  // cells 3 and 4
}

TEST(Assemble, HundredCellMedianTies) {
  const GridSpec g{0, 10, 1, 10, 10};
  AbundanceTable t;
  std::vector<EnvRecord> env;
  std::vector<OutcomeRecord> out;
  std::mt19937_64 rng(100);
  std::vector<double> expected_div;
  for (CellId c = 0; c < 100; ++c) {
    AbundanceTable::CropMap crops;
    const int k = 1 + static_cast<int>(rng() % 4);
    for (int j = 0; j < k; ++j) crops["crop" + std::to_string(j)] = 0.2;
    t.set({c, 2020}, crops);
    expected_div.push_back(k);
    std::vector<double> v = env_values(0);
    for (auto& x : v) x += std::normal_distribution<double>()(rng);
    env.push_back({c, 2020, v});
    out.push_back({c, 2020, 0.01 * c});
  }
  const auto d = assemble_dataset(t, env, out, g);
  ASSERT_EQ(d.diversification, expected_div);

  std::vector<double> sorted = expected_div;
  std::sort(sorted.begin(), sorted.end());
  const double med = 0.5 * (sorted[49] + sorted[50]);
  long ties = 0;
  long treated = 0;
  for (std::size_t i = 0; i < 100; ++i) {
    EXPECT_EQ(d.data.t[i], expected_div[i] > med ? 1 : 0);
    ties += expected_div[i] == med;
    treated += expected_div[i] > med;
  }
  EXPECT_EQ(d.report.median_threshold, med);
  EXPECT_EQ(static_cast<long>(d.report.median_ties), ties);
  EXPECT_EQ(static_cast<long>(d.report.treated), treated);
  EXPECT_LE(std::abs(treated - (100 - treated)), std::max(1L, 2 * ties));
}

TEST(Assemble, StandardizedCovariatesInvertToRaw) {
  const GridSpec g{0, 1, 1, 4, 1};
  AbundanceTable t;
  std::vector<EnvRecord> env;
  std::vector<OutcomeRecord> out;
  for (CellId c = 0; c < 4; ++c) {
    t.set({c, 2019}, {{"wheat", 0.5}});
    env.push_back({c, 2019, env_values(c * c)});
    env.push_back({c, 2020, env_values(c * c + 2)});
    out.push_back({c, 2019, 1.0});
    out.push_back({c, 2020, 3.0});
  }
  const auto d = assemble_dataset(t, env, out, g);
  const auto back = d.scaler.inverse(d.data.x);
  for (std::size_t i = 0; i < 4; ++i) {
    EXPECT_DOUBLE_EQ(d.data.y[i], 2.0);
    EXPECT_NEAR(back(i, 0), static_cast<double>(i * i) + 1.0, 1e-9);
    EXPECT_NEAR(d.diversification[i], 0.5, 1e-12);  // parcels only in 2019
  }
}

TEST(Loaders, MissingColumnIsNamed) {
  std::istringstream in("cell_id,year,ws,ppt,q,def,srad,tmin,tmax,soilm\n1,2020,1,2,3,4,5,6,7,8\n");
  try {
    load_env(csv::parse(in, "env.csv"));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kSchema);
    EXPECT_EQ(e.detail("column"), "soile");
  }
}

TEST(Loaders, ParcelsWithUnquotedWkt) {
  std::istringstream in(
      "parcel_id,year,crop_code,wkt\n"
      "A1,2020,wheat,POLYGON((0 0, 1 0, 1 1, 0 1, 0 0))\n"
      "A2,2020,oat,\"POLYGON((1 1, 2 1, 2 2, 1 1))\"\n");
  const auto ps = load_parcels(csv::parse(in, "parcels.csv"));
  ASSERT_EQ(ps.size(), 2u);
  EXPECT_DOUBLE_EQ(ps[0].area(), 1.0);
  EXPECT_DOUBLE_EQ(ps[1].area(), 0.5);
}

TEST(Loaders, BadParcelReportsLine) {
  std::istringstream in(
      "parcel_id,year,crop_code,wkt\n"
      "A1,2020,wheat,POLYGON((0 0, 1 0, 1 1, 0 1, 0 0))\n"
      "B2,2020,wheat,POLYGON((0 0, 1 1, 1 0, 0 1, 0 0))\n");
  try {
    load_parcels(csv::parse(in, "parcels.csv"));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kSchema);
    EXPECT_EQ(e.detail("parcel_id"), "B2");
    EXPECT_EQ(e.detail("line"), "3");
  }
}

}  // namespace
}  // namespace cropdml
