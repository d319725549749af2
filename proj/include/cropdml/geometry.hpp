#pragma once

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstddef>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "cropdml/csv.hpp"
#include "cropdml/error.hpp"

namespace cropdml {

struct Point {
  double x = 0.0;
  double y = 0.0;
};

// Axis-aligned rectangle [min_x, max_x] x [min_y, max_y].
struct Rect {
  double min_x = 0.0;
  double min_y = 0.0;
  double max_x = 0.0;
  double max_y = 0.0;

  double area() const { return (max_x - min_x) * (max_y - min_y); }
  bool contains(const Rect& other) const {
    return min_x <= other.min_x && min_y <= other.min_y && max_x >= other.max_x &&
           max_y >= other.max_y;
  }
};

// Shoelace formula over an open ring; positive when counterclockwise.
// Coordinates are taken relative to the first vertex so that projected
// coordinates far from the origin do not cancel catastrophically.
inline double signed_area(std::span<const Point> ring) {
  const std::size_t n = ring.size();
  if (n < 3) return 0.0;
  const Point o = ring[0];
  double twice = 0.0;
  for (std::size_t i = 1; i + 1 < n; ++i) {
    const double ax = ring[i].x - o.x;
    const double ay = ring[i].y - o.y;
    const double bx = ring[i + 1].x - o.x;
    const double by = ring[i + 1].y - o.y;
    twice += ax * by - bx * ay;
  }
  return 0.5 * twice;
}

inline Rect bounding_box(std::span<const Point> ring) {
  Rect box{ring[0].x, ring[0].y, ring[0].x, ring[0].y};
  for (const auto& p : ring) {
    box.min_x = std::min(box.min_x, p.x);
    box.min_y = std::min(box.min_y, p.y);
    box.max_x = std::max(box.max_x, p.x);
    box.max_y = std::max(box.max_y, p.y);
  }
  return box;
}

namespace detail {

inline double cross(const Point& o, const Point& a, const Point& b) {
  return (a.x - o.x) * (b.y - o.y) - (a.y - o.y) * (b.x - o.x);
}

inline bool on_segment(const Point& p, const Point& a, const Point& b) {
  return std::min(a.x, b.x) <= p.x && p.x <= std::max(a.x, b.x) &&
         std::min(a.y, b.y) <= p.y && p.y <= std::max(a.y, b.y);
}

inline bool segments_intersect(const Point& p1, const Point& p2, const Point& q1,
                               const Point& q2) {
  const double d1 = cross(q1, q2, p1);
  const double d2 = cross(q1, q2, p2);
  const double d3 = cross(p1, p2, q1);
  const double d4 = cross(p1, p2, q2);
  if (((d1 > 0 && d2 < 0) || (d1 < 0 && d2 > 0)) &&
      ((d3 > 0 && d4 < 0) || (d3 < 0 && d4 > 0))) {
    return true;
  }
  if (d1 == 0 && on_segment(p1, q1, q2)) return true;
  if (d2 == 0 && on_segment(p2, q1, q2)) return true;
  if (d3 == 0 && on_segment(q1, p1, p2)) return true;
  if (d4 == 0 && on_segment(q2, p1, p2)) return true;
  return false;
}

}  // namespace detail

// True when no two non-adjacent edges touch and adjacent edges meet only at
// their shared vertex.
inline bool is_simple(std::span<const Point> ring) {
  const std::size_t n = ring.size();
  if (n < 3) return false;
  for (std::size_t i = 0; i < n; ++i) {
    const Point& a1 = ring[i];
    const Point& a2 = ring[(i + 1) % n];
    for (std::size_t j = i + 1; j < n; ++j) {
      const bool adjacent = j == i + 1 || (i == 0 && j == n - 1);
      const Point& b1 = ring[j];
      const Point& b2 = ring[(j + 1) % n];
      if (adjacent) {
        // Collinear overlap of consecutive edges folds the ring back on itself.
        const Point& shared = j == i + 1 ? a2 : a1;
        const Point& other_a = j == i + 1 ? a1 : a2;
        const Point& other_b = j == i + 1 ? b2 : b1;
        if (detail::cross(shared, other_a, other_b) == 0.0) {
          const double dot = (other_a.x - shared.x) * (other_b.x - shared.x) +
                             (other_a.y - shared.y) * (other_b.y - shared.y);
          if (dot > 0.0) return false;
        }
        continue;
      }
      if (detail::segments_intersect(a1, a2, b1, b2)) return false;
    }
  }
  return true;
}

// Sutherland-Hodgman clipping of a ring against an axis-aligned rectangle.
// The clip region is convex, so the result's area equals the intersection
// area even for concave subjects.
inline std::vector<Point> clip_to_rect(std::span<const Point> ring, const Rect& rect) {
  std::vector<Point> output(ring.begin(), ring.end());
  // edge: 0 left (x >= min_x), 1 right (x <= max_x), 2 bottom, 3 top
  for (int edge = 0; edge < 4 && !output.empty(); ++edge) {
    auto inside = [&](const Point& p) {
      switch (edge) {
        case 0: return p.x >= rect.min_x;
        case 1: return p.x <= rect.max_x;
        case 2: return p.y >= rect.min_y;
        default: return p.y <= rect.max_y;
      }
    };
    auto intersect = [&](const Point& a, const Point& b) {
      Point r;
      if (edge < 2) {
        const double x = edge == 0 ? rect.min_x : rect.max_x;
        const double s = (x - a.x) / (b.x - a.x);
        r = {x, a.y + s * (b.y - a.y)};
      } else {
        const double y = edge == 2 ? rect.min_y : rect.max_y;
        const double s = (y - a.y) / (b.y - a.y);
        r = {a.x + s * (b.x - a.x), y};
      }
      return r;
    };
    std::vector<Point> input = std::move(output);
    output.clear();
    for (std::size_t i = 0; i < input.size(); ++i) {
      const Point& current = input[i];
      const Point& prev = input[(i + input.size() - 1) % input.size()];
      const bool in_cur = inside(current);
      const bool in_prev = inside(prev);
      if (in_cur) {
        if (!in_prev) output.push_back(intersect(prev, current));
        output.push_back(current);
      } else if (in_prev) {
        output.push_back(intersect(prev, current));
      }
    }
  }
  return output;
}

// Parses `POLYGON((x y, x y, ...))` into an open ring (closing vertex removed).
inline std::vector<Point> parse_wkt_polygon(std::string_view wkt) {
  auto bad = [&](const char* why) -> void {
    fail(ErrorCode::kSchema, std::string("malformed WKT polygon: ") + why,
         {{"wkt", std::string(wkt.substr(0, 80))}});
  };
  std::size_t pos = wkt.find_first_not_of(" \t");
  if (pos == std::string_view::npos) bad("empty");
  std::string keyword;
  while (pos < wkt.size() && std::isalpha(static_cast<unsigned char>(wkt[pos]))) {
    keyword += static_cast<char>(std::toupper(static_cast<unsigned char>(wkt[pos])));
    ++pos;
  }
  if (keyword != "POLYGON") bad("expected POLYGON");
  const std::size_t open = wkt.find("((", pos);
  const std::size_t close = wkt.find(')', open == std::string_view::npos ? pos : open);
  if (open == std::string_view::npos || close == std::string_view::npos) bad("missing ring");
  if (wkt.find('(', open + 2) < close) bad("holes and multipolygons are not supported");
  const std::size_t after = wkt.find_first_not_of(" \t", close + 1);
  if (after == std::string_view::npos || wkt[after] != ')') bad("holes and multipolygons are not supported");
  if (wkt.find_first_not_of(" \t\r", after + 1) != std::string_view::npos) bad("trailing characters");
  std::string_view body = wkt.substr(open + 2, close - open - 2);
  std::vector<Point> ring;
  std::size_t start = 0;
  while (start <= body.size()) {
    std::size_t comma = body.find(',', start);
    if (comma == std::string_view::npos) comma = body.size();
    std::string coords(body.substr(start, comma - start));
    std::istringstream ss(coords);
    Point p;
    if (!(ss >> p.x >> p.y)) bad("bad coordinate pair");
    std::string rest;
    if (ss >> rest) bad("expected two coordinates per vertex");
    ring.push_back(p);
    start = comma + 1;
  }
  if (ring.size() < 4) bad("ring needs at least four positions including closure");
  const Point& first = ring.front();
  const Point& last = ring.back();
  if (first.x != last.x || first.y != last.y) bad("ring is not closed");
  ring.pop_back();
  return ring;
}

}  // namespace cropdml
