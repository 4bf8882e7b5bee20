#pragma once

#include <cmath>
#include <deque>
#include <numbers>
#include <span>
#include <utility>
#include <vector>

#include "chipqa/core.hpp"
#include "chipqa/flow.hpp"
#include "chipqa/spatialops.hpp"

namespace chipqa {

struct ChipGeometry {
  int t_prime = 5;
  int patch = 5;  // R

  static ChipGeometry make(int t_prime, int patch, bool allow_unequal = false) {
    if (t_prime < 2) throw Error(ErrorCode::InvalidArgument, "T' must be at least 2");
    if (patch < 1 || patch % 2 == 0) throw Error(ErrorCode::InvalidArgument, "patch size R must be odd");
    if (!allow_unequal && patch != t_prime)
      throw Error(ErrorCode::InvalidArgument, "R must equal T' (pass allow_unequal for experiments)");
    return {t_prime, patch};
  }
};

struct Point {
  int x = 0;
  int y = 0;
  friend bool operator==(const Point&, const Point&) = default;
};

struct Direction {
  double dx = 1.0;
  double dy = 0.0;
};

// Unit vector perpendicular to (u, v), sign-normalised to an angle in [0, pi).
// Near-zero motion falls back to (1, 0).
inline Direction chip_direction(double u, double v) {
  const double norm = std::hypot(u, v);
  if (norm < 1e-6) return {1.0, 0.0};
  Direction d{-v / norm, u / norm};
  if (d.dy < 0.0 || (d.dy == 0.0 && d.dx < 0.0)) d = {-d.dx, -d.dy};
  return d;
}

inline int round_half_away(double x) { return static_cast<int>(std::lround(x)); }

inline std::vector<Point> perpendicular_line(double u, double v, Point center, int R, int width, int height) {
  if (R < 1 || R % 2 == 0) throw Error(ErrorCode::InvalidArgument, "line length R must be odd");
  if (center.x < 0 || center.y < 0 || center.x >= width || center.y >= height)
    throw Error(ErrorCode::InvalidArgument, "line centre outside the frame");
  const Direction d = chip_direction(u, v);
  std::vector<Point> pts(static_cast<std::size_t>(R));
  const int half = (R - 1) / 2;
  for (int k = 0; k < R; ++k) {
    const double s = k - half;
    pts[k] = {std::clamp(round_half_away(center.x + s * d.dx), 0, width - 1),
              std::clamp(round_half_away(center.y + s * d.dy), 0, height - 1)};
  }
  return pts;
}

// samples(k, t): spatial index k along rows, time t along columns.
struct Chip {
  Image samples;
  int patch_row = 0;
  int patch_col = 0;
  Direction direction;
};

// T' fields ordered oldest (T - T' + 1) to newest (T).
using MscnVolume = std::span<const Field* const>;

inline Chip extract_chip(MscnVolume volume, int t_prime, int patch_row, int patch_col,
                         std::span<const Point> line, Direction dir = {}) {
  if (static_cast<int>(volume.size()) < t_prime)
    throw Error(ErrorCode::InsufficientHistory, "chip needs " + std::to_string(t_prime) + " frames, have " +
                                                    std::to_string(volume.size()));
  const int w = volume[0]->width(), h = volume[0]->height();
  for (const Field* f : volume)
    if (f->width() != w || f->height() != h) throw Error(ErrorCode::DimensionMismatch, "volume fields differ in size");
  const int R = static_cast<int>(line.size());
  Chip c{Image(t_prime, R), patch_row, patch_col, dir};
  for (int k = 0; k < R; ++k) {
    const Point p = line[k];
    if (p.x < 0 || p.y < 0 || p.x >= w || p.y >= h) throw Error(ErrorCode::InvalidArgument, "line point out of bounds");
    for (int t = 0; t < t_prime; ++t) c.samples(k, t) = volume[t]->values(p.y, p.x);
  }
  return c;
}

// S_T: one R x T' tile per complete patch.
struct ChipFrame {
  Image values;
  int time_index = 0;

  int width() const { return values.width(); }
  int height() const { return values.height(); }
};

inline Point patch_center(int patch_row, int patch_col, int R) {
  const int half = (R - 1) / 2;
  return {patch_col * R + half, patch_row * R + half};
}

inline ChipFrame aggregate_chips(MscnVolume volume, const PatchFlowGrid& grid, const ChipGeometry& geo,
                                 int time_index = 0) {
  if (static_cast<int>(volume.size()) != geo.t_prime)
    throw Error(ErrorCode::InsufficientHistory, "aggregate_chips needs exactly T' fields");
  const int w = volume[0]->width(), h = volume[0]->height();
  const int R = geo.patch, T = geo.t_prime;
  if (grid.patch_size != R || grid.rows() != h / R || grid.cols() != w / R)
    throw Error(ErrorCode::DimensionMismatch, "flow grid does not match the volume and patch size");
  for (const Field* f : volume)
    if (f->width() != w || f->height() != h) throw Error(ErrorCode::DimensionMismatch, "volume fields differ in size");

  ChipFrame s{Image(T * grid.cols(), R * grid.rows()), time_index};
  for (int pr = 0; pr < grid.rows(); ++pr)
    for (int pc = 0; pc < grid.cols(); ++pc) {
      const auto line = perpendicular_line(grid.med_u(pr, pc), grid.med_v(pr, pc), patch_center(pr, pc, R), R, w, h);
      for (int k = 0; k < R; ++k) {
        const Point p = line[k];
        double* dst = s.values.row(pr * R + k) + pc * T;
        for (int t = 0; t < T; ++t) dst[t] = volume[t]->values(p.y, p.x);
      }
    }
  return s;
}

// Sliding window of the last T' fields. One writer pushes; readers take a view of the window.
class FieldRing {
 public:
  explicit FieldRing(int capacity) : capacity_(capacity) {}

  void push(Field f) {
    if (static_cast<int>(fields_.size()) == capacity_) fields_.pop_front();
    fields_.push_back(std::move(f));
    peak_ = std::max(peak_, static_cast<int>(fields_.size()));
  }

  bool full() const { return static_cast<int>(fields_.size()) == capacity_; }
  int size() const { return static_cast<int>(fields_.size()); }
  int peak_retained() const { return peak_; }
  const Field& newest() const { return fields_.back(); }

  std::vector<const Field*> view() const {
    std::vector<const Field*> v;
    v.reserve(fields_.size());
    for (const auto& f : fields_) v.push_back(&f);
    return v;
  }

 private:
  int capacity_;
  int peak_ = 0;
  std::deque<Field> fields_;
};

}  // namespace chipqa
