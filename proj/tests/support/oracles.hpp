#pragma once

// Straightforward reference implementations used as test oracles.

#include <cmath>
#include <random>
#include <vector>

#include "chipqa/chips.hpp"

namespace oracles {

using chipqa::Field;
using chipqa::Image;

// Per-pixel gather: for output pixel (row, col) find its patch, rebuild the line point
// from scratch and read the volume at time col % T.
inline Image naive_chip_frame(const std::vector<Field>& volume, const Image& med_u, const Image& med_v, int R) {
  const int T = static_cast<int>(volume.size());
  const int w = volume[0].width(), h = volume[0].height();
  const int rows = h / R, cols = w / R;
  Image out(T * cols, R * rows);
  for (int row = 0; row < out.height(); ++row)
    for (int col = 0; col < out.width(); ++col) {
      const int pr = row / R, k = row % R, pc = col / T, t = col % T;
      const double u = med_u(pr, pc), v = med_v(pr, pc);
      double dx = 1.0, dy = 0.0;
      const double n = std::sqrt(u * u + v * v);
      if (n >= 1e-6) {
        dx = -v / n;
        dy = u / n;
        // Angle in [0, pi): dy > 0, or dy == 0 with dx > 0.
        if (dy < 0.0 || (dy == 0.0 && dx < 0.0)) dx = -dx, dy = -dy;
      }
      const double cx = pc * R + (R - 1) / 2, cy = pr * R + (R - 1) / 2;
      const double s = k - (R - 1) / 2.0;
      const double px = cx + s * dx, py = cy + s * dy;
      auto round_away = [](double z) { return z < 0 ? -std::floor(-z + 0.5) : std::floor(z + 0.5); };
      int x = static_cast<int>(round_away(px)), y = static_cast<int>(round_away(py));
      x = x < 0 ? 0 : (x >= w ? w - 1 : x);
      y = y < 0 ? 0 : (y >= h ? h - 1 : y);
      out(row, col) = volume[t].values(y, x);
    }
  return out;
}

inline std::vector<Field> random_volume(int w, int h, int T, std::mt19937_64& rng) {
  std::normal_distribution<double> g(0.0, 1.0);
  std::vector<Field> vol;
  for (int t = 0; t < T; ++t) {
    Field f{Image(w, h), chipqa::FieldKind::mscn};
    for (double& v : f.values.storage()) v = g(rng);
    vol.push_back(std::move(f));
  }
  return vol;
}

// Random median flows; a fraction are exactly zero, axis-aligned or diagonal to hit edge cases.
inline chipqa::PatchFlowGrid random_grid(int rows, int cols, int R, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(-4.0, 4.0);
  std::uniform_int_distribution<int> kind(0, 5);
  chipqa::PatchFlowGrid g{Image(cols, rows), Image(cols, rows), R};
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c) {
      double a = u(rng), b = u(rng);
      switch (kind(rng)) {
        case 0: a = b = 0.0; break;
        case 1: b = 0.0; break;
        case 2: a = 0.0; break;
        case 3: b = a; break;
        case 4: b = -a; break;
        default: break;
      }
      g.med_u(r, c) = a;
      g.med_v(r, c) = b;
    }
  return g;
}

inline std::vector<const Field*> view_of(const std::vector<Field>& v) {
  std::vector<const Field*> out;
  for (const auto& f : v) out.push_back(&f);
  return out;
}

}  // namespace oracles
