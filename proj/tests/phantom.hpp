#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <numbers>

#include "cmos/preprocess.hpp"

namespace cmos::testing {

inline double sigmoid(double v) { return 1.0 / (1.0 + std::exp(-v)); }

/// Ring of intensity `bright` between radii r_in and r_out with soft edges of width `edge`.
inline double annulus(double radius, double r_in, double r_out, double edge = 1.5, double bright = 0.8,
                      double dark = 0.1) {
  return dark + (bright - dark) * sigmoid((radius - r_in) / edge) * sigmoid((r_out - radius) / edge);
}

inline Tensor<float> render(std::size_t h, std::size_t w, const std::function<double(double, double)>& f) {
  Tensor<float> img({h, w});
  for (std::size_t i = 0; i < h; ++i) {
    for (std::size_t j = 0; j < w; ++j) img[i * w + j] = static_cast<float>(f(static_cast<double>(j), static_cast<double>(i)));
  }
  return img;
}

/// Point at `radius` along math angle `deg` (counter-clockwise, y up) from `c`.
inline Point polar_point(Point c, double radius, double deg) {
  const double a = deg * std::numbers::pi / 180.0;
  return {c.x + radius * std::cos(a), c.y - radius * std::sin(a)};
}

inline RawSlice make_slice(const Tensor<float>& frame, std::size_t frames, Level level, Landmarks lm) {
  RawSlice s;
  s.frames.assign(frames, frame);
  s.level = level;
  s.landmarks = lm;
  return s;
}

// Junctions 64 px from the center give a crop scale of exactly 1 input px per output px.
inline Landmarks reference_landmarks(Point c, double bisector_deg = 180.0, double half_sep = 60.0, double dist = 64.0) {
  return {polar_point(c, dist, bisector_deg - half_sep), polar_point(c, dist, bisector_deg + half_sep), c};
}

inline double max_abs_diff(const Tensor<float>& a, const Tensor<float>& b) {
  double m = 0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(static_cast<double>(a[i]) - b[i]));
  return m;
}

// Largest spread across the 60 columns of any (row, frame), over all segments.
inline double column_spread(const std::vector<SegmentSequence>& segs) {
  double worst = 0;
  for (const auto& s : segs) {
    const std::size_t t = s.frames();
    for (std::size_t r = 0; r < kRadialSamples; ++r) {
      for (std::size_t f = 0; f < t; ++f) {
        float lo = 1e9f, hi = -1e9f;
        for (std::size_t a = 0; a < kAngularSamples; ++a) {
          const float v = s.data[(r * kAngularSamples + a) * t + f];
          lo = std::min(lo, v);
          hi = std::max(hi, v);
        }
        worst = std::max(worst, static_cast<double>(hi - lo));
      }
    }
  }
  return worst;
}

}  // namespace cmos::testing
