#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "cmos/dataset.hpp"
#include "cmos/random.hpp"

namespace cmos {

/// Parametric wall motion of one segment in polar (row = radius) space.
///
/// Frame f has phase w(f) = 0.5 (1 - cos(2 pi f / T)) with T the frame count. The
/// myocardial band spans rows [R0 - A w, R0 - A w + W0 + B w]; positive A moves the
/// inner edge toward the center.
struct MotionSpec {
  int motion_class = 0;            // 0 normal, 1 hypokinetic, 2 akinetic, 3 dyskinetic
  double inner_radius = 38.0;      // R0, rows
  double thickness = 12.0;         // W0, rows
  double contraction = 8.0;        // A, rows
  double thickening = 4.0;         // B, rows
  double noise = 0.05;             // sigma of additive Gaussian noise
  double gain = 1.0;               // band intensity is 0.8 * gain
  double column_modulation = 0.1;  // relative amplitude variation across columns
  double column_phase = 0.0;       // radians

  /// Throws InvalidArgument when the band can leave [0, 80).
  void validate() const;
};

/// Class amplitudes: normal A=8 B=4, hypokinetic A=3 B=1.5, akinetic A~U[-0.5,0.5]
/// B=0, dyskinetic A=-5 B=0. Only the akinetic case draws from rng.
MotionSpec motion_for_class(int motion_class, Rng& rng);

/// Renders [80,60,t] in [0,1]. Noise draws come from rng.
Tensor<float> render_segment(const MotionSpec& spec, std::size_t frames, Rng& rng);

/// Inner band edge (row) of column `col` at frame f, before noise.
double inner_edge(const MotionSpec& spec, std::size_t frames, std::size_t frame, std::size_t col);

struct SynthConfig {
  std::size_t subjects = 90;
  std::array<std::size_t, 2> frame_counts{20, 25};
  std::array<double, 2> frame_mix{65, 25};                  // relative weights
  std::array<double, kNumClasses> class_prior{794, 348, 207, 91};  // relative weights
  double noise = 0.05;
  double radius_jitter = 3.0;     // R0 drawn from 38 +- jitter
  double thickness_jitter = 2.0;  // W0 drawn from 12 +- jitter
  double gain_low = 0.85;
  double gain_high = 1.15;
  double column_modulation = 0.1;
  std::uint64_t seed = 0;
  std::size_t first_subject = 0;  // subject ids continue from here

  void validate() const;
};

/// Per-subject frame count and 16 class labels, drawn without rendering. Matches the
/// labels generate_dataset produces for the same config.
struct SubjectDraw {
  std::size_t frames = 0;
  std::array<int, kSegmentsPerSubject> classes{};
};
SubjectDraw draw_subject(const SynthConfig& config, std::size_t subject);

/// Subject ids are "syn" + zero-padded index. Deterministic in config; subjects are
/// rendered in parallel from per-subject derived seeds.
std::vector<SubjectStudy> generate_dataset(const SynthConfig& config);

}  // namespace cmos
