#include "cmos/synth.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numbers>
#include <numeric>

#include "cmos/parallel.hpp"

namespace cmos {
namespace {

constexpr double kBackground = 0.15;
constexpr double kBandLevel = 0.8;
constexpr double kEdgeScale = 0.5;  // sigmoid scale; the 10-90% rise spans ~2 rows

double phase(std::size_t frames, std::size_t frame) {
  return 0.5 * (1.0 - std::cos(2.0 * std::numbers::pi * static_cast<double>(frame) / static_cast<double>(frames)));
}

double column_factor(const MotionSpec& spec, std::size_t col) {
  return 1.0 + spec.column_modulation *
                   std::sin(2.0 * std::numbers::pi * static_cast<double>(col) / kAngularSamples + spec.column_phase);
}

template <std::size_t N>
std::size_t draw_index(const std::array<double, N>& weights, Rng& rng) {
  std::discrete_distribution<std::size_t> d(weights.begin(), weights.end());
  return d(rng);
}

}  // namespace

void MotionSpec::validate() const {
  if (motion_class < 0 || motion_class >= kNumClasses) throw InvalidArgument("motion class out of range");
  if (thickness <= 0 || gain <= 0 || noise < 0 || column_modulation < 0 || column_modulation >= 1) {
    throw InvalidArgument("invalid motion parameters");
  }
  const double amp = std::abs(contraction) * (1 + column_modulation);
  const double thick = std::max(0.0, thickening) * (1 + column_modulation);
  if (inner_radius - amp < 0 || inner_radius + thickness + amp + thick > static_cast<double>(kRadialSamples)) {
    throw InvalidArgument("motion band leaves [0, 80): R0=" + std::to_string(inner_radius) +
                          " W0=" + std::to_string(thickness) + " A=" + std::to_string(contraction) +
                          " B=" + std::to_string(thickening));
  }
}

MotionSpec motion_for_class(int motion_class, Rng& rng) {
  MotionSpec s;
  s.motion_class = motion_class;
  switch (motion_class) {
    case 0: s.contraction = 8.0, s.thickening = 4.0; break;
    case 1: s.contraction = 3.0, s.thickening = 1.5; break;
    case 2: s.contraction = std::uniform_real_distribution<double>(-0.5, 0.5)(rng), s.thickening = 0.0; break;
    case 3: s.contraction = -5.0, s.thickening = 0.0; break;
    default: throw InvalidArgument("motion class out of range: " + std::to_string(motion_class));
  }
  return s;
}

double inner_edge(const MotionSpec& spec, std::size_t frames, std::size_t frame, std::size_t col) {
  return spec.inner_radius - spec.contraction * column_factor(spec, col) * phase(frames, frame);
}

Tensor<float> render_segment(const MotionSpec& spec, std::size_t frames, Rng& rng) {
  spec.validate();
  if (frames < 2) throw InvalidArgument("render_segment needs at least 2 frames");
  Tensor<float> out({kRadialSamples, kAngularSamples, frames});
  const double band = kBandLevel * spec.gain - kBackground;
  std::normal_distribution<double> noise(0.0, spec.noise);
  for (std::size_t a = 0; a < kAngularSamples; ++a) {
    const double cf = column_factor(spec, a);
    for (std::size_t f = 0; f < frames; ++f) {
      const double w = phase(frames, f);
      const double inner = spec.inner_radius - spec.contraction * cf * w;
      const double outer = inner + spec.thickness + spec.thickening * cf * w;
      for (std::size_t r = 0; r < kRadialSamples; ++r) {
        const double row = static_cast<double>(r);
        const double rise = 1.0 / (1.0 + std::exp(-(row - inner) / kEdgeScale));
        const double fall = 1.0 / (1.0 + std::exp(-(outer - row) / kEdgeScale));
        out[(r * kAngularSamples + a) * frames + f] = static_cast<float>(kBackground + band * rise * fall);
      }
    }
  }
  if (spec.noise > 0) {
    for (auto& v : out.data()) v = static_cast<float>(std::clamp(v + noise(rng), 0.0, 1.0));
  }
  return out;
}

void SynthConfig::validate() const {
  if (subjects == 0) throw InvalidArgument("subject count must be positive");
  for (auto t : frame_counts) {
    if (t < 2) throw InvalidArgument("frame counts must be at least 2");
  }
  auto check_weights = [](const auto& w, const char* what) {
    double total = 0;
    for (double v : w) {
      if (!(v >= 0)) throw InvalidArgument(std::string(what) + " weights must be non-negative");
      total += v;
    }
    if (!(total > 0)) throw InvalidArgument(std::string(what) + " weights must not all be zero");
  };
  check_weights(frame_mix, "frame mix");
  check_weights(class_prior, "class prior");
  if (noise < 0 || radius_jitter < 0 || thickness_jitter < 0 || gain_low <= 0 || gain_high < gain_low) {
    throw InvalidArgument("invalid synthetic noise or jitter settings");
  }
}

SubjectDraw draw_subject(const SynthConfig& config, std::size_t subject) {
  Rng rng(derive_seed(config.seed, 2 * (config.first_subject + subject)));
  SubjectDraw d;
  d.frames = config.frame_counts[draw_index(config.frame_mix, rng)];
  for (auto& c : d.classes) c = static_cast<int>(draw_index(config.class_prior, rng));
  return d;
}

std::vector<SubjectStudy> generate_dataset(const SynthConfig& config) {
  config.validate();
  std::vector<SubjectStudy> out(config.subjects);
  parallel_for(config.subjects, [&](std::size_t s) {
    const SubjectDraw draw = draw_subject(config, s);
    Rng rng(derive_seed(config.seed, 2 * (config.first_subject + s) + 1));
    char id[32];
    std::snprintf(id, sizeof id, "syn%04zu", config.first_subject + s);
    SubjectStudy study{id, {}};
    const double gain = std::uniform_real_distribution<double>(config.gain_low, config.gain_high)(rng);
    std::uniform_real_distribution<double> unit(-1.0, 1.0);
    for (std::size_t k = 0; k < kSegmentsPerSubject; ++k) {
      MotionSpec spec = motion_for_class(draw.classes[k], rng);
      spec.inner_radius = 38.0 + config.radius_jitter * unit(rng);
      spec.thickness = 12.0 + config.thickness_jitter * unit(rng);
      spec.gain = gain;
      spec.noise = config.noise;
      spec.column_modulation = config.column_modulation;
      spec.column_phase = std::numbers::pi * unit(rng);
      const int index = static_cast<int>(k) + 1;
      const Level level = index <= 6 ? Level::basal : index <= 12 ? Level::mid : Level::apical;
      study.segments.push_back({render_segment(spec, draw.frames, rng), study.subject_id, index, level,
                                draw.classes[k]});
    }
    out[s] = std::move(study);
  });
  return out;
}

}  // namespace cmos
