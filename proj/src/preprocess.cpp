#include "cmos/preprocess.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <numbers>
#include <sstream>

#include "cmos/io.hpp"

namespace cmos {
namespace {

constexpr double kPi = std::numbers::pi;
constexpr double kCropFactor = 2.5;
constexpr double kMinRaySeparationDeg = 5.0;
constexpr std::size_t kClaheGrid = 8;
constexpr std::size_t kClaheBins = 256;
constexpr double kClaheClip = 2.0;

// Bilinear sample of img [H,W] at continuous pixel coordinates, edges clamped.
float sample(const Tensor<float>& img, double x, double y) {
  const std::size_t h = img.dim(0), w = img.dim(1);
  x = std::clamp(x, 0.0, static_cast<double>(w - 1));
  y = std::clamp(y, 0.0, static_cast<double>(h - 1));
  const auto x0 = static_cast<std::size_t>(x), y0 = static_cast<std::size_t>(y);
  const std::size_t x1 = std::min(x0 + 1, w - 1), y1 = std::min(y0 + 1, h - 1);
  const double fx = x - static_cast<double>(x0), fy = y - static_cast<double>(y0);
  const auto d = img.data();
  const double top = (1 - fx) * d[y0 * w + x0] + fx * d[y0 * w + x1];
  const double bottom = (1 - fx) * d[y1 * w + x0] + fx * d[y1 * w + x1];
  return static_cast<float>((1 - fy) * top + fy * bottom);
}

double angle_of(Point from, Point to) { return std::atan2(-(to.y - from.y), to.x - from.x); }

double wrap_angle(double a) {
  a = std::fmod(a + kPi, 2 * kPi);
  if (a < 0) a += 2 * kPi;
  return a - kPi;
}

bool inside(const Point& p, std::size_t h, std::size_t w) {
  return p.x >= 0 && p.y >= 0 && p.x <= static_cast<double>(w - 1) && p.y <= static_cast<double>(h - 1);
}

std::vector<int> parse_scores(const std::string& text, const std::string& where) {
  std::vector<int> scores;
  std::istringstream ss(text);
  std::string part;
  while (std::getline(ss, part, ',')) {
    if (part.size() != 1 || part[0] < '0' || part[0] > '3') throw FormatError(where + ": scores must be 0-3");
    scores.push_back(part[0] - '0');
  }
  return scores;
}

}  // namespace

AlignedStack crop_align(const RawSlice& slice) {
  if (slice.frames.size() < 2) throw InvalidArgument("slice needs at least 2 frames");
  const Shape& shape = slice.frames.front().shape();
  if (shape.size() != 2) throw ShapeError("slice frames must be [H,W], got " + shape_string(shape));
  for (const auto& f : slice.frames) {
    if (f.shape() != shape) throw ShapeError("slice frames differ in shape");
  }
  const std::size_t h = shape[0], w = shape[1];
  const auto& lm = slice.landmarks;
  for (const auto& [name, p] : {std::pair{"anterior junction", lm.anterior_junction},
                                std::pair{"inferior junction", lm.inferior_junction},
                                std::pair{"cavity center", lm.cavity_center}}) {
    if (!inside(p, h, w)) {
      std::ostringstream msg;
      msg << "landmark " << name << " (" << p.x << ", " << p.y << ") outside image " << w << "x" << h;
      throw InvalidArgument(msg.str());
    }
  }
  const Point c = lm.cavity_center;
  const double da = std::hypot(lm.anterior_junction.x - c.x, lm.anterior_junction.y - c.y);
  const double di = std::hypot(lm.inferior_junction.x - c.x, lm.inferior_junction.y - c.y);
  if (da == 0 || di == 0) throw InvalidArgument("junction landmark coincides with cavity center");

  const double ta = angle_of(c, lm.anterior_junction), ti = angle_of(c, lm.inferior_junction);
  const double separation = std::abs(wrap_angle(ta - ti)) * 180.0 / kPi;
  if (separation < kMinRaySeparationDeg || separation > 180.0 - kMinRaySeparationDeg) {
    std::ostringstream msg;
    msg << "degenerate landmarks: junction rays separated by " << separation << " degrees";
    throw InvalidArgument(msg.str());
  }
  const double bisector = std::atan2(std::sin(ta) + std::sin(ti), std::cos(ta) + std::cos(ti));
  const double rot = kPi - bisector;
  const double scale = kCropFactor * std::max(da, di) / static_cast<double>(kAlignedSize);
  const double cr = std::cos(rot), sr = std::sin(rot);
  const double half = static_cast<double>(kAlignedSize) / 2;

  // Output offset (ox, oy) in upright coordinates maps back through R(-rot).
  std::vector<std::array<double, 2>> src(kAlignedSize * kAlignedSize);
  for (std::size_t i = 0; i < kAlignedSize; ++i) {
    for (std::size_t j = 0; j < kAlignedSize; ++j) {
      const double ox = static_cast<double>(j) - half, oy = half - static_cast<double>(i);
      const double rx = cr * ox + sr * oy, ry = -sr * ox + cr * oy;
      src[i * kAlignedSize + j] = {c.x + scale * rx, c.y - scale * ry};
    }
  }
  AlignedStack out;
  out.anterior_angle = wrap_angle(ta + rot);
  out.sweep = out.anterior_angle > 0 ? 1.0 : -1.0;
  out.frames.reserve(slice.frames.size());
  for (const auto& f : slice.frames) {
    Tensor<float> o({kAlignedSize, kAlignedSize});
    for (std::size_t k = 0; k < src.size(); ++k) o[k] = sample(f, src[k][0], src[k][1]);
    out.frames.push_back(std::move(o));
  }
  return out;
}

Tensor<float> clahe_normalize(const Tensor<float>& image) {
  if (image.rank() != 2) throw ShapeError("clahe_normalize expects [H,W], got " + shape_string(image.shape()));
  if (!image.all_finite()) throw NumericError("clahe_normalize: non-finite intensity");
  const std::size_t h = image.dim(0), w = image.dim(1);
  const auto [mn_it, mx_it] = std::minmax_element(image.data().begin(), image.data().end());
  const double mn = *mn_it, range = static_cast<double>(*mx_it) - mn;
  Tensor<float> out({h, w}, 0.0f);
  if (range <= 0) return out;

  std::vector<std::size_t> bins(image.size());
  for (std::size_t k = 0; k < image.size(); ++k) {
    const double v = (image[k] - mn) / range;
    bins[k] = std::min(kClaheBins - 1, static_cast<std::size_t>(v * kClaheBins));
  }
  const std::size_t gy = std::min(kClaheGrid, h), gx = std::min(kClaheGrid, w);
  auto edge = [](std::size_t t, std::size_t n, std::size_t g) { return t * n / g; };

  // Per-tile lookup tables from clipped, redistributed histograms.
  std::vector<std::array<double, kClaheBins>> lut(gy * gx);
  for (std::size_t ty = 0; ty < gy; ++ty) {
    for (std::size_t tx = 0; tx < gx; ++tx) {
      std::array<double, kClaheBins> hist{};
      const std::size_t r0 = edge(ty, h, gy), r1 = edge(ty + 1, h, gy);
      const std::size_t c0 = edge(tx, w, gx), c1 = edge(tx + 1, w, gx);
      for (std::size_t i = r0; i < r1; ++i) {
        for (std::size_t j = c0; j < c1; ++j) hist[bins[i * w + j]] += 1;
      }
      const double area = static_cast<double>((r1 - r0) * (c1 - c0));
      const double limit = std::max(1.0, kClaheClip * area / kClaheBins);
      double excess = 0;
      for (auto& v : hist) {
        if (v > limit) {
          excess += v - limit;
          v = limit;
        }
      }
      double cdf = 0;
      auto& table = lut[ty * gx + tx];
      for (std::size_t b = 0; b < kClaheBins; ++b) {
        cdf += hist[b] + excess / kClaheBins;
        table[b] = cdf / area;
      }
    }
  }

  // Bilinear blend between the four nearest tile centers.
  auto coord = [](std::size_t p, std::size_t n, std::size_t g, std::size_t& t0, std::size_t& t1, double& f) {
    const double tile = static_cast<double>(n) / static_cast<double>(g);
    const double pos = (static_cast<double>(p) + 0.5) / tile - 0.5;
    if (pos <= 0) {
      t0 = t1 = 0;
      f = 0;
    } else if (pos >= static_cast<double>(g - 1)) {
      t0 = t1 = g - 1;
      f = 0;
    } else {
      t0 = static_cast<std::size_t>(pos);
      t1 = t0 + 1;
      f = pos - static_cast<double>(t0);
    }
  };
  for (std::size_t i = 0; i < h; ++i) {
    std::size_t y0, y1;
    double fy;
    coord(i, h, gy, y0, y1, fy);
    for (std::size_t j = 0; j < w; ++j) {
      std::size_t x0, x1;
      double fx;
      coord(j, w, gx, x0, x1, fx);
      const std::size_t b = bins[i * w + j];
      const double top = (1 - fx) * lut[y0 * gx + x0][b] + fx * lut[y0 * gx + x1][b];
      const double bottom = (1 - fx) * lut[y1 * gx + x0][b] + fx * lut[y1 * gx + x1][b];
      out[i * w + j] = static_cast<float>((1 - fy) * top + fy * bottom);
    }
  }
  const auto [lo_it, hi_it] = std::minmax_element(out.data().begin(), out.data().end());
  const float lo = *lo_it, span = *hi_it - *lo_it;
  for (auto& v : out.data()) v = span > 0 ? (v - lo) / span : 0.0f;
  return out;
}

std::vector<SegmentSequence> polar_resample(const AlignedStack& stack, Level level, Point center) {
  if (level != Level::basal && level != Level::mid && level != Level::apical) {
    throw InvalidArgument("invalid level");
  }
  if (stack.frames.empty()) throw InvalidArgument("polar_resample: empty frame stack");
  const std::size_t t = stack.frames.size();
  const std::size_t n = segments_in_level(level);
  const double arc = 2 * kPi / static_cast<double>(n);
  const double d = stack.sweep;
  std::vector<SegmentSequence> out;
  out.reserve(n);
  for (std::size_t k = 0; k < n; ++k) {
    // The level's first (anterior) segment ends at the anterior junction ray.
    const double start = stack.anterior_angle + d * (static_cast<double>(k) - 1.0) * arc;
    Tensor<float> data({kRadialSamples, kAngularSamples, t});
    for (std::size_t a = 0; a < kAngularSamples; ++a) {
      const double theta = start + d * (static_cast<double>(a) + 0.5) * arc / kAngularSamples;
      const double ct = std::cos(theta), st = std::sin(theta);
      for (std::size_t r = 0; r < kRadialSamples; ++r) {
        const double radius = static_cast<double>(r + 1);
        const double x = center.x + radius * ct, y = center.y - radius * st;
        float* dst = data.data().data() + (r * kAngularSamples + a) * t;
        for (std::size_t f = 0; f < t; ++f) dst[f] = sample(stack.frames[f], x, y);
      }
    }
    out.push_back({std::move(data), "", first_segment_index(level) + static_cast<int>(k), level, std::nullopt});
  }
  return out;
}

std::vector<SegmentSequence> preprocess_slice(const RawSlice& slice, const PreprocessOptions& options) {
  AlignedStack stack = crop_align(slice);
  if (options.clahe) {
    for (auto& f : stack.frames) f = clahe_normalize(f);
  }
  auto segments = polar_resample(stack, slice.level);
  if (slice.scores) {
    if (slice.scores->size() != segments.size()) {
      throw InvalidArgument(to_string(slice.level) + " slice needs " + std::to_string(segments.size()) +
                            " scores, got " + std::to_string(slice.scores->size()));
    }
    for (std::size_t k = 0; k < segments.size(); ++k) {
      const int s = (*slice.scores)[k];
      if (s < 0 || s >= kNumClasses) throw InvalidArgument("score out of range: " + std::to_string(s));
      segments[k].score = s;
    }
  }
  return segments;
}

SubjectStudy assemble_subject(const std::string& subject_id, const std::vector<RawSlice>& slices,
                              const PreprocessOptions& options) {
  std::array<const RawSlice*, 3> by_level{};
  for (const auto& s : slices) {
    auto& slot = by_level[static_cast<std::size_t>(s.level)];
    if (slot) throw InvalidArgument("subject " + subject_id + ": duplicate level " + to_string(s.level));
    slot = &s;
  }
  for (Level l : {Level::basal, Level::mid, Level::apical}) {
    if (!by_level[static_cast<std::size_t>(l)]) {
      throw InvalidArgument("subject " + subject_id + ": missing level " + to_string(l));
    }
  }
  const std::size_t t = by_level[0]->frames.size();
  for (const auto* s : by_level) {
    if (s->frames.size() != t) {
      throw InvalidArgument("subject " + subject_id + ": frame count mismatch (" + std::to_string(t) + " vs " +
                            std::to_string(s->frames.size()) + ")");
    }
  }
  SubjectStudy study{subject_id, {}};
  for (const auto* s : by_level) {
    for (auto& seg : preprocess_slice(*s, options)) {
      seg.subject_id = subject_id;
      study.segments.push_back(std::move(seg));
    }
  }
  validate_study(study);
  return study;
}

Tensor<float> read_pgm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open image " + path.string());
  auto token = [&]() {
    std::string tok;
    char ch;
    while (in.get(ch)) {
      if (ch == '#') {
        std::string skip;
        std::getline(in, skip);
      } else if (std::isspace(static_cast<unsigned char>(ch))) {
        if (!tok.empty()) break;
      } else {
        tok += ch;
      }
    }
    return tok;
  };
  if (token() != "P5") throw FormatError(path.string() + ": not a binary PGM (P5)");
  std::size_t w = 0, h = 0;
  unsigned long maxval = 0;
  try {
    w = std::stoul(token());
    h = std::stoul(token());
    maxval = std::stoul(token());
  } catch (const std::exception&) {
    throw FormatError(path.string() + ": malformed PGM header");
  }
  if (w == 0 || h == 0 || maxval == 0 || maxval > 65535) throw FormatError(path.string() + ": invalid PGM header");
  const std::size_t bytes = maxval < 256 ? 1 : 2;
  std::vector<unsigned char> raw(w * h * bytes);
  try {
    read_exact(in, reinterpret_cast<char*>(raw.data()), raw.size());
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
  Tensor<float> img({h, w});
  const double inv = 1.0 / static_cast<double>(maxval);
  for (std::size_t k = 0; k < w * h; ++k) {
    const unsigned v = bytes == 1 ? raw[k] : (static_cast<unsigned>(raw[2 * k]) << 8) | raw[2 * k + 1];
    img[k] = static_cast<float>(std::min<unsigned long>(v, maxval) * inv);
  }
  return img;
}

void write_pgm(const std::filesystem::path& path, const Tensor<float>& image, unsigned maxval) {
  if (image.rank() != 2) throw ShapeError("write_pgm expects [H,W], got " + shape_string(image.shape()));
  if (maxval == 0 || maxval > 65535) throw InvalidArgument("PGM maxval must be in 1..65535");
  std::ostringstream out(std::ios::binary);
  out << "P5\n" << image.dim(1) << ' ' << image.dim(0) << '\n' << maxval << '\n';
  for (float v : image.data()) {
    const auto q = static_cast<unsigned>(std::lround(std::clamp(static_cast<double>(v), 0.0, 1.0) * maxval));
    if (maxval < 256) {
      out.put(static_cast<char>(q));
    } else {
      out.put(static_cast<char>(q >> 8));
      out.put(static_cast<char>(q & 0xff));
    }
  }
  write_file_atomic(path, out.str());
}

Landmarks read_landmarks(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open landmarks file " + path.string());
  std::optional<Point> ant, inf, ctr;
  std::string line;
  while (std::getline(in, line)) {
    std::istringstream ss(line);
    std::string key;
    if (!(ss >> key) || key[0] == '#') continue;
    Point p;
    if (!(ss >> p.x >> p.y)) throw FormatError(path.string() + ": malformed line '" + line + "'");
    if (key == "anterior") ant = p;
    else if (key == "inferior") inf = p;
    else if (key == "center") ctr = p;
    else throw FormatError(path.string() + ": unknown landmark '" + key + "'");
  }
  if (!ant || !inf || !ctr) throw FormatError(path.string() + ": needs anterior, inferior and center");
  return {*ant, *inf, *ctr};
}

std::string format_landmarks(const Landmarks& lm) {
  std::ostringstream out;
  out.precision(17);
  out << "anterior " << lm.anterior_junction.x << ' ' << lm.anterior_junction.y << '\n'
      << "inferior " << lm.inferior_junction.x << ' ' << lm.inferior_junction.y << '\n'
      << "center " << lm.cavity_center.x << ' ' << lm.cavity_center.y << '\n';
  return out.str();
}

std::vector<RawManifestEntry> read_raw_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open manifest " + path.string());
  const auto base = path.parent_path();
  auto resolve = [&](const std::string& p) {
    std::filesystem::path fp(p);
    return fp.is_absolute() ? fp : base / fp;
  };
  std::vector<RawManifestEntry> entries;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const std::string where = path.string() + ":" + std::to_string(lineno);
    const auto first = line.find_first_not_of(" \t\r");
    if (first == std::string::npos || line[first] == '#') continue;
    std::istringstream ss(line);
    RawManifestEntry e;
    std::string level, landmarks, frames, scores;
    if (!(ss >> e.subject_id >> level >> landmarks >> frames >> scores)) {
      throw FormatError(where + ": expected at least 5 fields");
    }
    try {
      e.level = parse_level(level);
    } catch (const InvalidArgument& err) {
      throw FormatError(where + ": " + err.what());
    }
    e.landmarks_path = resolve(landmarks);
    e.frame_dir = resolve(frames);
    if (scores != "-") e.scores = parse_scores(scores, where);
    if (std::string spacing; ss >> spacing) {
      try {
        e.pixel_spacing = std::stod(spacing);
      } catch (const std::exception&) {
        throw FormatError(where + ": invalid pixel spacing '" + spacing + "'");
      }
    }
    entries.push_back(std::move(e));
  }
  return entries;
}

std::string format_raw_manifest(const std::vector<RawManifestEntry>& entries) {
  std::ostringstream out;
  out << "# subject_id level landmarks_path frame_dir scores pixel_spacing\n";
  for (const auto& e : entries) {
    out << e.subject_id << ' ' << to_string(e.level) << ' ' << e.landmarks_path.generic_string() << ' '
        << e.frame_dir.generic_string() << ' ';
    if (e.scores) {
      for (std::size_t k = 0; k < e.scores->size(); ++k) out << (k ? "," : "") << (*e.scores)[k];
    } else {
      out << '-';
    }
    out << ' ' << e.pixel_spacing << '\n';
  }
  return out.str();
}

RawSlice load_raw_slice(const RawManifestEntry& entry) {
  RawSlice slice;
  slice.level = entry.level;
  slice.pixel_spacing = entry.pixel_spacing;
  slice.scores = entry.scores;
  slice.landmarks = read_landmarks(entry.landmarks_path);
  std::error_code ec;
  std::vector<std::filesystem::path> files;
  for (const auto& f : std::filesystem::directory_iterator(entry.frame_dir, ec)) {
    if (f.path().extension() == ".pgm") files.push_back(f.path());
  }
  if (ec) throw FormatError("cannot read frame directory " + entry.frame_dir.string());
  std::sort(files.begin(), files.end());
  if (files.empty()) throw FormatError("no .pgm frames in " + entry.frame_dir.string());
  for (const auto& f : files) slice.frames.push_back(read_pgm(f));
  return slice;
}

}  // namespace cmos
