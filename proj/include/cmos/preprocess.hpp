#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "cmos/dataset.hpp"

namespace cmos {

inline constexpr std::size_t kAlignedSize = 160;

// Geometry convention: pixel (row i, col j) has image coordinates x = j, y = i.
// Angles are measured counter-clockwise from +x with y pointing up, so 180 degrees
// is the image's left.

struct Point {
  double x = 0.0;
  double y = 0.0;
};

/// Pixel coordinates on frame 0.
struct Landmarks {
  Point anterior_junction;
  Point inferior_junction;
  Point cavity_center;
};

/// One short-axis cine slice; frames are [H,W] images of equal size.
struct RawSlice {
  std::vector<Tensor<float>> frames;
  Level level = Level::basal;
  double pixel_spacing = 1.0;  // mm per pixel
  Landmarks landmarks;
  std::optional<std::vector<int>> scores;  // one per segment of the level, AHA order
};

/// Frames cropped, rotated and resized to 160x160 around the cavity center.
struct AlignedStack {
  std::vector<Tensor<float>> frames;
  double anterior_angle = 0.0;  // radians, direction of the anterior junction after alignment
  double sweep = 1.0;           // +1 or -1: angular direction from anterior junction to septum
};

/// Rotates the septal bisector to 180 degrees, centers the cavity at (80,80) and
/// resamples a square of side 2.5 x the farther junction distance to 160x160.
AlignedStack crop_align(const RawSlice& slice);

/// 8x8-tile CLAHE with 256 bins and relative clip limit 2.0, rescaled to [0,1].
/// A constant image maps to all zeros.
Tensor<float> clahe_normalize(const Tensor<float>& image);

/// Samples 80 radii (1..80 px) by 60 angles per segment. Basal and mid levels give six
/// 60-degree segments, apical four 90-degree segments, in AHA order. Segment data is
/// [80,60,t]; subject ids and scores are left empty.
std::vector<SegmentSequence> polar_resample(const AlignedStack& stack, Level level,
                                            Point center = {80.0, 80.0});

struct PreprocessOptions {
  bool clahe = true;
};

/// crop_align, optional CLAHE per frame, polar_resample.
std::vector<SegmentSequence> preprocess_slice(const RawSlice& slice, const PreprocessOptions& options = {});

/// Needs exactly one slice per level with equal frame counts. AHA indices 1-6 basal,
/// 7-12 mid, 13-16 apical.
SubjectStudy assemble_subject(const std::string& subject_id, const std::vector<RawSlice>& slices,
                              const PreprocessOptions& options = {});

// ---------------------------------------------------------------------------
// File formats
// ---------------------------------------------------------------------------

/// Binary PGM (P5), 8- or 16-bit. Values are scaled by 1/maxval into [0,1].
Tensor<float> read_pgm(const std::filesystem::path& path);

/// Writes [H,W] values in [0,1] as P5 with the given maxval (255 or 65535).
void write_pgm(const std::filesystem::path& path, const Tensor<float>& image, unsigned maxval = 255);

/// Landmarks file: three lines "anterior x y", "inferior x y", "center x y".
Landmarks read_landmarks(const std::filesystem::path& path);
std::string format_landmarks(const Landmarks& landmarks);

// Raw manifest: one whitespace-separated line per slice
//   subject_id level landmarks_path frame_dir scores|- [pixel_spacing]
// frame_dir holds the slice's *.pgm frames in lexicographic order; scores is a
// comma list with one value per segment of the level. Relative paths resolve
// against the manifest directory. '#' starts a comment line.
struct RawManifestEntry {
  std::string subject_id;
  Level level = Level::basal;
  std::filesystem::path landmarks_path;
  std::filesystem::path frame_dir;
  std::optional<std::vector<int>> scores;
  double pixel_spacing = 1.0;
};

std::vector<RawManifestEntry> read_raw_manifest(const std::filesystem::path& path);
std::string format_raw_manifest(const std::vector<RawManifestEntry>& entries);

/// Reads the frames and landmarks named by one entry.
RawSlice load_raw_slice(const RawManifestEntry& entry);

}  // namespace cmos
