#pragma once

#include <array>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "cmos/tensor.hpp"

namespace cmos {

inline constexpr std::size_t kSegmentsPerSubject = 16;
inline constexpr std::size_t kRadialSamples = 80;
inline constexpr std::size_t kAngularSamples = 60;
inline constexpr int kNumClasses = 4;

enum class Level { basal, mid, apical };

Level parse_level(const std::string& name);
std::string to_string(Level level);

/// Segments per level: 6 basal, 6 mid, 4 apical.
std::size_t segments_in_level(Level level);

/// First AHA index (1-based) of a level: 1, 7 or 13.
int first_segment_index(Level level);

/// One polar-resampled myocardial segment cine, data [r=80, a=60, t].
struct SegmentSequence {
  Tensor<float> data;
  std::string subject_id;
  int segment_index = 0;  // AHA 1..16
  Level level = Level::basal;
  std::optional<int> score;  // 0..3

  std::size_t frames() const { return data.dim(2); }
};

/// The 16 segments of one subject ordered by AHA index.
struct SubjectStudy {
  std::string subject_id;
  std::vector<SegmentSequence> segments;

  std::size_t frame_count() const { return segments.empty() ? 0 : segments.front().frames(); }
  bool labeled() const;
  std::array<int, kSegmentsPerSubject> labels() const;

  /// Stacks the segments into a [16, r, a, t] batch.
  Tensor<float> batch() const;
};

/// Throws InvalidArgument unless the study has segments 1..16 of equal shape and
/// valid optional labels.
void validate_study(const SubjectStudy& study);

// ---------------------------------------------------------------------------
// Dataset manifest: one whitespace-separated line per segment
//   subject_id segment_index level frame_count label|- tensor_path
// '#' starts a comment line. Relative tensor paths resolve against the manifest
// directory.
// ---------------------------------------------------------------------------

struct ManifestEntry {
  std::string subject_id;
  int segment_index = 0;
  Level level = Level::basal;
  std::size_t frame_count = 0;
  std::optional<int> label;
  std::filesystem::path tensor_path;
};

std::vector<ManifestEntry> read_manifest(const std::filesystem::path& path);
std::string format_manifest(const std::vector<ManifestEntry>& entries);

/// Writes every segment as a CMOT1 file under `dir/tensors/` plus `dir/manifest.txt`.
void write_dataset(const std::filesystem::path& dir, const std::vector<SubjectStudy>& subjects);

/// Loads and validates every subject listed in a manifest, in first-appearance order.
std::vector<SubjectStudy> load_dataset(const std::filesystem::path& manifest_path);

}  // namespace cmos
