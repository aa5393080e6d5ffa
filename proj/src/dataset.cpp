#include "cmos/dataset.hpp"

#include <algorithm>
#include <fstream>
#include <map>
#include <sstream>

#include "cmos/io.hpp"

namespace cmos {

Level parse_level(const std::string& name) {
  if (name == "basal") return Level::basal;
  if (name == "mid") return Level::mid;
  if (name == "apical") return Level::apical;
  throw InvalidArgument("invalid level '" + name + "' (expected basal, mid or apical)");
}

std::string to_string(Level level) {
  switch (level) {
    case Level::basal: return "basal";
    case Level::mid: return "mid";
    case Level::apical: return "apical";
  }
  return "?";
}

std::size_t segments_in_level(Level level) { return level == Level::apical ? 4 : 6; }

int first_segment_index(Level level) {
  switch (level) {
    case Level::basal: return 1;
    case Level::mid: return 7;
    case Level::apical: return 13;
  }
  return 0;
}

bool SubjectStudy::labeled() const {
  return std::all_of(segments.begin(), segments.end(), [](const auto& s) { return s.score.has_value(); });
}

std::array<int, kSegmentsPerSubject> SubjectStudy::labels() const {
  if (segments.size() != kSegmentsPerSubject || !labeled()) {
    throw InvalidArgument("subject " + subject_id + " is not fully labeled");
  }
  std::array<int, kSegmentsPerSubject> out{};
  for (std::size_t i = 0; i < kSegmentsPerSubject; ++i) out[i] = *segments[i].score;
  return out;
}

Tensor<float> SubjectStudy::batch() const {
  if (segments.empty()) throw InvalidArgument("subject " + subject_id + " has no segments");
  const Shape& s = segments.front().data.shape();
  Shape shape{segments.size()};
  shape.insert(shape.end(), s.begin(), s.end());
  std::vector<float> data;
  data.reserve(shape_numel(shape));
  for (const auto& seg : segments) {
    if (seg.data.shape() != s) throw ShapeError("subject " + subject_id + ": segment shapes differ");
    data.insert(data.end(), seg.data.data().begin(), seg.data.data().end());
  }
  return Tensor<float>(std::move(shape), std::move(data));
}

void validate_study(const SubjectStudy& study) {
  if (study.segments.size() != kSegmentsPerSubject) {
    throw InvalidArgument("subject " + study.subject_id + " has " + std::to_string(study.segments.size()) +
                          " segments, expected 16");
  }
  const std::size_t t = study.frame_count();
  for (std::size_t i = 0; i < kSegmentsPerSubject; ++i) {
    const auto& seg = study.segments[i];
    if (seg.segment_index != static_cast<int>(i) + 1) {
      throw InvalidArgument("subject " + study.subject_id + ": segments not ordered 1..16");
    }
    const Shape& s = seg.data.shape();
    if (s.size() != 3 || s[0] != kRadialSamples || s[1] != kAngularSamples || s[2] != t) {
      throw ShapeError("subject " + study.subject_id + " segment " + std::to_string(i + 1) + " has shape " +
                       shape_string(s) + ", expected [80,60," + std::to_string(t) + "]");
    }
    if (seg.score && (*seg.score < 0 || *seg.score >= kNumClasses)) {
      throw InvalidArgument("subject " + study.subject_id + ": score out of range");
    }
  }
  if (t < 2) throw ShapeError("subject " + study.subject_id + ": frame count below 2");
}

std::vector<ManifestEntry> read_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open manifest " + path.string());
  const auto base = path.parent_path();
  std::vector<ManifestEntry> entries;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto first = line.find_first_not_of(" \t\r");
    if (first == std::string::npos || line[first] == '#') continue;
    std::istringstream ss(line);
    ManifestEntry e;
    std::string level, label, tensor;
    if (!(ss >> e.subject_id >> e.segment_index >> level >> e.frame_count >> label >> tensor)) {
      throw FormatError(path.string() + ":" + std::to_string(lineno) + ": expected 6 fields");
    }
    try {
      e.level = parse_level(level);
    } catch (const InvalidArgument& err) {
      throw FormatError(path.string() + ":" + std::to_string(lineno) + ": " + err.what());
    }
    if (label != "-") {
      if (label.size() != 1 || label[0] < '0' || label[0] > '3') {
        throw FormatError(path.string() + ":" + std::to_string(lineno) + ": label must be 0-3 or '-'");
      }
      e.label = label[0] - '0';
    }
    if (e.segment_index < 1 || e.segment_index > 16) {
      throw FormatError(path.string() + ":" + std::to_string(lineno) + ": segment index out of range");
    }
    std::filesystem::path p(tensor);
    e.tensor_path = p.is_absolute() ? p : base / p;
    entries.push_back(std::move(e));
  }
  return entries;
}

std::string format_manifest(const std::vector<ManifestEntry>& entries) {
  std::ostringstream out;
  out << "# subject_id segment_index level frame_count label tensor_path\n";
  for (const auto& e : entries) {
    out << e.subject_id << ' ' << e.segment_index << ' ' << to_string(e.level) << ' ' << e.frame_count << ' '
        << (e.label ? std::to_string(*e.label) : std::string("-")) << ' ' << e.tensor_path.generic_string()
        << '\n';
  }
  return out.str();
}

void write_dataset(const std::filesystem::path& dir, const std::vector<SubjectStudy>& subjects) {
  std::filesystem::create_directories(dir / "tensors");
  std::vector<ManifestEntry> entries;
  for (const auto& study : subjects) {
    for (const auto& seg : study.segments) {
      const std::string name = study.subject_id + "_seg" + (seg.segment_index < 10 ? "0" : "") +
                               std::to_string(seg.segment_index) + ".cmot";
      const auto rel = std::filesystem::path("tensors") / name;
      save_tensor(dir / rel, seg.data);
      entries.push_back({study.subject_id, seg.segment_index, seg.level, seg.frames(), seg.score, rel});
    }
  }
  write_file_atomic(dir / "manifest.txt", format_manifest(entries));
}

std::vector<SubjectStudy> load_dataset(const std::filesystem::path& manifest_path) {
  const auto entries = read_manifest(manifest_path);
  std::vector<SubjectStudy> subjects;
  std::map<std::string, std::size_t> index;
  for (const auto& e : entries) {
    auto [it, inserted] = index.emplace(e.subject_id, subjects.size());
    if (inserted) subjects.push_back(SubjectStudy{e.subject_id, {}});
    auto data = load_tensor<float>(e.tensor_path);
    if (data.rank() != 3 || data.dim(2) != e.frame_count) {
      throw FormatError(e.tensor_path.string() + ": shape " + shape_string(data.shape()) +
                        " disagrees with manifest frame count " + std::to_string(e.frame_count));
    }
    subjects[it->second].segments.push_back({std::move(data), e.subject_id, e.segment_index, e.level, e.label});
  }
  for (auto& s : subjects) {
    std::sort(s.segments.begin(), s.segments.end(),
              [](const auto& a, const auto& b) { return a.segment_index < b.segment_index; });
    validate_study(s);
  }
  return subjects;
}

}  // namespace cmos
