#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <vector>

namespace affectlab::annotation {

enum class Dimension { valence, arousal };

std::string_view to_string(Dimension d);
Dimension parse_dimension(std::string_view s);  // throws ParseError

struct Sample {
  double time = 0.0;  // seconds
  double value = 0.0;
};

// One annotator's value stream for one video and one dimension.
struct AnnotationTrace {
  std::string video_id;
  std::string annotator_id;
  Dimension dimension = Dimension::valence;
  std::vector<Sample> samples;  // strictly increasing times, values in [-1,1]
};

inline constexpr double kDefaultFps = 25.0;

struct FrameSeries {
  std::string video_id;
  double fps = kDefaultFps;
  std::vector<double> values;  // one per frame
};

struct ManifestRecord {
  std::string video_id;
  std::string frame_path;  // relative to the frames root
  double valence = 0.0;
  double arousal = 0.0;

  bool operator==(const ManifestRecord&) const = default;
};

// Trace file:
//   # video=<id>
//   # annotator=<id>
//   # dimension=<valence|arousal>
//   <time>,<value>
AnnotationTrace parse_trace(std::string_view text);
std::string serialize_trace(const AnnotationTrace& trace);

AnnotationTrace read_trace_file(const std::filesystem::path& path);
void write_trace_file(const std::filesystem::path& path, const AnnotationTrace& trace);

// Zero-order hold: frame k takes the value of the last sample at or before k/fps;
// frames before the first sample take the first sample's value.
FrameSeries resample_to_frames(const AnnotationTrace& trace, double fps, std::size_t frame_count);

// Per-frame mean, clamped to [-1,1].
FrameSeries merge_annotators(const std::vector<FrameSeries>& series);

// Series file:
//   # video=<id>
//   # fps=<rate>
//   <value>            one line per frame, 6 decimals
std::string serialize_series(const FrameSeries& series);
FrameSeries parse_series(std::string_view text);
FrameSeries read_series_file(const std::filesystem::path& path);
void write_series_file(const std::filesystem::path& path, const FrameSeries& series);

// Frame files of one video sorted by ascending numeric stem.
std::vector<std::filesystem::path> list_frames(const std::filesystem::path& video_dir);

// One record per frame of each video under frames_root/<video_id>/. Videos are
// emitted in the map's key order.
std::vector<ManifestRecord> build_manifest(const std::filesystem::path& frames_root,
                                           const std::map<std::string, FrameSeries>& valence,
                                           const std::map<std::string, FrameSeries>& arousal);

// Three-column CSV `frame_path,valence,arousal`, 6-decimal values.
std::string serialize_manifest(const std::vector<ManifestRecord>& records);
void write_manifest(const std::filesystem::path& path, const std::vector<ManifestRecord>& records);

// Accepts the 3-column form (video id = parent directory of frame_path) and the
// explicit form `video_id,frame_path,valence,arousal`. Throws ParseError, RangeError
// and ContiguityError with line numbers.
std::vector<ManifestRecord> parse_manifest(std::string_view text);

}  // namespace affectlab::annotation
