#include "affectlab/annotation.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <set>
#include <sstream>

#include "affectlab/error.hpp"
#include "text_util.hpp"

namespace affectlab::annotation {

namespace fs = std::filesystem;
using detail::parse_double;
using detail::split;
using detail::trim;

std::string_view to_string(Dimension d) { return d == Dimension::valence ? "valence" : "arousal"; }

Dimension parse_dimension(std::string_view s) {
  if (s == "valence") return Dimension::valence;
  if (s == "arousal") return Dimension::arousal;
  throw ParseError("unknown dimension '" + std::string(s) + "' (expected valence or arousal)");
}

AnnotationTrace parse_trace(std::string_view text) {
  AnnotationTrace trace;
  bool have_video = false, have_annotator = false, have_dimension = false;
  std::size_t line_no = 0;
  for (std::string_view raw : split(text, '\n')) {
    ++line_no;
    std::string_view line = trim(raw);
    if (line.empty()) continue;
    if (line.front() == '#') {
      line = trim(line.substr(1));
      const auto eq = line.find('=');
      if (eq == std::string_view::npos) continue;  // free-form comment
      const std::string_view key = trim(line.substr(0, eq));
      const std::string_view value = trim(line.substr(eq + 1));
      if (key == "video") {
        trace.video_id = value;
        have_video = !value.empty();
      } else if (key == "annotator") {
        trace.annotator_id = value;
        have_annotator = !value.empty();
      } else if (key == "dimension") {
        try {
          trace.dimension = parse_dimension(value);
        } catch (const ParseError& e) {
          throw ParseError(e.what(), line_no);
        }
        have_dimension = true;
      }
      continue;
    }
    const auto fields = split(line, ',');
    if (fields.size() != 2) throw ParseError("expected '<time>,<value>'", line_no);
    const auto time = parse_double(trim(fields[0]));
    const auto value = parse_double(trim(fields[1]));
    if (!time || !value) throw ParseError("malformed number", line_no);
    if (*time < 0.0) throw RangeError("negative time", line_no);
    if (!(*value >= -1.0 && *value <= 1.0))
      throw RangeError("value " + std::string(trim(fields[1])) + " outside [-1,1]", line_no);
    if (!trace.samples.empty() && *time <= trace.samples.back().time)
      throw MonotonicityError("sample times must be strictly increasing", line_no);
    trace.samples.push_back({*time, *value});
  }
  if (!have_video) throw ParseError("missing '# video=<id>' header");
  if (!have_annotator) throw ParseError("missing '# annotator=<id>' header");
  if (!have_dimension) throw ParseError("missing '# dimension=<valence|arousal>' header");
  if (trace.samples.empty()) throw ParseError("trace has no samples");
  return trace;
}

std::string serialize_trace(const AnnotationTrace& trace) {
  std::string out;
  out += "# video=" + trace.video_id + "\n";
  out += "# annotator=" + trace.annotator_id + "\n";
  out += "# dimension=" + std::string(to_string(trace.dimension)) + "\n";
  char buf[64];
  for (const auto& s : trace.samples) {
    std::snprintf(buf, sizeof buf, "%.4f,%.6f\n", s.time, s.value);
    out += buf;
  }
  return out;
}

AnnotationTrace read_trace_file(const fs::path& path) {
  try {
    return parse_trace(detail::read_file(path));
  } catch (const ParseError& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
}

void write_trace_file(const fs::path& path, const AnnotationTrace& trace) {
  detail::write_file_atomic(path, serialize_trace(trace));
}

FrameSeries resample_to_frames(const AnnotationTrace& trace, double fps, std::size_t frame_count) {
  if (!(fps > 0.0)) throw UsageError("fps must be positive");
  if (frame_count == 0) throw UsageError("frame_count must be at least 1");
  if (trace.samples.empty()) throw ParseError("trace has no samples");
  // Tolerance absorbs decimal rounding of written timestamps.
  constexpr double kTimeTol = 1e-9;
  FrameSeries out{trace.video_id, fps, std::vector<double>(frame_count)};
  std::size_t cursor = 0;
  for (std::size_t k = 0; k < frame_count; ++k) {
    const double t = static_cast<double>(k) / fps;
    while (cursor + 1 < trace.samples.size() && trace.samples[cursor + 1].time <= t + kTimeTol)
      ++cursor;
    out.values[k] = trace.samples[cursor].value;
  }
  return out;
}

FrameSeries merge_annotators(const std::vector<FrameSeries>& series) {
  if (series.empty()) throw LengthMismatch("merge needs at least one series");
  const FrameSeries& first = series.front();
  for (const auto& s : series) {
    if (s.video_id != first.video_id)
      throw LengthMismatch("merge: video ids differ ('" + first.video_id + "' vs '" + s.video_id + "')");
    if (s.fps != first.fps) throw LengthMismatch("merge: frame rates differ for " + first.video_id);
    if (s.values.size() != first.values.size())
      throw LengthMismatch("merge: frame counts differ for " + first.video_id + " (" +
                           std::to_string(first.values.size()) + " vs " +
                           std::to_string(s.values.size()) + ")");
  }
  FrameSeries out{first.video_id, first.fps, std::vector<double>(first.values.size(), 0.0)};
  for (std::size_t k = 0; k < out.values.size(); ++k) {
    double sum = 0.0;
    for (const auto& s : series) sum += s.values[k];
    out.values[k] = std::clamp(sum / static_cast<double>(series.size()), -1.0, 1.0);
  }
  return out;
}

std::vector<fs::path> list_frames(const fs::path& video_dir) {
  std::vector<std::pair<unsigned long long, fs::path>> numbered;
  std::error_code ec;
  for (const auto& entry : fs::directory_iterator(video_dir, ec)) {
    if (!entry.is_regular_file()) continue;
    const std::string stem = entry.path().stem().string();
    unsigned long long n = 0;
    const auto [ptr, err] = std::from_chars(stem.data(), stem.data() + stem.size(), n);
    if (err != std::errc() || ptr != stem.data() + stem.size()) continue;
    numbered.emplace_back(n, entry.path());
  }
  if (ec) throw IOError("cannot list " + video_dir.string() + ": " + ec.message());
  std::sort(numbered.begin(), numbered.end());
  std::vector<fs::path> out;
  out.reserve(numbered.size());
  for (auto& [n, p] : numbered) out.push_back(std::move(p));
  return out;
}

std::string serialize_series(const FrameSeries& series) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", series.fps);
  std::string out = "# video=" + series.video_id + "\n# fps=" + buf + "\n";
  for (double v : series.values) {
    std::snprintf(buf, sizeof buf, "%.6f\n", v);
    out += buf;
  }
  return out;
}

FrameSeries parse_series(std::string_view text) {
  FrameSeries s;
  bool have_video = false;
  std::size_t line_no = 0;
  for (std::string_view raw : split(text, '\n')) {
    ++line_no;
    std::string_view line = trim(raw);
    if (line.empty()) continue;
    if (line.front() == '#') {
      line = trim(line.substr(1));
      const auto eq = line.find('=');
      if (eq == std::string_view::npos) continue;
      const auto key = trim(line.substr(0, eq));
      const auto value = trim(line.substr(eq + 1));
      if (key == "video") {
        s.video_id = value;
        have_video = !value.empty();
      } else if (key == "fps") {
        const auto f = parse_double(value);
        if (!f || !(*f > 0.0)) throw ParseError("fps must be a positive number", line_no);
        s.fps = *f;
      }
      continue;
    }
    const auto v = parse_double(line);
    if (!v) throw ParseError("malformed value", line_no);
    if (!(*v >= -1.0 && *v <= 1.0)) throw RangeError("value outside [-1,1]", line_no);
    s.values.push_back(*v);
  }
  if (!have_video) throw ParseError("missing '# video=<id>' header");
  if (s.values.empty()) throw ParseError("series has no values");
  return s;
}

FrameSeries read_series_file(const fs::path& path) {
  try {
    return parse_series(detail::read_file(path));
  } catch (const ParseError& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
}

void write_series_file(const fs::path& path, const FrameSeries& series) {
  detail::write_file_atomic(path, serialize_series(series));
}

std::vector<ManifestRecord> build_manifest(const fs::path& frames_root,
                                           const std::map<std::string, FrameSeries>& valence,
                                           const std::map<std::string, FrameSeries>& arousal) {
  for (const auto& [id, s] : arousal)
    if (!valence.count(id)) throw LengthMismatch("video " + id + " has arousal but no valence series");
  std::vector<ManifestRecord> records;
  for (const auto& [id, val] : valence) {
    const auto aro_it = arousal.find(id);
    if (aro_it == arousal.end()) throw LengthMismatch("video " + id + " has valence but no arousal series");
    const FrameSeries& aro = aro_it->second;
    const fs::path dir = frames_root / id;
    if (!fs::is_directory(dir)) throw IOError("video " + id + ": frame directory missing: " + dir.string());
    const auto frames = list_frames(dir);
    if (frames.empty()) throw IOError("video " + id + ": no frame files in " + dir.string());
    for (std::size_t k = 0; k < frames.size(); ++k) {
      const auto stem = frames[k].stem().string();
      if (std::stoull(stem) != k + 1)
        throw IOError("video " + id + ": missing frame file number " + std::to_string(k + 1));
    }
    if (val.values.size() != frames.size() || aro.values.size() != frames.size())
      throw LengthMismatch("video " + id + ": " + std::to_string(frames.size()) + " frame files but series lengths " +
                           std::to_string(val.values.size()) + "/" + std::to_string(aro.values.size()));
    for (std::size_t k = 0; k < frames.size(); ++k) {
      records.push_back({id, (fs::path(id) / frames[k].filename()).generic_string(), val.values[k],
                         aro.values[k]});
    }
  }
  return records;
}

std::string serialize_manifest(const std::vector<ManifestRecord>& records) {
  std::string out;
  char buf[64];
  for (const auto& r : records) {
    out += r.frame_path;
    std::snprintf(buf, sizeof buf, ",%.6f,%.6f\n", r.valence, r.arousal);
    out += buf;
  }
  return out;
}

void write_manifest(const fs::path& path, const std::vector<ManifestRecord>& records) {
  detail::write_file_atomic(path, serialize_manifest(records));
}

std::vector<ManifestRecord> parse_manifest(std::string_view text) {
  std::vector<ManifestRecord> records;
  std::set<std::string> closed;
  std::size_t line_no = 0;
  for (std::string_view raw : split(text, '\n')) {
    ++line_no;
    const std::string_view line = trim(raw);
    if (line.empty()) continue;
    const auto f = split(line, ',');
    ManifestRecord r;
    std::size_t vi = 0;
    if (f.size() == 3) {
      r.frame_path = trim(f[0]);
      r.video_id = fs::path(r.frame_path).parent_path().filename().string();
      if (r.video_id.empty()) throw ParseError("frame path has no parent directory: " + r.frame_path, line_no);
      vi = 1;
    } else if (f.size() == 4) {
      r.video_id = trim(f[0]);
      r.frame_path = trim(f[1]);
      vi = 2;
    } else {
      throw ParseError("expected 3 or 4 comma-separated fields, got " + std::to_string(f.size()), line_no);
    }
    if (r.frame_path.empty() || r.video_id.empty()) throw ParseError("empty path or video id", line_no);
    const auto v = parse_double(trim(f[vi]));
    const auto a = parse_double(trim(f[vi + 1]));
    if (!v || !a) throw ParseError("malformed number", line_no);
    if (!(*v >= -1.0 && *v <= 1.0)) throw RangeError("valence outside [-1,1]", line_no);
    if (!(*a >= -1.0 && *a <= 1.0)) throw RangeError("arousal outside [-1,1]", line_no);
    r.valence = *v;
    r.arousal = *a;
    if (!records.empty() && records.back().video_id != r.video_id) {
      closed.insert(records.back().video_id);
      if (closed.count(r.video_id))
        throw ContiguityError("records of video " + r.video_id + " are not contiguous", line_no);
    }
    records.push_back(std::move(r));
  }
  return records;
}

}  // namespace affectlab::annotation
