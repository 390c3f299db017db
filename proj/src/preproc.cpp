#include "affectlab/preproc.hpp"

#include <cmath>
#include <cstdio>

#include "affectlab/error.hpp"
#include "text_util.hpp"

namespace affectlab::preproc {

using detail::parse_double;
using detail::split;
using detail::trim;

StatsAccumulator::StatsAccumulator(bool channelwise, std::size_t channels)
    : channelwise_(channelwise), moments_(channelwise ? channels : 1) {}

void StatsAccumulator::add(double value, std::size_t channel) {
  Moments& m = moments_[channelwise_ ? channel : 0];
  ++m.count;
  const double delta = value - m.mean;
  m.mean += delta / static_cast<double>(m.count);
  m.m2 += delta * (value - m.mean);
}

void StatsAccumulator::add(const Image& image) {
  for (std::size_t i = 0; i < image.pixels.size(); ++i) add(image.pixels[i], i % image.channels);
}

void StatsAccumulator::merge_into(Moments& into, const Moments& from) {
  if (from.count == 0) return;
  if (into.count == 0) {
    into = from;
    return;
  }
  const double na = static_cast<double>(into.count), nb = static_cast<double>(from.count);
  const double n = na + nb;
  const double delta = from.mean - into.mean;
  into.mean += delta * nb / n;
  into.m2 += from.m2 + delta * delta * na * nb / n;
  into.count += from.count;
}

void StatsAccumulator::merge(const StatsAccumulator& other) {
  if (other.channelwise_ != channelwise_ || other.moments_.size() != moments_.size())
    throw UsageError("cannot merge global and per-channel statistics");
  for (std::size_t i = 0; i < moments_.size(); ++i) merge_into(moments_[i], other.moments_[i]);
}

DatasetStats StatsAccumulator::finish() const {
  DatasetStats s;
  for (const auto& m : moments_) {
    if (m.count == 0) throw UsageError("statistics over zero pixels");
    s.mean.push_back(m.mean);
    s.std.push_back(std::sqrt(std::max(0.0, m.m2 / static_cast<double>(m.count))));
    s.count = channelwise_ ? std::max(s.count, m.count) : m.count;
  }
  return s;
}

double normalize_value(double v) { return (v - 128.0) / 128.0; }

Image normalize_pixels(const Image& image) {
  Image out = image;
  for (double& v : out.pixels) v = normalize_value(v);
  return out;
}

DatasetStats compute_stats(std::span<const Image> images, bool channelwise) {
  if (images.empty()) throw UsageError("compute_stats needs at least one image");
  StatsAccumulator acc(channelwise, images.front().channels);
  for (const auto& im : images) acc.add(im);
  return acc.finish();
}

Image mean_subtract(const Image& image, const DatasetStats& stats) {
  Image out = image;
  for (std::size_t i = 0; i < out.pixels.size(); ++i) out.pixels[i] -= stats.mean_of(i % out.channels);
  return out;
}

Image whiten(const Image& image, const DatasetStats& stats) {
  for (double s : stats.std)
    if (!(s > kMinStd)) throw ZeroStd("whiten: standard deviation " + std::to_string(s) + " is not above 1e-6");
  Image out = image;
  for (std::size_t i = 0; i < out.pixels.size(); ++i) {
    const std::size_t c = i % out.channels;
    out.pixels[i] = (out.pixels[i] - stats.mean_of(c)) / stats.std_of(c);
  }
  return out;
}

std::string serialize_stats(const DatasetStats& stats) {
  auto join = [](const std::vector<double>& v) {
    std::string s;
    char buf[40];
    for (std::size_t i = 0; i < v.size(); ++i) {
      std::snprintf(buf, sizeof buf, "%.17g", v[i]);
      if (i) s += ",";
      s += buf;
    }
    return s;
  };
  return "mean=" + join(stats.mean) + "\nstd=" + join(stats.std) + "\ncount=" + std::to_string(stats.count) + "\n";
}

DatasetStats parse_stats(std::string_view text) {
  DatasetStats s;
  bool have_count = false;
  std::size_t line_no = 0;
  auto parse_list = [&](std::string_view v) {
    std::vector<double> out;
    for (auto f : split(v, ',')) {
      const auto d = parse_double(trim(f));
      if (!d) throw ParseError("malformed number in stats file", line_no);
      out.push_back(*d);
    }
    return out;
  };
  for (auto line : split(text, '\n')) {
    ++line_no;
    line = trim(line);
    if (line.empty() || line.front() == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) throw ParseError("expected key=value", line_no);
    const auto key = trim(line.substr(0, eq));
    const auto value = trim(line.substr(eq + 1));
    if (key == "mean") {
      s.mean = parse_list(value);
    } else if (key == "std") {
      s.std = parse_list(value);
    } else if (key == "count") {
      const auto c = detail::parse_int(value);
      if (!c || *c <= 0) throw ParseError("count must be a positive integer", line_no);
      s.count = static_cast<std::uint64_t>(*c);
      have_count = true;
    } else {
      throw ParseError("unknown stats key '" + std::string(key) + "'", line_no);
    }
  }
  if (s.mean.empty() || s.mean.size() != s.std.size() || !have_count || (s.mean.size() != 1 && s.mean.size() != 3))
    throw ParseError("stats file needs mean, std (1 or 3 values each) and count");
  for (double v : s.std)
    if (v < 0) throw ParseError("negative std in stats file");
  return s;
}

void write_stats(const std::filesystem::path& path, const DatasetStats& stats) {
  detail::write_file_atomic(path, serialize_stats(stats));
}

DatasetStats read_stats(const std::filesystem::path& path) { return parse_stats(detail::read_file(path)); }

Similarity Similarity::inverse() const {
  const double det = a * a + b * b;
  Similarity inv{a / det, -b / det, 0.0, 0.0};
  // src = inv_A * (dst - t)
  const Point t = inv.apply({tx, ty});
  inv.tx = -t.x;
  inv.ty = -t.y;
  return inv;
}

Similarity align_transform(const AlignSpec& spec) {
  const double sx = spec.right_eye.x - spec.left_eye.x, sy = spec.right_eye.y - spec.left_eye.y;
  if (std::hypot(sx, sy) < 1e-9) throw UsageError("crop_align: eye points coincide");
  const double size = static_cast<double>(spec.out_size);
  const Point dl{spec.target_left.x * size, spec.target_left.y * size};
  const Point dr{spec.target_right.x * size, spec.target_right.y * size};
  const double dx = dr.x - dl.x, dy = dr.y - dl.y;
  // (a + ib) = (dx + i dy) / (sx + i sy)
  const double norm = sx * sx + sy * sy;
  Similarity s;
  s.a = (dx * sx + dy * sy) / norm;
  s.b = (dy * sx - dx * sy) / norm;
  s.tx = dl.x - (s.a * spec.left_eye.x - s.b * spec.left_eye.y);
  s.ty = dl.y - (s.b * spec.left_eye.x + s.a * spec.left_eye.y);
  return s;
}

Image crop_align(const Image& image, const AlignSpec& spec) {
  if (spec.out_size < 8) throw UsageError("crop_align: out_size must be at least 8");
  const Similarity inv = align_transform(spec).inverse();
  Image out(spec.out_size, spec.out_size, image.channels);
  const long h = static_cast<long>(image.height), w = static_cast<long>(image.width);
  for (std::size_t y = 0; y < spec.out_size; ++y) {
    for (std::size_t x = 0; x < spec.out_size; ++x) {
      const Point src = inv.apply({static_cast<double>(x), static_cast<double>(y)});
      const double fx = std::floor(src.x), fy = std::floor(src.y);
      const double wx = src.x - fx, wy = src.y - fy;
      const long x0 = static_cast<long>(fx), y0 = static_cast<long>(fy);
      for (std::size_t c = 0; c < image.channels; ++c) {
        auto px = [&](long yy, long xx) {
          if (yy < 0 || xx < 0 || yy >= h || xx >= w) return 0.0;
          return image.at(static_cast<std::size_t>(yy), static_cast<std::size_t>(xx), c);
        };
        // Skip zero-weight taps so exact grid hits never read past the border.
        double v = 0.0;
        if (wx < 1.0 && wy < 1.0) v += (1 - wx) * (1 - wy) * px(y0, x0);
        if (wx > 0.0 && wy < 1.0) v += wx * (1 - wy) * px(y0, x0 + 1);
        if (wx < 1.0 && wy > 0.0) v += (1 - wx) * wy * px(y0 + 1, x0);
        if (wx > 0.0 && wy > 0.0) v += wx * wy * px(y0 + 1, x0 + 1);
        out.at(y, x, c) = v;
      }
    }
  }
  return out;
}

LandmarkTable parse_landmarks(std::string_view text) {
  LandmarkTable table;
  std::size_t line_no = 0;
  for (auto line : split(text, '\n')) {
    ++line_no;
    line = trim(line);
    if (line.empty()) continue;
    const auto f = split(line, ',');
    if (f.size() != 5) throw ParseError("expected frame_path,lx,ly,rx,ry", line_no);
    double v[4];
    for (int i = 0; i < 4; ++i) {
      const auto d = parse_double(trim(f[i + 1]));
      if (!d) throw ParseError("malformed coordinate", line_no);
      v[i] = *d;
    }
    table[std::string(trim(f[0]))] = {{v[0], v[1]}, {v[2], v[3]}};
  }
  return table;
}

LandmarkTable read_landmarks(const std::filesystem::path& path) { return parse_landmarks(detail::read_file(path)); }

PreprocChain PreprocChain::parse(std::string_view list) {
  PreprocChain chain;
  chain.steps.clear();
  for (auto item : split(list, ',')) {
    item = trim(item);
    if (item.empty()) continue;
    if (item == "crop_align") chain.steps.push_back(Step::crop_align);
    else if (item == "normalize") chain.steps.push_back(Step::normalize);
    else if (item == "mean_subtract") chain.steps.push_back(Step::mean_subtract);
    else if (item == "whiten") chain.steps.push_back(Step::whiten);
    else throw UsageError("unknown preprocessing step '" + std::string(item) + "'");
  }
  chain.validate();
  return chain;
}

std::string PreprocChain::to_string() const {
  std::string s;
  for (Step st : steps) {
    if (!s.empty()) s += ",";
    switch (st) {
      case Step::crop_align: s += "crop_align"; break;
      case Step::normalize: s += "normalize"; break;
      case Step::mean_subtract: s += "mean_subtract"; break;
      case Step::whiten: s += "whiten"; break;
    }
  }
  return s;
}

void PreprocChain::validate() const {
  bool normalized = false;
  for (std::size_t i = 0; i < steps.size(); ++i) {
    if (steps[i] == Step::crop_align && i != 0) throw UsageError("crop_align must be the first preprocessing step");
    if ((steps[i] == Step::mean_subtract || steps[i] == Step::whiten) && normalized)
      throw UsageError("mean_subtract/whiten use 0..255 statistics and cannot follow normalize");
    normalized |= steps[i] == Step::normalize;
  }
}

Image PreprocChain::apply(const Image& decoded, const std::string& frame_path, std::size_t size) const {
  Image img = decoded;
  std::size_t i = 0;
  if (!steps.empty() && steps.front() == Step::crop_align) {
    if (!landmarks) throw UsageError("crop_align needs a landmarks table");
    const auto it = landmarks->find(frame_path);
    if (it == landmarks->end()) throw IOError("no landmarks for frame " + frame_path);
    AlignSpec spec;
    spec.left_eye = it->second.left;
    spec.right_eye = it->second.right;
    spec.out_size = size;
    img = crop_align(img, spec);
    i = 1;
  }
  img = resize_image(img, size, size);
  for (; i < steps.size(); ++i) {
    switch (steps[i]) {
      case Step::crop_align: break;
      case Step::normalize: img = normalize_pixels(img); break;
      case Step::mean_subtract:
        if (!stats) throw UsageError("mean_subtract needs dataset statistics");
        img = mean_subtract(img, *stats);
        break;
      case Step::whiten:
        if (!stats) throw UsageError("whiten needs dataset statistics");
        img = whiten(img, *stats);
        break;
    }
  }
  return img;
}

}  // namespace affectlab::preproc
