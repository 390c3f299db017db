#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "affectlab/annotation.hpp"
#include "affectlab/image.hpp"

namespace affectlab::preproc {

// Pixel statistics in the 0..255 domain; one entry (global) or three (per channel).
struct DatasetStats {
  std::vector<double> mean;
  std::vector<double> std;
  std::uint64_t count = 0;

  bool channelwise() const { return mean.size() > 1; }
  double mean_of(std::size_t channel) const { return mean[channelwise() ? channel : 0]; }
  double std_of(std::size_t channel) const { return std[channelwise() ? channel : 0]; }
};

// Single-pass mean/variance (Welford); partial accumulators merge associatively.
class StatsAccumulator {
public:
  explicit StatsAccumulator(bool channelwise, std::size_t channels = 3);

  void add(const Image& image);
  void add(double value, std::size_t channel);
  void merge(const StatsAccumulator& other);
  DatasetStats finish() const;

private:
  struct Moments {
    std::uint64_t count = 0;
    double mean = 0.0;
    double m2 = 0.0;
  };
  static void merge_into(Moments& into, const Moments& from);

  bool channelwise_;
  std::vector<Moments> moments_;
};

// (v - 128) / 128
Image normalize_pixels(const Image& image);
double normalize_value(double v);

DatasetStats compute_stats(std::span<const Image> images, bool channelwise);

Image mean_subtract(const Image& image, const DatasetStats& stats);

inline constexpr double kMinStd = 1e-6;
// (v - mean) / std; throws ZeroStd when std <= kMinStd.
Image whiten(const Image& image, const DatasetStats& stats);

std::string serialize_stats(const DatasetStats& stats);
DatasetStats parse_stats(std::string_view text);
void write_stats(const std::filesystem::path& path, const DatasetStats& stats);
DatasetStats read_stats(const std::filesystem::path& path);

struct Point {
  double x = 0.0, y = 0.0;
};

struct AlignSpec {
  Point left_eye, right_eye;  // source pixel coordinates
  std::size_t out_size = 112;
  Point target_left{0.3, 0.4}, target_right{0.7, 0.4};  // fractions of out_size
};

// dst = [a -b; b a] * src + t
struct Similarity {
  double a = 1.0, b = 0.0, tx = 0.0, ty = 0.0;

  Point apply(Point p) const { return {a * p.x - b * p.y + tx, b * p.x + a * p.y + ty}; }
  Similarity inverse() const;
};

// Maps the source eye points onto the output targets. Throws on coincident eyes.
Similarity align_transform(const AlignSpec& spec);

// Bilinear sampling through the inverse transform; samples outside the source are 0.
Image crop_align(const Image& image, const AlignSpec& spec);

struct EyeLandmarks {
  Point left, right;
};
using LandmarkTable = std::map<std::string, EyeLandmarks>;

// Sidecar CSV `frame_path,lx,ly,rx,ry`.
LandmarkTable parse_landmarks(std::string_view text);
LandmarkTable read_landmarks(const std::filesystem::path& path);

enum class Step { crop_align, normalize, mean_subtract, whiten };

// Ordered preprocessing applied to decoded 0..255 images. crop_align, if present,
// must come first; mean_subtract/whiten cannot follow normalize.
struct PreprocChain {
  std::vector<Step> steps{Step::normalize};
  std::optional<DatasetStats> stats;
  const LandmarkTable* landmarks = nullptr;

  static PreprocChain parse(std::string_view list);  // e.g. "crop_align,normalize"
  std::string to_string() const;
  void validate() const;

  // Decoded image -> size x size model input. Resizes unless crop_align produced it.
  Image apply(const Image& decoded, const std::string& frame_path, std::size_t size) const;
};

}  // namespace affectlab::preproc
