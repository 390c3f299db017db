#pragma once

#include <atomic>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "affectlab/annotation.hpp"
#include "affectlab/image.hpp"

namespace fixtures {

namespace fs = std::filesystem;

// Unique scratch directory, removed on destruction.
struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& tag = "t") {
    static std::atomic<int> counter{0};
    const auto stamp = std::chrono::steady_clock::now().time_since_epoch().count();
    path = fs::temp_directory_path() /
           ("affectlab_" + tag + "_" + std::to_string(stamp) + "_" + std::to_string(counter++));
    fs::create_directories(path);
  }
  ~TempDir() {
    std::error_code ec;
    fs::remove_all(path, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
};

struct Synthetic {
  fs::path frames_root;
  fs::path manifest;
  std::vector<affectlab::annotation::ManifestRecord> records;
};

// Videos whose red channel mean encodes valence and green channel mean encodes
// arousal. Labels drift smoothly over time; blue and per-pixel noise carry nothing.
inline Synthetic make_synthetic(const fs::path& root, std::size_t videos, std::size_t frames, std::size_t size,
                                std::uint64_t seed) {
  Synthetic s;
  s.frames_root = root / "frames";
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> phase(0.0, 6.283185307179586);
  std::uniform_real_distribution<double> period(60.0, 200.0);
  std::normal_distribution<double> noise(0.0, 6.0);
  std::string manifest;
  char name[32];
  char line[160];
  for (std::size_t v = 0; v < videos; ++v) {
    std::snprintf(name, sizeof name, "vid%03zu", v);
    const std::string id = name;
    fs::create_directories(s.frames_root / id);
    const double pv = phase(rng), pa = phase(rng), tv = period(rng), ta = period(rng);
    const double ov = 0.3 * (phase(rng) / 3.14159 - 1.0), oa = 0.3 * (phase(rng) / 3.14159 - 1.0);
    for (std::size_t k = 0; k < frames; ++k) {
      const double t = static_cast<double>(k);
      const double val = std::clamp(ov + 0.6 * std::sin(6.283185307179586 * t / tv + pv), -1.0, 1.0);
      const double aro = std::clamp(oa + 0.6 * std::sin(6.283185307179586 * t / ta + pa), -1.0, 1.0);
      affectlab::Image img(size, size, 3);
      for (std::size_t y = 0; y < size; ++y)
        for (std::size_t x = 0; x < size; ++x) {
          img.at(y, x, 0) = std::clamp(128.0 + 100.0 * val + noise(rng), 0.0, 255.0);
          img.at(y, x, 1) = std::clamp(128.0 + 100.0 * aro + noise(rng), 0.0, 255.0);
          img.at(y, x, 2) = std::clamp(128.0 + 40.0 * noise(rng) / 6.0, 0.0, 255.0);
        }
      std::snprintf(name, sizeof name, "%06zu.png", k + 1);
      const std::string rel = id + "/" + name;
      affectlab::save_image(s.frames_root / rel, img);
      // Labels at 6 decimals, exactly as the manifest stores them.
      std::snprintf(line, sizeof line, "%s,%.6f,%.6f\n", rel.c_str(), val, aro);
      manifest += line;
    }
  }
  s.manifest = root / "manifest.csv";
  {
    std::FILE* f = std::fopen(s.manifest.c_str(), "wb");
    std::fwrite(manifest.data(), 1, manifest.size(), f);
    std::fclose(f);
  }
  s.records = affectlab::annotation::parse_manifest(manifest);
  return s;
}

}  // namespace fixtures
