#include <doctest.h>

#include <cmath>
#include <random>

#include "affectlab/dataio.hpp"
#include "affectlab/error.hpp"
#include "affectlab/preproc.hpp"
#include "fixtures.hpp"
#include "oracles.hpp"

using namespace affectlab;
using namespace affectlab::preproc;

namespace {

Image random_image(std::mt19937_64& rng, std::size_t h, std::size_t w, double lo = 0, double hi = 255) {
  std::uniform_real_distribution<double> u(lo, hi);
  Image img(h, w, 3);
  for (auto& p : img.pixels) p = std::round(u(rng));
  return img;
}

// Gaussian blobs: left eye in red, right eye in green.
Image eye_blobs(std::size_t h, std::size_t w, Point l, Point r, double sigma) {
  Image img(h, w, 3);
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x) {
      auto g = [&](Point p) {
        const double dx = x - p.x, dy = y - p.y;
        return 200.0 * std::exp(-(dx * dx + dy * dy) / (2 * sigma * sigma));
      };
      img.at(y, x, 0) = g(l);
      img.at(y, x, 1) = g(r);
    }
  return img;
}

Point centroid(const Image& img, std::size_t c) {
  double sx = 0, sy = 0, s = 0;
  for (std::size_t y = 0; y < img.height; ++y)
    for (std::size_t x = 0; x < img.width; ++x) {
      const double v = img.at(y, x, c);
      sx += v * x;
      sy += v * y;
      s += v;
    }
  return {sx / s, sy / s};
}

}  // namespace

TEST_CASE("normalize pixels") {
  Image img(1, 1, 3);
  img.pixels = {0, 128, 255};
  const auto out = normalize_pixels(img);
  CHECK(out.pixels == std::vector<double>{-1.0, 0.0, 0.9921875});
  CHECK(normalize_value(128) == 0.0);
}

TEST_CASE("mean subtraction and whitening examples") {
  DatasetStats s{{100}, {50}, 10};
  Image img(1, 1, 3, 228);
  CHECK(mean_subtract(img, s).pixels[0] == 128);
  CHECK(whiten(img, s).pixels[0] == doctest::Approx(128.0 / 50.0));
  CHECK_THROWS_AS(whiten(img, DatasetStats{{100}, {0.0}, 10}), ZeroStd);

  DatasetStats ch{{10, 20, 30}, {1, 2, 4}, 5};
  Image p(1, 1, 3);
  p.pixels = {11, 22, 34};
  CHECK(whiten(p, ch).pixels == std::vector<double>{1, 1, 1});
}

TEST_CASE("streaming stats equal a two-pass oracle") {
  std::mt19937_64 rng(5);
  std::vector<Image> images;
  for (int i = 0; i < 20; ++i) images.push_back(random_image(rng, 40, 30, 30, 220));

  std::vector<double> all, per[3];
  for (const auto& im : images)
    for (std::size_t k = 0; k < im.pixels.size(); ++k) {
      all.push_back(im.pixels[k]);
      per[k % 3].push_back(im.pixels[k]);
    }
  const auto g = compute_stats(images, false);
  CHECK(g.count == all.size());
  CHECK(oracles::rel(g.mean[0], static_cast<double>(oracles::mean(all))) < 1e-9);
  CHECK(oracles::rel(g.std[0], std::sqrt(static_cast<double>(oracles::var(all)))) < 1e-9);

  const auto c = compute_stats(images, true);
  REQUIRE(c.channelwise());
  for (int ch = 0; ch < 3; ++ch) {
    CHECK(oracles::rel(c.mean[ch], static_cast<double>(oracles::mean(per[ch]))) < 1e-9);
    CHECK(oracles::rel(c.std[ch], std::sqrt(static_cast<double>(oracles::var(per[ch])))) < 1e-9);
  }

  // Partial accumulators merge to the same result.
  StatsAccumulator a(false), b(false), whole(false);
  for (std::size_t i = 0; i < images.size(); ++i) {
    (i < 7 ? a : b).add(images[i]);
    whole.add(images[i]);
  }
  a.merge(b);
  const auto m = a.finish(), w = whole.finish();
  CHECK(m.count == w.count);
  CHECK(oracles::rel(m.mean[0], w.mean[0]) < 1e-12);
  CHECK(oracles::rel(m.std[0], w.std[0]) < 1e-9);
}

TEST_CASE("single image stats on a million pixels") {
  std::mt19937_64 rng(6);
  std::vector<Image> one{random_image(rng, 500, 666)};
  const auto s = compute_stats(one, false);
  CHECK(s.count == 999000);
  CHECK(oracles::rel(s.mean[0], static_cast<double>(oracles::mean(one[0].pixels))) < 1e-9);
  CHECK(oracles::rel(s.std[0], std::sqrt(static_cast<double>(oracles::var(one[0].pixels)))) < 1e-9);
}

TEST_CASE("whitened training data has zero mean and unit std") {
  std::mt19937_64 rng(8);
  std::vector<Image> images;
  for (int i = 0; i < 10; ++i) images.push_back(random_image(rng, 20, 20, 40, 200));
  for (bool channelwise : {false, true}) {
    const auto s = compute_stats(images, channelwise);
    std::vector<double> out;
    for (const auto& im : images)
      for (double v : whiten(im, s).pixels) out.push_back(v);
    CHECK(std::abs(static_cast<double>(oracles::mean(out))) < 1e-3);
    CHECK(std::abs(std::sqrt(static_cast<double>(oracles::var(out))) - 1.0) < 1e-3);
  }
}

TEST_CASE("stats text round trip") {
  DatasetStats s{{101.25, 99.5, 3.0 / 7.0}, {12.5, 13.0, 1.0 / 3.0}, 123456};
  const auto back = parse_stats(serialize_stats(s));
  CHECK(back.mean == s.mean);
  CHECK(back.std == s.std);
  CHECK(back.count == s.count);
  fixtures::TempDir dir("stats");
  write_stats(dir.path / "s.txt", s);
  CHECK(read_stats(dir.path / "s.txt").std == s.std);
  CHECK_THROWS(parse_stats("mean=1\n"));
}

TEST_CASE("crop_align identity and rotation") {
  std::mt19937_64 rng(2);
  AlignSpec spec;
  spec.out_size = 40;
  spec.left_eye = {12, 16};
  spec.right_eye = {28, 16};
  const Image img = random_image(rng, 40, 40);
  const Image out = crop_align(img, spec);
  for (std::size_t i = 0; i < img.pixels.size(); ++i) CHECK(std::abs(out.pixels[i] - img.pixels[i]) < 1e-6);

  // Eyes stacked vertically: the output must put them on a horizontal line.
  const Image vert = eye_blobs(80, 80, {40, 20}, {40, 50}, 2.0);
  AlignSpec vs;
  vs.out_size = 64;
  vs.left_eye = {40, 20};
  vs.right_eye = {40, 50};
  const Image rot = crop_align(vert, vs);
  const Point l = centroid(rot, 0), r = centroid(rot, 1);
  CHECK(std::abs(l.y - r.y) < 0.5);
  CHECK(r.x - l.x == doctest::Approx(0.4 * 64).epsilon(0.02));

  vs.right_eye = vs.left_eye;
  CHECK_THROWS_AS(crop_align(vert, vs), UsageError);
}

TEST_CASE("crop_align puts eyes on their targets for random specs") {
  std::mt19937_64 rng(31);
  std::uniform_real_distribution<double> pos(25, 95), ang(-1.2, 1.2), dist(24, 50);
  double worst_measured = 0, worst_mapped = 0;
  for (int trial = 0; trial < 100; ++trial) {
    AlignSpec spec;
    spec.out_size = 112;
    spec.left_eye = {pos(rng), pos(rng)};
    // Keep both blobs well inside the source so clipping cannot bias the centroid.
    do {
      const double a = ang(rng), d = dist(rng);
      spec.right_eye = {spec.left_eye.x + d * std::cos(a), spec.left_eye.y + d * std::sin(a)};
    } while (spec.right_eye.x < 20 || spec.right_eye.x > 140 || spec.right_eye.y < 20 || spec.right_eye.y > 140);
    const Point tl{0.3 * 112, 0.4 * 112}, tr{0.7 * 112, 0.4 * 112};

    const auto s = align_transform(spec);
    const Point ml = s.apply(spec.left_eye), mr = s.apply(spec.right_eye);
    worst_mapped = std::max({worst_mapped, std::hypot(ml.x - tl.x, ml.y - tl.y), std::hypot(mr.x - tr.x, mr.y - tr.y)});

    // Measured on pixels: blob centroids in the rendered output.
    const Image src = eye_blobs(160, 160, spec.left_eye, spec.right_eye, 2.0);
    const Image out = crop_align(src, spec);
    const Point cl = centroid(out, 0), cr = centroid(out, 1);
    worst_measured = std::max({worst_measured, std::hypot(cl.x - tl.x, cl.y - tl.y), std::hypot(cr.x - tr.x, cr.y - tr.y)});
  }
  CHECK(worst_mapped < 1e-9);
  CHECK(worst_measured < 0.5);
}

TEST_CASE("crop_align commutes with translation") {
  std::mt19937_64 rng(4);
  const Image base = random_image(rng, 60, 60);
  Image shifted(80, 90, 3);
  const std::size_t oy = 13, ox = 21;
  for (std::size_t y = 0; y < 60; ++y)
    for (std::size_t x = 0; x < 60; ++x)
      for (std::size_t c = 0; c < 3; ++c) shifted.at(y + oy, x + ox, c) = base.at(y, x, c);
  AlignSpec a;
  a.out_size = 32;
  a.left_eye = {22.3, 27.9};
  a.right_eye = {39.6, 25.1};
  AlignSpec b = a;
  b.left_eye = {a.left_eye.x + ox, a.left_eye.y + oy};
  b.right_eye = {a.right_eye.x + ox, a.right_eye.y + oy};
  const Image p = crop_align(base, a), q = crop_align(shifted, b);
  double worst = 0;
  for (std::size_t i = 0; i < p.pixels.size(); ++i) worst = std::max(worst, std::abs(p.pixels[i] - q.pixels[i]));
  CHECK(worst < 1e-3);
}

TEST_CASE("preprocessing chain") {
  CHECK(PreprocChain::parse("crop_align,normalize").to_string() == "crop_align,normalize");
  CHECK_THROWS_AS(PreprocChain::parse("normalize,crop_align"), UsageError);
  CHECK_THROWS_AS(PreprocChain::parse("normalize,whiten"), UsageError);
  CHECK_THROWS_AS(PreprocChain::parse("blur"), UsageError);

  Image img(4, 4, 3, 228);
  auto chain = PreprocChain::parse("mean_subtract");
  CHECK_THROWS_AS(chain.apply(img, "x.png", 4), UsageError);
  chain.stats = DatasetStats{{100}, {1}, 1};
  CHECK(chain.apply(img, "x.png", 4).pixels[0] == 128);

  auto aligned = PreprocChain::parse("crop_align,normalize");
  CHECK_THROWS_AS(aligned.apply(img, "x.png", 8), UsageError);
  const auto table = parse_landmarks("x.png,1,1,3,1\n");
  aligned.landmarks = &table;
  CHECK(aligned.apply(Image(10, 10, 3, 128), "x.png", 8).height == 8);
  CHECK_THROWS_AS(aligned.apply(img, "y.png", 8), IOError);
  CHECK_THROWS_AS(parse_landmarks("x.png,1,2,3\n"), ParseError);
}

TEST_CASE("manifest stats read frames from disk") {
  fixtures::TempDir dir("mstats");
  const auto syn = fixtures::make_synthetic(dir.path, 2, 3, 8, 1);
  const auto s = dataio::compute_manifest_stats(syn.records, syn.frames_root, false, 8, nullptr);
  std::vector<double> all;
  for (const auto& r : syn.records)
    for (double v : load_image(syn.frames_root / r.frame_path).pixels) all.push_back(v);
  CHECK(s.count == all.size());
  CHECK(oracles::rel(s.mean[0], static_cast<double>(oracles::mean(all))) < 1e-9);
}
