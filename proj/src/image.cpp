#include "affectlab/image.hpp"

#include <algorithm>
#include <cmath>
#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "affectlab/error.hpp"

namespace affectlab {

namespace {

cv::Mat to_mat(const Image& image) {
  cv::Mat m(static_cast<int>(image.height), static_cast<int>(image.width), CV_64FC(static_cast<int>(image.channels)));
  std::copy(image.pixels.begin(), image.pixels.end(), m.ptr<double>());
  return m;
}

Image from_mat(const cv::Mat& m) {
  cv::Mat d;
  m.convertTo(d, CV_64F);
  if (!d.isContinuous()) d = d.clone();
  Image out(static_cast<std::size_t>(d.rows), static_cast<std::size_t>(d.cols), static_cast<std::size_t>(d.channels()));
  std::copy(d.ptr<double>(), d.ptr<double>() + out.pixels.size(), out.pixels.begin());
  return out;
}

}  // namespace

Image load_image(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw IOError("image not found: " + path.string());
  cv::Mat bgr = cv::imread(path.string(), cv::IMREAD_COLOR);
  if (bgr.empty()) throw IOError("cannot decode image: " + path.string());
  if (bgr.rows == 0 || bgr.cols == 0) throw IOError("image has zero size: " + path.string());
  cv::Mat rgb;
  cv::cvtColor(bgr, rgb, cv::COLOR_BGR2RGB);
  return from_mat(rgb);
}

void save_image(const std::filesystem::path& path, const Image& image) {
  if (image.channels != 3) throw IOError("save_image expects 3 channels");
  cv::Mat rgb8;
  to_mat(image).convertTo(rgb8, CV_8U);  // rounds and saturates
  cv::Mat bgr;
  cv::cvtColor(rgb8, bgr, cv::COLOR_RGB2BGR);
  if (!cv::imwrite(path.string(), bgr)) throw IOError("cannot write image: " + path.string());
}

Image resize_image(const Image& image, std::size_t height, std::size_t width) {
  if (image.height == height && image.width == width) return image;
  if (height == 0 || width == 0) throw IOError("resize to zero size");
  const bool shrinking = height < image.height && width < image.width;
  cv::Mat out;
  cv::resize(to_mat(image), out, cv::Size(static_cast<int>(width), static_cast<int>(height)), 0, 0,
             shrinking ? cv::INTER_AREA : cv::INTER_LINEAR);
  return from_mat(out);
}

}  // namespace affectlab
