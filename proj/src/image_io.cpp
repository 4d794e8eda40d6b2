#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>

#include "l2sa/data.hpp"

namespace l2sa::data {

Image read_image(const std::filesystem::path& path) {
  cv::Mat mat;
  try {
    mat = cv::imread(path.string(), cv::IMREAD_UNCHANGED);
  } catch (const cv::Exception& e) {
    throw Error(ErrorKind::Io, "cannot decode image '" + path.string() + "': " + e.what());
  }
  if (mat.empty()) throw Error(ErrorKind::Io, "cannot decode image '" + path.string() + "'");
  if (mat.depth() != CV_8U) throw Error(ErrorKind::Io, "image '" + path.string() + "' is not 8-bit");
  if (mat.rows == 0 || mat.cols == 0) throw Error(ErrorKind::Value, "image '" + path.string() + "' has zero size");
  const int ch = mat.channels();
  if (ch != 1 && ch != 3 && ch != 4) {
    throw Error(ErrorKind::Io, "image '" + path.string() + "' has " + std::to_string(ch) + " channels");
  }
  Image img{std::size_t(mat.rows), std::size_t(mat.cols), ch == 1 ? std::size_t(1) : std::size_t(3), {}};
  img.values.resize(img.height * img.width * img.channels);
  for (int y = 0; y < mat.rows; ++y) {
    const std::uint8_t* row = mat.ptr<std::uint8_t>(y);
    for (int x = 0; x < mat.cols; ++x) {
      Real* dst = &img.values[(std::size_t(y) * img.width + std::size_t(x)) * img.channels];
      if (ch == 1) {
        dst[0] = row[x];
      } else {
        // OpenCV stores BGR(A).
        const std::uint8_t* px = row + x * ch;
        dst[0] = px[2];
        dst[1] = px[1];
        dst[2] = px[0];
      }
    }
  }
  return img;
}

void write_image(const Image& image, const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  const int type = image.channels == 1 ? CV_8UC1 : CV_8UC3;
  cv::Mat mat(int(image.height), int(image.width), type);
  for (std::size_t y = 0; y < image.height; ++y) {
    std::uint8_t* row = mat.ptr<std::uint8_t>(int(y));
    for (std::size_t x = 0; x < image.width; ++x) {
      const Real* src = &image.values[(y * image.width + x) * image.channels];
      auto u8 = [](Real v) { return std::uint8_t(std::clamp<long>(std::lround(double(v)), 0, 255)); };
      if (image.channels == 1) {
        row[x] = u8(src[0]);
      } else {
        row[x * 3 + 0] = u8(src[2]);
        row[x * 3 + 1] = u8(src[1]);
        row[x * 3 + 2] = u8(src[0]);
      }
    }
  }
  if (!cv::imwrite(path.string(), mat)) throw Error(ErrorKind::Io, "cannot write image '" + path.string() + "'");
}

}  // namespace l2sa::data
