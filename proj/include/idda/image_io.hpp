#pragma once

// Raster image loading for MNIST-M patch sources. Netpbm (PGM/PPM, ASCII or
// binary) is read natively; other formats (PNG, JPEG, ...) go through OpenCV
// when the build defines IDDA_WITH_OPENCV.

#include <algorithm>
#include <cctype>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include "idda/tensor.hpp"

#ifdef IDDA_WITH_OPENCV
#include <opencv2/imgcodecs.hpp>
#endif

namespace idda {

/// 8-bit RGB image, interleaved, row-major.
struct RgbImage {
  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<unsigned char> pixels;  // width * height * 3

  float channel(std::size_t row, std::size_t col, std::size_t c) const {
    return static_cast<float>(pixels[(row * width + col) * 3 + c]) / 255.0f;
  }
};

namespace detail {

inline std::string next_pnm_token(std::istream& in) {
  std::string tok;
  int ch;
  while ((ch = in.get()) != EOF) {
    if (ch == '#') {
      while ((ch = in.get()) != EOF && ch != '\n') {
      }
      continue;
    }
    if (std::isspace(ch)) {
      if (!tok.empty()) break;
      continue;
    }
    tok.push_back(static_cast<char>(ch));
  }
  return tok;
}

}  // namespace detail

inline RgbImage read_pnm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open image " + path.string());
  const std::string magic = detail::next_pnm_token(in);
  if (magic != "P2" && magic != "P3" && magic != "P5" && magic != "P6") {
    throw Error("unsupported netpbm type in " + path.string());
  }
  RgbImage img;
  try {
    img.width = std::stoul(detail::next_pnm_token(in));
    img.height = std::stoul(detail::next_pnm_token(in));
  } catch (const std::exception&) {
    throw Error("malformed netpbm header in " + path.string());
  }
  const unsigned long maxval = std::stoul(detail::next_pnm_token(in));
  if (img.width == 0 || img.height == 0 || maxval == 0 || maxval > 255) {
    throw Error("unsupported netpbm geometry in " + path.string());
  }
  const bool color = magic == "P3" || magic == "P6";
  const bool binary = magic == "P5" || magic == "P6";
  const std::size_t n = img.width * img.height * (color ? 3 : 1);
  std::vector<unsigned char> raw(n);
  if (binary) {
    in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(n));
    if (in.gcount() != static_cast<std::streamsize>(n)) throw Error("truncated image " + path.string());
  } else {
    for (auto& v : raw) {
      const std::string tok = detail::next_pnm_token(in);
      if (tok.empty()) throw Error("truncated image " + path.string());
      v = static_cast<unsigned char>(std::stoul(tok));
    }
  }
  img.pixels.resize(img.width * img.height * 3);
  for (std::size_t i = 0; i < img.width * img.height; ++i) {
    for (std::size_t c = 0; c < 3; ++c) {
      const unsigned v = color ? raw[i * 3 + c] : raw[i];
      img.pixels[i * 3 + c] = static_cast<unsigned char>(v * 255 / maxval);
    }
  }
  return img;
}

inline void write_ppm(const std::filesystem::path& path, const RgbImage& img) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write image " + path.string());
  out << "P6\n" << img.width << ' ' << img.height << "\n255\n";
  out.write(reinterpret_cast<const char*>(img.pixels.data()),
            static_cast<std::streamsize>(img.pixels.size()));
}

inline bool is_netpbm(const std::filesystem::path& p) {
  std::string ext = p.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
  return ext == ".ppm" || ext == ".pgm" || ext == ".pnm";
}

inline std::optional<RgbImage> read_image(const std::filesystem::path& path) {
  if (is_netpbm(path)) return read_pnm(path);
#ifdef IDDA_WITH_OPENCV
  cv::Mat m = cv::imread(path.string(), cv::IMREAD_COLOR);
  if (m.empty()) return std::nullopt;
  RgbImage img;
  img.width = static_cast<std::size_t>(m.cols);
  img.height = static_cast<std::size_t>(m.rows);
  img.pixels.resize(img.width * img.height * 3);
  for (int r = 0; r < m.rows; ++r) {
    for (int c = 0; c < m.cols; ++c) {
      const auto& bgr = m.at<cv::Vec3b>(r, c);
      const std::size_t i = (static_cast<std::size_t>(r) * img.width + static_cast<std::size_t>(c)) * 3;
      img.pixels[i] = bgr[2];
      img.pixels[i + 1] = bgr[1];
      img.pixels[i + 2] = bgr[0];
    }
  }
  return img;
#else
  return std::nullopt;
#endif
}

/// Every readable image in a directory, in file-name order.
inline std::vector<RgbImage> load_image_directory(const std::filesystem::path& dir) {
  std::error_code ec;
  if (!std::filesystem::is_directory(dir, ec)) throw Error("patch directory unreadable: " + dir.string());
  std::vector<std::filesystem::path> files;
  for (const auto& entry : std::filesystem::directory_iterator(dir, ec)) {
    if (entry.is_regular_file()) files.push_back(entry.path());
  }
  if (ec) throw Error("patch directory unreadable: " + dir.string());
  std::sort(files.begin(), files.end());
  std::vector<RgbImage> images;
  for (const auto& f : files) {
    if (auto img = read_image(f)) images.push_back(std::move(*img));
  }
  if (images.empty()) throw Error("patch directory contains no readable images: " + dir.string());
  return images;
}

}  // namespace idda
