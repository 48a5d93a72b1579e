#include "refldepth/image_io.hpp"

#include <cmath>
#include <cstdint>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <vector>

namespace refldepth::io {

namespace {

[[noreturn]] void fail(const std::filesystem::path& path,
                       const std::string& what) {
  throw std::runtime_error(path.string() + ": " + what);
}

std::ofstream open_out(const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(path, "cannot open for writing");
  return out;
}

std::ifstream open_in(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(path, "cannot open for reading");
  return in;
}

std::uint8_t to_byte(float v) {
  const float c = std::min(std::max(v, 0.0f), 1.0f);
  return static_cast<std::uint8_t>(std::lround(c * 255.0f));
}

// Reads one whitespace-delimited token, skipping '#' comments.
std::string next_token(std::istream& in) {
  std::string tok;
  char c;
  while (in.get(c)) {
    if (c == '#') {
      while (in.get(c) && c != '\n') {
      }
      continue;
    }
    if (std::isspace(static_cast<unsigned char>(c))) {
      if (!tok.empty()) return tok;
      continue;
    }
    tok.push_back(c);
  }
  return tok;
}

}  // namespace

void write_ppm(const std::filesystem::path& path, const Tensor& image) {
  if (image.channels() != 3) fail(path, "PPM expects 3 channels");
  auto out = open_out(path);
  out << "P6\n" << image.width() << " " << image.height() << "\n255\n";
  std::vector<std::uint8_t> row(static_cast<std::size_t>(image.width()) * 3);
  for (int y = 0; y < image.height(); ++y) {
    for (int x = 0; x < image.width(); ++x) {
      for (int ch = 0; ch < 3; ++ch) {
        row[static_cast<std::size_t>(x) * 3 + ch] = to_byte(image.at(y, x, ch));
      }
    }
    out.write(reinterpret_cast<const char*>(row.data()),
              static_cast<std::streamsize>(row.size()));
  }
  if (!out) fail(path, "write failed");
}

Tensor read_ppm(const std::filesystem::path& path) {
  auto in = open_in(path);
  if (next_token(in) != "P6") fail(path, "not a binary PPM");
  const int w = std::stoi(next_token(in));
  const int h = std::stoi(next_token(in));
  const int maxval = std::stoi(next_token(in));
  if (maxval != 255) fail(path, "only maxval 255 supported");
  Tensor image(h, w, 3);
  std::vector<std::uint8_t> row(static_cast<std::size_t>(w) * 3);
  for (int y = 0; y < h; ++y) {
    in.read(reinterpret_cast<char*>(row.data()),
            static_cast<std::streamsize>(row.size()));
    if (!in) fail(path, "truncated pixel data");
    for (int x = 0; x < w; ++x) {
      for (int ch = 0; ch < 3; ++ch) {
        image.at(y, x, ch) =
            static_cast<float>(row[static_cast<std::size_t>(x) * 3 + ch]) /
            255.0f;
      }
    }
  }
  return image;
}

void write_pgm(const std::filesystem::path& path, const Tensor& mask) {
  if (mask.channels() != 1) fail(path, "PGM expects 1 channel");
  auto out = open_out(path);
  out << "P5\n" << mask.width() << " " << mask.height() << "\n255\n";
  std::vector<std::uint8_t> row(static_cast<std::size_t>(mask.width()));
  for (int y = 0; y < mask.height(); ++y) {
    for (int x = 0; x < mask.width(); ++x) {
      row[static_cast<std::size_t>(x)] = mask.at(y, x) != 0.0f ? 255 : 0;
    }
    out.write(reinterpret_cast<const char*>(row.data()),
              static_cast<std::streamsize>(row.size()));
  }
  if (!out) fail(path, "write failed");
}

Tensor read_pgm(const std::filesystem::path& path) {
  auto in = open_in(path);
  if (next_token(in) != "P5") fail(path, "not a binary PGM");
  const int w = std::stoi(next_token(in));
  const int h = std::stoi(next_token(in));
  const int maxval = std::stoi(next_token(in));
  if (maxval != 255) fail(path, "only maxval 255 supported");
  Tensor mask(h, w, 1);
  std::vector<std::uint8_t> row(static_cast<std::size_t>(w));
  for (int y = 0; y < h; ++y) {
    in.read(reinterpret_cast<char*>(row.data()),
            static_cast<std::streamsize>(row.size()));
    if (!in) fail(path, "truncated pixel data");
    for (int x = 0; x < w; ++x) {
      mask.at(y, x) = row[static_cast<std::size_t>(x)] >= 128 ? 1.0f : 0.0f;
    }
  }
  return mask;
}

void write_pfm(const std::filesystem::path& path, const Tensor& map) {
  if (map.channels() != 1) fail(path, "PFM writer expects 1 channel");
  auto out = open_out(path);
  out << "Pf\n" << map.width() << " " << map.height() << "\n-1.0\n";
  // Rows bottom-to-top per the format.
  for (int y = map.height() - 1; y >= 0; --y) {
    out.write(reinterpret_cast<const char*>(map.data() +
                                            static_cast<std::size_t>(y) *
                                                map.width()),
              static_cast<std::streamsize>(map.width() * sizeof(float)));
  }
  if (!out) fail(path, "write failed");
}

Tensor read_pfm(const std::filesystem::path& path) {
  auto in = open_in(path);
  if (next_token(in) != "Pf") fail(path, "not a grayscale PFM");
  const int w = std::stoi(next_token(in));
  const int h = std::stoi(next_token(in));
  const double scale = std::stod(next_token(in));
  if (scale >= 0.0) fail(path, "big-endian PFM not supported");
  Tensor map(h, w, 1);
  for (int y = h - 1; y >= 0; --y) {
    in.read(reinterpret_cast<char*>(map.data() +
                                    static_cast<std::size_t>(y) * w),
            static_cast<std::streamsize>(w * sizeof(float)));
    if (!in) fail(path, "truncated float data");
  }
  return map;
}

std::string read_text_file(const std::filesystem::path& path) {
  auto in = open_in(path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text_file(const std::filesystem::path& path,
                     const std::string& contents) {
  auto out = open_out(path);
  out << contents;
  if (!out) fail(path, "write failed");
}

}  // namespace refldepth::io
