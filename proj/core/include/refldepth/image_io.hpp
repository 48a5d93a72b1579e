#pragma once

#include <filesystem>
#include <string>

#include "refldepth/tensor.hpp"

namespace refldepth::io {

// 8-bit binary PPM (P6). Values are clamped to [0,1] and rounded.
void write_ppm(const std::filesystem::path& path, const Tensor& image);
Tensor read_ppm(const std::filesystem::path& path);  // -> [0,1] floats

// Binary PGM (P5), 0/255. Nonzero mask values write 255; bytes >= 128 read
// back as 1.
void write_pgm(const std::filesystem::path& path, const Tensor& mask);
Tensor read_pgm(const std::filesystem::path& path);

// Grayscale PFM, little-endian (scale -1.0), rows bottom-to-top.
void write_pfm(const std::filesystem::path& path, const Tensor& map);
Tensor read_pfm(const std::filesystem::path& path);

std::string read_text_file(const std::filesystem::path& path);
void write_text_file(const std::filesystem::path& path,
                     const std::string& contents);

}  // namespace refldepth::io
