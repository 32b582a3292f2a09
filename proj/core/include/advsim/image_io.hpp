#pragma once

#include <filesystem>

#include "advsim/tensor.hpp"

namespace advsim {

// Binary PPM (P6, maxval 255). Pixels are rounded half up and clamped on write.
void write_ppm(const std::filesystem::path& path, const Image& image);
Image read_ppm(const std::filesystem::path& path);

}  // namespace advsim
