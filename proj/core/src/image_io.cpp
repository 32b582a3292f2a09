#include "advsim/image_io.hpp"

#include <cmath>
#include <fstream>
#include <string>
#include <vector>

#include "advsim/error.hpp"

namespace advsim {

void write_ppm(const std::filesystem::path& path, const Image& image) {
  if (image.rank() != 3 || image.dim(2) != 3) throw DimensionError("write_ppm: expected [H,W,3] image");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out << "P6\n" << image.dim(1) << ' ' << image.dim(0) << "\n255\n";
  std::vector<unsigned char> bytes(image.size());
  for (std::size_t i = 0; i < image.size(); ++i) {
    bytes[i] = static_cast<unsigned char>(std::clamp(std::floor(image[i] + 0.5), 0.0, 255.0));
  }
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("failed writing " + path.string());
}

namespace {
// Next header token, skipping whitespace and '#' comments.
std::string token(std::istream& in) {
  std::string tok;
  int c;
  while ((c = in.get()) != EOF) {
    if (c == '#') {
      while ((c = in.get()) != EOF && c != '\n') {
      }
      continue;
    }
    if (std::isspace(c)) {
      if (!tok.empty()) break;
      continue;
    }
    tok.push_back(static_cast<char>(c));
  }
  return tok;
}
}  // namespace

Image read_ppm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  if (token(in) != "P6") throw IoError(path.string() + ": not a binary PPM (P6)");
  std::size_t width = 0, height = 0, maxval = 0;
  try {
    width = std::stoul(token(in));
    height = std::stoul(token(in));
    maxval = std::stoul(token(in));
  } catch (const std::exception&) {
    throw IoError(path.string() + ": malformed PPM header");
  }
  if (maxval != 255 || width == 0 || height == 0) throw IoError(path.string() + ": unsupported PPM header");
  std::vector<unsigned char> bytes(width * height * 3);
  in.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (in.gcount() != static_cast<std::streamsize>(bytes.size())) throw IoError(path.string() + ": truncated pixel data");
  Image image({height, width, 3});
  for (std::size_t i = 0; i < bytes.size(); ++i) image[i] = bytes[i];
  return image;
}

}  // namespace advsim
