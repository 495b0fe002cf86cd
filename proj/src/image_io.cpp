#include "wrtsam/image_io.hpp"

#include <cctype>
#include <fstream>
#include <string>

#include "wrtsam/tensor.hpp"

namespace wrtsam::io {

namespace {

// Next whitespace-delimited header token, skipping '#' comments.
std::string header_token(std::istream& in) {
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

int header_int(std::istream& in, const std::filesystem::path& path) {
  const std::string tok = header_token(in);
  try {
    return std::stoi(tok);
  } catch (const std::exception&) {
    throw Error("malformed PGM header in " + path.string());
  }
}

}  // namespace

void write_pgm(const std::filesystem::path& path, const GrayImage& img) {
  if (img.pixels.size() != static_cast<std::size_t>(img.width) * img.height)
    throw Error("write_pgm: pixel count does not match size");
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw Error("cannot write " + path.string());
  f << "P5\n" << img.width << " " << img.height << "\n255\n";
  f.write(reinterpret_cast<const char*>(img.pixels.data()),
          static_cast<std::streamsize>(img.pixels.size()));
  if (!f) throw Error("failed writing " + path.string());
}

GrayImage read_pgm(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw Error("cannot open image " + path.string());
  const std::string magic = header_token(f);
  if (magic != "P5" && magic != "P2")
    throw Error(path.string() + " is not a PGM image");
  GrayImage img;
  img.width = header_int(f, path);
  img.height = header_int(f, path);
  const int maxval = header_int(f, path);
  if (img.width <= 0 || img.height <= 0 || maxval <= 0 || maxval > 255)
    throw Error("unsupported PGM geometry in " + path.string());
  const std::size_t n = static_cast<std::size_t>(img.width) * img.height;
  img.pixels.resize(n);
  if (magic == "P5") {
    f.read(reinterpret_cast<char*>(img.pixels.data()), static_cast<std::streamsize>(n));
    if (static_cast<std::size_t>(f.gcount()) != n)
      throw Error("truncated PGM " + path.string());
  } else {
    for (auto& p : img.pixels) p = static_cast<std::uint8_t>(header_int(f, path));
  }
  if (maxval != 255)
    for (auto& p : img.pixels)
      p = static_cast<std::uint8_t>((p * 255 + maxval / 2) / maxval);
  return img;
}

}  // namespace wrtsam::io
