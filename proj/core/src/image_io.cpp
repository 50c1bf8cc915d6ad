#include "diffeocan/image_io.hpp"

#include <cmath>
#include <cstdint>
#include <fstream>
#include <limits>
#include <vector>

#include "diffeocan/common.hpp"

namespace diffeocan {

namespace {

// Reads one whitespace-delimited header token, skipping '#' comment lines.
std::string next_token(std::istream& in) {
  std::string tok;
  int c = in.get();
  while (c != EOF) {
    if (c == '#') {
      while (c != EOF && c != '\n') c = in.get();
    } else if (!std::isspace(c)) {
      break;
    }
    c = in.get();
  }
  while (c != EOF && !std::isspace(c)) {
    tok.push_back(static_cast<char>(c));
    c = in.get();
  }
  return tok;
}

int parse_dim(const std::string& tok, const char* what) {
  try {
    const int v = std::stoi(tok);
    if (v <= 0) throw std::out_of_range("non-positive");
    return v;
  } catch (const std::exception&) {
    throw ParseError(std::string("invalid ") + what + " '" + tok + "'");
  }
}

void read_pfm_plane(std::istream& in, const std::string& path, int& h, int& w,
                    std::vector<float>& out) {
  const std::string magic = next_token(in);
  if (magic != "Pf") {
    throw ParseError(path + ": expected grayscale PFM magic 'Pf', got '" + magic + "'");
  }
  w = parse_dim(next_token(in), "PFM width");
  h = parse_dim(next_token(in), "PFM height");
  const std::string scale_tok = next_token(in);
  float scale = 0.0f;
  try {
    scale = std::stof(scale_tok);
  } catch (const std::exception&) {
    throw ParseError(path + ": invalid PFM scale '" + scale_tok + "'");
  }
  if (scale >= 0.0f) {
    throw ParseError(path + ": only little-endian PFM (negative scale) is supported");
  }
  out.assign(static_cast<std::size_t>(h) * w, 0.0f);
  // Rows are stored bottom-up.
  for (int i = h - 1; i >= 0; --i) {
    in.read(reinterpret_cast<char*>(out.data() + static_cast<std::size_t>(i) * w),
            static_cast<std::streamsize>(w) * 4);
    if (!in) throw ParseError(path + ": truncated PFM raster");
  }
}

void write_pfm_plane(std::ostream& out, int h, int w, const std::vector<float>& data) {
  out << "Pf\n" << w << " " << h << "\n-1.0\n";
  for (int i = h - 1; i >= 0; --i) {
    out.write(reinterpret_cast<const char*>(data.data() + static_cast<std::size_t>(i) * w),
              static_cast<std::streamsize>(w) * 4);
  }
}

void read_two_planes(const std::string& path, int& h, int& w, std::vector<float>& x,
                     std::vector<float>& y) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError(path + ": cannot open");
  int hx = 0, wx = 0, hy = 0, wy = 0;
  read_pfm_plane(in, path, hx, wx, x);
  read_pfm_plane(in, path, hy, wy, y);
  if (hx != hy || wx != wy) {
    throw ParseError(path + ": x and y planes have different shapes");
  }
  h = hx;
  w = wx;
}

void write_two_planes(const std::string& path, int h, int w, const std::vector<float>& x,
                      const std::vector<float>& y) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ParseError(path + ": cannot open for writing");
  write_pfm_plane(out, h, w, x);
  write_pfm_plane(out, h, w, y);
  if (!out) throw ParseError(path + ": write failed");
}

}  // namespace

Image read_pgm(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError(path + ": cannot open");
  const std::string magic = next_token(in);
  if (magic != "P5") {
    throw ParseError(path + ": expected PGM magic 'P5', got '" + magic + "'");
  }
  const int w = parse_dim(next_token(in), "PGM width");
  const int h = parse_dim(next_token(in), "PGM height");
  const int maxval = parse_dim(next_token(in), "PGM maxval");
  if (maxval != 255) {
    throw ParseError(path + ": only maxval 255 is supported, got " + std::to_string(maxval));
  }
  std::vector<std::uint8_t> raw(static_cast<std::size_t>(h) * w);
  in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
  if (!in) throw ParseError(path + ": truncated pixel data");
  Image img(h, w);
  for (std::size_t k = 0; k < raw.size(); ++k) {
    img.data[k] = static_cast<float>(raw[k]) / 255.0f;
  }
  return img;
}

void write_pgm(const std::string& path, const Image& img) {
  if (img.empty()) throw std::invalid_argument("write_pgm: empty image");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ParseError(path + ": cannot open for writing");
  out << "P5\n" << img.width << " " << img.height << "\n255\n";
  std::vector<std::uint8_t> raw(img.size());
  for (std::size_t k = 0; k < img.size(); ++k) {
    const float v = std::min(1.0f, std::max(0.0f, img.data[k]));
    raw[k] = static_cast<std::uint8_t>(std::lround(v * 255.0f));
  }
  out.write(reinterpret_cast<const char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
  if (!out) throw ParseError(path + ": write failed");
}

void write_pgm(const std::string& path, const Mask& mask) {
  write_pgm(path, mask_to_image(mask));
}

DeformationMap read_map_pfm(const std::string& path) {
  DeformationMap m;
  read_two_planes(path, m.height, m.width, m.x, m.y);
  return m;
}

void write_map_pfm(const std::string& path, const DeformationMap& map) {
  if (map.size() == 0) throw std::invalid_argument("write_map_pfm: empty map");
  write_two_planes(path, map.height, map.width, map.x, map.y);
}

VectorField read_field_pfm(const std::string& path) {
  VectorField f;
  read_two_planes(path, f.height, f.width, f.x, f.y);
  return f;
}

void write_field_pfm(const std::string& path, const VectorField& field) {
  if (field.size() == 0) throw std::invalid_argument("write_field_pfm: empty field");
  write_two_planes(path, field.height, field.width, field.x, field.y);
}

}  // namespace diffeocan
