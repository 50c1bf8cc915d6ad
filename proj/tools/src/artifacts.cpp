#include "artifacts.hpp"

#include <filesystem>
#include <fstream>
#include <stdexcept>

#include "diffeocan/common.hpp"

namespace diffeocan::artifacts {

void ensure_dir(const std::string& path) {
  std::error_code ec;
  std::filesystem::create_directories(path, ec);
  if (ec) throw ParseError(path + ": cannot create directory (" + ec.message() + ")");
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ParseError(path + ": cannot open for writing");
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  if (!out) throw ParseError(path + ": write failed");
}

Image panel(const std::vector<Image>& images, float separator) {
  if (images.empty()) throw std::invalid_argument("panel: no images");
  const int h = images.front().height;
  const int w = images.front().width;
  for (const Image& img : images) {
    if (img.height != h || img.width != w) {
      throw std::invalid_argument("panel: images must share one shape");
    }
  }
  const int n = static_cast<int>(images.size());
  const int sep = 2;
  Image out(h, n * w + (n - 1) * sep, separator);
  for (int k = 0; k < n; ++k) {
    const int x0 = k * (w + sep);
    for (int i = 0; i < h; ++i) {
      for (int j = 0; j < w; ++j) out.at(i, x0 + j) = images[static_cast<std::size_t>(k)].at(i, j);
    }
  }
  return out;
}

}  // namespace diffeocan::artifacts
