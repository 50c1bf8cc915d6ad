#pragma once

#include <string>
#include <vector>

#include "diffeocan/image.hpp"

namespace diffeocan::artifacts {

void ensure_dir(const std::string& path);

void write_text(const std::string& path, const std::string& text);

// Horizontal strip of equally sized images with a thin separator column.
Image panel(const std::vector<Image>& images, float separator = 1.0f);

}  // namespace diffeocan::artifacts
