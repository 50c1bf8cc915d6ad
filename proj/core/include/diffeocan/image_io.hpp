#pragma once

#include <string>

#include "diffeocan/image.hpp"

namespace diffeocan {

// Binary PGM (P5, maxval 255).  Intensities map linearly between [0, 1] and
// 0..255; values outside [0, 1] are clamped on write.
Image read_pgm(const std::string& path);
void write_pgm(const std::string& path, const Image& img);
void write_pgm(const std::string& path, const Mask& mask);

// Deformation maps and vector fields travel as two concatenated grayscale
// PFM rasters (x plane first, then y), scale -1.0, little-endian floats,
// rows stored bottom-up as the format prescribes.
DeformationMap read_map_pfm(const std::string& path);
void write_map_pfm(const std::string& path, const DeformationMap& map);
VectorField read_field_pfm(const std::string& path);
void write_field_pfm(const std::string& path, const VectorField& field);

}  // namespace diffeocan
