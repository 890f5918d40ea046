// Binary tensor file format: one-line JSON header {"h":..,"w":..,"c":..}
// followed by h*w*c little-endian 32-bit floats.
#pragma once

#include <string>

#include "m3/token_pyramid.hpp"

namespace m3 {

void write_grid(const std::string& path, const TokenGrid<float>& g);
TokenGrid<float> read_grid(const std::string& path);

}  // namespace m3
