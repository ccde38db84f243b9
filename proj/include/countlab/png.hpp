#pragma once

#include <string>

#include "countlab/render.hpp"

namespace countlab {

/// 8-bit RGB, non-interlaced PNG. Scanlines use filter type 0 and zlib runs
/// with fixed parameters (level 9, Z_RLE), so equal images give equal bytes.
std::string encode_png(const Image& image);

}  // namespace countlab
