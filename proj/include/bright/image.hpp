#pragma once

// 8-bit image files. PPM (P6, maxval 255) and PNG (gray, RGB, with or without
// alpha; alpha is dropped). Pixels are mapped to [0,1] floats, H x W x C.

#include <string>

#include "bright/tinynn.hpp"
#include "bright/trainer.hpp"

namespace bright {

/// Format chosen from the file's magic bytes. Errors: io (unreadable),
/// format (unknown or malformed content).
Tensor3<float> read_image(const std::string& path);

/// Format chosen from the extension (.png, otherwise PPM). Values are clamped
/// to [0,1] and rounded to 8 bits. PPM requires 3 channels.
void write_image(const std::string& path, const Tensor3<float>& image);

/// Every .ppm/.png file in `dir`, sorted by file name.
Dataset load_image_dir(const std::string& dir);

}  // namespace bright
