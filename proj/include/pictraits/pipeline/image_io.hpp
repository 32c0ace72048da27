#pragma once

#include "pictraits/imagefeat.hpp"

#include <string>

namespace pictraits::pipeline {

/// Decodes a PNG or JPEG file (sniffed by magic bytes, not extension) into
/// an RgbImage with channels in [0,1]. Gray, palette and alpha variants are
/// expanded to opaque 8-bit RGB. Throws ValidationError on unreadable or
/// unsupported files.
imagefeat::RgbImage read_image(const std::string& path);

/// Writes an 8-bit RGB PNG; channel values are clamped to [0,1] and rounded.
/// Used to build synthetic corpora.
void write_png(const std::string& path, const imagefeat::RgbImage& img);

}  // namespace pictraits::pipeline
