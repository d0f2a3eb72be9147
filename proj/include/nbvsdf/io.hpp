#pragma once

// Image files and parameter checkpoints.

#include "nbvsdf/field.hpp"

#include <filesystem>

namespace nbvsdf {

/// 8-bit PNG with 1 or 3 channels; values are clamped to [0, 1].
void write_png(const std::filesystem::path& path, const Image& image);
/// Reads gray, gray+alpha, RGB or RGBA PNG (alpha dropped) as floats in [0, 1].
Image read_png(const std::filesystem::path& path);

/// Little-endian PFM ("Pf" for 1 channel, "PF" for 3), rows stored bottom-up.
void write_pfm(const std::filesystem::path& path, const Image& image);
Image read_pfm(const std::filesystem::path& path);

struct Checkpoint {
  FieldParams params;
  long iteration = 0;
  double psi = 0.0;
};

/// Layout: 8-byte little-endian header length, JSON header, then every
/// parameter as little-endian float32 in header order.
void save_checkpoint(const std::filesystem::path& path, const FieldParams& params, long iteration,
                     double psi);
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// Writes through a temporary file followed by a rename.
void write_text(const std::filesystem::path& path, const std::string& text);
std::string read_text(const std::filesystem::path& path);

}  // namespace nbvsdf
