#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

namespace emorec {

// Binary PGM (P5, maxval 255). Header is exactly "P5\n<w> <h>\n255\n".
void write_pgm(const std::filesystem::path& path, std::size_t width, std::size_t height,
               const std::vector<uint8_t>& pixels);

// Map [0,1] values to bytes and nearest-neighbor upsample by `factor`.
std::vector<uint8_t> to_pgm_bytes(const std::vector<float>& values, std::size_t width,
                                  std::size_t height, std::size_t factor = 1);

// Normalize an arbitrary non-negative field to [0,255] (max maps to 255).
std::vector<uint8_t> normalize_to_bytes(const std::vector<float>& values);

} // namespace emorec
