#include "emorec/pgm.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <string>

#include "emorec/errors.hpp"

namespace emorec {

void write_pgm(const std::filesystem::path& path, std::size_t width, std::size_t height,
               const std::vector<uint8_t>& pixels) {
    if (pixels.size() != width * height)
        throw ValidationError("pgm: pixel count does not match dimensions");
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ValidationError("pgm: cannot open " + path.string());
    out << "P5\n" << width << " " << height << "\n255\n";
    out.write(reinterpret_cast<const char*>(pixels.data()),
              static_cast<std::streamsize>(pixels.size()));
    if (!out) throw ValidationError("pgm: short write to " + path.string());
}

std::vector<uint8_t> to_pgm_bytes(const std::vector<float>& values, std::size_t width,
                                  std::size_t height, std::size_t factor) {
    if (values.size() != width * height)
        throw ValidationError("pgm: value count does not match dimensions");
    std::vector<uint8_t> out(width * factor * height * factor);
    for (std::size_t y = 0; y < height * factor; ++y) {
        for (std::size_t x = 0; x < width * factor; ++x) {
            const float v = values[(y / factor) * width + (x / factor)];
            const float clamped = std::min(1.0f, std::max(0.0f, v));
            out[y * width * factor + x] = static_cast<uint8_t>(std::lround(clamped * 255.0f));
        }
    }
    return out;
}

std::vector<uint8_t> normalize_to_bytes(const std::vector<float>& values) {
    float mx = 0.f;
    for (float v : values) mx = std::max(mx, v);
    std::vector<uint8_t> out(values.size());
    const float scale = mx > 0.f ? 255.0f / mx : 0.f;
    for (std::size_t i = 0; i < values.size(); ++i)
        out[i] = static_cast<uint8_t>(std::lround(std::max(0.0f, values[i]) * scale));
    return out;
}

} // namespace emorec
