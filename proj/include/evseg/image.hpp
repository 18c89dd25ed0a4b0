#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "evseg/ops.hpp"

// Minimal binary PGM (P5) and PPM (P6) readers/writers, used for label maps
// and rendered segmentation images.

namespace evseg {

void write_pgm(const ClassMap& map, const std::string& path);
ClassMap read_pgm(const std::string& path);

struct RgbImage {
    int w = 0, h = 0;
    std::vector<std::uint8_t> rgb;  // 3 bytes per pixel, row-major

    RgbImage() = default;
    RgbImage(int ww, int hh) : w(ww), h(hh), rgb(static_cast<std::size_t>(ww) * hh * 3) {}
};

void write_ppm(const RgbImage& img, const std::string& path);

// Class id -> RGB. Fixed defaults for six classes; the ignore label renders
// black.
struct Palette {
    std::vector<std::array<std::uint8_t, 3>> colors;

    static Palette default_palette();
    std::array<std::uint8_t, 3> color(std::uint8_t cls) const;
};

RgbImage render_class_map(const ClassMap& map, const Palette& palette);

}  // namespace evseg
