#include "evseg/image.hpp"

#include <fstream>

namespace evseg {

namespace {

int read_pnm_token(std::istream& is) {
    // skips whitespace and '#' comments
    while (true) {
        int c = is.peek();
        if (c == '#') {
            std::string line;
            std::getline(is, line);
        } else if (std::isspace(c)) {
            is.get();
        } else {
            break;
        }
    }
    int v;
    if (!(is >> v)) throw std::runtime_error("malformed PNM header");
    return v;
}

}  // namespace

void write_pgm(const ClassMap& map, const std::string& path) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("cannot open " + path + " for writing");
    os << "P5\n" << map.w << " " << map.h << "\n255\n";
    os.write(reinterpret_cast<const char*>(map.v.data()), static_cast<std::streamsize>(map.v.size()));
    if (!os) throw std::runtime_error("write failed for " + path);
}

ClassMap read_pgm(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("cannot open " + path);
    char p, five;
    is.get(p);
    is.get(five);
    if (p != 'P' || five != '5') throw std::runtime_error(path + ": not a binary PGM (P5)");
    const int w = read_pnm_token(is);
    const int h = read_pnm_token(is);
    const int maxval = read_pnm_token(is);
    if (maxval != 255) throw std::runtime_error(path + ": expected 8-bit PGM");
    is.get();  // single whitespace after maxval
    ClassMap map(h, w);
    if (!is.read(reinterpret_cast<char*>(map.v.data()), static_cast<std::streamsize>(map.v.size())))
        throw std::runtime_error(path + ": truncated PGM payload");
    return map;
}

void write_ppm(const RgbImage& img, const std::string& path) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("cannot open " + path + " for writing");
    os << "P6\n" << img.w << " " << img.h << "\n255\n";
    os.write(reinterpret_cast<const char*>(img.rgb.data()), static_cast<std::streamsize>(img.rgb.size()));
    if (!os) throw std::runtime_error("write failed for " + path);
}

Palette Palette::default_palette() {
    Palette p;
    p.colors = {
        {{64, 64, 64}},    // 0: road
        {{120, 200, 255}}, // 1: background/sky
        {{255, 200, 0}},   // 2: panels
        {{0, 160, 60}},    // 3: tree
        {{255, 0, 80}},    // 4: pedestrian
        {{0, 60, 255}},    // 5: car
    };
    return p;
}

std::array<std::uint8_t, 3> Palette::color(std::uint8_t cls) const {
    if (cls == kIgnoreLabel || cls >= colors.size()) return {0, 0, 0};
    return colors[cls];
}

RgbImage render_class_map(const ClassMap& map, const Palette& palette) {
    RgbImage img(map.w, map.h);
    for (int y = 0; y < map.h; ++y) {
        for (int x = 0; x < map.w; ++x) {
            const auto c = palette.color(map.at(y, x));
            const std::size_t o = (static_cast<std::size_t>(y) * map.w + x) * 3;
            img.rgb[o] = c[0];
            img.rgb[o + 1] = c[1];
            img.rgb[o + 2] = c[2];
        }
    }
    return img;
}

}  // namespace evseg
