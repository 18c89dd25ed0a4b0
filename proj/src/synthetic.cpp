#include "evseg/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <random>

namespace evseg {

namespace {

struct Shape {
    bool circle = false;
    int cls = 1;
    double halfSize = 4;  // half side for rects, radius for circles
    double x0 = 0, y0 = 0;  // center at window start
    double x1 = 0, y1 = 0;  // center at window end
};

bool covers(const Shape& s, double cx, double cy, int px, int py) {
    const double dx = px + 0.5 - cx, dy = py + 0.5 - cy;
    if (s.circle) return dx * dx + dy * dy <= s.halfSize * s.halfSize;
    return std::abs(dx) <= s.halfSize && std::abs(dy) <= s.halfSize;
}

// occupancy bitmap of one shape at interpolation fraction f
std::vector<std::uint8_t> rasterize(const Shape& s, double f, int w, int h) {
    const double cx = s.x0 + (s.x1 - s.x0) * f;
    const double cy = s.y0 + (s.y1 - s.y0) * f;
    std::vector<std::uint8_t> occ(static_cast<std::size_t>(w) * h, 0);
    const int xlo = std::max(0, static_cast<int>(cx - s.halfSize - 1));
    const int xhi = std::min(w - 1, static_cast<int>(cx + s.halfSize + 1));
    const int ylo = std::max(0, static_cast<int>(cy - s.halfSize - 1));
    const int yhi = std::min(h - 1, static_cast<int>(cy + s.halfSize + 1));
    for (int y = ylo; y <= yhi; ++y)
        for (int x = xlo; x <= xhi; ++x)
            if (covers(s, cx, cy, x, y)) occ[static_cast<std::size_t>(y) * w + x] = 1;
    return occ;
}

}  // namespace

SynthScene generate_synthetic_scene(std::uint64_t seed, const SynthConfig& cfg) {
    if (cfg.numClasses < 2) throw std::invalid_argument("synthetic scenes need >= 2 classes");
    if (cfg.minShapes < 0 || cfg.maxShapes < cfg.minShapes)
        throw std::invalid_argument("bad shape count range");
    std::mt19937_64 rng(seed);
    std::uniform_int_distribution<int> countDist(cfg.minShapes, cfg.maxShapes);
    std::uniform_int_distribution<int> clsDist(1, cfg.numClasses - 1);
    std::uniform_real_distribution<double> sizeDist(3.0, 9.0);
    std::uniform_real_distribution<double> unit(0.0, 1.0);

    const int w = cfg.width, h = cfg.height, T = cfg.timesteps;
    const int n = countDist(rng);
    std::vector<Shape> shapes;
    for (int i = 0; i < n; ++i) {
        Shape s;
        s.circle = unit(rng) < 0.5;
        s.cls = clsDist(rng);
        s.halfSize = sizeDist(rng);
        const double margin = s.halfSize + 1.0;
        auto place = [&](double& x, double& y) {
            x = margin + unit(rng) * (w - 2 * margin);
            y = margin + unit(rng) * (h - 2 * margin);
        };
        place(s.x0, s.y0);
        // displacement of 4..12 px over the window, end kept in bounds
        const double ang = unit(rng) * 2.0 * 3.14159265358979323846;
        const double dist = 4.0 + unit(rng) * 8.0;
        s.x1 = std::clamp(s.x0 + dist * std::cos(ang), margin, w - margin);
        s.y1 = std::clamp(s.y0 + dist * std::sin(ang), margin, h - margin);
        shapes.push_back(s);
    }

    SynthScene scene;
    scene.label = ClassMap(h, w, 0);
    std::vector<std::vector<std::uint8_t>> prev(shapes.size());
    for (int t = 0; t < T; ++t) {
        const double f = T > 1 ? static_cast<double>(t) / (T - 1) : 1.0;
        // mid-bin timestamp so voxelization maps it back to bin t exactly
        const std::uint64_t ts = (2ull * t + 1) * cfg.durationUs / (2ull * T);
        for (std::size_t si = 0; si < shapes.size(); ++si) {
            auto occ = rasterize(shapes[si], f, w, h);
            for (int y = 0; y < h; ++y) {
                for (int x = 0; x < w; ++x) {
                    const std::uint8_t now = occ[static_cast<std::size_t>(y) * w + x];
                    const std::uint8_t was =
                        t == 0 ? 0 : prev[si][static_cast<std::size_t>(y) * w + x];
                    if (now != was)
                        scene.events.push_back({ts, static_cast<std::uint16_t>(x),
                                                static_cast<std::uint16_t>(y),
                                                static_cast<std::int8_t>(now ? 1 : -1)});
                    if (t == T - 1 && now)
                        scene.label.at(y, x) = static_cast<std::uint8_t>(shapes[si].cls);
                }
            }
            prev[si] = std::move(occ);
        }
    }
    return scene;
}

PseudoFrame synthetic_pseudo_frame(std::uint64_t seed, const SynthConfig& cfg) {
    SynthScene scene = generate_synthetic_scene(seed, cfg);
    PseudoFrame frame;
    frame.spikes = voxelize(scene.events, 0, cfg.durationUs, cfg.width, cfg.height, cfg.width,
                            cfg.height, cfg.timesteps);
    frame.label = std::move(scene.label);
    return frame;
}

}  // namespace evseg
