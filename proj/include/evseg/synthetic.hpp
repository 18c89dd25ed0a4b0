#pragma once

#include <cstdint>

#include "evseg/events.hpp"
#include "evseg/ops.hpp"

// Deterministic synthetic labeled event scenes: a handful of moving
// geometric shapes over a background class. Each shape emits events along
// its moving edges (newly covered pixels fire positive, newly uncovered
// negative); the full occupancy fires once at the start so shapes are
// visible, and the label map is the shape occupancy at the window end.

namespace evseg {

struct SynthConfig {
    int width = 64;
    int height = 64;
    int timesteps = 20;
    int numClasses = 4;  // class 0 is background
    int minShapes = 1;
    int maxShapes = 4;
    std::uint64_t durationUs = 50000;
};

struct SynthScene {
    EventStream events;
    ClassMap label;
};

struct PseudoFrame {
    Tensor spikes;  // [T, 2, H, W], binary
    ClassMap label;
};

// Pure function of (seed, config); bit-exact reproducible.
SynthScene generate_synthetic_scene(std::uint64_t seed, const SynthConfig& cfg = {});

// Scene voxelized at the generator's own resolution.
PseudoFrame synthetic_pseudo_frame(std::uint64_t seed, const SynthConfig& cfg = {});

}  // namespace evseg
