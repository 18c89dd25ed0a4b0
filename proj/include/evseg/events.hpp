#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "evseg/tensor.hpp"

// Event-camera streams and their voxelization into binary pseudo-frames.
//
// Native binary format "EVT1": 4 magic bytes, an optional u32 record count,
// then little-endian records of (u64 t in microseconds, u16 x, u16 y,
// i8 polarity in {-1,+1}). CSV fallback: one "t,x,y,p" line per event.

namespace evseg {

struct Event {
    std::uint64_t t = 0;  // microseconds
    std::uint16_t x = 0;
    std::uint16_t y = 0;
    std::int8_t p = 1;  // +1 or -1
};

using EventStream = std::vector<Event>;

// Reads EVT1 (by magic) or CSV (anything else). Non-monotonic timestamps
// are stably sorted with a warning on stderr; out-of-range polarity throws.
EventStream parse_event_file(const std::string& path);

EventStream parse_evt1(const std::string& path);
EventStream parse_csv_events(const std::string& path);
void write_evt1(const EventStream& events, const std::string& path);

// Events with start <= t < start + duration, order preserved.
EventStream window_events(const EventStream& stream, std::uint64_t startUs,
                          std::uint64_t durationUs = 50000);

// Binary voxel grid [T, 2, dstH, dstW]: temporal bin floor((t-start)*T/D)
// clamped to T-1, channel 0 for +1 polarity, floor spatial rescale, binary
// OR occupancy. Events outside the source resolution throw.
Tensor voxelize(const EventStream& window, std::uint64_t startUs, std::uint64_t durationUs,
                int srcW, int srcH, int dstW = 64, int dstH = 64, int T = 20);

}  // namespace evseg
