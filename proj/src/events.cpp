#include "evseg/events.hpp"

#include <algorithm>
#include <cstring>
#include <fstream>
#include <iostream>
#include <sstream>

namespace evseg {

namespace {

constexpr char kMagic[4] = {'E', 'V', 'T', '1'};
constexpr std::size_t kRecordSize = 8 + 2 + 2 + 1;

void sort_if_needed(EventStream& events) {
    const bool sorted = std::is_sorted(events.begin(), events.end(),
                                       [](const Event& a, const Event& b) { return a.t < b.t; });
    if (!sorted) {
        std::cerr << "warning: event timestamps not monotonic, applying stable sort\n";
        std::stable_sort(events.begin(), events.end(),
                         [](const Event& a, const Event& b) { return a.t < b.t; });
    }
}

}  // namespace

EventStream parse_evt1(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("cannot open event file " + path);
    char magic[4];
    if (!is.read(magic, 4) || std::memcmp(magic, kMagic, 4) != 0)
        throw std::runtime_error("bad magic in event file " + path);
    is.seekg(0, std::ios::end);
    const auto fileSize = static_cast<std::size_t>(is.tellg());
    const std::size_t body = fileSize - 4;
    is.seekg(4);

    std::size_t count;
    if (body % kRecordSize == 0) {
        count = body / kRecordSize;  // no count header
    } else if (body % kRecordSize == 4) {
        std::uint32_t declared;
        is.read(reinterpret_cast<char*>(&declared), 4);
        count = (body - 4) / kRecordSize;
        if (declared != count)
            throw std::runtime_error("event count header disagrees with file size in " + path);
    } else {
        throw std::runtime_error("truncated event file " + path);
    }

    EventStream events;
    events.reserve(count);
    for (std::size_t i = 0; i < count; ++i) {
        Event e;
        is.read(reinterpret_cast<char*>(&e.t), 8);
        is.read(reinterpret_cast<char*>(&e.x), 2);
        is.read(reinterpret_cast<char*>(&e.y), 2);
        is.read(reinterpret_cast<char*>(&e.p), 1);
        if (!is) throw std::runtime_error("truncated event file " + path);
        if (e.p != 1 && e.p != -1)
            throw std::runtime_error("record " + std::to_string(i) + " in " + path +
                                     ": polarity " + std::to_string(int(e.p)) +
                                     " out of range {-1,+1}");
        events.push_back(e);
    }
    sort_if_needed(events);
    return events;
}

EventStream parse_csv_events(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw std::runtime_error("cannot open event file " + path);
    EventStream events;
    std::string line;
    std::size_t lineNo = 0;
    while (std::getline(is, line)) {
        ++lineNo;
        if (line.empty() || line[0] == '#') continue;
        std::istringstream ls(line);
        long long t, x, y, p;
        char c1, c2, c3;
        if (!(ls >> t >> c1 >> x >> c2 >> y >> c3 >> p) || c1 != ',' || c2 != ',' || c3 != ',')
            throw std::runtime_error(path + " line " + std::to_string(lineNo) +
                                     ": expected t,x,y,p");
        if (t < 0 || x < 0 || y < 0 || x > 0xFFFF || y > 0xFFFF)
            throw std::runtime_error(path + " line " + std::to_string(lineNo) +
                                     ": field out of range");
        if (p != 1 && p != -1)
            throw std::runtime_error(path + " line " + std::to_string(lineNo) + ": polarity " +
                                     std::to_string(p) + " out of range {-1,+1}");
        events.push_back({static_cast<std::uint64_t>(t), static_cast<std::uint16_t>(x),
                          static_cast<std::uint16_t>(y), static_cast<std::int8_t>(p)});
    }
    sort_if_needed(events);
    return events;
}

EventStream parse_event_file(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("cannot open event file " + path);
    char magic[4] = {0, 0, 0, 0};
    is.read(magic, 4);
    is.close();
    if (std::memcmp(magic, kMagic, 4) == 0) return parse_evt1(path);
    return parse_csv_events(path);
}

void write_evt1(const EventStream& events, const std::string& path) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("cannot open " + path + " for writing");
    os.write(kMagic, 4);
    const auto count = static_cast<std::uint32_t>(events.size());
    os.write(reinterpret_cast<const char*>(&count), 4);
    for (const Event& e : events) {
        os.write(reinterpret_cast<const char*>(&e.t), 8);
        os.write(reinterpret_cast<const char*>(&e.x), 2);
        os.write(reinterpret_cast<const char*>(&e.y), 2);
        os.write(reinterpret_cast<const char*>(&e.p), 1);
    }
    if (!os) throw std::runtime_error("write failed for " + path);
}

EventStream window_events(const EventStream& stream, std::uint64_t startUs,
                          std::uint64_t durationUs) {
    if (durationUs == 0) throw std::invalid_argument("window duration must be positive");
    EventStream out;
    for (const Event& e : stream)
        if (e.t >= startUs && e.t < startUs + durationUs) out.push_back(e);
    return out;
}

Tensor voxelize(const EventStream& window, std::uint64_t startUs, std::uint64_t durationUs,
                int srcW, int srcH, int dstW, int dstH, int T) {
    if (durationUs == 0 || T <= 0) throw std::invalid_argument("voxelize: bad window parameters");
    Tensor grid({T, 2, dstH, dstW});
    for (const Event& e : window) {
        if (e.t < startUs || e.t > startUs + durationUs)
            throw std::invalid_argument("voxelize: event outside the window");
        if (e.x >= srcW || e.y >= srcH)
            throw std::invalid_argument("voxelize: event at (" + std::to_string(e.x) + "," +
                                        std::to_string(e.y) + ") outside source resolution");
        int bin = static_cast<int>((e.t - startUs) * static_cast<std::uint64_t>(T) / durationUs);
        bin = std::min(bin, T - 1);  // t exactly at start+D lands in the last bin
        const int ch = e.p > 0 ? 0 : 1;
        const int xd = static_cast<int>(static_cast<std::int64_t>(e.x) * dstW / srcW);
        const int yd = static_cast<int>(static_cast<std::int64_t>(e.y) * dstH / srcH);
        grid[((static_cast<std::int64_t>(bin) * 2 + ch) * dstH + yd) * dstW + xd] = 1.0f;
    }
    return grid;
}

}  // namespace evseg
