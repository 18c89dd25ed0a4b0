#include "evseg/dataset.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <fstream>
#include <numeric>
#include <random>

#include "evseg/image.hpp"

namespace evseg {

using nlohmann::json;

DatasetManifest read_manifest(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw std::runtime_error("cannot open manifest " + path);
    json j;
    try {
        is >> j;
    } catch (const json::exception& e) {
        throw std::runtime_error("malformed manifest " + path + ": " + e.what());
    }
    DatasetManifest m;
    m.classNames = j.at("classNames").get<std::vector<std::string>>();
    m.srcW = j.at("sourceWidth").get<int>();
    m.srcH = j.at("sourceHeight").get<int>();
    m.windowDurationUs = j.value("windowDurationUs", std::uint64_t{50000});
    for (const auto& r : j.at("records")) {
        ManifestRecord rec;
        rec.eventFile = r.at("events").get<std::string>();
        rec.labelFile = r.at("labels").get<std::string>();
        rec.windowStartUs = r.value("windowStartUs", std::uint64_t{0});
        m.records.push_back(std::move(rec));
    }
    return m;
}

void write_manifest(const DatasetManifest& m, const std::string& path) {
    json j;
    j["classNames"] = m.classNames;
    j["sourceWidth"] = m.srcW;
    j["sourceHeight"] = m.srcH;
    j["windowDurationUs"] = m.windowDurationUs;
    j["records"] = json::array();
    for (const auto& r : m.records)
        j["records"].push_back(
            {{"events", r.eventFile}, {"labels", r.labelFile}, {"windowStartUs", r.windowStartUs}});
    std::ofstream os(path);
    if (!os) throw std::runtime_error("cannot open manifest " + path + " for writing");
    os << j.dump(2) << "\n";
}

PseudoFrame load_sample(const DatasetManifest& m, const ManifestRecord& rec,
                        const std::string& baseDir, int dstW, int dstH, int T) {
    const std::string prefix = baseDir.empty() ? "" : baseDir + "/";
    auto stream = parse_event_file(prefix + rec.eventFile);
    auto win = window_events(stream, rec.windowStartUs, m.windowDurationUs);
    PseudoFrame frame;
    frame.spikes =
        voxelize(win, rec.windowStartUs, m.windowDurationUs, m.srcW, m.srcH, dstW, dstH, T);
    frame.label = read_pgm(prefix + rec.labelFile);
    if (frame.label.w != dstW || frame.label.h != dstH) {
        // nearest-neighbor rescale to the network resolution
        ClassMap scaled(dstH, dstW);
        for (int y = 0; y < dstH; ++y)
            for (int x = 0; x < dstW; ++x)
                scaled.at(y, x) = frame.label.at(static_cast<int>(static_cast<std::int64_t>(y) *
                                                                  frame.label.h / dstH),
                                                 static_cast<int>(static_cast<std::int64_t>(x) *
                                                                  frame.label.w / dstW));
        frame.label = std::move(scaled);
    }
    return frame;
}

std::pair<DatasetManifest, DatasetManifest> kfold_split(const DatasetManifest& m, int k,
                                                        int foldIndex, std::uint64_t seed) {
    const int n = static_cast<int>(m.records.size());
    if (k <= 0 || k > n)
        throw std::invalid_argument("kfold: k=" + std::to_string(k) + " with " +
                                    std::to_string(n) + " records");
    if (foldIndex < 0 || foldIndex >= k) throw std::invalid_argument("kfold: bad fold index");
    std::vector<int> order(static_cast<std::size_t>(n));
    std::iota(order.begin(), order.end(), 0);
    std::mt19937_64 rng(seed);
    std::shuffle(order.begin(), order.end(), rng);

    // fold f takes positions [f*n/k, (f+1)*n/k); sizes differ by at most 1
    const int lo = foldIndex * n / k, hi = (foldIndex + 1) * n / k;
    DatasetManifest train = m, test = m;
    train.records.clear();
    test.records.clear();
    for (int i = 0; i < n; ++i) {
        const auto& rec = m.records[static_cast<std::size_t>(order[static_cast<std::size_t>(i)])];
        if (i >= lo && i < hi)
            test.records.push_back(rec);
        else
            train.records.push_back(rec);
    }
    return {std::move(train), std::move(test)};
}

}  // namespace evseg
