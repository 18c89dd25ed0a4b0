#pragma once

#include <string>
#include <vector>

#include "evseg/synthetic.hpp"

// Dataset manifests: a JSON document listing (event file, label file,
// window start) records plus class names and the source sensor resolution.

namespace evseg {

struct ManifestRecord {
    std::string eventFile;
    std::string labelFile;
    std::uint64_t windowStartUs = 0;
};

struct DatasetManifest {
    std::vector<ManifestRecord> records;
    std::vector<std::string> classNames;
    int srcW = 64;
    int srcH = 64;
    std::uint64_t windowDurationUs = 50000;

    int numClasses() const { return static_cast<int>(classNames.size()); }
};

DatasetManifest read_manifest(const std::string& path);
void write_manifest(const DatasetManifest& m, const std::string& path);

// Paths inside a manifest are relative to the manifest's directory.
PseudoFrame load_sample(const DatasetManifest& m, const ManifestRecord& rec,
                        const std::string& baseDir, int dstW, int dstH, int T);

// Deterministic k-fold partition: shuffle by seed, fold sizes differ by at
// most one, folds are disjoint and cover the manifest.
std::pair<DatasetManifest, DatasetManifest> kfold_split(const DatasetManifest& m, int k,
                                                        int foldIndex, std::uint64_t seed);

}  // namespace evseg
