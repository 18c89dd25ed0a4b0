#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "evseg/ops.hpp"

// Segmentation metrics (pixel accuracy, per-class IoU, MIoU) over a
// confusion matrix, plus spike-activity metrics: the average firing rate of
// a layer and the neuron-count-weighted model firing rate.

namespace evseg {

struct ConfusionMatrix {
    int numClasses = 0;
    std::vector<std::int64_t> counts;  // [truth][pred]

    ConfusionMatrix() = default;
    explicit ConfusionMatrix(int c)
        : numClasses(c), counts(static_cast<std::size_t>(c) * c, 0) {}

    std::int64_t& at(int truth, int pred) {
        return counts[static_cast<std::size_t>(truth) * numClasses + pred];
    }
    std::int64_t at(int truth, int pred) const {
        return counts[static_cast<std::size_t>(truth) * numClasses + pred];
    }
    std::int64_t total() const;
    void merge(const ConfusionMatrix& other);
};

ConfusionMatrix confusion_matrix(const ClassMap& pred, const ClassMap& truth, int numClasses,
                                 std::optional<std::uint8_t> ignoreLabel = kIgnoreLabel);

// trace(M) / total; throws on an empty matrix.
double pixel_accuracy(const ConfusionMatrix& m);

struct IouResult {
    double miou = 0;
    std::vector<double> perClass;      // IoU per class, 0 where invalid
    std::vector<bool> valid;           // false when truth and pred are both empty
};

// Per-class |intersection|/|union| from the matrix. Classes with an empty
// union are excluded from the mean by default; scoreAbsentAsZero keeps them
// at zero for strict protocol parity.
IouResult mean_iou(const ConfusionMatrix& m, bool scoreAbsentAsZero = false);

// Firing rates: counts holds the spike count per (sample,
// timestep) pair for one layer with H*W neuron positions.
double layer_firing_rate(const std::vector<std::int64_t>& counts, std::int64_t layerSize,
                         int numSamples, int timesteps);

// Neuron-count-weighted mean over layers; the result is in units of
// neurons.
double model_firing_rate(const std::vector<std::pair<std::int64_t, double>>& perLayer);

struct LayerActivity {
    std::string name;
    std::int64_t neurons = 0;
    double firingRate = 0;
};

struct MetricsReport {
    ConfusionMatrix confusion;
    double accuracy = 0;
    IouResult iou;
    std::vector<LayerActivity> layers;
    double modelFiringRate = 0;
    std::int64_t paramCount = 0;

    std::string to_json(const std::vector<std::string>& classNames = {}) const;
    // Aligned text table with one column per class.
    std::string to_table(const std::vector<std::string>& classNames = {}) const;
};

}  // namespace evseg
