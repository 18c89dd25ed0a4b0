#include "evseg/metrics.hpp"

#include <nlohmann/json.hpp>

#include <iomanip>
#include <numeric>
#include <sstream>

namespace evseg {

std::int64_t ConfusionMatrix::total() const {
    return std::accumulate(counts.begin(), counts.end(), std::int64_t{0});
}

void ConfusionMatrix::merge(const ConfusionMatrix& other) {
    if (numClasses == 0) {
        *this = other;
        return;
    }
    if (other.numClasses != numClasses)
        throw std::invalid_argument("confusion matrix class count mismatch");
    for (std::size_t i = 0; i < counts.size(); ++i) counts[i] += other.counts[i];
}

ConfusionMatrix confusion_matrix(const ClassMap& pred, const ClassMap& truth, int numClasses,
                                 std::optional<std::uint8_t> ignoreLabel) {
    if (pred.w != truth.w || pred.h != truth.h)
        throw std::invalid_argument("confusion_matrix: map shapes differ");
    ConfusionMatrix m(numClasses);
    for (std::size_t i = 0; i < truth.v.size(); ++i) {
        const std::uint8_t t = truth.v[i], p = pred.v[i];
        if (ignoreLabel && t == *ignoreLabel) continue;
        if (t >= numClasses || p >= numClasses)
            throw std::invalid_argument("confusion_matrix: class id out of range");
        ++m.at(t, p);
    }
    return m;
}

double pixel_accuracy(const ConfusionMatrix& m) {
    const std::int64_t tot = m.total();
    if (tot == 0) throw std::invalid_argument("pixel_accuracy: empty confusion matrix");
    std::int64_t diag = 0;
    for (int c = 0; c < m.numClasses; ++c) diag += m.at(c, c);
    return static_cast<double>(diag) / static_cast<double>(tot);
}

IouResult mean_iou(const ConfusionMatrix& m, bool scoreAbsentAsZero) {
    if (m.total() == 0) throw std::invalid_argument("mean_iou: empty confusion matrix");
    IouResult r;
    r.perClass.assign(static_cast<std::size_t>(m.numClasses), 0.0);
    r.valid.assign(static_cast<std::size_t>(m.numClasses), false);
    std::vector<double> contributing;
    for (int c = 0; c < m.numClasses; ++c) {
        std::int64_t row = 0, col = 0;
        for (int j = 0; j < m.numClasses; ++j) {
            row += m.at(c, j);
            col += m.at(j, c);
        }
        const std::int64_t uni = row + col - m.at(c, c);
        const bool valid = uni > 0;
        r.valid[static_cast<std::size_t>(c)] = valid;
        if (valid)
            r.perClass[static_cast<std::size_t>(c)] =
                static_cast<double>(m.at(c, c)) / static_cast<double>(uni);
        if (valid || scoreAbsentAsZero)
            contributing.push_back(r.perClass[static_cast<std::size_t>(c)]);
    }
    if (contributing.empty()) throw std::invalid_argument("mean_iou: no valid class");
    // summing in sorted order makes the mean exactly invariant to class
    // relabeling despite floating-point non-associativity
    std::sort(contributing.begin(), contributing.end());
    const double sum = std::accumulate(contributing.begin(), contributing.end(), 0.0);
    r.miou = sum / static_cast<double>(contributing.size());
    return r;
}

double layer_firing_rate(const std::vector<std::int64_t>& counts, std::int64_t layerSize,
                         int numSamples, int timesteps) {
    if (counts.size() != static_cast<std::size_t>(numSamples) * timesteps)
        throw std::invalid_argument("layer_firing_rate: expected M*T counts");
    double sum = 0;
    for (auto c : counts) sum += static_cast<double>(c) / static_cast<double>(layerSize);
    return sum / (static_cast<double>(numSamples) * timesteps);
}

double model_firing_rate(const std::vector<std::pair<std::int64_t, double>>& perLayer) {
    if (perLayer.empty()) throw std::invalid_argument("model_firing_rate: no layers");
    double sum = 0;
    for (const auto& [neurons, fr] : perLayer) sum += static_cast<double>(neurons) * fr;
    return sum / static_cast<double>(perLayer.size());
}

std::string MetricsReport::to_json(const std::vector<std::string>& classNames) const {
    nlohmann::json j;
    j["accuracy"] = accuracy;
    j["miou"] = iou.miou;
    j["perClassIoU"] = iou.perClass;
    j["classValid"] = std::vector<bool>(iou.valid.begin(), iou.valid.end());
    if (!classNames.empty()) j["classNames"] = classNames;
    j["confusion"] = confusion.counts;
    j["numClasses"] = confusion.numClasses;
    j["paramCount"] = paramCount;
    j["modelFiringRate"] = modelFiringRate;
    j["layers"] = nlohmann::json::array();
    for (const auto& l : layers)
        j["layers"].push_back(
            {{"name", l.name}, {"neurons", l.neurons}, {"firingRate", l.firingRate}});
    return j.dump(2);
}

std::string MetricsReport::to_table(const std::vector<std::string>& classNames) const {
    std::ostringstream os;
    os << std::fixed << std::setprecision(2);
    os << std::setw(12) << "" << " |";
    for (int c = 0; c < confusion.numClasses; ++c) {
        std::string name = c < static_cast<int>(classNames.size()) ? classNames[static_cast<std::size_t>(c)]
                                                                   : "class" + std::to_string(c);
        os << std::setw(11) << name << " |";
    }
    os << "\n" << std::setw(12) << "IoU (%)" << " |";
    for (int c = 0; c < confusion.numClasses; ++c) {
        if (iou.valid[static_cast<std::size_t>(c)])
            os << std::setw(11) << 100.0 * iou.perClass[static_cast<std::size_t>(c)] << " |";
        else
            os << std::setw(11) << "-" << " |";
    }
    os << "\n";
    os << "accuracy: " << 100.0 * accuracy << "%  MIoU: " << 100.0 * iou.miou << "%\n";
    return os.str();
}

}  // namespace evseg
