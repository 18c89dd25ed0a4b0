#pragma once

#include <chrono>
#include <cmath>
#include <fstream>
#include <optional>

#include "evseg/dataset.hpp"
#include "evseg/metrics.hpp"
#include "evseg/model.hpp"

// Surrogate-BPTT training: pixel-wise cross-entropy on the accumulated head
// potentials (summed over pixels, averaged over the minibatch), a Nadam
// optimizer, and a step learning-rate schedule. Fully deterministic given
// the seed.

namespace evseg {

struct TrainConfig {
    double learningRate = 2e-3;
    std::vector<int> milestones = {8, 16, 24, 50};
    double decayFactor = 10.0;
    int batchSize = 16;
    int epochs = 70;
    std::uint64_t seed = 0;
    std::optional<double> gradClip;  // global L2 norm bound, off by default
    double initGain = 1.0;

    void validate() const {
        if (learningRate <= 0 || batchSize <= 0 || epochs < 0)
            throw std::invalid_argument("train config: bad learning rate/batch/epochs");
        if (decayFactor <= 1.0) throw std::invalid_argument("train config: decay factor must be > 1");
        for (std::size_t i = 1; i < milestones.size(); ++i)
            if (milestones[i] <= milestones[i - 1])
                throw std::invalid_argument("train config: milestones must be strictly increasing");
    }
};

inline double lr_at_epoch(const TrainConfig& cfg, int epoch) {
    int crossed = 0;
    for (int m : cfg.milestones)
        if (m <= epoch) ++crossed;
    return cfg.learningRate / std::pow(cfg.decayFactor, crossed);
}

// Batch loss: per-sample pixel sums divided by the actual
// minibatch size. Returns the loss and the per-sample logits cotangent
// scale (1/N applied by the caller).
template <class S>
std::pair<S, TensorT<S>> compute_loss(const TensorT<S>& logits, const ClassMap& label,
                                      std::optional<std::uint8_t> ignoreLabel = kIgnoreLabel) {
    return softmax_ce(logits, label, ignoreLabel);
}

// Adam with Nesterov momentum. Bias-corrected first and second moments; the
// lookahead term blends the corrected momentum with the raw gradient.
template <class S>
struct NadamState {
    double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
    std::int64_t step = 0;
    std::vector<std::vector<S>> m, v;  // aligned with the parameter list

    void ensure(const std::vector<ParamRef<S>>& params) {
        if (!m.empty()) return;
        for (const auto& p : params) {
            m.emplace_back(static_cast<std::size_t>(p.numel()), S(0));
            v.emplace_back(static_cast<std::size_t>(p.numel()), S(0));
        }
    }
};

template <class S>
void nadam_step(std::vector<ParamRef<S>>& params, NadamState<S>& state, double lr) {
    state.ensure(params);
    ++state.step;
    const double b1 = state.beta1, b2 = state.beta2;
    const double c1 = 1.0 - std::pow(b1, static_cast<double>(state.step));
    const double c2 = 1.0 - std::pow(b2, static_cast<double>(state.step));
    for (std::size_t pi = 0; pi < params.size(); ++pi) {
        const auto& p = params[pi];
        for (std::int64_t i = 0; i < p.numel(); ++i) {
            const double g = static_cast<double>(p.grad_at(i));
            // moment math in double regardless of S
            double mval = static_cast<double>(state.m[pi][static_cast<std::size_t>(i)]);
            double vval = static_cast<double>(state.v[pi][static_cast<std::size_t>(i)]);
            mval = b1 * mval + (1.0 - b1) * g;
            vval = b2 * vval + (1.0 - b2) * g * g;
            state.m[pi][static_cast<std::size_t>(i)] = static_cast<S>(mval);
            state.v[pi][static_cast<std::size_t>(i)] = static_cast<S>(vval);
            const double mhat = mval / c1;
            const double vhat = vval / c2;
            const double dir = (b1 * mhat + (1.0 - b1) * g) / (std::sqrt(vhat) + state.eps);
            p.set(i, static_cast<S>(static_cast<double>(p.get(i)) - lr * dir));
        }
    }
}

struct TrainLogRecord {
    int epoch = 0;
    int step = 0;  // global optimizer step
    double loss = 0;
    double lr = 0;
    double wallTimeSec = 0;
};

struct TrainingLog {
    std::vector<TrainLogRecord> records;

    void write_jsonl(const std::string& path) const {
        std::ofstream os(path);
        if (!os) throw std::runtime_error("cannot open log " + path + " for writing");
        for (const auto& r : records) {
            os << "{\"epoch\":" << r.epoch << ",\"step\":" << r.step << ",\"loss\":" << r.loss
               << ",\"lr\":" << r.lr << ",\"wallTimeSec\":" << r.wallTimeSec << "}\n";
        }
    }
};

struct StepInfo {
    int epoch = 0;
    int step = 0;
    double loss = 0;
    double lr = 0;
    ConfusionMatrix batchConfusion;  // over this batch's training predictions
};

// Returns false from the hook to stop after the current step.
using StepHook = std::function<bool(const StepInfo&)>;

template <class S>
ClassMap argmax_map(const TensorT<S>& logits) {
    const int c = logits.dim(0), h = logits.dim(1), w = logits.dim(2);
    ClassMap pred(h, w);
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            int best = 0;
            S bv = logits.at3(0, y, x);
            for (int k = 1; k < c; ++k)
                if (logits.at3(k, y, x) > bv) { bv = logits.at3(k, y, x); best = k; }
            pred.at(y, x) = static_cast<std::uint8_t>(best);
        }
    }
    return pred;
}

template <class S>
TrainingLog train_epochs(EvSegNet<S>& net, const std::vector<PseudoFrame>& dataset,
                         const TrainConfig& cfg, const StepHook& hook = nullptr) {
    cfg.validate();
    if (dataset.empty()) throw std::invalid_argument("train: empty dataset");

    std::vector<TensorT<S>> frames;
    frames.reserve(dataset.size());
    for (const auto& f : dataset) frames.push_back(f.spikes.template cast<S>());

    std::vector<ParamRef<S>> params;
    net.for_each_param([&](const ParamRef<S>& p) { params.push_back(p); });
    NadamState<S> opt;
    TrainingLog log;
    std::mt19937_64 shuffler(cfg.seed);
    const auto t0 = std::chrono::steady_clock::now();

    int globalStep = 0;
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        const double lr = lr_at_epoch(cfg, epoch);
        std::vector<std::size_t> order(dataset.size());
        std::iota(order.begin(), order.end(), std::size_t{0});
        std::shuffle(order.begin(), order.end(), shuffler);

        for (std::size_t b0 = 0; b0 < order.size(); b0 += static_cast<std::size_t>(cfg.batchSize)) {
            const std::size_t b1 = std::min(order.size(), b0 + static_cast<std::size_t>(cfg.batchSize));
            const auto n = static_cast<S>(b1 - b0);  // the loss divides by the actual batch size
            net.zero_grad();
            double lossSum = 0;
            StepInfo info;
            info.batchConfusion = ConfusionMatrix(net.cfg.numClasses);
            for (std::size_t bi = b0; bi < b1; ++bi) {
                const auto si = order[bi];
                auto logits = net.forward_sequence(frames[si], true);
                auto [loss, gradLogits] = compute_loss(logits, dataset[si].label);
                if (!std::isfinite(static_cast<double>(loss)))
                    throw std::runtime_error(
                        "non-finite loss at epoch " + std::to_string(epoch) + " step " +
                        std::to_string(globalStep) + "; first non-finite tensor: head logits");
                lossSum += static_cast<double>(loss);
                for (auto& g : gradLogits.data) g /= n;
                net.backward_sequence(gradLogits);
                info.batchConfusion.merge(
                    confusion_matrix(argmax_map(logits), dataset[si].label, net.cfg.numClasses));
            }
            if (cfg.gradClip) {
                double norm2 = 0;
                for (const auto& p : params)
                    for (std::int64_t i = 0; i < p.numel(); ++i) {
                        const double g = static_cast<double>(p.grad_at(i));
                        norm2 += g * g;
                    }
                const double norm = std::sqrt(norm2);
                if (norm > *cfg.gradClip) {
                    const S scale = static_cast<S>(*cfg.gradClip / norm);
                    for (const auto& p : params) {
                        if (p.grad && p.grad->numel() > 0)
                            for (auto& g : p.grad->data) g *= scale;
                        else if (p.grad_scalar)
                            *p.grad_scalar *= scale;
                    }
                }
            }
            nadam_step(params, opt, lr);
            ++globalStep;
            net.train_step = globalStep;

            TrainLogRecord rec;
            rec.epoch = epoch;
            rec.step = globalStep;
            rec.loss = lossSum / static_cast<double>(n);
            rec.lr = lr;
            rec.wallTimeSec =
                std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
            log.records.push_back(rec);
            if (hook) {
                info.epoch = epoch;
                info.step = globalStep;
                info.loss = rec.loss;
                info.lr = lr;
                if (!hook(info)) return log;
            }
        }
    }
    return log;
}

// Inference over a split: one confusion matrix over all pixels of all
// samples, firing rates from direct spike counting, parameter count.
template <class S>
MetricsReport evaluate_split(EvSegNet<S>& net, const std::vector<PseudoFrame>& dataset) {
    if (dataset.empty()) throw std::invalid_argument("evaluate: empty dataset");
    MetricsReport report;
    report.confusion = ConfusionMatrix(net.cfg.numClasses);

    std::vector<std::string> layerOrder;
    std::vector<std::int64_t> layerSize;
    std::vector<std::vector<std::int64_t>> counts;  // per layer, per (sample,t)
    for (const auto& sample : dataset) {
        auto frame = sample.spikes.template cast<S>();
        auto logits = net.forward_sequence(frame, false, [&](const std::string& name,
                                                             const TensorT<S>& t) {
            if (name.find("spike") == std::string::npos) return;  // pools/skips are not layers
            auto it = std::find(layerOrder.begin(), layerOrder.end(), name);
            std::size_t li;
            if (it == layerOrder.end()) {
                li = layerOrder.size();
                layerOrder.push_back(name);
                layerSize.push_back(t.numel());
                counts.emplace_back();
            } else {
                li = static_cast<std::size_t>(it - layerOrder.begin());
            }
            std::int64_t c = 0;
            for (auto v : t.data)
                if (v != S(0)) ++c;
            counts[li].push_back(c);
        });
        report.confusion.merge(
            confusion_matrix(argmax_map(logits), sample.label, net.cfg.numClasses));
    }
    report.accuracy = pixel_accuracy(report.confusion);
    report.iou = mean_iou(report.confusion);
    report.paramCount = net.count_parameters();

    std::vector<std::pair<std::int64_t, double>> perLayer;
    for (std::size_t li = 0; li < layerOrder.size(); ++li) {
        LayerActivity a;
        a.name = layerOrder[li];
        a.neurons = layerSize[li];
        a.firingRate = layer_firing_rate(counts[li], layerSize[li],
                                         static_cast<int>(dataset.size()), net.cfg.timesteps);
        perLayer.emplace_back(a.neurons, a.firingRate);
        report.layers.push_back(std::move(a));
    }
    report.modelFiringRate = model_firing_rate(perLayer);
    return report;
}

}  // namespace evseg
