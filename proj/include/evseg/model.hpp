#pragma once

#include <functional>
#include <random>
#include <string>

#include "evseg/neuron.hpp"
#include "evseg/ops.hpp"

// The EvSeg network: a spiking encoder-decoder U-Net run over T
// timesteps. Encoder levels are two (conv -> PLIF) blocks followed by a 2x2
// max-pool, the bottom level drops the pool, decoder levels are a stride-2
// up-convolution -> PLIF, a concatenation with the encoder skip, and two
// (conv -> PLIF) blocks. A 1x1 convolution head without any spiking
// activation is summed over all timesteps into the class logits. There is
// no normalization layer anywhere.

namespace evseg {

struct ModelConfig {
    int inChannels = 2;
    int numClasses = 6;
    std::vector<int> baseWidths = {64, 128, 256, 512};
    int inputH = 64;
    int inputW = 64;
    int timesteps = 20;
    double surrogateAlpha = 1.0;
    double threshold = 1.0;
    double leakInit = 0.99;
    // Up-convolution kernel size. 3 (stride 2, pad 1) reproduces the
    // published parameter counts; 2 is the classic non-overlapping up-conv.
    int upKernel = 3;
    bool additiveSkips = false;  // ablation: add skips instead of concatenating

    int depth() const { return static_cast<int>(baseWidths.size()); }

    void validate() const {
        if (baseWidths.empty()) throw std::invalid_argument("config: baseWidths must be non-empty");
        if (inChannels <= 0 || numClasses < 2 || timesteps <= 0)
            throw std::invalid_argument("config: invalid channel/class/timestep counts");
        if (upKernel != 2 && upKernel != 3)
            throw std::invalid_argument("config: upKernel must be 2 or 3");
        const int div = 1 << (depth() - 1);
        if (inputH % div != 0 || inputW % div != 0)
            throw std::invalid_argument("config: input size " + std::to_string(inputH) + "x" +
                                        std::to_string(inputW) + " not divisible by " +
                                        std::to_string(div));
    }
};

template <class S>
struct ConvLayer {
    TensorT<S> w, b;    // weight layout: conv [Cout,Cin,k,k], tconv [Cin,Cout,k,k]
    TensorT<S> gw, gb;
    bool transposed = false;
    std::vector<TensorT<S>> inputs;  // saved forward inputs, one per recorded step

    TensorT<S> forward(const TensorT<S>& x, bool record) {
        if (record) inputs.push_back(x);
        return transposed ? tconv2_forward(x, w, b) : conv2d_forward(x, w, b);
    }

    TensorT<S> backward_step(const TensorT<S>& gy) {
        if (inputs.empty()) throw std::runtime_error("conv backward: missing saved input");
        auto [gi, gwi, gbi] = transposed ? tconv2_backward(gy, inputs.back(), w)
                                         : conv2d_backward(gy, inputs.back(), w);
        inputs.pop_back();
        if (gw.numel() == 0) gw = TensorT<S>(w.shape);
        if (gb.numel() == 0) gb = TensorT<S>(b.shape);
        for (std::int64_t i = 0; i < gw.numel(); ++i) gw[i] += gwi[i];
        for (std::int64_t i = 0; i < gb.numel(); ++i) gb[i] += gbi[i];
        return gi;
    }

    void zero_grad() {
        gw = TensorT<S>(w.shape);
        gb = TensorT<S>(b.shape);
    }
    void clear_trace() { inputs.clear(); }
    std::int64_t param_count() const { return w.numel() + b.numel(); }
};

template <class S>
struct EncoderLevel {
    ConvLayer<S> ca, cb;
    PlifLayer<S> pa, pb;
    bool has_pool = true;
    std::vector<PoolIndices> pool;  // per recorded step
};

template <class S>
struct DecoderLevel {
    ConvLayer<S> up;
    PlifLayer<S> pu;
    ConvLayer<S> ca, cb;
    PlifLayer<S> pa, pb;
};

// Named view over one parameter (tensor or leak scalar) and its gradient.
template <class S>
struct ParamRef {
    std::string name;
    TensorT<S>* tensor = nullptr;
    TensorT<S>* grad = nullptr;
    S* scalar = nullptr;
    S* grad_scalar = nullptr;

    std::int64_t numel() const { return tensor ? tensor->numel() : 1; }
    S get(std::int64_t i) const { return tensor ? (*tensor)[i] : *scalar; }
    void set(std::int64_t i, S v) const {
        if (tensor) (*tensor)[i] = v; else *scalar = v;
    }
    S grad_at(std::int64_t i) const {
        if (grad && grad->numel() > 0) return (*grad)[i];
        if (grad_scalar) return *grad_scalar;
        return S(0);
    }
};

template <class S>
struct EvSegNet {
    ModelConfig cfg;
    std::vector<EncoderLevel<S>> enc;  // last entry is the bottom level (no pool)
    std::vector<DecoderLevel<S>> dec;  // index = resolution level, 0 finest
    ConvLayer<S> head;
    std::int64_t train_step = 0;

    // Observer for intermediate activations (spikes, pooled maps, skip
    // concatenations); used by firing-rate accounting and structural tests.
    using Observer = std::function<void(const std::string&, const TensorT<S>&)>;

    int decoder_conv_in(int level) const {
        return cfg.additiveSkips ? cfg.baseWidths[level] : 2 * cfg.baseWidths[level];
    }

    void for_each_param(const std::function<void(const ParamRef<S>&)>& fn) {
        auto conv = [&](const std::string& prefix, ConvLayer<S>& c) {
            fn({prefix + ".w", &c.w, &c.gw});
            fn({prefix + ".b", &c.b, &c.gb});
        };
        auto plif = [&](const std::string& prefix, PlifLayer<S>& p) {
            fn({prefix + ".leak", nullptr, nullptr, &p.w, &p.grad_w});
        };
        for (std::size_t l = 0; l < enc.size(); ++l) {
            const std::string pre = "enc" + std::to_string(l);
            conv(pre + ".conv_a", enc[l].ca);
            plif(pre + ".plif_a", enc[l].pa);
            conv(pre + ".conv_b", enc[l].cb);
            plif(pre + ".plif_b", enc[l].pb);
        }
        for (std::size_t l = dec.size(); l-- > 0;) {
            const std::string pre = "dec" + std::to_string(l);
            conv(pre + ".up", dec[l].up);
            plif(pre + ".plif_up", dec[l].pu);
            conv(pre + ".conv_a", dec[l].ca);
            plif(pre + ".plif_a", dec[l].pa);
            conv(pre + ".conv_b", dec[l].cb);
            plif(pre + ".plif_b", dec[l].pb);
        }
        conv("head", head);
    }

    std::int64_t count_parameters() {
        std::int64_t n = 0;
        for_each_param([&](const ParamRef<S>& p) { n += p.numel(); });
        return n;
    }

    void reset_state() {
        for (auto& e : enc) {
            e.pa.reset_state();
            e.pb.reset_state();
            e.pool.clear();
            e.ca.clear_trace();
            e.cb.clear_trace();
        }
        for (auto& d : dec) {
            d.pu.reset_state();
            d.pa.reset_state();
            d.pb.reset_state();
            d.up.clear_trace();
            d.ca.clear_trace();
            d.cb.clear_trace();
        }
        head.clear_trace();
    }

    void zero_grad() {
        for (auto& e : enc) {
            e.ca.zero_grad();
            e.cb.zero_grad();
            e.pa.grad_w = e.pa.grad_lambda = 0;
            e.pb.grad_w = e.pb.grad_lambda = 0;
        }
        for (auto& d : dec) {
            d.up.zero_grad();
            d.ca.zero_grad();
            d.cb.zero_grad();
            d.pu.grad_w = d.pu.grad_lambda = 0;
            d.pa.grad_w = d.pa.grad_lambda = 0;
            d.pb.grad_w = d.pb.grad_lambda = 0;
        }
        head.zero_grad();
    }

    // Run the full unrolled sequence. frame is [T, Cin, H, W]; membrane
    // states persist across t and the head outputs are summed into the
    // logits. With record=true every trace needed for backward_sequence is
    // kept.
    TensorT<S> forward_sequence(const TensorT<S>& frame, bool record = false,
                                const Observer& observe = nullptr) {
        check_shape(frame.ndim() == 4, "forward: frame must be [T,C,H,W]");
        check_shape(frame.dim(0) == cfg.timesteps,
                    "forward: frame has " + std::to_string(frame.dim(0)) + " timesteps, config " +
                        std::to_string(cfg.timesteps));
        check_shape(frame.dim(1) == cfg.inChannels && frame.dim(2) == cfg.inputH &&
                        frame.dim(3) == cfg.inputW,
                    "forward: frame slice shape mismatch " + frame.shape_str());
        reset_state();
        const int depth = cfg.depth();
        TensorT<S> logits({cfg.numClasses, cfg.inputH, cfg.inputW});
        const std::int64_t sliceN =
            static_cast<std::int64_t>(cfg.inChannels) * cfg.inputH * cfg.inputW;

        std::vector<TensorT<S>> skip(static_cast<std::size_t>(depth));
        for (int t = 0; t < cfg.timesteps; ++t) {
            TensorT<S> x({cfg.inChannels, cfg.inputH, cfg.inputW});
            std::copy(frame.data.begin() + t * sliceN, frame.data.begin() + (t + 1) * sliceN,
                      x.data.begin());
            for (int l = 0; l < depth; ++l) {
                auto& e = enc[static_cast<std::size_t>(l)];
                auto sa = e.pa.step(e.ca.forward(x, record), record);
                if (observe) observe("enc" + std::to_string(l) + ".spike_a", sa);
                auto sb = e.pb.step(e.cb.forward(sa, record), record);
                if (observe) observe("enc" + std::to_string(l) + ".spike_b", sb);
                if (e.has_pool) {
                    auto [pooled, idx] = maxpool2_forward(sb);
                    if (observe) observe("enc" + std::to_string(l) + ".pool", pooled);
                    if (record) e.pool.push_back(std::move(idx));
                    skip[static_cast<std::size_t>(l)] = std::move(sb);
                    x = std::move(pooled);
                } else {
                    x = std::move(sb);
                }
            }
            for (int l = depth - 2; l >= 0; --l) {
                auto& d = dec[static_cast<std::size_t>(l)];
                auto su = d.pu.step(d.up.forward(x, record), record);
                if (observe) observe("dec" + std::to_string(l) + ".spike_up", su);
                TensorT<S> merged;
                if (cfg.additiveSkips) {
                    merged = skip[static_cast<std::size_t>(l)];
                    for (std::int64_t i = 0; i < merged.numel(); ++i) merged[i] += su[i];
                } else {
                    merged = concat_channels(skip[static_cast<std::size_t>(l)], su);
                }
                if (observe) observe("dec" + std::to_string(l) + ".skip_merge", merged);
                auto sa = d.pa.step(d.ca.forward(merged, record), record);
                if (observe) observe("dec" + std::to_string(l) + ".spike_a", sa);
                auto sb = d.pb.step(d.cb.forward(sa, record), record);
                if (observe) observe("dec" + std::to_string(l) + ".spike_b", sb);
                x = std::move(sb);
            }
            auto out = head.forward(x, record);
            for (std::int64_t i = 0; i < logits.numel(); ++i) logits[i] += out[i];
        }
        return logits;
    }

    // Reverse-mode BPTT through the recorded sequence. Gradients accumulate
    // into each layer's gw/gb/grad_w; call zero_grad() first.
    void backward_sequence(const TensorT<S>& gradLogits) {
        check_shape(gradLogits.shape ==
                        std::vector<int>({cfg.numClasses, cfg.inputH, cfg.inputW}),
                    "backward: gradLogits shape mismatch");
        const int depth = cfg.depth();
        for (auto& e : enc) { e.pa.begin_backward(); e.pb.begin_backward(); }
        for (auto& d : dec) { d.pu.begin_backward(); d.pa.begin_backward(); d.pb.begin_backward(); }

        std::vector<TensorT<S>> gskip(static_cast<std::size_t>(depth));
        for (int t = cfg.timesteps - 1; t >= 0; --t) {
            // head: logits are a plain sum over t, so the cotangent repeats
            TensorT<S> g = head.backward_step(gradLogits);
            for (int l = 0; l <= depth - 2; ++l) {
                auto& d = dec[static_cast<std::size_t>(l)];
                g = d.ca.backward_step(d.pa.backward_step(d.cb.backward_step(d.pb.backward_step(g))));
                TensorT<S> gsu;
                if (cfg.additiveSkips) {
                    gskip[static_cast<std::size_t>(l)] = g;
                    gsu = std::move(g);
                } else {
                    auto [gs, gu] = split_channels(g, cfg.baseWidths[static_cast<std::size_t>(l)]);
                    gskip[static_cast<std::size_t>(l)] = std::move(gs);
                    gsu = std::move(gu);
                }
                g = d.up.backward_step(d.pu.backward_step(gsu));
            }
            for (int l = depth - 1; l >= 0; --l) {
                auto& e = enc[static_cast<std::size_t>(l)];
                if (e.has_pool) {
                    if (e.pool.empty()) throw std::runtime_error("backward: missing pool trace");
                    TensorT<S> gp = maxpool2_backward(g, e.pool.back());
                    e.pool.pop_back();
                    auto& gs = gskip[static_cast<std::size_t>(l)];
                    for (std::int64_t i = 0; i < gp.numel(); ++i) gp[i] += gs[i];
                    g = std::move(gp);
                }
                g = e.ca.backward_step(e.pa.backward_step(e.cb.backward_step(e.pb.backward_step(g))));
            }
        }
        for (auto& e : enc) { e.pa.finish_backward(); e.pb.finish_backward(); }
        for (auto& d : dec) { d.pu.finish_backward(); d.pa.finish_backward(); d.pb.finish_backward(); }
    }
};

template <class S>
EvSegNet<S> build_model(const ModelConfig& cfg) {
    cfg.validate();
    EvSegNet<S> net;
    net.cfg = cfg;
    const int depth = cfg.depth();
    auto make_plif = [&] {
        return PlifLayer<S>(static_cast<S>(cfg.leakInit), static_cast<S>(cfg.threshold),
                            static_cast<S>(cfg.surrogateAlpha));
    };
    auto make_conv = [&](int cin, int cout, int k) {
        ConvLayer<S> c;
        c.w = TensorT<S>({cout, cin, k, k});
        c.b = TensorT<S>({cout});
        return c;
    };
    auto make_tconv = [&](int cin, int cout, int k) {
        ConvLayer<S> c;
        c.transposed = true;
        c.w = TensorT<S>({cin, cout, k, k});
        c.b = TensorT<S>({cout});
        return c;
    };

    int cin = cfg.inChannels;
    for (int l = 0; l < depth; ++l) {
        EncoderLevel<S> e;
        const int w = cfg.baseWidths[static_cast<std::size_t>(l)];
        e.ca = make_conv(cin, w, 3);
        e.cb = make_conv(w, w, 3);
        e.pa = make_plif();
        e.pb = make_plif();
        e.has_pool = l < depth - 1;
        net.enc.push_back(std::move(e));
        cin = w;
    }
    net.dec.resize(static_cast<std::size_t>(std::max(0, depth - 1)));
    for (int l = depth - 2; l >= 0; --l) {
        DecoderLevel<S> d;
        const int w = cfg.baseWidths[static_cast<std::size_t>(l)];
        const int wdeep = cfg.baseWidths[static_cast<std::size_t>(l + 1)];
        d.up = make_tconv(wdeep, w, cfg.upKernel);
        d.pu = make_plif();
        d.ca = make_conv(net.decoder_conv_in(l), w, 3);
        d.cb = make_conv(w, w, 3);
        d.pa = make_plif();
        d.pb = make_plif();
        net.dec[static_cast<std::size_t>(l)] = std::move(d);
    }
    net.head = make_conv(cfg.baseWidths[0], cfg.numClasses, 1);
    return net;
}

// He-style normal initialization scaled by fan-in; gain compensates for the
// sparse binary inputs of spiking layers.
template <class S>
void init_parameters(EvSegNet<S>& net, std::uint64_t seed, double gain = 1.0) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    net.for_each_param([&](const ParamRef<S>& p) {
        if (!p.tensor) return;  // leak scalars keep their configured init
        if (p.tensor->ndim() == 4) {
            const auto& shp = p.tensor->shape;
            // fan-in: conv weight is [Cout,Cin,k,k], tconv weight [Cin,Cout,k,k];
            // for the tconv each output pixel receives k*k/stride^2 taps.
            const bool tconv = p.name.find(".up.") != std::string::npos;
            const double fan_in = tconv ? shp[0] * shp[2] * shp[3] / 4.0
                                        : static_cast<double>(shp[1]) * shp[2] * shp[3];
            const double std = gain * std::sqrt(2.0 / fan_in);
            for (auto& v : p.tensor->data) v = static_cast<S>(normal(rng) * std);
        } else {
            for (auto& v : p.tensor->data) v = S(0);  // biases
        }
    });
}

}  // namespace evseg
