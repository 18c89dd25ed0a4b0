#pragma once

#include <cmath>
#include <vector>

#include "evseg/tensor.hpp"

// Parametric leaky-integrate-and-fire dynamics. Per timestep the membrane
// charges with the decayed previous potential plus the input current, fires
// where it exceeds the threshold, and soft-resets by subtracting the
// threshold. The leak is a single learnable parameter per layer,
// lambda = sigmoid(w). Backward replaces the spike derivative with a
// piecewise quadratic surrogate centered at the threshold.

namespace evseg {

template <class S>
S sigmoid(S x) {
    return S(1) / (S(1) + std::exp(-x));
}

// dS/dV surrogate: 0 outside |v| > 1/alpha, else -alpha^2*|v| + alpha.
// v is the membrane potential relative to the threshold.
template <class S>
S surrogate_derivative(S v, S alpha) {
    const S a = std::abs(v);
    if (a > S(1) / alpha) return S(0);
    return -alpha * alpha * a + alpha;
}

// Default leak parameter so that sigmoid(w) = 0.99.
template <class S>
S leak_param_for(S lambda) {
    return std::log(lambda / (S(1) - lambda));
}

template <class S>
struct PlifLayer {
    S w;             // leak parameter, lambda = sigmoid(w)
    S vth = S(1);    // firing threshold, fixed
    S alpha = S(1);  // surrogate smoothness

    // forward state and trace
    TensorT<S> membrane;             // post-reset potential carried across t
    std::vector<TensorT<S>> trace;   // pre-reset potential per recorded step

    // backward state
    TensorT<S> grad_v;   // cotangent of the carried membrane
    S grad_lambda = 0;   // accumulated dL/dlambda over timesteps
    S grad_w = 0;        // dL/dw, filled by finish_backward

    explicit PlifLayer(S leak = S(0.99), S threshold = S(1), S alph = S(1))
        : w(leak_param_for(leak)), vth(threshold), alpha(alph) {}

    S lambda() const { return sigmoid(w); }

    void reset_state() {
        membrane = TensorT<S>();
        trace.clear();
    }

    // Charge, fire, soft reset. Returns the spike tensor.
    TensorT<S> step(const TensorT<S>& input, bool record) {
        if (membrane.numel() == 0) membrane = TensorT<S>(input.shape);
        check_shape(membrane.shape == input.shape,
                    "plif_step: input shape " + input.shape_str() + " does not match membrane");
        const S lam = lambda();
        TensorT<S> spikes(input.shape);
        for (std::int64_t i = 0; i < input.numel(); ++i)
            membrane[i] = lam * membrane[i] + input[i];
        if (record) trace.push_back(membrane);  // pre-reset potential
        for (std::int64_t i = 0; i < input.numel(); ++i) {
            const S s = membrane[i] > vth ? S(1) : S(0);
            spikes[i] = s;
            membrane[i] -= vth * s;
        }
        return spikes;
    }

    // Resets the time-carried cotangent for a new sequence. grad_lambda and
    // grad_w keep accumulating across samples of a batch; zeroing them is
    // the owner's job.
    void begin_backward() { grad_v = TensorT<S>(); }

    // One reverse step of BPTT; consumes the most recent trace entry.
    // gradSpikes is the cotangent of this step's spike output; returns the
    // cotangent of the input current.
    TensorT<S> backward_step(const TensorT<S>& gradSpikes) {
        if (trace.empty()) throw std::runtime_error("plif_backward: missing trace step");
        const TensorT<S>& u = trace.back();  // pre-reset potential at this step
        check_shape(u.shape == gradSpikes.shape, "plif_backward: cotangent shape mismatch");
        const S lam = lambda();
        if (grad_v.numel() == 0) grad_v = TensorT<S>(u.shape);

        // Post-reset potential of the previous step, for the leak gradient.
        const TensorT<S>* prev = trace.size() >= 2 ? &trace[trace.size() - 2] : nullptr;

        TensorT<S> gradInput(u.shape);
        S gl = 0;
        for (std::int64_t i = 0; i < u.numel(); ++i) {
            const S sd = surrogate_derivative(u[i] - vth, alpha);
            // u -> (spike, post-reset v): dv/du = 1 - vth*sd, dspike/du = sd.
            const S gu = grad_v[i] * (S(1) - vth * sd) + gradSpikes[i] * sd;
            gradInput[i] = gu;
            S vprev = 0;
            if (prev) {
                const S up = (*prev)[i];
                vprev = up - (up > vth ? vth : S(0));
            }
            gl += gu * vprev;
            grad_v[i] = lam * gu;
        }
        grad_lambda += gl;
        trace.pop_back();
        return gradInput;
    }

    // Chain through lambda = sigmoid(w) once all timesteps are consumed.
    void finish_backward() {
        const S lam = lambda();
        grad_w = grad_lambda * lam * (S(1) - lam);
    }
};

}  // namespace evseg
