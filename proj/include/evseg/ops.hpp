#pragma once

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <tuple>

#include "evseg/tensor.hpp"

// Differentiable dense kernels for the segmentation network: same-size 2D
// convolution, 2x2 max-pool, stride-2 transposed convolution, channel
// concatenation and softmax cross-entropy. Convolutions run as im2col plus
// an Eigen matrix product; everything else is plain loops.

namespace evseg {

// Per-pixel class labels, entries in [0, numClasses) or the ignore value.
struct ClassMap {
    int h = 0, w = 0;
    std::vector<std::uint8_t> v;

    ClassMap() = default;
    ClassMap(int hh, int ww, std::uint8_t fill = 0)
        : h(hh), w(ww), v(static_cast<std::size_t>(hh) * ww, fill) {}
    std::uint8_t& at(int y, int x) { return v[static_cast<std::size_t>(y) * w + x]; }
    std::uint8_t at(int y, int x) const { return v[static_cast<std::size_t>(y) * w + x]; }
};

constexpr std::uint8_t kIgnoreLabel = 255;

namespace detail {

template <class S>
using MatrixRM = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class S>
using MapRM = Eigen::Map<MatrixRM<S>>;
template <class S>
using CMapRM = Eigen::Map<const MatrixRM<S>>;

// cols is [Cin*k*k, H_out*W_out]; row = (c*k+dy)*k+dx, column = y*W_out+x.
template <class S>
void im2col(const TensorT<S>& in, int k, int pad, TensorT<S>& cols) {
    const int cin = in.dim(0), h = in.dim(1), w = in.dim(2);
    const int ho = h + 2 * pad - k + 1, wo = w + 2 * pad - k + 1;
    cols = TensorT<S>({cin * k * k, ho * wo});
    S* out = cols.ptr();
    for (int c = 0; c < cin; ++c) {
        const S* src = in.ptr() + static_cast<std::size_t>(c) * h * w;
        for (int dy = 0; dy < k; ++dy) {
            for (int dx = 0; dx < k; ++dx) {
                S* row = out + (static_cast<std::size_t>(c) * k * k + dy * k + dx) *
                                   (static_cast<std::size_t>(ho) * wo);
                for (int y = 0; y < ho; ++y) {
                    const int sy = y + dy - pad;
                    if (sy < 0 || sy >= h) {
                        std::fill(row + static_cast<std::size_t>(y) * wo,
                                  row + static_cast<std::size_t>(y + 1) * wo, S(0));
                        continue;
                    }
                    for (int x = 0; x < wo; ++x) {
                        const int sx = x + dx - pad;
                        row[static_cast<std::size_t>(y) * wo + x] =
                            (sx < 0 || sx >= w) ? S(0) : src[static_cast<std::size_t>(sy) * w + sx];
                    }
                }
            }
        }
    }
}

// Adjoint of im2col: scatter-add columns back into an image.
template <class S>
void col2im(const TensorT<S>& cols, int cin, int h, int w, int k, int pad, TensorT<S>& img) {
    const int ho = h + 2 * pad - k + 1, wo = w + 2 * pad - k + 1;
    img = TensorT<S>({cin, h, w});
    for (int c = 0; c < cin; ++c) {
        S* dst = img.ptr() + static_cast<std::size_t>(c) * h * w;
        for (int dy = 0; dy < k; ++dy) {
            for (int dx = 0; dx < k; ++dx) {
                const S* row = cols.ptr() + (static_cast<std::size_t>(c) * k * k + dy * k + dx) *
                                                (static_cast<std::size_t>(ho) * wo);
                for (int y = 0; y < ho; ++y) {
                    const int sy = y + dy - pad;
                    if (sy < 0 || sy >= h) continue;
                    for (int x = 0; x < wo; ++x) {
                        const int sx = x + dx - pad;
                        if (sx < 0 || sx >= w) continue;
                        dst[static_cast<std::size_t>(sy) * w + sx] +=
                            row[static_cast<std::size_t>(y) * wo + x];
                    }
                }
            }
        }
    }
}

}  // namespace detail

// Same-size convolution, stride 1. weight is [Cout,Cin,k,k]; pad = (k-1)/2
// for the 3x3 and 1x1 cases used by the network.
template <class S>
TensorT<S> conv2d_forward(const TensorT<S>& input, const TensorT<S>& weight,
                          const TensorT<S>& bias) {
    check_shape(input.ndim() == 3, "conv2d: input must be [C,H,W], got " + input.shape_str());
    check_shape(weight.ndim() == 4, "conv2d: weight must be [Cout,Cin,k,k]");
    check_shape(weight.dim(2) == weight.dim(3), "conv2d: kernel must be square");
    const int cout = weight.dim(0), cin = weight.dim(1), k = weight.dim(2);
    const int pad = (k - 1) / 2;
    check_shape(k % 2 == 1, "conv2d: kernel size must be odd");
    check_shape(input.dim(0) == cin, "conv2d: input channels " + std::to_string(input.dim(0)) +
                                         " do not match weight C_in " + std::to_string(cin));
    check_shape(bias.ndim() == 1 && bias.dim(0) == cout, "conv2d: bias must be [Cout]");
    const int h = input.dim(1), w = input.dim(2);

    TensorT<S> cols;
    detail::im2col(input, k, pad, cols);
    TensorT<S> out({cout, h, w});
    detail::CMapRM<S> wm(weight.ptr(), cout, cin * k * k);
    detail::CMapRM<S> cm(cols.ptr(), cin * k * k, h * w);
    detail::MapRM<S> om(out.ptr(), cout, h * w);
    om.noalias() = wm * cm;
    for (int o = 0; o < cout; ++o) om.row(o).array() += bias[o];
    return out;
}

template <class S>
std::tuple<TensorT<S>, TensorT<S>, TensorT<S>> conv2d_backward(const TensorT<S>& gradOut,
                                                               const TensorT<S>& savedInput,
                                                               const TensorT<S>& weight) {
    check_shape(savedInput.ndim() == 3 && savedInput.numel() > 0,
                "conv2d_backward: missing saved forward input");
    const int cout = weight.dim(0), cin = weight.dim(1), k = weight.dim(2);
    const int pad = (k - 1) / 2;
    const int h = savedInput.dim(1), w = savedInput.dim(2);
    check_shape(gradOut.shape == std::vector<int>({cout, h, w}),
                "conv2d_backward: gradOut shape mismatch");

    TensorT<S> cols;
    detail::im2col(savedInput, k, pad, cols);
    detail::CMapRM<S> gym(gradOut.ptr(), cout, h * w);
    detail::CMapRM<S> cm(cols.ptr(), cin * k * k, h * w);
    detail::CMapRM<S> wm(weight.ptr(), cout, cin * k * k);

    TensorT<S> gradWeight(weight.shape);
    detail::MapRM<S> gwm(gradWeight.ptr(), cout, cin * k * k);
    gwm.noalias() = gym * cm.transpose();

    TensorT<S> gradBias({cout});
    for (int o = 0; o < cout; ++o) gradBias[o] = gym.row(o).sum();

    TensorT<S> gradCols({cin * k * k, h * w});
    detail::MapRM<S> gcm(gradCols.ptr(), cin * k * k, h * w);
    gcm.noalias() = wm.transpose() * gym;
    TensorT<S> gradInput;
    detail::col2im(gradCols, cin, h, w, k, pad, gradInput);
    return {std::move(gradInput), std::move(gradWeight), std::move(gradBias)};
}

// 2x2 max-pool, stride 2. Binary input stays binary. Ties go to the lowest
// flat index within the window.
template <class S>
std::pair<TensorT<S>, PoolIndices> maxpool2_forward(const TensorT<S>& input) {
    check_shape(input.ndim() == 3, "maxpool2: input must be [C,H,W]");
    const int c = input.dim(0), h = input.dim(1), w = input.dim(2);
    check_shape(h % 2 == 0 && w % 2 == 0,
                "maxpool2: spatial dims must be even, got " + input.shape_str());
    TensorT<S> out({c, h / 2, w / 2});
    PoolIndices pi;
    pi.shape = out.shape;
    pi.idx.resize(static_cast<std::size_t>(out.numel()));
    std::size_t o = 0;
    for (int ch = 0; ch < c; ++ch) {
        for (int y = 0; y < h; y += 2) {
            for (int x = 0; x < w; x += 2, ++o) {
                const S v00 = input.at3(ch, y, x), v01 = input.at3(ch, y, x + 1);
                const S v10 = input.at3(ch, y + 1, x), v11 = input.at3(ch, y + 1, x + 1);
                S best = v00;
                int bi = 0;
                if (v01 > best) { best = v01; bi = 1; }
                if (v10 > best) { best = v10; bi = 2; }
                if (v11 > best) { best = v11; bi = 3; }
                out[static_cast<std::int64_t>(o)] = best;
                pi.idx[o] = static_cast<std::uint8_t>(bi);
            }
        }
    }
    return {std::move(out), std::move(pi)};
}

template <class S>
TensorT<S> maxpool2_backward(const TensorT<S>& gradOut, const PoolIndices& indices) {
    check_shape(gradOut.shape == indices.shape, "maxpool2_backward: shape mismatch");
    const int c = gradOut.dim(0), ho = gradOut.dim(1), wo = gradOut.dim(2);
    TensorT<S> gi({c, ho * 2, wo * 2});
    std::size_t o = 0;
    for (int ch = 0; ch < c; ++ch) {
        for (int y = 0; y < ho; ++y) {
            for (int x = 0; x < wo; ++x, ++o) {
                const int bi = indices.idx[o];
                gi.at3(ch, y * 2 + bi / 2, x * 2 + bi % 2) = gradOut[static_cast<std::int64_t>(o)];
            }
        }
    }
    return gi;
}

// Transposed convolution, stride 2, output exactly [Cout,2H,2W].
// weight is [Cin,Cout,k,k]; k=2 with pad 0 is the classic non-overlapping
// up-conv, k=3 with pad 1 (and implicit output padding 1) overlaps.
template <class S>
TensorT<S> tconv2_forward(const TensorT<S>& input, const TensorT<S>& weight,
                          const TensorT<S>& bias) {
    check_shape(input.ndim() == 3, "tconv2: input must be [C,H,W]");
    check_shape(weight.ndim() == 4 && weight.dim(2) == weight.dim(3),
                "tconv2: weight must be [Cin,Cout,k,k]");
    const int cin = weight.dim(0), cout = weight.dim(1), k = weight.dim(2);
    const int pad = (k - 1) / 2;
    check_shape(input.dim(0) == cin, "tconv2: input channels do not match weight C_in");
    check_shape(bias.ndim() == 1 && bias.dim(0) == cout, "tconv2: bias must be [Cout]");
    const int h = input.dim(1), w = input.dim(2);
    const int ho = 2 * h, wo = 2 * w;

    // cols[Cout*k*k, H*W] = Wmat^T * in_mat, then scatter with stride 2.
    TensorT<S> cols({cout * k * k, h * w});
    detail::CMapRM<S> wm(weight.ptr(), cin, cout * k * k);
    detail::CMapRM<S> im(input.ptr(), cin, h * w);
    detail::MapRM<S> cm(cols.ptr(), cout * k * k, h * w);
    cm.noalias() = wm.transpose() * im;

    TensorT<S> out({cout, ho, wo});
    for (int o = 0; o < cout; ++o) {
        S* dst = out.ptr() + static_cast<std::size_t>(o) * ho * wo;
        std::fill(dst, dst + static_cast<std::size_t>(ho) * wo, bias[o]);
        for (int dy = 0; dy < k; ++dy) {
            for (int dx = 0; dx < k; ++dx) {
                const S* row = cols.ptr() + (static_cast<std::size_t>(o) * k * k + dy * k + dx) *
                                                (static_cast<std::size_t>(h) * w);
                const int oy0 = dy - pad, ox0 = dx - pad;
                for (int y = 0; y < h; ++y) {
                    const int oy = 2 * y + oy0;
                    if (oy < 0 || oy >= ho) continue;
                    for (int x = 0; x < w; ++x) {
                        const int ox = 2 * x + ox0;
                        if (ox < 0 || ox >= wo) continue;
                        dst[static_cast<std::size_t>(oy) * wo + ox] +=
                            row[static_cast<std::size_t>(y) * w + x];
                    }
                }
            }
        }
    }
    return out;
}

template <class S>
std::tuple<TensorT<S>, TensorT<S>, TensorT<S>> tconv2_backward(const TensorT<S>& gradOut,
                                                               const TensorT<S>& savedInput,
                                                               const TensorT<S>& weight) {
    check_shape(savedInput.ndim() == 3 && savedInput.numel() > 0,
                "tconv2_backward: missing saved forward input");
    const int cin = weight.dim(0), cout = weight.dim(1), k = weight.dim(2);
    const int pad = (k - 1) / 2;
    const int h = savedInput.dim(1), w = savedInput.dim(2);
    const int ho = 2 * h, wo = 2 * w;
    check_shape(gradOut.shape == std::vector<int>({cout, ho, wo}),
                "tconv2_backward: gradOut shape mismatch");

    // Gather the cotangent of each scattered column entry.
    TensorT<S> gcols({cout * k * k, h * w});
    for (int o = 0; o < cout; ++o) {
        const S* src = gradOut.ptr() + static_cast<std::size_t>(o) * ho * wo;
        for (int dy = 0; dy < k; ++dy) {
            for (int dx = 0; dx < k; ++dx) {
                S* row = gcols.ptr() + (static_cast<std::size_t>(o) * k * k + dy * k + dx) *
                                           (static_cast<std::size_t>(h) * w);
                const int oy0 = dy - pad, ox0 = dx - pad;
                for (int y = 0; y < h; ++y) {
                    const int oy = 2 * y + oy0;
                    for (int x = 0; x < w; ++x) {
                        const int ox = 2 * x + ox0;
                        row[static_cast<std::size_t>(y) * w + x] =
                            (oy < 0 || oy >= ho || ox < 0 || ox >= wo)
                                ? S(0)
                                : src[static_cast<std::size_t>(oy) * wo + ox];
                    }
                }
            }
        }
    }

    detail::CMapRM<S> wm(weight.ptr(), cin, cout * k * k);
    detail::CMapRM<S> gcm(gcols.ptr(), cout * k * k, h * w);
    detail::CMapRM<S> im(savedInput.ptr(), cin, h * w);

    TensorT<S> gradInput({cin, h, w});
    detail::MapRM<S> gim(gradInput.ptr(), cin, h * w);
    gim.noalias() = wm * gcm;

    TensorT<S> gradWeight(weight.shape);
    detail::MapRM<S> gwm(gradWeight.ptr(), cin, cout * k * k);
    gwm.noalias() = im * gcm.transpose();

    TensorT<S> gradBias({cout});
    for (int o = 0; o < cout; ++o) {
        const S* src = gradOut.ptr() + static_cast<std::size_t>(o) * ho * wo;
        S s = 0;
        for (std::size_t i = 0; i < static_cast<std::size_t>(ho) * wo; ++i) s += src[i];
        gradBias[o] = s;
    }
    return {std::move(gradInput), std::move(gradWeight), std::move(gradBias)};
}

template <class S>
TensorT<S> concat_channels(const TensorT<S>& a, const TensorT<S>& b) {
    check_shape(a.ndim() == 3 && b.ndim() == 3, "concat: inputs must be [C,H,W]");
    check_shape(a.dim(1) == b.dim(1) && a.dim(2) == b.dim(2),
                "concat: spatial mismatch " + a.shape_str() + " vs " + b.shape_str());
    TensorT<S> out({a.dim(0) + b.dim(0), a.dim(1), a.dim(2)});
    std::copy(a.data.begin(), a.data.end(), out.data.begin());
    std::copy(b.data.begin(), b.data.end(), out.data.begin() + a.numel());
    return out;
}

template <class S>
std::pair<TensorT<S>, TensorT<S>> split_channels(const TensorT<S>& t, int c1) {
    check_shape(t.ndim() == 3 && c1 > 0 && c1 < t.dim(0), "split: bad channel split");
    TensorT<S> a({c1, t.dim(1), t.dim(2)});
    TensorT<S> b({t.dim(0) - c1, t.dim(1), t.dim(2)});
    std::copy(t.data.begin(), t.data.begin() + a.numel(), a.data.begin());
    std::copy(t.data.begin() + a.numel(), t.data.end(), b.data.begin());
    return {std::move(a), std::move(b)};
}

// Pixel-wise softmax cross-entropy over class logits. Loss is the plain sum
// over non-ignored pixels; any batch normalization is the caller's business.
// Returns the analytic softmax-minus-onehot gradient.
template <class S>
std::pair<S, TensorT<S>> softmax_ce(const TensorT<S>& logits, const ClassMap& target,
                                    std::optional<std::uint8_t> ignoreLabel = kIgnoreLabel) {
    check_shape(logits.ndim() == 3, "softmax_ce: logits must be [C,H,W]");
    const int c = logits.dim(0), h = logits.dim(1), w = logits.dim(2);
    check_shape(target.h == h && target.w == w, "softmax_ce: target shape mismatch");
    TensorT<S> grad({c, h, w});
    S loss = 0;
    std::vector<S> p(static_cast<std::size_t>(c));
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            const std::uint8_t t = target.at(y, x);
            if (ignoreLabel && t == *ignoreLabel) continue;
            if (t >= c)
                throw std::invalid_argument("softmax_ce: target class " + std::to_string(int(t)) +
                                            " >= numClasses " + std::to_string(c));
            S mx = logits.at3(0, y, x);
            for (int k = 1; k < c; ++k) mx = std::max(mx, logits.at3(k, y, x));
            S z = 0;
            for (int k = 0; k < c; ++k) {
                p[static_cast<std::size_t>(k)] = std::exp(logits.at3(k, y, x) - mx);
                z += p[static_cast<std::size_t>(k)];
            }
            loss -= std::log(p[t] / z);
            for (int k = 0; k < c; ++k)
                grad.at3(k, y, x) = p[static_cast<std::size_t>(k)] / z - (k == t ? S(1) : S(0));
        }
    }
    return {loss, std::move(grad)};
}

}  // namespace evseg
