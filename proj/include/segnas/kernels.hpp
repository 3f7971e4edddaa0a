#pragma once

#include <cmath>
#include <limits>
#include <stdexcept>

#include "segnas/tensor.hpp"

namespace segnas {

// Raw numeric kernels shared by the tape ops. All convolutions use "same"
// padding: out = ceil(in / stride).

inline int same_out_dim(int in, int stride) { return (in + stride - 1) / stride; }

inline int same_pad(int in, int k, int stride, int dilation) {
    int eff_k = dilation * (k - 1) + 1;
    int out = same_out_dim(in, stride);
    int pad_total = std::max(0, (out - 1) * stride + eff_k - in);
    return pad_total / 2;  // left/top pad; asymmetric remainder goes right/bottom
}

struct ConvSpec {
    int kh = 3, kw = 3;
    int stride = 1;
    int dilation = 1;
    int groups = 1;
};

// x: (N, Ci, H, W); w: (Co, Ci/groups, kh, kw); b: (Co); y: (N, Co, Ho, Wo)
template <typename T>
void conv2d_forward(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>* b,
                    const ConvSpec& cs, Tensor<T>& y) {
    const int N = x.dim(0), Ci = x.dim(1), H = x.dim(2), W = x.dim(3);
    const int Co = w.dim(0), Cg = w.dim(1);
    const int Ho = y.dim(2), Wo = y.dim(3);
    if (Ci % cs.groups != 0 || Co % cs.groups != 0)
        throw std::invalid_argument("conv2d: channel counts not divisible by groups");
    if (Cg != Ci / cs.groups)
        throw std::invalid_argument("conv2d: weight shape inconsistent with groups");
    const int ph = same_pad(H, cs.kh, cs.stride, cs.dilation);
    const int pw = same_pad(W, cs.kw, cs.stride, cs.dilation);
    const int co_per_g = Co / cs.groups;
    y.fill(T(0));
    for (int n = 0; n < N; ++n) {
        for (int g = 0; g < cs.groups; ++g) {
            for (int coi = 0; coi < co_per_g; ++coi) {
                const int co = g * co_per_g + coi;
                for (int cgi = 0; cgi < Cg; ++cgi) {
                    const int ci = g * Cg + cgi;
                    const T* xin = x.data() + x.idx4(n, ci, 0, 0);
                    const T* wk = w.data() +
                                  ((static_cast<std::size_t>(co) * Cg + cgi) * cs.kh) * cs.kw;
                    for (int kh = 0; kh < cs.kh; ++kh) {
                        for (int kw2 = 0; kw2 < cs.kw; ++kw2) {
                            const T wv = wk[kh * cs.kw + kw2];
                            if (wv == T(0)) continue;
                            for (int oh = 0; oh < Ho; ++oh) {
                                const int ih = oh * cs.stride - ph + kh * cs.dilation;
                                if (ih < 0 || ih >= H) continue;
                                T* yrow = y.data() + y.idx4(n, co, oh, 0);
                                const T* xrow = xin + static_cast<std::size_t>(ih) * W;
                                for (int ow = 0; ow < Wo; ++ow) {
                                    const int iw = ow * cs.stride - pw + kw2 * cs.dilation;
                                    if (iw < 0 || iw >= W) continue;
                                    yrow[ow] += wv * xrow[iw];
                                }
                            }
                        }
                    }
                }
                if (b) {
                    const T bv = (*b)[co];
                    T* ybase = y.data() + y.idx4(n, co, 0, 0);
                    for (int i = 0; i < Ho * Wo; ++i) ybase[i] += bv;
                }
            }
        }
    }
}

template <typename T>
void conv2d_backward(const Tensor<T>& x, const Tensor<T>& w, const ConvSpec& cs,
                     const Tensor<T>& gy, Tensor<T>* gx, Tensor<T>* gw, Tensor<T>* gb) {
    const int N = x.dim(0), Ci = x.dim(1), H = x.dim(2), W = x.dim(3);
    const int Co = w.dim(0), Cg = w.dim(1);
    const int Ho = gy.dim(2), Wo = gy.dim(3);
    const int ph = same_pad(H, cs.kh, cs.stride, cs.dilation);
    const int pw = same_pad(W, cs.kw, cs.stride, cs.dilation);
    const int co_per_g = Co / cs.groups;
    for (int n = 0; n < N; ++n) {
        for (int g = 0; g < cs.groups; ++g) {
            for (int coi = 0; coi < co_per_g; ++coi) {
                const int co = g * co_per_g + coi;
                const T* grow_base = gy.data() + gy.idx4(n, co, 0, 0);
                if (gb) {
                    T acc = T(0);
                    for (int i = 0; i < Ho * Wo; ++i) acc += grow_base[i];
                    (*gb)[co] += acc;
                }
                for (int cgi = 0; cgi < Cg; ++cgi) {
                    const int ci = g * Cg + cgi;
                    const std::size_t wbase =
                        ((static_cast<std::size_t>(co) * Cg + cgi) * cs.kh) * cs.kw;
                    for (int kh = 0; kh < cs.kh; ++kh) {
                        for (int kw2 = 0; kw2 < cs.kw; ++kw2) {
                            const T wv = w[wbase + kh * cs.kw + kw2];
                            T gw_acc = T(0);
                            for (int oh = 0; oh < Ho; ++oh) {
                                const int ih = oh * cs.stride - ph + kh * cs.dilation;
                                if (ih < 0 || ih >= H) continue;
                                const T* grow = grow_base + static_cast<std::size_t>(oh) * Wo;
                                const T* xrow = x.data() + x.idx4(n, ci, ih, 0);
                                T* gxrow = gx ? gx->data() + gx->idx4(n, ci, ih, 0) : nullptr;
                                for (int ow = 0; ow < Wo; ++ow) {
                                    const int iw = ow * cs.stride - pw + kw2 * cs.dilation;
                                    if (iw < 0 || iw >= W) continue;
                                    const T g2 = grow[ow];
                                    gw_acc += g2 * xrow[iw];
                                    if (gxrow) gxrow[iw] += wv * g2;
                                }
                            }
                            if (gw) (*gw)[wbase + kh * cs.kw + kw2] += gw_acc;
                        }
                    }
                }
            }
        }
    }
}

// 3x3 pooling, same padding. Average pooling divides by the count of valid
// (in-bounds) cells under the window.
template <typename T>
void avgpool_forward(const Tensor<T>& x, int k, int stride, Tensor<T>& y) {
    const int N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    const int Ho = y.dim(2), Wo = y.dim(3);
    const int ph = same_pad(H, k, stride, 1), pw = same_pad(W, k, stride, 1);
    for (int n = 0; n < N; ++n)
        for (int c = 0; c < C; ++c)
            for (int oh = 0; oh < Ho; ++oh)
                for (int ow = 0; ow < Wo; ++ow) {
                    T acc = T(0);
                    int cnt = 0;
                    for (int kh = 0; kh < k; ++kh)
                        for (int kw2 = 0; kw2 < k; ++kw2) {
                            const int ih = oh * stride - ph + kh;
                            const int iw = ow * stride - pw + kw2;
                            if (ih < 0 || ih >= H || iw < 0 || iw >= W) continue;
                            acc += x.at4(n, c, ih, iw);
                            ++cnt;
                        }
                    y.at4(n, c, oh, ow) = acc / static_cast<T>(cnt);
                }
}

template <typename T>
void avgpool_backward(const Tensor<T>& x, int k, int stride, const Tensor<T>& gy,
                      Tensor<T>& gx) {
    const int H = x.dim(2), W = x.dim(3);
    const int N = x.dim(0), C = x.dim(1);
    const int Ho = gy.dim(2), Wo = gy.dim(3);
    const int ph = same_pad(H, k, stride, 1), pw = same_pad(W, k, stride, 1);
    for (int n = 0; n < N; ++n)
        for (int c = 0; c < C; ++c)
            for (int oh = 0; oh < Ho; ++oh)
                for (int ow = 0; ow < Wo; ++ow) {
                    int cnt = 0;
                    for (int kh = 0; kh < k; ++kh)
                        for (int kw2 = 0; kw2 < k; ++kw2) {
                            const int ih = oh * stride - ph + kh;
                            const int iw = ow * stride - pw + kw2;
                            if (ih >= 0 && ih < H && iw >= 0 && iw < W) ++cnt;
                        }
                    const T g = gy.at4(n, c, oh, ow) / static_cast<T>(cnt);
                    for (int kh = 0; kh < k; ++kh)
                        for (int kw2 = 0; kw2 < k; ++kw2) {
                            const int ih = oh * stride - ph + kh;
                            const int iw = ow * stride - pw + kw2;
                            if (ih >= 0 && ih < H && iw >= 0 && iw < W)
                                gx.at4(n, c, ih, iw) += g;
                        }
                }
}

// Max pooling routes the gradient to the first maximum in scan order.
template <typename T>
void maxpool_forward(const Tensor<T>& x, int k, int stride, Tensor<T>& y,
                     std::vector<std::size_t>& argmax) {
    const int N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    const int Ho = y.dim(2), Wo = y.dim(3);
    const int ph = same_pad(H, k, stride, 1), pw = same_pad(W, k, stride, 1);
    argmax.assign(y.numel(), 0);
    std::size_t oi = 0;
    for (int n = 0; n < N; ++n)
        for (int c = 0; c < C; ++c)
            for (int oh = 0; oh < Ho; ++oh)
                for (int ow = 0; ow < Wo; ++ow, ++oi) {
                    T best = -std::numeric_limits<T>::infinity();
                    std::size_t best_i = 0;
                    for (int kh = 0; kh < k; ++kh)
                        for (int kw2 = 0; kw2 < k; ++kw2) {
                            const int ih = oh * stride - ph + kh;
                            const int iw = ow * stride - pw + kw2;
                            if (ih < 0 || ih >= H || iw < 0 || iw >= W) continue;
                            const T v = x.at4(n, c, ih, iw);
                            if (v > best) {
                                best = v;
                                best_i = x.idx4(n, c, ih, iw);
                            }
                        }
                    y[oi] = best;
                    argmax[oi] = best_i;
                }
}

// Nearest-neighbor resize to an arbitrary (usually larger) spatial size.
template <typename T>
void resize_nearest_forward(const Tensor<T>& x, Tensor<T>& y) {
    const int N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    const int Ho = y.dim(2), Wo = y.dim(3);
    for (int n = 0; n < N; ++n)
        for (int c = 0; c < C; ++c)
            for (int oh = 0; oh < Ho; ++oh) {
                const int ih = std::min(H - 1, oh * H / Ho);
                for (int ow = 0; ow < Wo; ++ow) {
                    const int iw = std::min(W - 1, ow * W / Wo);
                    y.at4(n, c, oh, ow) = x.at4(n, c, ih, iw);
                }
            }
}

template <typename T>
void resize_nearest_backward(const Tensor<T>& x, const Tensor<T>& gy, Tensor<T>& gx) {
    const int H = x.dim(2), W = x.dim(3);
    const int N = x.dim(0), C = x.dim(1);
    const int Ho = gy.dim(2), Wo = gy.dim(3);
    for (int n = 0; n < N; ++n)
        for (int c = 0; c < C; ++c)
            for (int oh = 0; oh < Ho; ++oh) {
                const int ih = std::min(H - 1, oh * H / Ho);
                for (int ow = 0; ow < Wo; ++ow) {
                    const int iw = std::min(W - 1, ow * W / Wo);
                    gx.at4(n, c, ih, iw) += gy.at4(n, c, oh, ow);
                }
            }
}

// Bilinear resize (align_corners=false convention), used by the output head.
template <typename T>
void resize_bilinear_forward(const Tensor<T>& x, Tensor<T>& y) {
    const int N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    const int Ho = y.dim(2), Wo = y.dim(3);
    const double sh = static_cast<double>(H) / Ho, sw = static_cast<double>(W) / Wo;
    for (int oh = 0; oh < Ho; ++oh) {
        double fh = std::max(0.0, (oh + 0.5) * sh - 0.5);
        int h0 = std::min(H - 1, static_cast<int>(fh));
        int h1 = std::min(H - 1, h0 + 1);
        double wh = fh - h0;
        for (int ow = 0; ow < Wo; ++ow) {
            double fw = std::max(0.0, (ow + 0.5) * sw - 0.5);
            int w0 = std::min(W - 1, static_cast<int>(fw));
            int w1 = std::min(W - 1, w0 + 1);
            double ww = fw - w0;
            for (int n = 0; n < N; ++n)
                for (int c = 0; c < C; ++c) {
                    double v = (1 - wh) * (1 - ww) * x.at4(n, c, h0, w0) +
                               (1 - wh) * ww * x.at4(n, c, h0, w1) +
                               wh * (1 - ww) * x.at4(n, c, h1, w0) +
                               wh * ww * x.at4(n, c, h1, w1);
                    y.at4(n, c, oh, ow) = static_cast<T>(v);
                }
        }
    }
}

template <typename T>
void resize_bilinear_backward(const Tensor<T>& x, const Tensor<T>& gy, Tensor<T>& gx) {
    const int N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    const int Ho = gy.dim(2), Wo = gy.dim(3);
    const double sh = static_cast<double>(H) / Ho, sw = static_cast<double>(W) / Wo;
    for (int oh = 0; oh < Ho; ++oh) {
        double fh = std::max(0.0, (oh + 0.5) * sh - 0.5);
        int h0 = std::min(H - 1, static_cast<int>(fh));
        int h1 = std::min(H - 1, h0 + 1);
        double wh = fh - h0;
        for (int ow = 0; ow < Wo; ++ow) {
            double fw = std::max(0.0, (ow + 0.5) * sw - 0.5);
            int w0 = std::min(W - 1, static_cast<int>(fw));
            int w1 = std::min(W - 1, w0 + 1);
            double ww = fw - w0;
            for (int n = 0; n < N; ++n)
                for (int c = 0; c < C; ++c) {
                    const T g = gy.at4(n, c, oh, ow);
                    gx.at4(n, c, h0, w0) += static_cast<T>((1 - wh) * (1 - ww)) * g;
                    gx.at4(n, c, h0, w1) += static_cast<T>((1 - wh) * ww) * g;
                    gx.at4(n, c, h1, w0) += static_cast<T>(wh * (1 - ww)) * g;
                    gx.at4(n, c, h1, w1) += static_cast<T>(wh * ww) * g;
                }
        }
    }
}

}  // namespace segnas
