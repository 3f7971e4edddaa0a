#pragma once

#include <cmath>
#include <functional>
#include <memory>
#include <stdexcept>
#include <string>
#include <utility>
#include <deque>
#include <vector>

#include "segnas/kernels.hpp"
#include "segnas/tensor.hpp"

namespace segnas {

// Reverse-mode autodiff tape. Nodes are created in topological order by
// construction; backward replays the recorded closures in reverse.
//
// Single-threaded per instance. Grads are allocated lazily at backward time.
template <typename T>
class Tape {
public:
    using Ref = int;

    Ref leaf(Tensor<T> value, bool requires_grad = true, std::string name = "") {
        nodes_.push_back(Node{std::move(value), {}, nullptr, requires_grad, std::move(name)});
        return static_cast<Ref>(nodes_.size() - 1);
    }

    Ref constant(Tensor<T> value, std::string name = "") {
        return leaf(std::move(value), false, std::move(name));
    }

    const Tensor<T>& value(Ref r) const { return nodes_.at(r).value; }
    Tensor<T>& value(Ref r) { return nodes_.at(r).value; }
    const Tensor<T>& grad(Ref r) const {
        if (nodes_.at(r).grad.numel() == 0)
            throw std::logic_error("grad requested before backward");
        return nodes_.at(r).grad;
    }
    std::size_t size() const { return nodes_.size(); }

    // ---- elementwise / structural ops ----

    Ref identity(Ref x) {
        Ref out = leaf(value(x), false, "skip");
        node(out).backward = [this, x, out]() { axpy(T(1), grad_of(out), grad_of(x)); };
        return out;
    }

    Ref zeros(const Shape& shape) { return constant(Tensor<T>(shape), "zero"); }

    Ref relu(Ref x) {
        Tensor<T> y = value(x);
        for (T& v : y.values()) v = v > T(0) ? v : T(0);
        Ref out = leaf(std::move(y), false, "relu");
        node(out).backward = [this, x, out]() {
            const auto& xv = value(x);
            const auto& g = grad_of(out);
            auto& gx = grad_of(x);
            for (std::size_t i = 0; i < xv.numel(); ++i)
                if (xv[i] > T(0)) gx[i] += g[i];
        };
        return out;
    }

    Ref add(Ref a, Ref b) {
        check_same_shape(a, b, "add");
        Tensor<T> y = value(a);
        const auto& bv = value(b);
        for (std::size_t i = 0; i < y.numel(); ++i) y[i] += bv[i];
        Ref out = leaf(std::move(y), false, "add");
        node(out).backward = [this, a, b, out]() {
            axpy(T(1), grad_of(out), grad_of(a));
            axpy(T(1), grad_of(out), grad_of(b));
        };
        return out;
    }

    Ref add_n(const std::vector<Ref>& xs) {
        if (xs.empty()) throw std::invalid_argument("add_n: empty input set");
        Tensor<T> y = value(xs[0]);
        for (std::size_t k = 1; k < xs.size(); ++k) {
            check_same_shape(xs[0], xs[k], "add_n");
            const auto& v = value(xs[k]);
            for (std::size_t i = 0; i < y.numel(); ++i) y[i] += v[i];
        }
        Ref out = leaf(std::move(y), false, "add_n");
        node(out).backward = [this, xs, out]() {
            for (Ref x : xs) axpy(T(1), grad_of(out), grad_of(x));
        };
        return out;
    }

    Ref scale(Ref x, T s) {
        Tensor<T> y = value(x);
        for (T& v : y.values()) v *= s;
        Ref out = leaf(std::move(y), false, "scale");
        node(out).backward = [this, x, s, out]() { axpy(s, grad_of(out), grad_of(x)); };
        return out;
    }

    // y = x * w[i] where w is a 1-d tensor on the tape (e.g. softmaxed alpha).
    Ref scale_by_elem(Ref x, Ref w, int i) {
        const T wv = value(w)[static_cast<std::size_t>(i)];
        Tensor<T> y = value(x);
        for (T& v : y.values()) v *= wv;
        Ref out = leaf(std::move(y), false, "scale_by_elem");
        node(out).backward = [this, x, w, i, wv, out]() {
            const auto& g = grad_of(out);
            axpy(wv, g, grad_of(x));
            const auto& xv = value(x);
            T acc = T(0);
            for (std::size_t k = 0; k < xv.numel(); ++k) acc += g[k] * xv[k];
            grad_of(w)[static_cast<std::size_t>(i)] += acc;
        };
        return out;
    }

    Ref softmax1d(Ref x) {
        const auto& xv = value(x);
        Tensor<T> y(xv.shape());
        T mx = xv[0];
        for (const T& v : xv.values()) mx = std::max(mx, v);
        T denom = T(0);
        for (std::size_t i = 0; i < xv.numel(); ++i) {
            y[i] = std::exp(xv[i] - mx);
            denom += y[i];
        }
        for (T& v : y.values()) v /= denom;
        Ref out = leaf(std::move(y), false, "softmax1d");
        node(out).backward = [this, x, out]() {
            const auto& s = value(out);
            const auto& g = grad_of(out);
            T dot = T(0);
            for (std::size_t i = 0; i < s.numel(); ++i) dot += g[i] * s[i];
            auto& gx = grad_of(x);
            for (std::size_t i = 0; i < s.numel(); ++i) gx[i] += s[i] * (g[i] - dot);
        };
        return out;
    }

    // Per-channel learned affine y[n,c,h,w] = x[n,c,h,w]*scale[c] + bias[c].
    Ref channel_affine(Ref x, Ref scale_p, Ref bias_p) {
        const auto& xv = value(x);
        const auto& sv = value(scale_p);
        const auto& bv = value(bias_p);
        const int C = xv.dim(1);
        if (static_cast<int>(sv.numel()) != C || static_cast<int>(bv.numel()) != C)
            throw std::invalid_argument("channel_affine: scale/bias length != C");
        Tensor<T> y(xv.shape());
        const int plane = xv.dim(2) * xv.dim(3);
        for (int n = 0; n < xv.dim(0); ++n)
            for (int c = 0; c < C; ++c) {
                const T* xp = xv.data() + xv.idx4(n, c, 0, 0);
                T* yp = y.data() + y.idx4(n, c, 0, 0);
                for (int i = 0; i < plane; ++i) yp[i] = xp[i] * sv[c] + bv[c];
            }
        Ref out = leaf(std::move(y), false, "channel_affine");
        node(out).backward = [this, x, scale_p, bias_p, out]() {
            const auto& xv2 = value(x);
            const auto& sv2 = value(scale_p);
            const auto& g = grad_of(out);
            auto& gx = grad_of(x);
            auto& gs = grad_of(scale_p);
            auto& gb = grad_of(bias_p);
            const int C = xv2.dim(1);
            const int plane = xv2.dim(2) * xv2.dim(3);
            for (int n = 0; n < xv2.dim(0); ++n)
                for (int c = 0; c < C; ++c) {
                    const std::size_t base = xv2.idx4(n, c, 0, 0);
                    T acc_s = T(0), acc_b = T(0);
                    for (int i = 0; i < plane; ++i) {
                        const T gi = g[base + i];
                        gx[base + i] += gi * sv2[c];
                        acc_s += gi * xv2[base + i];
                        acc_b += gi;
                    }
                    gs[c] += acc_s;
                    gb[c] += acc_b;
                }
        };
        return out;
    }

    // ---- conv / pool / resize ----

    Ref conv2d(Ref x, Ref w, Ref b, const ConvSpec& cs) {
        const auto& xv = value(x);
        const auto& wv = value(w);
        if (xv.shape().size() != 4 || wv.shape().size() != 4)
            throw std::invalid_argument("conv2d expects 4-d input and weight");
        const int Ci = xv.dim(1);
        if (wv.dim(1) * cs.groups != Ci)
            throw std::invalid_argument(
                "conv2d: input channels " + std::to_string(Ci) + " incompatible with weight " +
                shape_str(wv.shape()) + " groups=" + std::to_string(cs.groups));
        Shape yshape{xv.dim(0), wv.dim(0), same_out_dim(xv.dim(2), cs.stride),
                     same_out_dim(xv.dim(3), cs.stride)};
        Tensor<T> y(yshape);
        conv2d_forward(xv, wv, b >= 0 ? &value(b) : nullptr, cs, y);
        Ref out = leaf(std::move(y), false, "conv2d");
        node(out).backward = [this, x, w, b, cs, out]() {
            conv2d_backward(value(x), value(w), cs, grad_of(out), &grad_of(x), &grad_of(w),
                            b >= 0 ? &grad_of(b) : nullptr);
        };
        return out;
    }

    Ref avgpool(Ref x, int k, int stride) {
        const auto& xv = value(x);
        Shape yshape{xv.dim(0), xv.dim(1), same_out_dim(xv.dim(2), stride),
                     same_out_dim(xv.dim(3), stride)};
        Tensor<T> y(yshape);
        avgpool_forward(xv, k, stride, y);
        Ref out = leaf(std::move(y), false, "avgpool");
        node(out).backward = [this, x, k, stride, out]() {
            avgpool_backward(value(x), k, stride, grad_of(out), grad_of(x));
        };
        return out;
    }

    Ref maxpool(Ref x, int k, int stride) {
        const auto& xv = value(x);
        Shape yshape{xv.dim(0), xv.dim(1), same_out_dim(xv.dim(2), stride),
                     same_out_dim(xv.dim(3), stride)};
        Tensor<T> y(yshape);
        auto argmax = std::make_shared<std::vector<std::size_t>>();
        maxpool_forward(xv, k, stride, y, *argmax);
        Ref out = leaf(std::move(y), false, "maxpool");
        node(out).backward = [this, x, argmax, out]() {
            const auto& g = grad_of(out);
            auto& gx = grad_of(x);
            for (std::size_t i = 0; i < g.numel(); ++i) gx[(*argmax)[i]] += g[i];
        };
        return out;
    }

    Ref resize_nearest(Ref x, int Ho, int Wo) {
        const auto& xv = value(x);
        Tensor<T> y(Shape{xv.dim(0), xv.dim(1), Ho, Wo});
        resize_nearest_forward(xv, y);
        Ref out = leaf(std::move(y), false, "resize_nearest");
        node(out).backward = [this, x, out]() {
            resize_nearest_backward(value(x), grad_of(out), grad_of(x));
        };
        return out;
    }

    Ref resize_bilinear(Ref x, int Ho, int Wo) {
        const auto& xv = value(x);
        Tensor<T> y(Shape{xv.dim(0), xv.dim(1), Ho, Wo});
        resize_bilinear_forward(xv, y);
        Ref out = leaf(std::move(y), false, "resize_bilinear");
        node(out).backward = [this, x, out]() {
            resize_bilinear_backward(value(x), grad_of(out), grad_of(x));
        };
        return out;
    }

    // ---- channel select / merge (partial channel connection) ----

    Ref gather_channels(Ref x, std::vector<int> idx) {
        const auto& xv = value(x);
        Tensor<T> y(Shape{xv.dim(0), static_cast<int>(idx.size()), xv.dim(2), xv.dim(3)});
        const int plane = xv.dim(2) * xv.dim(3);
        for (int n = 0; n < xv.dim(0); ++n)
            for (std::size_t k = 0; k < idx.size(); ++k)
                std::copy_n(xv.data() + xv.idx4(n, idx[k], 0, 0), plane,
                            y.data() + y.idx4(n, static_cast<int>(k), 0, 0));
        Ref out = leaf(std::move(y), false, "gather_channels");
        node(out).backward = [this, x, idx = std::move(idx), out]() {
            const auto& g = grad_of(out);
            auto& gx = grad_of(x);
            const auto& xv2 = value(x);
            const int plane = xv2.dim(2) * xv2.dim(3);
            for (int n = 0; n < xv2.dim(0); ++n)
                for (std::size_t k = 0; k < idx.size(); ++k) {
                    const T* gp = g.data() + g.idx4(n, static_cast<int>(k), 0, 0);
                    T* gxp = gx.data() + gx.idx4(n, idx[k], 0, 0);
                    for (int i = 0; i < plane; ++i) gxp[i] += gp[i];
                }
        };
        return out;
    }

    // out[c] = processed channel if c in idx (in order), else x[c] untouched.
    Ref merge_channels(Ref x, Ref processed, std::vector<int> idx) {
        const auto& xv = value(x);
        const auto& pv = value(processed);
        if (pv.dim(1) != static_cast<int>(idx.size()))
            throw std::invalid_argument("merge_channels: processed channels != |idx|");
        if (pv.dim(2) != xv.dim(2) || pv.dim(3) != xv.dim(3))
            throw std::invalid_argument("merge_channels: spatial mismatch");
        Tensor<T> y = xv;
        const int plane = xv.dim(2) * xv.dim(3);
        for (int n = 0; n < xv.dim(0); ++n)
            for (std::size_t k = 0; k < idx.size(); ++k)
                std::copy_n(pv.data() + pv.idx4(n, static_cast<int>(k), 0, 0), plane,
                            y.data() + y.idx4(n, idx[k], 0, 0));
        Ref out = leaf(std::move(y), false, "merge_channels");
        node(out).backward = [this, x, processed, idx = std::move(idx), out]() {
            const auto& g = grad_of(out);
            auto& gx = grad_of(x);
            auto& gp = grad_of(processed);
            const auto& xv2 = value(x);
            const int C = xv2.dim(1);
            const int plane = xv2.dim(2) * xv2.dim(3);
            std::vector<int> pos(C, -1);
            for (std::size_t k = 0; k < idx.size(); ++k) pos[idx[k]] = static_cast<int>(k);
            for (int n = 0; n < xv2.dim(0); ++n)
                for (int c = 0; c < C; ++c) {
                    const T* gpn = g.data() + g.idx4(n, c, 0, 0);
                    if (pos[c] >= 0) {
                        T* dst = gp.data() + gp.idx4(n, pos[c], 0, 0);
                        for (int i = 0; i < plane; ++i) dst[i] += gpn[i];
                    } else {
                        T* dst = gx.data() + gx.idx4(n, c, 0, 0);
                        for (int i = 0; i < plane; ++i) dst[i] += gpn[i];
                    }
                }
        };
        return out;
    }

    Ref concat_channels(const std::vector<Ref>& xs) {
        if (xs.empty()) throw std::invalid_argument("concat_channels: empty input set");
        const auto& first = value(xs[0]);
        int Ctot = 0;
        for (Ref x : xs) {
            const auto& v = value(x);
            if (v.dim(0) != first.dim(0) || v.dim(2) != first.dim(2) || v.dim(3) != first.dim(3))
                throw std::invalid_argument("concat_channels: N/H/W mismatch");
            Ctot += v.dim(1);
        }
        Tensor<T> y(Shape{first.dim(0), Ctot, first.dim(2), first.dim(3)});
        const int plane = first.dim(2) * first.dim(3);
        for (int n = 0; n < first.dim(0); ++n) {
            int coff = 0;
            for (Ref x : xs) {
                const auto& v = value(x);
                for (int c = 0; c < v.dim(1); ++c)
                    std::copy_n(v.data() + v.idx4(n, c, 0, 0), plane,
                                y.data() + y.idx4(n, coff + c, 0, 0));
                coff += v.dim(1);
            }
        }
        Ref out = leaf(std::move(y), false, "concat_channels");
        node(out).backward = [this, xs, out]() {
            const auto& g = grad_of(out);
            const int plane = g.dim(2) * g.dim(3);
            for (int n = 0; n < g.dim(0); ++n) {
                int coff = 0;
                for (Ref x : xs) {
                    auto& gx = grad_of(x);
                    for (int c = 0; c < gx.dim(1); ++c) {
                        const T* gp = g.data() + g.idx4(n, coff + c, 0, 0);
                        T* dst = gx.data() + gx.idx4(n, c, 0, 0);
                        for (int i = 0; i < plane; ++i) dst[i] += gp[i];
                    }
                    coff += gx.dim(1);
                }
            }
        };
        return out;
    }

    // 1-d gather: y[k] = x[idx[k]] (for softmaxing a subset of edge logits).
    Ref gather_elems(Ref x, std::vector<int> idx) {
        const auto& xv = value(x);
        Tensor<T> y(Shape{static_cast<int>(idx.size())});
        for (std::size_t k = 0; k < idx.size(); ++k) y[k] = xv[idx[k]];
        Ref out = leaf(std::move(y), false, "gather_elems");
        node(out).backward = [this, x, idx = std::move(idx), out]() {
            const auto& g = grad_of(out);
            auto& gx = grad_of(x);
            for (std::size_t k = 0; k < idx.size(); ++k) gx[idx[k]] += g[k];
        };
        return out;
    }

    // ---- reductions / loss ----

    // Scalar projection <x, proj> against a constant tensor.
    Ref inner(Ref x, Tensor<T> proj) {
        check_value_shape(x, proj, "inner");
        T acc = T(0);
        const auto& xv = value(x);
        for (std::size_t i = 0; i < xv.numel(); ++i) acc += xv[i] * proj[i];
        Ref out = leaf(Tensor<T>(Shape{1}, std::vector<T>{acc}), false, "inner");
        node(out).backward = [this, x, proj = std::move(proj), out]() {
            const T g = grad_of(out)[0];
            auto& gx = grad_of(x);
            for (std::size_t i = 0; i < proj.numel(); ++i) gx[i] += g * proj[i];
        };
        return out;
    }

    Ref sum(Ref x) {
        T acc = T(0);
        for (const T& v : value(x).values()) acc += v;
        Ref out = leaf(Tensor<T>(Shape{1}, std::vector<T>{acc}), false, "sum");
        node(out).backward = [this, x, out]() {
            const T g = grad_of(out)[0];
            for (T& v : grad_of(x).values()) v += g;
        };
        return out;
    }

    // Weighted pixel-wise cross entropy over 2-class logits (N,2,H,W).
    // loss = mean over pixels of class_weight[label] * (-log softmax(logits)[label]).
    Ref weighted_cross_entropy(Ref logits, const std::vector<int>& labels,
                               const std::vector<T>& class_weights) {
        const auto& lv = value(logits);
        if (lv.shape().size() != 4)
            throw std::invalid_argument("weighted_cross_entropy: logits must be (N,K,H,W)");
        if (!all_finite(lv))
            throw std::invalid_argument("weighted_cross_entropy: non-finite logits");
        const int N = lv.dim(0), K = lv.dim(1), H = lv.dim(2), W = lv.dim(3);
        if (static_cast<int>(labels.size()) != N * H * W)
            throw std::invalid_argument("weighted_cross_entropy: label count mismatch");
        const std::size_t npix = labels.size();
        T loss = T(0);
        std::size_t pi = 0;
        for (int n = 0; n < N; ++n)
            for (int h = 0; h < H; ++h)
                for (int w = 0; w < W; ++w, ++pi) {
                    const int y = labels[pi];
                    T mx = lv.at4(n, 0, h, w);
                    for (int k = 1; k < K; ++k) mx = std::max(mx, lv.at4(n, k, h, w));
                    T denom = T(0);
                    for (int k = 0; k < K; ++k) denom += std::exp(lv.at4(n, k, h, w) - mx);
                    loss += class_weights[y] * (std::log(denom) - (lv.at4(n, y, h, w) - mx));
                }
        loss /= static_cast<T>(npix);
        Ref out = leaf(Tensor<T>(Shape{1}, std::vector<T>{loss}), false, "wce");
        node(out).backward = [this, logits, labels, class_weights, out]() {
            const auto& lv2 = value(logits);
            auto& gx = grad_of(logits);
            const int N = lv2.dim(0), K = lv2.dim(1), H = lv2.dim(2), W = lv2.dim(3);
            const T g = grad_of(out)[0] / static_cast<T>(labels.size());
            std::size_t pi = 0;
            std::vector<T> p(K);
            for (int n = 0; n < N; ++n)
                for (int h = 0; h < H; ++h)
                    for (int w = 0; w < W; ++w, ++pi) {
                        const int y = labels[pi];
                        T mx = lv2.at4(n, 0, h, w);
                        for (int k = 1; k < K; ++k) mx = std::max(mx, lv2.at4(n, k, h, w));
                        T denom = T(0);
                        for (int k = 0; k < K; ++k) {
                            p[k] = std::exp(lv2.at4(n, k, h, w) - mx);
                            denom += p[k];
                        }
                        for (int k = 0; k < K; ++k) {
                            const T soft = p[k] / denom;
                            gx.at4(n, k, h, w) +=
                                g * class_weights[y] * (soft - (k == y ? T(1) : T(0)));
                        }
                    }
        };
        return out;
    }

    // ---- backward driver ----

    void backward(Ref loss) {
        if (value(loss).numel() != 1)
            throw std::logic_error("backward: loss must be scalar");
        for (auto& n : nodes_)
            if (n.grad.numel() == 0) n.grad = Tensor<T>(n.value.shape());
        nodes_[loss].grad[0] = T(1);
        for (int i = static_cast<int>(nodes_.size()) - 1; i >= 0; --i)
            if (nodes_[i].backward) nodes_[i].backward();
    }

private:
    struct Node {
        Tensor<T> value;
        Tensor<T> grad;
        std::function<void()> backward;
        bool requires_grad = false;
        std::string name;
    };

    Node& node(Ref r) { return nodes_.at(r); }
    Tensor<T>& grad_of(Ref r) { return nodes_.at(r).grad; }

    void check_value_shape(Ref a, const Tensor<T>& t, const char* op) const {
        if (value(a).shape() != t.shape())
            throw std::invalid_argument(std::string(op) + ": shape mismatch " +
                                        shape_str(value(a).shape()) + " vs " +
                                        shape_str(t.shape()));
    }

    void check_same_shape(Ref a, Ref b, const char* op) const {
        if (!value(a).same_shape(value(b)))
            throw std::invalid_argument(std::string(op) + ": shape mismatch " +
                                        shape_str(value(a).shape()) + " vs " +
                                        shape_str(value(b).shape()));
    }

    static void axpy(T a, const Tensor<T>& x, Tensor<T>& y) {
        for (std::size_t i = 0; i < x.numel(); ++i) y[i] += a * x[i];
    }

    // deque: references into the graph stay valid while new nodes are appended
    std::deque<Node> nodes_;
};

}  // namespace segnas
