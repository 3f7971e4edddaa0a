#pragma once

#include <map>
#include <optional>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "segnas/tape.hpp"

namespace segnas {

// Candidate operation kinds. Names follow the CLI/file vocabulary; the base
// space uses the dil/sep/pool family, the large space the conv2d_* family.
enum class OpKind {
    conv2d_1,       // plain 3x3
    conv2d_2,       // plain 5x5
    conv2d_3,       // plain 7x7
    depthconv2d_1,  // depthwise-separable 3x3
    depthconv2d_2,  // depthwise-separable 5x5
    depthconv2d_3,  // depthwise-separable 7x7
    splitconv2d_1,  // spatially-separable 3x1 then 1x3
    splitconv2d_2,  // 5x1 then 1x5
    splitconv2d_3,  // 7x1 then 1x7
    dilconv2d_3x3,  // dilation-2 3x3
    dilconv2d_5x5,  // dilation-2 5x5
    sepconv2d_3x3,  // depthwise-separable 3x3 (base-space name)
    sepconv2d_5x5,
    avgpool3x3,
    maxpool3x3,
    skip,
    cut,
};

inline const std::vector<std::pair<OpKind, std::string>>& op_kind_names() {
    static const std::vector<std::pair<OpKind, std::string>> table = {
        {OpKind::conv2d_1, "conv2d_1"},
        {OpKind::conv2d_2, "conv2d_2"},
        {OpKind::conv2d_3, "conv2d_3"},
        {OpKind::depthconv2d_1, "depthconv2d_1"},
        {OpKind::depthconv2d_2, "depthconv2d_2"},
        {OpKind::depthconv2d_3, "depthconv2d_3"},
        {OpKind::splitconv2d_1, "splitconv2d_1"},
        {OpKind::splitconv2d_2, "splitconv2d_2"},
        {OpKind::splitconv2d_3, "splitconv2d_3"},
        {OpKind::dilconv2d_3x3, "dilconv2d_3x3"},
        {OpKind::dilconv2d_5x5, "dilconv2d_5x5"},
        {OpKind::sepconv2d_3x3, "sepconv2d_3x3"},
        {OpKind::sepconv2d_5x5, "sepconv2d_5x5"},
        {OpKind::avgpool3x3, "avgpool3x3"},
        {OpKind::maxpool3x3, "maxpool3x3"},
        {OpKind::skip, "skip"},
        {OpKind::cut, "cut"},
    };
    return table;
}

inline std::string op_name(OpKind k) {
    for (const auto& [kind, name] : op_kind_names())
        if (kind == k) return name;
    throw std::logic_error("unknown op kind");
}

inline OpKind op_from_name(const std::string& name) {
    for (const auto& [kind, n] : op_kind_names())
        if (n == name) return kind;
    std::string valid;
    for (const auto& [kind, n] : op_kind_names()) valid += (valid.empty() ? "" : ", ") + n;
    throw std::invalid_argument("unknown op kind '" + name + "' (valid: " + valid + ")");
}

inline bool op_has_params(OpKind k) {
    switch (k) {
        case OpKind::avgpool3x3:
        case OpKind::maxpool3x3:
        case OpKind::skip:
        case OpKind::cut:
            return false;
        default:
            return true;
    }
}

inline int op_kernel(OpKind k) {
    switch (k) {
        case OpKind::conv2d_1:
        case OpKind::depthconv2d_1:
        case OpKind::splitconv2d_1:
        case OpKind::dilconv2d_3x3:
        case OpKind::sepconv2d_3x3:
            return 3;
        case OpKind::conv2d_2:
        case OpKind::depthconv2d_2:
        case OpKind::splitconv2d_2:
        case OpKind::dilconv2d_5x5:
        case OpKind::sepconv2d_5x5:
            return 5;
        case OpKind::conv2d_3:
        case OpKind::depthconv2d_3:
        case OpKind::splitconv2d_3:
            return 7;
        default:
            return 3;
    }
}

// ---- parameter store ----

// Owns named weight tensors. Creation order is recorded so checkpoints and
// optimizer traversal stay deterministic.
template <typename T>
class ParamStore {
public:
    explicit ParamStore(std::uint64_t seed = 0) : rng_(seed) {}

    Tensor<T>& get_or_create(const std::string& name, const Shape& shape,
                             const std::string& init) {
        auto it = params_.find(name);
        if (it != params_.end()) {
            if (it->second.shape() != shape)
                throw std::invalid_argument("param '" + name + "' shape mismatch: " +
                                            shape_str(it->second.shape()) + " vs " +
                                            shape_str(shape));
            return it->second;
        }
        Tensor<T> t(shape);
        if (init == "kaiming") {
            // fan_in over (Ci/groups)*kh*kw, i.e. everything but dim 0
            std::size_t fan_in = 1;
            for (std::size_t i = 1; i < shape.size(); ++i) fan_in *= shape[i];
            const T bound = static_cast<T>(std::sqrt(6.0 / static_cast<double>(fan_in)));
            std::uniform_real_distribution<double> dist(-bound, bound);
            for (T& v : t.values()) v = static_cast<T>(dist(rng_));
        } else if (init == "ones") {
            t.fill(T(1));
        } else if (init == "zeros") {
            // already zero
        } else {
            throw std::invalid_argument("unknown init '" + init + "'");
        }
        order_.push_back(name);
        return params_.emplace(name, std::move(t)).first->second;
    }

    bool has(const std::string& name) const { return params_.count(name) != 0; }
    Tensor<T>& at(const std::string& name) { return params_.at(name); }
    const Tensor<T>& at(const std::string& name) const { return params_.at(name); }
    const std::vector<std::string>& names() const { return order_; }
    std::size_t size() const { return params_.size(); }

    std::size_t total_values() const {
        std::size_t n = 0;
        for (const auto& [k, v] : params_) n += v.numel();
        return n;
    }

private:
    std::map<std::string, Tensor<T>> params_;
    std::vector<std::string> order_;
    std::mt19937_64 rng_;
};

// Ties a ParamStore to one tape build: each param is registered as a leaf at
// most once, so shared parameters accumulate gradients naturally.
template <typename T>
class Binder {
public:
    Binder(Tape<T>& tape, ParamStore<T>& store) : tape_(tape), store_(store) {}

    typename Tape<T>::Ref operator()(const std::string& name, const Shape& shape,
                                     const std::string& init) {
        auto it = refs_.find(name);
        if (it != refs_.end()) return it->second;
        auto ref = tape_.leaf(store_.get_or_create(name, shape, init), true, name);
        refs_.emplace(name, ref);
        return ref;
    }

    // After backward: gradient of every bound parameter, keyed by name.
    std::map<std::string, const Tensor<T>*> grads() const {
        std::map<std::string, const Tensor<T>*> out;
        for (const auto& [name, ref] : refs_) out.emplace(name, &tape_.grad(ref));
        return out;
    }

    const std::map<std::string, typename Tape<T>::Ref>& refs() const { return refs_; }

private:
    Tape<T>& tape_;
    ParamStore<T>& store_;
    std::map<std::string, typename Tape<T>::Ref> refs_;
};

// ---- candidate op application ----

// Parameterized ops follow a fixed ReLU -> conv(s) -> per-channel affine
// ordering. All ops preserve the channel count; stride > 1 reduces spatial
// resolution (reduction position).
template <typename T>
typename Tape<T>::Ref apply_op(Tape<T>& tape, OpKind kind, typename Tape<T>::Ref x,
                               int stride, Binder<T>& bind, const std::string& prefix) {
    using Ref = typename Tape<T>::Ref;
    const auto& xv = tape.value(x);
    const int C = xv.dim(1);
    auto norm = [&](Ref h) {
        Ref s = bind(prefix + ".norm.scale", Shape{C}, "ones");
        Ref b = bind(prefix + ".norm.bias", Shape{C}, "zeros");
        return tape.channel_affine(h, s, b);
    };
    switch (kind) {
        case OpKind::skip: {
            if (stride == 1) return tape.identity(x);
            return tape.resize_nearest(x, same_out_dim(xv.dim(2), stride),
                                       same_out_dim(xv.dim(3), stride));
        }
        case OpKind::cut: {
            Shape s{xv.dim(0), C, same_out_dim(xv.dim(2), stride),
                    same_out_dim(xv.dim(3), stride)};
            return tape.zeros(s);
        }
        case OpKind::avgpool3x3:
            return tape.avgpool(x, 3, stride);
        case OpKind::maxpool3x3:
            return tape.maxpool(x, 3, stride);
        case OpKind::conv2d_1:
        case OpKind::conv2d_2:
        case OpKind::conv2d_3: {
            const int k = op_kernel(kind);
            Ref h = tape.relu(x);
            Ref w = bind(prefix + ".w", Shape{C, C, k, k}, "kaiming");
            h = tape.conv2d(h, w, -1, ConvSpec{k, k, stride, 1, 1});
            return norm(h);
        }
        case OpKind::dilconv2d_3x3:
        case OpKind::dilconv2d_5x5: {
            const int k = op_kernel(kind);
            Ref h = tape.relu(x);
            Ref w = bind(prefix + ".w", Shape{C, C, k, k}, "kaiming");
            h = tape.conv2d(h, w, -1, ConvSpec{k, k, stride, 2, 1});
            return norm(h);
        }
        case OpKind::depthconv2d_1:
        case OpKind::depthconv2d_2:
        case OpKind::depthconv2d_3:
        case OpKind::sepconv2d_3x3:
        case OpKind::sepconv2d_5x5: {
            const int k = op_kernel(kind);
            Ref h = tape.relu(x);
            Ref wd = bind(prefix + ".dw", Shape{C, 1, k, k}, "kaiming");
            h = tape.conv2d(h, wd, -1, ConvSpec{k, k, stride, 1, C});
            Ref wp = bind(prefix + ".pw", Shape{C, C, 1, 1}, "kaiming");
            h = tape.conv2d(h, wp, -1, ConvSpec{1, 1, 1, 1, 1});
            return norm(h);
        }
        case OpKind::splitconv2d_1:
        case OpKind::splitconv2d_2:
        case OpKind::splitconv2d_3: {
            const int k = op_kernel(kind);
            Ref h = tape.relu(x);
            Ref wv = bind(prefix + ".wv", Shape{C, C, k, 1}, "kaiming");
            h = tape.conv2d(h, wv, -1, ConvSpec{k, 1, stride, 1, 1});
            Ref wh = bind(prefix + ".wh", Shape{C, C, 1, k}, "kaiming");
            h = tape.conv2d(h, wh, -1, ConvSpec{1, k, 1, 1, 1});
            return norm(h);
        }
    }
    throw std::logic_error("apply_op: unhandled kind");
}

// Parameter element count of one op instance at channel width C (used by the
// memory estimator; must match apply_op's bindings).
inline std::size_t op_param_count(OpKind kind, int C) {
    const std::size_t c = static_cast<std::size_t>(C);
    const std::size_t k = static_cast<std::size_t>(op_kernel(kind));
    switch (kind) {
        case OpKind::conv2d_1:
        case OpKind::conv2d_2:
        case OpKind::conv2d_3:
        case OpKind::dilconv2d_3x3:
        case OpKind::dilconv2d_5x5:
            return c * c * k * k + 2 * c;
        case OpKind::depthconv2d_1:
        case OpKind::depthconv2d_2:
        case OpKind::depthconv2d_3:
        case OpKind::sepconv2d_3x3:
        case OpKind::sepconv2d_5x5:
            return c * k * k + c * c + 2 * c;
        case OpKind::splitconv2d_1:
        case OpKind::splitconv2d_2:
        case OpKind::splitconv2d_3:
            return 2 * c * c * k + 2 * c;
        default:
            return 0;
    }
}

}  // namespace segnas
