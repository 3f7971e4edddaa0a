#pragma once

#include <cmath>
#include <map>
#include <numbers>
#include <stdexcept>
#include <string>
#include <vector>

#include "segnas/tensor.hpp"

namespace segnas {

// ---- layer-weight optimizer ----

// SGD with momentum and L2 weight decay added to the gradient:
//   v = momentum * v + (g + wd * w);  w -= lr * v
template <typename T>
class SgdMomentum {
public:
    SgdMomentum(T momentum, T weight_decay) : momentum_(momentum), weight_decay_(weight_decay) {
        if (momentum < T(0) || momentum >= T(1))
            throw std::invalid_argument("momentum must be in [0,1)");
    }

    void step(const std::string& name, Tensor<T>& w, const Tensor<T>& g, T lr) {
        if (!w.same_shape(g))
            throw std::invalid_argument("sgd step: grad shape mismatch for '" + name + "'");
        auto it = velocity_.find(name);
        if (it == velocity_.end()) it = velocity_.emplace(name, Tensor<T>(w.shape())).first;
        Tensor<T>& v = it->second;
        for (std::size_t i = 0; i < w.numel(); ++i) {
            v[i] = momentum_ * v[i] + (g[i] + weight_decay_ * w[i]);
            w[i] -= lr * v[i];
        }
    }

    const std::map<std::string, Tensor<T>>& velocity() const { return velocity_; }

private:
    T momentum_;
    T weight_decay_;
    std::map<std::string, Tensor<T>> velocity_;
};

// Cosine annealing: lr0 * (1 + cos(pi * step / total)) / 2, clamped into range.
template <typename T>
T cosine_lr(long step, long total_steps, T lr0) {
    if (total_steps <= 0) throw std::invalid_argument("cosine_lr: total_steps must be > 0");
    step = std::max(0L, std::min(step, total_steps));
    const double frac = static_cast<double>(step) / static_cast<double>(total_steps);
    return static_cast<T>(lr0 * (1.0 + std::cos(std::numbers::pi * frac)) / 2.0);
}

// ---- architecture-parameter optimizers ----

// Exponentiated-gradient step on one simplex row:
//   theta' = theta * exp(-eta * grad), renormalized to sum 1.
// Entries are floored at 1e-12 before renormalization so multiplicative
// updates cannot permanently absorb a coordinate at exact zero.
template <typename T>
void gaea_step(std::vector<T>& theta, const std::vector<T>& grad, T eta) {
    if (theta.size() != grad.size())
        throw std::invalid_argument("gaea_step: size mismatch");
    if (eta <= T(0)) throw std::invalid_argument("gaea_step: eta must be > 0");
    T sum = T(0);
    for (std::size_t i = 0; i < theta.size(); ++i) {
        theta[i] = theta[i] * std::exp(-eta * grad[i]);
        if (theta[i] > T(0)) theta[i] = std::max(theta[i], static_cast<T>(1e-12));
        sum += theta[i];
    }
    if (sum <= T(0)) throw std::domain_error("gaea_step: all-zero row, cannot renormalize");
    for (T& v : theta) v /= sum;
}

// Shannon entropy of a simplex row, with 0*ln(0) := 0.
template <typename T>
T entropy(const std::vector<T>& theta) {
    T h = T(0);
    for (T v : theta)
        if (v > T(0)) h -= v * std::log(v);
    return h;
}

// Alpha updates are discarded before start_epoch.
inline bool arch_update_gate(int epoch, int start_epoch) { return epoch >= start_epoch; }

// Plain gradient step on logits (PC-DARTS-style baseline for ablation).
template <typename T>
void softmax_alpha_step(std::vector<T>& alpha, const std::vector<T>& grad, T lr) {
    if (alpha.size() != grad.size())
        throw std::invalid_argument("softmax_alpha_step: size mismatch");
    if (lr <= T(0)) throw std::invalid_argument("softmax_alpha_step: lr must be > 0");
    for (std::size_t i = 0; i < alpha.size(); ++i) alpha[i] -= lr * grad[i];
}

// Per-epoch entropy aggregate over all theta rows, exported as CSV by the
// search pipeline.
struct EntropyStats {
    double mean = 0, min = 0, max = 0;
};

template <typename T>
EntropyStats entropy_stats(const std::vector<std::vector<T>>& rows) {
    EntropyStats s;
    if (rows.empty()) return s;
    s.min = 1e300;
    s.max = -1e300;
    for (const auto& r : rows) {
        const double h = static_cast<double>(entropy(r));
        s.mean += h;
        s.min = std::min(s.min, h);
        s.max = std::max(s.max, h);
    }
    s.mean /= static_cast<double>(rows.size());
    return s;
}

}  // namespace segnas
