#pragma once

#include <algorithm>
#include <atomic>
#include <cstddef>
#include <cstdint>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

namespace segnas {

// Global allocation tracker used by the memory estimator tests. Counts live
// tensor buffer bytes assuming the element width of the active precision.
struct AllocTracker {
    static std::atomic<std::int64_t>& current() {
        static std::atomic<std::int64_t> c{0};
        return c;
    }
    static std::atomic<std::int64_t>& peak() {
        static std::atomic<std::int64_t> p{0};
        return p;
    }
    static void add(std::int64_t bytes) {
        auto cur = current().fetch_add(bytes) + bytes;
        auto p = peak().load();
        while (cur > p && !peak().compare_exchange_weak(p, cur)) {
        }
    }
    static void sub(std::int64_t bytes) { current().fetch_sub(bytes); }
    static void reset() {
        current().store(0);
        peak().store(0);
    }
};

using Shape = std::vector<int>;

inline std::size_t shape_numel(const Shape& s) {
    std::size_t n = 1;
    for (int d : s) {
        if (d <= 0) throw std::invalid_argument("shape dims must be positive");
        n *= static_cast<std::size_t>(d);
    }
    return n;
}

inline std::string shape_str(const Shape& s) {
    std::string out = "(";
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (i) out += ",";
        out += std::to_string(s[i]);
    }
    return out + ")";
}

// Dense n-d array in NCHW order for images. Values are owned; grad is
// allocated lazily by the tape.
template <typename T>
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(Shape shape, T fill = T(0))
        : shape_(std::move(shape)), values_(shape_numel(shape_), fill) {
        AllocTracker::add(static_cast<std::int64_t>(values_.size() * sizeof(T)));
    }
    Tensor(Shape shape, std::vector<T> values)
        : shape_(std::move(shape)), values_(std::move(values)) {
        if (values_.size() != shape_numel(shape_))
            throw std::invalid_argument("tensor values length " +
                                        std::to_string(values_.size()) +
                                        " does not match shape " + shape_str(shape_));
        AllocTracker::add(static_cast<std::int64_t>(values_.size() * sizeof(T)));
    }
    Tensor(const Tensor& o) : shape_(o.shape_), values_(o.values_) {
        AllocTracker::add(static_cast<std::int64_t>(values_.size() * sizeof(T)));
    }
    Tensor(Tensor&& o) noexcept : shape_(std::move(o.shape_)), values_(std::move(o.values_)) {
        o.shape_.clear();
    }
    Tensor& operator=(Tensor o) noexcept {
        std::swap(shape_, o.shape_);
        std::swap(values_, o.values_);
        return *this;
    }
    ~Tensor() {
        AllocTracker::sub(static_cast<std::int64_t>(values_.size() * sizeof(T)));
    }

    const Shape& shape() const { return shape_; }
    std::size_t numel() const { return values_.size(); }
    T* data() { return values_.data(); }
    const T* data() const { return values_.data(); }
    std::vector<T>& values() { return values_; }
    const std::vector<T>& values() const { return values_; }

    T& operator[](std::size_t i) { return values_[i]; }
    const T& operator[](std::size_t i) const { return values_[i]; }

    // NCHW accessors.
    int dim(std::size_t i) const { return shape_.at(i); }

    T& at4(int n, int c, int h, int w) {
        return values_[idx4(n, c, h, w)];
    }
    const T& at4(int n, int c, int h, int w) const {
        return values_[idx4(n, c, h, w)];
    }
    std::size_t idx4(int n, int c, int h, int w) const {
        return ((static_cast<std::size_t>(n) * shape_[1] + c) * shape_[2] + h) * shape_[3] + w;
    }

    void fill(T v) { std::fill(values_.begin(), values_.end(), v); }

    bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

private:
    Shape shape_;
    std::vector<T> values_;
};

template <typename T>
bool all_finite(const Tensor<T>& t) {
    for (const T& v : t.values())
        if (!std::isfinite(static_cast<double>(v))) return false;
    return true;
}

}  // namespace segnas
