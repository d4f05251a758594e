#pragma once

#include <cmath>
#include <cstdint>
#include <memory>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "nct/common.hpp"

namespace nct {

inline std::string shape_str(const std::vector<int>& s) {
    std::ostringstream os;
    os << "(";
    for (size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
    os << ")";
    return os.str();
}

// Dense row-major tensor. Data is held in a shared buffer; ops treat inputs
// as immutable and allocate fresh outputs. 32-bit is the training dtype,
// 64-bit the verification dtype.
template <typename S>
struct TensorT {
    std::vector<int> shape;
    std::shared_ptr<std::vector<S>> store;

    TensorT() : store(std::make_shared<std::vector<S>>()) {}

    explicit TensorT(std::vector<int> sh) : shape(std::move(sh)) {
        store = std::make_shared<std::vector<S>>(count(shape), S(0));
    }

    static TensorT full(std::vector<int> sh, S v) {
        TensorT t(std::move(sh));
        std::fill(t.store->begin(), t.store->end(), v);
        return t;
    }

    static TensorT scalar(S v) { return full({1}, v); }

    static TensorT from(std::vector<int> sh, std::vector<S> data) {
        check_shape(count(sh) == static_cast<int64_t>(data.size()),
                    "tensor data size " + std::to_string(data.size()) +
                        " does not match shape " + shape_str(sh));
        TensorT t;
        t.shape = std::move(sh);
        t.store = std::make_shared<std::vector<S>>(std::move(data));
        return t;
    }

    static int64_t count(const std::vector<int>& sh) {
        int64_t n = 1;
        for (int d : sh) n *= d;
        return sh.empty() ? 0 : n;
    }

    int64_t numel() const { return static_cast<int64_t>(store->size()); }
    int ndim() const { return static_cast<int>(shape.size()); }
    int dim(int i) const { return shape[static_cast<size_t>(i)]; }

    S* data() { return store->data(); }
    const S* data() const { return store->data(); }

    S& operator[](int64_t i) { return (*store)[static_cast<size_t>(i)]; }
    S operator[](int64_t i) const { return (*store)[static_cast<size_t>(i)]; }

    // Deep copy.
    TensorT clone() const {
        TensorT t;
        t.shape = shape;
        t.store = std::make_shared<std::vector<S>>(*store);
        return t;
    }

    // Same buffer, new shape metadata.
    TensorT reshaped(std::vector<int> sh) const {
        check_shape(count(sh) == numel(), "reshape " + shape_str(shape) + " -> " +
                                              shape_str(sh) + ": element count differs");
        TensorT t;
        t.shape = std::move(sh);
        t.store = store;
        return t;
    }

    template <typename T2>
    TensorT<T2> cast() const {
        TensorT<T2> t;
        t.shape = shape;
        t.store = std::make_shared<std::vector<T2>>(store->size());
        for (size_t i = 0; i < store->size(); ++i) (*t.store)[i] = static_cast<T2>((*store)[i]);
        return t;
    }

    bool same_shape(const TensorT& o) const { return shape == o.shape; }

    bool all_finite() const {
        for (S v : *store)
            if (!std::isfinite(static_cast<double>(v))) return false;
        return true;
    }
};

using Tensor = TensorT<float>;
using Tensor64 = TensorT<double>;

template <typename S>
void require_same_shape(const TensorT<S>& a, const TensorT<S>& b, const char* op) {
    check_shape(a.shape == b.shape, std::string(op) + ": shape mismatch " +
                                        shape_str(a.shape) + " vs " + shape_str(b.shape));
}

}  // namespace nct
