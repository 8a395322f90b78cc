#pragma once

#include <cmath>
#include <cstddef>

#include "sfl/numkit.hpp"

namespace sfl::testing {

inline Tensor random_matrix(std::size_t rows, std::size_t cols, Rng& rng, double lo = -1.0, double hi = 1.0) {
    Tensor t({rows, cols});
    for (auto& v : t.data()) v = rng.uniform(lo, hi);
    return t;
}

inline Tensor random_tensor(Shape shape, Rng& rng, double stddev = 1.0) {
    Tensor t(std::move(shape));
    for (auto& v : t.data()) v = rng.normal(0.0, stddev);
    return t;
}

inline Tensor random_spd(std::size_t n, Rng& rng) {
    const Tensor a = random_matrix(n, n, rng);
    Tensor s = matmul(a, a.transposed());
    for (std::size_t i = 0; i < n; ++i) s(i, i) += static_cast<double>(n);
    return s;
}

inline Tensor random_symmetric(std::size_t n, Rng& rng) {
    Tensor s({n, n});
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = i; j < n; ++j) s(i, j) = s(j, i) = rng.uniform(-1.0, 1.0);
    return s;
}

inline double abs_cosine(std::span<const double> a, std::span<const double> b) {
    return std::abs(dot(a, b)) / (norm2(a) * norm2(b));
}

inline Tensor column(const Tensor& m, std::size_t c) {
    Tensor out({m.dim(0)});
    for (std::size_t r = 0; r < m.dim(0); ++r) out[r] = m(r, c);
    return out;
}

}  // namespace sfl::testing
