#pragma once

#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <random>
#include <span>
#include <string_view>
#include <vector>

#include "sfl/errors.hpp"

namespace sfl {

using Shape = std::vector<std::size_t>;

std::size_t shape_size(const Shape& shape);

/// Dense row-major array of doubles. Shape errors are reported eagerly; there
/// is no broadcasting anywhere in the library.
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(Shape shape, double fill = 0.0);
    Tensor(Shape shape, std::vector<double> data);

    static Tensor matrix(std::size_t rows, std::size_t cols,
                         std::initializer_list<double> values);
    static Tensor vector(std::initializer_list<double> values);
    static Tensor vector(std::vector<double> values);
    static Tensor identity(std::size_t n);

    const Shape& shape() const { return shape_; }
    std::size_t rank() const { return shape_.size(); }
    std::size_t size() const { return data_.size(); }
    std::size_t dim(std::size_t axis) const;
    bool empty() const { return data_.empty(); }

    std::span<double> data() { return data_; }
    std::span<const double> data() const { return data_; }
    const std::vector<double>& values() const { return data_; }

    double& operator[](std::size_t i) { return data_[i]; }
    double operator[](std::size_t i) const { return data_[i]; }

    // Rank-2 element access.
    double& operator()(std::size_t r, std::size_t c) { return data_[r * shape_[1] + c]; }
    double operator()(std::size_t r, std::size_t c) const { return data_[r * shape_[1] + c]; }

    // Number of elements in one slice along axis 0.
    std::size_t row_size() const;
    std::span<double> row(std::size_t i);
    std::span<const double> row(std::size_t i) const;

    // Gathers slices along axis 0 into a new tensor.
    Tensor take_rows(std::span<const std::size_t> rows) const;
    Tensor reshaped(Shape shape) const;
    Tensor transposed() const;

    bool all_finite() const;

    friend bool operator==(const Tensor& a, const Tensor& b) {
        return a.shape_ == b.shape_ && a.data_ == b.data_;
    }

private:
    Shape shape_;
    std::vector<double> data_;
};

/// Seedable deterministic generator. Single owner; never share across threads.
class Rng {
public:
    explicit Rng(std::uint64_t seed = 0) : seed_(seed), engine_(seed) {}

    std::uint64_t seed() const { return seed_; }
    std::uint64_t next_u64() { return engine_(); }

    double uniform();                            // [0, 1)
    double uniform(double lo, double hi);
    double normal(double mean = 0.0, double stddev = 1.0);
    std::size_t uniform_index(std::size_t n);    // [0, n)

    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (std::size_t i = v.size(); i > 1; --i) {
            std::size_t j = uniform_index(i);
            std::swap(v[i - 1], v[j]);
        }
    }

    std::vector<std::size_t> permutation(std::size_t n);

private:
    std::uint64_t seed_;
    std::mt19937_64 engine_;
};

std::uint64_t splitmix64(std::uint64_t x);

// Deterministically expands one seed into an independent per-component seed.
std::uint64_t derive_seed(std::uint64_t base, std::string_view tag);
std::uint64_t derive_seed(std::uint64_t base, std::uint64_t index);

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor add(const Tensor& a, const Tensor& b);
Tensor subtract(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double s);

double dot(std::span<const double> a, std::span<const double> b);
double norm2(std::span<const double> v);
double squared_distance(std::span<const double> a, std::span<const double> b);
double frobenius_norm(const Tensor& a);
double max_abs(const Tensor& a);
double trace(const Tensor& a);

struct EigenResult {
    Tensor values;   // [n], descending
    Tensor vectors;  // [n, n], column i pairs with values[i]
};

inline constexpr std::size_t kMaxEigenDim = 4096;

/// Symmetric eigendecomposition by cyclic Jacobi sweeps.
/// Throws ContractError for non-symmetric input (tolerance 1e-9 relative to the
/// largest entry) and ConvergenceError if the off-diagonal mass does not vanish
/// within max_sweeps.
EigenResult sym_eig(const Tensor& a, int max_sweeps = 100);

/// Lower-triangular L with a = L Lᵀ. Throws NotPositiveDefiniteError.
Tensor cholesky(const Tensor& a);

// Solves L·x = b (forward) and Lᵀ·x = b (backward) for every column of b.
Tensor solve_lower(const Tensor& lower, const Tensor& b);
Tensor solve_lower_transposed(const Tensor& lower, const Tensor& b);

Tensor solve_spd(const Tensor& a, const Tensor& b);

}  // namespace sfl
