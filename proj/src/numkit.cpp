#include "sfl/numkit.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

namespace sfl {

namespace {

std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (i) os << 'x';
        os << s[i];
    }
    os << ']';
    return os.str();
}

void require_matrix(const Tensor& t, const char* what) {
    if (t.rank() != 2)
        throw DimensionError(std::string(what) + ": expected a matrix, got shape " + shape_str(t.shape()));
}

void require_square(const Tensor& t, const char* what) {
    require_matrix(t, what);
    if (t.dim(0) != t.dim(1))
        throw DimensionError(std::string(what) + ": expected a square matrix, got " + shape_str(t.shape()));
}

}  // namespace

std::size_t shape_size(const Shape& shape) {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

Tensor::Tensor(Shape shape, double fill) : shape_(std::move(shape)), data_(shape_size(shape_), fill) {}

Tensor::Tensor(Shape shape, std::vector<double> data) : shape_(std::move(shape)), data_(std::move(data)) {
    if (shape_size(shape_) != data_.size())
        throw DimensionError("tensor shape " + shape_str(shape_) + " does not match " +
                             std::to_string(data_.size()) + " values");
}

Tensor Tensor::matrix(std::size_t rows, std::size_t cols, std::initializer_list<double> values) {
    return Tensor({rows, cols}, std::vector<double>(values));
}

Tensor Tensor::vector(std::initializer_list<double> values) {
    return Tensor({values.size()}, std::vector<double>(values));
}

Tensor Tensor::vector(std::vector<double> values) {
    std::size_t n = values.size();
    return Tensor({n}, std::move(values));
}

Tensor Tensor::identity(std::size_t n) {
    Tensor t({n, n});
    for (std::size_t i = 0; i < n; ++i) t(i, i) = 1.0;
    return t;
}

std::size_t Tensor::dim(std::size_t axis) const {
    if (axis >= shape_.size())
        throw DimensionError("axis " + std::to_string(axis) + " out of range for shape " + shape_str(shape_));
    return shape_[axis];
}

std::size_t Tensor::row_size() const {
    if (shape_.empty() || shape_[0] == 0) return 0;
    return data_.size() / shape_[0];
}

std::span<double> Tensor::row(std::size_t i) {
    std::size_t n = row_size();
    return std::span<double>(data_).subspan(i * n, n);
}

std::span<const double> Tensor::row(std::size_t i) const {
    std::size_t n = row_size();
    return std::span<const double>(data_).subspan(i * n, n);
}

Tensor Tensor::take_rows(std::span<const std::size_t> rows) const {
    if (shape_.empty()) throw DimensionError("take_rows on a scalar tensor");
    Shape s = shape_;
    s[0] = rows.size();
    Tensor out(s);
    std::size_t n = row_size();
    for (std::size_t i = 0; i < rows.size(); ++i) {
        if (rows[i] >= shape_[0]) throw DimensionError("row index out of range");
        std::copy_n(data_.begin() + static_cast<std::ptrdiff_t>(rows[i] * n), n,
                    out.data_.begin() + static_cast<std::ptrdiff_t>(i * n));
    }
    return out;
}

Tensor Tensor::reshaped(Shape shape) const {
    return Tensor(std::move(shape), data_);
}

Tensor Tensor::transposed() const {
    require_matrix(*this, "transposed");
    Tensor out({shape_[1], shape_[0]});
    for (std::size_t r = 0; r < shape_[0]; ++r)
        for (std::size_t c = 0; c < shape_[1]; ++c) out(c, r) = (*this)(r, c);
    return out;
}

bool Tensor::all_finite() const {
    return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

// Portable distributions on top of the raw 64-bit stream, so that streams do
// not depend on the standard library's distribution implementations.
double Rng::uniform() {
    return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
}

double Rng::uniform(double lo, double hi) {
    return lo + (hi - lo) * uniform();
}

double Rng::normal(double mean, double stddev) {
    // Box-Muller, one draw per call.
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    double u2 = uniform();
    return mean + stddev * std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
}

std::size_t Rng::uniform_index(std::size_t n) {
    if (n == 0) throw ContractError("uniform_index(0)");
    const std::uint64_t bound = static_cast<std::uint64_t>(n);
    const std::uint64_t limit = UINT64_MAX - UINT64_MAX % bound;
    std::uint64_t x = engine_();
    while (x >= limit) x = engine_();
    return static_cast<std::size_t>(x % bound);
}

std::vector<std::size_t> Rng::permutation(std::size_t n) {
    std::vector<std::size_t> p(n);
    std::iota(p.begin(), p.end(), std::size_t{0});
    shuffle(p);
    return p;
}

std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9E3779B97F4A7C15ULL;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
    return x ^ (x >> 31);
}

std::uint64_t derive_seed(std::uint64_t base, std::string_view tag) {
    std::uint64_t h = 0xCBF29CE484222325ULL;  // FNV-1a
    for (unsigned char c : tag) {
        h ^= c;
        h *= 0x100000001B3ULL;
    }
    return splitmix64(splitmix64(base) ^ h);
}

std::uint64_t derive_seed(std::uint64_t base, std::uint64_t index) {
    return splitmix64(splitmix64(base) + 0x632BE59BD9B4E019ULL * (index + 1));
}

Tensor matmul(const Tensor& a, const Tensor& b) {
    require_matrix(a, "matmul");
    require_matrix(b, "matmul");
    const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
    if (b.dim(0) != k)
        throw DimensionError("matmul: inner extents disagree: " + shape_str(a.shape()) + " * " +
                             shape_str(b.shape()));
    Tensor out({m, n});
    auto A = a.data();
    auto B = b.data();
    auto C = out.data();
    for (std::size_t i = 0; i < m; ++i) {
        double* crow = &C[i * n];
        for (std::size_t p = 0; p < k; ++p) {
            const double aip = A[i * k + p];
            if (aip == 0.0) continue;
            const double* brow = &B[p * n];
            for (std::size_t j = 0; j < n; ++j) crow[j] += aip * brow[j];
        }
    }
    return out;
}

namespace {

template <typename Op>
Tensor elementwise(const Tensor& a, const Tensor& b, Op op, const char* what) {
    if (a.shape() != b.shape())
        throw DimensionError(std::string(what) + ": shapes " + shape_str(a.shape()) + " and " +
                             shape_str(b.shape()) + " differ");
    Tensor out(a.shape());
    for (std::size_t i = 0; i < a.size(); ++i) out[i] = op(a[i], b[i]);
    return out;
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
    return elementwise(a, b, std::plus<>(), "add");
}

Tensor subtract(const Tensor& a, const Tensor& b) {
    return elementwise(a, b, std::minus<>(), "subtract");
}

Tensor scale(const Tensor& a, double s) {
    Tensor out = a;
    for (auto& v : out.data()) v *= s;
    return out;
}

double dot(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size()) throw DimensionError("dot: length mismatch");
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

double norm2(std::span<const double> v) {
    return std::sqrt(dot(v, v));
}

double squared_distance(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size()) throw DimensionError("squared_distance: length mismatch");
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double d = a[i] - b[i];
        s += d * d;
    }
    return s;
}

double frobenius_norm(const Tensor& a) {
    return norm2(a.data());
}

double max_abs(const Tensor& a) {
    double m = 0.0;
    for (double v : a.data()) m = std::max(m, std::abs(v));
    return m;
}

double trace(const Tensor& a) {
    require_square(a, "trace");
    double s = 0.0;
    for (std::size_t i = 0; i < a.dim(0); ++i) s += a(i, i);
    return s;
}

EigenResult sym_eig(const Tensor& input, int max_sweeps) {
    require_square(input, "sym_eig");
    const std::size_t n = input.dim(0);
    if (n > kMaxEigenDim)
        throw ContractError("sym_eig: dimension " + std::to_string(n) + " exceeds limit " +
                            std::to_string(kMaxEigenDim));
    const double scale_ref = std::max(1.0, max_abs(input));
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = i + 1; j < n; ++j)
            if (std::abs(input(i, j) - input(j, i)) > 1e-9 * scale_ref)
                throw ContractError("sym_eig: input is not symmetric");

    Tensor a = input;
    // Symmetrize exactly so rotations keep the two triangles in agreement.
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = i + 1; j < n; ++j) a(i, j) = a(j, i) = 0.5 * (a(i, j) + a(j, i));
    Tensor v = Tensor::identity(n);

    const double total = frobenius_norm(a);
    bool converged = (n <= 1) || total == 0.0;
    for (int sweep = 0; sweep < max_sweeps && !converged; ++sweep) {
        double off = 0.0;
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = i + 1; j < n; ++j) off += a(i, j) * a(i, j);
        if (std::sqrt(2.0 * off) <= 1e-15 * total) {
            converged = true;
            break;
        }
        for (std::size_t p = 0; p + 1 < n; ++p) {
            for (std::size_t q = p + 1; q < n; ++q) {
                const double apq = a(p, q);
                if (apq == 0.0) continue;
                const double app = a(p, p), aqq = a(q, q);
                const double theta = (aqq - app) / (2.0 * apq);
                const double t = (theta >= 0 ? 1.0 : -1.0) /
                                 (std::abs(theta) + std::sqrt(theta * theta + 1.0));
                const double c = 1.0 / std::sqrt(t * t + 1.0);
                const double s = t * c;
                for (std::size_t k = 0; k < n; ++k) {
                    const double akp = a(k, p), akq = a(k, q);
                    a(k, p) = c * akp - s * akq;
                    a(k, q) = s * akp + c * akq;
                }
                for (std::size_t k = 0; k < n; ++k) {
                    const double apk = a(p, k), aqk = a(q, k);
                    a(p, k) = c * apk - s * aqk;
                    a(q, k) = s * apk + c * aqk;
                }
                a(p, q) = a(q, p) = 0.0;
                for (std::size_t k = 0; k < n; ++k) {
                    const double vkp = v(k, p), vkq = v(k, q);
                    v(k, p) = c * vkp - s * vkq;
                    v(k, q) = s * vkp + c * vkq;
                }
            }
        }
    }
    if (!converged) {
        double off = 0.0;
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = i + 1; j < n; ++j) off += a(i, j) * a(i, j);
        // Stagnation at roundoff level still counts as converged.
        if (std::sqrt(2.0 * off) > 1e-12 * total)
            throw ConvergenceError("sym_eig: no convergence after " + std::to_string(max_sweeps) + " sweeps");
    }

    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t x, std::size_t y) { return a(x, x) > a(y, y); });
    EigenResult result{Tensor({n}), Tensor({n, n})};
    for (std::size_t c = 0; c < n; ++c) {
        result.values[c] = a(order[c], order[c]);
        for (std::size_t r = 0; r < n; ++r) result.vectors(r, c) = v(r, order[c]);
    }
    return result;
}

Tensor cholesky(const Tensor& a) {
    require_square(a, "cholesky");
    const std::size_t n = a.dim(0);
    Tensor l({n, n});
    for (std::size_t j = 0; j < n; ++j) {
        double d = a(j, j);
        for (std::size_t k = 0; k < j; ++k) d -= l(j, k) * l(j, k);
        if (!(d > 0.0))
            throw NotPositiveDefiniteError("cholesky: non-positive pivot " + std::to_string(d) +
                                           " at column " + std::to_string(j));
        const double ljj = std::sqrt(d);
        l(j, j) = ljj;
        for (std::size_t i = j + 1; i < n; ++i) {
            double s = a(i, j);
            for (std::size_t k = 0; k < j; ++k) s -= l(i, k) * l(j, k);
            l(i, j) = s / ljj;
        }
    }
    return l;
}

Tensor solve_lower(const Tensor& lower, const Tensor& b) {
    require_square(lower, "solve_lower");
    require_matrix(b, "solve_lower");
    const std::size_t n = lower.dim(0), m = b.dim(1);
    if (b.dim(0) != n) throw DimensionError("solve_lower: right-hand side has wrong row count");
    Tensor x = b;
    for (std::size_t col = 0; col < m; ++col) {
        for (std::size_t i = 0; i < n; ++i) {
            double s = x(i, col);
            for (std::size_t k = 0; k < i; ++k) s -= lower(i, k) * x(k, col);
            x(i, col) = s / lower(i, i);
        }
    }
    return x;
}

Tensor solve_lower_transposed(const Tensor& lower, const Tensor& b) {
    require_square(lower, "solve_lower_transposed");
    require_matrix(b, "solve_lower_transposed");
    const std::size_t n = lower.dim(0), m = b.dim(1);
    if (b.dim(0) != n) throw DimensionError("solve_lower_transposed: right-hand side has wrong row count");
    Tensor x = b;
    for (std::size_t col = 0; col < m; ++col) {
        for (std::size_t ii = n; ii-- > 0;) {
            double s = x(ii, col);
            for (std::size_t k = ii + 1; k < n; ++k) s -= lower(k, ii) * x(k, col);
            x(ii, col) = s / lower(ii, ii);
        }
    }
    return x;
}

Tensor solve_spd(const Tensor& a, const Tensor& b) {
    require_square(a, "solve_spd");
    require_matrix(b, "solve_spd");
    if (b.dim(0) != a.dim(0)) throw DimensionError("solve_spd: right-hand side has wrong row count");
    const Tensor l = cholesky(a);
    return solve_lower_transposed(l, solve_lower(l, b));
}

}  // namespace sfl
