#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "sfl/convnet.hpp"
#include "sfl/numkit.hpp"

namespace sfl {

struct LdaModel {
    Tensor projection;   // [D, d], columns by descending generalized eigenvalue
    Tensor global_mean;  // [D]
    Tensor eigenvalues;  // [d]
    std::size_t out_dim = 0;

    std::size_t in_dim() const { return global_mean.size(); }
};

// Relative ridge used when lda_fit is called without an explicit one:
// ridge = kDefaultRidgeScale * trace(S_w) / D.
inline constexpr double kDefaultRidgeScale = 1e-3;

/// Multi-class Fisher LDA. Solves S_b v = λ (S_w + ridge·I) v through a
/// Cholesky factor of the regularized within-class scatter. Columns are
/// scaled so vᵀ S_w' v = 1 and signed so their largest-magnitude entry is
/// positive.
LdaModel lda_fit(const Tensor& features, std::span<const Label> labels, std::size_t out_dim,
                 std::optional<double> ridge = std::nullopt);

Tensor lda_transform(const LdaModel& model, const Tensor& features);

// min(C - 1, 32)
std::size_t default_lda_dim(std::size_t class_count);

struct Scatter {
    Tensor within;   // [D, D]
    Tensor between;  // [D, D]
    Tensor mean;     // [D]
    std::size_t class_count = 0;
};

Scatter scatter_matrices(const Tensor& features, std::span<const Label> labels);

struct KMeansModel {
    Tensor centroids;  // [k, d]
    double inertia = 0.0;
    std::size_t k = 0;
    std::uint64_t seed = 0;
    // Inertia after every Lloyd iteration of the winning restart.
    std::vector<double> trace;
};

inline constexpr std::size_t kDefaultRestarts = 10;
inline constexpr std::size_t kDefaultMaxIter = 100;

/// Lloyd's algorithm with k-means++ seeding. The restart with the lowest
/// inertia wins (ties go to the earliest restart). A cluster that empties
/// adopts the point farthest from its current centroid.
KMeansModel kmeans_fit(const Tensor& points, std::size_t k, std::size_t restarts, std::size_t max_iter, Rng& rng);

// Every restart's trace, for checking monotonicity on all runs rather than the winner only.
struct KMeansRun {
    KMeansModel model;
    std::vector<std::size_t> labels;  // winning restart's final assignment
    std::vector<std::vector<double>> restart_traces;
};
KMeansRun kmeans_fit_traced(const Tensor& points, std::size_t k, std::size_t restarts, std::size_t max_iter,
                            Rng& rng);

/// Nearest centroid by squared distance; ties to the lowest centroid index.
std::vector<std::size_t> kmeans_assign(const KMeansModel& model, const Tensor& points);
std::size_t kmeans_assign_one(const KMeansModel& model, std::span<const double> point);

double kmeans_inertia(const KMeansModel& model, const Tensor& points);

/// Mean silhouette over all rows of `points` given cluster ids. Points in a
/// singleton cluster contribute 0.
double silhouette(const Tensor& points, std::span<const std::size_t> assignment);

struct ClassClusterMap {
    std::vector<std::size_t> class_to_subset;
    std::size_t k = 0;

    std::size_t class_count() const { return class_to_subset.size(); }
    std::vector<std::size_t> subset_classes(std::size_t subset) const;
    // Throws ContractError if a subset is empty or an index is out of range.
    void validate() const;
};

struct ClusterQuality {
    std::string tap;
    double silhouette = 0.0;
    std::vector<std::size_t> subset_sizes;  // classes per subset

    std::size_t min_size() const;
    std::size_t max_size() const;
};

struct PreclusterResult {
    ClassClusterMap map;
    KMeansModel kmeans;  // centroids live in the (optionally projected) feature space
    ClusterQuality quality;
};

/// Clusters classes by k-means over per-class mean features. The silhouette
/// is measured on the individual rows, each labelled with its class's subset.
PreclusterResult precluster_classes(const Tensor& features, std::span<const Label> labels,
                                    const std::string& tap_label, const LdaModel* lda, std::size_t k, Rng& rng,
                                    std::size_t restarts = kDefaultRestarts);

// Per-class mean rows, [C, D]. Every class in [0, C) must have a row.
Tensor class_means(const Tensor& features, std::span<const Label> labels, std::size_t class_count);

std::string quality_csv_header();
std::string quality_csv_row(const ClusterQuality& q);

}  // namespace sfl
