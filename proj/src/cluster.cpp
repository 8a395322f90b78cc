#include "sfl/cluster.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

namespace sfl {

namespace {

std::size_t count_classes(std::span<const Label> labels) {
    Label hi = -1;
    for (Label l : labels) {
        if (l < 0) throw ContractError("negative class label");
        hi = std::max(hi, l);
    }
    return static_cast<std::size_t>(hi + 1);
}

void require_rows(const Tensor& t, const char* what) {
    if (t.rank() != 2) throw DimensionError(std::string(what) + ": expected an [N, D] matrix");
}

std::vector<std::size_t> nearest(const Tensor& centroids, const Tensor& points) {
    const std::size_t n = points.dim(0), k = centroids.dim(0);
    std::vector<std::size_t> out(n);
    for (std::size_t i = 0; i < n; ++i) {
        std::size_t best = 0;
        double bd = squared_distance(points.row(i), centroids.row(0));
        for (std::size_t j = 1; j < k; ++j) {
            const double d = squared_distance(points.row(i), centroids.row(j));
            if (d < bd) {
                bd = d;
                best = j;
            }
        }
        out[i] = best;
    }
    return out;
}

Tensor kmeanspp_seed(const Tensor& points, std::size_t k, Rng& rng) {
    const std::size_t n = points.dim(0), d = points.dim(1);
    Tensor centroids({k, d});
    std::size_t first = rng.uniform_index(n);
    std::copy(points.row(first).begin(), points.row(first).end(), centroids.row(0).begin());
    std::vector<double> dist(n);
    for (std::size_t i = 0; i < n; ++i) dist[i] = squared_distance(points.row(i), centroids.row(0));
    for (std::size_t c = 1; c < k; ++c) {
        double total = 0.0;
        for (double v : dist) total += v;
        std::size_t pick = 0;
        if (total > 0.0) {
            const double r = rng.uniform() * total;
            double acc = 0.0;
            pick = n - 1;
            for (std::size_t i = 0; i < n; ++i) {
                acc += dist[i];
                if (acc > r && dist[i] > 0.0) {
                    pick = i;
                    break;
                }
            }
            while (dist[pick] == 0.0 && pick > 0) --pick;
        } else {
            pick = rng.uniform_index(n);
        }
        std::copy(points.row(pick).begin(), points.row(pick).end(), centroids.row(c).begin());
        for (std::size_t i = 0; i < n; ++i)
            dist[i] = std::min(dist[i], squared_distance(points.row(i), centroids.row(c)));
    }
    return centroids;
}

Tensor cluster_means(const Tensor& points, std::span<const std::size_t> assign, std::size_t k) {
    const std::size_t n = points.dim(0), d = points.dim(1);
    Tensor means({k, d});
    std::vector<std::size_t> count(k, 0);
    for (std::size_t i = 0; i < n; ++i) {
        auto m = means.row(assign[i]);
        auto p = points.row(i);
        for (std::size_t j = 0; j < d; ++j) m[j] += p[j];
        ++count[assign[i]];
    }
    for (std::size_t c = 0; c < k; ++c)
        for (auto& v : means.row(c)) v /= static_cast<double>(count[c]);
    return means;
}

double assignment_cost(const Tensor& points, const Tensor& centroids, std::span<const std::size_t> assign) {
    double s = 0.0;
    for (std::size_t i = 0; i < points.dim(0); ++i) s += squared_distance(points.row(i), centroids.row(assign[i]));
    return s;
}

// Gives every empty cluster the point farthest from its current centroid,
// taken from a cluster that keeps at least one member.
void repair_empty(const Tensor& points, Tensor& centroids, std::vector<std::size_t>& assign, std::size_t k) {
    std::vector<std::size_t> count(k, 0);
    for (std::size_t a : assign) ++count[a];
    for (std::size_t c = 0; c < k; ++c) {
        if (count[c] > 0) continue;
        std::size_t far = 0;
        double fd = -1.0;
        for (std::size_t i = 0; i < points.dim(0); ++i) {
            if (count[assign[i]] < 2) continue;
            const double d = squared_distance(points.row(i), centroids.row(assign[i]));
            if (d > fd) {
                fd = d;
                far = i;
            }
        }
        --count[assign[far]];
        assign[far] = c;
        ++count[c];
        std::copy(points.row(far).begin(), points.row(far).end(), centroids.row(c).begin());
    }
}

struct LloydOutcome {
    Tensor centroids;
    std::vector<std::size_t> assign;
    std::vector<double> trace;
};

LloydOutcome lloyd(const Tensor& points, std::size_t k, std::size_t max_iter, Rng& rng) {
    LloydOutcome out;
    out.centroids = kmeanspp_seed(points, k, rng);
    std::vector<std::size_t> prev;
    for (std::size_t it = 0; it < std::max<std::size_t>(max_iter, 1); ++it) {
        auto assign = nearest(out.centroids, points);
        repair_empty(points, out.centroids, assign, k);
        if (it > 0 && assign == prev) break;
        out.centroids = cluster_means(points, assign, k);
        out.trace.push_back(assignment_cost(points, out.centroids, assign));
        prev = assign;
    }
    out.assign = std::move(prev);
    return out;
}

}  // namespace

Scatter scatter_matrices(const Tensor& features, std::span<const Label> labels) {
    require_rows(features, "scatter_matrices");
    const std::size_t n = features.dim(0), d = features.dim(1);
    if (labels.size() != n) throw DimensionError("label count does not match feature rows");
    const std::size_t c = count_classes(labels);
    Scatter s;
    s.class_count = c;
    Tensor means = class_means(features, labels, c);
    std::vector<std::size_t> counts(c, 0);
    for (Label l : labels) ++counts[static_cast<std::size_t>(l)];
    s.mean = Tensor({d});
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < d; ++j) s.mean[j] += features(i, j);
    for (std::size_t j = 0; j < d; ++j) s.mean[j] /= static_cast<double>(n);

    s.within = Tensor({d, d});
    std::vector<double> diff(d);
    for (std::size_t i = 0; i < n; ++i) {
        auto mu = means.row(static_cast<std::size_t>(labels[i]));
        for (std::size_t j = 0; j < d; ++j) diff[j] = features(i, j) - mu[j];
        for (std::size_t a = 0; a < d; ++a) {
            if (diff[a] == 0.0) continue;
            for (std::size_t b = 0; b < d; ++b) s.within(a, b) += diff[a] * diff[b];
        }
    }
    s.between = Tensor({d, d});
    for (std::size_t cls = 0; cls < c; ++cls) {
        auto mu = means.row(cls);
        for (std::size_t j = 0; j < d; ++j) diff[j] = mu[j] - s.mean[j];
        const double w = static_cast<double>(counts[cls]);
        for (std::size_t a = 0; a < d; ++a)
            for (std::size_t b = 0; b < d; ++b) s.between(a, b) += w * diff[a] * diff[b];
    }
    return s;
}

std::size_t default_lda_dim(std::size_t class_count) {
    return std::min<std::size_t>(class_count > 0 ? class_count - 1 : 0, 32);
}

LdaModel lda_fit(const Tensor& features, std::span<const Label> labels, std::size_t out_dim,
                 std::optional<double> ridge) {
    require_rows(features, "lda_fit");
    const std::size_t n = features.dim(0), d = features.dim(1);
    const std::size_t c = count_classes(labels);
    if (c < 2) throw ContractError("lda_fit: needs at least two classes");
    if (n <= c) throw ContractError("lda_fit: needs more rows than classes");
    if (out_dim == 0 || out_dim > std::min(d, c - 1))
        throw ContractError("lda_fit: out_dim " + std::to_string(out_dim) + " exceeds min(D, C-1) = " +
                            std::to_string(std::min(d, c - 1)));

    Scatter s = scatter_matrices(features, labels);
    const double r = ridge.value_or(kDefaultRidgeScale * trace(s.within) / static_cast<double>(d));
    if (r < 0.0) throw ContractError("lda_fit: ridge must be nonnegative");
    for (std::size_t i = 0; i < d; ++i) s.within(i, i) += r;

    const Tensor l = cholesky(s.within);
    // M = L⁻¹ S_b L⁻ᵀ
    const Tensor half = solve_lower(l, s.between);
    Tensor m = solve_lower(l, half.transposed());
    for (std::size_t i = 0; i < d; ++i)
        for (std::size_t j = i + 1; j < d; ++j) m(i, j) = m(j, i) = 0.5 * (m(i, j) + m(j, i));
    const EigenResult eig = sym_eig(m);

    Tensor u({d, out_dim});
    for (std::size_t i = 0; i < d; ++i)
        for (std::size_t j = 0; j < out_dim; ++j) u(i, j) = eig.vectors(i, j);
    Tensor v = solve_lower_transposed(l, u);
    for (std::size_t j = 0; j < out_dim; ++j) {
        std::size_t big = 0;
        for (std::size_t i = 1; i < d; ++i)
            if (std::abs(v(i, j)) > std::abs(v(big, j)) + 1e-12 * std::abs(v(big, j))) big = i;
        if (v(big, j) < 0.0)
            for (std::size_t i = 0; i < d; ++i) v(i, j) = -v(i, j);
    }

    LdaModel model;
    model.projection = std::move(v);
    model.global_mean = s.mean;
    model.out_dim = out_dim;
    model.eigenvalues = Tensor({out_dim});
    for (std::size_t j = 0; j < out_dim; ++j) model.eigenvalues[j] = eig.values[j];
    return model;
}

Tensor lda_transform(const LdaModel& model, const Tensor& features) {
    require_rows(features, "lda_transform");
    if (features.dim(1) != model.in_dim())
        throw DimensionError("lda_transform: feature width " + std::to_string(features.dim(1)) +
                             " does not match model width " + std::to_string(model.in_dim()));
    Tensor centred = features;
    for (std::size_t i = 0; i < centred.dim(0); ++i) {
        auto r = centred.row(i);
        for (std::size_t j = 0; j < r.size(); ++j) r[j] -= model.global_mean[j];
    }
    return matmul(centred, model.projection);
}

KMeansRun kmeans_fit_traced(const Tensor& points, std::size_t k, std::size_t restarts, std::size_t max_iter,
                            Rng& rng) {
    require_rows(points, "kmeans_fit");
    if (k == 0) throw ContractError("kmeans_fit: k must be positive");
    if (points.dim(0) < k)
        throw ContractError("kmeans_fit: " + std::to_string(points.dim(0)) + " points cannot form " +
                            std::to_string(k) + " clusters");
    if (restarts == 0) throw ContractError("kmeans_fit: restarts must be positive");

    const std::uint64_t base = rng.next_u64();
    KMeansRun run;
    std::optional<LloydOutcome> best;
    for (std::size_t r = 0; r < restarts; ++r) {
        Rng local(derive_seed(base, r));
        LloydOutcome o = lloyd(points, k, max_iter, local);
        run.restart_traces.push_back(o.trace);
        if (!best || o.trace.back() < best->trace.back()) best = std::move(o);
    }
    run.model.centroids = std::move(best->centroids);
    run.model.inertia = best->trace.back();
    run.model.trace = std::move(best->trace);
    run.model.k = k;
    run.model.seed = base;
    run.labels = std::move(best->assign);
    return run;
}

KMeansModel kmeans_fit(const Tensor& points, std::size_t k, std::size_t restarts, std::size_t max_iter, Rng& rng) {
    return kmeans_fit_traced(points, k, restarts, max_iter, rng).model;
}

std::vector<std::size_t> kmeans_assign(const KMeansModel& model, const Tensor& points) {
    require_rows(points, "kmeans_assign");
    if (points.dim(1) != model.centroids.dim(1))
        throw DimensionError("kmeans_assign: point width does not match centroids");
    return nearest(model.centroids, points);
}

std::size_t kmeans_assign_one(const KMeansModel& model, std::span<const double> point) {
    if (point.size() != model.centroids.dim(1))
        throw DimensionError("kmeans_assign: point width does not match centroids");
    std::size_t best = 0;
    double bd = squared_distance(point, model.centroids.row(0));
    for (std::size_t j = 1; j < model.centroids.dim(0); ++j) {
        const double d = squared_distance(point, model.centroids.row(j));
        if (d < bd) {
            bd = d;
            best = j;
        }
    }
    return best;
}

double kmeans_inertia(const KMeansModel& model, const Tensor& points) {
    const auto assign = kmeans_assign(model, points);
    return assignment_cost(points, model.centroids, assign);
}

double silhouette(const Tensor& points, std::span<const std::size_t> assignment) {
    require_rows(points, "silhouette");
    const std::size_t n = points.dim(0);
    if (assignment.size() != n) throw DimensionError("silhouette: assignment length mismatch");
    if (n == 0) return 0.0;
    const std::size_t k = *std::max_element(assignment.begin(), assignment.end()) + 1;
    std::vector<std::size_t> count(k, 0);
    for (std::size_t a : assignment) ++count[a];
    std::size_t occupied = 0;
    for (std::size_t c : count) occupied += c > 0;
    if (occupied < 2) return 0.0;

    std::vector<double> sums(k);
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        std::fill(sums.begin(), sums.end(), 0.0);
        for (std::size_t j = 0; j < n; ++j) {
            if (i == j) continue;
            sums[assignment[j]] += std::sqrt(squared_distance(points.row(i), points.row(j)));
        }
        const std::size_t own = assignment[i];
        if (count[own] < 2) continue;
        const double a = sums[own] / static_cast<double>(count[own] - 1);
        double b = std::numeric_limits<double>::infinity();
        for (std::size_t c = 0; c < k; ++c)
            if (c != own && count[c] > 0) b = std::min(b, sums[c] / static_cast<double>(count[c]));
        const double m = std::max(a, b);
        if (m > 0.0) total += (b - a) / m;
    }
    return total / static_cast<double>(n);
}

std::vector<std::size_t> ClassClusterMap::subset_classes(std::size_t subset) const {
    std::vector<std::size_t> out;
    for (std::size_t c = 0; c < class_to_subset.size(); ++c)
        if (class_to_subset[c] == subset) out.push_back(c);
    return out;
}

void ClassClusterMap::validate() const {
    if (k == 0) throw ContractError("cluster map has k = 0");
    std::vector<std::size_t> count(k, 0);
    for (std::size_t s : class_to_subset) {
        if (s >= k) throw ContractError("cluster map entry out of range");
        ++count[s];
    }
    for (std::size_t s = 0; s < k; ++s)
        if (count[s] == 0) throw ContractError("cluster map subset " + std::to_string(s) + " is empty");
}

std::size_t ClusterQuality::min_size() const {
    return subset_sizes.empty() ? 0 : *std::min_element(subset_sizes.begin(), subset_sizes.end());
}

std::size_t ClusterQuality::max_size() const {
    return subset_sizes.empty() ? 0 : *std::max_element(subset_sizes.begin(), subset_sizes.end());
}

Tensor class_means(const Tensor& features, std::span<const Label> labels, std::size_t class_count) {
    require_rows(features, "class_means");
    const std::size_t d = features.dim(1);
    Tensor means({class_count, d});
    std::vector<std::size_t> count(class_count, 0);
    for (std::size_t i = 0; i < features.dim(0); ++i) {
        const auto c = static_cast<std::size_t>(labels[i]);
        if (labels[i] < 0 || c >= class_count) throw ContractError("class_means: label out of range");
        auto m = means.row(c);
        auto x = features.row(i);
        for (std::size_t j = 0; j < d; ++j) m[j] += x[j];
        ++count[c];
    }
    for (std::size_t c = 0; c < class_count; ++c) {
        if (count[c] == 0) throw ContractError("class " + std::to_string(c) + " has no feature rows");
        for (auto& v : means.row(c)) v /= static_cast<double>(count[c]);
    }
    return means;
}

PreclusterResult precluster_classes(const Tensor& features, std::span<const Label> labels,
                                    const std::string& tap_label, const LdaModel* lda, std::size_t k, Rng& rng,
                                    std::size_t restarts) {
    require_rows(features, "precluster_classes");
    if (labels.size() != features.dim(0)) throw DimensionError("label count does not match feature rows");
    const std::size_t c = count_classes(labels);
    if (k > c)
        throw ContractError("precluster_classes: k = " + std::to_string(k) + " exceeds class count " +
                            std::to_string(c));
    const Tensor points = lda ? lda_transform(*lda, features) : features;
    const Tensor means = class_means(points, labels, c);
    KMeansRun run = kmeans_fit_traced(means, k, restarts, kDefaultMaxIter, rng);

    PreclusterResult out;
    out.map.k = k;
    out.map.class_to_subset = run.labels;
    out.map.validate();
    out.kmeans = std::move(run.model);
    out.quality.tap = tap_label;
    out.quality.subset_sizes.assign(k, 0);
    for (std::size_t s : out.map.class_to_subset) ++out.quality.subset_sizes[s];
    std::vector<std::size_t> row_subset(labels.size());
    for (std::size_t i = 0; i < labels.size(); ++i)
        row_subset[i] = out.map.class_to_subset[static_cast<std::size_t>(labels[i])];
    out.quality.silhouette = silhouette(points, row_subset);
    return out;
}

std::string quality_csv_header() {
    return "tap,silhouette,min_cluster_size,max_cluster_size,cluster_sizes";
}

std::string quality_csv_row(const ClusterQuality& q) {
    std::ostringstream os;
    os.precision(17);
    os << q.tap << ',' << q.silhouette << ',' << q.min_size() << ',' << q.max_size() << ',';
    for (std::size_t i = 0; i < q.subset_sizes.size(); ++i) {
        if (i) os << ';';
        os << q.subset_sizes[i];
    }
    return os.str();
}

}  // namespace sfl
