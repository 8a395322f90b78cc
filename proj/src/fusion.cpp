#include "sfl/fusion.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <set>

#include "sfl/parallel.hpp"

namespace sfl {

SelectorDecision SelectorDecision::one_hot(std::size_t k, std::size_t chosen) {
    if (chosen >= k) throw ContractError("selector choice out of range");
    SelectorDecision d;
    d.weights.assign(k, 0.0);
    d.weights[chosen] = 1.0;
    d.chosen = chosen;
    return d;
}

void SelectorDecision::validate() const {
    if (chosen >= weights.size()) throw ContractError("selector decision: chosen index out of range");
    double sum = 0.0;
    for (std::size_t i = 0; i < weights.size(); ++i) {
        const double w = weights[i];
        if (w != 0.0 && w != 1.0) throw ContractError("selector decision: weights must be binary");
        sum += w;
    }
    if (sum != 1.0 || weights[chosen] != 1.0) throw ContractError("selector decision: weights must be one-hot");
}

void l2_normalize_inplace(std::span<double> v) {
    double s = 0.0;
    for (double x : v) s += x * x;
    const double n = std::sqrt(s);
    if (n > 1e-12)
        for (double& x : v) x /= n;
}

Tensor l2_normalize(const Tensor& v) {
    Tensor out = v;
    l2_normalize_inplace(out.data());
    return out;
}

void fuse_into(std::span<const double> gcnn_feature, std::span<const std::span<const double>> subset_features,
               std::size_t chosen, std::span<double> out) {
    const std::size_t k = subset_features.size();
    if (k == 0) throw ContractError("fuse: no subset features");
    if (chosen >= k) throw ContractError("fuse: chosen subset out of range");
    const std::size_t ds = subset_features[0].size();
    for (const auto& f : subset_features)
        if (f.size() != ds) throw DimensionError("fuse: subset features have inconsistent widths");
    const std::size_t dg = gcnn_feature.size();
    if (out.size() != dg + k * ds) throw DimensionError("fuse: output width mismatch");
    std::fill(out.begin(), out.end(), 0.0);
    std::copy(gcnn_feature.begin(), gcnn_feature.end(), out.begin());
    l2_normalize_inplace(out.subspan(0, dg));
    auto block = out.subspan(dg + chosen * ds, ds);
    std::copy(subset_features[chosen].begin(), subset_features[chosen].end(), block.begin());
    l2_normalize_inplace(block);
}

FusedFeature fuse(const Tensor& gcnn_feature, std::span<const Tensor> subset_features,
                  const SelectorDecision& decision) {
    decision.validate();
    if (decision.weights.size() != subset_features.size())
        throw DimensionError("fuse: decision width does not match subset count");
    std::vector<std::span<const double>> views;
    for (const auto& f : subset_features) views.push_back(f.data());
    const std::size_t ds = subset_features.empty() ? 0 : subset_features[0].size();
    FusedFeature out;
    out.vector = Tensor({gcnn_feature.size() + subset_features.size() * ds});
    out.chosen_subset = decision.chosen;
    fuse_into(gcnn_feature.data(), views, decision.chosen, out.vector.data());
    return out;
}

namespace {

struct BinarySvm {
    std::vector<double> w;
    double b = 0.0;
};

double binary_objective(const BinarySvm& m, double lambda, const Tensor& x, std::span<const double> y) {
    const std::size_t n = x.dim(0);
    double hinge = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double margin = y[i] * (dot(m.w, x.row(i)) + m.b);
        hinge += std::max(0.0, 1.0 - margin);
    }
    double reg = m.b * m.b;
    for (double v : m.w) reg += v * v;
    return 0.5 * lambda * reg + hinge / static_cast<double>(n);
}

// Sub-gradient steps do not decrease the objective monotonically, and
// neither does their running average. After every epoch the average is
// scored and kept only if it improves on the best epoch-end average so far.
BinarySvm train_binary(const Tensor& x, std::span<const double> y, double lambda, std::size_t epochs,
                       std::span<const std::size_t> checkpoints, std::vector<double>* objectives,
                       std::vector<double>* raw_objectives, Rng& rng) {
    const std::size_t n = x.dim(0), d = x.dim(1);
    BinarySvm cur{std::vector<double>(d, 0.0), 0.0};
    BinarySvm avg = cur;
    BinarySvm best = cur;
    double best_obj = std::numeric_limits<double>::infinity();
    const double radius = 1.0 / std::sqrt(lambda);
    std::size_t t = 0;
    std::size_t next_cp = 0;
    for (std::size_t epoch = 1; epoch <= epochs; ++epoch) {
        const auto order = rng.permutation(n);
        for (std::size_t i : order) {
            ++t;
            const double eta = 1.0 / (lambda * static_cast<double>(t));
            const auto xi = x.row(i);
            const double margin = y[i] * (dot(cur.w, xi) + cur.b);
            const double shrink = 1.0 - eta * lambda;
            for (double& v : cur.w) v *= shrink;
            cur.b *= shrink;
            if (margin < 1.0) {
                const double step = eta * y[i];
                for (std::size_t j = 0; j < d; ++j) cur.w[j] += step * xi[j];
                cur.b += step;
            }
            double sq = cur.b * cur.b;
            for (double v : cur.w) sq += v * v;
            const double norm = std::sqrt(sq);
            if (norm > radius) {
                const double s = radius / norm;
                for (double& v : cur.w) v *= s;
                cur.b *= s;
            }
            const double a = 1.0 / static_cast<double>(t);
            for (std::size_t j = 0; j < d; ++j) avg.w[j] += a * (cur.w[j] - avg.w[j]);
            avg.b += a * (cur.b - avg.b);
        }
        const double obj = binary_objective(avg, lambda, x, y);
        if (obj < best_obj) {
            best_obj = obj;
            best = avg;
        }
        if (next_cp < checkpoints.size() && checkpoints[next_cp] == epoch) {
            if (objectives) objectives->push_back(best_obj);
            if (raw_objectives) raw_objectives->push_back(obj);
            ++next_cp;
        }
    }
    return best;
}

}  // namespace

SvmModel svm_train(const Tensor& features, std::span<const Label> labels, const SvmOptions& options, Rng& rng,
                   SvmTrainReport* report) {
    if (features.rank() != 2) throw DimensionError("svm_train: expected an [N, D] feature matrix");
    const std::size_t n = features.dim(0), d = features.dim(1);
    if (labels.size() != n) throw DimensionError("svm_train: label count does not match feature rows");
    if (!(options.lambda > 0.0)) throw ContractError("svm_train: lambda must be positive");
    if (options.epochs == 0) throw ContractError("svm_train: epochs must be positive");
    Label hi = -1;
    std::set<Label> distinct;
    for (Label l : labels) {
        if (l < 0) throw ContractError("svm_train: negative label");
        hi = std::max(hi, l);
        distinct.insert(l);
    }
    if (distinct.size() < 2) throw ContractError("svm_train: needs at least two classes");
    const auto c = static_cast<std::size_t>(hi + 1);
    if (n < c) throw ContractError("svm_train: fewer samples than classes");

    std::vector<std::size_t> checkpoints{1, std::max<std::size_t>(1, options.epochs / 2), options.epochs};
    checkpoints.erase(std::unique(checkpoints.begin(), checkpoints.end()), checkpoints.end());

    SvmModel model;
    model.lambda = options.lambda;
    model.weights = Tensor({c, d});
    model.biases = Tensor({c});
    std::vector<std::vector<double>> objectives(c), raw(c);
    const std::uint64_t base = rng.next_u64();
    parallel_for(c, options.threads, [&](std::size_t cls) {
        std::vector<double> y(n);
        for (std::size_t i = 0; i < n; ++i) y[i] = labels[i] == static_cast<Label>(cls) ? 1.0 : -1.0;
        Rng local(derive_seed(base, cls));
        BinarySvm m = train_binary(features, y, options.lambda, options.epochs, checkpoints,
                                   report ? &objectives[cls] : nullptr, report ? &raw[cls] : nullptr, local);
        std::copy(m.w.begin(), m.w.end(), model.weights.row(cls).begin());
        model.biases[cls] = m.b;
    });
    if (!model.weights.all_finite() || !model.biases.all_finite())
        throw ConvergenceError("svm_train: non-finite weights");
    if (report) {
        report->objective_checkpoints = std::move(objectives);
        report->raw_objective_checkpoints = std::move(raw);
        report->checkpoint_epochs = checkpoints;
    }
    return model;
}

double svm_objective(const SvmModel& model, std::size_t cls, const Tensor& features, std::span<const Label> labels) {
    if (features.dim(1) != model.feature_dim()) throw DimensionError("svm_objective: width mismatch");
    BinarySvm m{std::vector<double>(model.weights.row(cls).begin(), model.weights.row(cls).end()),
                model.biases[cls]};
    std::vector<double> y(labels.size());
    for (std::size_t i = 0; i < labels.size(); ++i) y[i] = labels[i] == static_cast<Label>(cls) ? 1.0 : -1.0;
    return binary_objective(m, model.lambda, features, y);
}

SvmPrediction svm_predict(const SvmModel& model, std::span<const double> feature) {
    if (feature.size() != model.feature_dim())
        throw DimensionError("svm_predict: feature width " + std::to_string(feature.size()) +
                             " does not match model width " + std::to_string(model.feature_dim()));
    SvmPrediction p;
    p.scores = Tensor({model.class_count()});
    for (std::size_t c = 0; c < model.class_count(); ++c)
        p.scores[c] = dot(model.weights.row(c), feature) + model.biases[c];
    p.label = argmax(p.scores.data());
    return p;
}

SvmPrediction svm_predict(const SvmModel& model, const Tensor& feature) {
    return svm_predict(model, feature.data());
}

std::vector<std::size_t> svm_predict_batch(const SvmModel& model, const Tensor& features) {
    if (features.rank() != 2) throw DimensionError("svm_predict_batch: expected an [N, D] matrix");
    std::vector<std::size_t> out(features.dim(0));
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = svm_predict(model, features.row(i)).label;
    return out;
}

}  // namespace sfl
