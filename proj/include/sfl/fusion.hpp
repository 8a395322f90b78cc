#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "sfl/convnet.hpp"
#include "sfl/numkit.hpp"

namespace sfl {

/// One-hot subset routing produced by a selector.
struct SelectorDecision {
    std::vector<double> weights;  // exactly one entry is 1, the rest 0
    std::size_t chosen = 0;

    static SelectorDecision one_hot(std::size_t k, std::size_t chosen);
    void validate() const;
};

// v / ‖v‖₂ when ‖v‖₂ > 1e-12, otherwise v unchanged.
Tensor l2_normalize(const Tensor& v);
void l2_normalize_inplace(std::span<double> v);

struct FusedFeature {
    Tensor vector;  // [D_g + K·D_s]
    std::size_t chosen_subset = 0;
};

/// [ĝ ‖ w₁·φ̂₁ ‖ … ‖ w_K·φ̂_K], each block l2-normalized separately.
FusedFeature fuse(const Tensor& gcnn_feature, std::span<const Tensor> subset_features,
                  const SelectorDecision& decision);

// Writes the fused vector for one image into `out` (length D_g + K·D_s).
void fuse_into(std::span<const double> gcnn_feature, std::span<const std::span<const double>> subset_features,
               std::size_t chosen, std::span<double> out);

struct SvmOptions {
    double lambda = 1e-4;
    std::size_t epochs = 50;
    std::size_t threads = 1;
};

/// One-vs-all linear SVM. The bias is treated as the weight of a constant
/// feature, so the per-class objective is
///   λ/2 (‖w‖² + b²) + mean_i max(0, 1 − y_i (w·x_i + b)).
struct SvmModel {
    Tensor weights;  // [C, D]
    Tensor biases;   // [C]
    double lambda = 1e-4;

    std::size_t class_count() const { return biases.size(); }
    std::size_t feature_dim() const { return weights.rank() == 2 ? weights.dim(1) : 0; }
};

struct SvmTrainReport {
    // objective_checkpoints[c] = objective of class c's returned iterate (the
    // best epoch-end average so far) after epochs {1, epochs/2, epochs},
    // deduplicated and ascending.
    std::vector<std::vector<double>> objective_checkpoints;
    // Objective of the plain running average at the same checkpoints.
    std::vector<std::vector<double>> raw_objective_checkpoints;
    std::vector<std::size_t> checkpoint_epochs;
};

/// Pegasos-style stochastic sub-gradient descent, step 1/(λt), with iterate
/// averaging; the returned iterate is the epoch-end average with the lowest
/// objective. Sample order per epoch is a seeded shuffle; class c uses its
/// own stream derived from the rng, so results do not depend on threading.
SvmModel svm_train(const Tensor& features, std::span<const Label> labels, const SvmOptions& options, Rng& rng,
                   SvmTrainReport* report = nullptr);

struct SvmPrediction {
    std::size_t label = 0;
    Tensor scores;  // [C]
};

SvmPrediction svm_predict(const SvmModel& model, std::span<const double> feature);
SvmPrediction svm_predict(const SvmModel& model, const Tensor& feature);
std::vector<std::size_t> svm_predict_batch(const SvmModel& model, const Tensor& features);

// Per-class objective of a given model, with y = +1 for class c and -1 otherwise.
double svm_objective(const SvmModel& model, std::size_t cls, const Tensor& features, std::span<const Label> labels);

}  // namespace sfl
