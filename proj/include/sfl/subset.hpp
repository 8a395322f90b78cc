#pragma once

#include <cstddef>
#include <iosfwd>
#include <map>
#include <memory>
#include <string>
#include <variant>
#include <vector>

#include "sfl/cluster.hpp"
#include "sfl/convnet.hpp"
#include "sfl/dataset.hpp"
#include "sfl/fusion.hpp"

namespace sfl {

struct Subset {
    std::vector<std::size_t> classes;  // original class ids, ascending
    std::vector<std::size_t> rows;     // dataset row indices (X_k)
    std::map<std::size_t, Label> remap;  // original class -> dense local label

    std::size_t size() const { return rows.size(); }
};

struct SubsetPartition {
    std::vector<Subset> subsets;

    std::size_t k() const { return subsets.size(); }
    // Throws ContractError unless subsets are disjoint, covering, nonempty and
    // their remaps are bijections onto [0, |C_k|).
    void validate(std::size_t class_count) const;
};

/// Routes every dataset row to its class's subset.
SubsetPartition build_partition(const ClassClusterMap& map, const Dataset& dataset);

struct CentroidSelector {
    KMeansModel kmeans;
    LdaModel lda;
    std::shared_ptr<const Network> gcnn;
};

struct ScnnSelector {
    Network net;
};

using Selector = std::variant<std::monostate, CentroidSelector, ScnnSelector>;

std::string selector_kind(const Selector& s);

struct SubsetEnsemble {
    std::vector<Network> nets;  // DFCNN_1..K
    TapId tap = TapId::FcPenultimate;
    Selector selector;
    std::vector<std::string> warnings;

    std::size_t k() const { return nets.size(); }
    std::size_t feature_dim() const;
};

struct SubsetTrainOptions {
    TrainConfig cfg;  // applied as-is (callers pass the fine-tuning config)
    std::size_t threads = 1;
    std::ostream* diagnostics = nullptr;
};

/// DFCNN_k = base trunk + fresh |C_k| head, fine-tuned on X_k only.
/// Batch size is capped at N_k for small subsets.
SubsetEnsemble train_subset_nets(const SubsetPartition& partition, const Dataset& dataset, const Network& base,
                                 const SubsetTrainOptions& options);

// Images of class c get label map[c].
std::vector<Label> subset_labels(const ClassClusterMap& map, std::span<const Label> labels);

ScnnSelector train_scnn(const ClassClusterMap& map, const Dataset& dataset, const Network& base,
                        const TrainConfig& cfg);

/// Max voting over per-subset scores: argmax with ties to the lowest index.
SelectorDecision decide(std::span<const double> subset_scores);

SelectorDecision select(const Selector& selector, const Tensor& image);
std::vector<SelectorDecision> select_batch(const Selector& selector, const Tensor& images);

// Centroid rule on an already projected feature.
SelectorDecision select_centroid_projected(const KMeansModel& kmeans, std::span<const double> projected);

std::vector<Tensor> extract_subset_features(const SubsetEnsemble& ensemble, const Tensor& image);
// K matrices, each [N, D_s].
std::vector<Tensor> extract_subset_features_batch(const SubsetEnsemble& ensemble, const Tensor& images);

// Runs forward in chunks to bound memory.
Tensor forward_chunked(const Network& net, const Tensor& images, TapId tap, std::size_t chunk = 256);

}  // namespace sfl
