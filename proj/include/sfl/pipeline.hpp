#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "sfl/cluster.hpp"
#include "sfl/container.hpp"
#include "sfl/convnet.hpp"
#include "sfl/dataset.hpp"
#include "sfl/fusion.hpp"
#include "sfl/subset.hpp"

namespace sfl {

using DatasetMap = std::map<std::string, Dataset>;

enum class StageMode { Retrain, FineTune };

struct StageSpec {
    std::string dataset;
    StageMode mode = StageMode::FineTune;
    std::optional<std::size_t> epochs;
    std::optional<double> learning_rate;
};

/// Ordered training stages, named like "IN-rt-BS-ft-CUB-ft".
struct StageGraph {
    std::vector<StageSpec> stages;

    // "A-rt-B-ft": alternating dataset ids and modes.
    static StageGraph parse(const std::string& name);

    std::string name() const;
    std::size_t steps() const { return stages.size(); }
    // First stage must be rt, every later stage ft, ids nonempty and '-'-free.
    void validate() const;
};

struct StageGraphResult {
    Network net;
    std::vector<std::vector<double>> loss_histories;  // one per stage
    std::string provenance;
    std::size_t steps = 0;
};

/// Stage 1 trains the desk architecture from scratch on its dataset's train
/// split; each later stage re-sizes the head to the next dataset and
/// fine-tunes with the learning rate divided by 10.
StageGraphResult run_stage_graph(const StageGraph& graph, const DatasetMap& datasets, const TrainConfig& base_cfg,
                                 std::uint64_t seed, std::size_t penultimate = 64);

struct Metrics {
    double mean_accuracy = 0.0;     // unweighted mean of per-class accuracies
    double overall_accuracy = 0.0;
    std::vector<std::vector<std::size_t>> confusion;  // [truth][predicted]

    std::vector<double> per_class_accuracy() const;
};

Metrics compute_metrics(std::span<const Label> truth, std::span<const std::size_t> predicted,
                        std::size_t class_count);

enum class SelectorKind { Centroid, Scnn };

std::string selector_kind_name(SelectorKind k);
SelectorKind parse_selector_kind(const std::string& s);

struct SystemConfig {
    StageGraph graph;            // produces the GCNN
    std::string target;          // dataset id the classifier is built for
    std::size_t k = 6;
    TrainConfig train;           // from-scratch config; fine-tuning derives from it
    std::optional<std::size_t> subset_epochs;    // DFCNN fine-tuning epochs
    std::optional<std::size_t> selector_epochs;  // SCNN fine-tuning epochs
    SelectorKind selector = SelectorKind::Scnn;
    SvmOptions svm;
    std::optional<std::size_t> lda_dim;
    std::size_t penultimate = 64;
    std::uint64_t seed = 0;
    std::size_t threads = 1;
    std::ostream* diagnostics = nullptr;
};

struct ModelBundle {
    std::shared_ptr<const Network> gcnn;
    LdaModel lda;
    KMeansModel kmeans;
    ClassClusterMap cluster_map;
    SubsetEnsemble ensemble;
    SvmModel svm;
    std::string provenance;  // stage-graph name
    std::size_t steps = 0;
    std::uint64_t seed = 0;

    std::size_t class_count() const { return cluster_map.class_count(); }
    std::size_t fused_dim() const;
    // Throws InvariantError on any dimensional inconsistency.
    void validate() const;
};

// Intermediate products of build_system that are not part of the bundle.
struct BuildReport {
    StageGraphResult stages;
    ClusterQuality quality;
    CentroidSelector centroid;
    std::optional<ScnnSelector> scnn;
    std::vector<std::string> warnings;
};

/// GCNN via the stage graph, then lda-fc6 pre-clustering of the target
/// classes, K subset networks, the selector, fused features and the SVM.
ModelBundle build_system(const DatasetMap& datasets, const SystemConfig& cfg, BuildReport* report = nullptr);

// Fused feature rows for a batch of images, [N, D_g + K·D_s].
Tensor fused_features(const ModelBundle& bundle, const Tensor& images);

/// GCNN feature -> selector -> K DFCNN features -> fuse -> SVM, per image.
Metrics evaluate(const ModelBundle& bundle, const Dataset& dataset, Split split);

/// Fraction of `split` rows whose selector decision equals map[label].
double selector_accuracy(const Selector& selector, const ClassClusterMap& map, const Dataset& dataset, Split split);

/// SVM over l2-normalized features at `tap`, trained on the train split and
/// scored on the test split.
Metrics feature_svm_metrics(const Network& net, const Dataset& dataset, const SvmOptions& svm, std::uint64_t seed,
                            TapId tap = TapId::FcPenultimate);

/// Pre-clusters the classes of `dataset`'s train split three ways: on
/// ConvLast features ("conv5"), on FcPenultimate features ("fc6") and on
/// LDA-projected FcPenultimate features ("lda-fc6").
std::vector<ClusterQuality> tap_cluster_report(const Network& gcnn, const Dataset& dataset, std::size_t k,
                                               std::optional<std::size_t> lda_dim, std::uint64_t seed);

// Persistence.
Container dataset_container(const Dataset& ds);
Dataset dataset_from_container(const Container& c);
void save_dataset(const Dataset& ds, const std::filesystem::path& path);
Dataset load_dataset(const std::filesystem::path& path);

Container bundle_container(const ModelBundle& bundle);
ModelBundle bundle_from_container(const Container& c);
std::vector<std::uint8_t> bundle_bytes(const ModelBundle& bundle);
void save_bundle(const ModelBundle& bundle, const std::filesystem::path& path);
ModelBundle load_bundle(const std::filesystem::path& path);

// CSV exports.
std::string metrics_csv_header();
std::string metrics_csv_row(const std::string& system, std::uint64_t seed, const Metrics& m);
std::string confusion_csv(const Metrics& m);

// Formats a double so that parsing it back yields the same bits.
std::string exact(double v);

}  // namespace sfl
