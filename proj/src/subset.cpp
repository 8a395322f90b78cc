#include "sfl/subset.hpp"

#include <algorithm>
#include <ostream>
#include <set>

#include "sfl/parallel.hpp"

namespace sfl {

void SubsetPartition::validate(std::size_t class_count) const {
    if (subsets.empty()) throw ContractError("partition has no subsets");
    std::vector<int> seen(class_count, 0);
    for (std::size_t k = 0; k < subsets.size(); ++k) {
        const Subset& s = subsets[k];
        if (s.rows.empty()) throw ContractError("subset " + std::to_string(k) + " has no images");
        if (s.remap.size() != s.classes.size()) throw ContractError("subset remap does not cover its classes");
        std::set<Label> locals;
        for (std::size_t c : s.classes) {
            if (c >= class_count) throw ContractError("subset class out of range");
            ++seen[c];
            auto it = s.remap.find(c);
            if (it == s.remap.end()) throw ContractError("subset remap misses a class");
            if (it->second < 0 || static_cast<std::size_t>(it->second) >= s.classes.size())
                throw ContractError("subset local label out of range");
            locals.insert(it->second);
        }
        if (locals.size() != s.classes.size()) throw ContractError("subset remap is not a bijection");
    }
    for (std::size_t c = 0; c < class_count; ++c)
        if (seen[c] != 1) throw ContractError("subsets do not partition the class set");
}

SubsetPartition build_partition(const ClassClusterMap& map, const Dataset& dataset) {
    map.validate();
    SubsetPartition p;
    p.subsets.resize(map.k);
    for (std::size_t c = 0; c < map.class_count(); ++c) p.subsets[map.class_to_subset[c]].classes.push_back(c);
    for (auto& s : p.subsets) {
        Label next = 0;
        for (std::size_t c : s.classes) s.remap[c] = next++;
    }
    for (std::size_t i = 0; i < dataset.size(); ++i) {
        const auto c = static_cast<std::size_t>(dataset.labels[i]);
        if (c >= map.class_count())
            throw ContractError("build_partition: class " + std::to_string(c) + " is not in the cluster map");
        p.subsets[map.class_to_subset[c]].rows.push_back(i);
    }
    p.validate(map.class_count());
    return p;
}

std::string selector_kind(const Selector& s) {
    if (std::holds_alternative<CentroidSelector>(s)) return "centroid";
    if (std::holds_alternative<ScnnSelector>(s)) return "scnn";
    return "none";
}

std::size_t SubsetEnsemble::feature_dim() const {
    if (nets.empty()) return 0;
    return nets.front().spec.tap_width(tap);
}

SubsetEnsemble train_subset_nets(const SubsetPartition& partition, const Dataset& dataset, const Network& base,
                                 const SubsetTrainOptions& options) {
    partition.validate(dataset.class_count());
    SubsetEnsemble ens;
    ens.nets.resize(partition.k());
    for (std::size_t k = 0; k < partition.k(); ++k) {
        if (partition.subsets[k].classes.size() == 1) {
            std::string w = "warning: subset " + std::to_string(k) + " holds a single class (" +
                            std::to_string(partition.subsets[k].classes.front()) +
                            "); its softmax head is degenerate";
            if (options.diagnostics) *options.diagnostics << w << '\n';
            ens.warnings.push_back(std::move(w));
        }
    }
    parallel_for(partition.k(), options.threads, [&](std::size_t k) {
        const Subset& s = partition.subsets[k];
        const Dataset part = dataset.rows(s.rows);
        std::vector<Label> local(part.size());
        for (std::size_t i = 0; i < part.size(); ++i)
            local[i] = s.remap.at(static_cast<std::size_t>(part.labels[i]));
        Rng head_rng(derive_seed(derive_seed(options.cfg.seed, "subset-head"), k));
        Network net = reinit_head(base, s.classes.size(), head_rng);
        TrainConfig cfg = options.cfg;
        cfg.seed = derive_seed(derive_seed(options.cfg.seed, "subset-train"), k);
        cfg.batch_size = std::min(cfg.batch_size, part.size());
        net.params = train(net.params, net.spec, part.images, local, cfg).params;
        ens.nets[k] = std::move(net);
    });
    return ens;
}

std::vector<Label> subset_labels(const ClassClusterMap& map, std::span<const Label> labels) {
    std::vector<Label> out(labels.size());
    for (std::size_t i = 0; i < labels.size(); ++i) {
        const auto c = static_cast<std::size_t>(labels[i]);
        if (labels[i] < 0 || c >= map.class_count()) throw ContractError("label not covered by cluster map");
        out[i] = static_cast<Label>(map.class_to_subset[c]);
    }
    return out;
}

ScnnSelector train_scnn(const ClassClusterMap& map, const Dataset& dataset, const Network& base,
                        const TrainConfig& cfg) {
    map.validate();
    const auto labels = subset_labels(map, dataset.labels);
    Rng head_rng(derive_seed(cfg.seed, "scnn-head"));
    Network net = reinit_head(base, map.k, head_rng);
    TrainConfig c = cfg;
    c.batch_size = std::min(c.batch_size, dataset.size());
    net.params = train(net.params, net.spec, dataset.images, labels, c).params;
    return ScnnSelector{std::move(net)};
}

SelectorDecision decide(std::span<const double> subset_scores) {
    return SelectorDecision::one_hot(subset_scores.size(), argmax(subset_scores));
}

SelectorDecision select_centroid_projected(const KMeansModel& kmeans, std::span<const double> projected) {
    return SelectorDecision::one_hot(kmeans.k, kmeans_assign_one(kmeans, projected));
}

namespace {

Tensor as_batch(const Tensor& image) {
    if (image.rank() == 4) return image;
    if (image.rank() == 3) {
        Shape s{1};
        s.insert(s.end(), image.shape().begin(), image.shape().end());
        return image.reshaped(s);
    }
    throw DimensionError("expected an image [C, H, W] or a batch [N, C, H, W]");
}

}  // namespace

Tensor forward_chunked(const Network& net, const Tensor& images, TapId tap, std::size_t chunk) {
    const Tensor batch = as_batch(images);
    const std::size_t n = batch.dim(0);
    if (n <= chunk) return forward(net, batch, tap);
    const std::size_t width = net.spec.tap_width(tap);
    Tensor out({n, width});
    std::vector<std::size_t> idx;
    for (std::size_t start = 0; start < n; start += chunk) {
        idx.clear();
        for (std::size_t i = start; i < std::min(n, start + chunk); ++i) idx.push_back(i);
        const Tensor part = forward(net, batch.take_rows(idx), tap);
        std::copy(part.data().begin(), part.data().end(), out.data().begin() + static_cast<std::ptrdiff_t>(start * width));
    }
    return out;
}

std::vector<SelectorDecision> select_batch(const Selector& selector, const Tensor& images) {
    const Tensor batch = as_batch(images);
    std::vector<SelectorDecision> out;
    if (const auto* cen = std::get_if<CentroidSelector>(&selector)) {
        if (!cen->gcnn) throw ContractError("centroid selector has no feature network");
        const Tensor proj = lda_transform(cen->lda, forward_chunked(*cen->gcnn, batch, TapId::FcPenultimate));
        for (std::size_t i = 0; i < proj.dim(0); ++i) out.push_back(select_centroid_projected(cen->kmeans, proj.row(i)));
    } else if (const auto* scnn = std::get_if<ScnnSelector>(&selector)) {
        const Tensor probs = forward_chunked(scnn->net, batch, TapId::Head);
        for (std::size_t i = 0; i < probs.dim(0); ++i) out.push_back(decide(probs.row(i)));
    } else {
        throw ContractError("selector is not trained");
    }
    return out;
}

SelectorDecision select(const Selector& selector, const Tensor& image) {
    return select_batch(selector, image).front();
}

std::vector<Tensor> extract_subset_features_batch(const SubsetEnsemble& ensemble, const Tensor& images) {
    if (ensemble.nets.empty()) throw ContractError("subset ensemble is not trained");
    std::vector<Tensor> out;
    for (const auto& net : ensemble.nets) out.push_back(forward_chunked(net, images, ensemble.tap));
    return out;
}

std::vector<Tensor> extract_subset_features(const SubsetEnsemble& ensemble, const Tensor& image) {
    auto batch = extract_subset_features_batch(ensemble, as_batch(image));
    std::vector<Tensor> out;
    for (auto& t : batch) {
        if (t.dim(0) != 1) throw DimensionError("extract_subset_features expects a single image");
        out.push_back(t.reshaped({t.dim(1)}));
    }
    return out;
}

}  // namespace sfl
