#include "sfl/pipeline.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <ostream>
#include <sstream>

#include "json.hpp"

namespace sfl {

using json = nlohmann::json;

// ---------------------------------------------------------------- stage graphs

StageGraph StageGraph::parse(const std::string& name) {
    std::vector<std::string> parts;
    std::stringstream ss(name);
    std::string tok;
    while (std::getline(ss, tok, '-')) parts.push_back(tok);
    if (parts.empty() || parts.size() % 2 != 0)
        throw ConfigError("stage graph '" + name + "' must alternate dataset ids and rt/ft");
    StageGraph g;
    for (std::size_t i = 0; i < parts.size(); i += 2) {
        StageSpec s;
        s.dataset = parts[i];
        if (parts[i + 1] == "rt")
            s.mode = StageMode::Retrain;
        else if (parts[i + 1] == "ft")
            s.mode = StageMode::FineTune;
        else
            throw ConfigError("stage graph '" + name + "': unknown mode '" + parts[i + 1] + "'");
        g.stages.push_back(std::move(s));
    }
    g.validate();
    return g;
}

std::string StageGraph::name() const {
    std::string out;
    for (const auto& s : stages) {
        if (!out.empty()) out += '-';
        out += s.dataset;
        out += s.mode == StageMode::Retrain ? "-rt" : "-ft";
    }
    return out;
}

void StageGraph::validate() const {
    if (stages.empty()) throw ConfigError("stage graph is empty");
    for (std::size_t i = 0; i < stages.size(); ++i) {
        const auto& s = stages[i];
        if (s.dataset.empty() || s.dataset.find('-') != std::string::npos)
            throw ConfigError("stage dataset id '" + s.dataset + "' must be nonempty and contain no '-'");
        if (i == 0 && s.mode != StageMode::Retrain) throw ConfigError("the first stage must be rt");
        if (i > 0 && s.mode != StageMode::FineTune) throw ConfigError("stages after the first must be ft");
        if (s.epochs && *s.epochs == 0) throw ConfigError("stage epochs must be positive");
    }
}

namespace {

const Dataset& find_dataset(const DatasetMap& datasets, const std::string& id) {
    auto it = datasets.find(id);
    if (it == datasets.end()) throw ContractError("dataset '" + id + "' is not available");
    return it->second;
}

void check_images_fit(const NetSpec& spec, const Dataset& ds, const std::string& what) {
    if (ds.images.rank() != 4 || ds.channels() != spec.in_channels || ds.height() != spec.in_height ||
        ds.width() != spec.in_width)
        throw MismatchError(what + ": image shape does not match the network input");
}

}  // namespace

StageGraphResult run_stage_graph(const StageGraph& graph, const DatasetMap& datasets, const TrainConfig& base_cfg,
                                 std::uint64_t seed, std::size_t penultimate) {
    graph.validate();
    base_cfg.validate();
    for (const auto& s : graph.stages) (void)find_dataset(datasets, s.dataset);

    StageGraphResult result;
    result.provenance = graph.name();
    result.steps = graph.steps();
    for (std::size_t i = 0; i < graph.stages.size(); ++i) {
        const StageSpec& stage = graph.stages[i];
        const Dataset rows = find_dataset(datasets, stage.dataset).select(Split::Train);
        if (rows.size() == 0) throw ContractError("dataset '" + stage.dataset + "' has no train rows");
        TrainConfig cfg = stage.mode == StageMode::Retrain ? base_cfg : finetune_config(base_cfg);
        cfg.seed = derive_seed(derive_seed(seed, "stage"), i);
        if (stage.epochs) cfg.epochs = *stage.epochs;
        if (stage.learning_rate) cfg.learning_rate = *stage.learning_rate;
        cfg.batch_size = std::min(cfg.batch_size, rows.size());
        if (i == 0) {
            if (rows.height() != rows.width()) throw ContractError("images must be square");
            result.net.spec = desk_spec(rows.channels(), rows.height(), rows.class_count(), penultimate);
            Rng init(derive_seed(seed, "init"));
            result.net.params = init_params(result.net.spec, init);
        } else {
            check_images_fit(result.net.spec, rows, "dataset '" + stage.dataset + "'");
            Rng head(derive_seed(derive_seed(seed, "head"), i));
            result.net = reinit_head(result.net, rows.class_count(), head);
        }
        TrainResult tr = train(result.net.params, result.net.spec, rows.images, rows.labels, cfg);
        result.net.params = std::move(tr.params);
        result.loss_histories.push_back(std::move(tr.loss_history));
    }
    return result;
}

// --------------------------------------------------------------------- metrics

std::vector<double> Metrics::per_class_accuracy() const {
    std::vector<double> out;
    for (std::size_t c = 0; c < confusion.size(); ++c) {
        std::size_t total = 0;
        for (std::size_t v : confusion[c]) total += v;
        out.push_back(total ? static_cast<double>(confusion[c][c]) / static_cast<double>(total) : 0.0);
    }
    return out;
}

Metrics compute_metrics(std::span<const Label> truth, std::span<const std::size_t> predicted,
                        std::size_t class_count) {
    if (truth.size() != predicted.size()) throw DimensionError("compute_metrics: length mismatch");
    Metrics m;
    m.confusion.assign(class_count, std::vector<std::size_t>(class_count, 0));
    std::size_t correct = 0;
    for (std::size_t i = 0; i < truth.size(); ++i) {
        const auto t = static_cast<std::size_t>(truth[i]);
        if (truth[i] < 0 || t >= class_count || predicted[i] >= class_count)
            throw ContractError("compute_metrics: class index out of range");
        ++m.confusion[t][predicted[i]];
        correct += t == predicted[i];
    }
    m.overall_accuracy = truth.empty() ? 0.0 : static_cast<double>(correct) / static_cast<double>(truth.size());
    // Classes without test rows do not enter the mean.
    double sum = 0.0;
    std::size_t present = 0;
    for (std::size_t c = 0; c < class_count; ++c) {
        std::size_t total = 0;
        for (std::size_t v : m.confusion[c]) total += v;
        if (!total) continue;
        sum += static_cast<double>(m.confusion[c][c]) / static_cast<double>(total);
        ++present;
    }
    m.mean_accuracy = present ? sum / static_cast<double>(present) : 0.0;
    return m;
}

std::string selector_kind_name(SelectorKind k) {
    return k == SelectorKind::Scnn ? "scnn" : "centroid";
}

SelectorKind parse_selector_kind(const std::string& s) {
    if (s == "scnn") return SelectorKind::Scnn;
    if (s == "centroid" || s == "kmeans") return SelectorKind::Centroid;
    throw ConfigError("unknown selector '" + s + "' (expected scnn or centroid)");
}

// -------------------------------------------------------------------- bundle

std::size_t ModelBundle::fused_dim() const {
    return (gcnn ? gcnn->spec.tap_width(TapId::FcPenultimate) : 0) + ensemble.k() * ensemble.feature_dim();
}

namespace {

void require(bool ok, const std::string& what) {
    if (!ok) throw InvariantError("bundle: " + what);
}

std::vector<Layer> trunk_layers(const NetSpec& spec) {
    std::vector<Layer> l = spec.layers;
    l.erase(l.begin() + static_cast<std::ptrdiff_t>(spec.head_index()));
    return l;
}

void require_network(const Network& net, const std::string& what) {
    try {
        validate_params(net.spec, net.params);
    } catch (const Error& e) {
        throw InvariantError("bundle: " + what + ": " + e.what());
    }
    require(net.params.all_finite(), what + " has non-finite parameters");
}

}  // namespace

void ModelBundle::validate() const {
    require(gcnn != nullptr, "missing GCNN");
    require_network(*gcnn, "GCNN");
    const std::size_t dg = gcnn->spec.tap_width(TapId::FcPenultimate);
    try {
        cluster_map.validate();
    } catch (const Error& e) {
        throw InvariantError(std::string("bundle: cluster map: ") + e.what());
    }
    const std::size_t k = cluster_map.k;
    const std::size_t d = lda.out_dim;
    require(lda.projection.rank() == 2 && lda.projection.dim(0) == dg && lda.projection.dim(1) == d,
            "LDA projection shape");
    require(lda.global_mean.shape() == Shape{dg}, "LDA mean shape");
    require(lda.projection.all_finite() && lda.global_mean.all_finite(), "LDA not finite");
    require(kmeans.k == k && kmeans.centroids.rank() == 2 && kmeans.centroids.dim(0) == k &&
                kmeans.centroids.dim(1) == d,
            "k-means centroids shape");
    require(ensemble.k() == k, "ensemble size differs from cluster count");
    const auto trunk0 = trunk_layers(gcnn->spec);
    std::size_t ds = 0;
    for (std::size_t s = 0; s < k; ++s) {
        const Network& net = ensemble.nets[s];
        require_network(net, "DFCNN " + std::to_string(s));
        require(net.spec.class_count == cluster_map.subset_classes(s).size(),
                "DFCNN " + std::to_string(s) + " head size differs from its subset");
        require(trunk_layers(net.spec) == trunk0 && net.spec.in_channels == gcnn->spec.in_channels &&
                    net.spec.in_height == gcnn->spec.in_height && net.spec.in_width == gcnn->spec.in_width,
                "DFCNN " + std::to_string(s) + " trunk architecture differs");
        const std::size_t w = net.spec.tap_width(ensemble.tap);
        if (s == 0) ds = w;
        require(w == ds, "DFCNN tap widths differ");
    }
    if (const auto* cen = std::get_if<CentroidSelector>(&ensemble.selector)) {
        require(cen->kmeans.k == k && cen->gcnn != nullptr, "centroid selector inconsistent");
    } else if (const auto* sc = std::get_if<ScnnSelector>(&ensemble.selector)) {
        require_network(sc->net, "SCNN");
        require(sc->net.spec.class_count == k, "SCNN head size differs from cluster count");
        require(sc->net.spec.in_channels == gcnn->spec.in_channels && sc->net.spec.in_height == gcnn->spec.in_height &&
                    sc->net.spec.in_width == gcnn->spec.in_width,
                "SCNN input shape differs from the GCNN");
    } else {
        require(false, "selector missing");
    }
    const std::size_t c = cluster_map.class_count();
    require(svm.weights.rank() == 2 && svm.weights.dim(0) == c && svm.weights.dim(1) == dg + k * ds,
            "SVM weight shape");
    require(svm.biases.shape() == Shape{c}, "SVM bias shape");
    require(svm.weights.all_finite() && svm.biases.all_finite(), "SVM not finite");
}

namespace {

std::vector<SelectorDecision> decisions_for(const ModelBundle& bundle, const Tensor& images, const Tensor& gfeat) {
    if (const auto* cen = std::get_if<CentroidSelector>(&bundle.ensemble.selector)) {
        const Tensor proj = lda_transform(cen->lda, gfeat);
        std::vector<SelectorDecision> out;
        for (std::size_t i = 0; i < proj.dim(0); ++i) out.push_back(select_centroid_projected(cen->kmeans, proj.row(i)));
        return out;
    }
    return select_batch(bundle.ensemble.selector, images);
}

Tensor normalized_rows(Tensor t) {
    for (std::size_t i = 0; i < t.dim(0); ++i) l2_normalize_inplace(t.row(i));
    return t;
}

}  // namespace

Tensor fused_features(const ModelBundle& bundle, const Tensor& images) {
    const Tensor gfeat = forward_chunked(*bundle.gcnn, images, TapId::FcPenultimate);
    const auto decisions = decisions_for(bundle, images, gfeat);
    const auto sub = extract_subset_features_batch(bundle.ensemble, images);
    const std::size_t n = gfeat.dim(0);
    Tensor out({n, bundle.fused_dim()});
    std::vector<std::span<const double>> views(sub.size());
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t s = 0; s < sub.size(); ++s) views[s] = sub[s].row(i);
        fuse_into(gfeat.row(i), views, decisions[i].chosen, out.row(i));
    }
    return out;
}

ModelBundle build_system(const DatasetMap& datasets, const SystemConfig& cfg, BuildReport* report) {
    cfg.graph.validate();
    cfg.train.validate();
    const Dataset& target = find_dataset(datasets, cfg.target);
    target.validate();
    if (cfg.k == 0 || cfg.k > target.class_count())
        throw ConfigError("k = " + std::to_string(cfg.k) + " must lie in [1, " +
                          std::to_string(target.class_count()) + "]");

    StageGraphResult stages = run_stage_graph(cfg.graph, datasets, cfg.train, derive_seed(cfg.seed, "gcnn"),
                                              cfg.penultimate);
    const Dataset train = target.select(Split::Train);
    check_images_fit(stages.net.spec, train, "target dataset");

    ModelBundle bundle;
    bundle.provenance = stages.provenance;
    bundle.steps = stages.steps;
    bundle.seed = cfg.seed;
    bundle.gcnn = std::make_shared<const Network>(stages.net);

    const Tensor feats = forward_chunked(*bundle.gcnn, train.images, TapId::FcPenultimate);
    const std::size_t classes = target.class_count();
    std::size_t lda_dim = cfg.lda_dim.value_or(default_lda_dim(classes));
    lda_dim = std::min({lda_dim, feats.dim(1), classes - 1});
    bundle.lda = lda_fit(feats, train.labels, lda_dim);

    Rng cluster_rng(derive_seed(cfg.seed, "cluster"));
    PreclusterResult pre = precluster_classes(feats, train.labels, "lda-fc6", &bundle.lda, cfg.k, cluster_rng);
    bundle.cluster_map = pre.map;
    bundle.kmeans = pre.kmeans;

    const SubsetPartition partition = build_partition(bundle.cluster_map, train);
    TrainConfig subset_cfg = finetune_config(cfg.train);
    subset_cfg.seed = derive_seed(cfg.seed, "subset");
    if (cfg.subset_epochs) subset_cfg.epochs = *cfg.subset_epochs;
    bundle.ensemble = train_subset_nets(partition, train, *bundle.gcnn, {subset_cfg, cfg.threads, cfg.diagnostics});

    CentroidSelector centroid{bundle.kmeans, bundle.lda, bundle.gcnn};
    std::optional<ScnnSelector> scnn;
    if (cfg.selector == SelectorKind::Scnn) {
        TrainConfig sc = finetune_config(cfg.train);
        sc.seed = derive_seed(cfg.seed, "scnn");
        if (cfg.selector_epochs) sc.epochs = *cfg.selector_epochs;
        scnn = train_scnn(bundle.cluster_map, train, *bundle.gcnn, sc);
        bundle.ensemble.selector = *scnn;
    } else {
        bundle.ensemble.selector = centroid;
    }

    const Tensor fused = fused_features(bundle, train.images);
    Rng svm_rng(derive_seed(cfg.seed, "svm"));
    SvmOptions svm = cfg.svm;
    svm.threads = cfg.threads;
    bundle.svm = svm_train(fused, train.labels, svm, svm_rng);
    bundle.validate();

    if (report) {
        report->stages = std::move(stages);
        report->quality = pre.quality;
        report->centroid = std::move(centroid);
        report->scnn = std::move(scnn);
        report->warnings = bundle.ensemble.warnings;
    }
    return bundle;
}

Metrics evaluate(const ModelBundle& bundle, const Dataset& dataset, Split split) {
    if (!bundle.gcnn) throw ContractError("evaluate: bundle has no GCNN");
    if (dataset.class_count() != bundle.class_count())
        throw MismatchError("evaluate: dataset has " + std::to_string(dataset.class_count()) +
                            " classes, bundle expects " + std::to_string(bundle.class_count()));
    check_images_fit(bundle.gcnn->spec, dataset, "evaluate");
    const Dataset part = dataset.select(split);
    if (part.size() == 0) throw ContractError("evaluate: split '" + split_name(split) + "' is empty");
    const Tensor fused = fused_features(bundle, part.images);
    const auto predicted = svm_predict_batch(bundle.svm, fused);
    return compute_metrics(part.labels, predicted, bundle.class_count());
}

double selector_accuracy(const Selector& selector, const ClassClusterMap& map, const Dataset& dataset, Split split) {
    const Dataset part = dataset.select(split);
    if (part.size() == 0) throw ContractError("selector_accuracy: empty split");
    const auto decisions = select_batch(selector, part.images);
    const auto truth = subset_labels(map, part.labels);
    std::size_t hit = 0;
    for (std::size_t i = 0; i < truth.size(); ++i) hit += decisions[i].chosen == static_cast<std::size_t>(truth[i]);
    return static_cast<double>(hit) / static_cast<double>(truth.size());
}

Metrics feature_svm_metrics(const Network& net, const Dataset& dataset, const SvmOptions& svm, std::uint64_t seed,
                            TapId tap) {
    check_images_fit(net.spec, dataset, "feature_svm_metrics");
    const Dataset train = dataset.select(Split::Train);
    const Dataset test = dataset.select(Split::Test);
    const Tensor ftrain = normalized_rows(forward_chunked(net, train.images, tap));
    const Tensor ftest = normalized_rows(forward_chunked(net, test.images, tap));
    Rng rng(derive_seed(seed, "svm"));
    const SvmModel model = svm_train(ftrain, train.labels, svm, rng);
    return compute_metrics(test.labels, svm_predict_batch(model, ftest), dataset.class_count());
}

std::vector<ClusterQuality> tap_cluster_report(const Network& gcnn, const Dataset& dataset, std::size_t k,
                                               std::optional<std::size_t> lda_dim, std::uint64_t seed) {
    check_images_fit(gcnn.spec, dataset, "cluster report");
    const Dataset train = dataset.select(Split::Train);
    const std::size_t classes = dataset.class_count();
    if (k == 0 || k > classes) throw ConfigError("k must lie in [1, class count]");
    const Tensor conv = forward_chunked(gcnn, train.images, TapId::ConvLast);
    const Tensor fc = forward_chunked(gcnn, train.images, TapId::FcPenultimate);
    const std::size_t dim = std::min({lda_dim.value_or(default_lda_dim(classes)), fc.dim(1), classes - 1});
    const LdaModel lda = lda_fit(fc, train.labels, dim);

    std::vector<ClusterQuality> out;
    {
        Rng rng(derive_seed(seed, "cluster"));
        out.push_back(precluster_classes(conv, train.labels, "conv5", nullptr, k, rng).quality);
    }
    {
        Rng rng(derive_seed(seed, "cluster"));
        out.push_back(precluster_classes(fc, train.labels, "fc6", nullptr, k, rng).quality);
    }
    {
        Rng rng(derive_seed(seed, "cluster"));
        out.push_back(precluster_classes(fc, train.labels, "lda-fc6", &lda, k, rng).quality);
    }
    return out;
}

// ---------------------------------------------------------------- persistence

namespace {

json layer_json(const Layer& layer) {
    if (const auto* c = std::get_if<ConvLayer>(&layer))
        return {{"type", "conv"}, {"out", c->out_channels}, {"kernel", c->kernel}, {"stride", c->stride}};
    if (std::holds_alternative<ReluLayer>(layer)) return {{"type", "relu"}};
    if (const auto* p = std::get_if<MaxPoolLayer>(&layer))
        return {{"type", "maxpool"}, {"kernel", p->kernel}, {"stride", p->stride}};
    if (std::holds_alternative<FlattenLayer>(layer)) return {{"type", "flatten"}};
    if (const auto* f = std::get_if<FcLayer>(&layer)) return {{"type", "fc"}, {"out", f->out_dim}};
    return {{"type", "softmax"}};
}

Layer layer_from_json(const json& j) {
    const std::string t = j.at("type");
    if (t == "conv") return ConvLayer{j.at("out"), j.at("kernel"), j.at("stride")};
    if (t == "relu") return ReluLayer{};
    if (t == "maxpool") return MaxPoolLayer{j.at("kernel"), j.at("stride")};
    if (t == "flatten") return FlattenLayer{};
    if (t == "fc") return FcLayer{j.at("out")};
    if (t == "softmax") return SoftmaxLayer{};
    throw InvariantError("unknown layer type '" + t + "'");
}

json spec_json(const NetSpec& spec) {
    json layers = json::array();
    for (const auto& l : spec.layers) layers.push_back(layer_json(l));
    return {{"input", {spec.in_channels, spec.in_height, spec.in_width}},
            {"classes", spec.class_count},
            {"layers", layers}};
}

NetSpec spec_from_json(const json& j) {
    NetSpec s;
    const auto& in = j.at("input");
    s.in_channels = in.at(0);
    s.in_height = in.at(1);
    s.in_width = in.at(2);
    s.class_count = j.at("classes");
    for (const auto& l : j.at("layers")) s.layers.push_back(layer_from_json(l));
    return s;
}

void add_network(Container& c, const std::string& prefix, const Network& net) {
    for (std::size_t i = 0; i < net.spec.layers.size(); ++i) {
        if (net.params.weights[i].empty()) continue;
        c.add(prefix + "/w/" + std::to_string(i), net.params.weights[i]);
        c.add(prefix + "/b/" + std::to_string(i), net.params.biases[i]);
    }
}

Network network_from(const Container& c, const std::string& prefix, const json& spec) {
    Network net;
    net.spec = spec_from_json(spec);
    try {
        net.spec.validate();
    } catch (const Error& e) {
        throw InvariantError(prefix + ": " + e.what());
    }
    net.params.weights.resize(net.spec.layers.size());
    net.params.biases.resize(net.spec.layers.size());
    for (std::size_t i = 0; i < net.spec.layers.size(); ++i) {
        const std::string w = prefix + "/w/" + std::to_string(i);
        if (!c.has(w)) continue;
        net.params.weights[i] = c.get(w);
        net.params.biases[i] = c.get(prefix + "/b/" + std::to_string(i));
    }
    return net;
}

Tensor index_tensor(const std::vector<std::size_t>& v) {
    std::vector<double> d(v.begin(), v.end());
    return Tensor::vector(std::move(d));
}

std::vector<std::size_t> tensor_indices(const Tensor& t, const std::string& what) {
    std::vector<std::size_t> out;
    for (double v : t.data()) {
        if (!(v >= 0.0) || v != std::floor(v) || v > 1e15) throw InvariantError(what + ": non-integral index");
        out.push_back(static_cast<std::size_t>(v));
    }
    return out;
}

json parse_metadata(const Container& c, const std::string& kind) {
    json meta;
    try {
        meta = json::parse(c.metadata);
    } catch (const json::exception& e) {
        throw InvariantError(std::string("metadata is not valid JSON: ") + e.what());
    }
    if (!meta.is_object() || meta.value("kind", "") != kind)
        throw InvariantError("container does not hold a " + kind);
    return meta;
}

std::vector<std::uint8_t> read_container_file(const std::filesystem::path& path) {
    return read_file(path);
}

}  // namespace

Container dataset_container(const Dataset& ds) {
    ds.validate();
    Container c;
    c.add("images", ds.images);
    std::vector<double> labels(ds.labels.begin(), ds.labels.end());
    c.add("labels", Tensor::vector(std::move(labels)));
    std::vector<double> splits;
    for (Split s : ds.splits) splits.push_back(static_cast<double>(s));
    c.add("splits", Tensor::vector(std::move(splits)));
    json meta = {{"kind", "dataset"}, {"class_names", ds.class_names}};
    c.metadata = meta.dump();
    return c;
}

Dataset dataset_from_container(const Container& c) {
    try {
        const json meta = parse_metadata(c, "dataset");
        Dataset ds;
        ds.images = c.get("images");
        for (std::size_t v : tensor_indices(c.get("labels"), "labels")) ds.labels.push_back(static_cast<Label>(v));
        for (std::size_t v : tensor_indices(c.get("splits"), "splits")) {
            if (v > 1) throw InvariantError("dataset: invalid split tag");
            ds.splits.push_back(static_cast<Split>(v));
        }
        ds.class_names = meta.at("class_names").get<std::vector<std::string>>();
        ds.validate();
        return ds;
    } catch (const InvariantError&) {
        throw;
    } catch (const std::exception& e) {
        throw InvariantError(std::string("dataset: ") + e.what());
    }
}

void save_dataset(const Dataset& ds, const std::filesystem::path& path) {
    write_file_atomic(path, encode_container(dataset_container(ds)));
}

Dataset load_dataset(const std::filesystem::path& path) {
    const auto bytes = read_container_file(path);
    return dataset_from_container(decode_container(bytes));
}

Container bundle_container(const ModelBundle& b) {
    b.validate();
    Container c;
    add_network(c, "gcnn", *b.gcnn);
    c.add("lda/projection", b.lda.projection);
    c.add("lda/mean", b.lda.global_mean);
    c.add("lda/eigenvalues", b.lda.eigenvalues);
    c.add("kmeans/centroids", b.kmeans.centroids);
    c.add("map/class_to_subset", index_tensor(b.cluster_map.class_to_subset));
    json dfcnn_specs = json::array();
    for (std::size_t k = 0; k < b.ensemble.k(); ++k) {
        add_network(c, "dfcnn/" + std::to_string(k), b.ensemble.nets[k]);
        dfcnn_specs.push_back(spec_json(b.ensemble.nets[k].spec));
    }
    json meta = {{"kind", "bundle"},
                 {"provenance", b.provenance},
                 {"steps", b.steps},
                 {"seed", b.seed},
                 {"gcnn_spec", spec_json(b.gcnn->spec)},
                 {"dfcnn_specs", dfcnn_specs},
                 {"tap", tap_name(b.ensemble.tap)},
                 {"k", b.cluster_map.k},
                 {"kmeans_inertia", b.kmeans.inertia},
                 {"kmeans_seed", b.kmeans.seed},
                 {"svm_lambda", b.svm.lambda},
                 {"warnings", b.ensemble.warnings},
                 {"selector", selector_kind(b.ensemble.selector)}};
    if (const auto* sc = std::get_if<ScnnSelector>(&b.ensemble.selector)) {
        add_network(c, "scnn", sc->net);
        meta["scnn_spec"] = spec_json(sc->net.spec);
    }
    c.add("svm/weights", b.svm.weights);
    c.add("svm/biases", b.svm.biases);
    c.metadata = meta.dump();
    return c;
}

ModelBundle bundle_from_container(const Container& c) {
    ModelBundle b;
    try {
        const json meta = parse_metadata(c, "bundle");
        b.provenance = meta.at("provenance");
        b.steps = meta.at("steps");
        b.seed = meta.at("seed");
        b.gcnn = std::make_shared<const Network>(network_from(c, "gcnn", meta.at("gcnn_spec")));
        b.lda.projection = c.get("lda/projection");
        b.lda.global_mean = c.get("lda/mean");
        b.lda.eigenvalues = c.get("lda/eigenvalues");
        b.lda.out_dim = b.lda.projection.rank() == 2 ? b.lda.projection.dim(1) : 0;
        b.cluster_map.k = meta.at("k");
        b.cluster_map.class_to_subset = tensor_indices(c.get("map/class_to_subset"), "cluster map");
        b.kmeans.centroids = c.get("kmeans/centroids");
        b.kmeans.k = b.cluster_map.k;
        b.kmeans.inertia = meta.at("kmeans_inertia");
        b.kmeans.seed = meta.at("kmeans_seed");
        const auto& specs = meta.at("dfcnn_specs");
        for (std::size_t k = 0; k < specs.size(); ++k)
            b.ensemble.nets.push_back(network_from(c, "dfcnn/" + std::to_string(k), specs.at(k)));
        b.ensemble.tap = parse_tap(meta.at("tap"));
        b.ensemble.warnings = meta.at("warnings").get<std::vector<std::string>>();
        const std::string kind = meta.at("selector");
        if (kind == "scnn")
            b.ensemble.selector = ScnnSelector{network_from(c, "scnn", meta.at("scnn_spec"))};
        else if (kind == "centroid")
            b.ensemble.selector = CentroidSelector{b.kmeans, b.lda, b.gcnn};
        else
            throw InvariantError("bundle: unknown selector '" + kind + "'");
        b.svm.weights = c.get("svm/weights");
        b.svm.biases = c.get("svm/biases");
        b.svm.lambda = meta.at("svm_lambda");
    } catch (const InvariantError&) {
        throw;
    } catch (const std::exception& e) {
        throw InvariantError(std::string("bundle: ") + e.what());
    }
    b.validate();
    return b;
}

std::vector<std::uint8_t> bundle_bytes(const ModelBundle& bundle) {
    return encode_container(bundle_container(bundle));
}

void save_bundle(const ModelBundle& bundle, const std::filesystem::path& path) {
    write_file_atomic(path, bundle_bytes(bundle));
}

ModelBundle load_bundle(const std::filesystem::path& path) {
    const auto bytes = read_container_file(path);
    return bundle_from_container(decode_container(bytes));
}

// ------------------------------------------------------------------------ csv

std::string exact(double v) {
    char buf[64];
    auto res = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, res.ptr);
}

std::string metrics_csv_header() {
    return "system_name,seed,mean_accuracy,overall_accuracy";
}

std::string metrics_csv_row(const std::string& system, std::uint64_t seed, const Metrics& m) {
    return system + "," + std::to_string(seed) + "," + exact(m.mean_accuracy) + "," + exact(m.overall_accuracy);
}

std::string confusion_csv(const Metrics& m) {
    std::ostringstream os;
    os << "truth\\predicted";
    for (std::size_t c = 0; c < m.confusion.size(); ++c) os << ',' << c;
    os << '\n';
    for (std::size_t r = 0; r < m.confusion.size(); ++r) {
        os << r;
        for (std::size_t v : m.confusion[r]) os << ',' << v;
        os << '\n';
    }
    return os.str();
}

}  // namespace sfl
