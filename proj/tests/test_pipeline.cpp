#include <unistd.h>

#include <cmath>
#include <filesystem>
#include <set>

#include "doctest.h"
#include "sfl/cluster.hpp"
#include "sfl/pipeline.hpp"
#include "test_util.hpp"

using namespace sfl;

namespace {

SyntheticSpec tiny_spec(std::uint64_t seed) {
    SyntheticSpec s;
    s.n_groups = 2;
    s.classes_per_group = 2;
    s.train_per_class = 10;
    s.test_per_class = 5;
    s.image_size = 10;
    s.max_shift = 1;
    s.seed = seed;
    return s;
}

TrainConfig quick_cfg() {
    TrainConfig cfg;
    cfg.epochs = 2;
    cfg.batch_size = 8;
    return cfg;
}

DatasetMap tiny_datasets() {
    DatasetMap m;
    m.emplace("A", generate_synthetic(tiny_spec(1)));
    SyntheticSpec b = tiny_spec(2);
    b.n_groups = 3;
    m.emplace("B", generate_synthetic(b));
    m.emplace("C", generate_synthetic(tiny_spec(3)));
    return m;
}

SystemConfig tiny_system(std::size_t k, std::uint64_t seed = 5) {
    SystemConfig cfg;
    cfg.graph = StageGraph::parse("B-rt-A-ft");
    cfg.target = "A";
    cfg.k = k;
    cfg.train = quick_cfg();
    cfg.subset_epochs = 2;
    cfg.selector_epochs = 2;
    cfg.svm.epochs = 10;
    cfg.penultimate = 16;
    cfg.seed = seed;
    return cfg;
}

const ModelBundle& shared_bundle() {
    static const ModelBundle b = build_system(tiny_datasets(), tiny_system(2));
    return b;
}

std::filesystem::path temp_path(const std::string& name) {
    return std::filesystem::temp_directory_path() / ("sfl_test_" + std::to_string(::getpid()) + "_" + name);
}

}  // namespace

TEST_CASE("synthetic datasets: layout, grouping, determinism") {
    const SyntheticSpec s = tiny_spec(9);
    const Dataset d = generate_synthetic(s);
    d.validate();
    CHECK(d.class_count() == 4);
    CHECK(d.size() == 4 * 15);
    CHECK(d.count(Split::Train) == 40);
    CHECK(d.count(Split::Test) == 20);
    CHECK(d.images.shape() == Shape{60, 3, 10, 10});
    CHECK(d.class_names[3] == "g1_c1");
    CHECK(synthetic_group(s, 3) == 1);
    CHECK(generate_synthetic(s).images == d.images);

    SyntheticSpec def;
    const Dataset bench = generate_synthetic(def);
    CHECK(bench.class_count() == 12);
    for (std::size_t c = 0; c < 12; ++c) CHECK(synthetic_group(def, c) == c / 4);
    std::set<Label> labels(bench.labels.begin(), bench.labels.end());
    CHECK(labels.size() == 12);
    CHECK(*labels.rbegin() == 11);
    CHECK(bench.images.shape() == Shape{12 * 130, 3, 16, 16});

    SyntheticSpec zero = def;
    zero.n_groups = 0;
    CHECK_THROWS_AS(generate_synthetic(zero), ConfigError);
}

namespace {

// Silhouette of raw pixels with rows labelled by the group of their class.
double group_silhouette(const Dataset& d, const std::vector<std::size_t>& class_to_group) {
    const Dataset train = d.select(Split::Train);
    const Tensor x = train.images.reshaped({train.size(), train.images.size() / train.size()});
    std::vector<std::size_t> a(train.size());
    for (std::size_t i = 0; i < train.size(); ++i) a[i] = class_to_group[static_cast<std::size_t>(train.labels[i])];
    return silhouette(x, a);
}

}  // namespace

TEST_CASE("group structure disappears at zero intra-group similarity") {
    SyntheticSpec s;
    s.train_per_class = 20;
    s.test_per_class = 1;
    std::vector<std::size_t> truth;
    for (std::size_t c = 0; c < 12; ++c) truth.push_back(c / 4);
    Rng rng(3);
    std::vector<std::size_t> shuffled(truth);
    rng.shuffle(shuffled);
    while (shuffled == truth) rng.shuffle(shuffled);

    s.intra_group_similarity = 0.0;
    const Dataset flat = generate_synthetic(s);
    CHECK(std::abs(group_silhouette(flat, truth) - group_silhouette(flat, shuffled)) <= 0.1);

    // With little pixel noise the shared backgrounds dominate raw distances.
    s.intra_group_similarity = 0.9;
    s.noise = 0.35;
    const Dataset grouped = generate_synthetic(s);
    CHECK(group_silhouette(grouped, truth) > group_silhouette(grouped, shuffled) + 0.05);
}

TEST_CASE("stage graph names") {
    const StageGraph g = StageGraph::parse("IN-rt-BS-ft-CUB-ft");
    CHECK(g.steps() == 3);
    CHECK(g.name() == "IN-rt-BS-ft-CUB-ft");
    CHECK(g.stages[1].mode == StageMode::FineTune);
    CHECK_THROWS_AS(StageGraph::parse("A-ft"), ConfigError);
    CHECK_THROWS_AS(StageGraph::parse("A-rt-B-rt"), ConfigError);
    CHECK_THROWS_AS(StageGraph::parse("A-rt-B"), ConfigError);
    CHECK_THROWS_AS(StageGraph::parse("A-xx"), ConfigError);
    CHECK_THROWS_AS(StageGraph::parse(""), ConfigError);
}

TEST_CASE("a one-stage graph is plain training") {
    const DatasetMap ds = tiny_datasets();
    const TrainConfig cfg = quick_cfg();
    const auto r = run_stage_graph(StageGraph::parse("A-rt"), ds, cfg, 17, 16);
    CHECK(r.steps == 1);
    CHECK(r.provenance == "A-rt");
    REQUIRE(r.loss_histories.size() == 1);

    const Dataset rows = ds.at("A").select(Split::Train);
    const NetSpec spec = desk_spec(3, 10, 4, 16);
    Rng init(derive_seed(17, "init"));
    TrainConfig c = cfg;
    c.seed = derive_seed(derive_seed(17, "stage"), 0);
    const NetParams p = train(init_params(spec, init), spec, rows.images, rows.labels, c).params;
    CHECK(r.net.params == p);
}

TEST_CASE("fine-tuning stages change the trunk and resize the head") {
    const DatasetMap ds = tiny_datasets();
    const auto one = run_stage_graph(StageGraph::parse("B-rt"), ds, quick_cfg(), 4, 16);
    const auto two = run_stage_graph(StageGraph::parse("B-rt-A-ft"), ds, quick_cfg(), 4, 16);
    CHECK(one.net.spec.class_count == 6);
    CHECK(two.net.spec.class_count == 4);
    CHECK_FALSE(two.net.params.weights[0] == one.net.params.weights[0]);
    const auto three = run_stage_graph(StageGraph::parse("B-rt-C-ft-A-ft"), ds, quick_cfg(), 4, 16);
    CHECK(three.steps == 3);
    CHECK(three.loss_histories.size() == 3);

    CHECK_THROWS_AS(run_stage_graph(StageGraph::parse("Z-rt"), ds, quick_cfg(), 4, 16), ContractError);
}

TEST_CASE("metrics") {
    const std::vector<Label> truth{0, 0, 1, 1, 2, 2};
    const std::vector<std::size_t> perfect{0, 0, 1, 1, 2, 2};
    const Metrics m = compute_metrics(truth, perfect, 3);
    CHECK(m.mean_accuracy == 1.0);
    CHECK(m.overall_accuracy == 1.0);
    for (std::size_t r = 0; r < 3; ++r)
        for (std::size_t c = 0; c < 3; ++c) CHECK(m.confusion[r][c] == (r == c ? 2u : 0u));

    const std::vector<std::size_t> constant(6, 1);
    CHECK(compute_metrics(truth, constant, 3).mean_accuracy == doctest::Approx(1.0 / 3.0));

    // Imbalanced: per-class mean differs from overall accuracy.
    const std::vector<Label> t2{0, 0, 0, 1};
    const std::vector<std::size_t> p2{0, 0, 0, 0};
    const Metrics m2 = compute_metrics(t2, p2, 2);
    CHECK(m2.mean_accuracy == doctest::Approx(0.5));
    CHECK(m2.overall_accuracy == doctest::Approx(0.75));
    CHECK(m2.per_class_accuracy() == std::vector<double>{1.0, 0.0});
    CHECK(confusion_csv(m2) == "truth\\predicted,0,1\n0,3,0\n1,1,0\n");
    CHECK_THROWS(compute_metrics(t2, constant, 2));
}

TEST_CASE("exact() round-trips doubles") {
    Rng rng(1);
    for (int i = 0; i < 1000; ++i) {
        const double v = rng.normal() * std::pow(10.0, rng.uniform(-20, 20));
        CHECK(std::stod(exact(v)) == v);
    }
    CHECK(metrics_csv_header() == "system_name,seed,mean_accuracy,overall_accuracy");
}

TEST_CASE("build_system produces a consistent bundle") {
    const ModelBundle& b = shared_bundle();
    b.validate();
    CHECK(b.provenance == "B-rt-A-ft");
    CHECK(b.steps == 2);
    CHECK(b.cluster_map.k == 2);
    CHECK(b.ensemble.k() == 2);
    CHECK(b.fused_dim() == 16 + 2 * 16);
    CHECK(selector_kind(b.ensemble.selector) == "scnn");
    for (std::size_t s = 0; s < 2; ++s) CHECK_FALSE(b.cluster_map.subset_classes(s).empty());

    const Dataset a = tiny_datasets().at("A");
    const Metrics m = evaluate(b, a, Split::Test);
    CHECK(m.mean_accuracy >= 0.0);
    CHECK(m.mean_accuracy <= 1.0);
    std::size_t correct = 0, total = 0;
    double mean = 0.0;
    for (std::size_t c = 0; c < 4; ++c) {
        std::size_t row = 0;
        for (std::size_t v : m.confusion[c]) row += v;
        CHECK(row == 5);
        correct += m.confusion[c][c];
        total += row;
        mean += static_cast<double>(m.confusion[c][c]) / static_cast<double>(row) / 4.0;
    }
    CHECK(m.overall_accuracy == doctest::Approx(static_cast<double>(correct) / static_cast<double>(total)));
    CHECK(m.mean_accuracy == doctest::Approx(mean).epsilon(1e-15));
}

TEST_CASE("k = 1 degenerates gracefully and centroid selection works") {
    const DatasetMap ds = tiny_datasets();
    SystemConfig cfg = tiny_system(1);
    cfg.selector = SelectorKind::Centroid;
    BuildReport rep;
    const ModelBundle b = build_system(ds, cfg, &rep);
    CHECK(b.ensemble.k() == 1);
    CHECK(selector_kind(b.ensemble.selector) == "centroid");
    CHECK_FALSE(rep.scnn.has_value());
    const Metrics m = evaluate(b, ds.at("A"), Split::Test);
    CHECK(m.mean_accuracy >= 0.0);
    CHECK(selector_accuracy(b.ensemble.selector, b.cluster_map, ds.at("A"), Split::Test) == 1.0);

    cfg.k = 5;
    CHECK_THROWS_AS(build_system(ds, cfg), ConfigError);
}

TEST_CASE("evaluate is pure and deterministic") {
    const ModelBundle& b = shared_bundle();
    const Dataset a = tiny_datasets().at("A");
    const auto before = bundle_bytes(b);
    const Metrics m1 = evaluate(b, a, Split::Test);
    const Metrics m2 = evaluate(b, a, Split::Test);
    CHECK(bundle_bytes(b) == before);
    CHECK(m1.mean_accuracy == m2.mean_accuracy);
    CHECK(m1.confusion == m2.confusion);

    const ModelBundle again = build_system(tiny_datasets(), tiny_system(2));
    CHECK(bundle_bytes(again) == before);
    CHECK(evaluate(again, a, Split::Test).mean_accuracy == m1.mean_accuracy);
}

TEST_CASE("evaluate rejects mismatched datasets") {
    const ModelBundle& b = shared_bundle();
    SyntheticSpec other = tiny_spec(1);
    other.n_groups = 3;
    CHECK_THROWS_AS(evaluate(b, generate_synthetic(other), Split::Test), MismatchError);
    SyntheticSpec wide = tiny_spec(1);
    wide.image_size = 12;
    CHECK_THROWS_AS(evaluate(b, generate_synthetic(wide), Split::Test), MismatchError);
}

TEST_CASE("bundle persistence round trip") {
    const ModelBundle& b = shared_bundle();
    const auto path = temp_path("bundle.sfl");
    save_bundle(b, path);
    const ModelBundle loaded = load_bundle(path);
    CHECK(bundle_bytes(loaded) == bundle_bytes(b));
    const auto path2 = temp_path("bundle2.sfl");
    save_bundle(loaded, path2);
    CHECK(read_file(path) == read_file(path2));
    const Dataset a = tiny_datasets().at("A");
    CHECK(evaluate(loaded, a, Split::Test).confusion == evaluate(b, a, Split::Test).confusion);
    CHECK_FALSE(std::filesystem::exists(path.string() + ".tmp"));
    std::filesystem::remove(path);
    std::filesystem::remove(path2);
}

TEST_CASE("damaged bundles fail with distinct errors") {
    const auto bytes = bundle_bytes(shared_bundle());

    auto truncated = bytes;
    truncated.resize(bytes.size() / 2);
    CHECK_THROWS_AS(decode_container(truncated), ChecksumError);

    auto bumped = bytes;
    bumped[4] += 1;
    CHECK_THROWS_AS(decode_container(bumped), VersionError);

    auto magic = bytes;
    magic[0] = 'X';
    CHECK_THROWS_AS(decode_container(magic), BadMagicError);

    auto flipped = bytes;
    flipped[bytes.size() / 3] ^= 0x40;
    CHECK_THROWS_AS(decode_container(flipped), ChecksumError);

    // A well-formed container whose contents are inconsistent.
    Container c = decode_container(bytes);
    for (auto& [name, t] : c.tensors)
        if (name == "svm/biases") t = Tensor({7});
    CHECK_THROWS_AS(bundle_from_container(c), InvariantError);
    Container d = decode_container(bytes);
    d.metadata = "{not json";
    CHECK_THROWS_AS(bundle_from_container(decode_container(encode_container(d))), InvariantError);
    CHECK_THROWS_AS(dataset_from_container(decode_container(bytes)), InvariantError);
}

TEST_CASE("dataset persistence round trip") {
    const Dataset a = tiny_datasets().at("A");
    const auto path = temp_path("data.sfl");
    save_dataset(a, path);
    const Dataset back = load_dataset(path);
    CHECK(back.images == a.images);
    CHECK(back.labels == a.labels);
    CHECK(back.splits == a.splits);
    CHECK(back.class_names == a.class_names);
    std::filesystem::remove(path);
}
