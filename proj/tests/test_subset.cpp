#include <set>
#include <sstream>

#include "doctest.h"
#include "sfl/pipeline.hpp"
#include "sfl/subset.hpp"
#include "test_util.hpp"

using namespace sfl;

namespace {

SyntheticSpec small_spec(std::uint64_t seed = 1) {
    SyntheticSpec s;
    s.n_groups = 2;
    s.classes_per_group = 2;
    s.train_per_class = 12;
    s.test_per_class = 4;
    s.image_size = 10;
    s.max_shift = 1;
    s.seed = seed;
    return s;
}

NetParams train_fn(const Network& net, const Dataset& d, const TrainConfig& cfg) {
    return train(net.params, net.spec, d.images, d.labels, cfg).params;
}

Network small_gcnn(const Dataset& d, std::uint64_t seed = 3) {
    const NetSpec spec = desk_spec(d.channels(), d.height(), d.class_count(), 16);
    Rng rng(seed);
    Network net{spec, init_params(spec, rng)};
    TrainConfig cfg;
    cfg.epochs = 2;
    cfg.batch_size = 8;
    const Dataset train = d.select(Split::Train);
    net.params = train_fn(net, train, cfg);
    return net;
}

}  // namespace

TEST_CASE("build_partition remaps labels densely") {
    const Dataset d = generate_synthetic(small_spec()).select(Split::Train);
    const ClassClusterMap map{{0, 1, 0, 1}, 2};
    const SubsetPartition p = build_partition(map, d);
    p.validate(4);
    REQUIRE(p.k() == 2);
    CHECK(p.subsets[0].classes == std::vector<std::size_t>{0, 2});
    CHECK(p.subsets[0].remap.at(0) == 0);
    CHECK(p.subsets[0].remap.at(2) == 1);
    CHECK(p.subsets[1].remap.at(1) == 0);
    CHECK(p.subsets[1].remap.at(3) == 1);
    CHECK(p.subsets[0].size() + p.subsets[1].size() == d.size());
    for (std::size_t r : p.subsets[1].rows) CHECK(map.class_to_subset[static_cast<std::size_t>(d.labels[r])] == 1);

    const SubsetPartition one = build_partition(ClassClusterMap{{0, 0, 0, 0}, 1}, d);
    REQUIRE(one.k() == 1);
    CHECK(one.subsets[0].size() == d.size());
    for (std::size_t c = 0; c < 4; ++c) CHECK(one.subsets[0].remap.at(c) == static_cast<Label>(c));
}

TEST_CASE("partition membership ignores dataset row order") {
    const Dataset d = generate_synthetic(small_spec()).select(Split::Train);
    Rng rng(4);
    const auto perm = rng.permutation(d.size());
    const Dataset shuffled = d.rows(perm);
    const ClassClusterMap map{{1, 0, 0, 1}, 2};
    const SubsetPartition a = build_partition(map, d);
    const SubsetPartition b = build_partition(map, shuffled);
    for (std::size_t k = 0; k < 2; ++k) {
        CHECK(a.subsets[k].classes == b.subsets[k].classes);
        std::multiset<std::size_t> ma, mb;
        for (std::size_t r : a.subsets[k].rows) ma.insert(r);
        for (std::size_t r : b.subsets[k].rows) mb.insert(perm[r]);
        CHECK(ma == mb);
    }
}

TEST_CASE("decide and one-hot decisions") {
    const std::vector<double> s{0.1, 0.7, 0.2};
    const auto d = decide(s);
    CHECK(d.chosen == 1);
    CHECK(d.weights == std::vector<double>{0, 1, 0});
    const std::vector<double> tie{0.4, 0.2, 0.4};
    CHECK(decide(tie).chosen == 0);

    Rng rng(5);
    for (int t = 0; t < 1000; ++t) {
        std::vector<double> v(1 + rng.uniform_index(8));
        for (auto& e : v) e = std::floor(rng.uniform(0.0, 4.0));
        const auto dd = decide(v);
        std::size_t ones = 0;
        for (double w : dd.weights) {
            CHECK((w == 0.0 || w == 1.0));
            ones += w == 1.0;
        }
        CHECK(ones == 1);
        CHECK(dd.weights[dd.chosen] == 1.0);
    }
}

TEST_CASE("subset nets: shapes, reproducibility, collapse to one fine-tune") {
    const Dataset all = generate_synthetic(small_spec());
    const Dataset d = all.select(Split::Train);
    const Network gcnn = small_gcnn(all);
    TrainConfig cfg = finetune_config(TrainConfig{});
    cfg.epochs = 2;
    cfg.batch_size = 8;
    cfg.seed = 11;

    const ClassClusterMap map{{0, 1, 1, 1}, 2};
    std::ostringstream diag;
    SubsetTrainOptions opts{cfg, 1, &diag};
    const SubsetEnsemble e = train_subset_nets(build_partition(map, d), d, gcnn, opts);
    REQUIRE(e.k() == 2);
    CHECK(e.nets[0].spec.class_count == 1);
    CHECK(e.nets[1].spec.class_count == 3);
    CHECK(e.warnings.size() == 1);
    CHECK(diag.str().find("single class") != std::string::npos);

    opts.threads = 2;
    opts.diagnostics = nullptr;
    const SubsetEnsemble again = train_subset_nets(build_partition(map, d), d, gcnn, opts);
    for (std::size_t k = 0; k < 2; ++k) CHECK(again.nets[k].params == e.nets[k].params);

    // K = 1 is exactly one head reset plus one fine-tune on the whole set.
    opts.threads = 1;
    const SubsetEnsemble single = train_subset_nets(build_partition({{0, 0, 0, 0}, 1}, d), d, gcnn, opts);
    Rng head(derive_seed(derive_seed(cfg.seed, "subset-head"), 0));
    Network manual = reinit_head(gcnn, 4, head);
    TrainConfig mc = cfg;
    mc.seed = derive_seed(derive_seed(cfg.seed, "subset-train"), 0);
    manual.params = train(manual.params, manual.spec, d.images, d.labels, mc).params;
    CHECK(single.nets[0].params == manual.params);
}

TEST_CASE("subset features match per-net forward passes") {
    const Dataset all = generate_synthetic(small_spec());
    const Network gcnn = small_gcnn(all);
    Rng rng(6);
    SubsetEnsemble e;
    e.nets = {reinit_head(gcnn, 2, rng), reinit_head(gcnn, 2, rng), gcnn};
    const Tensor img = all.images.take_rows(std::vector<std::size_t>{5}).reshaped({3, 10, 10});
    const auto feats = extract_subset_features(e, img);
    REQUIRE(feats.size() == 3);
    for (std::size_t k = 0; k < 3; ++k) {
        CHECK(feats[k].size() == e.feature_dim());
        CHECK(feats[k] == forward(e.nets[k], img.reshaped({1, 3, 10, 10}), e.tap).reshaped({16}));
    }
    // All three share the trunk, so their penultimate features coincide.
    CHECK(feats[0] == feats[1]);
    CHECK(feats[0] == feats[2]);
}

TEST_CASE("selectors") {
    const Dataset all = generate_synthetic(small_spec());
    const Dataset d = all.select(Split::Train);
    auto gcnn = std::make_shared<const Network>(small_gcnn(all));
    const ClassClusterMap map{{0, 0, 1, 1}, 2};

    const auto labels = subset_labels(map, d.labels);
    for (std::size_t i = 0; i < d.size(); ++i)
        CHECK(labels[i] == static_cast<Label>(map.class_to_subset[static_cast<std::size_t>(d.labels[i])]));

    TrainConfig cfg = finetune_config(TrainConfig{});
    cfg.epochs = 2;
    cfg.batch_size = 8;
    const ScnnSelector sc = train_scnn(map, d, *gcnn, cfg);
    CHECK(sc.net.spec.class_count == 2);
    const Tensor h = forward(sc.net, d.images, TapId::Head);
    for (std::size_t i = 0; i < h.dim(0); ++i) CHECK(std::abs(h(i, 0) + h(i, 1) - 1.0) <= 1e-9);
    const auto decisions = select_batch(Selector{sc}, d.images);
    for (std::size_t i = 0; i < d.size(); ++i) CHECK(decisions[i].chosen == argmax(h.row(i)));

    const Tensor feats = forward_chunked(*gcnn, d.images, TapId::FcPenultimate);
    const LdaModel lda = lda_fit(feats, d.labels, 3);
    Rng rng(7);
    const auto pre = precluster_classes(feats, d.labels, "lda-fc6", &lda, 2, rng);
    const CentroidSelector cen{pre.kmeans, lda, gcnn};
    const auto assign = kmeans_assign(pre.kmeans, lda_transform(lda, feats));
    const auto cd = select_batch(Selector{cen}, d.images);
    for (std::size_t i = 0; i < d.size(); ++i) CHECK(cd[i].chosen == assign[i]);
    CHECK(selector_kind(Selector{cen}) == "centroid");
    CHECK(selector_kind(Selector{sc}) == "scnn");
    CHECK_THROWS(select_batch(Selector{}, d.images));
}

TEST_CASE("forward_chunked equals a single forward pass") {
    const Dataset all = generate_synthetic(small_spec());
    const Network gcnn = small_gcnn(all);
    CHECK(forward_chunked(gcnn, all.images, TapId::ConvLast, 7) == forward(gcnn, all.images, TapId::ConvLast));
}
