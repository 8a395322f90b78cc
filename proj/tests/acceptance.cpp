// Acceptance run: one PASS/FAIL line per criterion, non-zero exit if any fails.
//
//   sfl_acceptance [--seeds N] [--only 1,2,...] [--work-dir DIR]

#include <unistd.h>

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <set>
#include <sstream>

#include "CLI11.hpp"
#include "cluster_oracles.hpp"
#include "gradcheck.hpp"
#include "sfl/cli.hpp"
#include "sfl/pipeline.hpp"

using namespace sfl;
using namespace sfl::testing;
namespace fs = std::filesystem;

namespace {

// Pinned tolerances and thresholds.
constexpr double kGradTolerance = 1e-4;
constexpr std::size_t kGradTrials = 3;
constexpr double kQuickRuntime = 60.0;  // seconds, criteria 1-3

constexpr std::size_t kKMeansTrials = 100;
constexpr std::size_t kKMeansRestarts = 20;
constexpr std::size_t kKMeansRequiredHits = 90;
constexpr double kInertiaRelTol = 1e-9;     // "reached the optimum"
constexpr double kTraceRelTol = 1e-12;      // "non-increasing"

constexpr std::size_t kLdaSeeds = 20;
constexpr double kLdaCosine = 0.999;

constexpr std::size_t kSvmSeeds = 20;
constexpr std::size_t kSvmEpochs = 200;
constexpr double kSvmMonotoneTol = 1e-9;

constexpr std::size_t kFuseTrials = 10000;
constexpr double kFuseScaleTol = 1e-12;

constexpr double kSubsetGainPoints = 2.0;
constexpr double kSubsetRuntime = 15.0 * 60.0;
constexpr double kThreeStageSlackPoints = 0.5;

constexpr std::size_t kK = 6;
constexpr std::size_t kSmallTrainPerClass = 10;
// lr 0.05 (the library default) is unstable on the noisy benchmark for some
// seeds; every learned criterion trains with this rate instead.
constexpr double kLearningRate = 0.02;

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string fmt(const char* f, double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, f, v);
    return buf;
}

struct Verdict {
    bool pass;
    std::string detail;
};

// ---------------------------------------------------------------------------

Verdict gradient_check() {
    const auto t0 = Clock::now();
    const NetSpec spec = gradcheck_spec();
    double worst = 0.0;
    for (std::uint64_t seed = 0; seed < kGradTrials; ++seed) {
        Rng rng(seed);
        const NetParams p = gradcheck_params(spec, rng);
        const Tensor x = random_tensor({4, 2, 9, 9}, rng);
        const std::vector<Label> y{0, 1, 2, 1};
        worst = std::max(worst, max_gradient_error(spec, p, x, y));
    }
    const double t = seconds_since(t0);
    return {worst < kGradTolerance && t < kQuickRuntime,
            "conv(s1,s2)/relu/maxpool/flatten/fc/softmax max rel err " + fmt("%.3g", worst) + " (< " +
                fmt("%.0e", kGradTolerance) + "), " + fmt("%.1f", t) + "s"};
}

Verdict kmeans_oracle() {
    const auto t0 = Clock::now();
    std::size_t hits = 0, monotone_runs = 0;
    for (std::uint64_t trial = 0; trial < kKMeansTrials; ++trial) {
        Rng rng(trial);
        const Tensor p = random_matrix(8, 2, rng);
        const KMeansRun run = kmeans_fit_traced(p, 2, kKMeansRestarts, 100, rng);
        if (run.model.inertia <= brute_force_two_means(p) * (1.0 + kInertiaRelTol)) ++hits;
        bool monotone = true;
        for (const auto& tr : run.restart_traces)
            for (std::size_t i = 1; i < tr.size(); ++i) monotone &= tr[i] <= tr[i - 1] * (1.0 + kTraceRelTol);
        monotone_runs += monotone;
    }
    const double t = seconds_since(t0);
    return {hits >= kKMeansRequiredHits && monotone_runs == kKMeansTrials && t < kQuickRuntime,
            std::to_string(hits) + "/" + std::to_string(kKMeansTrials) + " trials at the brute-force optimum, " +
                std::to_string(monotone_runs) + "/" + std::to_string(kKMeansTrials) + " monotone traces, " +
                fmt("%.1f", t) + "s"};
}

Verdict lda_oracle() {
    const auto t0 = Clock::now();
    double worst = 1.0;
    for (std::uint64_t seed = 0; seed < kLdaSeeds; ++seed) {
        Rng rng(seed);
        Tensor x;
        std::vector<Label> y;
        gaussian_classes({{0.0, 0.0}, {3.0, 1.0}, {1.0, 4.0}}, 40, 1.0, rng, x, y);
        for (std::size_t i = 0; i < x.dim(0); ++i) x(i, 1) += 0.6 * x(i, 0);  // correlated within-class scatter
        const LdaModel m = lda_fit(x, y, 2, 0.0);
        const Tensor oracle = whitened_lda_oracle(x, y, 2, 0.0);
        for (std::size_t c = 0; c < 2; ++c)
            worst = std::min(worst, abs_cosine(column(m.projection, c).data(), column(oracle, c).data()));
    }
    const double t = seconds_since(t0);
    return {worst > kLdaCosine && t < kQuickRuntime,
            "min |cosine| " + fmt("%.9f", worst) + " over " + std::to_string(kLdaSeeds) + " seeds (> " +
                fmt("%.3f", kLdaCosine) + "), " + fmt("%.1f", t) + "s"};
}

Verdict svm_check() {
    std::size_t perfect = 0, monotone = 0, raw_monotone = 0;
    for (std::uint64_t seed = 0; seed < kSvmSeeds; ++seed) {
        Rng rng(seed);
        Tensor x;
        std::vector<Label> y;
        gaussian_classes({{-3.0, 0.0}, {3.0, 0.0}, {0.0, 5.0}}, 30, 0.5, rng, x, y);
        SvmOptions o;
        o.epochs = kSvmEpochs;
        SvmTrainReport rep;
        const SvmModel m = svm_train(x, y, o, rng, &rep);
        const auto pred = svm_predict_batch(m, x);
        bool all = true;
        for (std::size_t i = 0; i < y.size(); ++i) all &= pred[i] == static_cast<std::size_t>(y[i]);
        perfect += all;
        auto nonincreasing = [](const std::vector<std::vector<double>>& objs) {
            for (const auto& obj : objs)
                for (std::size_t i = 1; i < obj.size(); ++i)
                    if (obj[i] > obj[i - 1] + kSvmMonotoneTol) return false;
            return true;
        };
        monotone += nonincreasing(rep.objective_checkpoints);
        raw_monotone += nonincreasing(rep.raw_objective_checkpoints);
    }
    return {perfect == kSvmSeeds && monotone == kSvmSeeds,
            std::to_string(perfect) + "/" + std::to_string(kSvmSeeds) + " seeds at 100% train accuracy, " +
                std::to_string(monotone) + "/" + std::to_string(kSvmSeeds) +
                " monotone checkpoints (returned iterate; plain running average " + std::to_string(raw_monotone) +
                "/" + std::to_string(kSvmSeeds) + ")"};
}

Verdict fusion_invariants() {
    Rng rng(2024);
    std::size_t bad_width = 0, bad_blocks = 0, bad_scale = 0, bad_argmax = 0;
    for (std::size_t t = 0; t < kFuseTrials; ++t) {
        const std::size_t dg = 1 + rng.uniform_index(8), k = 1 + rng.uniform_index(8), ds = 1 + rng.uniform_index(8);
        Tensor g({dg});
        for (auto& e : g.data()) e = rng.normal();
        std::vector<Tensor> phi(k, Tensor({ds}));
        for (auto& p : phi)
            for (auto& e : p.data()) e = rng.normal();
        const auto d = SelectorDecision::one_hot(k, rng.uniform_index(k));
        const Tensor f = fuse(g, phi, d).vector;
        if (f.size() != dg + k * ds) {
            ++bad_width;
            continue;
        }
        std::size_t nonzero = 0;
        for (std::size_t b = 0; b < k; ++b) {
            bool any = false;
            for (std::size_t j = 0; j < ds; ++j) any |= f[dg + b * ds + j] != 0.0;
            nonzero += any;
        }
        bad_blocks += nonzero != 1;

        const double s = std::exp(rng.uniform(-6.0, 6.0));
        std::vector<Tensor> scaled;
        for (const auto& p : phi) scaled.push_back(scale(p, s));
        const Tensor fs = fuse(scale(g, s), scaled, d).vector;
        bad_scale += max_abs(subtract(fs, f)) > kFuseScaleTol;

        SvmModel m;
        const std::size_t classes = 2 + rng.uniform_index(5);
        m.weights = random_matrix(classes, f.size(), rng);
        m.biases = random_matrix(1, classes, rng).reshaped({classes});
        bad_argmax += svm_predict(m, f).label != svm_predict(m, fs).label;
    }
    return {bad_width + bad_blocks + bad_scale + bad_argmax == 0,
            std::to_string(kFuseTrials) + " random inputs: width violations " + std::to_string(bad_width) +
                ", block violations " + std::to_string(bad_blocks) + ", scaling changes " +
                std::to_string(bad_scale) + ", argmax changes " + std::to_string(bad_argmax)};
}

// ---------------------------------------------------------------------------
// Learned-behaviour criteria share one experiment per seed.
//
//   T   the benchmark (3 groups x 4 classes, 100/30 per class, 3x16x16)
//   S   the same classes with 10 train images per class
//   IN  a generic dataset: unrelated class appearances, 16 classes
//   BS  a same-domain dataset: disjoint groups of T's appearance family
//
// GCNN = IN-rt-BS-ft. Graph comparisons score an SVM on l2-normalized
// penultimate features of the target, since most graphs end on a head that
// does not match the target's classes.

constexpr std::uint64_t kTargetFamily = 1000;
constexpr std::uint64_t kGenericFamily = 2000;

DatasetMap experiment_datasets(std::uint64_t seed) {
    SyntheticSpec bench;
    bench.seed = derive_seed(seed, "T");
    bench.prototype_seed = kTargetFamily;
    SyntheticSpec small = bench;
    small.seed = derive_seed(seed, "S");
    small.train_per_class = kSmallTrainPerClass;
    SyntheticSpec generic;
    generic.n_groups = 4;
    generic.train_per_class = 60;
    generic.test_per_class = 1;
    generic.seed = derive_seed(seed, "IN");
    generic.prototype_seed = kGenericFamily;
    SyntheticSpec domain = generic;
    domain.seed = derive_seed(seed, "BS");
    domain.prototype_seed = kTargetFamily;
    domain.group_offset = bench.n_groups;

    DatasetMap ds;
    ds.emplace("T", generate_synthetic(bench));
    ds.emplace("S", generate_synthetic(small));
    ds.emplace("IN", generate_synthetic(generic));
    ds.emplace("BS", generate_synthetic(domain));
    return ds;
}

TrainConfig experiment_train_config() {
    TrainConfig cfg;
    cfg.learning_rate = kLearningRate;
    return cfg;
}

struct SeedOutcome {
    double full = 0, baseline = 0;
    double scnn = 0, centroid = 0;
    double conv5 = 0, fc6 = 0, lda_fc6 = 0;
    std::map<std::string, double> graph_accuracy;
    double system_seconds = 0;
    std::size_t empty_subsets = 0;
};

const std::vector<std::string> kGraphs{"S-rt", "IN-rt-S-ft", "IN-rt-BS-ft", "IN-rt-BS-ft-S-ft"};

SeedOutcome run_seed(std::uint64_t seed, bool system, bool graphs) {
    const DatasetMap ds = experiment_datasets(seed);
    SeedOutcome o;
    if (system) {
        const auto t0 = Clock::now();
        SystemConfig sc;
        sc.graph = StageGraph::parse("IN-rt-BS-ft");
        sc.target = "T";
        sc.k = kK;
        sc.train = experiment_train_config();
        sc.seed = seed;
        BuildReport rep;
        const ModelBundle b = build_system(ds, sc, &rep);
        o.full = evaluate(b, ds.at("T"), Split::Test).mean_accuracy;
        o.baseline = feature_svm_metrics(*b.gcnn, ds.at("T"), sc.svm, seed).mean_accuracy;
        o.system_seconds = seconds_since(t0);
        o.scnn = selector_accuracy(b.ensemble.selector, b.cluster_map, ds.at("T"), Split::Test);
        o.centroid = selector_accuracy(Selector{rep.centroid}, b.cluster_map, ds.at("T"), Split::Test);
        for (std::size_t k = 0; k < kK; ++k) o.empty_subsets += b.cluster_map.subset_classes(k).empty();
        for (const auto& q : tap_cluster_report(*b.gcnn, ds.at("T"), kK, std::nullopt, seed)) {
            if (q.tap == "conv5") o.conv5 = q.silhouette;
            if (q.tap == "fc6") o.fc6 = q.silhouette;
            if (q.tap == "lda-fc6") o.lda_fc6 = q.silhouette;
        }
    }
    if (graphs) {
        for (const auto& g : kGraphs) {
            const auto r = run_stage_graph(StageGraph::parse(g), ds, experiment_train_config(),
                                           derive_seed(seed, "gcnn"), 64);
            o.graph_accuracy[g] = feature_svm_metrics(r.net, ds.at("S"), SvmOptions{}, seed).mean_accuracy;
        }
    }
    return o;
}

double mean_of(const std::vector<SeedOutcome>& v, const std::function<double(const SeedOutcome&)>& f) {
    double s = 0.0;
    for (const auto& o : v) s += f(o);
    return v.empty() ? 0.0 : s / static_cast<double>(v.size());
}

std::string pct(double v) { return fmt("%.2f", 100.0 * v); }

// ---------------------------------------------------------------------------

const char* kCliDatasets = R"(
[dataset.A]
n_groups = 2
classes_per_group = 2
train_per_class = 10
test_per_class = 5
image_size = 10
max_shift = 1
seed = 1

[dataset.B]
n_groups = 3
classes_per_group = 2
train_per_class = 10
test_per_class = 5
image_size = 10
max_shift = 1
seed = 2
)";

const char* kCliRun = R"(
[run]
graph = B-rt-A-ft
target = A
k = 2
seeds = 3,4
penultimate = 16

[train]
learning_rate = 0.02
epochs = 3
batch_size = 8

[subset]
epochs = 2

[selector]
epochs = 2

[svm]
epochs = 10
)";

int cli(const std::vector<std::string>& args) {
    std::ostringstream out, err;
    return run_cli(args, out, err);
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

Verdict determinism_and_persistence(const fs::path& work) {
    fs::remove_all(work);
    fs::create_directories(work);
    const fs::path ini = work / "run.ini";
    std::ofstream(ini) << kCliRun << kCliDatasets;
    const std::string a = (work / "a").string(), b = (work / "b").string();
    std::vector<std::string> problems;

    if (cli({"train", "--config", ini.string(), "--out-dir", a}) != kExitOk ||
        cli({"train", "--config", ini.string(), "--out-dir", b}) != kExitOk)
        return {false, "train failed"};
    if (slurp(fs::path(a) / "metrics.csv") != slurp(fs::path(b) / "metrics.csv"))
        problems.push_back("metrics differ between identical runs");
    for (const char* f : {"bundle_seed3.sfl", "bundle_seed4.sfl"})
        if (read_file(fs::path(a) / f) != read_file(fs::path(b) / f)) problems.push_back(std::string(f) + " differs");

    const fs::path bundle = fs::path(a) / "bundle_seed3.sfl";
    const ModelBundle loaded = load_bundle(bundle);
    const fs::path resaved = work / "resaved.sfl";
    save_bundle(loaded, resaved);
    if (read_file(bundle) != read_file(resaved)) problems.push_back("save-load-save not byte-identical");

    // eval on the loaded bundle reproduces the training-time metric row.
    if (cli({"eval", "--config", ini.string(), "--out-dir", a, "--bundle", bundle.string()}) != kExitOk)
        problems.push_back("eval failed");
    const std::string train_csv = slurp(fs::path(a) / "metrics.csv");
    const std::string eval_csv = slurp(fs::path(a) / "eval_metrics.csv");
    const std::string eval_row = eval_csv.substr(eval_csv.find('\n') + 1);
    if (train_csv.find(eval_row) == std::string::npos) problems.push_back("eval metrics differ from train metrics");

    const auto good = read_file(bundle);
    const fs::path bad = work / "bad.sfl";
    auto expect = [&](const std::string& what, std::vector<std::uint8_t> bytes, int code) {
        write_file_atomic(bad, bytes);
        const int got = cli({"eval", "--config", ini.string(), "--out-dir", a, "--bundle", bad.string()});
        if (got != code)
            problems.push_back(what + " exited " + std::to_string(got) + ", expected " + std::to_string(code));
    };
    auto flipped = good;
    flipped[good.size() / 2] ^= 0x01;
    expect("bit flip", flipped, kExitCorrupt);
    auto truncated = good;
    truncated.resize(good.size() - 100);
    expect("truncation", truncated, kExitCorrupt);
    auto magic = good;
    magic[1] = 'X';
    expect("bad magic", magic, kExitCorrupt);
    auto version = good;
    version[4] ^= 0x02;
    expect("version bump", version, kExitCorrupt);
    expect("empty file", {}, kExitCorrupt);

    if (cli({"eval", "--config", ini.string(), "--out-dir", a, "--bundle", bundle.string(), "--dataset", "B"}) !=
        kExitMismatch)
        problems.push_back("class-count mismatch did not exit 4");
    std::ofstream(work / "broken.ini") << "[run]\ngraph = A-ft\ntarget = A\n" << kCliDatasets;
    if (cli({"train", "--config", (work / "broken.ini").string(), "--out-dir", a}) != kExitConfig)
        problems.push_back("invalid config did not exit 2");

    fs::remove_all(work);
    if (!problems.empty()) {
        std::string d;
        for (const auto& p : problems) d += (d.empty() ? "" : "; ") + p;
        return {false, d};
    }
    return {true, "identical reruns, byte-identical save-load-save, eval == train, corrupt -> 3 (5 kinds), "
                  "mismatch -> 4, bad config -> 2"};
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Acceptance criteria"};
    std::size_t seeds = 5;
    std::vector<int> only;
    std::string work = (fs::temp_directory_path() / ("sfl_acceptance_" + std::to_string(::getpid()))).string();
    app.add_option("--seeds", seeds, "Seeds for the learned-behaviour criteria");
    app.add_option("--only", only, "Run only these criteria")->delimiter(',');
    app.add_option("--work-dir", work, "Scratch directory");
    CLI11_PARSE(app, argc, argv);
    const std::set<int> selected(only.begin(), only.end());
    auto want = [&](int i) { return selected.empty() || selected.count(i); };

    int failures = 0;
    auto report = [&](int id, const std::string& name, const Verdict& v) {
        std::cout << (v.pass ? "PASS" : "FAIL") << "  [" << id << "] " << name << ": " << v.detail << std::endl;
        failures += !v.pass;
    };

    if (want(1)) report(1, "gradient correctness", gradient_check());
    if (want(2)) report(2, "k-means oracle", kmeans_oracle());
    if (want(3)) report(3, "LDA oracle", lda_oracle());
    if (want(4)) report(4, "SVM", svm_check());
    if (want(5)) report(5, "fusion invariants", fusion_invariants());

    const bool system = want(6) || want(7) || want(9);
    const bool graphs = want(8);
    if (system || graphs) {
        std::vector<SeedOutcome> runs;
        for (std::uint64_t s = 0; s < seeds; ++s) {
            runs.push_back(run_seed(s, system, graphs));
            const auto& o = runs.back();
            std::cout << "      seed " << s;
            if (system)
                std::cout << ": full " << pct(o.full) << " baseline " << pct(o.baseline) << " scnn " << pct(o.scnn)
                          << " centroid " << pct(o.centroid) << " silhouette conv5/fc6/lda-fc6 "
                          << fmt("%.3f", o.conv5) << "/" << fmt("%.3f", o.fc6) << "/" << fmt("%.3f", o.lda_fc6)
                          << " empty subsets " << o.empty_subsets;
            for (const auto& [g, acc] : o.graph_accuracy) std::cout << " " << g << " " << pct(acc);
            std::cout << std::endl;
        }
        const std::string n = std::to_string(seeds) + " seeds";
        if (want(6)) {
            const double full = mean_of(runs, [](auto& o) { return o.full; });
            const double base = mean_of(runs, [](auto& o) { return o.baseline; });
            const double total = mean_of(runs, [](auto& o) { return o.system_seconds; }) * static_cast<double>(seeds);
            const double gain = 100.0 * (full - base);
            report(6, "subset-feature ordering",
                   {gain >= kSubsetGainPoints && total < kSubsetRuntime,
                    "IN-rt-BS-ft+SF(scnn) " + pct(full) + " vs GCNN-feature SVM " + pct(base) + ", gain " +
                        fmt("%.2f", gain) + " points (>= " + fmt("%.1f", kSubsetGainPoints) + ") over " + n +
                        ", " + fmt("%.0f", total) + "s"});
        }
        if (want(7)) {
            const double sc = mean_of(runs, [](auto& o) { return o.scnn; });
            const double ce = mean_of(runs, [](auto& o) { return o.centroid; });
            report(7, "selector ordering",
                   {sc >= ce, "SCNN " + pct(sc) + " >= centroid " + pct(ce) + " held-out subset accuracy, " + n});
        }
        if (want(8)) {
            auto g = [&](const std::string& name) {
                return mean_of(runs, [&](auto& o) { return o.graph_accuracy.at(name); });
            };
            const double scratch = g("S-rt"), two = g("IN-rt-S-ft"), domain = g("IN-rt-BS-ft"),
                         three = g("IN-rt-BS-ft-S-ft");
            const bool ok = two > scratch && 100.0 * three >= 100.0 * domain - kThreeStageSlackPoints;
            report(8, "progressive-transfer ordering",
                   {ok, "10 train/class: IN-rt-S-ft " + pct(two) + " > S-rt " + pct(scratch) + "; IN-rt-BS-ft-S-ft " +
                            pct(three) + " >= IN-rt-BS-ft " + pct(domain) + " - " +
                            fmt("%.1f", kThreeStageSlackPoints) + ", " + n});
        }
        if (want(9)) {
            const double lda = mean_of(runs, [](auto& o) { return o.lda_fc6; });
            const double conv = mean_of(runs, [](auto& o) { return o.conv5; });
            const double fc = mean_of(runs, [](auto& o) { return o.fc6; });
            report(9, "pre-clustering tap ordering",
                   {lda >= conv, "mean silhouette lda-fc6 " + fmt("%.4f", lda) + " >= conv5 " + fmt("%.4f", conv) +
                                     " (fc6 " + fmt("%.4f", fc) + "), " + n});
        }
    }
    if (want(10)) report(10, "determinism and persistence", determinism_and_persistence(work));

    std::cout << (failures ? "ACCEPTANCE: " + std::to_string(failures) + " criteria failed" : "ACCEPTANCE: all passed")
              << std::endl;
    return failures ? 1 : 0;
}
