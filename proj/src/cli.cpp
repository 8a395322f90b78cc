#include "sfl/cli.hpp"

#include <cstdio>
#include <optional>
#include <ostream>
#include <span>
#include <sstream>

#include "CLI11.hpp"
#include "sfl/container.hpp"
#include "sfl/pipeline.hpp"
#include "sfl/run_config.hpp"

namespace sfl {

namespace {

struct Flags {
    std::string config;
    std::optional<std::string> out_dir;
    std::optional<std::uint64_t> seed;
    std::optional<std::size_t> threads;
    std::optional<std::string> dataset;
    std::optional<std::string> bundle;
};

RunConfig prepare(const Flags& f) {
    if (f.config.empty()) throw ConfigError("--config is required");
    RunConfig cfg = load_run_config(f.config);
    if (f.out_dir) cfg.out_dir = *f.out_dir;
    if (f.seed) cfg.seeds = {*f.seed};
    if (f.threads) cfg.threads = *f.threads;
    cfg.validate();
    std::error_code ec;
    std::filesystem::create_directories(cfg.out_dir, ec);
    if (ec) throw Error("cannot create output directory '" + cfg.out_dir.string() + "': " + ec.message());
    return cfg;
}

std::string hex32(std::uint32_t v) {
    char buf[9];
    std::snprintf(buf, sizeof buf, "%08x", v);
    return buf;
}

std::string system_name(const ModelBundle& b) {
    return b.provenance + "+SF(" + selector_kind(b.ensemble.selector) + ")";
}

std::filesystem::path bundle_path(const RunConfig& cfg, std::uint64_t seed) {
    return cfg.out_dir / ("bundle_seed" + std::to_string(seed) + ".sfl");
}

int cmd_gen(const Flags& f, std::ostream& out) {
    const RunConfig cfg = prepare(f);
    std::vector<std::string> ids;
    if (f.dataset) {
        if (!cfg.datasets.count(*f.dataset)) throw ConfigError("dataset '" + *f.dataset + "' is not declared");
        ids.push_back(*f.dataset);
    } else {
        for (const auto& [id, src] : cfg.datasets)
            if (src.synthetic) ids.push_back(id);
    }
    if (ids.empty()) throw ConfigError("no synthetic datasets to generate");
    for (const auto& id : ids) {
        const Dataset ds = cfg.materialize(id);
        const auto bytes = encode_container(dataset_container(ds));
        const auto path = cfg.out_dir / (id + ".sfl");
        write_file_atomic(path, bytes);
        // The trailer is the CRC of everything before it; a CRC over the
        // whole file would be the constant CRC-32 residue.
        const auto body = std::span<const std::uint8_t>(bytes).first(bytes.size() - 4);
        out << path.string() << " crc32=" << hex32(crc32(body)) << '\n';
    }
    return kExitOk;
}

int cmd_train(const Flags& f, std::ostream& out, std::ostream& err) {
    const RunConfig cfg = prepare(f);
    if (cfg.graph.empty()) throw ConfigError("[run] graph is required for train");
    const DatasetMap datasets = cfg.materialize_all();
    std::string csv = metrics_csv_header() + "\n";
    for (std::uint64_t seed : cfg.seeds) {
        SystemConfig sc = cfg.system_config(seed);
        sc.diagnostics = &err;
        const ModelBundle bundle = build_system(datasets, sc);
        const Metrics m = evaluate(bundle, datasets.at(sc.target), Split::Test);
        const auto path = bundle_path(cfg, seed);
        save_bundle(bundle, path);
        csv += metrics_csv_row(system_name(bundle), seed, m) + "\n";
        out << "seed=" << seed << " steps=" << bundle.steps << " provenance=" << bundle.provenance
            << " bundle=" << path.string() << " mean_accuracy=" << exact(m.mean_accuracy) << '\n';
    }
    write_text_atomic(cfg.out_dir / "metrics.csv", csv);
    return kExitOk;
}

int cmd_eval(const Flags& f, std::ostream& out) {
    const RunConfig cfg = prepare(f);
    std::filesystem::path bpath = f.bundle ? std::filesystem::path(*f.bundle)
                                           : cfg.eval_bundle.value_or(bundle_path(cfg, cfg.seeds.front()));
    std::error_code ec;
    if (!std::filesystem::is_regular_file(bpath, ec)) throw ConfigError("bundle '" + bpath.string() + "' not found");
    const ModelBundle bundle = load_bundle(bpath);

    const std::string which = f.dataset ? *f.dataset : cfg.eval_dataset.value_or(cfg.target);
    Dataset ds;
    if (cfg.datasets.count(which))
        ds = cfg.materialize(which);
    else if (!which.empty() && std::filesystem::is_regular_file(which, ec))
        ds = load_dataset(which);
    else
        throw ConfigError("eval dataset '" + which + "' is neither a declared id nor a file");

    const Metrics m = evaluate(bundle, ds, cfg.eval_split);
    write_text_atomic(cfg.out_dir / "eval_metrics.csv",
                      metrics_csv_header() + "\n" + metrics_csv_row(system_name(bundle), bundle.seed, m) + "\n");
    write_text_atomic(cfg.out_dir / "confusion.csv", confusion_csv(m));
    out << "mean_accuracy=" << exact(m.mean_accuracy) << '\n';
    return kExitOk;
}

int cmd_cluster_report(const Flags& f, std::ostream& out) {
    const RunConfig cfg = prepare(f);
    if (cfg.graph.empty()) throw ConfigError("[run] graph is required for cluster-report");
    const DatasetMap datasets = cfg.materialize_all();
    const std::uint64_t seed = cfg.seeds.front();
    const SystemConfig sc = cfg.system_config(seed);
    const StageGraphResult g =
        run_stage_graph(sc.graph, datasets, sc.train, derive_seed(seed, "gcnn"), sc.penultimate);
    const auto rows = tap_cluster_report(g.net, datasets.at(sc.target), sc.k, sc.lda_dim, seed);
    std::string csv = quality_csv_header() + "\n";
    for (const auto& q : rows) {
        csv += quality_csv_row(q) + "\n";
        out << q.tap << " silhouette=" << exact(q.silhouette) << '\n';
    }
    write_text_atomic(cfg.out_dir / "cluster_report.csv", csv);
    return kExitOk;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"Subset-feature fine-grained classification experiments"};
    app.require_subcommand(1);
    Flags flags;
    auto common = [&](CLI::App* sub) {
        sub->add_option("--config", flags.config, "INI configuration file")->required();
        sub->add_option("--out-dir", flags.out_dir, "Output directory (overrides [output] dir)");
        sub->add_option("--seed", flags.seed, "Run seed (replaces [run] seeds)");
        sub->add_option("--threads", flags.threads, "Worker threads (default 1)");
    };
    auto* gen = app.add_subcommand("gen", "Generate and write synthetic datasets");
    common(gen);
    gen->add_option("--dataset", flags.dataset, "Only generate this dataset id");
    auto* train = app.add_subcommand("train", "Train the full system once per seed");
    common(train);
    auto* eval = app.add_subcommand("eval", "Evaluate a bundle on a dataset");
    common(eval);
    eval->add_option("--bundle", flags.bundle, "Bundle file");
    eval->add_option("--dataset", flags.dataset, "Dataset id or dataset file");
    auto* report = app.add_subcommand("cluster-report", "Compare pre-clustering under three feature taps");
    common(report);

    std::vector<std::string> reversed(args.rbegin(), args.rend());
    try {
        app.parse(reversed);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e, out, err);
        return code == 0 ? kExitOk : kExitConfig;
    }

    try {
        if (gen->parsed()) return cmd_gen(flags, out);
        if (train->parsed()) return cmd_train(flags, out, err);
        if (eval->parsed()) return cmd_eval(flags, out);
        return cmd_cluster_report(flags, out);
    } catch (const ConfigError& e) {
        err << "config error: " << e.what() << '\n';
        return kExitConfig;
    } catch (const ArtifactError& e) {
        err << "corrupt artifact: " << e.what() << '\n';
        return kExitCorrupt;
    } catch (const MismatchError& e) {
        err << "mismatch: " << e.what() << '\n';
        return kExitMismatch;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << '\n';
        return kExitOther;
    }
}

}  // namespace sfl
