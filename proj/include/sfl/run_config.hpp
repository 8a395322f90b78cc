#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "sfl/convnet.hpp"
#include "sfl/dataset.hpp"
#include "sfl/fusion.hpp"
#include "sfl/pipeline.hpp"

namespace sfl {

// A dataset is either read from a container file or generated.
struct DatasetSource {
    std::optional<std::filesystem::path> path;
    std::optional<SyntheticSpec> synthetic;
    bool explicit_seed = false;
};

/// Everything one experiment needs, read from an INI file:
///
///   [run]       graph, target, k, seeds, selector, threads, penultimate, lda_dim
///   [train]     learning_rate, momentum, weight_decay, batch_size, epochs,
///               schedule_factor, schedule_every (0 = constant), freeze_below
///   [subset]    epochs            [selector] epochs
///   [svm]       lambda, epochs
///   [output]    dir
///   [eval]      bundle, dataset, split
///   [dataset.X] path = file.sfl, or generator keys (n_groups, classes_per_group,
///               train_per_class, test_per_class, image_size, channels,
///               intra_group_similarity, seed, prototype_seed, group_offset,
///               noise, max_shift, glyph_amplitude)
struct RunConfig {
    std::map<std::string, DatasetSource> datasets;
    std::string graph;
    std::string target;
    std::size_t k = 6;
    std::vector<std::uint64_t> seeds{0};
    SelectorKind selector = SelectorKind::Scnn;
    std::size_t threads = 1;
    std::size_t penultimate = 64;
    std::optional<std::size_t> lda_dim;
    TrainConfig train;
    std::optional<std::size_t> subset_epochs;
    std::optional<std::size_t> selector_epochs;
    SvmOptions svm;
    std::filesystem::path out_dir = ".";
    std::optional<std::filesystem::path> eval_bundle;
    std::optional<std::string> eval_dataset;  // dataset id or file path
    Split eval_split = Split::Test;

    // Throws ConfigError. Checks referenced files exist, k ≥ 1, at least one
    // seed, a parsable graph whose datasets are all declared.
    void validate() const;

    // Synthetic datasets without an explicit seed draw one from the first run seed.
    Dataset materialize(const std::string& id) const;
    DatasetMap materialize_all() const;
    SystemConfig system_config(std::uint64_t seed) const;
};

/// Parses INI text; relative dataset paths resolve against `base_dir`.
RunConfig parse_run_config(const std::string& text, const std::filesystem::path& base_dir = ".");
RunConfig load_run_config(const std::filesystem::path& path);

}  // namespace sfl
