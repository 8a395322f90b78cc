#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "sfl/convnet.hpp"
#include "sfl/numkit.hpp"

namespace sfl {

enum class Split : std::uint8_t { Train = 0, Test = 1 };

std::string split_name(Split s);

/// Images [N, C, H, W] with one label and one split tag per row.
struct Dataset {
    Tensor images;
    std::vector<Label> labels;
    std::vector<Split> splits;
    std::vector<std::string> class_names;

    std::size_t size() const { return labels.size(); }
    std::size_t class_count() const { return class_names.size(); }
    std::size_t channels() const { return images.dim(1); }
    std::size_t height() const { return images.dim(2); }
    std::size_t width() const { return images.dim(3); }

    // Throws ContractError when shapes, labels or split tags are inconsistent.
    void validate() const;

    Dataset rows(std::span<const std::size_t> indices) const;
    Dataset select(Split split) const;
    std::vector<std::size_t> indices(Split split) const;
    std::size_t count(Split split) const;
};

struct SyntheticSpec {
    std::size_t n_groups = 3;
    std::size_t classes_per_group = 4;
    std::size_t train_per_class = 100;
    std::size_t test_per_class = 30;
    std::size_t image_size = 16;
    std::size_t channels = 3;
    // 1: classes of a group share their background completely; 0: every
    // class has an unrelated background and groups carry no information.
    double intra_group_similarity = 0.8;
    std::uint64_t seed = 0;
    // Seed of the class appearances. Datasets that share it share classes
    // (group g, member i look the same), while `seed` drives sampling only.
    std::optional<std::uint64_t> prototype_seed;
    // Index of the first group, so that a dataset can contain groups
    // [group_offset, group_offset + n_groups) of a prototype family.
    std::size_t group_offset = 0;
    double noise = 1.0;
    std::size_t max_shift = 2;
    double glyph_amplitude = 0.8;

    void validate() const;
};

/// Confusable-groups benchmark: each group shares a coloured grating
/// background, classes inside a group differ by a small jittered glyph.
/// Rows are ordered class by class, train rows before test rows.
Dataset generate_synthetic(const SyntheticSpec& spec);

// group(c) for datasets built by generate_synthetic (without offset).
inline std::size_t synthetic_group(const SyntheticSpec& spec, std::size_t cls) {
    return cls / spec.classes_per_group;
}

}  // namespace sfl
