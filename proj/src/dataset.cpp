#include "sfl/dataset.hpp"

#include <cmath>

namespace sfl {

std::string split_name(Split s) {
    return s == Split::Train ? "train" : "test";
}

void Dataset::validate() const {
    if (images.rank() != 4) throw ContractError("dataset images must be [N, C, H, W]");
    if (images.dim(0) != labels.size() || labels.size() != splits.size())
        throw ContractError("dataset row counts disagree");
    for (Label l : labels)
        if (l < 0 || static_cast<std::size_t>(l) >= class_names.size())
            throw ContractError("dataset label " + std::to_string(l) + " out of range");
    for (Split s : splits)
        if (s != Split::Train && s != Split::Test) throw ContractError("dataset split tag invalid");
}

Dataset Dataset::rows(std::span<const std::size_t> idx) const {
    Dataset out;
    out.images = images.take_rows(idx);
    out.class_names = class_names;
    for (std::size_t i : idx) {
        out.labels.push_back(labels[i]);
        out.splits.push_back(splits[i]);
    }
    return out;
}

std::vector<std::size_t> Dataset::indices(Split split) const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < splits.size(); ++i)
        if (splits[i] == split) out.push_back(i);
    return out;
}

std::size_t Dataset::count(Split split) const {
    std::size_t n = 0;
    for (Split s : splits) n += s == split;
    return n;
}

Dataset Dataset::select(Split split) const {
    const auto idx = indices(split);
    return rows(idx);
}

void SyntheticSpec::validate() const {
    if (n_groups == 0 || classes_per_group == 0) throw ConfigError("synthetic dataset needs at least one class");
    if (train_per_class == 0 || test_per_class == 0)
        throw ConfigError("synthetic dataset needs positive per-class counts");
    if (image_size < 4) throw ConfigError("synthetic image_size must be at least 4");
    if (channels == 0) throw ConfigError("synthetic channels must be positive");
    if (!(intra_group_similarity >= 0.0 && intra_group_similarity <= 1.0))
        throw ConfigError("intra_group_similarity must lie in [0, 1]");
    if (!(noise >= 0.0)) throw ConfigError("noise must be nonnegative");
    if (2 * max_shift + 3 > image_size) throw ConfigError("max_shift too large for image_size");
}

namespace {

constexpr std::size_t kGlyph = 5;

struct Background {
    std::vector<double> color;  // per channel
    std::vector<double> mix;    // grating amplitude per channel
    double angle = 0.0;
    double frequency = 0.0;
};

struct ClassLook {
    Background own;
    std::vector<double> glyph;        // kGlyph × kGlyph mask in {0, 1}
    std::vector<double> glyph_color;  // per channel
};

Background draw_background(Rng& rng, std::size_t channels) {
    Background b;
    for (std::size_t c = 0; c < channels; ++c) b.color.push_back(rng.uniform(-1.0, 1.0));
    for (std::size_t c = 0; c < channels; ++c) b.mix.push_back(rng.uniform(-0.8, 0.8));
    b.angle = rng.uniform(0.0, M_PI);
    b.frequency = rng.uniform(0.4, 1.2);
    return b;
}

ClassLook draw_class(Rng& rng, std::size_t channels) {
    ClassLook look;
    look.own = draw_background(rng, channels);
    look.glyph.resize(kGlyph * kGlyph);
    bool any = false;
    for (auto& v : look.glyph) {
        v = rng.uniform() < 0.5 ? 1.0 : 0.0;
        any = any || v > 0.0;
    }
    if (!any) look.glyph[kGlyph * kGlyph / 2] = 1.0;
    for (std::size_t c = 0; c < channels; ++c) look.glyph_color.push_back(rng.uniform() < 0.5 ? -1.0 : 1.0);
    return look;
}

double grating(const Background& b, double x, double y, double phase, std::size_t ch) {
    const double u = x * std::cos(b.angle) + y * std::sin(b.angle);
    return b.color[ch] + b.mix[ch] * std::cos(b.frequency * u + phase);
}

}  // namespace

Dataset generate_synthetic(const SyntheticSpec& spec) {
    spec.validate();
    const std::uint64_t proto = spec.prototype_seed.value_or(spec.seed);
    const std::size_t classes = spec.n_groups * spec.classes_per_group;
    const std::size_t per_class = spec.train_per_class + spec.test_per_class;
    const std::size_t S = spec.image_size, C = spec.channels;

    std::vector<Background> groups;
    std::vector<ClassLook> looks;
    for (std::size_t g = 0; g < spec.n_groups; ++g) {
        const std::size_t gid = g + spec.group_offset;
        Rng grng(derive_seed(derive_seed(proto, "group"), gid));
        groups.push_back(draw_background(grng, C));
        for (std::size_t i = 0; i < spec.classes_per_group; ++i) {
            Rng crng(derive_seed(derive_seed(derive_seed(proto, "class"), gid), i));
            looks.push_back(draw_class(crng, C));
        }
    }

    Dataset ds;
    ds.images = Tensor({classes * per_class, C, S, S});
    ds.labels.reserve(classes * per_class);
    ds.splits.reserve(classes * per_class);
    for (std::size_t cls = 0; cls < classes; ++cls) {
        const std::size_t g = cls / spec.classes_per_group;
        ds.class_names.push_back("g" + std::to_string(g + spec.group_offset) + "_c" +
                                 std::to_string(cls % spec.classes_per_group));
    }

    const double s = spec.intra_group_similarity;
    const double centre = static_cast<double>(S - kGlyph) / 2.0;
    Rng rng(derive_seed(spec.seed, "samples"));
    std::size_t row = 0;
    for (std::size_t cls = 0; cls < classes; ++cls) {
        const Background& gb = groups[cls / spec.classes_per_group];
        const ClassLook& look = looks[cls];
        for (std::size_t j = 0; j < per_class; ++j, ++row) {
            const double phase = rng.uniform(0.0, 2.0 * M_PI);
            const double gain = 1.0 + 0.1 * rng.normal();
            const auto span = static_cast<long>(2 * spec.max_shift + 1);
            const long dx = static_cast<long>(rng.uniform_index(static_cast<std::size_t>(span))) -
                            static_cast<long>(spec.max_shift);
            const long dy = static_cast<long>(rng.uniform_index(static_cast<std::size_t>(span))) -
                            static_cast<long>(spec.max_shift);
            const long gx0 = static_cast<long>(std::floor(centre)) + dx;
            const long gy0 = static_cast<long>(std::floor(centre)) + dy;
            auto img = ds.images.row(row);
            for (std::size_t ch = 0; ch < C; ++ch) {
                for (std::size_t y = 0; y < S; ++y) {
                    for (std::size_t x = 0; x < S; ++x) {
                        const double xf = static_cast<double>(x), yf = static_cast<double>(y);
                        double v = s * grating(gb, xf, yf, phase, ch) + (1.0 - s) * grating(look.own, xf, yf, phase, ch);
                        const long gx = static_cast<long>(x) - gx0, gy = static_cast<long>(y) - gy0;
                        if (gx >= 0 && gy >= 0 && gx < static_cast<long>(kGlyph) && gy < static_cast<long>(kGlyph))
                            v += spec.glyph_amplitude * look.glyph_color[ch] *
                                 look.glyph[static_cast<std::size_t>(gy) * kGlyph + static_cast<std::size_t>(gx)];
                        img[(ch * S + y) * S + x] = gain * v + spec.noise * rng.normal();
                    }
                }
            }
            ds.labels.push_back(static_cast<Label>(cls));
            ds.splits.push_back(j < spec.train_per_class ? Split::Train : Split::Test);
        }
    }
    return ds;
}

}  // namespace sfl
