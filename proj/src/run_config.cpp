#include "sfl/run_config.hpp"

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include <charconv>
#include <set>
#include <sstream>

namespace sfl {

namespace pt = boost::property_tree;

namespace {

std::string trim(std::string s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return {};
    const auto e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

class Section {
public:
    Section(std::string name, const pt::ptree* tree) : name_(std::move(name)), tree_(tree) {}

    template <class T>
    std::optional<T> get(const std::string& key) {
        seen_.insert(key);
        if (!tree_) return std::nullopt;
        auto it = tree_->find(key);
        if (it == tree_->not_found()) return std::nullopt;
        return convert<T>(key, trim(it->second.data()));
    }

    template <class T>
    void read(const std::string& key, T& into) {
        if (auto v = get<T>(key)) into = *v;
    }

    // Every key must have been asked for; anything else is a typo.
    void finish() const {
        if (!tree_) return;
        for (const auto& [key, child] : *tree_)
            if (!seen_.count(key)) throw ConfigError("[" + name_ + "]: unknown key '" + key + "'");
    }

private:
    template <class T>
    T convert(const std::string& key, const std::string& text) const {
        const std::string where = "[" + name_ + "] " + key + " = '" + text + "'";
        if constexpr (std::is_same_v<T, std::string>) {
            return text;
        } else if constexpr (std::is_same_v<T, double>) {
            try {
                std::size_t used = 0;
                const double v = std::stod(text, &used);
                if (used != text.size()) throw std::invalid_argument("trailing");
                return v;
            } catch (const std::exception&) {
                throw ConfigError(where + ": expected a number");
            }
        } else {
            static_assert(std::is_unsigned_v<T>);
            T v{};
            const auto* end = text.data() + text.size();
            auto [p, ec] = std::from_chars(text.data(), end, v);
            if (text.empty() || ec != std::errc{} || p != end)
                throw ConfigError(where + ": expected a nonnegative integer");
            return v;
        }
    }

    std::string name_;
    const pt::ptree* tree_;
    std::set<std::string> seen_;
};

const pt::ptree* child(const pt::ptree& root, const std::string& name) {
    for (const auto& [key, value] : root)
        if (key == name) return &value;
    return nullptr;
}

std::vector<std::uint64_t> parse_seeds(const std::string& text) {
    std::vector<std::uint64_t> out;
    std::stringstream ss(text);
    std::string tok;
    while (std::getline(ss, tok, ',')) {
        tok = trim(tok);
        std::uint64_t v = 0;
        auto [p, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), v);
        if (tok.empty() || ec != std::errc{} || p != tok.data() + tok.size())
            throw ConfigError("[run] seeds: '" + tok + "' is not a nonnegative integer");
        out.push_back(v);
    }
    return out;
}

Split parse_split(const std::string& s) {
    if (s == "train") return Split::Train;
    if (s == "test") return Split::Test;
    throw ConfigError("[eval] split must be train or test, got '" + s + "'");
}

}  // namespace

RunConfig parse_run_config(const std::string& text, const std::filesystem::path& base_dir) {
    pt::ptree root;
    try {
        std::istringstream in(text);
        pt::read_ini(in, root);
    } catch (const pt::ini_parser_error& e) {
        throw ConfigError(std::string("config: ") + e.what());
    }

    RunConfig cfg;
    const std::set<std::string> known{"run", "train", "subset", "selector", "svm", "output", "eval"};
    for (const auto& [key, value] : root) {
        if (key.rfind("dataset.", 0) == 0) continue;
        if (!known.count(key)) {
            if (value.empty()) throw ConfigError("config: key '" + key + "' outside any section");
            throw ConfigError("config: unknown section [" + key + "]");
        }
    }

    {
        Section s("run", child(root, "run"));
        s.read("graph", cfg.graph);
        s.read("target", cfg.target);
        s.read("k", cfg.k);
        if (auto v = s.get<std::string>("seeds")) cfg.seeds = parse_seeds(*v);
        if (auto v = s.get<std::string>("selector")) cfg.selector = parse_selector_kind(*v);
        s.read("threads", cfg.threads);
        s.read("penultimate", cfg.penultimate);
        if (auto v = s.get<std::size_t>("lda_dim")) cfg.lda_dim = *v;
        s.finish();
    }
    {
        Section s("train", child(root, "train"));
        s.read("learning_rate", cfg.train.learning_rate);
        s.read("momentum", cfg.train.momentum);
        s.read("weight_decay", cfg.train.weight_decay);
        s.read("batch_size", cfg.train.batch_size);
        s.read("epochs", cfg.train.epochs);
        StepSchedule sched = cfg.train.lr_schedule.value_or(StepSchedule{});
        s.read("schedule_factor", sched.factor);
        s.read("schedule_every", sched.every_n_epochs);
        if (sched.every_n_epochs == 0)
            cfg.train.lr_schedule.reset();
        else
            cfg.train.lr_schedule = sched;
        if (auto v = s.get<std::size_t>("freeze_below")) cfg.train.freeze_below = *v;
        s.finish();
    }
    {
        Section s("subset", child(root, "subset"));
        if (auto v = s.get<std::size_t>("epochs")) cfg.subset_epochs = *v;
        s.finish();
    }
    {
        Section s("selector", child(root, "selector"));
        if (auto v = s.get<std::size_t>("epochs")) cfg.selector_epochs = *v;
        s.finish();
    }
    {
        Section s("svm", child(root, "svm"));
        s.read("lambda", cfg.svm.lambda);
        s.read("epochs", cfg.svm.epochs);
        s.finish();
    }
    {
        Section s("output", child(root, "output"));
        if (auto v = s.get<std::string>("dir")) cfg.out_dir = *v;
        s.finish();
    }
    {
        Section s("eval", child(root, "eval"));
        if (auto v = s.get<std::string>("bundle")) cfg.eval_bundle = std::filesystem::path(*v);
        if (auto v = s.get<std::string>("dataset")) cfg.eval_dataset = *v;
        if (auto v = s.get<std::string>("split")) cfg.eval_split = parse_split(*v);
        s.finish();
    }

    for (const auto& [key, value] : root) {
        if (key.rfind("dataset.", 0) != 0) continue;
        const std::string id = key.substr(8);
        Section s(key, &value);
        DatasetSource src;
        if (auto p = s.get<std::string>("path")) {
            std::filesystem::path path(*p);
            src.path = path.is_absolute() ? path : base_dir / path;
        }
        SyntheticSpec spec;
        bool any = false;
        auto rd = [&](const char* name, auto& field) {
            using T = std::remove_reference_t<decltype(field)>;
            if (auto v = s.get<T>(name)) {
                field = *v;
                any = true;
            }
        };
        rd("n_groups", spec.n_groups);
        rd("classes_per_group", spec.classes_per_group);
        rd("train_per_class", spec.train_per_class);
        rd("test_per_class", spec.test_per_class);
        rd("image_size", spec.image_size);
        rd("channels", spec.channels);
        rd("intra_group_similarity", spec.intra_group_similarity);
        rd("group_offset", spec.group_offset);
        rd("noise", spec.noise);
        rd("max_shift", spec.max_shift);
        rd("glyph_amplitude", spec.glyph_amplitude);
        if (auto v = s.get<std::uint64_t>("seed")) {
            spec.seed = *v;
            src.explicit_seed = true;
            any = true;
        }
        if (auto v = s.get<std::uint64_t>("prototype_seed")) {
            spec.prototype_seed = *v;
            any = true;
        }
        s.finish();
        if (src.path && any) throw ConfigError("[" + key + "]: give either path or generator keys, not both");
        if (!src.path) src.synthetic = spec;
        cfg.datasets[id] = std::move(src);
    }
    return cfg;
}

RunConfig load_run_config(const std::filesystem::path& path) {
    std::error_code ec;
    if (!std::filesystem::is_regular_file(path, ec)) throw ConfigError("config file '" + path.string() + "' not found");
    const auto bytes = read_file(path);
    return parse_run_config(std::string(bytes.begin(), bytes.end()), path.parent_path());
}

void RunConfig::validate() const {
    if (seeds.empty()) throw ConfigError("[run] seeds: at least one seed is required");
    if (k == 0) throw ConfigError("[run] k must be at least 1");
    if (threads == 0) throw ConfigError("[run] threads must be at least 1");
    if (penultimate == 0) throw ConfigError("[run] penultimate must be positive");
    if (svm.epochs == 0 || !(svm.lambda > 0.0)) throw ConfigError("[svm] needs positive lambda and epochs");
    if (subset_epochs && *subset_epochs == 0) throw ConfigError("[subset] epochs must be positive");
    if (selector_epochs && *selector_epochs == 0) throw ConfigError("[selector] epochs must be positive");
    train.validate();
    for (const auto& [id, src] : datasets) {
        if (id.empty() || id.find('-') != std::string::npos)
            throw ConfigError("dataset id '" + id + "' must be nonempty and contain no '-'");
        if (src.path) {
            std::error_code ec;
            if (!std::filesystem::is_regular_file(*src.path, ec))
                throw ConfigError("dataset." + id + ": file '" + src.path->string() + "' not found");
        } else {
            src.synthetic->validate();
        }
    }
    if (!graph.empty()) {
        const StageGraph g = StageGraph::parse(graph);
        for (const auto& st : g.stages)
            if (!datasets.count(st.dataset))
                throw ConfigError("[run] graph uses undeclared dataset '" + st.dataset + "'");
    }
    if (!target.empty() && !datasets.count(target))
        throw ConfigError("[run] target '" + target + "' is not a declared dataset");
    if (eval_bundle) {
        std::error_code ec;
        if (!std::filesystem::is_regular_file(*eval_bundle, ec))
            throw ConfigError("[eval] bundle '" + eval_bundle->string() + "' not found");
    }
}

Dataset RunConfig::materialize(const std::string& id) const {
    auto it = datasets.find(id);
    if (it == datasets.end()) throw ConfigError("dataset '" + id + "' is not declared");
    const DatasetSource& src = it->second;
    if (src.path) return load_dataset(*src.path);
    SyntheticSpec spec = *src.synthetic;
    if (!src.explicit_seed) spec.seed = derive_seed(derive_seed(seeds.at(0), "dataset"), id);
    return generate_synthetic(spec);
}

DatasetMap RunConfig::materialize_all() const {
    DatasetMap out;
    for (const auto& [id, src] : datasets) out.emplace(id, materialize(id));
    return out;
}

SystemConfig RunConfig::system_config(std::uint64_t seed) const {
    SystemConfig sc;
    sc.graph = StageGraph::parse(graph);
    sc.target = target.empty() ? sc.graph.stages.back().dataset : target;
    sc.k = k;
    sc.train = train;
    sc.subset_epochs = subset_epochs;
    sc.selector_epochs = selector_epochs;
    sc.selector = selector;
    sc.svm = svm;
    sc.svm.threads = threads;
    sc.lda_dim = lda_dim;
    sc.penultimate = penultimate;
    sc.seed = seed;
    sc.threads = threads;
    return sc;
}

}  // namespace sfl
