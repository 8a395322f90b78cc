#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <sstream>

#include "sfl/cli.hpp"
#include "sfl/pipeline.hpp"

namespace py = pybind11;
using namespace sfl;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

Tensor to_tensor(const Array& a) {
    Shape shape(a.shape(), a.shape() + a.ndim());
    return Tensor(std::move(shape), std::vector<double>(a.data(), a.data() + a.size()));
}

Array to_array(const Tensor& t) {
    Array out(std::vector<py::ssize_t>(t.shape().begin(), t.shape().end()));
    std::copy(t.data().begin(), t.data().end(), out.mutable_data());
    return out;
}

py::dict dataset_dict(const Dataset& d) {
    py::dict out;
    out["images"] = to_array(d.images);
    out["labels"] = py::array_t<Label>(static_cast<py::ssize_t>(d.labels.size()), d.labels.data());
    std::vector<std::uint8_t> splits;
    for (Split s : d.splits) splits.push_back(static_cast<std::uint8_t>(s));
    out["splits"] = py::array_t<std::uint8_t>(static_cast<py::ssize_t>(splits.size()), splits.data());
    out["class_names"] = d.class_names;
    return out;
}

Split parse_split(const std::string& s) {
    if (s == "train") return Split::Train;
    if (s == "test") return Split::Test;
    throw ConfigError("split must be 'train' or 'test', got '" + s + "'");
}

py::dict metrics_dict(const Metrics& m) {
    py::dict out;
    out["mean_accuracy"] = m.mean_accuracy;
    out["overall_accuracy"] = m.overall_accuracy;
    out["confusion"] = m.confusion;
    return out;
}

}  // namespace

PYBIND11_MODULE(_sfl, m) {
    m.doc() = "Subset-feature fine-grained classification: numerics, datasets, bundles";

    auto base = py::register_exception<Error>(m, "Error");
    py::register_exception<ConfigError>(m, "ConfigError", base.ptr());
    py::register_exception<MismatchError>(m, "MismatchError", base.ptr());
    auto artifact = py::register_exception<ArtifactError>(m, "ArtifactError", base.ptr());
    py::register_exception<ChecksumError>(m, "ChecksumError", artifact.ptr());
    py::register_exception<VersionError>(m, "VersionError", artifact.ptr());
    py::register_exception<BadMagicError>(m, "BadMagicError", artifact.ptr());
    py::register_exception<InvariantError>(m, "InvariantError", artifact.ptr());

    py::class_<SyntheticSpec>(m, "SyntheticSpec")
        .def(py::init<>())
        .def_readwrite("n_groups", &SyntheticSpec::n_groups)
        .def_readwrite("classes_per_group", &SyntheticSpec::classes_per_group)
        .def_readwrite("train_per_class", &SyntheticSpec::train_per_class)
        .def_readwrite("test_per_class", &SyntheticSpec::test_per_class)
        .def_readwrite("image_size", &SyntheticSpec::image_size)
        .def_readwrite("channels", &SyntheticSpec::channels)
        .def_readwrite("intra_group_similarity", &SyntheticSpec::intra_group_similarity)
        .def_readwrite("seed", &SyntheticSpec::seed)
        .def_readwrite("prototype_seed", &SyntheticSpec::prototype_seed)
        .def_readwrite("group_offset", &SyntheticSpec::group_offset)
        .def_readwrite("noise", &SyntheticSpec::noise)
        .def_readwrite("max_shift", &SyntheticSpec::max_shift)
        .def_readwrite("glyph_amplitude", &SyntheticSpec::glyph_amplitude);

    m.def("generate_synthetic", [](const SyntheticSpec& s) { return dataset_dict(generate_synthetic(s)); },
          py::arg("spec"), "Generates a dataset; returns images [N,C,H,W], labels, splits (0 train, 1 test).");
    m.def("load_dataset", [](const std::filesystem::path& p) { return dataset_dict(load_dataset(p)); });

    m.def("stage_graph_name", [](const std::string& s) { return StageGraph::parse(s).name(); });
    m.def("stage_graph_steps", [](const std::string& s) { return StageGraph::parse(s).steps(); });

    py::class_<ModelBundle>(m, "Bundle")
        .def_readonly("provenance", &ModelBundle::provenance)
        .def_readonly("steps", &ModelBundle::steps)
        .def_readonly("seed", &ModelBundle::seed)
        .def_property_readonly("k", [](const ModelBundle& b) { return b.cluster_map.k; })
        .def_property_readonly("class_count", &ModelBundle::class_count)
        .def_property_readonly("fused_dim", &ModelBundle::fused_dim)
        .def_property_readonly("class_to_subset", [](const ModelBundle& b) { return b.cluster_map.class_to_subset; })
        .def_property_readonly("selector", [](const ModelBundle& b) { return selector_kind(b.ensemble.selector); })
        .def("evaluate",
             [](const ModelBundle& b, const std::filesystem::path& dataset, const std::string& split) {
                 return metrics_dict(evaluate(b, load_dataset(dataset), parse_split(split)));
             },
             py::arg("dataset_path"), py::arg("split") = "test")
        .def("fused_features", [](const ModelBundle& b, const Array& images) {
            return to_array(fused_features(b, to_tensor(images)));
        });
    m.def("load_bundle", [](const std::filesystem::path& p) { return load_bundle(p); });

    m.def("kmeans",
          [](const Array& points, std::size_t k, std::size_t restarts, std::size_t max_iter, std::uint64_t seed) {
              Rng rng(seed);
              const KMeansRun run = kmeans_fit_traced(to_tensor(points), k, restarts, max_iter, rng);
              py::dict out;
              out["centroids"] = to_array(run.model.centroids);
              out["inertia"] = run.model.inertia;
              out["labels"] = run.labels;
              out["traces"] = run.restart_traces;
              return out;
          },
          py::arg("points"), py::arg("k"), py::arg("restarts") = 10, py::arg("max_iter") = 100, py::arg("seed") = 0);
    m.def("lda_projection",
          [](const Array& x, const std::vector<Label>& labels, std::size_t out_dim) {
              return to_array(lda_fit(to_tensor(x), labels, out_dim).projection);
          },
          py::arg("features"), py::arg("labels"), py::arg("out_dim"));
    m.def("silhouette", [](const Array& x, const std::vector<std::size_t>& assignment) {
        return silhouette(to_tensor(x), assignment);
    });
    m.def("fuse",
          [](const Array& g, const std::vector<Array>& phi, std::size_t chosen) {
              std::vector<Tensor> blocks;
              for (const auto& p : phi) blocks.push_back(to_tensor(p));
              return to_array(fuse(to_tensor(g), blocks, SelectorDecision::one_hot(phi.size(), chosen)).vector);
          },
          py::arg("gcnn_feature"), py::arg("subset_features"), py::arg("chosen"));

    m.def("run_cli",
          [](const std::vector<std::string>& args) {
              std::ostringstream out, err;
              int code;
              {
                  py::gil_scoped_release release;
                  code = run_cli(args, out, err);
              }
              return py::make_tuple(code, out.str(), err.str());
          },
          "Runs the command-line interface in-process; returns (exit_code, stdout, stderr).");
}
