// Python bindings: corpus generation, dataset access, checkpoint inference
// and the built-in checks. Arrays cross the boundary as float64 numpy copies.

#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "myograph/evaluation.hpp"
#include "myograph/selftest.hpp"
#include "myograph/synthgen.hpp"
#include "myograph/training.hpp"

namespace py = pybind11;
using namespace myograph;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

Array to_array(const std::vector<double>& v, std::vector<py::ssize_t> shape) {
    Array a(shape);
    std::copy(v.begin(), v.end(), a.mutable_data());
    return a;
}

py::list check_list(const std::vector<selftest::CheckResult>& rs) {
    py::list out;
    for (const auto& r : rs) {
        py::dict d;
        d["group"] = r.group;
        d["name"] = r.name;
        d["passed"] = r.passed;
        d["value"] = r.value;
        d["threshold"] = r.threshold;
        d["detail"] = r.detail;
        out.append(d);
    }
    return out;
}

Split split_from(const std::string& name) {
    if (name == "train") return Split::train;
    if (name == "val") return Split::val;
    if (name == "test") return Split::test;
    throw py::value_error("split must be train, val or test");
}

const NormStats& stats_of(const Dataset& d) {
    if (!d.norm_stats) throw py::value_error("dataset has no normalization statistics");
    return *d.norm_stats;
}

}  // namespace

PYBIND11_MODULE(_myograph, m) {
    m.doc() = "Pose keypoints to muscle activation";

    py::list exercises, muscles;
    for (Exercise e : all_exercises()) exercises.append(std::string(exercise_name(e)));
    for (Muscle mu : all_muscles()) muscles.append(std::string(muscle_name(mu)));
    m.attr("EXERCISES") = py::tuple(exercises);
    m.attr("MUSCLES") = py::tuple(muscles);

    py::class_<Dataset>(m, "Dataset")
        .def("__len__", [](const Dataset& d) { return d.clips.size(); })
        .def_property_readonly("clip_ids",
                               [](const Dataset& d) {
                                   std::vector<std::string> ids;
                                   for (const auto& c : d.clips) ids.push_back(c.clip_id);
                                   return ids;
                               })
        .def(
            "clip",
            [](const Dataset& d, std::size_t i) {
                if (i >= d.clips.size()) throw py::index_error("clip index out of range");
                const Clip& c = d.clips[i];
                const auto t = static_cast<py::ssize_t>(c.frames());
                py::dict out;
                out["clip_id"] = c.clip_id;
                out["subject_id"] = c.subject_id;
                out["exercise"] = std::string(exercise_name(c.exercise));
                auto it = d.splits.find(c.clip_id);
                out["split"] = it == d.splits.end() ? py::object(py::none()) : py::str(std::string(split_name(it->second)));
                out["keypoints"] = to_array(c.keypoints.coords, {t, static_cast<py::ssize_t>(kJoints), 2});
                out["emg_raw"] = to_array(c.emg_raw, {t, static_cast<py::ssize_t>(kMuscles)});
                return out;
            },
            py::arg("index"))
        .def(
            "windows",
            [](const Dataset& d, const std::string& split, std::size_t length, std::size_t stride) {
                if (!valid_window_length(length)) throw py::value_error("invalid window length");
                auto ws = eval::clip_windows(d, d.indices(split_from(split)), stats_of(d), length, stride);
                auto batch = train::make_batch(ws);
                const auto n = static_cast<py::ssize_t>(ws.size()), t = static_cast<py::ssize_t>(length);
                std::vector<std::string> ex;
                for (const auto& w : ws) ex.emplace_back(exercise_name(w.exercise));
                return py::make_tuple(to_array(batch.inputs, {n, t, static_cast<py::ssize_t>(kFrameDim)}),
                                      to_array(batch.targets, {n, t, static_cast<py::ssize_t>(kMuscles)}), ex);
            },
            py::arg("split") = "test", py::arg("length") = kDefaultWindow, py::arg("stride") = 0,
            "(inputs [N,T,50], normalized emg [N,T,8], exercise names) for one split")
        .def("to_jsonl", &dataset_to_jsonl)
        .def("save", [](const Dataset& d, const std::filesystem::path& p) { save_dataset(d, p); });

    m.def(
        "generate_corpus",
        [](std::size_t subjects, std::size_t clips, double duration, std::uint64_t seed) {
            if (!(duration >= synth::kMinDuration)) throw py::value_error("duration must be at least 3 seconds");
            auto d = synth::generate_corpus(synth::default_corpus_spec(subjects, clips, duration, seed));
            if (!d.norm_stats) {
                std::vector<const Clip*> tr;
                for (auto i : d.indices(Split::train)) tr.push_back(&d.clips[i]);
                d.norm_stats = fit_normalizer(tr);
            }
            return d;
        },
        py::arg("subjects") = 2, py::arg("clips_per_exercise") = 3, py::arg("duration") = 30.0, py::arg("seed") = 0);

    m.def(
        "load_dataset",
        [](const std::filesystem::path& p) {
            auto d = load_dataset(p);
            if (d.splits.empty()) assign_default_splits(d);
            if (!d.norm_stats) {
                std::vector<const Clip*> tr;
                for (auto i : d.indices(Split::train)) tr.push_back(&d.clips[i]);
                d.norm_stats = fit_normalizer(tr);
            }
            return d;
        },
        py::arg("path"));

    py::class_<Model>(m, "Model")
        .def_static("load", [](const std::filesystem::path& p) { return train::load_checkpoint(p).model; })
        .def_static(
            "create",
            [](const std::string& kind, std::uint64_t seed) {
                return train::create_model("desk", train::model_kind_from_name(kind), seed);
            },
            py::arg("kind") = "transformer", py::arg("seed") = 0)
        .def_property_readonly("is_transformer", &Model::is_transformer)
        .def_property_readonly("parameter_count", [](const Model& mo) { return mo.weights().parameter_count(); })
        .def(
            "predict",
            [](const Model& mo, Array x) {
                if (x.ndim() != 3 || x.shape(2) != static_cast<py::ssize_t>(kFrameDim))
                    throw py::value_error("inputs must have shape [B, T, 50]");
                WindowBatch b;
                b.batch = static_cast<std::size_t>(x.shape(0));
                b.steps = static_cast<std::size_t>(x.shape(1));
                b.inputs.assign(x.data(), x.data() + x.size());
                auto y = mo.predict(b);
                return to_array(y, {x.shape(0), x.shape(1), static_cast<py::ssize_t>(kMuscles)});
            },
            py::arg("inputs"), "normalized emg predictions [B, T, 8]");

    m.def(
        "rmse",
        [](Array a, Array b) {
            if (a.size() != b.size()) throw py::value_error("arrays differ in size");
            return eval::rmse({a.data(), static_cast<std::size_t>(a.size())}, {b.data(), static_cast<std::size_t>(b.size())});
        },
        py::arg("pred"), py::arg("target"));

    m.def("gradient_checks", [](std::uint64_t seed) { return check_list(selftest::gradient_checks(seed)); },
          py::arg("seed") = 0);
    m.def("oracle_contracts", [] { return check_list(selftest::oracle_contracts()); });
}
