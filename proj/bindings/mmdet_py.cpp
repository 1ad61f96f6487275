#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "mmdet/detection.hpp"
#include "mmdet/gmm.hpp"
#include "mmdet/transformer.hpp"

namespace py = pybind11;
using namespace mmdet;

namespace {

Tensor tensor_from(const py::array_t<double, py::array::c_style | py::array::forcecast>& a) {
    if (a.ndim() != 2) throw std::invalid_argument("expected a 2-D array");
    Tensor t({static_cast<int>(a.shape(0)), static_cast<int>(a.shape(1))});
    std::copy(a.data(), a.data() + a.size(), t.data.begin());
    return t;
}

py::array_t<double> array_from(const Tensor& t) {
    if (t.shape.size() != 2) throw std::runtime_error("only 2-D tensors cross the boundary");
    py::array_t<double> a({t.shape[0], t.shape[1]});
    std::copy(t.data.begin(), t.data.end(), a.mutable_data());
    return a;
}

// (h, w, 2) float64 array <-> FlowField
FlowField field_from(const py::array_t<double, py::array::c_style | py::array::forcecast>& a) {
    if (a.ndim() != 3 || a.shape(2) != 2) throw std::invalid_argument("expected an (h, w, 2) array");
    FlowField f(static_cast<int>(a.shape(1)), static_cast<int>(a.shape(0)));
    std::copy(a.data(), a.data() + a.size(), f.uv.begin());
    return f;
}

py::array_t<double> array_from(const FlowField& f) {
    py::array_t<double> a({f.height, f.width, 2});
    std::copy(f.uv.begin(), f.uv.end(), a.mutable_data());
    return a;
}

std::vector<Box> boxes_from(const std::vector<std::array<double, 4>>& raw) {
    std::vector<Box> out;
    for (const auto& b : raw) out.push_back(Box{b[0], b[1], b[2], b[3]});
    return out;
}

}  // namespace

PYBIND11_MODULE(mmdet_core_py, m) {
    m.doc() = "Motion-corrected multi-modal action detection core";

    py::class_<ActionSegment>(m, "ActionSegment")
        .def(py::init([](std::string video, int cls, int start, int end, double score) {
                 return ActionSegment{std::move(video), cls, start, end, score};
             }),
             py::arg("video"), py::arg("cls"), py::arg("start"), py::arg("end"), py::arg("score") = 0.0)
        .def_readwrite("video", &ActionSegment::video)
        .def_readwrite("cls", &ActionSegment::cls)
        .def_readwrite("start", &ActionSegment::start)
        .def_readwrite("end", &ActionSegment::end)
        .def_readwrite("score", &ActionSegment::score)
        .def("__eq__", [](const ActionSegment& a, const ActionSegment& b) { return a == b; })
        .def("__repr__", [](const ActionSegment& s) {
            return "ActionSegment(video='" + s.video + "', cls=" + std::to_string(s.cls) +
                   ", start=" + std::to_string(s.start) + ", end=" + std::to_string(s.end) +
                   ", score=" + std::to_string(s.score) + ")";
        });

    py::class_<GmmModel>(m, "GmmModel")
        .def_property_readonly("means",
                               [](const GmmModel& g) {
                                   py::array_t<double> a({g.components(), 2});
                                   for (int i = 0; i < g.components(); ++i) {
                                       a.mutable_at(i, 0) = g.means[i][0];
                                       a.mutable_at(i, 1) = g.means[i][1];
                                   }
                                   return a;
                               })
        .def_property_readonly("weights", [](const GmmModel& g) { return g.weights; })
        .def_property_readonly("covariances", [](const GmmModel& g) {
            py::array_t<double> a({g.components(), 2, 2});
            for (int i = 0; i < g.components(); ++i) {
                a.mutable_at(i, 0, 0) = g.covariances[i].xx;
                a.mutable_at(i, 0, 1) = g.covariances[i].xy;
                a.mutable_at(i, 1, 0) = g.covariances[i].xy;
                a.mutable_at(i, 1, 1) = g.covariances[i].yy;
            }
            return a;
        });

    m.def("read_flo", [](const std::filesystem::path& p) { return array_from(read_flo(p)); }, py::arg("path"));
    m.def(
        "write_flo",
        [](const py::array_t<double, py::array::c_style | py::array::forcecast>& a,
           const std::filesystem::path& p) { write_flo(field_from(a), p); },
        py::arg("field"), py::arg("path"));

    m.def(
        "segment_motion",
        [](const py::array_t<double, py::array::c_style | py::array::forcecast>& a,
           const std::vector<std::array<double, 4>>& boxes) {
            SegmentedMotion s = segment_motion(field_from(a), boxes_from(boxes));
            auto pack = [](const MotionVectorSet& vs) {
                py::array_t<double> out({static_cast<int>(vs.size()), 2});
                for (std::size_t i = 0; i < vs.size(); ++i) {
                    out.mutable_at(i, 0) = vs[i].u;
                    out.mutable_at(i, 1) = vs[i].v;
                }
                return out;
            };
            return py::make_tuple(pack(s.foreground), pack(s.background));
        },
        py::arg("field"), py::arg("boxes"), "Returns (foreground, background) motion vectors as (n, 2) arrays");

    m.def(
        "fit_gmm",
        [](const py::array_t<double, py::array::c_style | py::array::forcecast>& vectors, int components,
           std::uint64_t seed, int max_iterations) {
            if (vectors.ndim() != 2 || vectors.shape(1) != 2)
                throw std::invalid_argument("expected an (n, 2) array of motion vectors");
            MotionVectorSet set;
            for (py::ssize_t i = 0; i < vectors.shape(0); ++i)
                set.push_back(MotionVector{vectors.at(i, 0), vectors.at(i, 1), static_cast<int>(i), 0});
            ConvergenceThresholds th;
            th.max_iterations = max_iterations;
            GmmFit fit = fit_gmm(set, components, th, seed);
            py::dict trace;
            trace["log_likelihood"] = fit.trace.log_likelihood;
            trace["iterations"] = fit.trace.iterations;
            trace["convergence_reason"] = fit.trace.convergence_reason;
            return py::make_tuple(fit.model, trace);
        },
        py::arg("vectors"), py::arg("components"), py::arg("seed") = 1, py::arg("max_iterations") = 200);

    m.def(
        "restore_motion",
        [](const GmmModel& model, const py::array_t<double, py::array::c_style | py::array::forcecast>& field,
           bool soft_assign) { return array_from(restore_motion(model, field_from(field), soft_assign)); },
        py::arg("model"), py::arg("field"), py::arg("soft_assign") = false);

    m.def(
        "correct_sequence",
        [](const std::vector<py::array_t<double, py::array::c_style | py::array::forcecast>>& fields,
           const std::vector<std::vector<std::array<double, 4>>>& boxes, int components, std::uint64_t seed,
           bool soft_assign) {
            std::vector<FlowField> ff;
            for (const auto& a : fields) ff.push_back(field_from(a));
            PersonBoxes pb;
            for (const auto& frame : boxes) pb.push_back(boxes_from(frame));
            CorrectedSequence cs = correct_sequence(ff, pb, components, ConvergenceThresholds{}, seed, soft_assign);
            std::vector<py::array_t<double>> out;
            for (const FlowField& f : cs.fields) out.push_back(array_from(f));
            return out;
        },
        py::arg("fields"), py::arg("boxes"), py::arg("components") = 2, py::arg("seed") = 1,
        py::arg("soft_assign") = false);

    m.def(
        "attention",
        [](const py::array_t<double, py::array::c_style | py::array::forcecast>& q,
           const py::array_t<double, py::array::c_style | py::array::forcecast>& k,
           const py::array_t<double, py::array::c_style | py::array::forcecast>& v, int zm) {
            Graph g;
            return array_from(g.value(attention(g, g.input(tensor_from(q)), g.input(tensor_from(k)),
                                                g.input(tensor_from(v)), zm)));
        },
        py::arg("q"), py::arg("k"), py::arg("v"), py::arg("zm"));

    py::class_<ModelParams>(m, "Model")
        .def_property_readonly("T", [](const ModelParams& p) { return p.config.T; })
        .def_property_readonly("Z", [](const ModelParams& p) { return p.config.Z; })
        .def_property_readonly("C", [](const ModelParams& p) { return p.config.C; })
        .def("forward",
             [](const ModelParams& p, const py::array_t<double, py::array::c_style | py::array::forcecast>& xs,
                const py::array_t<double, py::array::c_style | py::array::forcecast>& xm) {
                 return array_from(forward(p, tensor_from(xs), tensor_from(xm)));
             })
        .def("save", [](const ModelParams& p, const std::filesystem::path& path) { save_checkpoint(p, path); });

    m.def("load_checkpoint", &load_checkpoint, py::arg("path"));
    m.def(
        "init_desk_model",
        [](std::uint64_t seed) { return init_params(desk_profile(), AttentionSelection{}, seed); },
        py::arg("seed") = 1, "Freshly initialized desk-profile model with all four attention types");

    m.def(
        "regress_segments",
        [](const py::array_t<double, py::array::c_style | py::array::forcecast>& scores, double theta, int segment_len,
           const std::string& video) { return regress_segments(tensor_from(scores), theta, segment_len, video); },
        py::arg("scores"), py::arg("theta") = 0.5, py::arg("segment_len") = 16, py::arg("video") = "");

    m.def("tiou", &tiou, py::arg("a"), py::arg("b"));

    m.def(
        "evaluate_map",
        [](const std::vector<ActionSegment>& preds, const std::vector<ActionSegment>& gt,
           const std::vector<double>& thresholds) {
            EvalReport r = evaluate_map(preds, gt, thresholds);
            py::list per;
            for (const auto& tr : r.per_threshold) {
                py::dict d;
                d["tiou"] = tr.threshold;
                d["ap_per_class"] = tr.ap_per_class;
                d["skipped_classes"] = tr.skipped_classes;
                d["map"] = tr.map;
                per.append(std::move(d));
            }
            py::dict out;
            out["per_threshold"] = std::move(per);
            out["average_map"] = r.average_map;
            return out;
        },
        py::arg("predictions"), py::arg("ground_truth"), py::arg("tiou_thresholds"));
}
