#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "goatlab/align.hpp"
#include "goatlab/costmodel.hpp"
#include "goatlab/moe.hpp"
#include "goatlab/numdiff.hpp"
#include "goatlab/trainer.hpp"

namespace py = pybind11;

namespace {

using goatlab::Matrix;

using DoubleArray = py::array_t<double, py::array::c_style | py::array::forcecast>;

Matrix to_matrix(const DoubleArray& array) {
  const py::buffer_info info = array.request();
  if (info.ndim != 2) throw py::value_error("expected a 2-D float array");
  const auto rows = static_cast<std::size_t>(info.shape[0]);
  const auto cols = static_cast<std::size_t>(info.shape[1]);
  const double* src = static_cast<const double*>(info.ptr);
  return Matrix(rows, cols, std::vector<double>(src, src + rows * cols));
}

py::array_t<double> to_array(const Matrix& m) {
  py::array_t<double> out({m.rows(), m.cols()});
  std::copy(m.data().begin(), m.data().end(), out.mutable_data());
  return out;
}

std::vector<double> to_vector(const DoubleArray& array) {
  const py::buffer_info info = array.request();
  if (info.ndim != 1) throw py::value_error("expected a 1-D float array");
  const double* src = static_cast<const double*>(info.ptr);
  return std::vector<double>(src, src + info.shape[0]);
}

}  // namespace

PYBIND11_MODULE(_goatlab, m) {
  m.doc() = "SVD-segmented adapter mixtures: core numerics and verification helpers";

  py::class_<goatlab::Rng>(m, "Rng")
      .def(py::init<std::uint64_t>(), py::arg("seed"))
      .def("uniform", py::overload_cast<>(&goatlab::Rng::uniform))
      .def("normal", py::overload_cast<>(&goatlab::Rng::normal))
      .def("split", &goatlab::Rng::split, py::arg("key"))
      .def_property_readonly("seed", &goatlab::Rng::seed);

  py::enum_<goatlab::Strategy>(m, "Strategy")
      .value("OURS", goatlab::Strategy::Ours)
      .value("PRINCIPAL", goatlab::Strategy::Principal)
      .value("MINOR", goatlab::Strategy::Minor)
      .value("RANDOM", goatlab::Strategy::Random);

  py::enum_<goatlab::LayerVariant>(m, "LayerVariant")
      .value("GOAT", goatlab::LayerVariant::Goat)
      .value("GOAT_S", goatlab::LayerVariant::GoatS)
      .value("ZERO_MOE", goatlab::LayerVariant::ZeroMoe);

  py::class_<goatlab::SegmentSpec>(m, "SegmentSpec")
      .def_readonly("start", &goatlab::SegmentSpec::start)
      .def_readonly("width", &goatlab::SegmentSpec::width)
      .def_readonly("expert_index", &goatlab::SegmentSpec::expert_index);

  py::class_<goatlab::ExpertPair>(m, "ExpertPair")
      .def_property_readonly("b", [](const goatlab::ExpertPair& e) { return to_array(e.b); })
      .def_property_readonly("a", [](const goatlab::ExpertPair& e) { return to_array(e.a); })
      .def_readonly("rank", &goatlab::ExpertPair::rank);

  py::class_<goatlab::RouteResult>(m, "RouteResult")
      .def_readonly("indices", &goatlab::RouteResult::indices)
      .def_readonly("weights", &goatlab::RouteResult::weights);

  py::class_<goatlab::GoatLayer>(m, "GoatLayer")
      .def_property_readonly("w_base",
                             [](const goatlab::GoatLayer& l) { return to_array(l.w_base); })
      .def_property_readonly("router",
                             [](const goatlab::GoatLayer& l) { return to_array(l.router.wz); })
      .def_readonly("scales", &goatlab::GoatLayer::scales)
      .def_readonly("rho", &goatlab::GoatLayer::rho)
      .def_property_readonly("experts",
                             [](const goatlab::GoatLayer& l) { return l.experts; })
      .def_property_readonly("top_k",
                             [](const goatlab::GoatLayer& l) { return l.router.k; });

  m.def("matmul", [](const DoubleArray& a, const DoubleArray& b) {
    return to_array(goatlab::matmul(to_matrix(a), to_matrix(b)));
  });

  m.def("svd", [](const DoubleArray& w) {
    const goatlab::SvdFactors f = goatlab::svd(to_matrix(w));
    return py::make_tuple(to_array(f.u), f.sigma, to_array(f.v));
  });

  m.def(
      "kaiming_uniform",
      [](goatlab::Rng& rng, std::size_t rows, std::size_t cols, std::size_t fan_in) {
        return to_array(goatlab::kaiming_uniform(rng, rows, cols, fan_in));
      },
      py::arg("rng"), py::arg("rows"), py::arg("cols"), py::arg("fan_in"));

  m.def(
      "finite_diff_grad",
      [](const py::function& f, const DoubleArray& x, double step) {
        return to_array(goatlab::finite_diff_grad(
            [&](const Matrix& probe) { return f(to_array(probe)).cast<double>(); }, to_matrix(x),
            step));
      },
      py::arg("f"), py::arg("x"), py::arg("step") = 1e-5);

  m.def(
      "make_segments",
      [](std::size_t m_, std::size_t n, std::size_t experts, std::size_t r,
         goatlab::Strategy strategy, std::uint64_t seed) {
        goatlab::Rng rng(seed);
        return goatlab::make_segments(m_, n, experts, r, strategy, rng);
      },
      py::arg("m"), py::arg("n"), py::arg("experts"), py::arg("r"), py::arg("strategy"),
      py::arg("seed") = 0);

  m.def("theoretical_scale", &goatlab::theoretical_scale, py::arg("n"), py::arg("eta"),
        py::arg("r"));

  m.def(
      "goat_s_scales",
      [](const std::vector<double>& sums, double s1) { return goatlab::goat_s_scales(sums, s1); },
      py::arg("segment_sigma_sums"), py::arg("s1"));

  m.def(
      "topk_softmax",
      [](const std::vector<double>& logits, std::size_t k) {
        return goatlab::topk_softmax(logits, k);
      },
      py::arg("logits"), py::arg("k"));

  m.def(
      "build_goat_layer",
      [](const DoubleArray& w0, std::size_t experts, std::size_t top_k, std::size_t total_rank,
         double eta, double rho, goatlab::Strategy strategy, goatlab::LayerVariant variant,
         double balance_coeff, std::uint64_t seed) {
        goatlab::GoatLayerConfig config;
        config.experts = experts;
        config.top_k = top_k;
        config.total_rank = total_rank;
        config.eta = eta;
        config.rho = rho;
        config.strategy = strategy;
        config.variant = variant;
        config.balance_coeff = balance_coeff;
        goatlab::Rng rng(seed);
        return goatlab::build_goat_layer(to_matrix(w0), config, rng);
      },
      py::arg("w0"), py::arg("experts") = 8, py::arg("top_k") = 2, py::arg("total_rank") = 8,
      py::arg("eta") = 1.0, py::arg("rho") = 10.0, py::arg("strategy") = goatlab::Strategy::Ours,
      py::arg("variant") = goatlab::LayerVariant::Goat, py::arg("balance_coeff") = 1e-3,
      py::arg("seed") = 0);

  m.def(
      "forward",
      [](const goatlab::GoatLayer& layer, const DoubleArray& x) {
        goatlab::ForwardResult result = goatlab::forward(layer, to_vector(x));
        return py::make_tuple(result.y, result.route);
      },
      py::arg("layer"), py::arg("x"));

  m.def(
      "backward",
      [](const goatlab::GoatLayer& layer, const DoubleArray& x, const goatlab::RouteResult& route,
         const DoubleArray& g_y) {
        const goatlab::LayerGrads grads =
            goatlab::backward(layer, to_vector(x), route, to_vector(g_y));
        py::list g_b, g_a;
        for (const Matrix& g : grads.g_b) g_b.append(to_array(g));
        for (const Matrix& g : grads.g_a) g_a.append(to_array(g));
        return py::make_tuple(g_b, g_a, to_array(grads.g_wz), grads.balance_loss);
      },
      py::arg("layer"), py::arg("x"), py::arg("route"), py::arg("g_y"));

  m.def(
      "equivalent_gradient",
      [](const DoubleArray& b, const DoubleArray& a, const DoubleArray& g, double s) {
        return to_array(goatlab::equivalent_gradient(to_matrix(b), to_matrix(a), to_matrix(g), s));
      },
      py::arg("b"), py::arg("a"), py::arg("g"), py::arg("s"));

  m.def(
      "sgd_step_lora",
      [](const DoubleArray& b, const DoubleArray& a, const DoubleArray& g, double s, double eta) {
        const goatlab::LoraPair next =
            goatlab::sgd_step_lora(to_matrix(b), to_matrix(a), to_matrix(g), s, eta);
        return py::make_tuple(to_array(next.b), to_array(next.a));
      },
      py::arg("b"), py::arg("a"), py::arg("g"), py::arg("s"), py::arg("eta"));

  m.def(
      "verify_router_stats",
      [](std::size_t e, std::size_t k, std::size_t trials, std::uint64_t seed) {
        goatlab::Rng rng(seed);
        const goatlab::RouterStats stats = goatlab::verify_router_stats(e, k, trials, rng);
        return py::make_tuple(stats.mean, stats.variance);
      },
      py::arg("e"), py::arg("k"), py::arg("trials") = 10000, py::arg("seed") = 0);

  m.def(
      "param_count",
      [](const std::string& backbone, const std::string& method) {
        const goatlab::BackboneSpec spec =
            goatlab::default_backbone(goatlab::backbone_from_string(backbone));
        const goatlab::CostReport report =
            goatlab::param_count(spec, goatlab::cost_method_from_string(method));
        py::dict out;
        out["trainable_params"] = report.trainable_params;
        out["total_params"] = report.total_params;
        out["proportion"] = report.proportion;
        out["formatted"] = goatlab::format_proportion(report);
        return out;
      },
      py::arg("backbone"), py::arg("method"));

  m.def(
      "flops_estimate",
      [](const std::string& backbone, const std::string& method) {
        const goatlab::BackboneSpec spec =
            goatlab::default_backbone(goatlab::backbone_from_string(backbone));
        return goatlab::flops_estimate(spec, goatlab::cost_method_from_string(method));
      },
      py::arg("backbone"), py::arg("method"));
}
