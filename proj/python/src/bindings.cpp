#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "pnpreg/errors.hpp"
#include "pnpreg/harness.hpp"
#include "pnpreg/io.hpp"
#include "pnpreg/metrics.hpp"
#include "pnpreg/priors.hpp"
#include "pnpreg/solvers.hpp"

namespace py = pybind11;
using namespace pnpreg;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

// 2-D (H, W), 3-D (C, H, W) or 4-D (N, C, H, W) float arrays; fewer dims get
// leading unit axes.
Tensor to_tensor(const Array& a) {
  if (a.ndim() < 2 || a.ndim() > 4) throw DimensionError("expected a 2-, 3- or 4-D array");
  Shape s(4, 1);
  for (py::ssize_t i = 0; i < a.ndim(); ++i) s[4 - a.ndim() + i] = static_cast<std::size_t>(a.shape(i));
  return Tensor::from_values(s, std::span<const double>(a.data(), static_cast<std::size_t>(a.size())));
}

Array to_array(const Tensor& t) {
  const Tensor d = t.dtype() == DType::F64 ? t : t.to(DType::F64);
  std::vector<py::ssize_t> shape(d.shape().begin(), d.shape().end());
  Array out(shape);
  std::copy(d.data<double>().begin(), d.data<double>().end(), out.mutable_data());
  return out;
}

Tensor kernel_tensor(const Array& k) {
  if (k.ndim() != 2) throw DimensionError("kernel must be 2-D");
  return Tensor::from_values({static_cast<std::size_t>(k.shape(0)), static_cast<std::size_t>(k.shape(1))},
                             std::span<const double>(k.data(), static_cast<std::size_t>(k.size())));
}

py::dict trace_dict(const SolveTrace& t) {
  std::vector<double> iter, psnr_, mse, obj;
  for (const auto& r : t.rows) {
    iter.push_back(static_cast<double>(r.iter));
    psnr_.push_back(r.psnr);
    mse.push_back(r.iterate_mse);
    obj.push_back(r.objective);
  }
  py::dict d;
  d["iter"] = iter;
  d["psnr"] = psnr_;
  d["iterate_mse"] = mse;
  d["objective"] = obj;
  return d;
}

py::tuple result(const SolveResult& r) { return py::make_tuple(to_array(r.x), trace_dict(r.trace)); }

UpdateRule rule_of(const std::string& s) {
  if (s == "adam") return UpdateRule::Adam;
  if (s == "plain") return UpdateRule::Plain;
  throw ArgumentError("update must be 'adam' or 'plain'");
}

const Tensor* maybe(const std::optional<Tensor>& t) { return t ? &*t : nullptr; }

std::optional<Tensor> opt_tensor(const std::optional<Array>& a) {
  if (!a) return std::nullopt;
  return to_tensor(*a);
}

}  // namespace

PYBIND11_MODULE(_pnpreg, m) {
  m.doc() = "Plug-and-play restoration with a learned regularizer gradient";

  static py::exception<Error> base(m, "Error", PyExc_RuntimeError);
  static py::exception<ArgumentError> arg(m, "ArgumentError", PyExc_ValueError);
  static py::exception<DimensionError> dim(m, "DimensionError", PyExc_ValueError);
  static py::exception<ParseError> parse(m, "ParseError", PyExc_ValueError);
  static py::exception<NumericError> num(m, "NumericError", base.ptr());
  static py::exception<UnsupportedOperation> unsup(m, "UnsupportedOperation", base.ptr());
  py::register_exception_translator([](std::exception_ptr p) {
    try {
      if (p) std::rethrow_exception(p);
    } catch (const ArgumentError& e) {
      py::set_error(arg, e.what());
    } catch (const DimensionError& e) {
      py::set_error(dim, e.what());
    } catch (const ParseError& e) {
      py::set_error(parse, e.what());
    } catch (const NumericError& e) {
      py::set_error(num, e.what());
    } catch (const UnsupportedOperation& e) {
      py::set_error(unsup, e.what());
    } catch (const Error& e) {
      py::set_error(base, e.what());
    }
  });

  py::class_<LinearOperator, std::shared_ptr<LinearOperator>>(m, "Operator")
      .def_property_readonly("name", &LinearOperator::name)
      .def_property_readonly("input_shape", &LinearOperator::input_shape)
      .def_property_readonly("output_shape", &LinearOperator::output_shape)
      .def("apply", [](const LinearOperator& a, const Array& x) { return to_array(a.apply(to_tensor(x))); })
      .def("adjoint", [](const LinearOperator& a, const Array& y) { return to_array(a.adjoint(to_tensor(y))); })
      .def("initial_estimate", [](const LinearOperator& a, const Array& y) { return to_array(initial_estimate(a, to_tensor(y))); });

  const auto cast_op = [](OperatorPtr p) { return std::const_pointer_cast<LinearOperator>(p); };
  m.def("identity_operator", [=](std::size_t c, std::size_t h, std::size_t w) { return cast_op(build_operator(IdentitySpec{}, c, h, w)); },
        py::arg("channels"), py::arg("height"), py::arg("width"));
  m.def("blur_operator",
        [=](const Array& kernel, std::size_t c, std::size_t h, std::size_t w) {
          return cast_op(build_operator(BlurSpec{kernel_tensor(kernel)}, c, h, w));
        },
        py::arg("kernel"), py::arg("channels"), py::arg("height"), py::arg("width"));
  m.def("sr_operator",
        [=](int factor, const std::string& kernel, std::size_t c, std::size_t h, std::size_t w) {
          if (kernel != "bicubic" && kernel != "gaussian") throw ArgumentError("kernel must be 'bicubic' or 'gaussian'");
          return cast_op(build_operator(make_sr_spec(kernel == "bicubic" ? SRKernel::Bicubic : SRKernel::Gaussian, factor), c, h, w));
        },
        py::arg("factor"), py::arg("kernel"), py::arg("channels"), py::arg("height"), py::arg("width"));
  m.def("mask_operator",
        [=](double keep_rate, std::uint64_t seed, std::size_t c, std::size_t h, std::size_t w) {
          return cast_op(build_operator(make_mask_spec(h, w, keep_rate, seed), c, h, w));
        },
        py::arg("keep_rate"), py::arg("seed"), py::arg("channels"), py::arg("height"), py::arg("width"));
  m.def("gaussian_kernel", [](int size, double sigma_b) { return to_array(make_gaussian_kernel(size, sigma_b).kernel); },
        py::arg("size"), py::arg("sigma_b"));
  m.def("add_awgn", [](const Array& x, double sigma_n, std::uint64_t seed) { return to_array(add_awgn(to_tensor(x), sigma_n, seed)); },
        py::arg("x"), py::arg("sigma_n"), py::arg("seed"));
  m.def("psnr", [](const Array& a, const Array& b, double peak) { return psnr(to_tensor(a), to_tensor(b), peak); }, py::arg("a"),
        py::arg("b"), py::arg("peak") = 1.0);

  py::class_<Prior, std::shared_ptr<Prior>>(m, "Prior")
      .def_property_readonly("name", &Prior::name)
      .def("grad", [](const Prior& p, const Array& x) { return to_array(prior_grad(p, to_tensor(x))); })
      .def("prox", [](const Prior& p, const Array& z, double s) { return to_array(prior_prox(p, to_tensor(z), s)); }, py::arg("z"),
           py::arg("sigma"));
  py::class_<TikhonovPrior, Prior, std::shared_ptr<TikhonovPrior>>(m, "TikhonovPrior").def(py::init<>());
  py::class_<LaplacianPrior, Prior, std::shared_ptr<LaplacianPrior>>(m, "LaplacianPrior").def(py::init<>());
  py::class_<LearnedGradientPrior, Prior, std::shared_ptr<LearnedGradientPrior>>(m, "LearnedGradientPrior")
      .def(py::init([](const std::filesystem::path& ckpt) {
             return std::make_shared<LearnedGradientPrior>(std::make_shared<const ReGNet>(*load_checkpoint(ckpt).net));
           }),
           py::arg("checkpoint"));
  py::class_<DenoiserPrior, Prior, std::shared_ptr<DenoiserPrior>>(m, "DenoiserPrior")
      .def(py::init([](const std::filesystem::path& ckpt) {
             return std::make_shared<DenoiserPrior>(std::make_shared<const DenoiserNet>(*load_checkpoint(ckpt).net));
           }),
           py::arg("checkpoint"));

  m.def("residual_identity_error",
        [](const Prior& g, const Prior& d, const Array& z, double s) { return residual_identity_error(g, d, to_tensor(z), s); },
        py::arg("gradient"), py::arg("denoiser"), py::arg("z"), py::arg("sigma"));

  m.def("pnp_gd",
        [](const Array& y, const LinearOperator& a, const Prior& p, double mu, double sigma, std::size_t iterations,
           const std::string& update, bool self_ensemble, const std::optional<Array>& x_init, const std::optional<Array>& gt) {
          GDConfig c;
          c.mu = mu;
          c.sigma = sigma;
          c.iterations = iterations;
          c.rule = rule_of(update);
          c.self_ensemble = self_ensemble;
          const Tensor yt = to_tensor(y);
          const auto g = opt_tensor(gt);
          const Tensor x0 = x_init ? to_tensor(*x_init) : initial_estimate(a, yt);
          py::gil_scoped_release release;
          return pnp_gd(yt, a, p, c, x0, maybe(g));
        },
        py::arg("y"), py::arg("op"), py::arg("prior"), py::arg("mu") = 0.008, py::arg("sigma") = 1.2 / 255,
        py::arg("iterations") = 1500, py::arg("update") = "adam", py::arg("self_ensemble") = false,
        py::arg("x_init") = py::none(), py::arg("ground_truth") = py::none());
  m.def("red_gd",
        [](const Array& y, const LinearOperator& a, const Prior& p, double w, double sigma_f, double mu, std::size_t iterations,
           const std::string& update, const std::optional<Array>& x_init, const std::optional<Array>& gt) {
          REDConfig c;
          c.w = w;
          c.sigma_f = sigma_f;
          c.mu = mu;
          c.iterations = iterations;
          c.rule = rule_of(update);
          const Tensor yt = to_tensor(y);
          const auto g = opt_tensor(gt);
          const Tensor x0 = x_init ? to_tensor(*x_init) : initial_estimate(a, yt);
          py::gil_scoped_release release;
          return red_gd(yt, a, p, c, x0, maybe(g));
        },
        py::arg("y"), py::arg("op"), py::arg("prior"), py::arg("w") = 0.005, py::arg("sigma_f") = 7.0 / 255, py::arg("mu") = 0.08,
        py::arg("iterations") = 1500, py::arg("update") = "adam", py::arg("x_init") = py::none(),
        py::arg("ground_truth") = py::none());
  m.def("pnp_admm",
        [](const Array& y, const LinearOperator& a, const Prior& p, double sigma, double s0, double sN, std::size_t iterations,
           const std::optional<Array>& x_init, const std::optional<Array>& gt) {
          ADMMConfig c;
          c.sigma = sigma;
          c.s0 = s0;
          c.sN = sN;
          c.iterations = iterations;
          const Tensor yt = to_tensor(y);
          const auto g = opt_tensor(gt);
          const Tensor x0 = x_init ? to_tensor(*x_init) : initial_estimate(a, yt);
          py::gil_scoped_release release;
          return pnp_admm(yt, a, p, c, x0, maybe(g));
        },
        py::arg("y"), py::arg("op"), py::arg("prior"), py::arg("sigma") = 0.001 / 255, py::arg("s0") = 50.0 / 255,
        py::arg("sN") = 0.1 / 255, py::arg("iterations") = 25, py::arg("x_init") = py::none(),
        py::arg("ground_truth") = py::none());
  m.def("map_closed_form",
        [](const LinearOperator& a, const Array& y, const Prior& p, double sigma) {
          return to_array(map_closed_form(a, to_tensor(y), p, sigma));
        },
        py::arg("op"), py::arg("y"), py::arg("prior"), py::arg("sigma"));
  m.def("admm_schedule",
        [](double sigma, double s0, double sN, std::size_t n) {
          const ADMMSchedule s = admm_schedule(sigma, s0, sN, n);
          return py::make_tuple(s.rho0, s.alpha);
        },
        py::arg("sigma"), py::arg("s0"), py::arg("sN"), py::arg("iterations"));

  py::class_<SolveResult>(m, "SolveResult")
      .def_property_readonly("x", [](const SolveResult& r) { return to_array(r.x); })
      .def_property_readonly("trace", [](const SolveResult& r) { return trace_dict(r.trace); })
      .def_readonly("iterations", &SolveResult::iterations)
      .def("__iter__", [](const SolveResult& r) { return py::iter(result(r)); });

  m.def("selfcheck",
        [](std::uint64_t seed) {
          std::vector<py::tuple> out;
          for (const auto& c : run_selfcheck(seed)) out.push_back(py::make_tuple(c.name, c.ok, c.value));
          return out;
        },
        py::arg("seed") = 0);
  m.def("load_tensor", [](const std::filesystem::path& p) { return to_array(io::load_tensor(p)); });
  m.def("save_tensor", [](const std::filesystem::path& p, const Array& a) { io::save_tensor(p, to_tensor(a)); });
  m.def("load_png", [](const std::filesystem::path& p) { return to_array(io::load_png(p)); });
  m.def("save_png", [](const std::filesystem::path& p, const Array& a) { io::save_png(p, to_tensor(a)); });
}
