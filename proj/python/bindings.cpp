#include <pybind11/eigen.h>
#include <pybind11/functional.h>
#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "sixmap/heatmap.hpp"
#include "sixmap/hungarian.hpp"
#include "sixmap/identify.hpp"
#include "sixmap/net.hpp"
#include "sixmap/pipeline.hpp"
#include "sixmap/roles.hpp"
#include "sixmap/textio.hpp"

namespace py = pybind11;
using namespace sixmap;

namespace {

std::vector<Vec2> to_points(const py::array_t<double, py::array::c_style | py::array::forcecast>& a) {
  if (a.ndim() != 2 || a.shape(1) != 2) throw py::value_error("expected an (n, 2) array");
  std::vector<Vec2> out(static_cast<std::size_t>(a.shape(0)));
  auto r = a.unchecked<2>();
  for (py::ssize_t i = 0; i < a.shape(0); ++i) out[static_cast<std::size_t>(i)] = {r(i, 0), r(i, 1)};
  return out;
}

py::array_t<std::int32_t> grid_array(const heatmap::HeatmapGrid& g) {
  py::array_t<std::int32_t> out({heatmap::kRows, heatmap::kCols});
  auto counts = g.counts();
  std::copy(counts.begin(), counts.end(), out.mutable_data());
  return out;
}

pipeline::Context make_context(const std::string& workdir, const std::string& config_json) {
  pipeline::Context ctx;
  ctx.config = config_json.empty() ? pipeline::PipelineConfig{} : pipeline::parse_config(config_json);
  ctx.layout.root = workdir;
  return ctx;
}

}  // namespace

PYBIND11_MODULE(_sixmap, m) {
  m.doc() = "Player style embeddings from tracking data";

  py::register_exception<Error>(m, "SixmapError", PyExc_RuntimeError);

  m.def(
      "hungarian",
      [](const Eigen::MatrixXd& cost) {
        auto a = roles::hungarian(cost);
        return py::make_tuple(a.col_of_row, a.cost);
      },
      py::arg("cost"), "Minimum-cost assignment: (column of each row, total cost).");

  m.def(
      "location_heatmap",
      [](const py::array_t<double, py::array::c_style | py::array::forcecast>& pos, double length, double width) {
        return grid_array(heatmap::location_heatmap(to_points(pos), length, width));
      },
      py::arg("positions"), py::arg("length") = 105.0, py::arg("width") = 68.0);

  m.def(
      "direction_heatmap",
      [](const py::array_t<double, py::array::c_style | py::array::forcecast>& vel, double threshold) {
        heatmap::DirectionOptions opt;
        opt.threshold = threshold;
        return grid_array(heatmap::direction_heatmap(to_points(vel), opt));
      },
      py::arg("velocities"), py::arg("threshold") = 4.0);

  m.def("binomial", &heatmap::binomial, py::arg("n"), py::arg("k"));

  m.def(
      "triplet_loss",
      [](const std::vector<double>& a, const std::vector<double>& p, const std::vector<double>& n, double alpha) {
        return net::triplet_loss<double>(a, p, n, alpha);
      },
      py::arg("anchor"), py::arg("positive"), py::arg("negative"), py::arg("alpha") = 0.1);

  m.def(
      "atl_sim",
      [](const std::vector<double>& log_densities, std::size_t m) { return identify::atl_sim(log_densities, m); },
      py::arg("log_densities"), py::arg("m"));

  m.def(
      "gaussian_log_density",
      [](const Eigen::MatrixXd& train, const Eigen::MatrixXd& test, double ridge, bool diagonal) {
        return identify::fit_gaussian(train, ridge, diagonal).log_density_rows(test);
      },
      py::arg("train"), py::arg("test"), py::arg("ridge") = 1e-3, py::arg("diagonal") = false,
      "Log-density of each test row under a Gaussian fitted to the training rows.");

  m.def(
      "embed",
      [](const py::array_t<float, py::array::c_style | py::array::forcecast>& loc,
         const py::array_t<float, py::array::c_style | py::array::forcecast>& dir, std::uint64_t seed) {
        if (loc.ndim() != 3 || loc.shape(1) != heatmap::kRows || loc.shape(2) != heatmap::kCols ||
            dir.ndim() != 3 || dir.shape(0) != loc.shape(0) || dir.shape(1) != heatmap::kRows ||
            dir.shape(2) != heatmap::kCols) {
          throw py::value_error("expected two (n, 35, 50) arrays");
        }
        const auto n = static_cast<std::size_t>(loc.shape(0));
        net::Model<float> model(net::ModelConfig{}, seed);
        auto f = model.embed(std::span<const float>(loc.data(), n * heatmap::kCells),
                             std::span<const float>(dir.data(), n * heatmap::kCells), n, net::Mode::kInfer);
        py::array_t<float> out({static_cast<py::ssize_t>(n), static_cast<py::ssize_t>(model.embedding_dim())});
        std::copy(f.begin(), f.end(), out.mutable_data());
        return out;
      },
      py::arg("location"), py::arg("direction"), py::arg("seed") = 0,
      "Infer-mode embeddings of a freshly initialised network.");

  m.def(
      "branch_shapes",
      []() {
        net::Branch<float> b("loc", net::BranchConfig{}, 0);
        std::vector<std::pair<std::string, std::tuple<int, int, int>>> out;
        for (const auto& t : b.shape_trace()) out.push_back({t.name, {t.output.h, t.output.w, t.output.c}});
        return out;
      },
      "Output shape (height, width, channels) after each layer of one branch.");

  m.def("stage_names", &pipeline::stage_names);

  m.def(
      "run_stage",
      [](const std::string& stage, const std::string& workdir, const std::string& config_json) {
        auto ctx = make_context(workdir, config_json);
        py::gil_scoped_release release;
        pipeline::run_stage(stage, ctx);
      },
      py::arg("stage"), py::arg("workdir"), py::arg("config_json") = "");

  m.def(
      "default_config", []() { return pipeline::dump_config(pipeline::PipelineConfig{}); },
      "Default configuration as JSON text.");
}
