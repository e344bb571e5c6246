#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <algorithm>
#include <iostream>

#include "canfp/can_log.hpp"
#include "canfp/channels.hpp"
#include "canfp/evaluation.hpp"
#include "canfp/gradcheck.hpp"
#include "canfp/nn.hpp"
#include "canfp/pipeline.hpp"
#include "canfp/sampling.hpp"
#include "canfp/synthetic.hpp"

namespace py = pybind11;
using namespace canfp;
using nlohmann::json;

namespace {

const char* drop_reason_name(DropReason r) {
  switch (r) {
    case DropReason::kept: return "kept";
    case DropReason::constant: return "constant";
    case DropReason::too_short: return "too_short";
    case DropReason::counter: return "counter";
  }
  return "unknown";
}

CanLog to_log(const std::vector<CanFrame>& frames) {
  CanLog log;
  log.frames = frames;
  return log;
}

BusLayout layout_arg(const std::string& layout_json) {
  return layout_json.empty() ? default_layout() : bus_layout_from_json(json::parse(layout_json));
}

// Runs the named commands in pipeline order and returns their outputs as JSON text.
std::string run_pipeline(const std::string& config_json, const std::vector<std::string>& commands) {
  const auto cfg = config_from_json(json::parse(config_json));
  const std::vector<std::string> order{"synth", "extract", "split", "train-its", "train-mixture", "eval", "gradcheck"};
  for (const auto& c : commands) {
    if (std::find(order.begin(), order.end(), c) == order.end()) {
      throw Error(Errc::invalid_argument, "unknown command '" + c + "'");
    }
  }
  auto wanted = [&](const std::string& c) { return std::find(commands.begin(), commands.end(), c) != commands.end(); };
  json out = json::object();
  if (wanted("synth")) cmd_synth(cfg);
  if (wanted("extract")) {
    json ids = json::array();
    for (const auto& e : cmd_extract(cfg).channels) ids.push_back(to_string(e.id));
    out["channels"] = ids;
  }
  if (wanted("split")) {
    const auto split = cmd_split(cfg);
    out["split"] = {{"train", split.train.size()}, {"validation", split.validation.size()}, {"test", split.test.size()}};
  }
  if (wanted("train-its")) {
    json ranking = json::array();
    for (const auto& e : cmd_train_its(cfg)) ranking.push_back({{"channel", to_string(e.channel)}, {"val_accuracy", e.val_accuracy}});
    out["ranking"] = ranking;
  }
  if (wanted("train-mixture")) out["mixture_val_accuracy"] = cmd_train_mixture(cfg).meta.val_accuracy;
  if (wanted("eval")) {
    json reports = json::array();
    for (const auto& r : cmd_eval(cfg)) reports.push_back(to_json(r));
    out["reports"] = reports;
  }
  if (wanted("gradcheck")) {
    json checks = json::array();
    for (const auto& r : cmd_gradcheck(cfg)) checks.push_back({{"name", r.name}, {"passed", r.passed}});
    out["gradcheck"] = checks;
  }
  return out.dump();
}

}  // namespace

PYBIND11_MODULE(_canfp, m) {
  m.doc() = "Driver re-identification from CAN bus logs";

  // The error type carries the error code name in `code`.
  static py::handle error_type = py::register_exception<Error>(m, "Error", PyExc_RuntimeError).release();
  py::register_exception_translator([](std::exception_ptr p) {
    try {
      if (p) std::rethrow_exception(p);
    } catch (const Error& e) {
      py::object inst = py::reinterpret_borrow<py::object>(error_type)(e.what());
      inst.attr("code") = std::string(errc_name(e.code()));
      PyErr_SetObject(error_type.ptr(), inst.ptr());
    }
  });

  py::class_<CanFrame>(m, "Frame")
      .def(py::init<>())
      .def_readwrite("timestamp_us", &CanFrame::timestamp_us)
      .def_readwrite("can_id", &CanFrame::can_id)
      .def_readwrite("req", &CanFrame::req)
      .def_readwrite("data", &CanFrame::data)
      .def("__eq__", [](const CanFrame& a, const CanFrame& b) { return a == b; })
      .def("__repr__", [](const CanFrame& f) { return "<Frame " + format_frame(f) + ">"; });

  m.def("parse_frame_line", &parse_frame_line, py::arg("line"));
  m.def("format_frame", &format_frame, py::arg("frame"));
  m.def(
      "parse_log",
      [](const std::string& text) {
        auto res = parse_log(std::string_view(text), "");
        std::vector<std::pair<std::size_t, std::string>> errors;
        for (const auto& e : res.errors) errors.emplace_back(e.line_no, e.message);
        return py::make_tuple(res.log.frames, errors);
      },
      py::arg("text"), "Lenient parse: (frames, [(line_no, message)]).");
  m.def(
      "write_log", [](const std::vector<CanFrame>& frames) { return write_log(to_log(frames)); }, py::arg("frames"));

  m.def(
      "extract_channels",
      [](const std::vector<CanFrame>& frames) {
        py::dict out;
        for (const auto& [id, ch] : extract_channels(to_log(frames))) {
          out[py::str(to_string(id))] = py::make_tuple(ch.timestamps_us, ch.values);
        }
        return out;
      },
      py::arg("frames"), "Channel id -> (timestamps_us, byte values).");
  m.def(
      "classify_channels",
      [](const std::vector<CanFrame>& frames, std::size_t min_points, double counter_fraction) {
        const FilterConfig cfg{min_points, counter_fraction};
        std::map<std::string, std::string> out;
        for (const auto& [id, ch] : extract_channels(to_log(frames))) out[to_string(id)] = drop_reason_name(classify_channel(ch, cfg));
        return out;
      },
      py::arg("frames"), py::arg("min_points") = 1000, py::arg("counter_fraction") = 0.95);

  m.def(
      "make_windows",
      [](std::size_t n_total, std::size_t n, std::size_t shift) {
        std::vector<std::pair<std::size_t, std::size_t>> out;
        for (const auto& w : make_windows(n_total, n, shift)) out.emplace_back(w.start, w.end);
        return out;
      },
      py::arg("n_total"), py::arg("n"), py::arg("shift"), "1-based inclusive (start, end) pairs.");
  m.def(
      "conv1d",
      [](const std::vector<double>& series, const std::vector<double>& filter, std::size_t stride) {
        return conv1d(series, filter, stride);
      },
      py::arg("series"), py::arg("filter"), py::arg("stride") = 1);

  m.def("default_layout_json", [] { return to_json(default_layout()).dump(); });
  m.def(
      "planted_layout_json", [](std::size_t n, double period_s) { return to_json(planted_layout(n, period_s)).dump(); },
      py::arg("noise_channels"), py::arg("period_s") = 0.01);
  m.def(
      "gen_trace",
      [](const std::string& profile_json, double duration_s, std::uint64_t seed, const std::string& layout_json) {
        const auto profile = driver_profile_from_json(json::parse(profile_json));
        return gen_trace(profile, layout_arg(layout_json), duration_s, seed).frames;
      },
      py::arg("profile_json"), py::arg("duration_s"), py::arg("seed"), py::arg("layout_json") = "");

  m.def(
      "gradcheck",
      [](std::uint64_t seed) {
        std::vector<std::tuple<std::string, double, double, bool>> out;
        for (const auto& r : run_layer_gradchecks(seed)) out.emplace_back(r.name, r.max_rel_error, r.tolerance, r.passed);
        return out;
      },
      py::arg("seed") = 1, "(name, max_rel_error, tolerance, passed) per check.");

  m.def(
      "published_one_vs_all",
      [](double duration_s) -> std::optional<std::tuple<double, double, double, double>> {
        const auto a = published_one_vs_all(duration_s);
        if (!a) return std::nullopt;
        return std::make_tuple(a->mean, a->std, a->max, a->min);
      },
      py::arg("duration_s"));

  m.def("run_pipeline", &run_pipeline, py::arg("config_json"), py::arg("commands"),
        py::call_guard<py::gil_scoped_release>());
  m.def(
      "set_progress", [](bool on) { set_progress_stream(on ? &std::cerr : nullptr); }, py::arg("enabled"));
}
