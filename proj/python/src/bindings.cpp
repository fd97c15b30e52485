#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <sstream>

#include "mpner/cli.hpp"
#include "mpner/config.hpp"
#include "mpner/crf.hpp"
#include "mpner/datagen.hpp"
#include "mpner/text.hpp"
#include "mpner/train.hpp"

namespace py = pybind11;
using namespace mpner;

namespace {

using Span = std::pair<int, int>;
using Matrix = std::vector<std::vector<double>>;

std::vector<EntitySpan> to_spans(const std::vector<Span>& spans) {
  std::vector<EntitySpan> out;
  for (const auto& [s, e] : spans) out.push_back({s, e});
  return out;
}

std::vector<Span> from_spans(const std::vector<EntitySpan>& spans) {
  std::vector<Span> out;
  for (const auto& s : spans) out.emplace_back(s.start, s.end);
  return out;
}

TagLattice make_lattice(const Matrix& emissions, const Matrix& transitions, const std::vector<double>& start,
                        const std::vector<double>& end) {
  const std::size_t n = emissions.size(), k = start.size();
  auto l = TagLattice::zeros(n, k);
  for (std::size_t i = 0; i < n; ++i) {
    if (emissions[i].size() != k) throw std::invalid_argument("emission rows must have one entry per tag");
    std::copy(emissions[i].begin(), emissions[i].end(), l.emissions.begin() + static_cast<long>(i * k));
  }
  if (transitions.size() != k) throw std::invalid_argument("transitions must be square over the tags");
  for (std::size_t a = 0; a < k; ++a) {
    if (transitions[a].size() != k) throw std::invalid_argument("transitions must be square over the tags");
    std::copy(transitions[a].begin(), transitions[a].end(), l.transitions.begin() + static_cast<long>(a * k));
  }
  l.start = start;
  l.end = end;
  l.validate();
  return l;
}

py::dict record_dict(const UtteranceRecord& r) {
  py::dict d;
  d["id"] = r.id;
  d["tokens"] = r.tokens;
  d["entities"] = from_spans(r.entities);
  return d;
}

}  // namespace

PYBIND11_MODULE(_mpner, m) {
  m.doc() = "Multiple product name recognition with an entity transformer and CRF.";

  m.def("tokenize", &tokenize, py::arg("text"));
  m.def(
      "bilou_encode", [](const std::vector<Span>& spans, int length) { return bilou_encode(to_spans(spans), length); },
      py::arg("spans"), py::arg("length"));
  m.def(
      "bilou_decode", [](const TagSequence& tags, bool strict) { return from_spans(bilou_decode(tags, strict)); },
      py::arg("tags"), py::arg("strict") = true);

  m.def(
      "log_partition",
      [](const Matrix& emissions, const Matrix& transitions, const std::vector<double>& start,
         const std::vector<double>& end) { return log_partition(make_lattice(emissions, transitions, start, end)); },
      py::arg("emissions"), py::arg("transitions"), py::arg("start"), py::arg("end"));
  m.def(
      "viterbi",
      [](const Matrix& emissions, const Matrix& transitions, const std::vector<double>& start,
         const std::vector<double>& end, bool constrained) {
        const auto lattice = make_lattice(emissions, transitions, start, end);
        if (!constrained) {
          const auto r = viterbi(lattice);
          return py::make_tuple(r.tags, r.score);
        }
        const auto mask = bilou_constraints(lattice.num_tags);
        const auto r = viterbi(lattice, &mask);
        return py::make_tuple(r.tags, r.score);
      },
      py::arg("emissions"), py::arg("transitions"), py::arg("start"), py::arg("end"),
      py::arg("constrained") = false);

  m.def(
      "generate",
      [](const std::string& catalog, const std::string& templates, const std::string& quantities, std::size_t count,
         std::uint64_t seed, int min_items, int max_items) {
        GenerationOptions opts;
        opts.seed = seed;
        opts.count = count;
        opts.min_items = min_items;
        opts.max_items = max_items;
        const auto records =
            generate_records(load_templates(templates, quantities), load_catalog(catalog), opts);
        py::list out;
        for (const auto& r : records) out.append(record_dict(r));
        return out;
      },
      py::arg("catalog"), py::arg("templates"), py::arg("quantities"), py::arg("count"), py::arg("seed") = 0,
      py::arg("min_items") = 1, py::arg("max_items") = kMaxItems);

  py::class_<NerModel>(m, "Model")
      .def_static("load", &load_checkpoint, py::arg("path"))
      .def("save", [](const NerModel& model, const std::string& path) { save_checkpoint(model, path); },
           py::arg("path"))
      .def(
          "predict",
          [](const NerModel& model, const std::string& text) {
            const auto tokens = tokenize(text);
            py::list out;
            for (const auto& s : model.predict(tokens))
              out.append(py::make_tuple(join_tokens(tokens, s.start, s.end), s.start, s.end));
            return out;
          },
          py::arg("text"))
      .def(
          "evaluate",
          [](const NerModel& model, const std::string& data, bool strict) {
            const auto r = evaluate(model, read_dataset(data), strict);
            py::dict d;
            d["precision"] = r.precision;
            d["recall"] = r.recall;
            d["f1"] = r.f1;
            d["tp"] = r.tp;
            d["fp"] = r.fp;
            d["fn"] = r.fn;
            return d;
          },
          py::arg("data"), py::arg("strict") = true);

  m.def(
      "train",
      [](const std::string& config, const std::string& train_path, const std::string& dev_path) {
        const auto rc = load_run_config(config);
        const auto dev = dev_path.empty() ? std::vector<UtteranceRecord>{} : read_dataset(dev_path);
        TrainResult result;
        {
          py::gil_scoped_release release;
          result = train(rc.train, read_dataset(train_path), dev);
        }
        py::list log;
        for (const auto& e : result.log) log.append(format_log_line(e));
        return py::make_tuple(std::move(result.model), log);
      },
      py::arg("config"), py::arg("train"), py::arg("dev") = "");

  m.def(
      "run",
      [](std::vector<std::string> args, const std::string& input) {
        args.insert(args.begin(), "mpner");
        std::vector<char*> argv;
        for (auto& a : args) argv.push_back(a.data());
        std::istringstream in(input);
        std::ostringstream out, err;
        const int code = run_cli(static_cast<int>(argv.size()), argv.data(), in, out, err);
        return py::make_tuple(code, out.str(), err.str());
      },
      py::arg("args"), py::arg("input") = "");
}
