#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "mvitime/augment.hpp"
#include "mvitime/contrastive.hpp"
#include "mvitime/edf.hpp"
#include "mvitime/eval.hpp"
#include "mvitime/ingest.hpp"
#include "mvitime/nn/model.hpp"
#include "mvitime/train.hpp"

namespace py = pybind11;
using namespace mvitime;

namespace {

std::vector<std::vector<double>> matrix_to_lists(const Eigen::MatrixXd& m) {
  std::vector<std::vector<double>> out(static_cast<std::size_t>(m.rows()));
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    out[static_cast<std::size_t>(i)].assign(m.row(i).begin(), m.row(i).end());
  }
  return out;
}

Eigen::MatrixXd lists_to_matrix(const std::vector<std::vector<double>>& rows) {
  if (rows.empty()) return {};
  Eigen::MatrixXd m(static_cast<Eigen::Index>(rows.size()),
                    static_cast<Eigen::Index>(rows[0].size()));
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i].size() != rows[0].size()) throw std::invalid_argument("ragged matrix");
    for (std::size_t j = 0; j < rows[i].size(); ++j) {
      m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = rows[i][j];
    }
  }
  return m;
}

}  // namespace

PYBIND11_MODULE(_mvitime, m) {
  m.doc() = "Sleep-staging pipeline: EDF ingestion, contrastive pre-training, "
            "1-D MobileViT classification";

  // ---- EDF ----
  py::class_<edf::SignalRecord>(m, "SignalRecord")
      .def_readonly("channel_label", &edf::SignalRecord::channel_label)
      .def_readonly("sample_rate_hz", &edf::SignalRecord::sample_rate_hz)
      .def_readonly("samples", &edf::SignalRecord::samples);

  py::class_<edf::HypnogramEntry>(m, "HypnogramEntry")
      .def_readonly("onset_s", &edf::HypnogramEntry::onset_s)
      .def_readonly("duration_s", &edf::HypnogramEntry::duration_s)
      .def_readonly("raw_label", &edf::HypnogramEntry::raw_label);

  m.def("parse_edf", [](py::bytes data) {
    const std::string s = data;
    auto f = edf::parse_edf({reinterpret_cast<const std::uint8_t*>(s.data()), s.size()});
    return f.signals;
  }, py::arg("data"), "Parse an EDF/EDF+ byte string into physical-unit signals");

  m.def("parse_hypnogram", [](py::bytes data) {
    const std::string s = data;
    return edf::parse_hypnogram({reinterpret_cast<const std::uint8_t*>(s.data()), s.size()});
  }, py::arg("data"));

  // ---- staging / ingestion ----
  m.def("map_stage", [](const std::string& label) -> py::object {
    auto s = ingest::map_stage(label);
    if (!s) return py::none();
    return py::int_(static_cast<int>(*s));
  }, py::arg("label"), "R&K label to class index 0..4 (W,S1,S2,S3,REM), None if excluded");

  m.def("stage_names", [] {
    return std::vector<std::string>(ingest::kStageNames.begin(), ingest::kStageNames.end());
  });

  // ---- augmentations ----
  m.def("crop_resize",
        [](const std::vector<double>& x, int n_min, int n_max, std::uint64_t seed) {
          augment::AugmentConfig cfg;
          cfg.n_segments_min = n_min;
          cfg.n_segments_max = n_max;
          Rng rng(seed);
          return augment::crop_resize(x, cfg, rng);
        },
        py::arg("signal"), py::arg("n_segments_min") = 2, py::arg("n_segments_max") = 8,
        py::arg("seed") = 0);

  m.def("permute",
        [](const std::vector<double>& x, int n_min, int n_max, std::uint64_t seed) {
          augment::AugmentConfig cfg;
          cfg.n_segments_min = n_min;
          cfg.n_segments_max = n_max;
          Rng rng(seed);
          return augment::permute(x, cfg, rng);
        },
        py::arg("signal"), py::arg("n_segments_min") = 2, py::arg("n_segments_max") = 8,
        py::arg("seed") = 0);

  // ---- contrastive ----
  m.def("nt_xent_loss",
        [](const std::vector<std::vector<double>>& vectors,
           const std::vector<std::size_t>& pairing, double temperature) {
          contrastive::EmbeddingBatch b;
          b.vectors = lists_to_matrix(vectors);
          b.pairing = pairing;
          auto r = contrastive::nt_xent_loss(b, temperature);
          return py::make_tuple(r.loss, matrix_to_lists(r.grad));
        },
        py::arg("vectors"), py::arg("pairing"), py::arg("temperature") = 0.5,
        "Returns (loss, gradient) of the normalized-temperature cross entropy");

  m.def("pca_fit",
        [](const std::vector<std::vector<double>>& rows, long k) {
          auto basis = contrastive::pca_fit(lists_to_matrix(rows), k);
          py::dict d;
          d["mean"] = std::vector<double>(basis.mean.begin(), basis.mean.end());
          d["components"] = matrix_to_lists(basis.components);
          d["explained_variance"] = std::vector<double>(basis.explained_variance.begin(),
                                                        basis.explained_variance.end());
          d["rank_deficient"] = basis.rank_deficient;
          return d;
        },
        py::arg("rows"), py::arg("k"));

  // ---- training schedule ----
  m.def("cosine_warmup_lr",
        static_cast<double (*)(long, double, long, long)>(&train::cosine_warmup_lr),
        py::arg("step"), py::arg("base_lr"), py::arg("warmup_steps"), py::arg("total_steps"));

  // ---- evaluation ----
  m.def("metrics",
        [](const std::vector<int>& predictions, const std::vector<int>& references) {
          std::vector<ingest::SleepStage> p, r;
          for (int x : predictions) p.push_back(static_cast<ingest::SleepStage>(x));
          for (int x : references) r.push_back(static_cast<ingest::SleepStage>(x));
          auto cm = eval::confusion_matrix(p, r);
          auto mr = eval::metrics(cm);
          py::dict d;
          d["accuracy"] = mr.accuracy;
          d["macro_f1"] = mr.macro_f1;
          py::dict per;
          for (int c = 0; c < ingest::kNumStages; ++c) {
            py::dict e;
            e["precision"] = mr.per_class[c].precision;
            e["recall"] = mr.per_class[c].recall;
            e["f1"] = mr.per_class[c].f1;
            e["support"] = mr.per_class[c].support;
            e["zero_support"] = mr.per_class[c].zero_support;
            per[ingest::kStageNames[static_cast<std::size_t>(c)]] = e;
          }
          d["per_class"] = per;
          std::vector<std::vector<long>> counts(5, std::vector<long>(5));
          for (int i = 0; i < 5; ++i)
            for (int j = 0; j < 5; ++j) counts[i][j] = cm.m[i][j];
          d["confusion"] = counts;
          return d;
        },
        py::arg("predictions"), py::arg("references"),
        "Confusion matrix, accuracy, per-class precision/recall/F1 and macro F1");

  // ---- model ----
  py::class_<nn::MViTime<float>>(m, "Model")
      .def(py::init([](int input_length, std::uint64_t seed) {
             return nn::MViTime<float>(nn::ModelConfig::tiny(input_length), seed);
           }),
           py::arg("input_length") = 32, py::arg("seed") = 0)
      .def_static("from_file",
                  [](const std::string& path) {
                    return nn::from_checkpoint<float>(nn::load_checkpoint(path));
                  })
      .def("save",
           [](const nn::MViTime<float>& self, const std::string& path) {
             nn::save_checkpoint(path, nn::to_checkpoint(self));
           })
      .def_property_readonly("input_length",
                             [](const nn::MViTime<float>& self) { return self.cfg.input_length; })
      .def("parameter_count",
           [](const nn::MViTime<float>& self) { return nn::parameter_count(self.cfg); })
      .def("predict",
           [](const nn::MViTime<float>& self, const std::vector<std::vector<double>>& signals) {
             std::vector<ingest::Epoch> epochs;
             for (const auto& s : signals) {
               ingest::Epoch e;
               e.samples = s;
               epochs.push_back(std::move(e));
             }
             auto stages = eval::predict_stages(self, epochs);
             std::vector<int> out;
             for (auto s : stages) out.push_back(static_cast<int>(s));
             return out;
           },
           py::arg("signals"), "Predicted class index per signal")
      .def("embed", [](const nn::MViTime<float>& self,
                       const std::vector<std::vector<double>>& signals) {
        nn::Tensor<float> x(
            {static_cast<int>(signals.size()), 1, self.cfg.input_length});
        for (std::size_t i = 0; i < signals.size(); ++i) {
          if (static_cast<int>(signals[i].size()) != self.cfg.input_length) {
            throw std::invalid_argument("signal length mismatch");
          }
          for (int j = 0; j < self.cfg.input_length; ++j) {
            x.at(static_cast<int>(i), 0, j) = static_cast<float>(signals[i][j]);
          }
        }
        auto pass = self.forward(x, true, false);
        std::vector<std::vector<double>> out(signals.size());
        for (std::size_t i = 0; i < signals.size(); ++i) {
          for (int j = 0; j < self.cfg.projection_dim; ++j) {
            out[i].push_back(pass.embedding->val.at(static_cast<int>(i), j));
          }
        }
        return out;
      }, py::arg("signals"), "L2-normalized contrastive embeddings");
}
