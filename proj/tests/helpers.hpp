#pragma once

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "mvitime/edf.hpp"
#include "mvitime/ingest.hpp"
#include "mvitime/nn/model.hpp"
#include "mvitime/rng.hpp"

namespace helpers {

// Synthetic EDF file with the given channel layout, filled with
// deterministic pseudo-random digital samples.
struct SynthEdf {
  mvitime::edf::EdfHeader header;
  std::vector<std::vector<std::int16_t>> digital;

  std::vector<std::uint8_t> bytes() const {
    return mvitime::edf::write_edf(header, digital);
  }
};

inline SynthEdf make_synth_edf(int n_channels, int samples_per_record, int n_records,
                               std::uint64_t seed, double record_duration_s = 30.0) {
  SynthEdf s;
  s.header.version = "0";
  s.header.patient_id = "X";
  s.header.recording_id = "synth";
  s.header.start_date = "01.01.00";
  s.header.start_time = "00.00.00";
  s.header.n_data_records = n_records;
  s.header.record_duration_s = record_duration_s;
  mvitime::Rng rng(seed);
  for (int c = 0; c < n_channels; ++c) {
    mvitime::edf::SignalMeta m;
    m.label = c == 0 ? "EEG Fpz-Cz" : "CH" + std::to_string(c);
    m.physical_dim = "uV";
    m.physical_min = -250.0 - c;
    m.physical_max = 250.0 + 2 * c;
    m.digital_min = -2048;
    m.digital_max = 2047;
    m.samples_per_record = samples_per_record;
    s.header.signals.push_back(m);
    std::vector<std::int16_t> d;
    for (int i = 0; i < samples_per_record * n_records; ++i) {
      d.push_back(static_cast<std::int16_t>(static_cast<long>(rng.uniform(4096)) - 2048));
    }
    s.digital.push_back(std::move(d));
  }
  return s;
}

inline mvitime::ingest::Epoch make_epoch(const std::string& subject,
                                         mvitime::ingest::SleepStage stage, int length,
                                         std::uint64_t seed, double offset = 0.0) {
  mvitime::ingest::Epoch e;
  e.subject_id = subject;
  e.stage = stage;
  mvitime::Rng rng(seed);
  const double freq = 1.0 + static_cast<double>(stage);
  for (int i = 0; i < length; ++i) {
    e.samples.push_back(offset + std::sin(freq * 0.2 * i) + 0.1 * rng.normal());
  }
  return e;
}

// Labeled dataset that a small model can separate: per-class constant
// offsets plus mild noise.
inline std::vector<mvitime::ingest::Epoch> separable_dataset(int per_class, int length,
                                                             std::uint64_t seed) {
  std::vector<mvitime::ingest::Epoch> out;
  mvitime::Rng rng(seed);
  for (int c = 0; c < mvitime::ingest::kNumStages; ++c) {
    for (int i = 0; i < per_class; ++i) {
      mvitime::ingest::Epoch e;
      e.subject_id = "s" + std::to_string(i % 3);
      e.stage = static_cast<mvitime::ingest::SleepStage>(c);
      for (int j = 0; j < length; ++j) {
        e.samples.push_back(2.0 * c - 4.0 + 0.05 * rng.normal());
      }
      out.push_back(std::move(e));
    }
  }
  return out;
}

// Central finite difference on a scalar function of one parameter entry.
inline double central_diff(const std::function<double()>& f, double& x, double h = 1e-5) {
  const double x0 = x;
  x = x0 + h;
  const double fp = f();
  x = x0 - h;
  const double fm = f();
  x = x0;
  return (fp - fm) / (2.0 * h);
}

inline double rel_err(double a, double b) {
  const double scale = std::max({std::abs(a), std::abs(b), 1e-8});
  return std::abs(a - b) / scale;
}

// Brute-force symmetric eigendecomposition via cyclic Jacobi rotations.
// Independent of Eigen; used as the PCA oracle.
inline void jacobi_eigen(std::vector<std::vector<double>> a, std::vector<double>& eigenvalues,
                         std::vector<std::vector<double>>& eigenvectors) {
  const std::size_t n = a.size();
  eigenvectors.assign(n, std::vector<double>(n, 0.0));
  for (std::size_t i = 0; i < n; ++i) eigenvectors[i][i] = 1.0;
  for (int sweep = 0; sweep < 100; ++sweep) {
    double off = 0.0;
    for (std::size_t p = 0; p < n; ++p)
      for (std::size_t q = p + 1; q < n; ++q) off += a[p][q] * a[p][q];
    if (off < 1e-24) break;
    for (std::size_t p = 0; p < n; ++p) {
      for (std::size_t q = p + 1; q < n; ++q) {
        if (std::abs(a[p][q]) < 1e-18) continue;
        const double theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
        const double t = (theta >= 0 ? 1.0 : -1.0) /
                         (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0);
        const double s = t * c;
        for (std::size_t k = 0; k < n; ++k) {
          const double akp = a[k][p], akq = a[k][q];
          a[k][p] = c * akp - s * akq;
          a[k][q] = s * akp + c * akq;
        }
        for (std::size_t k = 0; k < n; ++k) {
          const double apk = a[p][k], aqk = a[q][k];
          a[p][k] = c * apk - s * aqk;
          a[q][k] = s * apk + c * aqk;
        }
        for (std::size_t k = 0; k < n; ++k) {
          const double vkp = eigenvectors[k][p], vkq = eigenvectors[k][q];
          eigenvectors[k][p] = c * vkp - s * vkq;
          eigenvectors[k][q] = s * vkp + c * vkq;
        }
      }
    }
  }
  eigenvalues.resize(n);
  for (std::size_t i = 0; i < n; ++i) eigenvalues[i] = a[i][i];
}

}  // namespace helpers
