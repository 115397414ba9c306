#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace mvitime::edf {

// EDF/EDF+ reader covering what Sleep-EDF files need: ASCII fixed-width
// header, 16-bit little-endian samples, and EDF+ annotation (TAL) signals
// for hypnograms. Discontinuous EDF+D recordings are not supported.

struct SignalMeta {
  std::string label;
  std::string transducer;
  std::string physical_dim;
  double physical_min = 0.0;
  double physical_max = 0.0;
  int digital_min = 0;
  int digital_max = 0;
  std::string prefiltering;
  int samples_per_record = 0;

  bool is_annotation() const { return label == "EDF Annotations"; }
};

struct EdfHeader {
  std::string version;           // "0" for EDF
  std::string patient_id;
  std::string recording_id;
  std::string start_date;        // dd.mm.yy
  std::string start_time;        // hh.mm.ss
  std::string reserved;          // "EDF+C" etc.
  int n_data_records = 0;
  double record_duration_s = 0.0;
  std::vector<SignalMeta> signals;

  int header_bytes() const { return 256 + 256 * static_cast<int>(signals.size()); }
};

struct SignalRecord {
  std::string subject_id;
  std::string recording_id;
  std::string channel_label;
  double sample_rate_hz = 0.0;
  std::vector<double> samples;   // physical units
};

struct HypnogramEntry {
  double onset_s = 0.0;
  double duration_s = 0.0;
  std::string raw_label;
};

class EdfError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};
class MalformedHeader : public EdfError {
 public:
  using EdfError::EdfError;
};
class TruncatedData : public EdfError {
 public:
  using EdfError::EdfError;
};
class DegenerateScale : public EdfError {
 public:
  using EdfError::EdfError;
};

struct EdfFile {
  EdfHeader header;
  std::vector<SignalRecord> signals;            // ordinary signals, physical units
  std::vector<std::vector<std::int16_t>> raw;   // digital values, same order as header.signals
};

// Parse a full EDF/EDF+ file from memory.
EdfFile parse_edf(std::span<const std::uint8_t> bytes);

// Extract hypnogram entries from an EDF+ annotation file (e.g. the
// Sleep-EDF *-Hypnogram.edf companions). Annotations with empty text are
// skipped; entries are returned sorted by onset.
std::vector<HypnogramEntry> parse_hypnogram(std::span<const std::uint8_t> bytes);

// Serialize a header + digital samples back to bytes. Used by tests for
// round-trip checks and by the synth-data tool; it writes the same layout
// parse_edf reads.
std::vector<std::uint8_t> write_edf(const EdfHeader& header,
                                    const std::vector<std::vector<std::int16_t>>& digital);

// Build an EDF+ annotation file holding one TAL per hypnogram entry.
std::vector<std::uint8_t> write_hypnogram(const std::vector<HypnogramEntry>& entries,
                                          double record_duration_s = 30.0);

std::vector<std::uint8_t> read_file(const std::string& path);
void write_file(const std::string& path, std::span<const std::uint8_t> bytes);

}  // namespace mvitime::edf
