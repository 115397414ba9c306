#include "mvitime/edf.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cstdio>
#include <cstring>
#include <fstream>

namespace mvitime::edf {

namespace {

std::string trim(std::string_view s) {
  std::size_t b = 0, e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  return std::string(s.substr(b, e - b));
}

std::string field(std::span<const std::uint8_t> bytes, std::size_t off, std::size_t len) {
  if (off + len > bytes.size()) throw MalformedHeader("header field past end of file");
  return trim(std::string_view(reinterpret_cast<const char*>(bytes.data()) + off, len));
}

long parse_int(const std::string& s, const char* what) {
  long v = 0;
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || p != s.data() + s.size()) {
    throw MalformedHeader(std::string("non-numeric ") + what + ": '" + s + "'");
  }
  return v;
}

double parse_double(const std::string& s, const char* what) {
  try {
    std::size_t pos = 0;
    double v = std::stod(s, &pos);
    if (pos != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw MalformedHeader(std::string("non-numeric ") + what + ": '" + s + "'");
  }
}

// Canonical numeric formatting so writer output re-parses to the same
// value and re-writes to the same bytes.
std::string fmt_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.8g", v);
  return buf;
}

void put_field(std::vector<std::uint8_t>& out, const std::string& s, std::size_t len) {
  std::string padded = s;
  if (padded.size() > len) padded.resize(len);
  padded.resize(len, ' ');
  out.insert(out.end(), padded.begin(), padded.end());
}

}  // namespace

EdfFile parse_edf(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 256) throw MalformedHeader("file shorter than 256-byte header");

  EdfFile f;
  EdfHeader& h = f.header;
  h.version = field(bytes, 0, 8);
  h.patient_id = field(bytes, 8, 80);
  h.recording_id = field(bytes, 88, 80);
  h.start_date = field(bytes, 168, 8);
  h.start_time = field(bytes, 176, 8);
  const long declared_header = parse_int(field(bytes, 184, 8), "header byte count");
  h.reserved = field(bytes, 192, 44);
  h.n_data_records = static_cast<int>(parse_int(field(bytes, 236, 8), "record count"));
  h.record_duration_s = parse_double(field(bytes, 244, 8), "record duration");
  const long ns = parse_int(field(bytes, 252, 4), "signal count");

  if (ns <= 0 || ns > 4096) throw MalformedHeader("implausible signal count");
  if (h.n_data_records < 0) throw MalformedHeader("negative record count");
  if (h.record_duration_s <= 0.0) throw MalformedHeader("non-positive record duration");
  if (declared_header != 256 + 256 * ns) {
    throw MalformedHeader("header byte count does not match 256 + 256 * ns");
  }
  if (bytes.size() < static_cast<std::size_t>(declared_header)) {
    throw MalformedHeader("file shorter than declared header");
  }

  h.signals.resize(ns);
  std::size_t off = 256;
  auto block = [&](std::size_t len, auto&& set) {
    for (long i = 0; i < ns; ++i) set(h.signals[i], field(bytes, off + i * len, len));
    off += ns * len;
  };
  block(16, [](SignalMeta& m, std::string s) { m.label = std::move(s); });
  block(80, [](SignalMeta& m, std::string s) { m.transducer = std::move(s); });
  block(8, [](SignalMeta& m, std::string s) { m.physical_dim = std::move(s); });
  block(8, [](SignalMeta& m, const std::string& s) { m.physical_min = parse_double(s, "physical min"); });
  block(8, [](SignalMeta& m, const std::string& s) { m.physical_max = parse_double(s, "physical max"); });
  block(8, [](SignalMeta& m, const std::string& s) { m.digital_min = static_cast<int>(parse_int(s, "digital min")); });
  block(8, [](SignalMeta& m, const std::string& s) { m.digital_max = static_cast<int>(parse_int(s, "digital max")); });
  block(80, [](SignalMeta& m, std::string s) { m.prefiltering = std::move(s); });
  block(8, [](SignalMeta& m, const std::string& s) { m.samples_per_record = static_cast<int>(parse_int(s, "samples per record")); });
  off += ns * 32;  // per-signal reserved

  std::size_t record_samples = 0;
  for (const auto& m : h.signals) {
    if (m.samples_per_record <= 0) throw MalformedHeader("non-positive samples per record");
    if (!m.is_annotation()) {
      if (m.digital_min >= m.digital_max) throw DegenerateScale("digital_min >= digital_max for " + m.label);
      if (m.physical_min == m.physical_max) throw DegenerateScale("physical_min == physical_max for " + m.label);
    }
    record_samples += static_cast<std::size_t>(m.samples_per_record);
  }

  const std::size_t need = off + 2 * record_samples * static_cast<std::size_t>(h.n_data_records);
  if (bytes.size() < need) throw TruncatedData("fewer data bytes than header promises");

  f.raw.resize(ns);
  for (long i = 0; i < ns; ++i) {
    f.raw[i].reserve(static_cast<std::size_t>(h.signals[i].samples_per_record) * h.n_data_records);
  }
  for (int r = 0; r < h.n_data_records; ++r) {
    for (long i = 0; i < ns; ++i) {
      for (int s = 0; s < h.signals[i].samples_per_record; ++s) {
        const std::uint8_t lo = bytes[off];
        const std::uint8_t hi = bytes[off + 1];
        off += 2;
        f.raw[i].push_back(static_cast<std::int16_t>(static_cast<std::uint16_t>(lo) |
                                                     (static_cast<std::uint16_t>(hi) << 8)));
      }
    }
  }

  for (long i = 0; i < ns; ++i) {
    const SignalMeta& m = h.signals[i];
    if (m.is_annotation()) continue;
    SignalRecord rec;
    rec.recording_id = h.recording_id;
    rec.channel_label = m.label;
    rec.sample_rate_hz = m.samples_per_record / h.record_duration_s;
    const double scale = (m.physical_max - m.physical_min) /
                         (static_cast<double>(m.digital_max) - m.digital_min);
    rec.samples.reserve(f.raw[i].size());
    for (std::int16_t d : f.raw[i]) {
      rec.samples.push_back(m.physical_min + (d - m.digital_min) * scale);
    }
    f.signals.push_back(std::move(rec));
  }
  return f;
}

std::vector<HypnogramEntry> parse_hypnogram(std::span<const std::uint8_t> bytes) {
  EdfFile f = parse_edf(bytes);
  std::string text;
  for (std::size_t i = 0; i < f.header.signals.size(); ++i) {
    if (!f.header.signals[i].is_annotation()) continue;
    for (std::int16_t d : f.raw[i]) {
      const auto u = static_cast<std::uint16_t>(d);
      text.push_back(static_cast<char>(u & 0xff));
      text.push_back(static_cast<char>(u >> 8));
    }
  }

  std::vector<HypnogramEntry> out;
  std::size_t pos = 0;
  while (pos < text.size()) {
    std::size_t end = text.find('\x00', pos);
    if (end == std::string::npos) end = text.size();
    std::string tal = text.substr(pos, end - pos);
    pos = end + 1;
    if (tal.empty() || (tal[0] != '+' && tal[0] != '-')) continue;

    std::size_t t14 = tal.find('\x14');
    if (t14 == std::string::npos) continue;
    std::string time_part = tal.substr(0, t14);
    std::string rest = tal.substr(t14 + 1);

    double onset = 0.0, duration = 0.0;
    std::size_t t15 = time_part.find('\x15');
    try {
      if (t15 == std::string::npos) {
        onset = std::stod(time_part);
      } else {
        onset = std::stod(time_part.substr(0, t15));
        duration = std::stod(time_part.substr(t15 + 1));
      }
    } catch (const std::exception&) {
      continue;
    }

    // rest = text fields separated by \x14; a timekeeping TAL has only
    // empty text fields.
    std::size_t p = 0;
    while (p <= rest.size()) {
      std::size_t q = rest.find('\x14', p);
      std::string label = rest.substr(p, q == std::string::npos ? std::string::npos : q - p);
      if (!label.empty()) out.push_back({onset, duration, label});
      if (q == std::string::npos) break;
      p = q + 1;
    }
  }
  std::stable_sort(out.begin(), out.end(),
                   [](const HypnogramEntry& a, const HypnogramEntry& b) { return a.onset_s < b.onset_s; });
  return out;
}

std::vector<std::uint8_t> write_edf(const EdfHeader& header,
                                    const std::vector<std::vector<std::int16_t>>& digital) {
  const auto ns = header.signals.size();
  if (digital.size() != ns) throw EdfError("digital signal count does not match header");

  std::vector<std::uint8_t> out;
  out.reserve(256 + 256 * ns);
  put_field(out, header.version.empty() ? "0" : header.version, 8);
  put_field(out, header.patient_id, 80);
  put_field(out, header.recording_id, 80);
  put_field(out, header.start_date.empty() ? "01.01.00" : header.start_date, 8);
  put_field(out, header.start_time.empty() ? "00.00.00" : header.start_time, 8);
  put_field(out, std::to_string(256 + 256 * ns), 8);
  put_field(out, header.reserved, 44);
  put_field(out, std::to_string(header.n_data_records), 8);
  put_field(out, fmt_double(header.record_duration_s), 8);
  put_field(out, std::to_string(ns), 4);

  for (const auto& m : header.signals) put_field(out, m.label, 16);
  for (const auto& m : header.signals) put_field(out, m.transducer, 80);
  for (const auto& m : header.signals) put_field(out, m.physical_dim, 8);
  for (const auto& m : header.signals) put_field(out, fmt_double(m.physical_min), 8);
  for (const auto& m : header.signals) put_field(out, fmt_double(m.physical_max), 8);
  for (const auto& m : header.signals) put_field(out, std::to_string(m.digital_min), 8);
  for (const auto& m : header.signals) put_field(out, std::to_string(m.digital_max), 8);
  for (const auto& m : header.signals) put_field(out, m.prefiltering, 80);
  for (const auto& m : header.signals) put_field(out, std::to_string(m.samples_per_record), 8);
  for (std::size_t i = 0; i < ns; ++i) put_field(out, "", 32);

  for (std::size_t i = 0; i < ns; ++i) {
    const std::size_t expect =
        static_cast<std::size_t>(header.signals[i].samples_per_record) * header.n_data_records;
    if (digital[i].size() != expect) {
      throw EdfError("signal " + header.signals[i].label + " sample count mismatch");
    }
  }
  for (int r = 0; r < header.n_data_records; ++r) {
    for (std::size_t i = 0; i < ns; ++i) {
      const int spr = header.signals[i].samples_per_record;
      for (int s = 0; s < spr; ++s) {
        const auto u = static_cast<std::uint16_t>(digital[i][static_cast<std::size_t>(r) * spr + s]);
        out.push_back(static_cast<std::uint8_t>(u & 0xff));
        out.push_back(static_cast<std::uint8_t>(u >> 8));
      }
    }
  }
  return out;
}

std::vector<std::uint8_t> write_hypnogram(const std::vector<HypnogramEntry>& entries,
                                          double record_duration_s) {
  std::string text = "+0\x14\x14";
  text.push_back('\x00');
  for (const auto& e : entries) {
    text += "+" + fmt_double(e.onset_s);
    text += '\x15';
    text += fmt_double(e.duration_s);
    text += '\x14';
    text += e.raw_label;
    text += '\x14';
    text.push_back('\x00');
  }
  if (text.size() % 2 != 0) text.push_back('\x00');

  EdfHeader h;
  h.version = "0";
  h.reserved = "EDF+C";
  h.n_data_records = 1;
  h.record_duration_s = record_duration_s;
  SignalMeta m;
  m.label = "EDF Annotations";
  m.physical_min = 0.0;
  m.physical_max = 1.0;
  m.digital_min = -32768;
  m.digital_max = 32767;
  m.samples_per_record = static_cast<int>(text.size() / 2);
  h.signals.push_back(m);

  std::vector<std::int16_t> digital;
  digital.reserve(text.size() / 2);
  for (std::size_t i = 0; i < text.size(); i += 2) {
    const auto lo = static_cast<std::uint8_t>(text[i]);
    const auto hi = static_cast<std::uint8_t>(text[i + 1]);
    digital.push_back(static_cast<std::int16_t>(static_cast<std::uint16_t>(lo) |
                                                (static_cast<std::uint16_t>(hi) << 8)));
  }
  return write_edf(h, {digital});
}

std::vector<std::uint8_t> read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw EdfError("cannot open " + path);
  return std::vector<std::uint8_t>(std::istreambuf_iterator<char>(in), {});
}

void write_file(const std::string& path, std::span<const std::uint8_t> bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw EdfError("cannot open " + path + " for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

}  // namespace mvitime::edf
