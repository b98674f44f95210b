#pragma once

#include <array>
#include <cmath>
#include <compare>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_set>
#include <utility>
#include <vector>

#include <json.hpp>

#include "airglyph/errors.hpp"

namespace airglyph {

constexpr int kAlphabetSize = 26;

/// One of the 26 uppercase Latin letters, ordinal(A)=0 .. ordinal(Z)=25.
class LetterLabel {
 public:
  static std::optional<LetterLabel> try_from_char(char c) {
    if (c >= 'a' && c <= 'z') c = static_cast<char>(c - 'a' + 'A');
    if (c < 'A' || c > 'Z') return std::nullopt;
    return LetterLabel(static_cast<std::uint8_t>(c - 'A'));
  }

  static LetterLabel from_char(char c) {
    const auto l = try_from_char(c);
    if (!l) throw ValidationError(std::string("not a letter A-Z: '") + c + "'");
    return *l;
  }

  static LetterLabel from_ordinal(int i) {
    if (i < 0 || i >= kAlphabetSize) {
      throw ValidationError("letter ordinal out of range: " + std::to_string(i));
    }
    return LetterLabel(static_cast<std::uint8_t>(i));
  }

  static std::array<LetterLabel, kAlphabetSize> all() {
    std::array<LetterLabel, kAlphabetSize> out{};
    for (int i = 0; i < kAlphabetSize; ++i) out[i] = LetterLabel(static_cast<std::uint8_t>(i));
    return out;
  }

  LetterLabel() = default;
  char to_char() const { return static_cast<char>('A' + ord_); }
  int ordinal() const { return ord_; }
  std::string str() const { return std::string(1, to_char()); }

  auto operator<=>(const LetterLabel&) const = default;

 private:
  explicit LetterLabel(std::uint8_t ord) : ord_(ord) {}
  std::uint8_t ord_ = 0;
};

enum class WritingMode { Flat2D, MidAir3D };

inline std::string_view to_string(WritingMode m) {
  return m == WritingMode::Flat2D ? "2D" : "3D";
}

inline WritingMode mode_from_string(std::string_view s) {
  if (s == "2D") return WritingMode::Flat2D;
  if (s == "3D") return WritingMode::MidAir3D;
  throw ValidationError("unknown writing mode: '" + std::string(s) + "' (expected \"2D\" or \"3D\")");
}

/// One (ax, ay, az) acceleration sample in m/s^2.
using Sample = std::array<double, 3>;

/// A single labeled letter-writing capture.
struct Recording {
  std::string id;
  std::string subject;
  WritingMode mode = WritingMode::Flat2D;
  LetterLabel letter;
  double rate_hz = 0.0;
  std::vector<Sample> samples;

  double duration_s() const { return static_cast<double>(samples.size()) / rate_hz; }

  void validate() const {
    if (id.empty()) throw ValidationError("recording has empty id");
    if (subject.empty()) throw ValidationError("recording '" + id + "': empty subject");
    if (!(rate_hz > 0.0)) throw ValidationError("recording '" + id + "': rate_hz must be > 0");
    if (samples.empty()) throw ValidationError("recording '" + id + "': no samples");
    for (const auto& s : samples) {
      for (const double v : s) {
        if (!std::isfinite(v)) throw ValidationError("recording '" + id + "': non-finite sample");
      }
    }
  }

  bool operator==(const Recording&) const = default;
};

struct Dataset {
  std::vector<Recording> recordings;
  std::string provenance;

  void validate() const {
    std::unordered_set<std::string> ids;
    for (const auto& r : recordings) {
      r.validate();
      if (!ids.insert(r.id).second) {
        throw ValidationError("duplicate recording id: '" + r.id + "'");
      }
    }
  }

  std::vector<std::string> subjects() const {
    std::vector<std::string> out;
    for (const auto& r : recordings) {
      bool seen = false;
      for (const auto& s : out) seen = seen || s == r.subject;
      if (!seen) out.push_back(r.subject);
    }
    return out;
  }
};

struct SplitSpec {
  std::string train_subject;
  std::string test_subject;

  void validate() const {
    if (train_subject == test_subject) {
      throw ValidationError("train and test subject must differ (got '" + train_subject + "')");
    }
  }
};

namespace detail {

// Fixed-point rendering with signed zero suppressed; storage precision is
// 6 fractional digits so that prompt-layer rounding stays a separate choice.
inline std::string format_fixed(double v, int decimals) {
  char buf[512];
  std::snprintf(buf, sizeof(buf), "%.*f", decimals, v);
  std::string s(buf);
  if (s[0] == '-') {
    bool all_zero = true;
    for (std::size_t i = 1; i < s.size(); ++i) {
      if (s[i] != '0' && s[i] != '.') {
        all_zero = false;
        break;
      }
    }
    if (all_zero) s.erase(0, 1);
  }
  return s;
}

inline std::string json_string(const std::string& s) { return nlohmann::json(s).dump(); }

}  // namespace detail

constexpr int kStorageDecimals = 6;

inline std::string recording_to_line(const Recording& r) {
  std::ostringstream os;
  os << "{\"id\":" << detail::json_string(r.id)
     << ",\"subject\":" << detail::json_string(r.subject)
     << ",\"mode\":\"" << to_string(r.mode) << "\""
     << ",\"letter\":\"" << r.letter.to_char() << "\""
     << ",\"rate_hz\":" << detail::format_fixed(r.rate_hz, kStorageDecimals)
     << ",\"samples\":[";
  for (std::size_t i = 0; i < r.samples.size(); ++i) {
    if (i) os << ',';
    os << '[' << detail::format_fixed(r.samples[i][0], kStorageDecimals) << ','
       << detail::format_fixed(r.samples[i][1], kStorageDecimals) << ','
       << detail::format_fixed(r.samples[i][2], kStorageDecimals) << ']';
  }
  os << "]}";
  return os.str();
}

inline Recording recording_from_json(const nlohmann::json& j, std::size_t record_index) {
  const auto fail = [&](const std::string& field, const std::string& why) -> void {
    throw ValidationError("record " + std::to_string(record_index) + ": field '" + field + "' " + why);
  };
  Recording r;
  if (!j.is_object()) throw ValidationError("record " + std::to_string(record_index) + ": not an object");
  for (const char* f : {"id", "subject", "mode", "letter", "rate_hz", "samples"}) {
    if (!j.contains(f)) fail(f, "missing");
  }
  if (!j["id"].is_string()) fail("id", "must be a string");
  r.id = j["id"].get<std::string>();
  if (!j["subject"].is_string()) fail("subject", "must be a string");
  r.subject = j["subject"].get<std::string>();
  if (!j["mode"].is_string()) fail("mode", "must be a string");
  r.mode = mode_from_string(j["mode"].get<std::string>());
  if (!j["letter"].is_string() || j["letter"].get<std::string>().size() != 1) {
    fail("letter", "must be a single character A-Z");
  }
  r.letter = LetterLabel::from_char(j["letter"].get<std::string>()[0]);
  if (!j["rate_hz"].is_number()) fail("rate_hz", "must be a number");
  r.rate_hz = j["rate_hz"].get<double>();
  if (!j["samples"].is_array()) fail("samples", "must be an array");
  for (const auto& s : j["samples"]) {
    if (!s.is_array() || s.size() != 3) fail("samples", "entries must be [ax,ay,az] triples");
    Sample v{};
    for (int a = 0; a < 3; ++a) {
      if (!s[a].is_number()) fail("samples", "components must be numbers");
      v[a] = s[a].get<double>();
    }
    r.samples.push_back(v);
  }
  return r;
}

/// Loads a line-delimited dataset file. An optional leading header object
/// (no "id" field) carries the dataset provenance.
inline Dataset load_dataset(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open dataset file: " + path.string());
  Dataset ds;
  std::string line;
  std::size_t record_index = 0;
  bool first = true;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    nlohmann::json j = nlohmann::json::parse(line, nullptr, false);
    if (j.is_discarded()) {
      throw ValidationError("record " + std::to_string(record_index) + ": invalid JSON");
    }
    if (first && j.is_object() && !j.contains("id")) {
      if (j.contains("provenance") && j["provenance"].is_string()) {
        ds.provenance = j["provenance"].get<std::string>();
      }
      first = false;
      continue;
    }
    first = false;
    ds.recordings.push_back(recording_from_json(j, record_index));
    ++record_index;
  }
  ds.validate();
  return ds;
}

inline void save_dataset(const Dataset& ds, const std::filesystem::path& path) {
  ds.validate();
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write dataset file: " + path.string());
  if (!ds.provenance.empty()) {
    out << "{\"provenance\":" << detail::json_string(ds.provenance) << "}\n";
  }
  for (const auto& r : ds.recordings) {
    out << recording_to_line(r) << '\n';
  }
  if (!out) throw IoError("write failed: " + path.string());
}

inline std::pair<Dataset, Dataset> split_by_subject(const Dataset& ds, const SplitSpec& spec) {
  spec.validate();
  bool train_seen = false;
  bool test_seen = false;
  for (const auto& r : ds.recordings) {
    train_seen = train_seen || r.subject == spec.train_subject;
    test_seen = test_seen || r.subject == spec.test_subject;
  }
  if (!train_seen) throw ValidationError("unknown subject id: '" + spec.train_subject + "'");
  if (!test_seen) throw ValidationError("unknown subject id: '" + spec.test_subject + "'");
  Dataset train;
  Dataset test;
  train.provenance = ds.provenance;
  test.provenance = ds.provenance;
  for (const auto& r : ds.recordings) {
    if (r.subject == spec.train_subject) train.recordings.push_back(r);
    if (r.subject == spec.test_subject) test.recordings.push_back(r);
  }
  return {std::move(train), std::move(test)};
}

/// Keeps only recordings of the given mode.
inline Dataset filter_mode(const Dataset& ds, WritingMode mode) {
  Dataset out;
  out.provenance = ds.provenance;
  for (const auto& r : ds.recordings) {
    if (r.mode == mode) out.recordings.push_back(r);
  }
  return out;
}

}  // namespace airglyph
