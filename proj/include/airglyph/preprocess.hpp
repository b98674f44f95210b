#pragma once

#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <string>
#include <string_view>
#include <vector>

#include "airglyph/core_data.hpp"
#include "airglyph/errors.hpp"

namespace airglyph {

constexpr std::size_t kDefaultWindowLen = 128;

/// Fixed-length T x 3 acceleration matrix, optionally z-scored per axis.
struct Window {
  std::vector<Sample> values;
  bool normalized = false;

  std::size_t length() const { return values.size(); }
};

struct Polyline3 {
  std::vector<Sample> points;
};

/// Linear interpolation onto target_len uniformly spaced points spanning the
/// recording. Endpoints are preserved exactly.
inline Window resample(const Recording& rec, std::size_t target_len) {
  rec.validate();
  if (target_len < 2) throw ValidationError("resample target_len must be >= 2");
  if (rec.samples.size() < 2) throw ValidationError("resample needs a recording with >= 2 samples");
  const std::size_t n = rec.samples.size();
  Window w;
  w.values.resize(target_len);
  for (std::size_t j = 0; j < target_len; ++j) {
    const double t = static_cast<double>(j) * static_cast<double>(n - 1) /
                     static_cast<double>(target_len - 1);
    const auto lo = static_cast<std::size_t>(t);
    const std::size_t hi = lo + 1 < n ? lo + 1 : lo;
    const double f = t - static_cast<double>(lo);
    for (int a = 0; a < 3; ++a) {
      w.values[j][a] = rec.samples[lo][a] + f * (rec.samples[hi][a] - rec.samples[lo][a]);
    }
  }
  return w;
}

/// Per-axis z-score (population std). Constant axes map to all zeros.
inline Window normalize(Window w) {
  const std::size_t n = w.length();
  if (n == 0) throw ValidationError("cannot normalize an empty window");
  for (int a = 0; a < 3; ++a) {
    double mean = 0.0;
    for (const auto& v : w.values) mean += v[a];
    mean /= static_cast<double>(n);
    double var = 0.0;
    for (const auto& v : w.values) {
      const double d = v[a] - mean;
      var += d * d;
    }
    var /= static_cast<double>(n);
    const double std = std::sqrt(var);
    if (std < 1e-12) {
      for (auto& v : w.values) v[a] = 0.0;
    } else {
      for (auto& v : w.values) v[a] = (v[a] - mean) / std;
    }
  }
  w.normalized = true;
  return w;
}

/// The standard model-input chain: resample to fixed length, then z-score.
inline Window standard_window(const Recording& rec, std::size_t target_len = kDefaultWindowLen) {
  return normalize(resample(rec, target_len));
}

/// Pseudo-text grammar: line 1 is `t,ax,ay,az`; line i+2 is
/// `<i>,<f>,<f>,<f>` with fixed-point numbers of `decimals` fractional
/// digits. Signed zero is rendered without sign.
inline std::string serialize_pseudo_text(const Window& w, int decimals = 3) {
  std::string out = "t,ax,ay,az\n";
  for (std::size_t i = 0; i < w.values.size(); ++i) {
    out += std::to_string(i);
    for (int a = 0; a < 3; ++a) {
      out += ',';
      out += detail::format_fixed(w.values[i][a], decimals);
    }
    out += '\n';
  }
  return out;
}

inline Window parse_pseudo_text(std::string_view text) {
  Window w;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  const auto fail = [&](const std::string& why) -> void {
    throw ValidationError("pseudo-text line " + std::to_string(line_no) + ": " + why);
  };
  while (pos < text.size()) {
    std::size_t eol = text.find('\n', pos);
    if (eol == std::string_view::npos) eol = text.size();
    const std::string_view line = text.substr(pos, eol - pos);
    pos = eol + 1;
    ++line_no;
    if (line.empty()) continue;
    if (line_no == 1) {
      if (line != "t,ax,ay,az") fail("expected header 't,ax,ay,az'");
      continue;
    }
    Sample s{};
    int field = 0;
    std::size_t start = 0;
    for (std::size_t i = 0; i <= line.size(); ++i) {
      if (i == line.size() || line[i] == ',') {
        const std::string token(line.substr(start, i - start));
        if (token.empty()) fail("empty field");
        char* end = nullptr;
        const double v = std::strtod(token.c_str(), &end);
        if (end != token.c_str() + token.size()) fail("malformed number '" + token + "'");
        if (field >= 1 && field <= 3) s[field - 1] = v;
        if (field > 3) fail("too many fields");
        ++field;
        start = i + 1;
      }
    }
    if (field != 4) fail("expected 4 comma-separated fields");
    w.values.push_back(s);
  }
  if (line_no == 0) throw ValidationError("pseudo-text is empty");
  if (w.values.empty()) throw ValidationError("pseudo-text has no data lines");
  return w;
}

/// Subtracts the line through the first and last points (per axis).
inline void detrend_linear(std::vector<Sample>& pts) {
  if (pts.size() < 2) return;
  const std::size_t n = pts.size();
  const Sample first = pts.front();
  const Sample last = pts.back();
  for (std::size_t i = 0; i < n; ++i) {
    const double f = static_cast<double>(i) / static_cast<double>(n - 1);
    for (int a = 0; a < 3; ++a) {
      pts[i][a] -= first[a] + f * (last[a] - first[a]);
    }
  }
}

/// Double trapezoidal integration with zero initial velocity and position.
inline std::vector<Sample> integrate_twice(const Recording& rec) {
  const double dt = 1.0 / rec.rate_hz;
  const std::size_t n = rec.samples.size();
  std::vector<Sample> pos(n);
  Sample v{0.0, 0.0, 0.0};
  Sample p{0.0, 0.0, 0.0};
  pos[0] = p;
  for (std::size_t i = 1; i < n; ++i) {
    for (int a = 0; a < 3; ++a) {
      const double v_next = v[a] + 0.5 * dt * (rec.samples[i - 1][a] + rec.samples[i][a]);
      p[a] += 0.5 * dt * (v[a] + v_next);
      v[a] = v_next;
    }
    pos[i] = p;
  }
  return pos;
}

/// Trajectory reconstruction: double integration followed by an
/// endpoint-anchored linear detrend of position.
inline Polyline3 reconstruct_trajectory(const Recording& rec) {
  rec.validate();
  std::vector<Sample> pos = integrate_twice(rec);
  detrend_linear(pos);
  return {std::move(pos)};
}

}  // namespace airglyph
