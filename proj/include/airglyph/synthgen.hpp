#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "airglyph/core_data.hpp"
#include "airglyph/errors.hpp"
#include "airglyph/rng.hpp"

namespace airglyph {

struct Point2 {
  double x = 0.0;
  double y = 0.0;
};

/// Stroke decomposition of one letter, points in the unit square, y up.
struct LetterTemplate {
  LetterLabel letter;
  std::vector<std::vector<Point2>> strokes;
};

enum class SpeedProfile { MinimumJerk, ConstantVelocity };

struct KinematicsConfig {
  double duration_s = 2.0;
  double rate_hz = 100.0;
  SpeedProfile profile = SpeedProfile::MinimumJerk;

  void validate() const {
    if (!(duration_s > 0.0)) throw ConfigError("duration_s must be > 0");
    if (!(rate_hz > 0.0)) throw ConfigError("rate_hz must be > 0");
    if (duration_s * rate_hz < 16.0) throw ConfigError("duration_s * rate_hz must be >= 16 samples");
  }
};

struct NoiseConfig {
  double accel_sigma = 0.0;      // additive white noise, m/s^2
  double scale_jitter = 0.0;     // multiplicative size variation, +/- fraction
  double rot_jitter_deg = 0.0;   // in-plane rotation range, +/- degrees
  double tilt_deg = 0.0;         // writing-plane tilt range, 3D only
  double depth_wobble_amp = 0.0; // out-of-plane sinusoid amplitude, unit-square fraction, 3D only
  double scale_bias = 1.0;       // per-subject systematic size offset
  double rot_bias_deg = 0.0;     // per-subject systematic rotation offset
  bool shuffle_stroke_order = false;

  void validate() const {
    if (accel_sigma < 0 || scale_jitter < 0 || rot_jitter_deg < 0 || tilt_deg < 0 ||
        depth_wobble_amp < 0) {
      throw ConfigError("noise config fields must be >= 0");
    }
  }
};

struct GenSpec {
  std::vector<std::string> subjects;
  int reps_per_letter = 10;
  std::vector<WritingMode> modes;
  KinematicsConfig kinematics;
  std::map<std::string, NoiseConfig> noise;  // per subject
  std::uint64_t seed = 42;

  void validate() const {
    if (subjects.empty()) throw ConfigError("gen spec needs at least one subject");
    if (reps_per_letter < 1) throw ConfigError("reps_per_letter must be >= 1");
    if (modes.empty()) throw ConfigError("gen spec needs at least one writing mode");
    kinematics.validate();
    for (const auto& s : subjects) {
      const auto it = noise.find(s);
      if (it == noise.end()) throw ConfigError("no noise config for subject '" + s + "'");
      it->second.validate();
    }
  }

  static GenSpec defaults() {
    GenSpec spec;
    spec.subjects = {"s01", "s02"};
    spec.reps_per_letter = 10;
    spec.modes = {WritingMode::Flat2D, WritingMode::MidAir3D};
    NoiseConfig n1;
    n1.accel_sigma = 1.2;
    n1.scale_jitter = 0.15;
    n1.rot_jitter_deg = 12.0;
    n1.tilt_deg = 16.0;
    n1.depth_wobble_amp = 0.10;
    NoiseConfig n2 = n1;
    n2.accel_sigma = 1.5;
    n2.scale_jitter = 0.18;
    n2.rot_jitter_deg = 14.0;
    n2.tilt_deg = 20.0;
    n2.depth_wobble_amp = 0.14;
    n2.scale_bias = 0.85;
    n2.rot_bias_deg = 14.0;
    spec.noise = {{"s01", n1}, {"s02", n2}};
    return spec;
  }
};

namespace synth_detail {

constexpr double kPi = 3.14159265358979323846;
constexpr double kLetterSizeM = 0.15;  // unit square edge in meters

inline std::vector<Point2> arc(double cx, double cy, double rx, double ry, double deg0,
                               double deg1, int n = 0) {
  if (n <= 0) n = std::max(8, static_cast<int>(std::abs(deg1 - deg0) / 15.0));
  std::vector<Point2> pts;
  pts.reserve(static_cast<std::size_t>(n) + 1);
  for (int i = 0; i <= n; ++i) {
    const double a = (deg0 + (deg1 - deg0) * i / n) * kPi / 180.0;
    pts.push_back({cx + rx * std::cos(a), cy + ry * std::sin(a)});
  }
  return pts;
}

inline std::vector<Point2> cat(std::vector<Point2> a, const std::vector<Point2>& b) {
  a.insert(a.end(), b.begin(), b.end());
  return a;
}

inline std::vector<LetterTemplate> build_templates() {
  std::vector<LetterTemplate> t(kAlphabetSize);
  const auto set = [&](char c, std::vector<std::vector<Point2>> strokes) {
    const auto l = LetterLabel::from_char(c);
    t[static_cast<std::size_t>(l.ordinal())] = LetterTemplate{l, std::move(strokes)};
  };
  set('A', {{{0.05, 0}, {0.5, 1}, {0.95, 0}}, {{0.22, 0.4}, {0.78, 0.4}}});
  set('B', {{{0.12, 0}, {0.12, 1}},
            cat(arc(0.12, 0.76, 0.34, 0.24, 90, -90), arc(0.12, 0.26, 0.38, 0.26, 90, -90))});
  set('C', {arc(0.55, 0.5, 0.42, 0.48, 55, 305)});
  set('D', {{{0.12, 1}, {0.12, 0}}, arc(0.12, 0.5, 0.62, 0.5, 90, -90)});
  set('E', {{{0.85, 1}, {0.15, 1}, {0.15, 0}, {0.85, 0}}, {{0.15, 0.5}, {0.7, 0.5}}});
  set('F', {{{0.85, 1}, {0.15, 1}, {0.15, 0}}, {{0.15, 0.5}, {0.68, 0.5}}});
  set('G', {cat(arc(0.5, 0.5, 0.42, 0.46, 55, 330), {{0.56, 0.27}})});
  set('H', {{{0.12, 1}, {0.12, 0}}, {{0.88, 1}, {0.88, 0}}, {{0.12, 0.5}, {0.88, 0.5}}});
  set('I', {{{0.5, 1}, {0.5, 0}}});
  set('J', {cat({{0.62, 1.0}}, arc(0.41, 0.28, 0.21, 0.26, 0, -180))});
  set('K', {{{0.14, 1}, {0.14, 0}}, {{0.82, 1}, {0.16, 0.48}, {0.86, 0}}});
  set('L', {{{0.15, 1}, {0.15, 0}}, {{0.15, 0}, {0.85, 0}}});
  set('M', {{{0.06, 0}, {0.08, 1}, {0.5, 0.3}, {0.92, 1}, {0.94, 0}}});
  set('N', {{{0.12, 0}, {0.12, 1}, {0.88, 0}, {0.88, 1}}});
  set('O', {arc(0.5, 0.5, 0.4, 0.47, 90, 450, 28)});
  set('P', {{{0.14, 0}, {0.14, 1}}, arc(0.14, 0.74, 0.4, 0.26, 90, -90)});
  set('Q', {arc(0.5, 0.55, 0.38, 0.42, 90, 450, 28), {{0.62, 0.3}, {0.9, 0.02}}});
  set('R', {{{0.14, 0}, {0.14, 1}}, cat(arc(0.14, 0.75, 0.4, 0.25, 90, -90), {{0.8, 0.0}})});
  set('S', {{{0.82, 0.88},
             {0.66, 0.99},
             {0.4, 1.0},
             {0.2, 0.9},
             {0.16, 0.72},
             {0.3, 0.57},
             {0.55, 0.48},
             {0.74, 0.38},
             {0.8, 0.22},
             {0.72, 0.07},
             {0.5, 0.0},
             {0.28, 0.03},
             {0.16, 0.14}}});
  set('T', {{{0.1, 1}, {0.9, 1}}, {{0.5, 1}, {0.5, 0}}});
  set('U', {cat(cat({{0.12, 1.0}}, arc(0.5, 0.34, 0.38, 0.32, 180, 360)), {{0.88, 1.0}})});
  set('V', {{{0.08, 1}, {0.5, 0}, {0.92, 1}}});
  set('W', {{{0.04, 1}, {0.26, 0}, {0.5, 0.64}, {0.74, 0}, {0.96, 1}}});
  set('X', {{{0.14, 0.98}, {0.86, 0.02}}, {{0.86, 0.98}, {0.14, 0.02}}});
  set('Y', {{{0.1, 1}, {0.5, 0.52}, {0.9, 1}}, {{0.5, 0.52}, {0.5, 0}}});
  set('Z', {{{0.1, 1}, {0.9, 1}, {0.1, 0}, {0.9, 0}}});
  return t;
}

// Chaikin corner cutting. Interior polyline corners are traversed at speed,
// so rounding them keeps the second derivative bounded.
inline std::vector<Point2> chaikin(const std::vector<Point2>& pts, int iterations) {
  std::vector<Point2> cur = pts;
  for (int it = 0; it < iterations && cur.size() >= 3; ++it) {
    std::vector<Point2> next;
    next.reserve(cur.size() * 2);
    next.push_back(cur.front());
    for (std::size_t i = 0; i + 1 < cur.size(); ++i) {
      const Point2& a = cur[i];
      const Point2& b = cur[i + 1];
      next.push_back({0.75 * a.x + 0.25 * b.x, 0.75 * a.y + 0.25 * b.y});
      next.push_back({0.25 * a.x + 0.75 * b.x, 0.25 * a.y + 0.75 * b.y});
    }
    next.push_back(cur.back());
    cur = std::move(next);
  }
  return cur;
}

inline double minjerk(double tau) {
  const double t3 = tau * tau * tau;
  return t3 * (10.0 + tau * (-15.0 + 6.0 * tau));
}

struct Segment {
  std::vector<Point2> pts;
  std::vector<double> cum_len;  // cumulative arc length, cum_len[0] = 0
  double length = 0.0;
  bool penup = false;

  void finish() {
    cum_len.assign(pts.size(), 0.0);
    for (std::size_t i = 1; i < pts.size(); ++i) {
      const double dx = pts[i].x - pts[i - 1].x;
      const double dy = pts[i].y - pts[i - 1].y;
      cum_len[i] = cum_len[i - 1] + std::sqrt(dx * dx + dy * dy);
    }
    length = cum_len.back();
  }

  Point2 at_arclen(double s) const {
    if (s <= 0.0) return pts.front();
    if (s >= length) return pts.back();
    std::size_t lo = 0;
    std::size_t hi = pts.size() - 1;
    while (hi - lo > 1) {
      const std::size_t mid = (lo + hi) / 2;
      if (cum_len[mid] <= s) {
        lo = mid;
      } else {
        hi = mid;
      }
    }
    const double seg = cum_len[hi] - cum_len[lo];
    const double f = seg > 0.0 ? (s - cum_len[lo]) / seg : 0.0;
    return {pts[lo].x + f * (pts[hi].x - pts[lo].x), pts[lo].y + f * (pts[hi].y - pts[lo].y)};
  }
};

}  // namespace synth_detail

inline const LetterTemplate& template_for(LetterLabel letter) {
  static const std::vector<LetterTemplate> table = synth_detail::build_templates();
  return table[static_cast<std::size_t>(letter.ordinal())];
}

/// Ground-truth positions (pre-noise, meters) alongside the synthesized recording.
struct SynthTrace {
  std::vector<Sample> positions;
  Recording recording;
};

inline SynthTrace synth_recording_styled(LetterLabel letter, WritingMode mode,
                                         const KinematicsConfig& kin, const NoiseConfig& noise,
                                         Rng& style_rng, Rng& noise_rng) {
  using namespace synth_detail;
  kin.validate();
  noise.validate();

  // Jitter draws happen unconditionally so 2D/3D share the stream layout.
  const double scale =
      noise.scale_bias * (1.0 + style_rng.uniform(-noise.scale_jitter, noise.scale_jitter));
  const double rot = (noise.rot_bias_deg +
                      style_rng.uniform(-noise.rot_jitter_deg, noise.rot_jitter_deg)) * kPi / 180.0;
  const double tilt = style_rng.uniform(-noise.tilt_deg, noise.tilt_deg) * kPi / 180.0;
  const double wobble_phase = style_rng.uniform(0.0, 2.0 * kPi);
  const double wobble_cycles = 1.0 + static_cast<double>(style_rng.below(3));

  const LetterTemplate& tpl = template_for(letter);
  std::vector<std::size_t> order(tpl.strokes.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  if (noise.shuffle_stroke_order) style_rng.shuffle(order.begin(), order.end());

  const double cr = std::cos(rot);
  const double sr = std::sin(rot);
  std::vector<std::vector<Point2>> strokes;
  strokes.reserve(tpl.strokes.size());
  for (const std::size_t si : order) {
    std::vector<Point2> s = chaikin(tpl.strokes[si], 2);
    for (auto& p : s) {
      const double dx = (p.x - 0.5) * scale;
      const double dy = (p.y - 0.5) * scale;
      p = {dx * cr - dy * sr, dx * sr + dy * cr};
    }
    strokes.push_back(std::move(s));
  }

  // Strokes plus pen-up connectors, each traversed with the speed profile.
  std::vector<Segment> segs;
  for (std::size_t i = 0; i < strokes.size(); ++i) {
    if (i > 0) {
      Segment gap;
      gap.pts = {strokes[i - 1].back(), strokes[i].front()};
      gap.penup = true;
      gap.finish();
      if (gap.length > 1e-9) segs.push_back(std::move(gap));
    }
    Segment s;
    s.pts = strokes[i];
    s.finish();
    segs.push_back(std::move(s));
  }

  double total_w = 0.0;
  for (const auto& s : segs) total_w += s.penup ? 0.5 * s.length : s.length;
  std::vector<double> t_end(segs.size());
  double acc = 0.0;
  for (std::size_t i = 0; i < segs.size(); ++i) {
    acc += kin.duration_s * (segs[i].penup ? 0.5 * segs[i].length : segs[i].length) / total_w;
    t_end[i] = acc;
  }
  t_end.back() = kin.duration_s;

  const auto n = static_cast<std::size_t>(std::lround(kin.duration_s * kin.rate_hz));
  const double dt = 1.0 / kin.rate_hz;
  std::vector<Sample> pos(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double t = std::min(static_cast<double>(i) * dt, kin.duration_s);
    std::size_t si = 0;
    while (si + 1 < segs.size() && t > t_end[si]) ++si;
    const double t0 = si == 0 ? 0.0 : t_end[si - 1];
    const double span = t_end[si] - t0;
    const double tau = span > 0.0 ? std::clamp((t - t0) / span, 0.0, 1.0) : 1.0;
    const double s = kin.profile == SpeedProfile::MinimumJerk ? minjerk(tau) : tau;
    const Point2 p = segs[si].at_arclen(s * segs[si].length);

    double x = p.x * kLetterSizeM;
    double y = p.y * kLetterSizeM;
    double z = 0.0;
    if (mode == WritingMode::MidAir3D) {
      const double prog = t / kin.duration_s;
      z = noise.depth_wobble_amp * kLetterSizeM *
          std::sin(2.0 * kPi * wobble_cycles * prog + wobble_phase);
      const double ct = std::cos(tilt);
      const double st = std::sin(tilt);
      const double y2 = y * ct - z * st;
      const double z2 = y * st + z * ct;
      y = y2;
      z = z2;
    }
    pos[i] = {x, y, z};
  }

  Recording rec;
  rec.id = "synth-" + letter.str() + "-" + std::string(to_string(mode));
  rec.subject = "synthetic";
  rec.mode = mode;
  rec.letter = letter;
  rec.rate_hz = kin.rate_hz;
  rec.samples.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    if (i == 0 || i + 1 == n) {
      rec.samples[i] = {0.0, 0.0, 0.0};  // pen at rest at both ends
    } else {
      for (int a = 0; a < 3; ++a) {
        rec.samples[i][a] = (pos[i + 1][a] - 2.0 * pos[i][a] + pos[i - 1][a]) / (dt * dt);
      }
    }
  }
  if (noise.accel_sigma > 0.0) {
    for (auto& s : rec.samples) {
      for (int a = 0; a < 3; ++a) s[a] += noise_rng.gaussian(0.0, noise.accel_sigma);
    }
  }
  return {std::move(pos), std::move(rec)};
}

inline SynthTrace synth_recording_traced(LetterLabel letter, WritingMode mode,
                                         const KinematicsConfig& kin, const NoiseConfig& noise,
                                         std::uint64_t seed) {
  Rng rng(seed);
  SynthTrace t = synth_recording_styled(letter, mode, kin, noise, rng, rng);
  t.recording.id += "-" + std::to_string(seed);
  return t;
}

inline Recording synth_recording(LetterLabel letter, WritingMode mode, const KinematicsConfig& kin,
                                 const NoiseConfig& noise, std::uint64_t seed) {
  return synth_recording_traced(letter, mode, kin, noise, seed).recording;
}

inline std::uint64_t recording_seed(std::uint64_t master, const std::string& subject,
                                    LetterLabel letter, WritingMode mode, int rep) {
  std::uint64_t h = hash_mix(master, subject);
  h = hash_mix(h, static_cast<std::uint64_t>(letter.ordinal()));
  h = hash_mix(h, static_cast<std::uint64_t>(mode == WritingMode::MidAir3D ? 1 : 0));
  h = hash_mix(h, static_cast<std::uint64_t>(rep));
  return seed_finalize(h);
}

inline Dataset synth_dataset(const GenSpec& spec) {
  spec.validate();
  Dataset ds;
  ds.provenance = "synthgen seed=" + std::to_string(spec.seed);
  for (const auto& subject : spec.subjects) {
    const NoiseConfig& noise = spec.noise.at(subject);
    for (const WritingMode mode : spec.modes) {
      for (const LetterLabel letter : LetterLabel::all()) {
        for (int rep = 0; rep < spec.reps_per_letter; ++rep) {
          const std::uint64_t seed = recording_seed(spec.seed, subject, letter, mode, rep);
          Recording rec = synth_recording(letter, mode, spec.kinematics, noise, seed);
          char repbuf[16];
          std::snprintf(repbuf, sizeof(repbuf), "r%02d", rep);
          rec.id = subject + "-" + std::string(to_string(mode)) + "-" + letter.str() + "-" + repbuf;
          rec.subject = subject;
          ds.recordings.push_back(std::move(rec));
        }
      }
    }
  }
  return ds;
}

}  // namespace airglyph
