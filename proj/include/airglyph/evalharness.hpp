#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "airglyph/classify.hpp"
#include "airglyph/core_data.hpp"
#include "airglyph/errors.hpp"
#include "airglyph/rng.hpp"
#include "airglyph/synthgen.hpp"
#include "airglyph/worddecode.hpp"

namespace airglyph {

using MaybeLetter = std::optional<LetterLabel>;

struct Metrics {
  double accuracy = 0.0;
  double macro_f1 = 0.0;
  std::size_t n = 0;
};

/// Accuracy and macro F1. A missing prediction counts as wrong; classes
/// absent from both truths and predictions are excluded from the macro
/// average; per-class F1 is 0 when precision + recall is 0.
inline Metrics compute_metrics(const std::vector<MaybeLetter>& preds,
                               const std::vector<LetterLabel>& truths) {
  if (preds.size() != truths.size()) throw ValidationError("preds/truths length mismatch");
  if (preds.empty()) throw ValidationError("compute_metrics on empty inputs");

  std::array<std::uint64_t, kAlphabetSize> tp{}, fp{}, fn{};
  std::size_t correct = 0;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    const int t = truths[i].ordinal();
    if (preds[i] && *preds[i] == truths[i]) {
      ++correct;
      ++tp[t];
    } else {
      ++fn[t];
      if (preds[i]) ++fp[preds[i]->ordinal()];
    }
  }
  double f1_sum = 0.0;
  std::size_t classes = 0;
  for (int c = 0; c < kAlphabetSize; ++c) {
    if (tp[c] + fp[c] + fn[c] == 0) continue;  // absent from truths and preds
    ++classes;
    const double denom_p = static_cast<double>(tp[c] + fp[c]);
    const double denom_r = static_cast<double>(tp[c] + fn[c]);
    const double precision = denom_p > 0 ? tp[c] / denom_p : 0.0;
    const double recall = denom_r > 0 ? tp[c] / denom_r : 0.0;
    f1_sum += precision + recall > 0 ? 2.0 * precision * recall / (precision + recall) : 0.0;
  }
  return {static_cast<double>(correct) / static_cast<double>(preds.size()),
          classes > 0 ? f1_sum / static_cast<double>(classes) : 0.0, preds.size()};
}

inline ConfusionMatrix confusion(const std::vector<MaybeLetter>& preds,
                                 const std::vector<LetterLabel>& truths) {
  if (preds.size() != truths.size()) throw ValidationError("preds/truths length mismatch");
  ConfusionMatrix m;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    const auto t = static_cast<std::size_t>(truths[i].ordinal());
    if (preds[i]) {
      m.counts[t][static_cast<std::size_t>(preds[i]->ordinal())] += 1;
    } else {
      m.no_letter[t] += 1;
    }
  }
  return m;
}

using LetterPredictor = std::function<MaybeLetter(const Recording&)>;

struct ModeEval {
  Metrics metrics;
  ConfusionMatrix matrix;
};

/// Applies the predictor to every test recording, reported per writing mode.
inline std::map<WritingMode, ModeEval> run_letter_eval(const LetterPredictor& predictor,
                                                       const Dataset& test) {
  test.validate();
  std::map<WritingMode, std::pair<std::vector<MaybeLetter>, std::vector<LetterLabel>>> by_mode;
  for (const auto& r : test.recordings) {
    auto& [preds, truths] = by_mode[r.mode];
    preds.push_back(predictor(r));
    truths.push_back(r.letter);
  }
  std::map<WritingMode, ModeEval> out;
  for (const auto& [mode, pt] : by_mode) {
    out[mode] = {compute_metrics(pt.first, pt.second), confusion(pt.first, pt.second)};
  }
  return out;
}

/// Free-form word writing is sloppier than isolated-letter capture; this is
/// the default profile of the held-out writer drawing words in mid-air.
inline NoiseConfig default_word_noise() {
  NoiseConfig n;
  n.accel_sigma = 0.7;
  n.scale_jitter = 0.117;
  n.rot_jitter_deg = 9.1;
  n.tilt_deg = 13.0;
  n.depth_wobble_amp = 0.091;
  n.scale_bias = 0.85;
  n.rot_bias_deg = 14.0;
  return n;
}

struct WordGridConfig {
  std::size_t words_per_cell = 50;
  std::vector<std::size_t> word_lengths = {3, 4, 5, 6};
  std::vector<std::size_t> sample_counts = {2, 3, 4, 5};  // k
  std::uint64_t seed = 11;
  KinematicsConfig kinematics;
  NoiseConfig noise = default_word_noise();  // the writer whose letters are synthesized
  // Writing a word degrades along its length; noise ranges scale by
  // 1 + fatigue_per_position * position^2.
  double fatigue_per_position = 0.4;
  std::size_t decode_top_n = 1;
};

struct WordGridResult {
  // (word_length, k) -> exact-match accuracy
  std::map<std::pair<std::size_t, std::size_t>, double> cells;

  double mean_for_length(std::size_t len) const {
    double sum = 0.0;
    std::size_t n = 0;
    for (const auto& [key, v] : cells) {
      if (key.first == len) {
        sum += v;
        ++n;
      }
    }
    return n > 0 ? sum / static_cast<double>(n) : 0.0;
  }
};

/// Total letter predictor used inside the word grid.
using GridLetterPredictor = std::function<LetterLabel(const Recording&)>;

/// Optional replacement for the noisy-channel decode (the opt-in LLM path).
using WordDecoder = std::function<std::optional<std::string>(const PositionObservations&)>;

/// For every (length, k) cell: sample words, synthesize k mid-air recordings
/// per letter, predict, then decode against the lexicon. The k repetitions
/// of a position share the writer's momentary style (only the sensor noise
/// re-draws), and later positions are written more sloppily. Deterministic
/// given the seed and a deterministic predictor.
inline WordGridResult run_word_grid(const GridLetterPredictor& predictor, const Lexicon& lexicon,
                                    const ConfusionModel& model, const WordGridConfig& config,
                                    const WordDecoder& decoder = {}) {
  if (config.words_per_cell < 1) throw ConfigError("words_per_cell must be >= 1");
  if (config.fatigue_per_position < 0) throw ConfigError("fatigue_per_position must be >= 0");
  WordGridResult result;
  for (const std::size_t len : config.word_lengths) {
    const auto candidates = lexicon.words_of_length(len);
    if (candidates.empty()) {
      throw ValidationError("lexicon has no words of length " + std::to_string(len));
    }
    for (const std::size_t k : config.sample_counts) {
      Rng rng(seed_finalize(hash_mix(hash_mix(config.seed, len), k)));
      std::size_t hits = 0;
      for (std::size_t wi = 0; wi < config.words_per_cell; ++wi) {
        const std::string& word = candidates[rng.below(candidates.size())];
        PositionObservations obs;
        obs.positions.resize(word.size());
        for (std::size_t p = 0; p < word.size(); ++p) {
          const LetterLabel truth = LetterLabel::from_char(word[p]);
          NoiseConfig pos_noise = config.noise;
          const double fatigue =
              1.0 + config.fatigue_per_position * static_cast<double>(p) * static_cast<double>(p);
          pos_noise.accel_sigma *= fatigue;
          pos_noise.scale_jitter *= fatigue;
          pos_noise.rot_jitter_deg *= fatigue;
          pos_noise.tilt_deg *= fatigue;
          pos_noise.depth_wobble_amp *= fatigue;
          const std::uint64_t style_seed = seed_finalize(
              hash_mix(hash_mix(hash_mix(hash_mix(config.seed, len), k), wi), p));
          for (std::size_t s = 0; s < k; ++s) {
            Rng style_rng(style_seed);
            Rng noise_rng(seed_finalize(hash_mix(style_seed, s + 1)));
            const Recording rec =
                synth_recording_styled(truth, WritingMode::MidAir3D, config.kinematics, pos_noise,
                                       style_rng, noise_rng)
                    .recording;
            obs.positions[p].push_back(predictor(rec));
          }
        }
        if (decoder) {
          const auto hyp = decoder(obs);
          if (hyp && *hyp == word) ++hits;
        } else {
          const auto hyp = decode_word(obs, lexicon, model, config.decode_top_n);
          if (!hyp.empty() && hyp.front().word == word) ++hits;
        }
      }
      result.cells[{len, k}] = static_cast<double>(hits) / static_cast<double>(config.words_per_cell);
    }
  }
  return result;
}

inline nlohmann::ordered_json word_grid_to_json(const WordGridResult& grid) {
  nlohmann::ordered_json rows = nlohmann::ordered_json::array();
  for (const auto& [key, v] : grid.cells) {
    rows.push_back({{"word_length", key.first}, {"samples", key.second}, {"accuracy", v}});
  }
  return rows;
}

/// Plain-text table, word lengths down, sample counts across.
inline std::string format_word_grid_table(const WordGridResult& grid) {
  std::vector<std::size_t> lengths;
  std::vector<std::size_t> ks;
  for (const auto& [key, v] : grid.cells) {
    (void)v;
    if (lengths.empty() || lengths.back() != key.first) {
      bool seen = false;
      for (const auto l : lengths) seen = seen || l == key.first;
      if (!seen) lengths.push_back(key.first);
    }
    bool seen = false;
    for (const auto k : ks) seen = seen || k == key.second;
    if (!seen) ks.push_back(key.second);
  }
  std::sort(lengths.begin(), lengths.end());
  std::sort(ks.begin(), ks.end());
  std::string out = "word_length";
  for (const auto k : ks) out += "  k=" + std::to_string(k);
  out += '\n';
  char buf[32];
  for (const auto len : lengths) {
    out += "          " + std::to_string(len);
    for (const auto k : ks) {
      const auto it = grid.cells.find({len, k});
      std::snprintf(buf, sizeof(buf), "  %.3f", it == grid.cells.end() ? 0.0 : it->second);
      out += buf;
    }
    out += '\n';
  }
  return out;
}

/// Writes the machine-readable report to `path` and the aligned plain-text
/// table (when provided) to `path` + ".txt".
inline void emit_report(const nlohmann::ordered_json& report, const std::filesystem::path& path,
                        const std::string& table = {}) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write report: " + path.string());
  out << report.dump(2) << '\n';
  if (!out) throw IoError("write failed: " + path.string());
  if (!table.empty()) {
    const std::filesystem::path tpath = path.string() + ".txt";
    std::ofstream tout(tpath, std::ios::binary);
    if (!tout) throw IoError("cannot write report table: " + tpath.string());
    tout << table;
  }
}

inline nlohmann::ordered_json metrics_to_json(const Metrics& m) {
  return {{"accuracy", m.accuracy}, {"macro_f1", m.macro_f1}, {"n", m.n}};
}

inline nlohmann::ordered_json confusion_to_json(const ConfusionMatrix& m) {
  nlohmann::ordered_json j;
  j["counts"] = nlohmann::ordered_json::array();
  for (int t = 0; t < kAlphabetSize; ++t) {
    j["counts"].push_back(std::vector<std::uint64_t>(m.counts[t].begin(), m.counts[t].end()));
  }
  j["no_letter"] = std::vector<std::uint64_t>(m.no_letter.begin(), m.no_letter.end());
  return j;
}

}  // namespace airglyph
