#pragma once

#include <algorithm>
#include <array>
#include <cctype>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "airglyph/classify.hpp"
#include "airglyph/core_data.hpp"
#include "airglyph/errors.hpp"
#include "airglyph/llmbridge.hpp"

namespace airglyph {

/// Uppercase word list with length bounds, one word per line on disk.
struct Lexicon {
  std::vector<std::string> words;
  std::size_t min_len = 3;
  std::size_t max_len = 6;

  void validate() const {
    for (const auto& w : words) {
      if (w.size() < min_len || w.size() > max_len) {
        throw ValidationError("lexicon word '" + w + "' violates length bounds");
      }
      for (const char c : w) {
        if (c < 'A' || c > 'Z') throw ValidationError("lexicon word '" + w + "' has non A-Z chars");
      }
    }
  }

  std::vector<std::string> words_of_length(std::size_t n) const {
    std::vector<std::string> out;
    for (const auto& w : words) {
      if (w.size() == n) out.push_back(w);
    }
    return out;
  }

  static Lexicon load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open lexicon: " + path.string());
    Lexicon lex;
    std::string line;
    while (std::getline(in, line)) {
      while (!line.empty() && (line.back() == '\r' || line.back() == ' ')) line.pop_back();
      if (line.empty()) continue;
      for (auto& c : line) c = static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
      lex.words.push_back(line);
    }
    lex.validate();
    return lex;
  }
};

/// The k observed letters per word position.
struct PositionObservations {
  std::vector<std::vector<LetterLabel>> positions;

  std::size_t k() const { return positions.empty() ? 0 : positions.front().size(); }

  void validate() const {
    if (positions.empty()) throw ValidationError("no positions observed");
    const std::size_t kk = positions.front().size();
    if (kk < 1) throw ValidationError("each position needs at least one observation");
    for (const auto& p : positions) {
      if (p.size() != kk) throw ValidationError("positions have differing observation counts");
    }
  }
};

/// Row-stochastic P(observed | true), Laplace-smoothed.
struct ConfusionModel {
  std::array<std::array<double, kAlphabetSize>, kAlphabetSize> probs{};

  double prob(LetterLabel observed, LetterLabel truth) const {
    return probs[static_cast<std::size_t>(truth.ordinal())]
                [static_cast<std::size_t>(observed.ordinal())];
  }

  double log_prob(LetterLabel observed, LetterLabel truth) const {
    return std::log(prob(observed, truth));
  }
};

inline ConfusionModel fit_confusion_model(const ConfusionMatrix& matrix, double alpha = 1.0) {
  if (!(alpha > 0.0)) throw ConfigError("smoothing alpha must be > 0");
  ConfusionModel m;
  for (int t = 0; t < kAlphabetSize; ++t) {
    double row_sum = 0.0;
    for (int o = 0; o < kAlphabetSize; ++o) row_sum += static_cast<double>(matrix.counts[t][o]);
    const double denom = row_sum + kAlphabetSize * alpha;
    for (int o = 0; o < kAlphabetSize; ++o) {
      m.probs[t][o] = (static_cast<double>(matrix.counts[t][o]) + alpha) / denom;
    }
  }
  return m;
}

/// A convenient synthetic model: fixed diagonal mass, uniform off-diagonal.
inline ConfusionModel diagonal_confusion_model(double diag) {
  if (!(diag > 0.0) || !(diag < 1.0)) throw ConfigError("diagonal mass must be in (0,1)");
  ConfusionModel m;
  const double off = (1.0 - diag) / (kAlphabetSize - 1);
  for (int t = 0; t < kAlphabetSize; ++t) {
    for (int o = 0; o < kAlphabetSize; ++o) m.probs[t][o] = t == o ? diag : off;
  }
  return m;
}

/// Sum over positions and observations of log P(observation | word letter).
inline double score_word(std::string_view word, const PositionObservations& obs,
                         const ConfusionModel& model) {
  obs.validate();
  if (word.size() != obs.positions.size()) {
    throw ValidationError("word length " + std::to_string(word.size()) + " does not match " +
                          std::to_string(obs.positions.size()) + " observed positions");
  }
  double score = 0.0;
  for (std::size_t p = 0; p < word.size(); ++p) {
    const LetterLabel truth = LetterLabel::from_char(word[p]);
    for (const LetterLabel o : obs.positions[p]) score += model.log_prob(o, truth);
  }
  return score;
}

struct WordHypothesis {
  std::string word;
  double log_score = 0.0;
};

/// Exhaustive lexicon-constrained decode, descending score, ties broken
/// alphabetically. Brute force over matching-length words is the definition
/// of correctness here.
inline std::vector<WordHypothesis> decode_word(const PositionObservations& obs, const Lexicon& lexicon,
                                               const ConfusionModel& model, std::size_t top_n = 5) {
  obs.validate();
  const auto candidates = lexicon.words_of_length(obs.positions.size());
  if (candidates.empty()) {
    throw ValidationError("lexicon has no word of length " + std::to_string(obs.positions.size()));
  }
  std::vector<WordHypothesis> scored;
  scored.reserve(candidates.size());
  for (const auto& w : candidates) scored.push_back({w, score_word(w, obs, model)});
  std::sort(scored.begin(), scored.end(), [](const WordHypothesis& a, const WordHypothesis& b) {
    if (a.log_score != b.log_score) return a.log_score > b.log_score;
    return a.word < b.word;
  });
  if (scored.size() > top_n) scored.resize(top_n);
  return scored;
}

/// Final-word rule: the last maximal run of ASCII letters, uppercased.
inline std::optional<std::string> parse_word_response(std::string_view text) {
  std::string word;
  std::string cur;
  for (const char c : text) {
    if (std::isalpha(static_cast<unsigned char>(c))) {
      cur += static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
    } else {
      if (!cur.empty()) word = cur;
      cur.clear();
    }
  }
  if (!cur.empty()) word = cur;
  if (word.empty()) return std::nullopt;
  return word;
}

/// Free-form LLM aggregation of the per-position observations; no lexicon
/// constraint is imposed. Unparseable responses yield nullopt.
inline std::optional<WordHypothesis> llm_decode_word(ChatClient& client,
                                                     const PositionObservations& obs,
                                                     const ChatParams& params = {}) {
  obs.validate();
  std::string listing;
  for (std::size_t p = 0; p < obs.positions.size(); ++p) {
    listing += "Position " + std::to_string(p + 1) + ": {";
    for (std::size_t i = 0; i < obs.positions[p].size(); ++i) {
      if (i) listing += ", ";
      listing += obs.positions[p][i].str();
    }
    listing += "}\n";
  }
  const std::vector<ChatMessage> messages = {
      {Role::System,
       "Each position of a handwritten word was recognized several times; some readings are "
       "wrong. Infer the intended English word."},
      {Role::User, listing + "\nReply with the single most likely word."}};
  const std::string out = client.complete(messages, params);
  const auto word = parse_word_response(out);
  if (!word) return std::nullopt;
  return WordHypothesis{*word, 0.0};
}

}  // namespace airglyph
