#pragma once

#include <cctype>
#include <chrono>
#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <string_view>
#include <thread>
#include <utility>
#include <vector>

#include <json.hpp>

#include "airglyph/core_data.hpp"
#include "airglyph/errors.hpp"
#include "airglyph/preprocess.hpp"

namespace airglyph {

enum class Role { System, User, Assistant };

inline std::string_view to_string(Role r) {
  switch (r) {
    case Role::System:
      return "system";
    case Role::User:
      return "user";
    default:
      return "assistant";
  }
}

struct ChatMessage {
  Role role = Role::User;
  std::string content;
};

struct ChatParams {
  double temperature = 0.0;
  int max_tokens = 1024;
  std::optional<std::uint64_t> seed;
};

/// Chat-completion backend. MockClient is scripted and deterministic;
/// HttpClient talks to any chat-completions-compatible endpoint.
class ChatClient {
 public:
  virtual ~ChatClient() = default;
  virtual std::string complete(const std::vector<ChatMessage>& messages,
                               const ChatParams& params) = 0;
};

constexpr std::string_view kAnswerMarker = "Final answer:";

struct PromptTemplate {
  std::string task_preamble;
  std::string cot_instruction;
  std::string answer_format_instruction;

  std::string system_text() const {
    return task_preamble + "\n\n" + cot_instruction + "\n\n" + answer_format_instruction;
  }

  static const PromptTemplate& standard() {
    static const PromptTemplate t{
        "You are given a three-axis accelerometer trace recorded while a single "
        "uppercase letter was written. Each data line of the trace is "
        "`t,ax,ay,az`: a sample index followed by the acceleration along the "
        "three axes. Identify which letter (A-Z) was written.",
        "Reason step by step before answering: describe the dominant motion "
        "phases along each axis, infer the stroke sequence, and compare the "
        "implied shape against candidate letters.",
        "End your reply with a line of the form `Final answer: X`, where X is "
        "the single uppercase letter."};
    return t;
  }
};

/// ceil(characters / 4); a deliberate heuristic, not a tokenizer.
inline std::size_t token_estimate(std::string_view text) { return (text.size() + 3) / 4; }

inline std::size_t token_estimate(const std::vector<ChatMessage>& messages) {
  std::size_t n = 0;
  for (const auto& m : messages) n += token_estimate(m.content);
  return n;
}

inline std::vector<ChatMessage> build_zero_shot_prompt(
    const Window& window, const PromptTemplate& tpl = PromptTemplate::standard(), int decimals = 3) {
  return {{Role::System, tpl.system_text()}, {Role::User, serialize_pseudo_text(window, decimals)}};
}

struct FewShotPrompt {
  std::vector<ChatMessage> messages;
  std::size_t exemplars_included = 0;
};

/// Includes as many exemplars as fit the token budget, in the given order,
/// always at least one.
inline FewShotPrompt build_few_shot_prompt(const Window& window,
                                           const std::vector<std::pair<Window, LetterLabel>>& exemplars,
                                           std::size_t budget,
                                           const PromptTemplate& tpl = PromptTemplate::standard(),
                                           int decimals = 3) {
  if (exemplars.empty()) throw ValidationError("few-shot prompt needs at least one exemplar");
  const std::string system = tpl.system_text();
  const std::string query = serialize_pseudo_text(window, decimals);
  const std::string tail = "Trace to identify:\n" + query;

  std::string block = "Labeled examples:\n\n";
  std::size_t included = 0;
  for (const auto& [w, letter] : exemplars) {
    std::string entry = "Example " + std::to_string(included + 1) + " (letter " + letter.str() +
                        "):\n" + serialize_pseudo_text(w, decimals) + "\n";
    const std::size_t estimate =
        token_estimate(system) + token_estimate(block) + token_estimate(entry) + token_estimate(tail);
    if (estimate > budget) {
      if (included == 0) {
        throw ValidationError("token budget " + std::to_string(budget) +
                              " cannot fit even the first exemplar (needs " +
                              std::to_string(estimate) + ")");
      }
      break;
    }
    block += entry;
    ++included;
  }
  return {{{Role::System, system}, {Role::User, block + "\n" + tail}}, included};
}

namespace llm_detail {

inline std::string lowercase(std::string_view s) {
  std::string out(s);
  for (auto& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return out;
}

inline bool standalone_at(std::string_view text, std::size_t i) {
  const auto alnum = [&](std::size_t j) {
    return std::isalnum(static_cast<unsigned char>(text[j])) != 0;
  };
  if (!std::isalpha(static_cast<unsigned char>(text[i]))) return false;
  if (i > 0 && alnum(i - 1)) return false;
  if (i + 1 < text.size() && alnum(i + 1)) return false;
  return true;
}

// End position of the last answer marker, or npos.
inline std::size_t last_marker_end(const std::string& lower) {
  static const std::string_view markers[] = {"final answer", "answer is", "the letter is",
                                             "letter is", "answer:"};
  std::size_t best = std::string::npos;
  for (const auto m : markers) {
    const std::size_t p = lower.rfind(m);
    if (p == std::string::npos) continue;
    const std::size_t end = p + m.size();
    if (best == std::string::npos || end > best) best = end;
  }
  return best;
}

}  // namespace llm_detail

/// Extracts the final standalone A-Z token following the last answer marker.
/// Returns nullopt when no marker or letter is found; evaluation treats that
/// as an incorrect prediction.
inline std::optional<LetterLabel> parse_letter_response(std::string_view text) {
  const std::string lower = llm_detail::lowercase(text);
  const std::size_t start = llm_detail::last_marker_end(lower);
  if (start == std::string::npos) return std::nullopt;
  for (std::size_t i = start; i < text.size(); ++i) {
    if (llm_detail::standalone_at(text, i)) return LetterLabel::try_from_char(text[i]);
  }
  return std::nullopt;
}

// --- clients ------------------------------------------------------------------

/// Scripted client. Substring rules take precedence (first match wins, not
/// consumed); otherwise indexed responses are consumed in order. Response
/// templates may use {letter} (the letter named in the request) and {vid}
/// (the first integer in the last user message).
class MockClient : public ChatClient {
 public:
  struct Rule {
    std::string match;
    std::string response;
  };

  MockClient() = default;
  explicit MockClient(std::vector<Rule> rules, std::vector<std::string> responses = {})
      : rules_(std::move(rules)), responses_(std::move(responses)) {}

  static MockClient from_json(const nlohmann::json& j) {
    MockClient c;
    if (j.contains("rules")) {
      for (const auto& r : j.at("rules")) {
        c.rules_.push_back({r.at("match").get<std::string>(), r.at("response").get<std::string>()});
      }
    }
    if (j.contains("responses")) {
      c.responses_ = j.at("responses").get<std::vector<std::string>>();
    }
    return c;
  }

  static MockClient from_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open mock script: " + path.string());
    nlohmann::json j;
    in >> j;
    return from_json(j);
  }

  std::string complete(const std::vector<ChatMessage>& messages, const ChatParams&) override {
    std::string all;
    std::string last_user;
    for (const auto& m : messages) {
      all += m.content;
      all += '\n';
      if (m.role == Role::User) last_user = m.content;
    }
    for (const auto& r : rules_) {
      if (all.find(r.match) != std::string::npos) return expand(r.response, all, last_user);
    }
    if (next_ < responses_.size()) return expand(responses_[next_++], all, last_user);
    throw TransportError("mock script exhausted after " + std::to_string(next_) + " responses");
  }

 private:
  std::string expand(std::string text, const std::string& all, const std::string& last_user) const {
    const auto replace_all = [](std::string& s, std::string_view from, const std::string& to) {
      std::size_t p = 0;
      while ((p = s.find(from, p)) != std::string::npos) {
        s.replace(p, from.size(), to);
        p += to.size();
      }
    };
    if (text.find("{letter}") != std::string::npos) {
      const auto l = parse_letter_response(all);
      if (!l) throw TransportError("mock response uses {letter} but the request names no letter");
      replace_all(text, "{letter}", l->str());
    }
    if (text.find("{vid}") != std::string::npos) {
      std::string digits;
      for (std::size_t i = 0; i < last_user.size(); ++i) {
        if (std::isdigit(static_cast<unsigned char>(last_user[i]))) {
          digits += last_user[i];
        } else if (!digits.empty()) {
          break;
        }
      }
      replace_all(text, "{vid}", digits.empty() ? "0" : digits);
    }
    return text;
  }

  std::vector<Rule> rules_;
  std::vector<std::string> responses_;
  std::size_t next_ = 0;
};

struct HttpConfig {
  std::string base_url;  // scheme://host[:port][/path-prefix]
  std::string api_key;
  std::string model = "default";
  int max_retries = 3;
  int backoff_initial_ms = 1000;

  static std::optional<HttpConfig> from_env() {
    const char* base = std::getenv("AIRGLYPH_LLM_BASE_URL");
    if (base == nullptr || *base == '\0') return std::nullopt;
    HttpConfig c;
    c.base_url = base;
    if (const char* key = std::getenv("AIRGLYPH_LLM_API_KEY")) c.api_key = key;
    if (const char* model = std::getenv("AIRGLYPH_LLM_MODEL")) c.model = model;
    return c;
  }
};

}  // namespace airglyph

#ifndef AIRGLYPH_NO_HTTP
#include <httplib.h>

namespace airglyph {

/// POSTs to {base_url}/chat/completions with bearer auth, retrying with
/// exponential backoff. Every retry is logged with its attempt count.
class HttpClient : public ChatClient {
 public:
  explicit HttpClient(HttpConfig config) : config_(std::move(config)) {
    const std::string& url = config_.base_url;
    const std::size_t scheme = url.find("://");
    if (scheme == std::string::npos) throw ConfigError("base_url needs a scheme: " + url);
    const std::size_t path = url.find('/', scheme + 3);
    host_ = path == std::string::npos ? url : url.substr(0, path);
    prefix_ = path == std::string::npos ? "" : url.substr(path);
    while (!prefix_.empty() && prefix_.back() == '/') prefix_.pop_back();
  }

  std::string complete(const std::vector<ChatMessage>& messages, const ChatParams& params) override {
    nlohmann::ordered_json body;
    body["model"] = config_.model;
    body["messages"] = nlohmann::ordered_json::array();
    for (const auto& m : messages) {
      body["messages"].push_back({{"role", std::string(to_string(m.role))}, {"content", m.content}});
    }
    body["temperature"] = params.temperature;
    body["max_tokens"] = params.max_tokens;
    if (params.seed) body["seed"] = *params.seed;

    httplib::Headers headers;
    if (!config_.api_key.empty()) headers.emplace("Authorization", "Bearer " + config_.api_key);

    std::string last_error = "no attempt made";
    for (int attempt = 1; attempt <= config_.max_retries; ++attempt) {
      if (attempt > 1) {
        const int delay = config_.backoff_initial_ms << (attempt - 2);
        std::cerr << "llm transport retry, attempt " << attempt << "/" << config_.max_retries
                  << " after " << delay << " ms\n";
        std::this_thread::sleep_for(std::chrono::milliseconds(delay));
      }
      httplib::Client cli(host_);
      cli.set_read_timeout(120, 0);
      auto res = cli.Post(prefix_ + "/chat/completions", headers, body.dump(), "application/json");
      if (!res) {
        last_error = "connection failed: " + httplib::to_string(res.error());
        continue;
      }
      if (res->status != 200) {
        last_error = "status " + std::to_string(res->status) + ": " + res->body;
        continue;
      }
      const nlohmann::json j = nlohmann::json::parse(res->body, nullptr, false);
      if (j.is_discarded() || !j.contains("choices") || j["choices"].empty()) {
        last_error = "malformed completion body: " + res->body;
        continue;
      }
      return j["choices"][0]["message"]["content"].get<std::string>();
    }
    throw TransportError("chat completion failed after " + std::to_string(config_.max_retries) +
                         " attempts; last error: " + last_error);
  }

 private:
  HttpConfig config_;
  std::string host_;
  std::string prefix_;
};

}  // namespace airglyph
#endif  // AIRGLYPH_NO_HTTP

namespace airglyph {

// --- instruction-answer pair generation ---------------------------------------

struct InstructionPair {
  std::string instruction;
  std::string response;
  LetterLabel letter;
  std::string source_id;
};

/// Asks the explainer model why the trace corresponds to the known letter.
inline std::string generate_explanation(ChatClient& client, const Window& window, LetterLabel truth,
                                        const ChatParams& params = {}, int decimals = 3) {
  std::vector<ChatMessage> messages = {
      {Role::System,
       "You explain how accelerometer traces of handwriting correspond to specific letters."},
      {Role::User, serialize_pseudo_text(window, decimals) + "\nThe ground-truth letter is: " +
                       truth.str() +
                       ".\nExplain step by step how the motion pattern produces this letter. End "
                       "with `Final answer: " +
                       truth.str() + "`."}};
  return client.complete(messages, params);
}

struct Restructured {
  std::string reasoning;
  LetterLabel conclusion;
};

namespace llm_detail {

inline std::optional<Restructured> try_split(const std::string& text) {
  const std::string lower = lowercase(text);
  const std::size_t marker = lower.rfind(lowercase(kAnswerMarker));
  if (marker == std::string::npos) return std::nullopt;
  const auto letter = parse_letter_response(text);
  if (!letter) return std::nullopt;
  std::string reasoning = text.substr(0, marker);
  while (!reasoning.empty() && std::isspace(static_cast<unsigned char>(reasoning.back()))) {
    reasoning.pop_back();
  }
  if (reasoning.empty()) return std::nullopt;
  return Restructured{std::move(reasoning), *letter};
}

}  // namespace llm_detail

/// Rewrites a raw explanation into reasoning followed by a one-letter
/// conclusion. One retry, then the failure surfaces.
inline Restructured restructure_response(ChatClient& client, const std::string& raw,
                                         const ChatParams& params = {}) {
  if (raw.empty()) throw ValidationError("cannot restructure an empty explanation");
  const std::vector<ChatMessage> messages = {
      {Role::System,
       "You rewrite explanations so the reasoning comes first, followed by a single-letter "
       "conclusion."},
      {Role::User, "Rewrite the following explanation as clear reasoning that ends with a line "
                   "`Final answer: X`:\n\n" +
                       raw}};
  for (int attempt = 0; attempt < 2; ++attempt) {
    const std::string out = client.complete(messages, params);
    if (auto r = llm_detail::try_split(out)) return *r;
  }
  throw ValidationError("restructuring produced no parseable reasoning/conclusion after retry");
}

/// n instruction variations, exact-string distinct. Collisions get a
/// deterministic variant suffix.
inline std::vector<std::string> diversify_prompt(ChatClient& client, const std::string& base,
                                                 int n = 3, const ChatParams& params = {}) {
  if (n < 1) throw ConfigError("diversify_prompt needs n >= 1");
  std::vector<std::string> out;
  for (int i = 1; i <= n; ++i) {
    const std::vector<ChatMessage> messages = {
        {Role::System, "You rewrite task instructions, preserving their meaning and constraints."},
        {Role::User, "Produce variation " + std::to_string(i) + " of " + std::to_string(n) +
                         " of the instruction below. Keep the requirements and the final-answer "
                         "format intact.\n\nInstruction:\n" +
                         base}};
    std::string v = client.complete(messages, params);
    for (const auto& prev : out) {
      if (prev == v) {
        v += " (variation " + std::to_string(i) + ")";
        break;
      }
    }
    out.push_back(std::move(v));
  }
  return out;
}

inline void save_pairs(const std::vector<InstructionPair>& pairs, const std::filesystem::path& path,
                       const nlohmann::ordered_json& config_echo = {}) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write pair dataset: " + path.string());
  if (!config_echo.is_null() && !config_echo.empty()) {
    nlohmann::ordered_json header;
    header["config_echo"] = config_echo;
    out << header.dump() << '\n';
  }
  for (const auto& p : pairs) {
    nlohmann::ordered_json j;
    j["instruction"] = p.instruction;
    j["response"] = p.response;
    j["letter"] = p.letter.str();
    j["source_id"] = p.source_id;
    out << j.dump() << '\n';
  }
}

inline std::vector<InstructionPair> load_pairs(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open pair dataset: " + path.string());
  std::vector<InstructionPair> pairs;
  std::string line;
  bool first = true;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const nlohmann::json j = nlohmann::json::parse(line);
    if (first && !j.contains("instruction")) {
      first = false;
      continue;  // header object
    }
    first = false;
    pairs.push_back({j.at("instruction").get<std::string>(), j.at("response").get<std::string>(),
                     LetterLabel::from_char(j.at("letter").get<std::string>().at(0)),
                     j.at("source_id").get<std::string>()});
  }
  return pairs;
}

/// The three-step pair pipeline: explain, restructure, diversify. Produces
/// variations x |train| pairs; on failure the completed pairs are saved to
/// the checkpoint path (when given) before the error surfaces.
inline std::vector<InstructionPair> build_pair_dataset(
    ChatClient& client, const Dataset& train, int variations = 3,
    const std::optional<std::filesystem::path>& checkpoint = std::nullopt,
    const PromptTemplate& tpl = PromptTemplate::standard(), const ChatParams& params = {}) {
  if (variations < 1) throw ConfigError("variations must be >= 1");
  train.validate();
  std::vector<InstructionPair> pairs;
  try {
    for (const auto& rec : train.recordings) {
      const Window window = resample(rec, kDefaultWindowLen);
      const std::string serialized = serialize_pseudo_text(window, 3);
      const std::string raw = generate_explanation(client, window, rec.letter, params);
      const Restructured r = restructure_response(client, raw, params);
      if (r.conclusion != rec.letter) {
        throw ValidationError("restructured conclusion '" + r.conclusion.str() +
                              "' does not match label '" + rec.letter.str() + "' for recording '" +
                              rec.id + "'");
      }
      const std::string response = r.reasoning + "\n" + std::string(kAnswerMarker) + " " +
                                   r.conclusion.str();
      const auto instructions = diversify_prompt(client, tpl.system_text(), variations, params);
      for (const auto& instr : instructions) {
        pairs.push_back({instr + "\n\n" + serialized, response, rec.letter, rec.id});
      }
    }
  } catch (const std::exception&) {
    if (checkpoint) save_pairs(pairs, *checkpoint);
    throw;
  }
  return pairs;
}

}  // namespace airglyph
