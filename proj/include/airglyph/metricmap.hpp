#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "airglyph/core_data.hpp"
#include "airglyph/errors.hpp"
#include "airglyph/nnkit.hpp"
#include "airglyph/preprocess.hpp"
#include "airglyph/rng.hpp"

namespace airglyph {

using Embedding = std::vector<double>;

inline double embedding_distance(const Embedding& a, const Embedding& b) {
  if (a.size() != b.size()) throw ValidationError("embedding dimension mismatch");
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    acc += d * d;
  }
  return std::sqrt(acc);
}

/// Hinge loss max(D(a,p) + margin - D(a,n), 0) with Euclidean D.
inline double triplet_loss(const Embedding& g_a, const Embedding& g_p, const Embedding& g_n,
                           double margin) {
  return std::max(embedding_distance(g_a, g_p) + margin - embedding_distance(g_a, g_n), 0.0);
}

struct Triplet {
  Window anchor;    // mid-air 3D
  Window positive;  // flat 2D, same letter
  Window negative;  // flat 2D, different letter
  LetterLabel anchor_letter;
  LetterLabel negative_letter;
};

enum class Mining { Random, SemiHard };

struct MapperConfig {
  double margin = 1.0;
  int epochs = 14;
  int batch_size = 32;
  int triplets_per_epoch = 704;
  double learning_rate = 1e-3;
  std::uint64_t seed = 1;
  Mining mining = Mining::SemiHard;  // SemiHard switches on after a random warm-up epoch
  std::size_t window_len = kDefaultWindowLen;
  std::size_t embedding_dim = 32;

  void validate() const {
    if (margin < 0.0) throw ConfigError("margin must be >= 0");
    if (epochs < 0) throw ConfigError("epochs must be >= 0");
    if (batch_size < 1 || triplets_per_epoch < 1) throw ConfigError("bad batch configuration");
    if (!(learning_rate > 0.0)) throw ConfigError("learning_rate must be > 0");
    if (window_len < 2 || embedding_dim < 1) throw ConfigError("bad window/embedding size");
  }
};

inline Embedding embed(const Net& encoder, const Window& window) {
  const Tensor out = forward(encoder, tensor_from_window(window));
  return out.values;
}

inline Embedding embed(const Net& encoder, const Recording& rec) {
  return embed(encoder, standard_window(rec, encoder.spec.input_len));
}

namespace mm_detail {

struct WindowPool {
  std::vector<Window> windows;
  std::vector<LetterLabel> letters;
  std::vector<std::string> ids;
  std::array<std::vector<std::size_t>, kAlphabetSize> by_letter;

  static WindowPool from(const Dataset& ds, std::size_t len) {
    WindowPool p;
    for (const auto& r : ds.recordings) {
      p.by_letter[static_cast<std::size_t>(r.letter.ordinal())].push_back(p.windows.size());
      p.windows.push_back(standard_window(r, len));
      p.letters.push_back(r.letter);
      p.ids.push_back(r.id);
    }
    return p;
  }
};

struct TripletIdx {
  std::size_t a, p, n;
};

inline void check_positive_coverage(const WindowPool& pool2d, const WindowPool& pool3d) {
  for (int o = 0; o < kAlphabetSize; ++o) {
    if (!pool3d.by_letter[o].empty() && pool2d.by_letter[o].empty()) {
      throw ValidationError(std::string("cannot form positives: letter '") +
                            LetterLabel::from_ordinal(o).to_char() +
                            "' present in 3D data but absent in 2D data");
    }
  }
}

inline std::vector<TripletIdx> mine_indices(const WindowPool& pool2d, const WindowPool& pool3d,
                                            std::size_t n, Mining strategy, Rng& rng,
                                            const Net* enc2d, const Net* enc3d, double margin) {
  check_positive_coverage(pool2d, pool3d);
  if (pool3d.windows.empty()) throw ValidationError("no 3D anchors available for mining");
  bool has_negative = false;
  for (const auto& a3 : pool3d.letters) {
    for (const auto& l2 : pool2d.letters) {
      if (l2 != a3) {
        has_negative = true;
        break;
      }
    }
    if (has_negative) break;
  }
  if (!has_negative) throw ValidationError("cannot form negatives: 2D data has no other letters");

  const bool semihard = strategy == Mining::SemiHard && enc2d != nullptr && enc3d != nullptr;
  std::vector<TripletIdx> out;
  out.reserve(n);
  while (out.size() < n) {
    const std::size_t a = rng.below(pool3d.windows.size());
    const LetterLabel la = pool3d.letters[a];
    const auto& pos_bucket = pool2d.by_letter[static_cast<std::size_t>(la.ordinal())];
    const std::size_t p = pos_bucket[rng.below(pos_bucket.size())];
    std::size_t neg = pool2d.windows.size();
    if (semihard) {
      const Embedding ea = embed(*enc3d, pool3d.windows[a]);
      const Embedding ep = embed(*enc2d, pool2d.windows[p]);
      const double dap = embedding_distance(ea, ep);
      std::size_t fallback = pool2d.windows.size();
      for (int c = 0; c < 10; ++c) {
        const std::size_t cand = rng.below(pool2d.windows.size());
        if (pool2d.letters[cand] == la) continue;
        if (fallback == pool2d.windows.size()) fallback = cand;
        const double dan = embedding_distance(ea, embed(*enc2d, pool2d.windows[cand]));
        if (dan > dap && dan < dap + margin) {
          neg = cand;
          break;
        }
      }
      if (neg == pool2d.windows.size()) neg = fallback;
    }
    while (neg == pool2d.windows.size()) {
      const std::size_t cand = rng.below(pool2d.windows.size());
      if (pool2d.letters[cand] != la) neg = cand;
    }
    out.push_back({a, p, neg});
  }
  return out;
}

}  // namespace mm_detail

/// Samples n anchor/positive/negative triplets. SemiHard prefers negatives
/// with D(a,n) in (D(a,p), D(a,p)+margin) under the given encoders and falls
/// back to random sampling when no such candidate is found.
inline std::vector<Triplet> mine_triplets(const Dataset& train2d, const Dataset& train3d,
                                          std::size_t n, Mining strategy, std::uint64_t seed,
                                          const Net* enc2d = nullptr, const Net* enc3d = nullptr,
                                          double margin = 1.0,
                                          std::size_t window_len = kDefaultWindowLen) {
  const auto pool2d = mm_detail::WindowPool::from(train2d, window_len);
  const auto pool3d = mm_detail::WindowPool::from(train3d, window_len);
  Rng rng(seed);
  const auto idx = mm_detail::mine_indices(pool2d, pool3d, n, strategy, rng, enc2d, enc3d, margin);
  std::vector<Triplet> out;
  out.reserve(idx.size());
  for (const auto& t : idx) {
    out.push_back({pool3d.windows[t.a], pool2d.windows[t.p], pool2d.windows[t.n],
                   pool3d.letters[t.a], pool2d.letters[t.n]});
  }
  return out;
}

struct TrainedMapper {
  Net encoder2d;
  Net encoder3d;
  MapperConfig config;
  std::vector<double> history;  // mean triplet loss per epoch
};

namespace mm_detail {

// Gradient of the triplet hinge w.r.t. the three embeddings. Zero when the
// hinge is inactive; the kink itself uses the inactive branch.
struct TripletGrads {
  Embedding a, p, n;
  double loss = 0.0;
};

inline TripletGrads triplet_backward(const Embedding& ea, const Embedding& ep, const Embedding& en,
                                     double margin) {
  TripletGrads g;
  const double dap = embedding_distance(ea, ep);
  const double dan = embedding_distance(ea, en);
  g.loss = std::max(dap + margin - dan, 0.0);
  const std::size_t d = ea.size();
  g.a.assign(d, 0.0);
  g.p.assign(d, 0.0);
  g.n.assign(d, 0.0);
  if (g.loss <= 0.0) return g;
  constexpr double kEps = 1e-12;
  for (std::size_t i = 0; i < d; ++i) {
    const double up = dap > kEps ? (ea[i] - ep[i]) / dap : 0.0;
    const double un = dan > kEps ? (ea[i] - en[i]) / dan : 0.0;
    g.a[i] = up - un;
    g.p[i] = -up;
    g.n[i] = un;
  }
  return g;
}

}  // namespace mm_detail

/// Trains the paired 2D/3D encoders with triplet loss. Deterministic given
/// the config seed; an epoch count of zero returns the initialized encoders.
inline TrainedMapper train_mapper(const Dataset& train2d, const Dataset& train3d,
                                  const MapperConfig& config) {
  config.validate();
  const auto pool2d = mm_detail::WindowPool::from(train2d, config.window_len);
  const auto pool3d = mm_detail::WindowPool::from(train3d, config.window_len);
  mm_detail::check_positive_coverage(pool2d, pool3d);

  const NetSpec spec = default_encoder_spec(config.window_len, config.embedding_dim);
  TrainedMapper tm;
  tm.config = config;
  tm.encoder2d = net_init(spec, seed_finalize(hash_mix(config.seed, std::string_view("enc2d"))));
  tm.encoder3d = net_init(spec, seed_finalize(hash_mix(config.seed, std::string_view("enc3d"))));

  AdamState adam2d = AdamState::create(tm.encoder2d, config.learning_rate);
  AdamState adam3d = AdamState::create(tm.encoder3d, config.learning_rate);

  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    Rng rng(seed_finalize(hash_mix(config.seed, static_cast<std::uint64_t>(epoch) + 1000)));
    const Mining strategy = (epoch == 0 || config.mining == Mining::Random) ? Mining::Random
                                                                            : Mining::SemiHard;
    const auto triplets =
        mm_detail::mine_indices(pool2d, pool3d, static_cast<std::size_t>(config.triplets_per_epoch),
                                strategy, rng, &tm.encoder2d, &tm.encoder3d, config.margin);
    double epoch_loss = 0.0;
    std::size_t done = 0;
    while (done < triplets.size()) {
      const std::size_t batch = std::min<std::size_t>(config.batch_size, triplets.size() - done);
      std::vector<LayerParams> g2d;
      std::vector<LayerParams> g3d;
      for (std::size_t b = 0; b < batch; ++b) {
        const auto& t = triplets[done + b];
        ForwardCache ca, cp, cn;
        const Tensor oa = forward(tm.encoder3d, tensor_from_window(pool3d.windows[t.a]), &ca);
        const Tensor op = forward(tm.encoder2d, tensor_from_window(pool2d.windows[t.p]), &cp);
        const Tensor on = forward(tm.encoder2d, tensor_from_window(pool2d.windows[t.n]), &cn);
        const auto tg = mm_detail::triplet_backward(oa.values, op.values, on.values, config.margin);
        epoch_loss += tg.loss;
        if (tg.loss > 0.0) {
          accumulate(g3d, backward(tm.encoder3d, ca, Tensor{{tg.a.size()}, tg.a}).param_grads);
          accumulate(g2d, backward(tm.encoder2d, cp, Tensor{{tg.p.size()}, tg.p}).param_grads);
          accumulate(g2d, backward(tm.encoder2d, cn, Tensor{{tg.n.size()}, tg.n}).param_grads);
        }
      }
      const double inv = 1.0 / static_cast<double>(batch);
      if (!g3d.empty()) {
        scale_grads(g3d, inv);
        adam_step(adam3d, tm.encoder3d, g3d);
      }
      if (!g2d.empty()) {
        scale_grads(g2d, inv);
        adam_step(adam2d, tm.encoder2d, g2d);
      }
      done += batch;
    }
    tm.history.push_back(epoch_loss / static_cast<double>(triplets.size()));
  }
  return tm;
}

struct GalleryEntry {
  Embedding embedding;
  LetterLabel letter;
  std::string recording_id;
};

struct Gallery {
  std::vector<GalleryEntry> entries;
  std::uint64_t fingerprint = 0;
};

inline std::uint64_t params_fingerprint(const Net& net) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const auto& p : net.params) {
    for (const double v : p.w) h = hash_mix(h, std::bit_cast<std::uint64_t>(v));
    for (const double v : p.b) h = hash_mix(h, std::bit_cast<std::uint64_t>(v));
  }
  return seed_finalize(h);
}

inline Gallery build_gallery(const Net& encoder2d, const Dataset& flat) {
  if (flat.recordings.empty()) throw ValidationError("cannot build a gallery from an empty dataset");
  Gallery g;
  g.fingerprint = params_fingerprint(encoder2d);
  for (const auto& r : flat.recordings) {
    if (r.mode != WritingMode::Flat2D) {
      throw ValidationError("gallery source must be flat 2D; recording '" + r.id + "' is 3D");
    }
    g.entries.push_back({embed(encoder2d, r), r.letter, r.id});
  }
  return g;
}

struct RetrievalResult {
  LetterLabel letter;
  std::string recording_id;
  double distance = 0.0;
};

/// Nearest gallery entry by embedding distance; ties broken by the
/// lexicographically smallest recording id.
inline RetrievalResult nearest_entry(const Gallery& gallery, const Embedding& query) {
  if (gallery.entries.empty()) throw ValidationError("gallery is empty");
  const GalleryEntry* best = nullptr;
  double best_d = 0.0;
  for (const auto& e : gallery.entries) {
    const double d = embedding_distance(e.embedding, query);
    if (best == nullptr || d < best_d || (d == best_d && e.recording_id < best->recording_id)) {
      best = &e;
      best_d = d;
    }
  }
  return {best->letter, best->recording_id, best_d};
}

inline RetrievalResult retrieve(const Net& encoder3d, const Recording& query,
                                const Gallery& gallery) {
  if (query.mode != WritingMode::MidAir3D) {
    throw ValidationError("retrieve expects a mid-air 3D query; recording '" + query.id + "' is 2D");
  }
  return nearest_entry(gallery, embed(encoder3d, query));
}

inline double mapping_accuracy(const Net& encoder3d, const Dataset& test3d, const Gallery& gallery) {
  if (test3d.recordings.empty()) throw ValidationError("mapping_accuracy needs a non-empty test set");
  std::size_t hits = 0;
  for (const auto& r : test3d.recordings) {
    if (retrieve(encoder3d, r, gallery).letter == r.letter) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(test3d.recordings.size());
}

// --- bundle serialization ----------------------------------------------------

struct MapperBundle {
  TrainedMapper mapper;
  Gallery gallery;
};

inline nlohmann::ordered_json mapper_config_to_json(const MapperConfig& c) {
  nlohmann::ordered_json j;
  j["margin"] = c.margin;
  j["epochs"] = c.epochs;
  j["batch_size"] = c.batch_size;
  j["triplets_per_epoch"] = c.triplets_per_epoch;
  j["learning_rate"] = c.learning_rate;
  j["seed"] = c.seed;
  j["mining"] = c.mining == Mining::Random ? "random" : "semihard";
  j["window_len"] = c.window_len;
  j["embedding_dim"] = c.embedding_dim;
  return j;
}

inline MapperConfig mapper_config_from_json(const nlohmann::json& j) {
  MapperConfig c;
  c.margin = j.at("margin").get<double>();
  c.epochs = j.at("epochs").get<int>();
  c.batch_size = j.at("batch_size").get<int>();
  c.triplets_per_epoch = j.at("triplets_per_epoch").get<int>();
  c.learning_rate = j.at("learning_rate").get<double>();
  c.seed = j.at("seed").get<std::uint64_t>();
  c.mining = j.at("mining").get<std::string>() == "random" ? Mining::Random : Mining::SemiHard;
  c.window_len = j.at("window_len").get<std::size_t>();
  c.embedding_dim = j.at("embedding_dim").get<std::size_t>();
  return c;
}

inline void save_bundle(const MapperBundle& bundle, const std::filesystem::path& path,
                        const nlohmann::ordered_json& config_echo = {}) {
  nlohmann::ordered_json j;
  if (!config_echo.is_null() && !config_echo.empty()) j["config_echo"] = config_echo;
  j["config"] = mapper_config_to_json(bundle.mapper.config);
  j["history"] = bundle.mapper.history;
  j["encoder2d"] = net_to_json(bundle.mapper.encoder2d);
  j["encoder3d"] = net_to_json(bundle.mapper.encoder3d);
  nlohmann::ordered_json gal;
  gal["fingerprint"] = bundle.gallery.fingerprint;
  gal["entries"] = nlohmann::ordered_json::array();
  for (const auto& e : bundle.gallery.entries) {
    nlohmann::ordered_json ej;
    ej["embedding"] = e.embedding;
    ej["letter"] = e.letter.str();
    ej["recording_id"] = e.recording_id;
    gal["entries"].push_back(std::move(ej));
  }
  j["gallery"] = std::move(gal);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write mapper bundle: " + path.string());
  out << j.dump(2) << '\n';
}

inline MapperBundle load_bundle(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open mapper bundle: " + path.string());
  nlohmann::json j;
  in >> j;
  MapperBundle b;
  b.mapper.config = mapper_config_from_json(j.at("config"));
  b.mapper.history = j.at("history").get<std::vector<double>>();
  b.mapper.encoder2d = net_from_json(j.at("encoder2d"));
  b.mapper.encoder3d = net_from_json(j.at("encoder3d"));
  b.gallery.fingerprint = j.at("gallery").at("fingerprint").get<std::uint64_t>();
  for (const auto& e : j.at("gallery").at("entries")) {
    b.gallery.entries.push_back({e.at("embedding").get<Embedding>(),
                                 LetterLabel::from_char(e.at("letter").get<std::string>().at(0)),
                                 e.at("recording_id").get<std::string>()});
  }
  if (b.gallery.fingerprint != params_fingerprint(b.mapper.encoder2d)) {
    throw ValidationError("gallery fingerprint does not match the 2D encoder in this bundle");
  }
  return b;
}

}  // namespace airglyph
