#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "airglyph/core_data.hpp"
#include "airglyph/errors.hpp"
#include "airglyph/metricmap.hpp"
#include "airglyph/nnkit.hpp"
#include "airglyph/preprocess.hpp"

namespace airglyph {

enum class PredictionSource { DtwKnn, Cnn, GalleryRetrieval };

struct LetterPrediction {
  LetterLabel letter;
  double score = 0.0;  // non-negative, higher = more confident
  PredictionSource source = PredictionSource::DtwKnn;
};

/// 26x26 counts, rows = truth, cols = prediction. Predictions that yielded
/// no letter are tallied per truth row in no_letter.
struct ConfusionMatrix {
  std::array<std::array<std::uint64_t, kAlphabetSize>, kAlphabetSize> counts{};
  std::array<std::uint64_t, kAlphabetSize> no_letter{};

  std::uint64_t total() const {
    std::uint64_t n = 0;
    for (int i = 0; i < kAlphabetSize; ++i) {
      n += no_letter[i];
      for (int j = 0; j < kAlphabetSize; ++j) n += counts[i][j];
    }
    return n;
  }

  std::uint64_t trace() const {
    std::uint64_t n = 0;
    for (int i = 0; i < kAlphabetSize; ++i) n += counts[i][i];
    return n;
  }

  std::uint64_t row_total(int truth) const {
    std::uint64_t n = no_letter[truth];
    for (int j = 0; j < kAlphabetSize; ++j) n += counts[truth][j];
    return n;
  }

  double accuracy() const {
    const std::uint64_t n = total();
    return n == 0 ? 0.0 : static_cast<double>(trace()) / static_cast<double>(n);
  }
};

/// Classic DTW alignment cost with Euclidean per-step cost over 3-vectors
/// and an optional Sakoe-Chiba band on |i - j|.
inline double dtw_distance(const Window& a, const Window& b,
                           std::optional<std::size_t> band = std::nullopt) {
  const std::size_t n = a.length();
  const std::size_t m = b.length();
  if (n == 0 || m == 0) throw ValidationError("dtw_distance on an empty window");
  if (band && *band > std::max(n, m)) throw ValidationError("band exceeds max window length");
  constexpr double kInf = std::numeric_limits<double>::infinity();
  std::vector<double> prev(m + 1, kInf);
  std::vector<double> cur(m + 1, kInf);
  prev[0] = 0.0;
  for (std::size_t i = 1; i <= n; ++i) {
    std::fill(cur.begin(), cur.end(), kInf);
    std::size_t j_lo = 1;
    std::size_t j_hi = m;
    if (band) {
      const std::ptrdiff_t lo = static_cast<std::ptrdiff_t>(i) - static_cast<std::ptrdiff_t>(*band);
      j_lo = static_cast<std::size_t>(std::max<std::ptrdiff_t>(1, lo));
      j_hi = std::min<std::size_t>(m, i + *band);
    }
    for (std::size_t j = j_lo; j <= j_hi; ++j) {
      double c = 0.0;
      for (int ax = 0; ax < 3; ++ax) {
        const double d = a.values[i - 1][ax] - b.values[j - 1][ax];
        c += d * d;
      }
      c = std::sqrt(c);
      const double best = std::min({prev[j], cur[j - 1], prev[j - 1]});
      cur[j] = c + best;
    }
    std::swap(prev, cur);
  }
  return prev[m];
}

/// k-NN by DTW distance. Ties on votes break by smaller mean distance, then
/// alphabetically. Score is the winning vote fraction.
inline LetterPrediction knn_dtw_classify(const Window& query,
                                         const std::vector<std::pair<Window, LetterLabel>>& train,
                                         std::size_t k,
                                         std::optional<std::size_t> band = std::nullopt) {
  if (train.empty()) throw ValidationError("knn_dtw_classify with an empty training set");
  if (k == 0 || k % 2 == 0) throw ValidationError("k must be a positive odd integer");
  if (k > train.size()) throw ValidationError("k exceeds the training set size");

  std::vector<std::pair<double, std::size_t>> dist(train.size());
  for (std::size_t i = 0; i < train.size(); ++i) {
    dist[i] = {dtw_distance(query, train[i].first, band), i};
  }
  std::partial_sort(dist.begin(), dist.begin() + static_cast<std::ptrdiff_t>(k), dist.end());

  std::array<int, kAlphabetSize> votes{};
  std::array<double, kAlphabetSize> dist_sum{};
  for (std::size_t i = 0; i < k; ++i) {
    const int o = train[dist[i].second].second.ordinal();
    votes[o] += 1;
    dist_sum[o] += dist[i].first;
  }
  int best = -1;
  for (int o = 0; o < kAlphabetSize; ++o) {
    if (votes[o] == 0) continue;
    if (best < 0) {
      best = o;
      continue;
    }
    const double mean_o = dist_sum[o] / votes[o];
    const double mean_b = dist_sum[best] / votes[best];
    if (votes[o] > votes[best] || (votes[o] == votes[best] && mean_o < mean_b)) best = o;
  }
  return {LetterLabel::from_ordinal(best),
          static_cast<double>(votes[best]) / static_cast<double>(k), PredictionSource::DtwKnn};
}

struct CnnConfig {
  int epochs = 16;
  int batch_size = 16;
  double learning_rate = 1e-3;
  std::uint64_t seed = 2;
  std::size_t window_len = kDefaultWindowLen;
};

struct CnnModel {
  Net net;  // logits over the 26 classes
};

inline std::array<double, kAlphabetSize> cnn_probabilities(const CnnModel& model, const Window& w) {
  const Tensor out = forward(model.net, tensor_from_window(w));
  const std::vector<double> p = softmax(out.values);
  std::array<double, kAlphabetSize> probs{};
  for (int i = 0; i < kAlphabetSize; ++i) probs[i] = p[static_cast<std::size_t>(i)];
  return probs;
}

inline LetterPrediction cnn_predict(const CnnModel& model, const Window& w) {
  const auto p = cnn_probabilities(model, w);
  int best = 0;
  for (int i = 1; i < kAlphabetSize; ++i) {
    if (p[i] > p[best]) best = i;
  }
  return {LetterLabel::from_ordinal(best), p[best], PredictionSource::Cnn};
}

/// 26-way softmax classifier trained by cross-entropy with Adam.
struct CnnTrainResult {
  CnnModel model;
  std::vector<double> history;  // mean cross-entropy per epoch
};

inline CnnTrainResult train_cnn_classifier(const Dataset& train, const CnnConfig& config) {
  if (config.epochs < 0 || config.batch_size < 1 || !(config.learning_rate > 0.0)) {
    throw ConfigError("bad CNN training configuration");
  }
  std::array<bool, kAlphabetSize> present{};
  for (const auto& r : train.recordings) present[static_cast<std::size_t>(r.letter.ordinal())] = true;
  for (int o = 0; o < kAlphabetSize; ++o) {
    if (!present[o]) {
      throw ValidationError(std::string("training set is missing letter class '") +
                            LetterLabel::from_ordinal(o).to_char() + "'");
    }
  }

  std::vector<Tensor> inputs;
  std::vector<int> labels;
  for (const auto& r : train.recordings) {
    inputs.push_back(tensor_from_window(standard_window(r, config.window_len)));
    labels.push_back(r.letter.ordinal());
  }

  NetSpec spec = default_encoder_spec(config.window_len, 64);
  spec.layers.push_back(Relu{});
  spec.layers.push_back(Dense{kAlphabetSize});
  CnnTrainResult res;
  res.model.net = net_init(spec, seed_finalize(hash_mix(config.seed, std::string_view("cnn"))));
  AdamState adam = AdamState::create(res.model.net, config.learning_rate);

  std::vector<std::size_t> order(inputs.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    Rng rng(seed_finalize(hash_mix(config.seed, static_cast<std::uint64_t>(epoch) + 500)));
    rng.shuffle(order.begin(), order.end());
    double epoch_loss = 0.0;
    std::size_t done = 0;
    while (done < order.size()) {
      const std::size_t batch = std::min<std::size_t>(config.batch_size, order.size() - done);
      std::vector<LayerParams> grads;
      for (std::size_t b = 0; b < batch; ++b) {
        const std::size_t i = order[done + b];
        ForwardCache cache;
        const Tensor out = forward(res.model.net, inputs[i], &cache);
        const std::vector<double> p = softmax(out.values);
        epoch_loss += -std::log(std::max(p[static_cast<std::size_t>(labels[i])], 1e-300));
        Tensor g = Tensor::zeros({static_cast<std::size_t>(kAlphabetSize)});
        for (int o = 0; o < kAlphabetSize; ++o) {
          g.values[o] = p[static_cast<std::size_t>(o)] - (o == labels[i] ? 1.0 : 0.0);
        }
        accumulate(grads, backward(res.model.net, cache, g).param_grads);
      }
      scale_grads(grads, 1.0 / static_cast<double>(batch));
      adam_step(adam, res.model.net, grads);
      done += batch;
    }
    res.history.push_back(epoch_loss / static_cast<double>(inputs.size()));
  }
  return res;
}

/// End-to-end 3D letter prediction: retrieve the 2D equivalent from the
/// gallery, then classify the retrieved flat window. On disagreement the
/// gallery letter wins and the source records the deferral.
struct PipelinePrediction {
  LetterPrediction prediction;
  bool disagreed = false;
};

inline PipelinePrediction predict_letter_3d(const Recording& query, const MapperBundle& bundle,
                                            const std::map<std::string, Recording>& flat_by_id,
                                            const CnnModel& letter_model) {
  const RetrievalResult r = retrieve(bundle.mapper.encoder3d, query, bundle.gallery);
  const auto it = flat_by_id.find(r.recording_id);
  if (it == flat_by_id.end()) {
    throw ValidationError("gallery recording '" + r.recording_id + "' missing from flat source");
  }
  const Window w = standard_window(it->second, bundle.mapper.config.window_len);
  const LetterPrediction cnn = cnn_predict(letter_model, w);
  const double gallery_score = 1.0 / (1.0 + r.distance);
  if (cnn.letter == r.letter) {
    return {{cnn.letter, std::max(cnn.score, gallery_score), PredictionSource::Cnn}, false};
  }
  return {{r.letter, gallery_score, PredictionSource::GalleryRetrieval}, true};
}

}  // namespace airglyph
