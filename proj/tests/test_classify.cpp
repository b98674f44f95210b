#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <limits>
#include <map>

#include "airglyph/classify.hpp"
#include "airglyph/synthgen.hpp"
#include "test_util.hpp"

using namespace airglyph;

namespace {

Window win(std::initializer_list<Sample> rows) {
  Window w;
  w.values = rows;
  return w;
}

double step_cost(const Sample& x, const Sample& y) {
  double acc = 0.0;
  for (int a = 0; a < 3; ++a) acc += (x[a] - y[a]) * (x[a] - y[a]);
  return std::sqrt(acc);
}

// Exhaustive minimum over all monotone alignment paths.
double brute_dtw(const Window& a, const Window& b, std::size_t i, std::size_t j) {
  const double c = step_cost(a.values[i], b.values[j]);
  if (i == 0 && j == 0) return c;
  double best = std::numeric_limits<double>::infinity();
  if (i > 0) best = std::min(best, brute_dtw(a, b, i - 1, j));
  if (j > 0) best = std::min(best, brute_dtw(a, b, i, j - 1));
  if (i > 0 && j > 0) best = std::min(best, brute_dtw(a, b, i - 1, j - 1));
  return c + best;
}

Window random_win(std::size_t t, Rng& rng) {
  Window w;
  w.values.resize(t);
  for (auto& v : w.values) {
    for (int a = 0; a < 3; ++a) v[a] = rng.uniform(-2, 2);
  }
  return w;
}

}  // namespace

TEST_CASE("dtw: identical windows align at zero cost") {
  Rng rng(3);
  const Window w = random_win(12, rng);
  CHECK(dtw_distance(w, w) == 0.0);
}

TEST_CASE("dtw: single-step sequences reduce to the euclidean step cost") {
  const Window x = win({{1.0, 2.0, 3.0}});
  const Window y = win({{4.0, 6.0, 3.0}});
  CHECK(dtw_distance(x, y) == doctest::Approx(5.0));
}

TEST_CASE("dtw equals exhaustive enumeration over monotone alignments") {
  Rng rng(9);
  for (int trial = 0; trial < 50; ++trial) {
    const Window a = random_win(2 + trial % 4, rng);
    const Window b = random_win(2 + (trial + 1) % 3, rng);
    const double dp = dtw_distance(a, b);
    const double brute = brute_dtw(a, b, a.length() - 1, b.length() - 1);
    CHECK(dp == doctest::Approx(brute).epsilon(1e-12));
  }
}

TEST_CASE("dtw symmetry and band domination") {
  Rng rng(15);
  for (int trial = 0; trial < 20; ++trial) {
    const Window a = random_win(10, rng);
    const Window b = random_win(8, rng);
    CHECK(dtw_distance(a, b) == doctest::Approx(dtw_distance(b, a)));
    const double unbanded = dtw_distance(a, b);
    for (const std::size_t band : {2ul, 4ul, 8ul}) {
      CHECK(unbanded <= dtw_distance(a, b, band) + 1e-12);
    }
  }
}

TEST_CASE("dtw rejects empty windows and oversized bands") {
  const Window w = win({{0, 0, 0}});
  CHECK_THROWS_AS((void)dtw_distance(w, Window{}), ValidationError);
  CHECK_THROWS_AS((void)dtw_distance(w, w, 5), ValidationError);
}

TEST_CASE("knn: exact training match wins at k=1 with full confidence") {
  Rng rng(21);
  std::vector<std::pair<Window, LetterLabel>> train;
  for (int i = 0; i < 5; ++i) {
    train.push_back({random_win(8, rng), LetterLabel::from_ordinal(i)});
  }
  const auto p = knn_dtw_classify(train[3].first, train, 1);
  CHECK(p.letter == LetterLabel::from_ordinal(3));
  CHECK(p.score == 1.0);
  CHECK(p.source == PredictionSource::DtwKnn);
}

TEST_CASE("knn: degenerate single-letter training set always answers that letter") {
  Rng rng(22);
  std::vector<std::pair<Window, LetterLabel>> train;
  for (int i = 0; i < 3; ++i) train.push_back({random_win(8, rng), LetterLabel::from_char('Q')});
  const auto p = knn_dtw_classify(random_win(8, rng), train, 3);
  CHECK(p.letter == LetterLabel::from_char('Q'));
}

TEST_CASE("knn is invariant to permutation of the training list") {
  Rng rng(23);
  std::vector<std::pair<Window, LetterLabel>> train;
  for (int i = 0; i < 9; ++i) {
    train.push_back({random_win(8, rng), LetterLabel::from_ordinal(i % 4)});
  }
  const Window q = random_win(8, rng);
  const auto before = knn_dtw_classify(q, train, 3);
  Rng shuffle_rng(1);
  shuffle_rng.shuffle(train.begin(), train.end());
  const auto after = knn_dtw_classify(q, train, 3);
  CHECK(before.letter == after.letter);
  CHECK(before.score == after.score);
}

TEST_CASE("knn argument validation") {
  Rng rng(2);
  std::vector<std::pair<Window, LetterLabel>> train{{random_win(4, rng), LetterLabel::from_char('A')}};
  CHECK_THROWS_AS((void)knn_dtw_classify(random_win(4, rng), {}, 1), ValidationError);
  CHECK_THROWS_AS((void)knn_dtw_classify(random_win(4, rng), train, 2), ValidationError);
  CHECK_THROWS_AS((void)knn_dtw_classify(random_win(4, rng), train, 3), ValidationError);
}

TEST_CASE("confusion matrix bookkeeping") {
  ConfusionMatrix m;
  m.counts[0][0] = 3;
  m.counts[0][1] = 1;
  m.counts[1][1] = 4;
  m.no_letter[1] = 2;
  CHECK(m.total() == 10);
  CHECK(m.trace() == 7);
  CHECK(m.row_total(0) == 4);
  CHECK(m.row_total(1) == 6);
  CHECK(m.accuracy() == doctest::Approx(0.7));
}

namespace {

GenSpec tiny_spec() {
  GenSpec spec = GenSpec::defaults();
  spec.subjects = {"s01"};
  spec.modes = {WritingMode::Flat2D};
  spec.reps_per_letter = 3;
  return spec;
}

}  // namespace

TEST_CASE("cnn classifier: loss decreases and the trained model fits its data") {
  const Dataset train = synth_dataset(tiny_spec());
  CnnConfig cfg;
  cfg.epochs = 10;
  const auto res = train_cnn_classifier(train, cfg);
  REQUIRE(res.history.size() == 10);
  CHECK(res.history.back() < res.history.front());
  std::size_t hit = 0;
  for (const auto& r : train.recordings) {
    if (cnn_predict(res.model, standard_window(r)).letter == r.letter) ++hit;
  }
  CHECK(static_cast<double>(hit) / train.recordings.size() >= 0.9);
}

TEST_CASE("cnn classifier with zero epochs still outputs a distribution") {
  const Dataset train = synth_dataset(tiny_spec());
  CnnConfig cfg;
  cfg.epochs = 0;
  const auto res = train_cnn_classifier(train, cfg);
  const auto probs = cnn_probabilities(res.model, standard_window(train.recordings[0]));
  double sum = 0.0;
  for (const double p : probs) {
    CHECK(p >= 0.0);
    sum += p;
  }
  CHECK(sum == doctest::Approx(1.0));
}

TEST_CASE("cnn classifier requires every letter class") {
  Dataset train = synth_dataset(tiny_spec());
  Dataset missing;
  for (const auto& r : train.recordings) {
    if (r.letter.to_char() != 'M') missing.recordings.push_back(r);
  }
  CHECK_THROWS_WITH_AS((void)train_cnn_classifier(missing, CnnConfig{}), doctest::Contains("'M'"),
                       ValidationError);
}

TEST_CASE("3d prediction follows the gallery letter and records disagreement") {
  GenSpec spec = GenSpec::defaults();
  spec.subjects = {"s01"};
  spec.reps_per_letter = 2;
  const Dataset ds = synth_dataset(spec);
  const Dataset flat = filter_mode(ds, WritingMode::Flat2D);
  const Dataset air = filter_mode(ds, WritingMode::MidAir3D);

  MapperBundle bundle;
  MapperConfig mcfg;
  mcfg.epochs = 0;
  bundle.mapper = train_mapper(flat, air, mcfg);
  Dataset one;
  one.recordings.push_back(flat.recordings[4]);  // singleton gallery forces its letter
  bundle.gallery = build_gallery(bundle.mapper.encoder2d, one);

  CnnConfig ccfg;
  ccfg.epochs = 2;
  const auto cnn = train_cnn_classifier(flat, ccfg);
  std::map<std::string, Recording> flat_by_id;
  for (const auto& r : flat.recordings) flat_by_id[r.id] = r;

  const auto out = predict_letter_3d(air.recordings[30], bundle, flat_by_id, cnn.model);
  CHECK(out.prediction.letter == one.recordings[0].letter);

  const Window w = standard_window(flat_by_id.at(one.recordings[0].id));
  const auto cnn_p = cnn_predict(cnn.model, w);
  if (cnn_p.letter == one.recordings[0].letter) {
    CHECK(!out.disagreed);
    CHECK(out.prediction.source == PredictionSource::Cnn);
    CHECK(out.prediction.score >= cnn_p.score);
  } else {
    CHECK(out.disagreed);
    CHECK(out.prediction.source == PredictionSource::GalleryRetrieval);
  }
}
