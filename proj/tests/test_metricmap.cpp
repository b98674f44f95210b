#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "airglyph/metricmap.hpp"
#include "airglyph/synthgen.hpp"
#include "test_util.hpp"

using namespace airglyph;

namespace {

GenSpec small_spec(int reps) {
  GenSpec spec = GenSpec::defaults();
  spec.subjects = {"s01"};
  spec.reps_per_letter = reps;
  return spec;
}

std::pair<Dataset, Dataset> small_train(int reps) {
  const Dataset ds = synth_dataset(small_spec(reps));
  return {filter_mode(ds, WritingMode::Flat2D), filter_mode(ds, WritingMode::MidAir3D)};
}

}  // namespace

TEST_CASE("triplet loss: exact hinge evaluations") {
  const Embedding a = {0.0, 0.0};
  const Embedding p = {3.0, 4.0};
  const Embedding n = {6.0, 8.0};
  // D(a,p)=5, D(a,n)=10 -> max(5+1-10, 0) = 0
  CHECK(triplet_loss(a, p, n, 1.0) == 0.0);
  // D(a,n')=1 -> max(5+1-1, 0) = 5
  CHECK(triplet_loss(a, p, {0.0, 1.0}, 1.0) == 5.0);
  // anchor == positive, negative far -> 0
  CHECK(triplet_loss(a, a, n, 1.0) == 0.0);
  // all three equal -> margin
  CHECK(triplet_loss(a, a, a, 0.7) == 0.7);
  CHECK_THROWS_AS((void)triplet_loss(a, p, {1.0, 2.0, 3.0}, 1.0), ValidationError);
}

TEST_CASE("triplet loss is non-negative and zero iff the margin is satisfied") {
  Rng rng(4);
  for (int trial = 0; trial < 200; ++trial) {
    Embedding a(8), p(8), n(8);
    for (int i = 0; i < 8; ++i) {
      a[i] = rng.uniform(-2, 2);
      p[i] = rng.uniform(-2, 2);
      n[i] = rng.uniform(-2, 2);
    }
    const double margin = rng.uniform(0, 2);
    const double loss = triplet_loss(a, p, n, margin);
    CHECK(loss >= 0.0);
    const bool satisfied = embedding_distance(a, p) + margin <= embedding_distance(a, n);
    CHECK((loss == 0.0) == satisfied);
    CHECK(embedding_distance(a, p) == embedding_distance(p, a));
  }
}

TEST_CASE("triplet loss gradient through both encoders matches finite differences") {
  const NetSpec spec = default_encoder_spec(24, 6);
  Net enc2d = net_init(spec, 41);
  Net enc3d = net_init(spec, 42);
  Rng rng(17);
  const auto mk = [&] {
    Tensor t = Tensor::zeros({3, 24});
    for (auto& v : t.values) v = rng.uniform(-1.0, 1.0);
    return t;
  };
  const Tensor xa = mk();
  const Tensor xp = mk();
  const Tensor xn = mk();
  const double margin = 5.0;  // large margin keeps the hinge active

  const auto loss_at = [&](const Net& e2, const Net& e3) {
    return triplet_loss(forward(e3, xa).values, forward(e2, xp).values, forward(e2, xn).values,
                        margin);
  };
  REQUIRE(loss_at(enc2d, enc3d) > 0.0);

  ForwardCache ca, cp, cn;
  const Tensor oa = forward(enc3d, xa, &ca);
  const Tensor op = forward(enc2d, xp, &cp);
  const Tensor on = forward(enc2d, xn, &cn);
  const auto tg = mm_detail::triplet_backward(oa.values, op.values, on.values, margin);
  std::vector<LayerParams> g2d, g3d;
  accumulate(g3d, backward(enc3d, ca, Tensor{{tg.a.size()}, tg.a}).param_grads);
  accumulate(g2d, backward(enc2d, cp, Tensor{{tg.p.size()}, tg.p}).param_grads);
  accumulate(g2d, backward(enc2d, cn, Tensor{{tg.n.size()}, tg.n}).param_grads);

  const double h = 1e-4;
  double max_rel = 0.0;
  const auto probe = [&](Net& net, const std::vector<LayerParams>& analytic, bool is2d) {
    for (std::size_t li = 0; li < net.params.size(); ++li) {
      if (net.params[li].w.empty()) continue;
      for (std::size_t i = 0; i < net.params[li].w.size(); i += 7) {  // sample every 7th weight
        const double orig = net.params[li].w[i];
        net.params[li].w[i] = orig + h;
        const double lp = is2d ? loss_at(net, enc3d) : loss_at(enc2d, net);
        net.params[li].w[i] = orig - h;
        const double lm = is2d ? loss_at(net, enc3d) : loss_at(enc2d, net);
        net.params[li].w[i] = orig;
        const double numeric = (lp - lm) / (2 * h);
        const double an = analytic[li].w[i];
        max_rel = std::max(max_rel, std::abs(an - numeric) / std::max({std::abs(an), std::abs(numeric), 1e-8}));
      }
    }
  };
  probe(enc2d, g2d, true);
  probe(enc3d, g3d, false);
  CHECK(max_rel <= 1e-4);
}

TEST_CASE("mine_triplets produces invariant-satisfying triplets deterministically") {
  const auto [tr2d, tr3d] = small_train(3);
  const auto triplets = mine_triplets(tr2d, tr3d, 100, Mining::Random, 5);
  REQUIRE(triplets.size() == 100);
  for (const auto& t : triplets) {
    CHECK(t.anchor_letter != t.negative_letter);
    CHECK(t.anchor.length() == kDefaultWindowLen);
  }
  const auto again = mine_triplets(tr2d, tr3d, 100, Mining::Random, 5);
  for (std::size_t i = 0; i < 100; ++i) {
    CHECK(triplets[i].anchor_letter == again[i].anchor_letter);
    CHECK(triplets[i].anchor.values == again[i].anchor.values);
    CHECK(triplets[i].negative.values == again[i].negative.values);
  }
}

TEST_CASE("mine_triplets names the letter that cannot form positives") {
  auto [tr2d, tr3d] = small_train(2);
  Dataset no_q;
  no_q.provenance = tr2d.provenance;
  for (const auto& r : tr2d.recordings) {
    if (r.letter.to_char() != 'Q') no_q.recordings.push_back(r);
  }
  CHECK_THROWS_WITH_AS((void)mine_triplets(no_q, tr3d, 10, Mining::Random, 1),
                       doctest::Contains("'Q'"), ValidationError);
}

TEST_CASE("train_mapper with zero epochs returns the seeded initialization") {
  const auto [tr2d, tr3d] = small_train(2);
  MapperConfig cfg;
  cfg.epochs = 0;
  const TrainedMapper tm = train_mapper(tr2d, tr3d, cfg);
  CHECK(tm.history.empty());
  const NetSpec spec = default_encoder_spec(cfg.window_len, cfg.embedding_dim);
  const Net expect2d = net_init(spec, seed_finalize(hash_mix(cfg.seed, std::string_view("enc2d"))));
  for (std::size_t i = 0; i < expect2d.params.size(); ++i) {
    CHECK(tm.encoder2d.params[i].w == expect2d.params[i].w);
  }
}

TEST_CASE("short training run decreases the mean triplet loss") {
  const auto [tr2d, tr3d] = small_train(3);
  MapperConfig cfg;
  cfg.epochs = 3;
  cfg.triplets_per_epoch = 128;
  const TrainedMapper tm = train_mapper(tr2d, tr3d, cfg);
  REQUIRE(tm.history.size() == 3);
  CHECK(tm.history.back() < tm.history.front());
}

TEST_CASE("margin zero still trains with non-negative loss") {
  const auto [tr2d, tr3d] = small_train(2);
  MapperConfig cfg;
  cfg.epochs = 1;
  cfg.triplets_per_epoch = 64;
  cfg.margin = 0.0;
  const TrainedMapper tm = train_mapper(tr2d, tr3d, cfg);
  CHECK(tm.history.front() >= 0.0);
}

TEST_CASE("gallery: one entry per flat recording, deterministic fingerprint") {
  GenSpec spec = small_spec(10);
  spec.modes = {WritingMode::Flat2D};
  const Dataset flat = synth_dataset(spec);
  REQUIRE(flat.recordings.size() == 260);
  const Net enc = net_init(default_encoder_spec(), 7);
  const Gallery g1 = build_gallery(enc, flat);
  const Gallery g2 = build_gallery(enc, flat);
  CHECK(g1.entries.size() == 260);
  CHECK(g1.fingerprint == g2.fingerprint);
  for (std::size_t i = 0; i < g1.entries.size(); ++i) {
    CHECK(g1.entries[i].embedding == g2.entries[i].embedding);
  }
}

TEST_CASE("gallery rejects empty and non-2D sources") {
  const Net enc = net_init(default_encoder_spec(), 7);
  CHECK_THROWS_AS((void)build_gallery(enc, Dataset{}), ValidationError);
  Dataset mixed;
  mixed.recordings.push_back(testutil::make_recording("x", "s01", WritingMode::MidAir3D, 'A', 150));
  CHECK_THROWS_AS((void)build_gallery(enc, mixed), ValidationError);
}

TEST_CASE("retrieve: singleton gallery always wins; mode mismatch rejected") {
  GenSpec spec = small_spec(1);
  const Dataset ds = synth_dataset(spec);
  const Dataset flat = filter_mode(ds, WritingMode::Flat2D);
  const Net enc = net_init(default_encoder_spec(), 3);
  Dataset one;
  one.recordings.push_back(flat.recordings[7]);
  const Gallery g = build_gallery(enc, one);
  const auto q3d = filter_mode(ds, WritingMode::MidAir3D).recordings[20];
  const auto r = retrieve(enc, q3d, g);
  CHECK(r.recording_id == flat.recordings[7].id);
  CHECK_THROWS_AS((void)retrieve(enc, flat.recordings[0], g), ValidationError);
}

TEST_CASE("self-retrieval: every gallery source retrieves itself at distance zero") {
  GenSpec spec = small_spec(2);
  spec.modes = {WritingMode::Flat2D};
  const Dataset flat = synth_dataset(spec);
  const Net enc = net_init(default_encoder_spec(), 9);
  const Gallery g = build_gallery(enc, flat);
  for (const auto& rec : flat.recordings) {
    const auto r = nearest_entry(g, embed(enc, rec));
    CHECK(r.recording_id == rec.id);
    CHECK(r.distance == 0.0);
  }
}

TEST_CASE("retrieval is invariant to gallery permutation") {
  GenSpec spec = small_spec(2);
  spec.modes = {WritingMode::Flat2D};
  const Dataset flat = synth_dataset(spec);
  const Net enc = net_init(default_encoder_spec(), 9);
  Gallery g = build_gallery(enc, flat);
  const Embedding query = embed(enc, flat.recordings[13]);
  const auto before = nearest_entry(g, query);
  Rng rng(2);
  rng.shuffle(g.entries.begin(), g.entries.end());
  const auto after = nearest_entry(g, query);
  CHECK(before.recording_id == after.recording_id);
  CHECK(before.distance == after.distance);
}

TEST_CASE("mapping accuracy of untrained encoders stays a valid fraction") {
  const auto [tr2d, tr3d] = small_train(2);
  const Net enc2d = net_init(default_encoder_spec(), 1);
  const Net enc3d = net_init(default_encoder_spec(), 2);
  const Gallery g = build_gallery(enc2d, tr2d);
  const double acc = mapping_accuracy(enc3d, tr3d, g);
  CHECK(acc >= 0.0);
  CHECK(acc <= 1.0);
}

TEST_CASE("mapper bundles round-trip through disk") {
  const auto [tr2d, tr3d] = small_train(1);
  MapperConfig cfg;
  cfg.epochs = 1;
  cfg.triplets_per_epoch = 32;
  MapperBundle b;
  b.mapper = train_mapper(tr2d, tr3d, cfg);
  b.gallery = build_gallery(b.mapper.encoder2d, tr2d);
  const auto dir = testutil::temp_dir("bundle");
  const auto path = dir / "mapper.json";
  save_bundle(b, path);
  const MapperBundle back = load_bundle(path);
  CHECK(back.mapper.config.margin == b.mapper.config.margin);
  CHECK(back.mapper.history == b.mapper.history);
  CHECK(back.gallery.fingerprint == b.gallery.fingerprint);
  REQUIRE(back.gallery.entries.size() == b.gallery.entries.size());
  CHECK(back.gallery.entries[5].embedding == b.gallery.entries[5].embedding);
  for (std::size_t i = 0; i < b.mapper.encoder3d.params.size(); ++i) {
    CHECK(back.mapper.encoder3d.params[i].w == b.mapper.encoder3d.params[i].w);
  }

  // a tampered gallery fingerprint must be rejected on load
  std::string body = testutil::read_file(path);
  const std::string key = "\"fingerprint\": ";
  const std::size_t pos = body.find(key) + key.size();
  body[pos] = body[pos] == '1' ? '2' : '1';
  const auto bad = dir / "tampered.json";
  testutil::write_file(bad, body);
  CHECK_THROWS_WITH_AS((void)load_bundle(bad), doctest::Contains("fingerprint"), ValidationError);
}
