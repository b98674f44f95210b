#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>

#include "airglyph/core_data.hpp"
#include "airglyph/synthgen.hpp"
#include "test_util.hpp"

using namespace airglyph;

TEST_CASE("letter labels cover A-Z with stable ordinals") {
  CHECK(LetterLabel::from_char('A').ordinal() == 0);
  CHECK(LetterLabel::from_char('Z').ordinal() == 25);
  CHECK(LetterLabel::from_char('b').to_char() == 'B');
  CHECK(LetterLabel::all().size() == 26);
  CHECK_THROWS_AS(LetterLabel::from_char('1'), ValidationError);
  CHECK_THROWS_AS(LetterLabel::from_ordinal(26), ValidationError);
  CHECK(!LetterLabel::try_from_char('?').has_value());
}

TEST_CASE("writing mode round-trips through its string form") {
  CHECK(to_string(WritingMode::Flat2D) == "2D");
  CHECK(mode_from_string("3D") == WritingMode::MidAir3D);
  CHECK_THROWS_AS(mode_from_string("4D"), ValidationError);
}

TEST_CASE("recording validation rejects bad fields") {
  auto r = testutil::make_recording("r1", "s01", WritingMode::Flat2D, 'A');
  CHECK_NOTHROW(r.validate());
  auto bad_rate = r;
  bad_rate.rate_hz = 0.0;
  CHECK_THROWS_AS(bad_rate.validate(), ValidationError);
  auto empty = r;
  empty.samples.clear();
  CHECK_THROWS_AS(empty.validate(), ValidationError);
  auto nan = r;
  nan.samples[0][1] = std::nan("");
  CHECK_THROWS_AS(nan.validate(), ValidationError);
}

TEST_CASE("load_dataset reads a well-formed two-recording file") {
  const auto dir = testutil::temp_dir("core");
  const auto path = dir / "ds.jsonl";
  testutil::write_file(path,
                       R"({"id":"a","subject":"s01","mode":"2D","letter":"A","rate_hz":100.0,"samples":[[0.0,0.1,0.2],[1.0,1.1,1.2]]})"
                       "\n"
                       R"({"id":"b","subject":"s02","mode":"3D","letter":"Q","rate_hz":50.0,"samples":[[0.5,0.5,0.5]]})"
                       "\n");
  const Dataset ds = load_dataset(path);
  CHECK(ds.recordings.size() == 2);
  CHECK(ds.recordings[0].letter.to_char() == 'A');
  CHECK(ds.recordings[1].mode == WritingMode::MidAir3D);
  CHECK(ds.recordings[1].rate_hz == doctest::Approx(50.0));
}

TEST_CASE("load_dataset reports duplicate ids by name") {
  const auto dir = testutil::temp_dir("core");
  const auto path = dir / "dup.jsonl";
  const std::string rec =
      R"({"id":"same","subject":"s01","mode":"2D","letter":"A","rate_hz":100.0,"samples":[[0,0,0]]})";
  testutil::write_file(path, rec + "\n" + rec + "\n");
  CHECK_THROWS_WITH_AS(load_dataset(path), doctest::Contains("same"), ValidationError);
}

TEST_CASE("load_dataset names the record index for schema violations") {
  const auto dir = testutil::temp_dir("core");
  const auto path = dir / "short.jsonl";
  testutil::write_file(path,
                       R"({"id":"a","subject":"s01","mode":"2D","letter":"A","rate_hz":100.0,"samples":[[0,0,0]]})"
                       "\n"
                       R"({"id":"b","subject":"s01","mode":"2D","letter":"B","rate_hz":100.0,"samples":[[0,0]]})"
                       "\n");
  CHECK_THROWS_WITH_AS(load_dataset(path), doctest::Contains("record 1"), ValidationError);
}

TEST_CASE("load_dataset errors on a missing file") {
  CHECK_THROWS_AS(load_dataset("/nonexistent/nowhere.jsonl"), IoError);
}

TEST_CASE("save/load round-trip reproduces a small dataset") {
  const auto dir = testutil::temp_dir("core");
  Dataset ds;
  ds.provenance = "unit fixture";
  ds.recordings.push_back(testutil::make_recording("r1", "s01", WritingMode::Flat2D, 'L'));
  const auto path = dir / "roundtrip.jsonl";
  save_dataset(ds, path);
  const Dataset back = load_dataset(path);
  CHECK(back.provenance == ds.provenance);
  REQUIRE(back.recordings.size() == 1);
  CHECK(back.recordings[0] == ds.recordings[0]);
}

TEST_CASE("persistence is idempotent: save-load-save is byte identical") {
  const auto dir = testutil::temp_dir("core");
  GenSpec spec = GenSpec::defaults();
  spec.reps_per_letter = 1;
  spec.modes = {WritingMode::Flat2D};
  const Dataset ds = synth_dataset(spec);
  const auto p1 = dir / "a.jsonl";
  const auto p2 = dir / "b.jsonl";
  save_dataset(ds, p1);
  save_dataset(load_dataset(p1), p2);
  CHECK(testutil::files_equal(p1, p2));
}

TEST_CASE("full synthetic dataset survives persistence field-by-field") {
  const auto dir = testutil::temp_dir("core");
  const Dataset ds = synth_dataset(GenSpec::defaults());
  REQUIRE(ds.recordings.size() == 1040);
  const auto path = dir / "full.jsonl";
  save_dataset(ds, path);
  const Dataset back = load_dataset(path);
  REQUIRE(back.recordings.size() == ds.recordings.size());
  for (std::size_t i = 0; i < ds.recordings.size(); ++i) {
    const auto& a = ds.recordings[i];
    const auto& b = back.recordings[i];
    CHECK(a.id == b.id);
    CHECK(a.subject == b.subject);
    CHECK(a.mode == b.mode);
    CHECK(a.letter == b.letter);
    CHECK(a.rate_hz == doctest::Approx(b.rate_hz).epsilon(1e-9));
    REQUIRE(a.samples.size() == b.samples.size());
    double max_err = 0.0;
    for (std::size_t s = 0; s < a.samples.size(); ++s) {
      for (int ax = 0; ax < 3; ++ax) {
        max_err = std::max(max_err, std::abs(a.samples[s][ax] - b.samples[s][ax]));
      }
    }
    CHECK(max_err <= 0.5e-6);  // storage quantization bound
  }
}

TEST_CASE("save_dataset rejects an unwritable path") {
  Dataset ds;
  ds.recordings.push_back(testutil::make_recording("r1", "s01", WritingMode::Flat2D, 'A'));
  CHECK_THROWS_AS(save_dataset(ds, "/nonexistent-dir/out.jsonl"), IoError);
}

TEST_CASE("split_by_subject partitions the 1040-sample dataset 520/520") {
  const Dataset ds = synth_dataset(GenSpec::defaults());
  const auto [train, test] = split_by_subject(ds, {"s01", "s02"});
  CHECK(train.recordings.size() == 520);
  CHECK(test.recordings.size() == 520);
  for (const auto& r : train.recordings) CHECK(r.subject == "s01");
  for (const auto& r : test.recordings) CHECK(r.subject == "s02");
  CHECK(train.recordings.size() + test.recordings.size() == ds.recordings.size());
}

TEST_CASE("split_by_subject rejects unknown subjects and equal subjects") {
  Dataset ds;
  ds.recordings.push_back(testutil::make_recording("r1", "s01", WritingMode::Flat2D, 'A'));
  CHECK_THROWS_WITH_AS((void)split_by_subject(ds, {"s01", "ghost"}), doctest::Contains("ghost"),
                       ValidationError);
  CHECK_THROWS_AS((void)split_by_subject(ds, {"s01", "s01"}), ValidationError);
}
