// airglyph: synthetic air-writing data, triplet mapper training, letter and
// word evaluation, and instruction-pair export behind one command.

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <future>
#include <iostream>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "airglyph/airglyph.hpp"

namespace {

using namespace airglyph;
using nlohmann::ordered_json;

// Flag > env > config file > built-in default. CLI11 reports flag presence;
// the config file fills anything the command line left untouched.
class ConfigLayer {
 public:
  void load(const std::string& path) {
    if (path.empty()) return;
    std::ifstream in(path);
    if (!in) throw IoError("cannot open config file: " + path);
    nlohmann::json j = nlohmann::json::parse(in, nullptr, false);
    if (j.is_discarded() || !j.is_object()) {
      throw ConfigError("config file is not a JSON object: " + path);
    }
    file_ = std::move(j);
  }

  template <typename T>
  void overlay(const CLI::Option* opt, const std::string& key, T& value) const {
    if (opt != nullptr && opt->count() > 0) return;  // flag wins
    if (file_.contains(key)) {
      try {
        value = file_.at(key).get<T>();
      } catch (const nlohmann::json::exception&) {
        throw ConfigError("config key '" + key + "' has the wrong type");
      }
    }
  }

  const nlohmann::json& raw() const { return file_; }

 private:
  nlohmann::json file_ = nlohmann::json::object();
};

struct GlobalArgs {
  std::string config_path;
  std::uint64_t seed = 42;
  int jobs = 1;
  std::string out;
  CLI::Option* seed_opt = nullptr;
  CLI::Option* jobs_opt = nullptr;
  CLI::Option* out_opt = nullptr;
};

GlobalArgs add_global_flags(CLI::App& app) {
  GlobalArgs g;
  app.add_option("--config", g.config_path, "JSON config file (flags override it)");
  g.seed_opt = app.add_option("--seed", g.seed, "master random seed");
  g.jobs_opt = app.add_option("--jobs", g.jobs, "worker cap for parallel evaluation");
  g.out_opt = app.add_option("--out", g.out, "output path");
  return g;
}

void resolve_globals(GlobalArgs& g, const ConfigLayer& cfg, const std::string& default_out) {
  cfg.overlay(g.seed_opt, "seed", g.seed);
  cfg.overlay(g.jobs_opt, "jobs", g.jobs);
  cfg.overlay(g.out_opt, "out", g.out);
  if (g.out.empty()) g.out = default_out;
  if (g.jobs < 1) throw ConfigError("--jobs must be >= 1");
}

std::vector<WritingMode> parse_modes(const std::string& modes) {
  if (modes == "both") return {WritingMode::Flat2D, WritingMode::MidAir3D};
  if (modes == "2D") return {WritingMode::Flat2D};
  if (modes == "3D") return {WritingMode::MidAir3D};
  throw ConfigError("--modes must be one of 2D|3D|both, got '" + modes + "'");
}

std::string subject_name(int index) {
  char buf[16];
  std::snprintf(buf, sizeof(buf), "s%02d", index + 1);
  return buf;
}

ordered_json noise_to_json(const NoiseConfig& n) {
  return {{"accel_sigma", n.accel_sigma},
          {"scale_jitter", n.scale_jitter},
          {"rot_jitter_deg", n.rot_jitter_deg},
          {"tilt_deg", n.tilt_deg},
          {"depth_wobble_amp", n.depth_wobble_amp},
          {"scale_bias", n.scale_bias},
          {"rot_bias_deg", n.rot_bias_deg}};
}

NoiseConfig noise_from_json(const nlohmann::json& j, NoiseConfig base) {
  if (j.contains("accel_sigma")) base.accel_sigma = j.at("accel_sigma").get<double>();
  if (j.contains("scale_jitter")) base.scale_jitter = j.at("scale_jitter").get<double>();
  if (j.contains("rot_jitter_deg")) base.rot_jitter_deg = j.at("rot_jitter_deg").get<double>();
  if (j.contains("tilt_deg")) base.tilt_deg = j.at("tilt_deg").get<double>();
  if (j.contains("depth_wobble_amp")) base.depth_wobble_amp = j.at("depth_wobble_amp").get<double>();
  if (j.contains("scale_bias")) base.scale_bias = j.at("scale_bias").get<double>();
  if (j.contains("rot_bias_deg")) base.rot_bias_deg = j.at("rot_bias_deg").get<double>();
  return base;
}

struct PipelineParts {
  MapperBundle bundle;
  std::map<std::string, Recording> flat_by_id;
  CnnModel letter_model;
};

PipelineParts load_pipeline(const std::string& bundle_path, const Dataset& data,
                            const std::string& train_subject, int cnn_epochs, std::uint64_t seed) {
  PipelineParts parts;
  parts.bundle = load_bundle(bundle_path);
  Dataset flat;
  for (const auto& r : data.recordings) {
    if (r.subject == train_subject && r.mode == WritingMode::Flat2D) flat.recordings.push_back(r);
  }
  if (flat.recordings.empty()) {
    throw ValidationError("no flat recordings of subject '" + train_subject + "' in the dataset");
  }
  for (const auto& r : flat.recordings) parts.flat_by_id[r.id] = r;
  CnnConfig cc;
  cc.epochs = cnn_epochs;
  cc.window_len = parts.bundle.mapper.config.window_len;
  cc.seed = seed_finalize(hash_mix(seed, std::string_view("cnn")));
  parts.letter_model = train_cnn_classifier(flat, cc).model;
  return parts;
}

std::unique_ptr<ChatClient> make_chat_client(const std::string& mock_script) {
  if (!mock_script.empty()) {
    return std::make_unique<MockClient>(MockClient::from_file(mock_script));
  }
  if (auto cfg = HttpConfig::from_env()) {
    return std::make_unique<HttpClient>(*cfg);
  }
  throw ConfigError(
      "llm access needs --mock-script or the AIRGLYPH_LLM_BASE_URL / AIRGLYPH_LLM_API_KEY / "
      "AIRGLYPH_LLM_MODEL environment");
}

// Applies the predictor across recordings with at most `jobs` workers;
// results keep input order.
std::vector<MaybeLetter> map_predictions(const std::vector<const Recording*>& recs,
                                         const LetterPredictor& predictor, int jobs) {
  std::vector<MaybeLetter> out(recs.size());
  if (jobs <= 1) {
    for (std::size_t i = 0; i < recs.size(); ++i) out[i] = predictor(*recs[i]);
    return out;
  }
  std::vector<std::future<void>> workers;
  const std::size_t chunk = (recs.size() + static_cast<std::size_t>(jobs) - 1) / jobs;
  for (int w = 0; w < jobs; ++w) {
    const std::size_t lo = static_cast<std::size_t>(w) * chunk;
    const std::size_t hi = std::min(recs.size(), lo + chunk);
    if (lo >= hi) break;
    workers.push_back(std::async(std::launch::async, [&, lo, hi] {
      for (std::size_t i = lo; i < hi; ++i) out[i] = predictor(*recs[i]);
    }));
  }
  for (auto& w : workers) w.get();
  return out;
}

int run_gen_data(GlobalArgs& g, const ConfigLayer& cfg, int subjects, int reps, std::string modes,
                 double rate, double duration, const std::map<std::string, CLI::Option*>& opts) {
  resolve_globals(g, cfg, "dataset.jsonl");
  cfg.overlay(opts.at("subjects"), "subjects", subjects);
  cfg.overlay(opts.at("reps"), "reps", reps);
  cfg.overlay(opts.at("modes"), "modes", modes);
  cfg.overlay(opts.at("rate"), "rate", rate);
  cfg.overlay(opts.at("duration"), "duration", duration);
  if (subjects < 1) throw ConfigError("--subjects must be >= 1");

  GenSpec spec;
  spec.seed = g.seed;
  spec.reps_per_letter = reps;
  spec.modes = parse_modes(modes);
  spec.kinematics.rate_hz = rate;
  spec.kinematics.duration_s = duration;
  const GenSpec defaults = GenSpec::defaults();
  for (int i = 0; i < subjects; ++i) {
    const std::string name = subject_name(i);
    NoiseConfig base = defaults.noise.at(i % 2 == 0 ? "s01" : "s02");
    if (cfg.raw().contains("noise") && cfg.raw().at("noise").contains(name)) {
      base = noise_from_json(cfg.raw().at("noise").at(name), base);
    }
    spec.subjects.push_back(name);
    spec.noise[name] = base;
  }

  ordered_json resolved;
  resolved["command"] = "gen-data";
  resolved["seed"] = g.seed;
  resolved["subjects"] = subjects;
  resolved["reps"] = reps;
  resolved["modes"] = modes;
  resolved["rate_hz"] = rate;
  resolved["duration_s"] = duration;
  resolved["noise"] = ordered_json::object();
  for (const auto& s : spec.subjects) resolved["noise"][s] = noise_to_json(spec.noise.at(s));

  Dataset ds = synth_dataset(spec);
  ds.provenance = resolved.dump();
  save_dataset(ds, g.out);
  std::cout << "wrote " << ds.recordings.size() << " recordings to " << g.out << "\n";
  return 0;
}

int run_train_mapper(GlobalArgs& g, const ConfigLayer& cfg, std::string data_path,
                     std::string train_subject, MapperConfig mc, std::string mining,
                     const std::map<std::string, CLI::Option*>& opts) {
  resolve_globals(g, cfg, "mapper_bundle.json");
  cfg.overlay(opts.at("data"), "data", data_path);
  cfg.overlay(opts.at("train-subject"), "train_subject", train_subject);
  cfg.overlay(opts.at("epochs"), "epochs", mc.epochs);
  cfg.overlay(opts.at("margin"), "margin", mc.margin);
  cfg.overlay(opts.at("batch"), "batch_size", mc.batch_size);
  cfg.overlay(opts.at("triplets"), "triplets_per_epoch", mc.triplets_per_epoch);
  cfg.overlay(opts.at("lr"), "learning_rate", mc.learning_rate);
  cfg.overlay(opts.at("mining"), "mining", mining);
  if (data_path.empty()) throw ConfigError("train-mapper needs --data <dataset file>");
  if (mining == "random") {
    mc.mining = Mining::Random;
  } else if (mining == "semihard") {
    mc.mining = Mining::SemiHard;
  } else {
    throw ConfigError("--mining must be random|semihard");
  }
  mc.seed = g.seed;

  const Dataset data = load_dataset(data_path);
  Dataset train2d, train3d;
  for (const auto& r : data.recordings) {
    if (r.subject != train_subject) continue;
    (r.mode == WritingMode::Flat2D ? train2d : train3d).recordings.push_back(r);
  }
  if (train2d.recordings.empty() || train3d.recordings.empty()) {
    throw ValidationError("subject '" + train_subject + "' needs both 2D and 3D recordings");
  }

  MapperBundle bundle;
  bundle.mapper = train_mapper(train2d, train3d, mc);
  bundle.gallery = build_gallery(bundle.mapper.encoder2d, train2d);

  ordered_json resolved;
  resolved["command"] = "train-mapper";
  resolved["seed"] = g.seed;
  resolved["data"] = data_path;
  resolved["train_subject"] = train_subject;
  resolved["mapper"] = mapper_config_to_json(mc);
  save_bundle(bundle, g.out, resolved);

  std::cout << "epoch losses:";
  for (const double h : bundle.mapper.history) std::cout << " " << h;
  std::cout << "\ngallery entries: " << bundle.gallery.entries.size() << "\nwrote " << g.out
            << "\n";
  return 0;
}

ordered_json mode_eval_to_json(const ModeEval& ev) {
  ordered_json j;
  j["metrics"] = metrics_to_json(ev.metrics);
  j["confusion"] = confusion_to_json(ev.matrix);
  return j;
}

int run_eval_letters(GlobalArgs& g, const ConfigLayer& cfg, std::string data_path,
                     std::string predictor_name, std::string train_subject,
                     std::string test_subject, std::string bundle_path, std::string mock_script,
                     int knn_k, int band, int cnn_epochs,
                     const std::map<std::string, CLI::Option*>& opts) {
  resolve_globals(g, cfg, "letter_report.json");
  cfg.overlay(opts.at("data"), "data", data_path);
  cfg.overlay(opts.at("predictor"), "predictor", predictor_name);
  cfg.overlay(opts.at("train-subject"), "train_subject", train_subject);
  cfg.overlay(opts.at("test-subject"), "test_subject", test_subject);
  cfg.overlay(opts.at("bundle"), "bundle", bundle_path);
  cfg.overlay(opts.at("mock-script"), "mock_script", mock_script);
  cfg.overlay(opts.at("k"), "knn_k", knn_k);
  cfg.overlay(opts.at("band"), "band", band);
  cfg.overlay(opts.at("cnn-epochs"), "cnn_epochs", cnn_epochs);
  if (data_path.empty()) throw ConfigError("eval-letters needs --data <dataset file>");

  const Dataset data = load_dataset(data_path);
  const auto [train, test] = split_by_subject(data, {train_subject, test_subject});

  LetterPredictor predictor;
  std::unique_ptr<ChatClient> client;
  std::shared_ptr<PipelineParts> parts;
  auto disagreements = std::make_shared<std::atomic<std::size_t>>(0);

  if (predictor_name == "dtw") {
    auto dtw_train = std::make_shared<std::vector<std::pair<Window, LetterLabel>>>();
    for (const auto& r : train.recordings) dtw_train->push_back({standard_window(r), r.letter});
    const std::optional<std::size_t> band_opt =
        band > 0 ? std::optional<std::size_t>(static_cast<std::size_t>(band)) : std::nullopt;
    predictor = [dtw_train, knn_k, band_opt](const Recording& r) {
      return MaybeLetter{
          knn_dtw_classify(standard_window(r), *dtw_train, static_cast<std::size_t>(knn_k), band_opt)
              .letter};
    };
  } else if (predictor_name == "cnn") {
    CnnConfig cc;
    cc.epochs = cnn_epochs;
    cc.seed = seed_finalize(hash_mix(g.seed, std::string_view("cnn")));
    auto cnn = std::make_shared<CnnModel>(train_cnn_classifier(train, cc).model);
    predictor = [cnn](const Recording& r) {
      return MaybeLetter{cnn_predict(*cnn, standard_window(r)).letter};
    };
  } else if (predictor_name == "pipeline3d") {
    if (bundle_path.empty()) throw ConfigError("predictor pipeline3d needs --bundle");
    parts = std::make_shared<PipelineParts>(
        load_pipeline(bundle_path, data, train_subject, cnn_epochs, g.seed));
    predictor = [parts, disagreements](const Recording& r) -> MaybeLetter {
      if (r.mode != WritingMode::MidAir3D) {
        // flat recordings bypass the mapper and go straight to the classifier
        return cnn_predict(parts->letter_model,
                           standard_window(r, parts->bundle.mapper.config.window_len))
            .letter;
      }
      const auto out = predict_letter_3d(r, parts->bundle, parts->flat_by_id, parts->letter_model);
      if (out.disagreed) disagreements->fetch_add(1);
      return out.prediction.letter;
    };
  } else if (predictor_name == "llm") {
    client = make_chat_client(mock_script);
    ChatClient* raw = client.get();
    predictor = [raw](const Recording& r) -> MaybeLetter {
      const auto messages = build_zero_shot_prompt(resample(r, kDefaultWindowLen));
      return parse_letter_response(raw->complete(messages, ChatParams{}));
    };
  } else {
    throw ConfigError("--predictor must be dtw|cnn|pipeline3d|llm");
  }

  const int eval_jobs = predictor_name == "llm" ? 1 : g.jobs;  // keep mock call order stable
  std::map<WritingMode, ModeEval> by_mode;
  for (const WritingMode mode : {WritingMode::Flat2D, WritingMode::MidAir3D}) {
    std::vector<const Recording*> recs;
    std::vector<LetterLabel> truths;
    for (const auto& r : test.recordings) {
      if (r.mode == mode) {
        recs.push_back(&r);
        truths.push_back(r.letter);
      }
    }
    if (recs.empty()) continue;
    const auto preds = map_predictions(recs, predictor, eval_jobs);
    by_mode[mode] = {compute_metrics(preds, truths), confusion(preds, truths)};
  }

  ordered_json resolved;
  resolved["command"] = "eval-letters";
  resolved["seed"] = g.seed;
  resolved["jobs"] = g.jobs;
  resolved["data"] = data_path;
  resolved["predictor"] = predictor_name;
  resolved["train_subject"] = train_subject;
  resolved["test_subject"] = test_subject;
  resolved["bundle"] = bundle_path;
  resolved["knn_k"] = knn_k;
  resolved["band"] = band;
  resolved["cnn_epochs"] = cnn_epochs;

  ordered_json report;
  report["config"] = resolved;
  std::string table;
  for (const auto& [mode, ev] : by_mode) {
    report[std::string(to_string(mode))] = mode_eval_to_json(ev);
    char line[128];
    std::snprintf(line, sizeof(line), "%s  accuracy %.4f  macro_f1 %.4f  n %zu\n",
                  std::string(to_string(mode)).c_str(), ev.metrics.accuracy, ev.metrics.macro_f1,
                  ev.metrics.n);
    table += line;
  }
  if (predictor_name == "pipeline3d") {
    const std::size_t n3d =
        by_mode.count(WritingMode::MidAir3D) ? by_mode[WritingMode::MidAir3D].metrics.n : 0;
    report["disagreement_rate"] =
        n3d > 0 ? static_cast<double>(disagreements->load()) / static_cast<double>(n3d) : 0.0;
  }
  emit_report(report, g.out, table);
  std::cout << table << "wrote " << g.out << "\n";
  return 0;
}

int run_eval_words(GlobalArgs& g, const ConfigLayer& cfg, std::string data_path,
                   std::string bundle_path, std::string lexicon_path, std::string train_subject,
                   std::size_t words_per_cell, double fatigue, int cnn_epochs, double alpha,
                   int validation_reps, bool llm_decode, std::string mock_script,
                   const std::map<std::string, CLI::Option*>& opts) {
  resolve_globals(g, cfg, "word_report.json");
  cfg.overlay(opts.at("data"), "data", data_path);
  cfg.overlay(opts.at("bundle"), "bundle", bundle_path);
  cfg.overlay(opts.at("lexicon"), "lexicon", lexicon_path);
  cfg.overlay(opts.at("train-subject"), "train_subject", train_subject);
  cfg.overlay(opts.at("words-per-cell"), "words_per_cell", words_per_cell);
  cfg.overlay(opts.at("fatigue"), "fatigue", fatigue);
  cfg.overlay(opts.at("cnn-epochs"), "cnn_epochs", cnn_epochs);
  cfg.overlay(opts.at("alpha"), "alpha", alpha);
  cfg.overlay(opts.at("validation-reps"), "validation_reps", validation_reps);
  cfg.overlay(opts.at("mock-script"), "mock_script", mock_script);
  if (data_path.empty()) throw ConfigError("eval-words needs --data <dataset file>");
  if (bundle_path.empty()) throw ConfigError("eval-words needs --bundle <mapper bundle>");
  if (validation_reps < 1) throw ConfigError("--validation-reps must be >= 1");

  const Dataset data = load_dataset(data_path);
  const auto parts = std::make_shared<PipelineParts>(
      load_pipeline(bundle_path, data, train_subject, cnn_epochs, g.seed));
  const GridLetterPredictor predictor = [parts](const Recording& r) {
    return predict_letter_3d(r, parts->bundle, parts->flat_by_id, parts->letter_model)
        .prediction.letter;
  };

  const Lexicon lexicon = Lexicon::load(lexicon_path);

  WordGridConfig wc;
  wc.words_per_cell = words_per_cell;
  wc.fatigue_per_position = fatigue;
  wc.seed = seed_finalize(hash_mix(g.seed, std::string_view("word-grid")));
  if (cfg.raw().contains("word_noise")) {
    wc.noise = noise_from_json(cfg.raw().at("word_noise"), wc.noise);
  }

  // confusion model from fresh validation recordings in the train subject's
  // style at word-writing intensity
  NoiseConfig vnoise = wc.noise;
  vnoise.scale_bias = 1.0;
  vnoise.rot_bias_deg = 0.0;
  std::vector<MaybeLetter> vpreds;
  std::vector<LetterLabel> vtruths;
  const std::uint64_t vseed = seed_finalize(hash_mix(g.seed, std::string_view("validation")));
  for (const LetterLabel letter : LetterLabel::all()) {
    for (int rep = 0; rep < validation_reps; ++rep) {
      const Recording rec =
          synth_recording(letter, WritingMode::MidAir3D, wc.kinematics, vnoise,
                          recording_seed(vseed, train_subject, letter, WritingMode::MidAir3D, rep));
      vpreds.push_back(predictor(rec));
      vtruths.push_back(letter);
    }
  }
  const ConfusionMatrix vmatrix = confusion(vpreds, vtruths);
  const ConfusionModel model = fit_confusion_model(vmatrix, alpha);

  WordDecoder decoder;
  std::unique_ptr<ChatClient> client;
  if (llm_decode) {
    client = make_chat_client(mock_script);
    ChatClient* raw = client.get();
    decoder = [raw](const PositionObservations& obs) -> std::optional<std::string> {
      const auto hyp = llm_decode_word(*raw, obs);
      if (!hyp) return std::nullopt;
      return hyp->word;
    };
  }
  const WordGridResult grid = run_word_grid(predictor, lexicon, model, wc, decoder);

  ordered_json resolved;
  resolved["command"] = "eval-words";
  resolved["seed"] = g.seed;
  resolved["data"] = data_path;
  resolved["bundle"] = bundle_path;
  resolved["lexicon"] = lexicon_path;
  resolved["train_subject"] = train_subject;
  resolved["words_per_cell"] = words_per_cell;
  resolved["fatigue_per_position"] = fatigue;
  resolved["alpha"] = alpha;
  resolved["validation_reps"] = validation_reps;
  resolved["cnn_epochs"] = cnn_epochs;
  resolved["llm_decode"] = llm_decode;
  resolved["word_noise"] = noise_to_json(wc.noise);
  resolved["grid_seed"] = wc.seed;

  ordered_json report;
  report["config"] = resolved;
  report["validation_accuracy"] = vmatrix.accuracy();
  report["validation_confusion"] = confusion_to_json(vmatrix);
  report["grid"] = word_grid_to_json(grid);
  ordered_json means;
  for (const std::size_t len : wc.word_lengths) {
    means[std::to_string(len)] = grid.mean_for_length(len);
  }
  report["mean_by_length"] = means;

  const std::string table = format_word_grid_table(grid);
  emit_report(report, g.out, table);
  std::cout << table << "wrote " << g.out << "\n";
  return 0;
}

int run_build_pairs(GlobalArgs& g, const ConfigLayer& cfg, std::string data_path,
                    std::string train_subject, int variations, std::string mock_script,
                    const std::map<std::string, CLI::Option*>& opts) {
  resolve_globals(g, cfg, "pairs.jsonl");
  cfg.overlay(opts.at("data"), "data", data_path);
  cfg.overlay(opts.at("train-subject"), "train_subject", train_subject);
  cfg.overlay(opts.at("variations"), "variations", variations);
  cfg.overlay(opts.at("mock-script"), "mock_script", mock_script);
  if (data_path.empty()) throw ConfigError("build-pairs needs --data <dataset file>");

  const Dataset data = load_dataset(data_path);
  Dataset train;
  for (const auto& r : data.recordings) {
    if (r.subject == train_subject) train.recordings.push_back(r);
  }
  if (train.recordings.empty()) {
    throw ValidationError("no recordings of subject '" + train_subject + "' in the dataset");
  }

  ordered_json resolved;
  resolved["command"] = "build-pairs";
  resolved["seed"] = g.seed;
  resolved["data"] = data_path;
  resolved["train_subject"] = train_subject;
  resolved["variations"] = variations;
  resolved["mock_script"] = mock_script;

  auto client = make_chat_client(mock_script);
  const auto pairs =
      build_pair_dataset(*client, train, variations, std::filesystem::path(g.out + ".partial"));
  save_pairs(pairs, g.out, resolved);
  std::cout << "wrote " << pairs.size() << " instruction pairs to " << g.out << "\n";
  return 0;
}

int run_grad_check(GlobalArgs& g, const ConfigLayer& cfg) {
  resolve_globals(g, cfg, "grad_report.json");

  struct Case {
    std::string name;
    NetSpec spec;
  };
  std::vector<Case> cases;
  {
    NetSpec conv;
    conv.input_channels = 3;
    conv.input_len = 32;
    conv.layers = {Conv1d{8, 5, 2, 2}};
    cases.push_back({"conv1d", conv});
    NetSpec dense;
    dense.input_channels = 3;
    dense.input_len = 16;
    dense.layers = {Dense{10}};
    cases.push_back({"dense", dense});
    NetSpec relu = conv;
    relu.layers.push_back(Relu{});
    relu.layers.push_back(Dense{6});
    cases.push_back({"conv-relu-dense", relu});
    NetSpec pool = conv;
    pool.layers.push_back(Relu{});
    pool.layers.push_back(MaxPool{2});
    pool.layers.push_back(Dense{6});
    cases.push_back({"conv-relu-maxpool-dense", pool});
    NetSpec gap = conv;
    gap.layers.push_back(Relu{});
    gap.layers.push_back(GlobalAvgPool{});
    gap.layers.push_back(Dense{6});
    cases.push_back({"conv-relu-gap-dense", gap});
    cases.push_back({"default-encoder", default_encoder_spec(64, 16)});
  }

  // Finite differences need inputs clear of relu kinks and pool ties.
  const auto clean_input = [](const Net& net, std::uint64_t seed0) {
    for (std::uint64_t seed = seed0;; ++seed) {
      Tensor x = Tensor::zeros({net.spec.input_channels, net.spec.input_len});
      Rng rng(seed);
      for (auto& v : x.values) v = rng.uniform(-1.0, 1.0);
      ForwardCache cache;
      forward(net, x, &cache);
      bool ok = true;
      for (std::size_t i = 0; i < net.spec.layers.size() && ok; ++i) {
        if (std::holds_alternative<Relu>(net.spec.layers[i])) {
          for (const double v : cache.activations[i].values) ok = ok && std::abs(v) > 1e-3;
        } else if (const auto* m = std::get_if<MaxPool>(&net.spec.layers[i])) {
          const auto& in = cache.activations[i];
          const std::size_t ch = in.shape[0];
          const std::size_t len = in.shape[1];
          for (std::size_t c = 0; c < ch && ok; ++c) {
            for (std::size_t ol = 0; ol < len / m->width; ++ol) {
              double top = -1e300, second = -1e300;
              for (std::size_t k = 0; k < m->width; ++k) {
                const double v = in.values[c * len + ol * m->width + k];
                if (v > top) {
                  second = top;
                  top = v;
                } else if (v > second) {
                  second = v;
                }
              }
              // ties between relu-clamped zeros are smooth either way
              ok = ok && (m->width == 1 || second <= 1e-9 || top - second > 1e-3);
            }
          }
        }
      }
      if (ok || seed > seed0 + 500) return x;
    }
  };

  bool all_ok = true;
  ordered_json rows = ordered_json::array();
  for (const auto& c : cases) {
    const Net net = net_init(c.spec, seed_finalize(hash_mix(g.seed, c.name)));
    const Tensor input = clean_input(net, seed_finalize(hash_mix(g.seed, c.name + "-in")));
    const double err = grad_check(net, input);
    const bool ok = err <= 1e-4;
    all_ok = all_ok && ok;
    std::printf("%-26s max_rel_err %.3e  %s\n", c.name.c_str(), err, ok ? "pass" : "FAIL");
    rows.push_back({{"net", c.name}, {"max_rel_err", err}, {"pass", ok}});
  }

  // triplet hinge through both encoders at an active-hinge point
  {
    const NetSpec spec = default_encoder_spec(24, 6);
    Net enc2d = net_init(spec, seed_finalize(hash_mix(g.seed, std::string_view("t2"))));
    Net enc3d = net_init(spec, seed_finalize(hash_mix(g.seed, std::string_view("t3"))));
    const Tensor xa = clean_input(enc3d, seed_finalize(hash_mix(g.seed, std::string_view("ta"))));
    const Tensor xp = clean_input(enc2d, seed_finalize(hash_mix(g.seed, std::string_view("tp"))));
    const Tensor xn = clean_input(enc2d, seed_finalize(hash_mix(g.seed, std::string_view("tn"))));
    const double margin = 5.0;
    const auto loss_at = [&] {
      return triplet_loss(forward(enc3d, xa).values, forward(enc2d, xp).values,
                          forward(enc2d, xn).values, margin);
    };
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
    const auto probe = [&](Net& net, const std::vector<LayerParams>& analytic) {
      for (std::size_t li = 0; li < net.params.size(); ++li) {
        for (std::size_t i = 0; i < net.params[li].w.size(); i += 11) {
          const double orig = net.params[li].w[i];
          net.params[li].w[i] = orig + h;
          const double lp = loss_at();
          net.params[li].w[i] = orig - h;
          const double lm = loss_at();
          net.params[li].w[i] = orig;
          const double numeric = (lp - lm) / (2 * h);
          const double an = analytic[li].w[i];
          max_rel = std::max(
              max_rel, std::abs(an - numeric) / std::max({std::abs(an), std::abs(numeric), 1e-8}));
        }
      }
    };
    probe(enc2d, g2d);
    probe(enc3d, g3d);
    const bool ok = max_rel <= 1e-4;
    all_ok = all_ok && ok;
    std::printf("%-26s max_rel_err %.3e  %s\n", "triplet-loss", max_rel, ok ? "pass" : "FAIL");
    rows.push_back({{"net", "triplet-loss"}, {"max_rel_err", max_rel}, {"pass", ok}});
  }

  ordered_json report;
  report["config"] = {{"command", "grad-check"}, {"seed", g.seed}};
  report["checks"] = rows;
  report["pass"] = all_ok;
  emit_report(report, g.out);
  std::cout << "wrote " << g.out << "\n";
  if (!all_ok) throw ValidationError("gradient check failed");
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"air-written letter recognition toolkit"};
  app.require_subcommand(1);

  ConfigLayer cfg;

  auto* gen = app.add_subcommand("gen-data", "synthesize a letter-writing dataset");
  GlobalArgs gen_g = add_global_flags(*gen);
  int gen_subjects = 2, gen_reps = 10;
  std::string gen_modes = "both";
  double gen_rate = 100.0, gen_duration = 2.0;
  std::map<std::string, CLI::Option*> gen_opts;
  gen_opts["subjects"] = gen->add_option("--subjects", gen_subjects, "number of synthetic writers");
  gen_opts["reps"] = gen->add_option("--reps", gen_reps, "repetitions per letter");
  gen_opts["modes"] = gen->add_option("--modes", gen_modes, "2D|3D|both");
  gen_opts["rate"] = gen->add_option("--rate", gen_rate, "sampling rate (Hz)");
  gen_opts["duration"] = gen->add_option("--duration", gen_duration, "seconds per letter");

  auto* tm = app.add_subcommand("train-mapper", "train the 3D-to-2D triplet mapper");
  GlobalArgs tm_g = add_global_flags(*tm);
  std::string tm_data, tm_subject = "s01", tm_mining = "semihard";
  MapperConfig tm_cfg;
  std::map<std::string, CLI::Option*> tm_opts;
  tm_opts["data"] = tm->add_option("--data", tm_data, "dataset file");
  tm_opts["train-subject"] = tm->add_option("--train-subject", tm_subject, "training writer id");
  tm_opts["epochs"] = tm->add_option("--epochs", tm_cfg.epochs, "training epochs");
  tm_opts["margin"] = tm->add_option("--margin", tm_cfg.margin, "triplet margin");
  tm_opts["batch"] = tm->add_option("--batch", tm_cfg.batch_size, "batch size");
  tm_opts["triplets"] =
      tm->add_option("--triplets", tm_cfg.triplets_per_epoch, "triplets per epoch");
  tm_opts["lr"] = tm->add_option("--lr", tm_cfg.learning_rate, "Adam learning rate");
  tm_opts["mining"] = tm->add_option("--mining", tm_mining, "random|semihard");

  auto* el = app.add_subcommand("eval-letters", "single-letter recognition metrics");
  GlobalArgs el_g = add_global_flags(*el);
  std::string el_data, el_pred = "dtw", el_train = "s01", el_test = "s02", el_bundle, el_mock;
  int el_k = 1, el_band = 16, el_cnn_epochs = 16;
  std::map<std::string, CLI::Option*> el_opts;
  el_opts["data"] = el->add_option("--data", el_data, "dataset file");
  el_opts["predictor"] = el->add_option("--predictor", el_pred, "dtw|cnn|pipeline3d|llm");
  el_opts["train-subject"] = el->add_option("--train-subject", el_train, "training writer id");
  el_opts["test-subject"] = el->add_option("--test-subject", el_test, "held-out writer id");
  el_opts["bundle"] = el->add_option("--bundle", el_bundle, "mapper bundle (pipeline3d)");
  el_opts["mock-script"] = el->add_option("--mock-script", el_mock, "mock chat script (llm)");
  el_opts["k"] = el->add_option("--k", el_k, "kNN neighbor count (odd)");
  el_opts["band"] = el->add_option("--band", el_band, "DTW band, 0 = unbounded");
  el_opts["cnn-epochs"] = el->add_option("--cnn-epochs", el_cnn_epochs, "CNN training epochs");

  auto* ew = app.add_subcommand("eval-words", "word-level grid over lengths and sample counts");
  GlobalArgs ew_g = add_global_flags(*ew);
  std::string ew_data, ew_bundle, ew_lexicon = "data/lexicon_nouns.txt", ew_train = "s01", ew_mock;
  std::size_t ew_wpc = 50;
  double ew_fatigue = 0.4, ew_alpha = 1.0;
  int ew_cnn_epochs = 16, ew_vreps = 5;
  bool ew_llm = false;
  std::map<std::string, CLI::Option*> ew_opts;
  ew_opts["data"] = ew->add_option("--data", ew_data, "dataset file");
  ew_opts["bundle"] = ew->add_option("--bundle", ew_bundle, "mapper bundle");
  ew_opts["lexicon"] = ew->add_option("--lexicon", ew_lexicon, "word list file");
  ew_opts["train-subject"] = ew->add_option("--train-subject", ew_train, "training writer id");
  ew_opts["words-per-cell"] = ew->add_option("--words-per-cell", ew_wpc, "sampled words per cell");
  ew_opts["fatigue"] = ew->add_option("--fatigue", ew_fatigue, "per-position noise growth");
  ew_opts["cnn-epochs"] = ew->add_option("--cnn-epochs", ew_cnn_epochs, "CNN training epochs");
  ew_opts["alpha"] = ew->add_option("--alpha", ew_alpha, "confusion smoothing");
  ew_opts["validation-reps"] =
      ew->add_option("--validation-reps", ew_vreps, "validation repetitions per letter");
  ew_opts["mock-script"] = ew->add_option("--mock-script", ew_mock, "mock chat script");
  ew->add_flag("--llm-decode", ew_llm, "aggregate words with the chat model instead");

  auto* bp = app.add_subcommand("build-pairs", "export instruction-response pairs");
  GlobalArgs bp_g = add_global_flags(*bp);
  std::string bp_data, bp_subject = "s01", bp_mock;
  int bp_variations = 3;
  std::map<std::string, CLI::Option*> bp_opts;
  bp_opts["data"] = bp->add_option("--data", bp_data, "dataset file");
  bp_opts["train-subject"] = bp->add_option("--train-subject", bp_subject, "training writer id");
  bp_opts["variations"] =
      bp->add_option("--variations", bp_variations, "prompt variations per sample");
  bp_opts["mock-script"] = bp->add_option("--mock-script", bp_mock, "mock chat script");

  auto* gc = app.add_subcommand("grad-check", "finite-difference gradient verification");
  GlobalArgs gc_g = add_global_flags(*gc);

  CLI11_PARSE(app, argc, argv);

  try {
    if (gen->parsed()) {
      cfg.load(gen_g.config_path);
      return run_gen_data(gen_g, cfg, gen_subjects, gen_reps, gen_modes, gen_rate, gen_duration,
                          gen_opts);
    }
    if (tm->parsed()) {
      cfg.load(tm_g.config_path);
      return run_train_mapper(tm_g, cfg, tm_data, tm_subject, tm_cfg, tm_mining, tm_opts);
    }
    if (el->parsed()) {
      cfg.load(el_g.config_path);
      return run_eval_letters(el_g, cfg, el_data, el_pred, el_train, el_test, el_bundle, el_mock,
                              el_k, el_band, el_cnn_epochs, el_opts);
    }
    if (ew->parsed()) {
      cfg.load(ew_g.config_path);
      return run_eval_words(ew_g, cfg, ew_data, ew_bundle, ew_lexicon, ew_train, ew_wpc, ew_fatigue,
                            ew_cnn_epochs, ew_alpha, ew_vreps, ew_llm, ew_mock, ew_opts);
    }
    if (bp->parsed()) {
      cfg.load(bp_g.config_path);
      return run_build_pairs(bp_g, cfg, bp_data, bp_subject, bp_variations, bp_mock, bp_opts);
    }
    if (gc->parsed()) {
      cfg.load(gc_g.config_path);
      return run_grad_check(gc_g, cfg);
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return exit_code_for(e);
  }
  return 0;
}
