// Copyright 2026 The atm-msm Authors
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>
#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <json.hpp>
#include <string>
#include <vector>

#include "atm/common/error.hpp"
#include "atm/features/manifest.hpp"
#include "atm/masking/mask.hpp"
#include "atm/scorer/confidence_cache.hpp"
#include "atm/scorer/scorer.hpp"
#include "atm/train/commands.hpp"
#include "atm/train/config.hpp"
#include "atm/train/metrics.hpp"
#include "atm/train/pipeline.hpp"

using namespace atm;
using namespace atm::train;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

fs::path fresh_dir(const std::string& name) {
  const auto p = fs::temp_directory_path() / ("atm_train_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(f), {}};
}

// Records only, header dropped.
std::vector<json> records(const fs::path& p) {
  auto all = read_jsonl(p);
  if (!all.empty() && all.front().value("type", "") == "header") all.erase(all.begin());
  return all;
}

RunConfig tiny_run(const fs::path& dir) {
  RunConfig c;
  c.seed = 3;
  c.out = dir.string();
  c.synth.count = 12;
  c.synth.num_labels = 4;
  c.synth.min_duration_s = 0.6;
  c.synth.max_duration_s = 1.0;
  c.scorer.model.num_labels = 4;
  c.scorer.model.d_model = 16;
  c.scorer.model.heads = 2;
  c.scorer.model.blocks = 1;
  c.scorer.model.subsample_channels = 4;
  c.scorer.model.ff_mult = 2;
  c.scorer.steps = 6;
  c.scorer.batch_size = 4;
  c.scorer.adam.warmup_steps = 3;
  c.msm.d_model = 16;
  c.msm.heads = 2;
  c.msm.context_blocks = 1;
  c.msm.bert_blocks = 1;
  c.msm.subsample_channels = 4;
  c.msm.ff_mult = 2;
  c.msm.codebook_size = 8;
  c.msm.code_dim = 8;
  c.pretrain.steps = 5;
  c.pretrain.batch_size = 4;
  c.pretrain.context = 4;
  c.pretrain.n_distractors = 3;
  c.pretrain.adam.warmup_steps = 2;
  c.probe.num_labels = 4;
  c.probe.steps = 4;
  c.probe.batch_size = 4;
  return c;
}

// Synthesizes a corpus and trains/scores a tiny scorer under `dir`.
RunConfig prepared_run(const std::string& name) {
  const auto dir = fresh_dir(name);
  auto c = tiny_run(dir / "data");
  c.manifest = cmd_synth_data(c).string();
  c.out = (dir / "scorer").string();
  c.scorer.checkpoint = cmd_train_scorer(c).string();
  c.confidence_cache = cmd_score(c).string();
  c.out = (dir / "run").string();
  return c;
}

bool same_parameters(const nn::ParameterSet& a, const nn::ParameterSet& b) {
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const auto x = a.entries()[i].tensor.values();
    const auto y = b.entries()[i].tensor.values();
    if (!std::equal(x.begin(), x.end(), y.begin(), y.end())) return false;
  }
  return true;
}

int run_cli(const std::string& args) {
  const std::string cmd = std::string(ATM_CLI_PATH) + " " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

}  // namespace

TEST_CASE("config round trip and strictness") {
  RunConfig c;
  c.pretrain.strategy = masking::MaskStrategy::Mixed;
  c.pretrain.forced_confidence = 0.5;
  c.sweep.steps = 7;
  const auto j = to_json(c);
  CHECK(to_json(run_config_from_json(j)) == j);

  json bad = {{"pretrain", {{"mask_fractoin", 0.3}}}};
  CHECK_THROWS_AS(run_config_from_json(bad), ConfigError);
  json wrong_type = {{"pretrain", {{"mask_fraction", "high"}}}};
  CHECK_THROWS_AS(run_config_from_json(wrong_type), ConfigError);
  json bad_strategy = {{"pretrain", {{"strategy", "median"}}}};
  CHECK_THROWS_AS(run_config_from_json(bad_strategy), ConfigError);

  auto v = c;
  v.pretrain.mask_fraction = 0.0;
  CHECK_THROWS_AS(v.validate(), ConfigError);
  v = c;
  v.pretrain.frame_participation = 1.5;
  CHECK_THROWS_AS(v.validate(), ConfigError);
  v = c;
  v.pretrain.max_crop_frames = 8;
  CHECK_THROWS_AS(v.validate(), ConfigError);

  // The run seed reaches every section.
  c.seed = 42;
  CHECK(c.synth_config().seed == 42);
  CHECK(c.scorer_config().seed == 42);
  CHECK(c.msm_config().seed == 42);
  CHECK(c.step_config(1, 10).seed == 42);
  CHECK(c.step_config(1, 10).tau == c.pretrain.tau_start);
  CHECK(c.step_config(10, 10).tau == c.pretrain.tau_end);
}

TEST_CASE("config file plus overrides") {
  const auto dir = fresh_dir("cfg");
  const auto path = dir / "run.json";
  {
    std::ofstream f(path);
    f << R"({"seed": 9, "pretrain": {"strategy": "high", "steps": 20}})";
  }
  const auto c = resolve_config(path.string(), {"pretrain.mask_fraction=0.3", "msm.variant=\"w2v-bert\""});
  CHECK(c.seed == 9);
  CHECK(c.pretrain.strategy == masking::MaskStrategy::High);
  CHECK(c.pretrain.steps == 20);
  CHECK(c.pretrain.mask_fraction == 0.3);
  CHECK(c.msm.variant == msm::Variant::W2vBert);
  CHECK(c.pretrain.batch_size == 8);  // default kept
  CHECK_THROWS_AS(resolve_config((dir / "missing.json").string(), {}), IoError);
  CHECK_THROWS_AS(resolve_config("", {"nosuch.key=1"}), ConfigError);
  CHECK_THROWS_AS(resolve_config("", {"pretrain.steps"}), ConfigError);
}

TEST_CASE("jsonl streams tolerate a truncated tail and resume in place") {
  const auto dir = fresh_dir("jsonl");
  const auto p = dir / "m.jsonl";
  {
    auto w = JsonlWriter::create(p, json{{"type", "header"}});
    for (int s = 1; s <= 5; ++s) w.write({{"step", s}});
  }
  {
    std::ofstream f(p, std::ios::app);
    f << R"({"step": 6, "l_to)";
  }
  const auto all = read_jsonl(p);
  REQUIRE(all.size() == 6);
  CHECK(all.back()["step"] == 5);
  {
    auto w = JsonlWriter::resume(p, 3, json{{"type", "header"}});
    w.write({{"step", 4}});
  }
  const auto again = records(p);
  REQUIRE(again.size() == 4);
  for (int i = 0; i < 4; ++i) CHECK(again[i]["step"] == i + 1);
  // Every line is a complete JSON object.
  std::ifstream f(p);
  for (std::string line; std::getline(f, line);) CHECK(json::accept(line));
}

TEST_CASE("metrics record carries every field") {
  msm::LossBreakdown b;
  b.l_ctr = 1;
  b.mean_masked_confidence = 0.7;
  const auto r = metrics_record(3, b, 1e-3, 0.5, std::nullopt);
  for (const char* k : {"step", "l_ctr", "l_div", "l_ce", "l_total", "l_scaled", "codebook_usage_pct", "msm_accuracy",
                        "realized_coverage", "mean_masked_confidence"})
    CHECK_MESSAGE(r.contains(k), k);
  CHECK_FALSE(r.contains("wall_ms"));
  CHECK(metrics_record(3, b, 1e-3, 0.5, 12.0).contains("wall_ms"));
  msm::LossBreakdown none;
  CHECK(metrics_record(1, none, 0, 0, std::nullopt)["mean_masked_confidence"].is_null());
}

TEST_CASE("synth-data is deterministic and validates its config") {
  const auto a = fresh_dir("synth_a");
  const auto b = fresh_dir("synth_b");
  auto c = tiny_run(a);
  c.seed = 1;
  const auto ma = cmd_synth_data(c);
  c.out = b.string();
  const auto mb = cmd_synth_data(c);
  CHECK(slurp(ma) == slurp(mb));
  CHECK(features::read_manifest(ma).size() == 12);
  const auto first = features::read_manifest(ma).front();
  CHECK(slurp(a / first.path) == slurp(b / first.path));

  auto inl = c;
  inl.out = (b / "inline").string();
  const auto mi = cmd_synth_data(inl, true);
  CHECK(features::read_manifest(mi).front().synth.has_value());
  CHECK_FALSE(fs::exists(b / "inline" / "wav"));

  auto empty = c;
  empty.out = (b / "empty").string();
  empty.synth.count = 0;
  CHECK(features::read_manifest(cmd_synth_data(empty)).empty());

  auto v1 = c;
  v1.synth.num_labels = 1;
  CHECK_THROWS_AS(cmd_synth_data(v1), ConfigError);
}

TEST_CASE("cli exit codes") {
  const auto dir = fresh_dir("cli");
  CHECK(run_cli("synth-data --count 0 --out " + dir.string()) == 0);
  CHECK(slurp(dir / "manifest.jsonl").empty());
  CHECK(run_cli("synth-data --num-labels 1 --out " + dir.string()) == 2);
  CHECK(run_cli("train-scorer --manifest " + (dir / "nope.jsonl").string() + " --out " + dir.string()) == 3);
  CHECK(run_cli("pretrain --set pretrain.bogus=1") == 2);
  CHECK(run_cli("--dump-config") == 0);
  CHECK(run_cli("frobnicate") != 0);
}

TEST_CASE("scorer, score and pretrain commands") {
  auto c = prepared_run("cmds");
  const auto corpus_size = features::read_manifest(c.manifest).size();

  SUBCASE("score cache") {
    const auto cache = scorer::read_confidence_cache(c.confidence_cache);
    CHECK(cache.size() == corpus_size);
    for (const auto& r : cache) {
      CHECK(r.track.utterance_mean >= 1.0 / 5 - 1e-6);
      CHECK(r.track.utterance_mean <= 1.0);
    }
    // Dropping the blank column can only lower each frame's maximum.
    auto nb = c;
    nb.scorer.model.confidence_excludes_blank = true;
    nb.out = (fs::path(c.out).parent_path() / "no_blank").string();
    const auto without_blank = scorer::read_confidence_cache(cmd_score(nb));
    REQUIRE(without_blank.size() == cache.size());
    bool lower_somewhere = false;
    for (std::size_t i = 0; i < cache.size(); ++i)
      for (std::size_t t = 0; t < cache[i].track.scores.size(); ++t) {
        CHECK(without_blank[i].track.scores[t] <= cache[i].track.scores[t]);
        lower_somewhere |= without_blank[i].track.scores[t] < cache[i].track.scores[t];
      }
    CHECK(lower_somewhere);

    const auto before = slurp(c.confidence_cache);
    auto again = c;
    again.out = (fs::path(c.out).parent_path() / "rescore").string();
    CHECK(slurp(cmd_score(again)) == before);

    // A model built for other features does not fit this frontend.
    auto mismatch = c;
    mismatch.scorer.model.feature_dim = 40;
    mismatch.out = (fs::path(c.out).parent_path() / "mismatch").string();
    CHECK_THROWS_AS(cmd_train_scorer(mismatch), ShapeError);
  }

  SUBCASE("scorer log resumes after the checkpointed step") {
    auto r = c;
    r.out = (fs::path(c.out).parent_path() / "resume").string();
    r.scorer.steps = 3;
    cmd_train_scorer(r);
    r.scorer.steps = 6;
    cmd_train_scorer(r, true);
    const auto recs = records(fs::path(r.out) / "scorer_log.jsonl");
    REQUIRE(recs.size() == 6);
    for (int i = 0; i < 6; ++i) CHECK(recs[i]["step"] == i + 1);
    const auto straight = records(fs::path(c.scorer.checkpoint).parent_path() / "scorer_log.jsonl");
    CHECK(recs.back()["loss"] == straight.back()["loss"]);
    // Checkpoint metadata records the config, so compare weights.
    CHECK(same_parameters(scorer::load_scorer(fs::path(r.out) / "scorer.ckpt").parameters(),
                          scorer::load_scorer(c.scorer.checkpoint).parameters()));
  }

  SUBCASE("unlabeled corpus") {
    auto entries = features::read_manifest(c.manifest);
    for (auto& e : entries) {
      e.labels.clear();
      e.path = (fs::path(c.manifest).parent_path() / e.path).string();
    }
    const auto p = fs::path(c.out).parent_path() / "unlabeled.jsonl";
    features::write_manifest(p, entries);
    auto u = c;
    u.manifest = p.string();
    u.out = (fs::path(c.out).parent_path() / "unlabeled").string();
    CHECK_THROWS_AS(cmd_train_scorer(u), DataError);
  }

  SUBCASE("pretrain determinism, header and resume") {
    c.pretrain.strategy = masking::MaskStrategy::High;
    c.msm.variant = msm::Variant::W2vBert;
    const auto m1 = cmd_pretrain(c);
    const auto first_metrics = slurp(m1);
    const auto first_ckpt = slurp(fs::path(c.out) / "msm.ckpt");
    CHECK(slurp(cmd_pretrain(c)) == first_metrics);
    CHECK(slurp(fs::path(c.out) / "msm.ckpt") == first_ckpt);
    const auto all = read_jsonl(m1);
    REQUIRE(all.size() == 6);
    CHECK(all[0]["type"] == "header");
    CHECK(run_config_from_json(all[0]["config"]).pretrain.strategy == masking::MaskStrategy::High);
    for (int i = 1; i <= 5; ++i) {
      CHECK(all[i]["step"] == i);
      CHECK(all[i].contains("codebook_usage_pct"));
      CHECK(all[i]["mean_masked_confidence"].is_number());
    }
    CHECK(records(fs::path(c.out) / "timing.jsonl").size() == 5);
  }

  SUBCASE("pretrain resume continues the same trajectory") {
    // Constant tau, so a shorter run is an exact prefix of a longer one.
    c.pretrain.tau_start = c.pretrain.tau_end = 1.0;
    c.pretrain.steps = 5;
    const auto straight = records(cmd_pretrain(c));
    auto r = c;
    r.out = c.out + "_resumed";
    r.pretrain.steps = 2;
    cmd_pretrain(r);
    {
      std::ofstream f(fs::path(r.out) / "metrics.jsonl", std::ios::app);
      f << R"({"step": 3, "l_c)";  // interrupted write
    }
    r.pretrain.steps = 5;
    const auto resumed = records(cmd_pretrain(r, true));
    REQUIRE(resumed.size() == 5);
    CHECK(resumed == straight);
    CHECK(same_parameters(load_msm(fs::path(r.out) / "msm.ckpt").parameters(),
                          load_msm(fs::path(c.out) / "msm.ckpt").parameters()));
  }

  SUBCASE("pretrain needs confidences for guided strategies") {
    c.pretrain.strategy = masking::MaskStrategy::High;
    c.confidence_cache.clear();
    c.scorer.checkpoint.clear();
    CHECK_THROWS_AS(cmd_pretrain(c), ConfigError);
  }

  SUBCASE("utterance scaling with unit confidence matches no scaling") {
    c.pretrain.forced_confidence = 1.0;
    c.pretrain.strategy = masking::MaskStrategy::High;
    const auto a = records(cmd_pretrain(c));
    auto u = c;
    u.out = c.out + "_unit";
    u.pretrain.scale_mode = msm::ScaleMode::Utterance;
    const auto b = records(cmd_pretrain(u));
    CHECK(a == b);
  }

  SUBCASE("analyze-mask") {
    c.analyze.summary_plans = 500;
    const auto summary = cmd_analyze_mask(c);
    const auto rows = read_jsonl(fs::path(c.out) / "mask_plans.jsonl");
    CHECK(rows.size() == corpus_size * 4);
    for (const auto& r : rows)
      for (const char* k : {"utt_id", "strategy", "starts", "realized_coverage", "mean_masked_confidence"})
        CHECK(r.contains(k));
    CHECK(summary.contains("strategies"));
    CHECK(fs::exists(fs::path(c.out) / "mask_summary.json"));
  }

  SUBCASE("probe") {
    c.pretrain.steps = 3;
    cmd_pretrain(c);
    auto p = c;
    p.probe.checkpoint = (fs::path(c.out) / "msm.ckpt").string();
    p.out = c.out + "_probe1";
    const auto r1 = cmd_probe(p);
    p.out = c.out + "_probe2";
    const auto r2 = cmd_probe(p);
    CHECK(r1["domains"] == r2["domains"]);
    CHECK(r1["domains"]["clean"]["ter"].is_number());
    auto bad = p;
    bad.msm.d_model = 32;
    bad.out = c.out + "_probe3";
    CHECK_THROWS_AS(cmd_probe(bad), ShapeError);
    auto zero = p;
    zero.probe.steps = 0;
    zero.out = c.out + "_probe4";
    CHECK(cmd_probe(zero)["domains"]["clean"]["ter"].is_number());
  }
}

TEST_CASE("analyze-mask with constant scores gives equal strategies") {
  const auto dir = fresh_dir("flat");
  std::vector<scorer::CacheRecord> recs;
  for (int i = 0; i < 30; ++i) recs.push_back({"u" + std::to_string(i), scorer::make_track(std::vector<float>(40, 0.6f))});
  RunConfig c;
  c.out = dir.string();
  c.confidence_cache = (dir / "cache.jsonl").string();
  scorer::write_confidence_cache(c.confidence_cache, recs);
  c.analyze.summary_plans = 200;
  const auto summary = cmd_analyze_mask(c);
  for (const auto& [name, s] : summary["strategies"].items())
    CHECK(s["mean_masked_confidence"].get<double>() == doctest::Approx(0.6).epsilon(1e-6));
  CHECK(read_jsonl(dir / "mask_plans.jsonl").size() == 30 * 4);
}

TEST_CASE("sweep writes one row per fraction and strategy") {
  auto c = prepared_run("sweep");
  c.sweep.fractions = {0.3, 0.4, 0.5, 0.4};
  c.sweep.steps = 2;
  CHECK(dedup_fractions(c.sweep.fractions) == std::vector<double>{0.3, 0.4, 0.5});
  const auto rows = cmd_sweep(c);
  REQUIRE(rows.size() == 6);
  const auto csv = slurp(fs::path(c.out) / "sweep.csv");
  CHECK(csv.rfind("fraction,strategy,final_l_total,msm_accuracy,realized_coverage\n", 0) == 0);
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 7);
  for (const char* s : {"random", "high"}) {
    double prev = -1;
    for (const auto& r : rows)
      if (r.strategy == s) {
        CHECK(r.realized_coverage >= prev);
        prev = r.realized_coverage;
      }
  }
}
