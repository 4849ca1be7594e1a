// Copyright 2026 The atm-msm Authors
// SPDX-License-Identifier: Apache-2.0

// End-to-end acceptance run. Prints one PASS/FAIL line per criterion and
// exits non-zero if any criterion fails.
//
//   atm_acceptance [--work DIR] [criterion ...]

#include <sys/wait.h>

#include <CLI11.hpp>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <json.hpp>
#include <limits>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "atm/common/error.hpp"
#include "atm/common/log.hpp"
#include "atm/common/rng.hpp"
#include "atm/common/stats.hpp"
#include "atm/masking/mask.hpp"
#include "atm/msm/losses.hpp"
#include "atm/nn/tensor.hpp"
#include "atm/scorer/ctc.hpp"
#include "atm/train/commands.hpp"
#include "atm/train/config.hpp"
#include "atm/train/metrics.hpp"
#include "oracles.hpp"

using namespace atm;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

// Tolerances and budgets.
constexpr double kChiSquareAlpha = 0.01;
constexpr int kSamplerDraws = 100000;
constexpr double kSamplerBudgetS = 10;
constexpr int kDuplicatePlans = 10000;
constexpr double kCtcTol = 1e-8;
constexpr double kCtcBudgetS = 5;
constexpr double kGradTol = 1e-3;
constexpr double kGradBudgetS = 60;
constexpr double kAnalyticTol = 1e-6;
constexpr double kOrderingAlpha = 0.01;
constexpr int kOrderingPlans = 10000;
constexpr int kPairedSteps = 500;
constexpr double kOrderingBudgetS = 15 * 60;
constexpr int kConsistencySteps = 20;
constexpr double kScaleTol = 1e-6;
constexpr int kSanitySteps = 1000;
constexpr int kSanityWindow = 100;
constexpr double kAccuracyFactor = 3.0;
constexpr double kSanityBudgetS = 20 * 60;
constexpr int kSweepSteps = 100;

// Shared corpora: 200 labeled utterances train the scorer, which then scores
// a separate 200-utterance pretraining corpus.
constexpr int kCorpusSize = 200;
constexpr int kScorerSteps = 400;
constexpr std::uint64_t kSeed = 7;

struct Outcome {
  bool pass = false;
  std::string detail;
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(f), {}};
}

std::vector<json> records(const fs::path& p) {
  auto all = train::read_jsonl(p);
  if (!all.empty() && all.front().value("type", "") == "header") all.erase(all.begin());
  return all;
}

// Corpus and scorer built on first use and shared by criteria 6 to 9.
class Fixture {
 public:
  explicit Fixture(fs::path root) : root_(std::move(root)) {}

  const train::RunConfig& base() {
    if (!ready_) build();
    return base_;
  }
  fs::path root() const { return root_; }

 private:
  void build() {
    auto c = train::RunConfig{};
    c.seed = kSeed;
    c.synth.count = kCorpusSize;
    c.scorer.steps = kScorerSteps;
    auto labeled = c;
    labeled.seed = kSeed + 1;
    labeled.synth.id_prefix = "lab";
    labeled.out = (root_ / "labeled").string();
    labeled.manifest = train::cmd_synth_data(labeled).string();
    labeled.seed = kSeed;
    labeled.out = (root_ / "scorer").string();
    c.scorer.checkpoint = train::cmd_train_scorer(labeled).string();
    c.out = (root_ / "data").string();
    c.manifest = train::cmd_synth_data(c).string();
    c.out = (root_ / "scorer").string();
    c.confidence_cache = train::cmd_score(c).string();
    c.out = (root_ / "runs").string();
    base_ = c;
    ready_ = true;
  }

  fs::path root_;
  train::RunConfig base_;
  bool ready_ = false;
};

// 1. Start-index draws follow the normalized weights, singly and jointly.
Outcome sampler_fidelity() {
  const auto t0 = Clock::now();
  const std::vector<float> scores{0.5f, 0.3f, 0.2f};
  Rng rng(Rng::keyed(kSeed, "acceptance/sampler"));
  std::vector<std::int64_t> counts(3, 0);
  for (int i = 0; i < kSamplerDraws; ++i)
    ++counts[masking::sample_starts(scores, 3, 1, masking::MaskStrategy::High, rng)[0]];
  const std::vector<double> probs{0.5, 0.3, 0.2};
  const double p_single = stats::chi_square_gof(counts, probs).p_value;

  // T=5, K=2 joint distribution per strategy against enumeration.
  std::vector<float> s5(5);
  for (auto& s : s5) s = static_cast<float>(rng.uniform(0.05, 1.0));
  std::vector<double> high(s5.begin(), s5.end()), low, flat(5, 1.0);
  for (double s : high) low.push_back(1.0 - s);
  const std::map<masking::MaskStrategy, std::map<std::pair<int, int>, double>> expected{
      {masking::MaskStrategy::High, testing::pair_probabilities(high, high)},
      {masking::MaskStrategy::Low, testing::pair_probabilities(low, low)},
      {masking::MaskStrategy::Random, testing::pair_probabilities(flat, flat)},
      {masking::MaskStrategy::Mixed, testing::pair_probabilities(high, low)}};
  double p_joint = 1.0;
  for (const auto& [strategy, probs2] : expected) {
    std::map<std::pair<int, int>, std::int64_t> pair_counts;
    for (int i = 0; i < kSamplerDraws; ++i) {
      const auto s = masking::sample_starts(s5, 5, 2, strategy, rng);
      ++pair_counts[{std::min(s[0], s[1]), std::max(s[0], s[1])}];
    }
    std::vector<std::int64_t> obs;
    std::vector<double> pr;
    for (const auto& [k, p] : probs2) {
      obs.push_back(pair_counts[k]);
      pr.push_back(p);
    }
    p_joint = std::min(p_joint, stats::chi_square_gof(obs, pr).p_value);
  }
  const double secs = seconds_since(t0);
  return {p_single > kChiSquareAlpha && p_joint > kChiSquareAlpha && secs < kSamplerBudgetS,
          fmt("single-draw p=%.3f, min joint p over 4 strategies=%.3f, %.1f s", p_single, p_joint, secs)};
}

// 2. No plan repeats a start index.
Outcome without_replacement() {
  Rng rng(Rng::keyed(kSeed, "acceptance/plans"));
  int duplicates = 0;
  for (int i = 0; i < kDuplicatePlans; ++i) {
    const int T = 10 + static_cast<int>(rng.below(300));
    const double p = rng.uniform(0.05, 0.95);
    const int c = 1 + static_cast<int>(rng.below(10));
    std::vector<float> scores(static_cast<std::size_t>(T));
    const bool sparse = rng.below(4) == 0;
    for (auto& s : scores) s = sparse ? (rng.below(5) == 0 ? 1.f : 0.f) : static_cast<float>(rng.uniform());
    const auto strategy = masking::kAllStrategies[rng.below(4)];
    const auto plan = masking::plan_mask(scores, T, p, c, strategy, rng);
    if (std::set<int>(plan.starts.begin(), plan.starts.end()).size() != plan.starts.size()) ++duplicates;
  }
  return {duplicates == 0, fmt("%d plans, %d with duplicate starts", kDuplicatePlans, duplicates)};
}

// 3. The CTC recursion equals the exhaustive path sum.
Outcome ctc_oracle() {
  const auto t0 = Clock::now();
  Rng rng(Rng::keyed(kSeed, "acceptance/ctc"));
  int instances = 0, infeasible = 0, wrong = 0;
  double worst = 0;
  for (int v = 1; v <= 3; ++v) {
    for (const auto& target : testing::all_targets(3, v)) {
      for (int frames = 1; frames <= 6; ++frames) {
        const int classes = v + 1;
        std::vector<double> logits(static_cast<std::size_t>(frames * classes));
        for (auto& x : logits) x = rng.uniform(-2, 2);
        const double p = testing::brute_force_ctc_probability(logits, frames, classes, target, v);
        ++instances;
        if (p == 0.0) {
          ++infeasible;
          try {
            (void)scorer::ctc_forward_backward(logits, frames, classes, target, v);
            ++wrong;  // must refuse an impossible alignment
          } catch (const InfeasibleAlignment&) {
          }
          continue;
        }
        const auto r = scorer::ctc_forward_backward(logits, frames, classes, target, v);
        worst = std::max(worst, std::abs(r.loss + std::log(p)));
      }
    }
  }
  const double secs = seconds_since(t0);
  return {wrong == 0 && worst < kCtcTol && secs < kCtcBudgetS,
          fmt("%d instances (%d infeasible), max |loss diff|=%.2e, %.2f s", instances, infeasible, worst, secs)};
}

// 4. Finite differences over every layer and the end-to-end objective.
Outcome gradient_suite() {
  const auto t0 = Clock::now();
  auto cases = testing::layer_gradient_cases();
  for (auto& c : testing::msm_gradient_cases()) cases.push_back(std::move(c));
  double worst = 0;
  std::string worst_name;
  int checks = 0;
  for (const auto& c : cases)
    for (auto seed : testing::kGradSeeds) {
      Rng rng(seed);
      const auto r = c.run(rng);
      ++checks;
      if (!(r.max_rel_error <= worst)) {
        worst = r.max_rel_error;
        worst_name = c.name + " seed " + std::to_string(seed);
      }
    }
  const double secs = seconds_since(t0);
  return {worst < kGradTol && secs < kGradBudgetS,
          fmt("%d checks over %zu cases, max rel error %.2e (%s), %.1f s", checks, cases.size(), worst,
              worst_name.c_str(), secs)};
}

// 5. Closed-form loss values.
Outcome analytic_losses() {
  using D = nn::BasicTensor<double>;
  nn::BasicTape<double> tape;
  double worst = 0;
  for (int L : {2, 4, 8, 64}) {
    const auto uniform = D::full({3, L}, 1.0 / L);
    worst = std::max(worst, std::abs(msm::diversity_loss(tape, uniform).item()));
    auto one_hot = D::zeros({3, L});
    for (int r = 0; r < 3; ++r) one_hot.values()[static_cast<std::size_t>(r) * L + L / 2] = 1.0;
    worst = std::max(worst, std::abs(msm::diversity_loss(tape, one_hot).item() - (L - 1.0) / L));
    const std::vector<int> targets{0, L - 1, L / 2};
    const auto ce = msm::ce_loss_masked(tape, msm::Variant::W2vBert, D::zeros({3, L}), targets, {0, 1, 2});
    for (double v : ce.per_frame.values()) worst = std::max(worst, std::abs(v - std::log(static_cast<double>(L))));
  }
  Rng rng(Rng::keyed(kSeed, "acceptance/analytic"));
  auto C = D::zeros({6, 5});
  auto Q = D::zeros({6, 5});
  for (auto& v : C.values()) v = rng.normal();
  for (auto& v : Q.values()) v = rng.normal();
  const auto ctr = msm::contrastive_loss(tape, C, Q, {0, 2, 3, 5}, 0, 0.1, rng);
  for (double v : ctr.per_frame.values()) worst = std::max(worst, std::abs(v));
  return {worst < kAnalyticTol, fmt("max deviation from closed forms %.2e", worst)};
}

// 6. Guided masking picks confident frames: plan-level and during training.
Outcome strategy_ordering(Fixture& fx) {
  const auto t0 = Clock::now();
  auto c = fx.base();
  c.out = (fx.root() / "ordering" / "analyze").string();
  c.analyze.summary_plans = kOrderingPlans;
  c.analyze.strategies = {masking::MaskStrategy::High, masking::MaskStrategy::Random, masking::MaskStrategy::Low};
  const auto summary = train::cmd_analyze_mask(c);
  const auto& st = summary["strategies"];
  const double m_high = st["high"]["mean_masked_confidence"], m_rand = st["random"]["mean_masked_confidence"],
               m_low = st["low"]["mean_masked_confidence"];
  double p_hr = 1, p_rl = 1;
  for (const auto& t : summary["tests"]) {
    if (t["hypothesis"] == "high > random") p_hr = t["p_value"];
    if (t["hypothesis"] == "random > low") p_rl = t["p_value"];
  }
  const bool plans_ok = m_high > m_rand && m_rand > m_low && p_hr < kOrderingAlpha && p_rl < kOrderingAlpha;

  std::map<std::string, std::vector<double>> mmc;
  for (auto strategy : {masking::MaskStrategy::High, masking::MaskStrategy::Low}) {
    auto r = fx.base();
    r.pretrain.strategy = strategy;
    r.pretrain.steps = kPairedSteps;
    r.out = (fx.root() / "ordering" / masking::to_string(strategy)).string();
    for (const auto& rec : records(train::cmd_pretrain(r)))
      mmc[masking::to_string(strategy)].push_back(rec["mean_masked_confidence"].get<double>());
  }
  int violations = 0;
  const auto& hi = mmc["high"];
  const auto& lo = mmc["low"];
  const bool same_length = hi.size() == lo.size() && hi.size() == static_cast<std::size_t>(kPairedSteps);
  for (std::size_t i = 0; i < std::min(hi.size(), lo.size()); ++i)
    if (!(hi[i] > lo[i])) ++violations;
  const double secs = seconds_since(t0);
  return {plans_ok && same_length && violations == 0 && secs < kOrderingBudgetS,
          fmt("plans: high %.4f > random %.4f > low %.4f, Welch p=%.1e/%.1e; paired %d-step runs: high below low "
              "at %d steps; %.0f s including corpus and scorer",
              m_high, m_rand, m_low, p_hr, p_rl, kPairedSteps, violations, secs)};
}

// 7. Utterance scaling with constant confidence.
Outcome scaling_consistency(Fixture& fx) {
  auto run = [&](const std::string& name, msm::ScaleMode mode, std::optional<double> forced) {
    auto r = fx.base();
    r.pretrain.strategy = masking::MaskStrategy::High;
    r.pretrain.steps = kConsistencySteps;
    r.pretrain.scale_mode = mode;
    r.pretrain.forced_confidence = forced;
    r.out = (fx.root() / "scaling" / name).string();
    return records(train::cmd_pretrain(r));
  };
  const auto none = run("none", msm::ScaleMode::None, 1.0);
  const auto unit = run("unit", msm::ScaleMode::Utterance, 1.0);
  const auto half = run("half", msm::ScaleMode::Utterance, 0.5);
  const bool identical = none == unit && none.size() == static_cast<std::size_t>(kConsistencySteps);
  double worst = half.empty() ? INFINITY : 0.0;
  for (const auto& rec : half)
    worst = std::max(worst, std::abs(rec["l_scaled"].get<double>() - 0.5 * rec["l_total"].get<double>()));
  return {identical && worst < kScaleTol,
          fmt("s=1 metrics %s the unscaled run over %d steps; s=0.5 max |l_scaled - 0.5 l_total|=%.1e",
              identical ? "bit-identical to" : "DIFFER from", kConsistencySteps, worst)};
}

double window_mean(const std::vector<json>& recs, const char* key, std::size_t begin, std::size_t end) {
  double s = 0;
  for (std::size_t i = begin; i < end; ++i) s += recs[i][key].get<double>();
  return s / static_cast<double>(end - begin);
}

// 8. A w2v-BERT run learns.
Outcome training_sanity(Fixture& fx) {
  const auto t0 = Clock::now();
  auto r = fx.base();
  r.msm.variant = msm::Variant::W2vBert;
  r.pretrain.steps = kSanitySteps;
  r.out = (fx.root() / "sanity").string();
  const auto recs = records(train::cmd_pretrain(r));
  const double secs = seconds_since(t0);
  if (recs.size() != static_cast<std::size_t>(kSanitySteps))
    return {false, fmt("expected %d records, got %zu", kSanitySteps, recs.size())};
  const std::size_t n = recs.size(), w = kSanityWindow;
  const double ctr_head = window_mean(recs, "l_ctr", 0, w), ctr_tail = window_mean(recs, "l_ctr", n - w, n);
  const double acc_tail = window_mean(recs, "msm_accuracy", n - w, n);
  const double chance = 1.0 / r.msm.codebook_size;
  bool usage_every_step = true;
  for (const auto& rec : recs) usage_every_step &= rec.contains("codebook_usage_pct") && rec["codebook_usage_pct"].is_number();
  const bool a = ctr_tail < ctr_head, b = acc_tail >= kAccuracyFactor * chance;
  return {a && b && usage_every_step && secs < kSanityBudgetS,
          fmt("(a) l_ctr %.3f -> %.3f %s; (b) accuracy %.3f vs %.0fx chance %.3f %s; (c) usage %s; %.0f s", ctr_head,
              ctr_tail, a ? "ok" : "NOT decreasing", acc_tail, kAccuracyFactor, kAccuracyFactor * chance,
              b ? "ok" : "BELOW", usage_every_step ? "every step" : "MISSING", secs)};
}

// 9. Sweep harness.
Outcome sweep(Fixture& fx) {
  auto r = fx.base();
  r.sweep.steps = kSweepSteps;
  r.out = (fx.root() / "sweep").string();
  const auto rows = train::cmd_sweep(r);
  const auto csv = slurp(fs::path(r.out) / "sweep.csv");
  std::istringstream lines(csv);
  std::string line;
  int csv_rows = -1;  // header
  while (std::getline(lines, line))
    if (!line.empty()) ++csv_rows;
  bool monotone = true;
  std::string report;
  for (const char* s : {"random", "high"}) {
    double prev = -1, lo = INFINITY, hi = -INFINITY;
    for (const auto& row : rows) {
      if (row.strategy != s) continue;
      monotone &= row.realized_coverage > prev;
      prev = row.realized_coverage;
      lo = std::min(lo, row.final_l_total);
      hi = std::max(hi, row.final_l_total);
    }
    report += fmt("; %s l_total spread over p %.3f", s, hi - lo);
  }
  return {rows.size() == 6 && csv_rows == 6 && monotone,
          fmt("%zu rows, %d CSV rows, coverage %s", rows.size(), csv_rows, monotone ? "monotone" : "NOT monotone") +
              report + " (reported only)"};
}

int run_cli(const std::string& cli, const std::string& args) {
  const auto cmd = cli + " " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

// 10. Every command reproduces its outputs byte for byte.
Outcome determinism(const fs::path& root, const std::string& cli) {
  const auto dir = root / "determinism";
  fs::create_directories(dir);
  // Small model, so the whole pipeline runs twice in seconds.
  const json cfg = {
      {"seed", 13},
      {"synth", {{"count", 16}, {"max_duration_s", 1.5}}},
      {"scorer", {{"d_model", 32}, {"heads", 2}, {"blocks", 1}, {"subsample_channels", 4}, {"steps", 10}}},
      {"msm", {{"d_model", 32}, {"heads", 2}, {"context_blocks", 1}, {"bert_blocks", 1}, {"subsample_channels", 4},
               {"codebook_size", 16}, {"code_dim", 16}, {"variant", "w2v-bert"}}},
      {"pretrain", {{"steps", 8}, {"strategy", "mixed"}, {"scale_mode", "frame"}, {"checkpoint_every", 4}}},
      {"sweep", {{"steps", 3}}},
      {"analyze", {{"summary_plans", 200}}},
      {"probe", {{"steps", 5}}}};
  const auto cfg_path = dir / "run.json";
  std::ofstream(cfg_path) << cfg.dump(2);
  const auto d = dir.string();
  const std::string common = " --config " + cfg_path.string();
  const std::vector<std::pair<std::string, std::string>> commands{
      {"synth-data", "synth-data" + common + " --out " + d + "/data"},
      {"train-scorer", "train-scorer" + common + " --manifest " + d + "/data/manifest.jsonl --out " + d + "/scorer"},
      {"score", "score" + common + " --manifest " + d + "/data/manifest.jsonl --scorer-ckpt " + d +
                    "/scorer/scorer.ckpt --out " + d + "/scorer"},
      {"pretrain", "pretrain" + common + " --manifest " + d + "/data/manifest.jsonl --confidence-cache " + d +
                       "/scorer/confidence.jsonl --out " + d + "/pretrain"},
      {"analyze-mask", "analyze-mask" + common + " --confidence-cache " + d + "/scorer/confidence.jsonl --out " + d +
                           "/analyze"},
      {"probe", "probe" + common + " --manifest " + d + "/data/manifest.jsonl --set probe.checkpoint=\\\"" + d +
                    "/pretrain/msm.ckpt\\\" --out " + d + "/probe"},
      {"sweep", "sweep" + common + " --manifest " + d + "/data/manifest.jsonl --confidence-cache " + d +
                    "/scorer/confidence.jsonl --out " + d + "/sweep"}};
  std::vector<std::string> failures;
  int files = 0;
  for (const auto& [name, args] : commands) {
    if (run_cli(cli, args) != 0) {
      failures.push_back(name + " failed");
      continue;
    }
    std::map<fs::path, std::string> before;
    // timing.jsonl holds wall-clock measurements and is exempt by design.
    for (const auto& e : fs::recursive_directory_iterator(dir))
      if (e.is_regular_file() && e.path() != cfg_path && e.path().filename() != "timing.jsonl")
        before[e.path()] = slurp(e.path());
    if (run_cli(cli, args) != 0) {
      failures.push_back(name + " rerun failed");
      continue;
    }
    for (const auto& [path, bytes] : before) {
      ++files;
      if (slurp(path) != bytes) failures.push_back(name + ": " + fs::relative(path, dir).string());
    }
  }
  std::string detail =
      fmt("%zu commands re-run, %d files compared (wall-clock timing logs exempt)", commands.size(), files);
  for (const auto& f : failures) detail += "; " + f;
  return {failures.empty(), detail};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app("acceptance criteria");
  std::string work = (fs::temp_directory_path() / "atm_acceptance").string();
  std::string cli = ATM_CLI_PATH;
  std::vector<int> selected;
  app.add_option("--work", work, "Scratch directory (wiped)");
  app.add_option("--cli", cli, "Path to the atm binary");
  app.add_option("criteria", selected, "Criteria to run (default all)")->check(CLI::Range(1, 10));
  CLI11_PARSE(app, argc, argv);
  if (selected.empty())
    for (int i = 1; i <= 10; ++i) selected.push_back(i);
  if (!std::getenv("ATM_LOG")) log::set_threshold(log::Level::Warn);

  const fs::path root(work);
  fs::remove_all(root);
  fs::create_directories(root);
  Fixture fx(root / "shared");

  const std::map<int, std::pair<std::string, std::function<Outcome()>>> criteria{
      {1, {"sampler fidelity", sampler_fidelity}},
      {2, {"without-replacement invariant", without_replacement}},
      {3, {"CTC oracle equivalence", ctc_oracle}},
      {4, {"gradient suite", gradient_suite}},
      {5, {"analytic loss values", analytic_losses}},
      {6, {"strategy ordering", [&] { return strategy_ordering(fx); }}},
      {7, {"utterance scaling consistency", [&] { return scaling_consistency(fx); }}},
      {8, {"training sanity", [&] { return training_sanity(fx); }}},
      {9, {"sweep harness", [&] { return sweep(fx); }}},
      {10, {"determinism", [&] { return determinism(root, cli); }}}};

  int failed = 0;
  for (int id : selected) {
    const auto& [name, fn] = criteria.at(id);
    Outcome o;
    try {
      o = fn();
    } catch (const std::exception& e) {
      o = {false, std::string("threw: ") + e.what()};
    }
    failed += o.pass ? 0 : 1;
    std::printf("%s %d %s: %s\n", o.pass ? "PASS" : "FAIL", id, name.c_str(), o.detail.c_str());
    std::fflush(stdout);
  }
  return failed == 0 ? 0 : 1;
}
