#include <gtest/gtest.h>

#include <algorithm>
#include <numeric>
#include <random>

#include "support.hpp"
#include "tot_repair/search.hpp"

using namespace tot_repair;
using test_support::fenced;

namespace {

TaskInstance instance() { return load_dataset(test_support::fixture_dataset()).instances.at(0); }

Script seq(std::vector<std::string> r) {
  Script s;
  s.responses = std::move(r);
  return s;
}

std::string vote(int i) { return "Reasoning.\nThe best choice is " + std::to_string(i); }
std::string score(int s) { return "Looks fine.\nTherefore the correctness score is " + std::to_string(s); }

const std::string kPatchA = "--- a/calc.py\n+++ b/calc.py\n@@ -1,2 +1,2 @@\n def add(a, b):\n-    return a - b\n+    return b + a\n";
const std::string kPatchB = "--- a/calc.py\n+++ b/calc.py\n@@ -1,2 +1,2 @@\n def add(a, b):\n-    return a - b\n+    return a + b\n";

}  // namespace

TEST(TallyVotes, Examples) {
  auto t = tally_votes(std::vector<std::optional<int>>{3, 3, 1}, 5);
  EXPECT_EQ(t.winner, 2u);
  EXPECT_FALSE(t.degraded);
  EXPECT_EQ(tally_votes(std::vector<std::optional<int>>{1, 2}, 5).winner, 0u);
  auto d = tally_votes(std::vector<std::optional<int>>{std::nullopt, std::nullopt}, 5);
  EXPECT_EQ(d.winner, 0u);
  EXPECT_TRUE(d.degraded);
  EXPECT_EQ(tally_votes(std::vector<std::optional<int>>{9, 0, -1, 2}, 3).winner, 1u);
  EXPECT_TRUE(tally_votes(std::vector<std::optional<int>>{}, 0).degraded);
}

TEST(SelectByScore, Examples) {
  EXPECT_EQ(select_by_score({4.0, 9.0}), 1u);
  EXPECT_EQ(select_by_score({7.0, 7.0}), 0u);
  EXPECT_EQ(select_by_score({0.0, 3.0}), 1u);
  EXPECT_EQ(select_by_score({}), 0u);
}

// Permuting candidates and their votes identically permutes the winner.
TEST(Selection, PermutationEquivariant) {
  std::mt19937_64 rng(5);
  for (int round = 0; round < 500; ++round) {
    const std::size_t n = 2 + rng() % 6;
    std::vector<std::optional<int>> votes;
    for (int i = 0; i < 7; ++i) votes.push_back(1 + static_cast<int>(rng() % n));
    auto base = tally_votes(votes, n);
    // Skip tied tallies: the lowest-index rule is order dependent by design.
    auto top = *std::max_element(base.counts.begin(), base.counts.end());
    if (std::count(base.counts.begin(), base.counts.end(), top) > 1) continue;
    std::vector<std::size_t> perm(n);
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    std::vector<std::optional<int>> moved;
    for (auto v : votes) moved.push_back(static_cast<int>(perm[static_cast<std::size_t>(*v - 1)]) + 1);
    EXPECT_EQ(tally_votes(moved, n).winner, perm[base.winner]);

    std::vector<double> means(n), moved_means(n);
    for (std::size_t i = 0; i < n; ++i) means[i] = static_cast<double>(rng() % 1000) / 10.0 + static_cast<double>(i) * 1e-6;
    for (std::size_t i = 0; i < n; ++i) moved_means[perm[i]] = means[i];
    EXPECT_EQ(select_by_score(moved_means), perm[select_by_score(means)]);
  }
}

TEST(RunTot, HandTracedSequence) {
  SearchConfig c;
  c.n_plans = 2;
  c.k_patches = 2;
  c.vote_samples = 3;
  c.score_samples = 1;
  ScriptedBackend b(seq({"Plan:\nfirst", "Plan:\nsecond", vote(2), vote(2), vote(1), fenced(kPatchA), fenced(kPatchB),
                         score(4), score(9)}));
  auto p = run_tot(instance(), c, b);
  EXPECT_EQ(p.trace.selected_plans, std::vector<std::size_t>{1});
  EXPECT_EQ(p.trace.selected_patches, std::vector<std::size_t>{1});
  EXPECT_EQ(p.patch_text, kPatchB);
  EXPECT_EQ(p.trace.plans[0].votes, 1);
  EXPECT_EQ(p.trace.plans[1].votes, 2);
  EXPECT_DOUBLE_EQ(*p.trace.patches[0].mean_score, 4.0);
  EXPECT_EQ(p.trace.patches[1].parent, 1u);
  EXPECT_EQ(b.remaining(), 0u);
  // The patch prompt carried the winning plan.
  EXPECT_NE(b.prompts().at(2).find("Plan:\nsecond"), std::string::npos);
  EXPECT_EQ(p.mode, Mode::ToT);
  EXPECT_EQ(p.model, "scripted");
}

TEST(RunTot, DefaultConfigUsesTwentySamples) {
  ScriptedBackend b(test_support::tot_script(kPatchB, kPatchA));
  auto p = run_tot(instance(), SearchConfig{}, b);
  EXPECT_EQ(p.trace.usage.samples, 20u);
  EXPECT_EQ(b.usage().samples, 20u);
  EXPECT_EQ(p.trace.usage.requests, 8u);  // 1 plan + 1 vote + 1 patch + 5 score calls
  EXPECT_EQ(p.patch_text, kPatchB);
  EXPECT_EQ(b.remaining(), 0u);
}

TEST(RunTot, AccountingFormula) {
  for (int n : {2, 3}) {
    for (int k : {2, 4}) {
      for (int v : {1, 3}) {
        for (int s : {1, 2}) {
          SearchConfig c;
          c.n_plans = n;
          c.k_patches = k;
          c.vote_samples = v;
          c.score_samples = s;
          ScriptedBackend b(test_support::tot_script(kPatchB, kPatchA, n, v, k, s, k - 1));
          auto p = run_tot(instance(), c, b);
          EXPECT_EQ(p.trace.usage.samples, static_cast<std::uint64_t>(n + v + k + k * s));
          EXPECT_EQ(p.patch_text, kPatchB);
        }
      }
    }
  }
}

TEST(RunTot, DegenerateSinglePath) {
  SearchConfig c;
  c.n_plans = 1;
  c.k_patches = 1;
  ScriptedBackend b(seq({"Plan:\nonly", fenced(kPatchA)}));
  auto p = run_tot(instance(), c, b);
  EXPECT_EQ(p.patch_text, kPatchA);
  EXPECT_EQ(b.usage().requests, 2u);
  EXPECT_EQ(p.trace.usage.samples, 2u);
  EXPECT_TRUE(p.trace.votes.empty());
  EXPECT_TRUE(p.trace.patches[0].scores.empty());
}

TEST(RunTot, UnparsableEvaluationsDegrade) {
  SearchConfig c;
  c.n_plans = 2;
  c.k_patches = 2;
  c.vote_samples = 2;
  ScriptedBackend b(seq({"Plan: a", "Plan: b", "no idea", "hmm", fenced(kPatchA), "prose only", "?", "??"}));
  auto p = run_tot(instance(), c, b);
  EXPECT_TRUE(p.trace.degraded_vote);
  EXPECT_TRUE(p.trace.degraded_score);
  EXPECT_EQ(p.trace.selected_plans, std::vector<std::size_t>{0});
  EXPECT_EQ(p.patch_text, kPatchA);
  EXPECT_FALSE(p.trace.votes[0].error.empty());
}

TEST(RunTot, RetryFlagResamplesOnce) {
  SearchConfig c;
  c.n_plans = 2;
  c.k_patches = 2;
  c.vote_samples = 1;
  c.retry_failed_evaluations = true;
  ScriptedBackend b(seq({"Plan: a", "Plan: b", "unclear", vote(2), fenced(kPatchA), fenced(kPatchB), score(2),
                         "dunno", score(8)}));
  auto p = run_tot(instance(), c, b);
  EXPECT_TRUE(p.trace.votes[0].retried);
  EXPECT_EQ(p.trace.votes[0].value, 2);
  EXPECT_EQ(p.trace.selected_plans, std::vector<std::size_t>{1});
  EXPECT_TRUE(p.trace.patches[1].scores[0].retried);
  EXPECT_EQ(p.patch_text, kPatchB);
  EXPECT_EQ(b.remaining(), 0u);
}

TEST(RunTot, BreadthTwoExpandsBothPlans) {
  SearchConfig c;
  c.n_plans = 3;
  c.k_patches = 2;
  c.vote_samples = 3;
  c.breadth = 2;
  ScriptedBackend b(seq({"Plan: a", "Plan: b", "Plan: c", vote(3), vote(3), vote(2),
                         fenced(kPatchA), fenced(kPatchA), fenced(kPatchA), fenced(kPatchB),
                         score(5), score(5), score(6), score(9)}));
  auto p = run_tot(instance(), c, b);
  EXPECT_EQ(p.trace.selected_plans, (std::vector<std::size_t>{2, 1}));
  ASSERT_EQ(p.trace.patches.size(), 4u);
  EXPECT_EQ(p.trace.patches[0].parent, 2u);
  EXPECT_EQ(p.trace.patches[3].parent, 1u);
  EXPECT_EQ(p.trace.selected_patches, (std::vector<std::size_t>{3, 2}));
  EXPECT_EQ(p.patch_text, kPatchB);
}

TEST(RunTot, FlagsMissingAndInvalidPatches) {
  SearchConfig c;
  c.n_plans = 1;
  c.k_patches = 1;
  {
    ScriptedBackend b(seq({"Plan", "I would change add()."}));
    auto p = run_tot(instance(), c, b);
    EXPECT_TRUE(p.no_patch);
    EXPECT_TRUE(p.patch_text.empty());
  }
  {
    ScriptedBackend b(seq({"Plan", fenced("this is not a diff\n")}));
    auto p = run_tot(instance(), c, b);
    EXPECT_FALSE(p.no_patch);
    EXPECT_TRUE(p.syntactically_invalid);
  }
}

TEST(RunTot, BackendErrorsPropagate) {
  ScriptedBackend b(seq({"Plan: only one response"}));
  EXPECT_THROW(run_tot(instance(), SearchConfig{}, b), BackendError);
}

TEST(RunTot, InvalidConfigRejected) {
  SearchConfig c;
  c.breadth = 9;
  ScriptedBackend b(seq({"x"}));
  EXPECT_THROW(run_tot(instance(), c, b), std::invalid_argument);
}

TEST(RunTot, DeterministicTraces) {
  auto script = test_support::tot_script(kPatchB, kPatchA);
  ScriptedBackend a(script), b(script);
  auto pa = run_tot(instance(), SearchConfig{}, a);
  auto pb = run_tot(instance(), SearchConfig{}, b);
  EXPECT_TRUE(pa.trace.same_search(pb.trace));
  EXPECT_EQ(prediction_record(pa), prediction_record(pb));
}

TEST(RunIo, SingleSample) {
  ScriptedBackend b(seq({fenced(kPatchA)}));
  auto p = run_io(instance(), b);
  EXPECT_EQ(p.mode, Mode::IO);
  EXPECT_EQ(p.patch_text, kPatchA);
  EXPECT_EQ(p.trace.usage.samples, 1u);
  EXPECT_EQ(b.usage().requests, 1u);
}

TEST(RunIo, ProseMeansNoPatch) {
  ScriptedBackend b(seq({"I cannot produce a patch."}));
  auto p = run_io(instance(), b);
  EXPECT_TRUE(p.no_patch);
  EXPECT_TRUE(p.patch_text.empty());
  EXPECT_EQ(p.trace.usage.samples, 1u);
}

TEST(Trace, JsonCarriesEverything) {
  ScriptedBackend b(test_support::tot_script(kPatchB, kPatchA));
  auto p = run_tot(instance(), SearchConfig{}, b);
  nlohmann::json j = p.trace;
  EXPECT_EQ(j.at("plans").size(), 5u);
  EXPECT_EQ(j.at("patches").size(), 5u);
  EXPECT_EQ(j.at("votes").size(), 5u);
  EXPECT_EQ(j.at("usage").at("samples"), 20);
  EXPECT_EQ(j.at("patches").at(4).at("scores").at(0).at("value"), 9);
  auto rec = prediction_record(p);
  EXPECT_EQ(rec.size(), 4u);
  auto back = prediction_from_record(rec);
  EXPECT_EQ(back.patch_text, p.patch_text);
  EXPECT_EQ(back.mode, Mode::ToT);
}
