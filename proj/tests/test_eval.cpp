#include <gtest/gtest.h>

#include <future>

#include "support.hpp"
#include "tot_repair/eval.hpp"

using namespace tot_repair;
using test_support::TempDir;
using test_support::variant_patch;
using test_support::write_text;

namespace {

const WorkspaceSource kFixtures = FixtureSource{test_support::fixture_repos()};

Dataset fixtures() { return load_dataset(test_support::fixture_dataset()); }

Prediction prediction(const std::string& id, const std::string& patch) {
  Prediction p;
  p.instance_id = id;
  p.patch_text = patch;
  return p;
}

FileTree snapshot(const fs::path& root) {
  FileTree t;
  for (const auto& e : fs::recursive_directory_iterator(root))
    if (e.is_regular_file()) t[fs::relative(e.path(), root).generic_string()] = test_support::read_text(e.path());
  return t;
}

Workspace scratch_workspace(const std::string& script) {
  Workspace ws(detail::unique_temp_dir("tot-repair-test-ws"), "scratch", true);
  write_text(ws.root() / "runner.py", script);
  return ws;
}

const TestCommand kPython{"python3", {"runner.py"}};

}  // namespace

TEST(Workspace, FixtureSnapshotAndDeterminism) {
  const auto t = fixtures().instances[0];
  fs::path first_root;
  {
    auto a = prepare_workspace(t, kFixtures);
    auto b = prepare_workspace(t, kFixtures);
    first_root = a.root();
    EXPECT_NE(a.root(), b.root());
    EXPECT_EQ(snapshot(a.root()), snapshot(b.root()));
    EXPECT_EQ(snapshot(a.root()), snapshot(test_support::fixture_repos() / t.instance_id / "tree"));
  }
  EXPECT_FALSE(fs::exists(first_root));
}

TEST(Workspace, Errors) {
  auto t = fixtures().instances[0];
  try {
    prepare_workspace(t, FixtureSource{"/nonexistent"});
    FAIL();
  } catch (const HarnessError& e) {
    EXPECT_EQ(e.code(), HarnessErrc::SourceUnavailable);
  }
  t.base_commit = "ffffffffffff";
  try {
    prepare_workspace(t, kFixtures);
    FAIL();
  } catch (const HarnessError& e) {
    EXPECT_EQ(e.code(), HarnessErrc::CommitNotFound);
  }
}

TEST(Workspace, GitSource) {
  TempDir repo;
  auto git = [&](std::vector<std::string> args) {
    std::vector<std::string> full = {"-C", repo.path.string(), "-c", "user.name=t", "-c", "user.email=t@example.invalid"};
    full.insert(full.end(), args.begin(), args.end());
    auto r = run_process({"git", full}, repo.path, std::chrono::seconds(30));
    EXPECT_EQ(r.exit_code, 0) << r.output;
    return r.output;
  };
  git({"init", "-q"});
  write_text(repo / "a.txt", "one\n");
  write_text(repo / "sub/b.txt", "two\n");
  git({"add", "-A"});
  git({"commit", "-q", "-m", "first"});
  auto first = git({"rev-parse", "HEAD"});
  first.erase(first.find_last_not_of("\n") + 1);
  write_text(repo / "a.txt", "changed\n");
  git({"commit", "-qam", "second"});

  TaskInstance t = fixtures().instances[0];
  t.base_commit = first;
  auto ws = prepare_workspace(t, GitSource{repo.path});
  EXPECT_EQ(snapshot(ws.root()), (FileTree{{"a.txt", "one\n"}, {"sub/b.txt", "two\n"}}));

  t.base_commit = "0000000000000000000000000000000000000000";
  try {
    prepare_workspace(t, GitSource{repo.path});
    FAIL();
  } catch (const HarnessError& e) {
    EXPECT_EQ(e.code(), HarnessErrc::CommitNotFound);
  }
}

TEST(RunTests, LineProtocol) {
  auto ws = scratch_workspace("print('PASSED t1')\nprint('FAILED t2')\nprint('noise line')\n");
  auto run = run_tests(ws, kPython, std::chrono::seconds(30), {"t1", "t2", "t3"});
  EXPECT_EQ(run.statuses.at("t1"), TestStatus::Pass);
  EXPECT_EQ(run.statuses.at("t2"), TestStatus::Fail);
  EXPECT_EQ(run.statuses.at("t3"), TestStatus::Missing);
  EXPECT_NE(run.log.find("noise line"), std::string::npos);
  EXPECT_FALSE(run.timed_out);
}

TEST(RunTests, Timeout) {
  auto ws = scratch_workspace("import time\nprint('PASSED t1', flush=True)\ntime.sleep(30)\n");
  const auto started = std::chrono::steady_clock::now();
  auto run = run_tests(ws, kPython, std::chrono::milliseconds(500), {"t1"});
  EXPECT_TRUE(run.timed_out);
  EXPECT_EQ(run.statuses.at("t1"), TestStatus::Fail);
  EXPECT_LT(std::chrono::steady_clock::now() - started, std::chrono::seconds(10));
}

TEST(RunTests, SpawnFailure) {
  auto ws = scratch_workspace("");
  try {
    run_tests(ws, {"definitely-not-a-program-xyz", {}}, std::chrono::seconds(5));
    FAIL();
  } catch (const HarnessError& e) {
    EXPECT_EQ(e.code(), HarnessErrc::SpawnFailure);
  }
}

TEST(RunTests, RunsInsideWorkspace) {
  auto ws = scratch_workspace("import os\nopen('marker', 'w').write('x')\nprint('PASSED cwd')\n");
  auto run = run_tests(ws, kPython, std::chrono::seconds(30), {"cwd"});
  EXPECT_EQ(run.statuses.at("cwd"), TestStatus::Pass);
  EXPECT_TRUE(fs::exists(ws.root() / "marker"));
}

TEST(LogParser, PytestFormat) {
  auto parser = LogParser::pytest();
  auto s = parser.parse(
      "tests/test_a.py::test_one PASSED                   [ 50%]\n"
      "tests/test_a.py::test_two FAILED                   [100%]\n"
      "tests/test_a.py::test_three ERROR\n");
  EXPECT_EQ(s.at("tests/test_a.py::test_one"), TestStatus::Pass);
  EXPECT_EQ(s.at("tests/test_a.py::test_two"), TestStatus::Fail);
  EXPECT_EQ(s.at("tests/test_a.py::test_three"), TestStatus::Fail);
}

TEST(LogParser, LaterLinesWin) {
  auto s = LogParser{}.parse("FAILED x\nPASSED x\n");
  EXPECT_EQ(s.at("x"), TestStatus::Pass);
}

TEST(Evaluate, GoldResolves) {
  for (const auto& t : fixtures().instances) {
    auto r = evaluate(prediction(t.instance_id, *t.gold_patch), t, kFixtures);
    EXPECT_TRUE(r.accepted) << t.instance_id << " " << r.detail;
    EXPECT_TRUE(r.resolved) << t.instance_id << " " << r.detail;
    EXPECT_EQ(r.score, 1);
    EXPECT_FALSE(r.failure_stage.has_value());
    for (const auto& id : t.fail_to_pass) EXPECT_EQ(r.test_outcomes.at(id), TestStatus::Pass);
  }
}

TEST(Evaluate, WrongPatchAppliesButFails) {
  for (const auto& t : fixtures().instances) {
    auto r = evaluate(prediction(t.instance_id, variant_patch(t.instance_id, "wrong")), t, kFixtures);
    EXPECT_TRUE(r.accepted) << t.instance_id;
    EXPECT_FALSE(r.resolved);
    EXPECT_EQ(r.score, 0);
    EXPECT_FALSE(r.failure_stage.has_value());
    EXPECT_EQ(r.test_outcomes.at(t.fail_to_pass[0]), TestStatus::Fail);
  }
}

TEST(Evaluate, MalformedAndStaleRejected) {
  const auto t = fixtures().instances[1];
  for (std::string v : {"malformed", "stale"}) {
    auto r = evaluate(prediction(t.instance_id, variant_patch(t.instance_id, v)), t, kFixtures);
    EXPECT_FALSE(r.accepted) << v;
    EXPECT_EQ(r.score, 0);
    EXPECT_EQ(r.failure_stage, FailureStage::ApplyPrediction) << v;
    EXPECT_FALSE(r.harness_error);
  }
  auto empty = evaluate(prediction(t.instance_id, ""), t, kFixtures);
  EXPECT_FALSE(empty.accepted);
  EXPECT_EQ(empty.failure_stage, FailureStage::ApplyPrediction);
}

TEST(Evaluate, BadTestPatchIsHarnessError) {
  auto t = fixtures().instances[0];
  t.test_patch = "--- a/nothere.py\n+++ b/nothere.py\n@@ -1 +1 @@\n-x\n+y\n";
  auto r = evaluate(prediction(t.instance_id, *t.gold_patch), t, kFixtures);
  EXPECT_TRUE(r.harness_error);
  EXPECT_EQ(r.failure_stage, FailureStage::ApplyTestPatch);
  EXPECT_EQ(r.score, 0);
}

TEST(Evaluate, MaterializeFailure) {
  auto t = fixtures().instances[0];
  auto r = evaluate(prediction(t.instance_id, *t.gold_patch), t, FixtureSource{"/nonexistent"});
  EXPECT_TRUE(r.harness_error);
  EXPECT_EQ(r.failure_stage, FailureStage::Materialize);
}

TEST(Evaluate, MissingTestIsUnresolved) {
  auto t = fixtures().instances[0];
  t.pass_to_pass.push_back("test_calc.py::test_never_written");
  auto r = evaluate(prediction(t.instance_id, *t.gold_patch), t, kFixtures);
  EXPECT_TRUE(r.accepted);
  EXPECT_FALSE(r.resolved);
  EXPECT_EQ(r.test_outcomes.at("test_calc.py::test_never_written"), TestStatus::Missing);
}

TEST(Evaluate, SilentRunnerIsParseLogsFailure) {
  auto t = fixtures().instances[0];
  t.test_command = {"python3", {"-c", "print('nothing useful')"}};
  auto r = evaluate(prediction(t.instance_id, *t.gold_patch), t, kFixtures);
  EXPECT_EQ(r.failure_stage, FailureStage::ParseLogs);
  EXPECT_TRUE(r.accepted);
  EXPECT_EQ(r.score, 0);
}

TEST(Evaluate, TimeoutIsRunTestsFailure) {
  auto t = fixtures().instances[0];
  t.test_command = {"python3", {"-c", "import time; time.sleep(30)"}};
  EvalOptions o;
  o.timeout = std::chrono::milliseconds(300);
  auto r = evaluate(prediction(t.instance_id, *t.gold_patch), t, kFixtures, o);
  EXPECT_EQ(r.failure_stage, FailureStage::RunTests);
  for (const auto& [id, st] : r.test_outcomes) EXPECT_EQ(st, TestStatus::Fail) << id;
}

TEST(Evaluate, Idempotent) {
  const auto t = fixtures().instances[2];
  auto p = prediction(t.instance_id, variant_patch(t.instance_id, "wrong"));
  auto a = evaluate(p, t, kFixtures);
  auto b = evaluate(p, t, kFixtures);
  a.detail.clear();
  b.detail.clear();
  EXPECT_EQ(a, b);
}

TEST(Evaluate, ConcurrentEvaluationsAreIsolated) {
  const auto t = fixtures().instances[0];
  std::vector<std::future<EvalResult>> futures;
  for (int i = 0; i < 6; ++i) {
    auto patch = i % 2 ? *t.gold_patch : variant_patch(t.instance_id, "wrong");
    futures.push_back(std::async(std::launch::async, [&, patch] { return evaluate(prediction(t.instance_id, patch), t, kFixtures); }));
  }
  for (int i = 0; i < 6; ++i) {
    auto r = futures[static_cast<std::size_t>(i)].get();
    EXPECT_TRUE(r.accepted);
    EXPECT_EQ(r.resolved, i % 2 == 1) << i;
  }
}

TEST(Evaluate, InvariantsHold) {
  for (const auto& t : fixtures().instances)
    for (std::string v : {"gold", "wrong", "malformed", "stale"}) {
      auto r = evaluate(prediction(t.instance_id, variant_patch(t.instance_id, v)), t, kFixtures);
      if (r.resolved) {
        EXPECT_TRUE(r.accepted);
      }
      EXPECT_EQ(r.score == 1, r.resolved);
      EXPECT_TRUE(r.score == 0 || r.score == 1);
    }
}

TEST(Evaluate, MismatchedPredictionRejected) {
  const auto t = fixtures().instances[0];
  EXPECT_THROW(evaluate(prediction("other", ""), t, kFixtures), std::invalid_argument);
}

TEST(Aggregate, RoundedRates) {
  std::vector<EvalResult> rs(300);
  for (std::size_t i = 0; i < rs.size(); ++i) {
    rs[i].instance_id = std::to_string(i);
    rs[i].accepted = rs[i].resolved = i < 8;
  }
  auto r = aggregate(rs);
  EXPECT_EQ(r.success_rate, 2.67);
  EXPECT_EQ(format2(r.success_rate), "2.67");

  std::vector<EvalResult> ls(150);
  for (std::size_t i = 0; i < ls.size(); ++i) ls[i].accepted = i < 15;
  auto l = aggregate(ls);
  EXPECT_EQ(format2(l.accepted_rate), "10.00");
  EXPECT_EQ(format2(l.success_rate), "0.00");

  std::vector<EvalResult> zero(100);
  auto z = aggregate(zero);
  EXPECT_EQ(z.success_rate, 0.0);
  EXPECT_EQ(z.accepted_rate, 0.0);
  EXPECT_THROW(aggregate({}), std::invalid_argument);
}

TEST(Aggregate, HarnessErrorsCanBeExcluded) {
  std::vector<EvalResult> rs(4);
  rs[0].accepted = rs[0].resolved = true;
  rs[0].score = 1;
  rs[3].harness_error = true;
  EXPECT_EQ(aggregate(rs).success_rate, 25.0);
  AggregateOptions o;
  o.exclude_harness_errors = true;
  auto r = aggregate(rs, {}, Mode::ToT, "m", o);
  EXPECT_EQ(r.attempted, 3u);
  EXPECT_EQ(r.success_rate, 33.33);
}

TEST(Report, JsonRoundTripAndSchema) {
  std::vector<EvalResult> rs(2);
  rs[0].instance_id = "a";
  rs[0].accepted = true;
  rs[0].failure_stage = std::nullopt;
  rs[0].test_outcomes = {{"t", TestStatus::Missing}};
  rs[1].instance_id = "b";
  rs[1].failure_stage = FailureStage::ApplyPrediction;
  auto r = aggregate(rs, UsageStats{1, 2, 3, 4, 5}, Mode::IO, "model-x");
  auto back = nlohmann::json(r).get<RunReport>();
  EXPECT_EQ(back.results, r.results);
  EXPECT_EQ(back.model, "model-x");
  EXPECT_EQ(back.mode, Mode::IO);
  EXPECT_EQ(back.usage, r.usage);
  EXPECT_THROW(nlohmann::json({{"schema", "other"}}).get<RunReport>(), std::invalid_argument);
}
