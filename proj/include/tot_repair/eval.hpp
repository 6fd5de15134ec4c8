#pragma once

// Patch evaluation: materialize the repository at its base commit, apply the
// test patch and the prediction, run the tests, and score the outcome.

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <random>
#include <regex>
#include <sstream>
#include <stdexcept>
#include <string>
#include <thread>
#include <variant>
#include <vector>

#include <boost/process.hpp>
#include <nlohmann/json.hpp>

#include "tot_repair/dataset.hpp"
#include "tot_repair/diff.hpp"
#include "tot_repair/search.hpp"
#include "tot_repair/task.hpp"

namespace tot_repair {

namespace fs = std::filesystem;

enum class HarnessErrc { SourceUnavailable, CommitNotFound, MaterializeFailed, SpawnFailure, Timeout };

inline const char* to_string(HarnessErrc code) {
  switch (code) {
    case HarnessErrc::SourceUnavailable: return "SourceUnavailable";
    case HarnessErrc::CommitNotFound: return "CommitNotFound";
    case HarnessErrc::MaterializeFailed: return "MaterializeFailed";
    case HarnessErrc::SpawnFailure: return "SpawnFailure";
    case HarnessErrc::Timeout: return "Timeout";
  }
  return "Unknown";
}

class HarnessError : public std::runtime_error {
 public:
  HarnessError(HarnessErrc code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}
  HarnessErrc code() const noexcept { return code_; }

 private:
  HarnessErrc code_;
};

// --- subprocess ----------------------------------------------------------

struct ProcessResult {
  int exit_code = -1;
  bool timed_out = false;
  std::string output;  // stdout and stderr interleaved
};

namespace detail {

inline fs::path unique_temp_dir(const std::string& prefix) {
  static std::atomic<std::uint64_t> counter{0};
  std::random_device rd;
  for (int tries = 0; tries < 100; ++tries) {
    auto name = prefix + "-" + std::to_string(rd()) + "-" + std::to_string(counter++);
    auto dir = fs::temp_directory_path() / name;
    std::error_code ec;
    if (fs::create_directory(dir, ec)) return dir;
  }
  throw HarnessError(HarnessErrc::MaterializeFailed, "cannot create a temporary directory");
}

inline std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void write_file(const fs::path& path, const std::string& content) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << content;
}

}  // namespace detail

/// Runs `command` in `cwd` without a shell. Programs without a slash are
/// looked up on PATH; relative paths with a slash resolve against `cwd`.
inline ProcessResult run_process(const TestCommand& command, const fs::path& cwd, std::chrono::milliseconds timeout) {
  namespace bp = boost::process;
  if (command.empty()) throw HarnessError(HarnessErrc::SpawnFailure, "empty command");
  boost::filesystem::path exe;
  if (command.program.find('/') == std::string::npos) {
    exe = bp::search_path(command.program);
    if (exe.empty()) throw HarnessError(HarnessErrc::SpawnFailure, "'" + command.program + "' not found on PATH");
  } else {
    fs::path p(command.program);
    exe = (p.is_absolute() ? p : cwd / p).string();
  }
  const fs::path log_dir = detail::unique_temp_dir("tot-repair-log");
  const fs::path log = log_dir / "output.log";
  ProcessResult result;
  {
    std::error_code ec;
    bp::child child(exe, bp::args(command.args), bp::start_dir(cwd.string()),
                    (bp::std_out & bp::std_err) > log.string(), bp::std_in < bp::null, ec);
    if (ec) {
      fs::remove_all(log_dir, ec);
      throw HarnessError(HarnessErrc::SpawnFailure, command.program + ": " + ec.message());
    }
    // Poll instead of child::wait_for, which can block until the deadline
    // even after the child has exited.
    const auto deadline = std::chrono::steady_clock::now() + timeout;
    auto pause = std::chrono::milliseconds(1);
    while (child.running(ec)) {
      if (std::chrono::steady_clock::now() >= deadline) {
        child.terminate(ec);
        result.timed_out = true;
        break;
      }
      std::this_thread::sleep_for(pause);
      pause = std::min(pause * 2, std::chrono::milliseconds(20));
    }
    if (!result.timed_out) result.exit_code = child.exit_code();
  }
  result.output = detail::read_file(log);
  std::error_code ec;
  fs::remove_all(log_dir, ec);
  return result;
}

// --- workspaces ----------------------------------------------------------

/// Fixture layout: <root>/<instance_id>/tree/ holds the snapshot and
/// <root>/<instance_id>/manifest.json holds {base_commit, test_command,
/// fail_to_pass, pass_to_pass}.
struct FixtureSource {
  fs::path root;
};

/// A local git repository; snapshots come from `git archive <base_commit>`.
struct GitSource {
  fs::path repository;
};

using WorkspaceSource = std::variant<FixtureSource, GitSource>;

struct FixtureManifest {
  std::string base_commit;
  TestCommand test_command;
  std::vector<std::string> fail_to_pass;
  std::vector<std::string> pass_to_pass;
};

inline void to_json(nlohmann::json& j, const FixtureManifest& m) {
  j = nlohmann::json{{"base_commit", m.base_commit},
                     {"test_command", m.test_command},
                     {"fail_to_pass", m.fail_to_pass},
                     {"pass_to_pass", m.pass_to_pass}};
}

inline void from_json(const nlohmann::json& j, FixtureManifest& m) {
  m.base_commit = j.value("base_commit", "");
  if (j.contains("test_command")) m.test_command = j.at("test_command").get<TestCommand>();
  m.fail_to_pass = j.value("fail_to_pass", std::vector<std::string>{});
  m.pass_to_pass = j.value("pass_to_pass", std::vector<std::string>{});
}

inline std::optional<FixtureManifest> read_fixture_manifest(const FixtureSource& src, const std::string& instance_id) {
  auto path = src.root / instance_id / "manifest.json";
  if (!fs::exists(path)) return std::nullopt;
  return nlohmann::json::parse(detail::read_file(path)).get<FixtureManifest>();
}

/// Owns an isolated directory; removed on destruction when disposable.
class Workspace {
 public:
  Workspace(fs::path root, std::string instance_id, bool disposable)
      : root_(std::move(root)), instance_id_(std::move(instance_id)), disposable_(disposable) {}
  ~Workspace() {
    if (disposable_ && !root_.empty()) {
      std::error_code ec;
      fs::remove_all(root_, ec);
    }
  }
  Workspace(Workspace&& o) noexcept
      : root_(std::exchange(o.root_, {})), instance_id_(std::move(o.instance_id_)), disposable_(o.disposable_) {}
  Workspace& operator=(Workspace&&) = delete;
  Workspace(const Workspace&) = delete;
  Workspace& operator=(const Workspace&) = delete;

  const fs::path& root() const { return root_; }
  const std::string& instance_id() const { return instance_id_; }
  bool disposable() const { return disposable_; }

 private:
  fs::path root_;
  std::string instance_id_;
  bool disposable_;
};

/// Copies the snapshot for `instance` into a fresh directory.
inline Workspace prepare_workspace(const TaskInstance& instance, const WorkspaceSource& source, bool disposable = true) {
  Workspace ws(detail::unique_temp_dir("tot-repair-ws"), instance.instance_id, disposable);
  if (const auto* fixture = std::get_if<FixtureSource>(&source)) {
    const fs::path tree = fixture->root / instance.instance_id / "tree";
    if (!fs::is_directory(tree)) throw HarnessError(HarnessErrc::SourceUnavailable, tree.string() + " missing");
    if (auto manifest = read_fixture_manifest(*fixture, instance.instance_id);
        manifest && !manifest->base_commit.empty() && manifest->base_commit != instance.base_commit)
      throw HarnessError(HarnessErrc::CommitNotFound, "fixture for " + instance.instance_id + " is at " +
                                                          manifest->base_commit + ", not " + instance.base_commit);
    std::error_code ec;
    fs::copy(tree, ws.root(), fs::copy_options::recursive | fs::copy_options::copy_symlinks, ec);
    if (ec) throw HarnessError(HarnessErrc::MaterializeFailed, ec.message());
    return ws;
  }
  const auto& git = std::get<GitSource>(source);
  if (!fs::exists(git.repository)) throw HarnessError(HarnessErrc::SourceUnavailable, git.repository.string());
  const auto quiet = std::chrono::seconds(60);
  auto check = run_process({"git", {"-C", git.repository.string(), "cat-file", "-e", instance.base_commit + "^{commit}"}},
                           ws.root(), quiet);
  if (check.timed_out || check.exit_code != 0)
    throw HarnessError(HarnessErrc::CommitNotFound, instance.base_commit + " in " + git.repository.string());
  const fs::path tar_dir = detail::unique_temp_dir("tot-repair-tar");
  const fs::path tar = tar_dir / "snapshot.tar";
  auto archive = run_process(
      {"git", {"-C", git.repository.string(), "archive", "--format=tar", "-o", tar.string(), instance.base_commit}},
      ws.root(), quiet);
  ProcessResult extract;
  if (archive.exit_code == 0) extract = run_process({"tar", {"-xf", tar.string(), "-C", ws.root().string()}}, ws.root(), quiet);
  std::error_code ec;
  fs::remove_all(tar_dir, ec);
  if (archive.exit_code != 0 || extract.exit_code != 0)
    throw HarnessError(HarnessErrc::MaterializeFailed, archive.output + extract.output);
  return ws;
}

/// Applies `diff` to the files under `root`. Nothing is written unless every
/// hunk applies.
inline void apply_diff_to_directory(const fs::path& root, const UnifiedDiff& diff, ApplyOptions options = {}) {
  FileTree before;
  for (const auto& fd : diff.file_diffs) {
    for (const auto* p : {&fd.old_path, &fd.new_path}) {
      if (*p == kNullPath) continue;
      const auto file = root / *p;
      if (fs::is_regular_file(file)) before[*p] = detail::read_file(file);
    }
  }
  FileTree after = apply_diff(before, diff, options);
  for (const auto& [path, _] : before)
    if (!after.contains(path)) fs::remove(root / path);
  for (const auto& [path, content] : after) {
    auto it = before.find(path);
    if (it == before.end() || it->second != content) detail::write_file(root / path, content);
  }
}

// --- test logs -----------------------------------------------------------

enum class TestStatus { Pass, Fail, Missing };

inline const char* to_string(TestStatus s) {
  switch (s) {
    case TestStatus::Pass: return "PASS";
    case TestStatus::Fail: return "FAIL";
    case TestStatus::Missing: return "MISSING";
  }
  return "?";
}

inline TestStatus parse_test_status(const std::string& s) {
  if (s == "PASS") return TestStatus::Pass;
  if (s == "FAIL") return TestStatus::Fail;
  if (s == "MISSING") return TestStatus::Missing;
  throw std::invalid_argument("unknown test status '" + s + "'");
}

/// Regex-driven per-test log parser. `status_group` and `id_group` index the
/// capture groups; statuses listed in `pass_words` count as passing and any
/// other captured status as failing. Later lines override earlier ones.
struct LogParser {
  std::string pattern = R"(^(PASSED|FAILED)\s+(\S+)\s*$)";
  int status_group = 1;
  int id_group = 2;
  std::vector<std::string> pass_words = {"PASSED"};

  static LogParser line_protocol() { return {}; }

  // "tests/test_x.py::test_y PASSED" as printed by pytest -rA / -v.
  static LogParser pytest() {
    return {R"(^(\S+::\S+)\s+(PASSED|FAILED|ERROR|XPASS|XFAIL|SKIPPED))", 2, 1, {"PASSED", "XFAIL"}};
  }

  std::map<std::string, TestStatus> parse(const std::string& log) const {
    std::regex re(pattern, std::regex::multiline);
    std::map<std::string, TestStatus> out;
    for (auto it = std::sregex_iterator(log.begin(), log.end(), re); it != std::sregex_iterator(); ++it) {
      const auto status = (*it)[status_group].str();
      const bool pass = std::find(pass_words.begin(), pass_words.end(), status) != pass_words.end();
      out[(*it)[id_group].str()] = pass ? TestStatus::Pass : TestStatus::Fail;
    }
    return out;
  }
};

struct TestRun {
  std::map<std::string, TestStatus> statuses;
  std::string log;
  bool timed_out = false;
  int exit_code = -1;
};

/// Executes the test command in the workspace and parses per-test statuses.
/// Tests in `expected` that the log never mentions are Missing. On timeout
/// every expected test is Fail.
inline TestRun run_tests(const Workspace& workspace, const TestCommand& command, std::chrono::milliseconds timeout,
                         const std::vector<std::string>& expected = {}, const LogParser& parser = {}) {
  TestRun run;
  auto proc = run_process(command, workspace.root(), timeout);
  run.log = std::move(proc.output);
  run.exit_code = proc.exit_code;
  run.timed_out = proc.timed_out;
  if (run.timed_out) {
    for (const auto& id : expected) run.statuses[id] = TestStatus::Fail;
    return run;
  }
  run.statuses = parser.parse(run.log);
  for (const auto& id : expected) run.statuses.try_emplace(id, TestStatus::Missing);
  return run;
}

// --- evaluation ----------------------------------------------------------

enum class FailureStage { Materialize, ApplyTestPatch, ApplyPrediction, RunTests, ParseLogs };

inline const char* to_string(FailureStage s) {
  switch (s) {
    case FailureStage::Materialize: return "Materialize";
    case FailureStage::ApplyTestPatch: return "ApplyTestPatch";
    case FailureStage::ApplyPrediction: return "ApplyPrediction";
    case FailureStage::RunTests: return "RunTests";
    case FailureStage::ParseLogs: return "ParseLogs";
  }
  return "?";
}

inline FailureStage parse_failure_stage(const std::string& s) {
  for (auto st : {FailureStage::Materialize, FailureStage::ApplyTestPatch, FailureStage::ApplyPrediction,
                  FailureStage::RunTests, FailureStage::ParseLogs})
    if (s == to_string(st)) return st;
  throw std::invalid_argument("unknown failure stage '" + s + "'");
}

struct EvalResult {
  std::string instance_id;
  bool accepted = false;
  std::map<std::string, TestStatus> test_outcomes;
  bool resolved = false;
  int score = 0;
  std::optional<FailureStage> failure_stage;
  // The environment, not the model, failed (workspace or test patch).
  bool harness_error = false;
  std::string detail;

  friend bool operator==(const EvalResult&, const EvalResult&) = default;
};

inline void to_json(nlohmann::json& j, const EvalResult& r) {
  nlohmann::json outcomes = nlohmann::json::object();
  for (const auto& [id, st] : r.test_outcomes) outcomes[id] = to_string(st);
  j = nlohmann::json{{"instance_id", r.instance_id}, {"accepted", r.accepted},     {"test_outcomes", outcomes},
                     {"resolved", r.resolved},       {"score", r.score},           {"harness_error", r.harness_error},
                     {"detail", r.detail}};
  j["failure_stage"] = r.failure_stage ? nlohmann::json(to_string(*r.failure_stage)) : nlohmann::json(nullptr);
}

inline void from_json(const nlohmann::json& j, EvalResult& r) {
  r = {};
  r.instance_id = j.at("instance_id").get<std::string>();
  r.accepted = j.at("accepted").get<bool>();
  r.resolved = j.at("resolved").get<bool>();
  r.score = j.at("score").get<int>();
  r.harness_error = j.value("harness_error", false);
  r.detail = j.value("detail", "");
  const auto outcomes = j.value("test_outcomes", nlohmann::json::object());
  for (const auto& [id, st] : outcomes.items())
    r.test_outcomes[id] = parse_test_status(st.get<std::string>());
  if (j.contains("failure_stage") && !j.at("failure_stage").is_null())
    r.failure_stage = parse_failure_stage(j.at("failure_stage").get<std::string>());
}

struct EvalOptions {
  std::chrono::milliseconds timeout{60'000};
  LogParser parser;
  ApplyOptions apply;
};

/// Prepare, apply the test patch, apply the prediction, run, and score.
/// Scores 1 only when every step succeeds and every fail_to_pass and
/// pass_to_pass test passes.
inline EvalResult evaluate(const Prediction& prediction, const TaskInstance& instance, const WorkspaceSource& source,
                           const EvalOptions& options = {}) {
  if (prediction.instance_id != instance.instance_id)
    throw std::invalid_argument("prediction " + prediction.instance_id + " does not belong to " + instance.instance_id);
  EvalResult r;
  r.instance_id = instance.instance_id;
  auto fail = [&](FailureStage stage, std::string why, bool harness) {
    r.failure_stage = stage;
    r.harness_error = harness;
    r.detail = std::move(why);
    r.score = 0;
    r.resolved = false;
    return r;
  };

  std::optional<Workspace> ws;
  try {
    ws.emplace(prepare_workspace(instance, source));
  } catch (const HarnessError& e) {
    return fail(FailureStage::Materialize, e.what(), true);
  }

  try {
    apply_diff_to_directory(ws->root(), parse_diff(instance.test_patch));
  } catch (const DiffError& e) {
    return fail(FailureStage::ApplyTestPatch, e.what(), true);
  }

  if (prediction.patch_text.empty()) return fail(FailureStage::ApplyPrediction, "empty prediction patch", false);
  try {
    apply_diff_to_directory(ws->root(), parse_diff(prediction.patch_text), options.apply);
  } catch (const DiffError& e) {
    return fail(FailureStage::ApplyPrediction, e.what(), false);
  }
  r.accepted = true;

  std::vector<std::string> expected = instance.fail_to_pass;
  expected.insert(expected.end(), instance.pass_to_pass.begin(), instance.pass_to_pass.end());
  TestCommand command = instance.test_command;
  if (command.empty()) {
    if (const auto* fixture = std::get_if<FixtureSource>(&source))
      if (auto m = read_fixture_manifest(*fixture, instance.instance_id)) command = m->test_command;
  }
  TestRun run;
  try {
    run = run_tests(*ws, command, options.timeout, expected, options.parser);
  } catch (const HarnessError& e) {
    for (const auto& id : expected) r.test_outcomes[id] = TestStatus::Fail;
    return fail(FailureStage::RunTests, e.what(), false);
  }
  for (const auto& id : expected) r.test_outcomes[id] = run.statuses.at(id);
  if (run.timed_out) return fail(FailureStage::RunTests, "test command timed out", false);
  const bool any_reported = std::any_of(run.statuses.begin(), run.statuses.end(),
                                        [](const auto& kv) { return kv.second != TestStatus::Missing; });
  if (!any_reported && !expected.empty())
    return fail(FailureStage::ParseLogs, "no test results found in log", false);

  r.resolved = std::all_of(expected.begin(), expected.end(),
                           [&](const std::string& id) { return r.test_outcomes.at(id) == TestStatus::Pass; });
  r.score = r.resolved ? 1 : 0;
  return r;
}

// --- aggregation ---------------------------------------------------------

inline double round2(double v) { return std::round(v * 100.0) / 100.0; }

inline std::string format2(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

struct RunReport {
  Mode mode = Mode::ToT;
  std::string model;
  std::size_t attempted = 0;
  std::size_t accepted = 0;
  std::size_t resolved = 0;
  double success_rate = 0.0;   // percent, 2 decimals
  double accepted_rate = 0.0;  // percent, 2 decimals
  std::size_t dataset_size = 0;  // 0 when unknown
  std::vector<EvalResult> results;
  UsageStats usage;
};

struct AggregateOptions {
  bool exclude_harness_errors = false;
};

inline RunReport aggregate(const std::vector<EvalResult>& results, const UsageStats& usage = {}, Mode mode = Mode::ToT,
                           std::string model = {}, const AggregateOptions& options = {}) {
  if (results.empty()) throw std::invalid_argument("aggregate needs at least one result");
  RunReport rep;
  rep.mode = mode;
  rep.model = std::move(model);
  rep.usage = usage;
  rep.results = results;
  for (const auto& r : results) {
    if (options.exclude_harness_errors && r.harness_error) continue;
    ++rep.attempted;
    rep.accepted += r.accepted ? 1 : 0;
    rep.resolved += r.resolved ? 1 : 0;
  }
  if (rep.attempted > 0) {
    rep.success_rate = round2(100.0 * static_cast<double>(rep.resolved) / static_cast<double>(rep.attempted));
    rep.accepted_rate = round2(100.0 * static_cast<double>(rep.accepted) / static_cast<double>(rep.attempted));
  }
  return rep;
}

inline constexpr std::string_view kReportSchema = "tot-repair/run-report/v1";

inline void to_json(nlohmann::json& j, const RunReport& r) {
  j = nlohmann::json{{"schema", kReportSchema},
                     {"mode", to_string(r.mode)},
                     {"model", r.model},
                     {"attempted", r.attempted},
                     {"accepted", r.accepted},
                     {"resolved", r.resolved},
                     {"success_rate", r.success_rate},
                     {"accepted_rate", r.accepted_rate},
                     {"dataset_size", r.dataset_size},
                     {"results", r.results},
                     {"usage", r.usage}};
}

inline void from_json(const nlohmann::json& j, RunReport& r) {
  if (!j.is_object() || j.value("schema", "") != kReportSchema)
    throw std::invalid_argument("not a run report (schema mismatch)");
  r.mode = parse_mode(j.at("mode").get<std::string>());
  r.model = j.at("model").get<std::string>();
  r.attempted = j.at("attempted").get<std::size_t>();
  r.accepted = j.at("accepted").get<std::size_t>();
  r.resolved = j.at("resolved").get<std::size_t>();
  r.success_rate = j.at("success_rate").get<double>();
  r.accepted_rate = j.at("accepted_rate").get<double>();
  r.dataset_size = j.value("dataset_size", std::size_t{0});
  r.results = j.value("results", std::vector<EvalResult>{});
  r.usage = j.value("usage", UsageStats{});
}

}  // namespace tot_repair
