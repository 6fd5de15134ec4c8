// tot-repair: generate, evaluate, filter and compare repository-repair runs.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "tot_repair/runner.hpp"

namespace fs = std::filesystem;
using namespace tot_repair;

namespace {

struct RunFlags {
  std::string config_file;
  std::optional<std::string> dataset, subset, mode, backend, script, out, endpoint, model, templates, few_shot;
  std::optional<std::uint64_t> seed;
  std::optional<int> n, k, b, vote_samples, score_samples, max_tokens, jobs, max_in_flight;
  std::optional<double> temperature;
  bool force = false;
  bool retry_failed = false;
};

template <typename T>
void override_if(const std::optional<T>& flag, T& target) {
  if (flag) target = *flag;
}

// flags > config file > defaults
RunManifest effective_manifest(const RunFlags& f) {
  RunManifest m;
  if (!f.config_file.empty()) {
    std::ifstream in(f.config_file);
    if (!in) throw std::runtime_error("cannot read config " + f.config_file);
    m = nlohmann::json::parse(in).get<RunManifest>();
  }
  override_if(f.dataset, m.dataset);
  if (f.subset) m.subset = *f.subset;
  override_if(f.seed, m.seed);
  if (f.mode) m.mode = parse_mode(*f.mode);
  override_if(f.n, m.config.n_plans);
  override_if(f.k, m.config.k_patches);
  override_if(f.b, m.config.breadth);
  override_if(f.temperature, m.config.temperature);
  override_if(f.vote_samples, m.config.vote_samples);
  override_if(f.score_samples, m.config.score_samples);
  override_if(f.max_tokens, m.config.max_completion_tokens);
  if (f.retry_failed) m.config.retry_failed_evaluations = true;
  override_if(f.backend, m.backend.kind);
  override_if(f.script, m.backend.script);
  override_if(f.endpoint, m.backend.http.endpoint);
  override_if(f.model, m.backend.http.model);
  override_if(f.max_in_flight, m.backend.http.limits.max_in_flight);
  override_if(f.templates, m.templates);
  override_if(f.few_shot, m.few_shot);
  override_if(f.out, m.out);
  override_if(f.jobs, m.jobs);
  return m;
}

WorkspaceSource make_source(const std::string& fixtures, const std::string& repo) {
  if (!fixtures.empty() && !repo.empty()) throw std::invalid_argument("use either --fixtures or --repo");
  if (!repo.empty()) return GitSource{repo};
  if (fixtures.empty()) throw std::invalid_argument("--fixtures or --repo is required");
  return FixtureSource{fixtures};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Tree-of-thoughts patch generation and evaluation for repository issues"};
  app.require_subcommand(1);

  RunFlags rf;
  auto* run = app.add_subcommand("run", "Generate predictions for a dataset");
  run->add_option("--config", rf.config_file, "JSON run manifest supplying defaults")->check(CLI::ExistingFile);
  run->add_option("--dataset", rf.dataset, "Task instances (JSONL)");
  run->add_option("--subset", rf.subset, "Instance count or fraction (\"100\", \"1/3\", \"0.5\")");
  run->add_option("--seed", rf.seed, "Seed for subset selection");
  run->add_option("--mode", rf.mode, "io or tot")->check(CLI::IsMember({"io", "tot"}));
  run->add_option("--n", rf.n, "Plans sampled");
  run->add_option("--k", rf.k, "Patches sampled per kept plan");
  run->add_option("--b", rf.b, "Breadth kept per step");
  run->add_option("--temperature", rf.temperature, "Sampling temperature");
  run->add_option("--vote-samples", rf.vote_samples, "Votes over the plans");
  run->add_option("--score-samples", rf.score_samples, "Scores per patch");
  run->add_option("--max-tokens", rf.max_tokens, "Completion token cap per request");
  run->add_flag("--retry-failed-evaluations", rf.retry_failed, "Resample once when a vote or score does not parse");
  run->add_option("--backend", rf.backend, "http or scripted")->check(CLI::IsMember({"http", "scripted"}));
  run->add_option("--script", rf.script, "Script book for the scripted backend");
  run->add_option("--endpoint", rf.endpoint, "Chat completions URL");
  run->add_option("--model", rf.model, "Model name sent to the endpoint");
  run->add_option("--max-in-flight", rf.max_in_flight, "Concurrent requests to the endpoint");
  run->add_option("--templates", rf.templates, "Prompt template overrides");
  run->add_option("--few-shot", rf.few_shot, "Few-shot examples for IO mode (JSONL)");
  run->add_option("--out", rf.out, "Output directory (default runs/<timestamp>-<mode>)");
  run->add_option("--jobs", rf.jobs, "Instances processed concurrently");
  run->add_flag("--force", rf.force, "Discard existing predictions in the output directory");

  std::string predictions, eval_dataset, fixtures, repo, eval_out;
  int timeout_s = 60;
  bool pytest_logs = false, exclude_harness = false;
  auto* eval = app.add_subcommand("evaluate", "Score predictions by applying them and running tests");
  eval->add_option("--predictions", predictions, "predictions.jsonl")->required()->check(CLI::ExistingFile);
  eval->add_option("--dataset", eval_dataset, "Task instances (JSONL)")->required()->check(CLI::ExistingFile);
  eval->add_option("--fixtures", fixtures, "Fixture root with <instance_id>/tree and manifest.json");
  eval->add_option("--repo", repo, "Local git repository to snapshot base commits from");
  eval->add_option("--out", eval_out, "Output directory (default: next to the predictions)");
  eval->add_option("--timeout", timeout_s, "Seconds allowed for the test command")->check(CLI::PositiveNumber);
  eval->add_flag("--pytest", pytest_logs, "Parse pytest -rA output instead of PASSED/FAILED lines");
  eval->add_flag("--exclude-harness-errors", exclude_harness, "Leave environment failures out of the rates");

  std::string lite_dataset, lite_out;
  auto* lite = app.add_subcommand("filter-lite", "Apply the lite-subset criteria to a dataset");
  lite->add_option("--dataset", lite_dataset, "Task instances with gold patches")->required()->check(CLI::ExistingFile);
  lite->add_option("--out", lite_out, "Directory for verdicts.jsonl and summary.json");

  std::vector<std::string> report_files;
  bool report_json = false;
  auto* report = app.add_subcommand("report", "Compare run reports as a model by mode table");
  report->add_option("reports", report_files, "report.json files")->required()->check(CLI::ExistingFile);
  report->add_flag("--json", report_json, "Print JSON instead of text");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : kExitFatal;
  }

  try {
    if (*run) {
      RunManifest m = effective_manifest(rf);
      if (m.dataset.empty()) throw std::invalid_argument("--dataset is required");
      RunOptions opts;
      opts.force = rf.force;
      opts.log = &std::cerr;
      RunOutcome o = cmd_run(m, opts);
      if (o.exit_code == kExitFatal) return kExitFatal;
      std::cout << "completed " << o.completed << ", skipped " << o.skipped << ", failed " << o.failed << "\n"
                << "samples " << o.usage.samples << ", requests " << o.usage.requests << ", tokens "
                << o.usage.prompt_tokens + o.usage.completion_tokens << "\n";
      return o.exit_code;
    }
    if (*eval) {
      EvaluateOptions opts;
      opts.eval.timeout = std::chrono::seconds(timeout_s);
      if (pytest_logs) opts.eval.parser = LogParser::pytest();
      opts.aggregate.exclude_harness_errors = exclude_harness;
      opts.log = &std::cerr;
      fs::path out = eval_out.empty() ? fs::path(predictions).parent_path() : fs::path(eval_out);
      if (out.empty()) out = ".";
      RunReport r = cmd_evaluate(predictions, eval_dataset, make_source(fixtures, repo), out, opts);
      std::cout << render_report_text(r);
      return kExitClean;
    }
    if (*lite) {
      std::cout << render_lite_summary(cmd_filter_lite(lite_dataset, lite_out));
      return kExitClean;
    }
    if (*report) {
      std::vector<fs::path> paths(report_files.begin(), report_files.end());
      auto table = cmd_report(paths);
      std::cout << (report_json ? comparison_json(table).dump(2) + "\n" : render_comparison_text(table));
      return kExitClean;
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitFatal;
  }
  return kExitFatal;
}
