#pragma once

// Operator-level commands: generate predictions for a dataset, evaluate them,
// filter a dataset, and tabulate run reports.

#include <algorithm>
#include <atomic>
#include <chrono>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <ostream>
#include <set>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <nlohmann/json.hpp>

#include "tot_repair/backend.hpp"
#include "tot_repair/dataset.hpp"
#include "tot_repair/eval.hpp"
#include "tot_repair/http_backend.hpp"
#include "tot_repair/prompts.hpp"
#include "tot_repair/search.hpp"

namespace tot_repair {

enum ExitCode : int { kExitClean = 0, kExitInstanceFailures = 1, kExitFatal = 2 };

struct BackendSpec {
  std::string kind = "scripted";  // "scripted" | "http"
  std::string script;             // scripted: path to a script book
  HttpBackendConfig http;
};

inline void to_json(nlohmann::json& j, const BackendSpec& b) {
  j = nlohmann::json{{"kind", b.kind}};
  if (b.kind == "scripted") j["script"] = b.script;
  if (b.kind == "http") j["http"] = b.http;
}

inline void from_json(const nlohmann::json& j, BackendSpec& b) {
  BackendSpec d;
  b.kind = j.value("kind", d.kind);
  b.script = j.value("script", d.script);
  b.http = j.contains("http") ? j.at("http").get<HttpBackendConfig>() : d.http;
}

struct RunManifest {
  std::string dataset;
  std::optional<std::string> subset;  // SubsetSpec text; whole dataset when empty
  std::uint64_t seed = 0;
  Mode mode = Mode::ToT;
  SearchConfig config;
  BackendSpec backend;
  std::string templates;  // optional prompt template overrides
  std::string few_shot;   // optional few-shot examples (JSONL)
  std::string out;
  int jobs = 2;
  std::string created_at;  // the only timestamped field
};

inline void to_json(nlohmann::json& j, const RunManifest& m) {
  j = nlohmann::json{{"dataset", m.dataset}, {"seed", m.seed},         {"mode", to_string(m.mode)},
                     {"config", m.config},   {"backend", m.backend},   {"templates", m.templates},
                     {"few_shot", m.few_shot}, {"out", m.out},         {"jobs", m.jobs},
                     {"created_at", m.created_at}};
  j["subset"] = m.subset ? nlohmann::json(*m.subset) : nlohmann::json(nullptr);
}

inline void from_json(const nlohmann::json& j, RunManifest& m) {
  RunManifest d;
  m.dataset = j.value("dataset", d.dataset);
  m.subset = (j.contains("subset") && !j.at("subset").is_null())
                 ? std::optional<std::string>(j.at("subset").is_string() ? j.at("subset").get<std::string>()
                                                                         : j.at("subset").dump())
                 : std::nullopt;
  m.seed = j.value("seed", d.seed);
  m.mode = parse_mode(j.value("mode", std::string(to_string(d.mode))));
  m.config = j.contains("config") ? j.at("config").get<SearchConfig>() : d.config;
  m.backend = j.contains("backend") ? j.at("backend").get<BackendSpec>() : d.backend;
  m.templates = j.value("templates", d.templates);
  m.few_shot = j.value("few_shot", d.few_shot);
  m.out = j.value("out", d.out);
  m.jobs = j.value("jobs", d.jobs);
  m.created_at = j.value("created_at", d.created_at);
}

namespace detail {

inline std::string utc_timestamp(const char* format = "%Y-%m-%dT%H:%M:%SZ") {
  std::time_t t = std::time(nullptr);
  std::tm tm{};
  gmtime_r(&t, &tm);
  std::ostringstream os;
  os << std::put_time(&tm, format);
  return os.str();
}

// Fields that define what a run computes; a resumed run must agree on them.
inline nlohmann::json run_identity(const RunManifest& m) {
  nlohmann::json j = m;
  for (const char* volatile_field : {"created_at", "jobs", "out"}) j.erase(volatile_field);
  return j;
}

inline std::string trace_file_name(const std::string& instance_id) {
  std::string name;
  for (char c : instance_id) name += (c == '/' || c == '\\') ? '_' : c;
  return name + ".json";
}

inline void atomic_write(const fs::path& path, const std::string& content) {
  fs::path tmp = path;
  tmp += ".tmp";
  write_file(tmp, content);
  fs::rename(tmp, path);
}

// Reads a JSONL file, skipping blank and unparsable lines (a torn final line
// left by an interrupted run is the expected case).
inline std::vector<nlohmann::json> read_jsonl(const fs::path& path) {
  std::vector<nlohmann::json> out;
  std::ifstream in(path, std::ios::binary);
  std::string line;
  while (std::getline(in, line)) {
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    auto j = nlohmann::json::parse(line, nullptr, false);
    if (!j.is_discarded() && j.is_object()) out.push_back(std::move(j));
  }
  return out;
}

}  // namespace detail

/// Builds one backend per instance. Scripted runs get a fresh backend per
/// instance so results do not depend on scheduling; HTTP runs share one.
using BackendFactory = std::function<std::shared_ptr<Backend>(const TaskInstance&)>;

inline BackendFactory make_backend_factory(const BackendSpec& spec) {
  if (spec.kind == "scripted") {
    if (spec.script.empty()) throw std::invalid_argument("scripted backend needs --script");
    auto book = std::make_shared<ScriptBook>(load_script_book(spec.script));
    return [book](const TaskInstance& instance) -> std::shared_ptr<Backend> {
      const Script* s = book->for_instance(instance.instance_id);
      if (!s) throw BackendError(BackendErrc::ScriptMismatch, "no script for instance " + instance.instance_id);
      return std::make_shared<ScriptedBackend>(*s);
    };
  }
  if (spec.kind == "http") {
    auto shared = std::make_shared<HttpBackend>(spec.http);
    return [shared](const TaskInstance&) -> std::shared_ptr<Backend> { return shared; };
  }
  throw std::invalid_argument("unknown backend '" + spec.kind + "'");
}

struct RunOptions {
  bool force = false;
  std::ostream* log = nullptr;
  BackendFactory backend;  // overrides manifest.backend when set
  // Stop handing out work after this many instances finish (simulates an
  // interrupted run).
  std::optional<std::size_t> stop_after;
};

struct RunOutcome {
  int exit_code = kExitClean;
  std::size_t selected = 0;
  std::size_t skipped = 0;  // already had predictions
  std::size_t completed = 0;
  std::size_t failed = 0;
  UsageStats usage;  // this invocation only
  std::vector<std::pair<std::string, std::string>> errors;
  std::string fatal;
};

/// Runs generation for every selected instance and writes, under
/// manifest.out: manifest.json, predictions.jsonl, traces/<id>.json,
/// errors.jsonl and usage.json.
inline RunOutcome cmd_run(RunManifest manifest, const RunOptions& options = {}) {
  RunOutcome outcome;
  auto log = [&](const std::string& msg) {
    if (options.log) *options.log << msg << '\n';
  };
  auto fatal = [&](const std::string& msg) {
    outcome.exit_code = kExitFatal;
    outcome.fatal = msg;
    log("error: " + msg);
    return outcome;
  };

  Dataset selection;
  PromptBundle prompts;
  BackendFactory factory;
  try {
    if (auto v = validate_config(manifest.config); !v.empty()) return fatal("invalid search config: " + v.front());
    if (manifest.out.empty()) manifest.out = "runs/" + detail::utc_timestamp("%Y%m%dT%H%M%SZ") + "-" + to_string(manifest.mode);
    Dataset ds = load_dataset(manifest.dataset);
    selection = manifest.subset ? select_subset(ds, SubsetSpec::parse(*manifest.subset), manifest.seed) : ds;
    if (!manifest.templates.empty()) prompts = load_template_overrides(manifest.templates, prompts);
    if (!manifest.few_shot.empty()) prompts.few_shot_examples = load_few_shot(manifest.few_shot);
    factory = options.backend ? options.backend : make_backend_factory(manifest.backend);
  } catch (const std::exception& e) {
    return fatal(e.what());
  }
  outcome.selected = selection.instances.size();

  const fs::path out(manifest.out);
  const fs::path manifest_path = out / "manifest.json";
  const fs::path predictions_path = out / "predictions.jsonl";
  const fs::path errors_path = out / "errors.jsonl";
  try {
    fs::create_directories(out / "traces");
    if (fs::exists(manifest_path) && !options.force) {
      auto previous = nlohmann::json::parse(detail::read_file(manifest_path)).get<RunManifest>();
      if (detail::run_identity(previous) != detail::run_identity(manifest))
        return fatal(out.string() + " holds a different run; use --force or another --out");
    }
    if (options.force) {
      fs::remove(predictions_path);
      fs::remove(errors_path);
    }
    manifest.created_at = detail::utc_timestamp();
    detail::atomic_write(manifest_path, nlohmann::json(manifest).dump(2) + "\n");
  } catch (const std::exception& e) {
    return fatal(e.what());
  }

  std::set<std::string> selected_ids;
  for (const auto& t : selection.instances) selected_ids.insert(t.instance_id);
  std::set<std::string> done;
  for (const auto& rec : detail::read_jsonl(predictions_path))
    if (auto id = rec.value("instance_id", ""); selected_ids.contains(id)) done.insert(id);

  std::vector<const TaskInstance*> pending;
  for (const auto& t : selection.instances) {
    if (done.contains(t.instance_id)) {
      ++outcome.skipped;
    } else {
      pending.push_back(&t);
    }
  }
  log("selected " + std::to_string(outcome.selected) + ", already done " + std::to_string(outcome.skipped) +
      ", running " + std::to_string(pending.size()));

  // A torn last line must not swallow the next record.
  if (fs::exists(predictions_path) && fs::file_size(predictions_path) > 0) {
    const auto text = detail::read_file(predictions_path);
    if (text.back() != '\n') std::ofstream(predictions_path, std::ios::app | std::ios::binary) << '\n';
  }

  std::mutex write_mutex;
  std::ofstream predictions(predictions_path, std::ios::app | std::ios::binary);
  std::ofstream errors(errors_path, std::ios::app | std::ios::binary);
  std::atomic<std::size_t> next{0};
  std::atomic<std::size_t> finished{0};

  auto worker = [&] {
    for (;;) {
      if (options.stop_after && finished.load() >= *options.stop_after) return;
      const std::size_t i = next.fetch_add(1);
      if (i >= pending.size()) return;
      const TaskInstance& instance = *pending[i];
      try {
        auto backend = factory(instance);
        Prediction p = manifest.mode == Mode::ToT ? run_tot(instance, manifest.config, *backend, prompts)
                                                  : run_io(instance, *backend, prompts, manifest.config);
        detail::write_file(out / "traces" / detail::trace_file_name(instance.instance_id),
                           nlohmann::json(p.trace).dump(2) + "\n");
        std::lock_guard lock(write_mutex);
        predictions << prediction_record(p).dump() << '\n' << std::flush;
        outcome.usage += p.trace.usage;
        ++outcome.completed;
        log("done " + instance.instance_id + (p.no_patch ? " (no patch)" : ""));
      } catch (const std::exception& e) {
        std::lock_guard lock(write_mutex);
        errors << nlohmann::json{{"instance_id", instance.instance_id}, {"error", e.what()}}.dump() << '\n'
               << std::flush;
        outcome.errors.emplace_back(instance.instance_id, e.what());
        ++outcome.failed;
        log("failed " + instance.instance_id + ": " + e.what());
      }
      finished.fetch_add(1);
    }
  };

  const int width = std::max(1, std::min<int>(manifest.jobs, static_cast<int>(std::max<std::size_t>(1, pending.size()))));
  std::vector<std::thread> pool;
  for (int w = 0; w < width; ++w) pool.emplace_back(worker);
  for (auto& t : pool) t.join();
  predictions.close();
  errors.close();

  // Canonical order: selection order, one record per instance.
  std::map<std::string, nlohmann::json> by_id;
  for (auto& rec : detail::read_jsonl(predictions_path)) {
    auto id = rec.value("instance_id", "");
    if (selected_ids.contains(id)) by_id.try_emplace(id, std::move(rec));
  }
  std::string canonical;
  for (const auto& t : selection.instances)
    if (auto it = by_id.find(t.instance_id); it != by_id.end()) canonical += it->second.dump() + "\n";
  detail::atomic_write(predictions_path, canonical);
  detail::atomic_write(out / "usage.json", nlohmann::json{{"usage", outcome.usage},
                                                          {"completed", outcome.completed},
                                                          {"skipped", outcome.skipped},
                                                          {"failed", outcome.failed}}
                                               .dump(2) + "\n");

  outcome.exit_code = outcome.failed > 0 ? kExitInstanceFailures : kExitClean;
  return outcome;
}

inline std::vector<Prediction> load_predictions(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read predictions " + path.string());
  std::vector<Prediction> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      out.push_back(prediction_from_record(nlohmann::json::parse(line)));
    } catch (const std::exception& e) {
      throw std::runtime_error(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  return out;
}

struct EvaluateOptions {
  EvalOptions eval;
  AggregateOptions aggregate;
  std::ostream* log = nullptr;
};

/// Evaluates every prediction and writes results.jsonl and report.json into
/// `out`. Unknown instance ids are fatal and detected before any work.
inline RunReport cmd_evaluate(const fs::path& predictions_path, const fs::path& dataset_path,
                              const WorkspaceSource& source, const fs::path& out, const EvaluateOptions& options = {}) {
  const Dataset ds = load_dataset(dataset_path);
  const auto predictions = load_predictions(predictions_path);
  if (predictions.empty()) throw std::runtime_error("no predictions in " + predictions_path.string());
  for (const auto& p : predictions)
    if (!ds.find(p.instance_id))
      throw std::runtime_error("prediction for unknown instance '" + p.instance_id + "'");

  fs::create_directories(out);
  std::vector<EvalResult> results;
  std::string lines;
  for (const auto& p : predictions) {
    EvalResult r = evaluate(p, *ds.find(p.instance_id), source, options.eval);
    if (options.log)
      *options.log << p.instance_id << ": " << (r.resolved ? "resolved" : r.accepted ? "accepted" : "rejected")
                   << (r.failure_stage ? std::string(" at ") + to_string(*r.failure_stage) : "") << '\n';
    lines += nlohmann::json(r).dump() + "\n";
    results.push_back(std::move(r));
  }
  detail::atomic_write(out / "results.jsonl", lines);

  // Usage comes from the run directory when the predictions live in one.
  UsageStats usage;
  if (auto usage_path = predictions_path.parent_path() / "usage.json"; fs::exists(usage_path))
    usage = nlohmann::json::parse(detail::read_file(usage_path)).value("usage", UsageStats{});

  RunReport report = aggregate(results, usage, predictions.front().mode, predictions.front().model, options.aggregate);
  report.dataset_size = ds.instances.size();
  detail::atomic_write(out / "report.json", nlohmann::json(report).dump(2) + "\n");
  return report;
}

inline std::string render_report_text(const RunReport& r) {
  std::ostringstream os;
  os << "model:         " << r.model << " (" << to_string(r.mode) << ")\n"
     << "attempted:     " << r.attempted << "\n"
     << "accepted:      " << r.accepted << " (" << format2(r.accepted_rate) << "%)\n"
     << "resolved:      " << r.resolved << " (" << format2(r.success_rate) << "%)\n"
     << "samples:       " << r.usage.samples << "\n"
     << "tokens:        " << r.usage.prompt_tokens << " prompt, " << r.usage.completion_tokens << " completion\n";
  return os.str();
}

struct LiteSummary {
  std::size_t total = 0;
  std::size_t excluded = 0;
  std::map<std::string, std::size_t> per_criterion;
  std::vector<FilterVerdict> verdicts;
};

inline void to_json(nlohmann::json& j, const LiteSummary& s) {
  j = nlohmann::json{{"total", s.total}, {"excluded", s.excluded}, {"kept", s.total - s.excluded},
                     {"per_criterion", s.per_criterion}};
}

/// Applies the lite filter to every instance; writes verdicts.jsonl and
/// summary.json into `out` when it is nonempty.
inline LiteSummary cmd_filter_lite(const fs::path& dataset_path, const fs::path& out = {},
                                   const LiteFilterOptions& options = {}) {
  const Dataset ds = load_dataset(dataset_path);
  LiteSummary s;
  for (auto c : {LiteCriterion::C1, LiteCriterion::C2, LiteCriterion::C3, LiteCriterion::C4, LiteCriterion::C5,
                 LiteCriterion::C6})
    s.per_criterion[to_string(c)] = 0;
  std::string lines;
  for (const auto& t : ds.instances) {
    FilterVerdict v = lite_filter(t, options);
    ++s.total;
    if (v.excluded) ++s.excluded;
    for (const auto& label : v.reason_labels()) ++s.per_criterion[label];
    lines += nlohmann::json(v).dump() + "\n";
    s.verdicts.push_back(std::move(v));
  }
  if (!out.empty()) {
    fs::create_directories(out);
    detail::atomic_write(out / "verdicts.jsonl", lines);
    detail::atomic_write(out / "summary.json", nlohmann::json(s).dump(2) + "\n");
  }
  return s;
}

inline std::string render_lite_summary(const LiteSummary& s) {
  std::ostringstream os;
  os << "instances: " << s.total << ", excluded: " << s.excluded << ", kept: " << s.total - s.excluded << "\n";
  for (const auto& [label, n] : s.per_criterion) os << "  " << label << ": " << n << "\n";
  return os.str();
}

// --- comparison table ----------------------------------------------------

struct ReportCell {
  double success_rate = 0.0;
  double accepted_rate = 0.0;
  std::size_t attempted = 0;
  std::size_t dataset_size = 0;
  std::optional<int> footnote;  // set when the run covered part of the dataset
};

struct ComparisonTable {
  std::vector<Mode> columns;
  std::vector<std::string> models;  // first-seen order
  std::map<std::pair<std::string, Mode>, ReportCell> cells;
  std::vector<std::string> footnotes;
};

inline RunReport load_report(const fs::path& path) {
  try {
    return nlohmann::json::parse(detail::read_file(path)).get<RunReport>();
  } catch (const std::exception& e) {
    throw std::runtime_error(path.string() + ": " + e.what());
  }
}

inline ComparisonTable build_comparison(const std::vector<RunReport>& reports) {
  if (reports.empty()) throw std::invalid_argument("report needs at least one results file");
  ComparisonTable t;
  std::set<Mode> modes;
  for (const auto& r : reports) {
    if (std::find(t.models.begin(), t.models.end(), r.model) == t.models.end()) t.models.push_back(r.model);
    modes.insert(r.mode);
    auto key = std::pair{r.model, r.mode};
    if (t.cells.contains(key))
      throw std::invalid_argument("two runs for " + r.model + " in " + to_string(r.mode) + " mode");
    ReportCell c{r.success_rate, r.accepted_rate, r.attempted, r.dataset_size, std::nullopt};
    if (r.dataset_size > 0 && r.attempted < r.dataset_size) {
      t.footnotes.push_back(std::to_string(r.attempted) + " of " + std::to_string(r.dataset_size) + " instances (" +
                            format2(100.0 * static_cast<double>(r.attempted) / static_cast<double>(r.dataset_size)) +
                            "% of dataset)");
      c.footnote = static_cast<int>(t.footnotes.size());
    }
    t.cells.emplace(key, c);
  }
  for (auto m : {Mode::IO, Mode::ToT})
    if (modes.contains(m)) t.columns.push_back(m);
  return t;
}

inline std::string render_comparison_text(const ComparisonTable& t) {
  std::size_t width = 5;
  for (const auto& m : t.models) width = std::max(width, m.size());
  std::ostringstream os;
  auto section = [&](const char* title, double ReportCell::*field) {
    os << title << "\n" << std::left << std::setw(static_cast<int>(width)) << "model";
    for (auto c : t.columns) os << "  " << std::right << std::setw(10) << (c == Mode::IO ? "IO" : "ToT");
    os << "\n";
    for (const auto& m : t.models) {
      os << std::left << std::setw(static_cast<int>(width)) << m;
      for (auto c : t.columns) {
        auto it = t.cells.find({m, c});
        std::string cell = "-";
        if (it != t.cells.end()) {
          cell = format2(it->second.*field);
          if (it->second.footnote) cell += "[" + std::to_string(*it->second.footnote) + "]";
        }
        os << "  " << std::right << std::setw(10) << cell;
      }
      os << "\n";
    }
  };
  section("Success rate (%)", &ReportCell::success_rate);
  os << "\n";
  section("Accepted rate (%)", &ReportCell::accepted_rate);
  for (std::size_t i = 0; i < t.footnotes.size(); ++i) {
    if (i == 0) os << "\n";
    os << "[" << i + 1 << "] " << t.footnotes[i] << "\n";
  }
  return os.str();
}

inline nlohmann::json comparison_json(const ComparisonTable& t) {
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& m : t.models) {
    nlohmann::json row{{"model", m}};
    for (auto c : t.columns) {
      auto it = t.cells.find({m, c});
      if (it == t.cells.end()) {
        row[to_string(c)] = nullptr;
        continue;
      }
      nlohmann::json cell{{"success_rate", it->second.success_rate},
                          {"accepted_rate", it->second.accepted_rate},
                          {"attempted", it->second.attempted},
                          {"dataset_size", it->second.dataset_size}};
      if (it->second.footnote) cell["footnote"] = *it->second.footnote;
      row[to_string(c)] = cell;
    }
    rows.push_back(row);
  }
  nlohmann::json cols = nlohmann::json::array();
  for (auto c : t.columns) cols.push_back(to_string(c));
  return nlohmann::json{{"columns", cols}, {"rows", rows}, {"footnotes", t.footnotes}};
}

inline ComparisonTable cmd_report(const std::vector<fs::path>& report_paths) {
  std::vector<RunReport> reports;
  for (const auto& p : report_paths) reports.push_back(load_report(p));
  return build_comparison(reports);
}

}  // namespace tot_repair
