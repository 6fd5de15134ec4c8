#pragma once

// Two-level thought search (plans, then patches) and the single-shot IO
// baseline.

#include <algorithm>
#include <chrono>
#include <cstddef>
#include <numeric>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "tot_repair/backend.hpp"
#include "tot_repair/diff.hpp"
#include "tot_repair/prompts.hpp"
#include "tot_repair/task.hpp"

namespace tot_repair {

enum class Phase { Plan, Patch };
enum class Mode { IO, ToT };

inline const char* to_string(Phase p) { return p == Phase::Plan ? "plan" : "patch"; }
inline const char* to_string(Mode m) { return m == Mode::IO ? "io" : "tot"; }

inline Mode parse_mode(const std::string& s) {
  if (s == "io") return Mode::IO;
  if (s == "tot") return Mode::ToT;
  throw std::invalid_argument("unknown mode '" + s + "' (expected io or tot)");
}

// One sampled evaluation (a vote or a score) and what it parsed to.
struct EvaluationSample {
  std::string response;
  std::optional<int> value;
  std::string error;  // parse error when value is empty
  bool retried = false;

  friend bool operator==(const EvaluationSample&, const EvaluationSample&) = default;
};

struct ThoughtNode {
  Phase phase = Phase::Plan;
  std::size_t index = 0;
  std::string text;
  std::optional<int> votes;                 // Plan, after voting
  std::vector<EvaluationSample> scores;     // Patch, after scoring
  std::optional<double> mean_score;         // Patch, after scoring
  std::optional<std::size_t> parent;        // Patch: index of the plan it expands

  friend bool operator==(const ThoughtNode&, const ThoughtNode&) = default;
};

struct SearchTrace {
  std::string instance_id;
  Mode mode = Mode::ToT;
  std::vector<ThoughtNode> plans;
  std::vector<ThoughtNode> patches;
  std::vector<std::size_t> selected_plans;
  std::vector<std::size_t> selected_patches;
  std::vector<EvaluationSample> votes;
  bool degraded_vote = false;   // no vote parsed; fell back to the first plan
  bool degraded_score = false;  // no score parsed for any patch
  std::vector<std::string> prompts;
  UsageStats usage;
  double wall_time_ms = 0.0;

  // Everything except timing.
  bool same_search(const SearchTrace& o) const {
    return instance_id == o.instance_id && mode == o.mode && plans == o.plans && patches == o.patches &&
           selected_plans == o.selected_plans && selected_patches == o.selected_patches && votes == o.votes &&
           degraded_vote == o.degraded_vote && degraded_score == o.degraded_score && prompts == o.prompts &&
           usage == o.usage;
  }
};

struct Prediction {
  std::string instance_id;
  Mode mode = Mode::ToT;
  std::string model;
  std::string patch_text;
  bool no_patch = false;               // selected response had no diff block
  bool syntactically_invalid = false;  // patch_text present but does not parse
  SearchTrace trace;
};

// --- selection -----------------------------------------------------------

struct VoteTally {
  std::size_t winner = 0;
  std::vector<int> counts;
  bool degraded = false;
};

/// Ranks indices by key descending, lower index first on ties.
inline std::vector<std::size_t> rank_by(const std::vector<double>& keys) {
  std::vector<std::size_t> order(keys.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return keys[a] > keys[b]; });
  return order;
}

/// Votes are 1-based choices; nullopt or out-of-range entries are ignored.
inline VoteTally tally_votes(std::span<const std::optional<int>> votes, std::size_t num_choices) {
  VoteTally t;
  t.counts.assign(num_choices, 0);
  int valid = 0;
  for (const auto& v : votes) {
    if (!v || *v < 1 || static_cast<std::size_t>(*v) > num_choices) continue;
    ++t.counts[static_cast<std::size_t>(*v - 1)];
    ++valid;
  }
  if (valid == 0 || num_choices == 0) {
    t.degraded = true;
    return t;
  }
  t.winner = static_cast<std::size_t>(std::max_element(t.counts.begin(), t.counts.end()) - t.counts.begin());
  return t;
}

inline VoteTally tally_votes(const std::vector<std::optional<int>>& votes, std::size_t num_choices) {
  return tally_votes(std::span<const std::optional<int>>(votes), num_choices);
}

/// Argmax of per-candidate mean scores; the first maximum wins.
inline std::size_t select_by_score(const std::vector<double>& means) {
  if (means.empty()) return 0;
  return static_cast<std::size_t>(std::max_element(means.begin(), means.end()) - means.begin());
}

// --- search --------------------------------------------------------------

namespace detail {

inline CompletionRequest make_request(const std::string& prompt, const SearchConfig& config, int samples) {
  CompletionRequest r;
  r.prompt = prompt;
  r.temperature = config.temperature;
  r.max_tokens = config.max_completion_tokens;
  r.num_samples = samples;
  return r;
}

template <typename Parse>
std::vector<EvaluationSample> sample_evaluations(Backend& backend, const std::string& prompt,
                                                 const SearchConfig& config, int samples, SearchTrace& trace,
                                                 Parse parse) {
  auto response = backend.complete(make_request(prompt, config, samples));
  trace.prompts.push_back(prompt);
  trace.usage += response.usage;
  std::vector<EvaluationSample> out;
  for (auto& text : response.samples) {
    EvaluationSample s;
    s.response = std::move(text);
    try {
      s.value = parse(s.response);
    } catch (const ResponseError& e) {
      s.error = e.what();
    }
    out.push_back(std::move(s));
  }
  if (config.retry_failed_evaluations) {
    for (auto& s : out) {
      if (s.value) continue;
      auto again = backend.complete(make_request(prompt, config, 1));
      trace.usage += again.usage;
      s.retried = true;
      s.response = std::move(again.samples.front());
      s.error.clear();
      try {
        s.value = parse(s.response);
      } catch (const ResponseError& e) {
        s.error = e.what();
      }
    }
  }
  return out;
}

inline std::optional<std::string> try_extract(const std::string& text) {
  try {
    return extract_patch(text);
  } catch (const ResponseError&) {
    return std::nullopt;
  }
}

inline void finish_prediction(Prediction& p, const std::string& selected_response) {
  auto patch = try_extract(selected_response);
  if (!patch) {
    p.no_patch = true;
    return;
  }
  p.patch_text = std::move(*patch);
  try {
    (void)parse_diff(p.patch_text);
  } catch (const DiffError&) {
    p.syntactically_invalid = true;
  }
}

}  // namespace detail

/// Samples n plans, votes, expands the top `breadth` plans into k patches
/// each, scores them, and returns the best-scoring patch. Singleton phases
/// skip their evaluation step. Backend errors propagate.
inline Prediction run_tot(const TaskInstance& instance, const SearchConfig& config, Backend& backend,
                          const PromptBundle& prompts = {}) {
  if (auto v = validate_config(config); !v.empty()) throw std::invalid_argument("invalid search config: " + v.front());
  const auto started = std::chrono::steady_clock::now();
  Prediction pred;
  pred.instance_id = instance.instance_id;
  pred.mode = Mode::ToT;
  pred.model = backend.model_label();
  SearchTrace& trace = pred.trace;
  trace.instance_id = instance.instance_id;
  trace.mode = Mode::ToT;

  // Plans.
  const std::string plan_prompt = render_plan_prompt(instance, prompts);
  auto plan_resp = backend.complete(detail::make_request(plan_prompt, config, config.n_plans));
  trace.prompts.push_back(plan_prompt);
  trace.usage += plan_resp.usage;
  for (std::size_t i = 0; i < plan_resp.samples.size(); ++i)
    trace.plans.push_back(ThoughtNode{Phase::Plan, i, std::move(plan_resp.samples[i]), {}, {}, {}, {}});

  const auto breadth = static_cast<std::size_t>(config.breadth);
  if (trace.plans.size() > 1) {
    std::vector<std::string> choices;
    for (const auto& p : trace.plans) choices.push_back(p.text);
    const auto vote_prompt = render_vote_prompt(plan_vote_instruction(instance, prompts), choices, prompts);
    const auto num_choices = static_cast<int>(choices.size());
    trace.votes = detail::sample_evaluations(backend, vote_prompt, config, config.vote_samples, trace,
                                             [&](const std::string& r) { return parse_vote(r, num_choices); });
    std::vector<std::optional<int>> parsed;
    for (const auto& v : trace.votes) parsed.push_back(v.value);
    auto tally = tally_votes(parsed, choices.size());
    trace.degraded_vote = tally.degraded;
    std::vector<double> keys;
    for (std::size_t i = 0; i < trace.plans.size(); ++i) {
      trace.plans[i].votes = tally.counts[i];
      keys.push_back(tally.counts[i]);
    }
    auto order = rank_by(keys);
    trace.selected_plans.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(std::min(breadth, order.size())));
  } else {
    trace.selected_plans = {0};
  }

  // Patches, conditioned on each surviving plan.
  for (std::size_t plan_index : trace.selected_plans) {
    const std::string patch_prompt = render_patch_prompt(instance, trace.plans[plan_index].text, prompts);
    auto resp = backend.complete(detail::make_request(patch_prompt, config, config.k_patches));
    trace.prompts.push_back(patch_prompt);
    trace.usage += resp.usage;
    for (auto& text : resp.samples) {
      ThoughtNode node{Phase::Patch, trace.patches.size(), std::move(text), {}, {}, {}, plan_index};
      trace.patches.push_back(std::move(node));
    }
  }

  if (trace.patches.size() > 1) {
    std::vector<double> means;
    bool any_valid = false;
    for (auto& node : trace.patches) {
      node.scores = detail::sample_evaluations(backend, render_score_prompt(node.text, prompts), config,
                                               config.score_samples, trace,
                                               [](const std::string& r) { return parse_score(r); });
      double sum = 0.0;
      int valid = 0;
      for (const auto& s : node.scores) {
        if (!s.value) continue;
        sum += *s.value;
        ++valid;
      }
      any_valid = any_valid || valid > 0;
      node.mean_score = valid ? sum / valid : 0.0;
      means.push_back(*node.mean_score);
    }
    trace.degraded_score = !any_valid;
    auto order = rank_by(means);
    trace.selected_patches.assign(order.begin(),
                                  order.begin() + static_cast<std::ptrdiff_t>(std::min(breadth, order.size())));
  } else {
    trace.selected_patches = {0};
  }

  detail::finish_prediction(pred, trace.patches[trace.selected_patches.front()].text);
  trace.wall_time_ms =
      std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - started).count();
  return pred;
}

/// One completion of the few-shot IO prompt.
inline Prediction run_io(const TaskInstance& instance, Backend& backend, const PromptBundle& prompts = {},
                         const SearchConfig& config = {}) {
  const auto started = std::chrono::steady_clock::now();
  Prediction pred;
  pred.instance_id = instance.instance_id;
  pred.mode = Mode::IO;
  pred.model = backend.model_label();
  SearchTrace& trace = pred.trace;
  trace.instance_id = instance.instance_id;
  trace.mode = Mode::IO;
  const std::string prompt = render_io_prompt(instance, prompts);
  auto resp = backend.complete(detail::make_request(prompt, config, 1));
  trace.prompts.push_back(prompt);
  trace.usage += resp.usage;
  trace.patches.push_back(ThoughtNode{Phase::Patch, 0, std::move(resp.samples.front()), {}, {}, {}, {}});
  trace.selected_patches = {0};
  detail::finish_prediction(pred, trace.patches.front().text);
  trace.wall_time_ms =
      std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - started).count();
  return pred;
}

// --- serialization -------------------------------------------------------

inline void to_json(nlohmann::json& j, const EvaluationSample& s) {
  j = nlohmann::json{{"response", s.response}};
  j["value"] = s.value ? nlohmann::json(*s.value) : nlohmann::json(nullptr);
  if (!s.error.empty()) j["error"] = s.error;
  if (s.retried) j["retried"] = true;
}

inline void to_json(nlohmann::json& j, const ThoughtNode& n) {
  j = nlohmann::json{{"phase", to_string(n.phase)}, {"index", n.index}, {"text", n.text}};
  if (n.votes) j["votes"] = *n.votes;
  if (!n.scores.empty()) j["scores"] = n.scores;
  if (n.mean_score) j["mean_score"] = *n.mean_score;
  if (n.parent) j["parent"] = *n.parent;
}

inline void to_json(nlohmann::json& j, const SearchTrace& t) {
  j = nlohmann::json{{"instance_id", t.instance_id},
                     {"mode", to_string(t.mode)},
                     {"plans", t.plans},
                     {"patches", t.patches},
                     {"selected_plans", t.selected_plans},
                     {"selected_patches", t.selected_patches},
                     {"votes", t.votes},
                     {"degraded_vote", t.degraded_vote},
                     {"degraded_score", t.degraded_score},
                     {"prompts", t.prompts},
                     {"usage", t.usage},
                     {"wall_time_ms", t.wall_time_ms}};
}

/// The predictions-file record: {instance_id, mode, model, patch_text}.
inline nlohmann::json prediction_record(const Prediction& p) {
  return nlohmann::json{
      {"instance_id", p.instance_id}, {"mode", to_string(p.mode)}, {"model", p.model}, {"patch_text", p.patch_text}};
}

inline Prediction prediction_from_record(const nlohmann::json& j) {
  Prediction p;
  p.instance_id = j.at("instance_id").get<std::string>();
  p.mode = parse_mode(j.value("mode", "tot"));
  p.model = j.value("model", "");
  p.patch_text = j.value("patch_text", "");
  return p;
}

}  // namespace tot_repair
