#pragma once

// Domain types shared by every stage of the pipeline.

#include <algorithm>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "tot_repair/diff.hpp"

namespace tot_repair {

// Program plus arguments; never passed through a shell.
struct TestCommand {
  std::string program;
  std::vector<std::string> args;

  bool empty() const { return program.empty(); }
  friend bool operator==(const TestCommand&, const TestCommand&) = default;
};

struct TaskInstance {
  std::string instance_id;
  std::string repo;
  std::string base_commit;
  std::string problem_statement;
  std::string test_patch;
  std::vector<std::string> fail_to_pass;
  std::vector<std::string> pass_to_pass;
  // Reference fix. Used for filtering and fixtures; never rendered into a prompt.
  std::optional<std::string> gold_patch;
  TestCommand test_command;

  friend bool operator==(const TaskInstance&, const TaskInstance&) = default;
};

struct SearchConfig {
  int n_plans = 5;
  int k_patches = 5;
  int breadth = 1;
  int depth = 2;
  double temperature = 0.7;
  int vote_samples = 5;
  int score_samples = 1;
  int max_completion_tokens = 2048;
  // Re-ask once for each vote/score sample that fails to parse.
  bool retry_failed_evaluations = false;

  friend bool operator==(const SearchConfig&, const SearchConfig&) = default;
};

struct UsageStats {
  std::uint64_t prompt_tokens = 0;
  std::uint64_t completion_tokens = 0;
  std::uint64_t requests = 0;
  std::uint64_t samples = 0;
  // Transport attempts including retries; always >= requests.
  std::uint64_t attempts = 0;

  UsageStats& operator+=(const UsageStats& o) {
    prompt_tokens += o.prompt_tokens;
    completion_tokens += o.completion_tokens;
    requests += o.requests;
    samples += o.samples;
    attempts += o.attempts;
    return *this;
  }
  friend UsageStats operator+(UsageStats a, const UsageStats& b) { return a += b; }
  friend bool operator==(const UsageStats&, const UsageStats&) = default;
};

inline void to_json(nlohmann::json& j, const UsageStats& u) {
  j = nlohmann::json{{"prompt_tokens", u.prompt_tokens},
                     {"completion_tokens", u.completion_tokens},
                     {"requests", u.requests},
                     {"samples", u.samples},
                     {"attempts", u.attempts}};
}

inline void from_json(const nlohmann::json& j, UsageStats& u) {
  u.prompt_tokens = j.value("prompt_tokens", std::uint64_t{0});
  u.completion_tokens = j.value("completion_tokens", std::uint64_t{0});
  u.requests = j.value("requests", std::uint64_t{0});
  u.samples = j.value("samples", std::uint64_t{0});
  u.attempts = j.value("attempts", u.requests);
}

inline void to_json(nlohmann::json& j, const SearchConfig& c) {
  j = nlohmann::json{{"n_plans", c.n_plans},
                     {"k_patches", c.k_patches},
                     {"breadth", c.breadth},
                     {"depth", c.depth},
                     {"temperature", c.temperature},
                     {"vote_samples", c.vote_samples},
                     {"score_samples", c.score_samples},
                     {"max_completion_tokens", c.max_completion_tokens},
                     {"retry_failed_evaluations", c.retry_failed_evaluations}};
}

inline void from_json(const nlohmann::json& j, SearchConfig& c) {
  SearchConfig d;
  c.n_plans = j.value("n_plans", d.n_plans);
  c.k_patches = j.value("k_patches", d.k_patches);
  c.breadth = j.value("breadth", d.breadth);
  c.depth = j.value("depth", d.depth);
  c.temperature = j.value("temperature", d.temperature);
  c.vote_samples = j.value("vote_samples", d.vote_samples);
  c.score_samples = j.value("score_samples", d.score_samples);
  c.max_completion_tokens = j.value("max_completion_tokens", d.max_completion_tokens);
  c.retry_failed_evaluations = j.value("retry_failed_evaluations", d.retry_failed_evaluations);
}

/// Returns one description per violated invariant; empty means valid.
inline std::vector<std::string> validate_instance(const TaskInstance& instance) {
  std::vector<std::string> violations;
  if (instance.instance_id.empty()) violations.emplace_back("instance_id empty");
  if (instance.base_commit.empty()) violations.emplace_back("base_commit empty");
  try {
    (void)parse_diff(instance.test_patch);
  } catch (const DiffError&) {
    violations.emplace_back("test_patch unparsable");
  }
  return violations;
}

inline std::vector<std::string> validate_config(const SearchConfig& c) {
  std::vector<std::string> violations;
  auto positive = [&](int v, const char* name) {
    if (v < 1) violations.push_back(std::string(name) + " must be positive");
  };
  positive(c.n_plans, "n_plans");
  positive(c.k_patches, "k_patches");
  positive(c.breadth, "breadth");
  positive(c.vote_samples, "vote_samples");
  positive(c.score_samples, "score_samples");
  positive(c.max_completion_tokens, "max_completion_tokens");
  if (c.breadth > std::min(c.n_plans, c.k_patches)) violations.emplace_back("breadth exceeds min(n_plans, k_patches)");
  // The phase schedule is fixed: plans, then patches.
  if (c.depth != 2) violations.emplace_back("depth must be 2");
  if (!(c.temperature >= 0.0 && c.temperature <= 2.0)) violations.emplace_back("temperature outside [0, 2]");
  return violations;
}

}  // namespace tot_repair
