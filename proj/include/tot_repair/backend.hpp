#pragma once

// Completion backends: the shared accounting/limiting front, and a scripted
// backend that replays canned responses deterministically.

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <regex>
#include <semaphore>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "tot_repair/task.hpp"

namespace tot_repair {

enum class BackendErrc { Transport, Auth, BudgetExceeded, ScriptMismatch, InvalidRequest };

inline const char* to_string(BackendErrc code) {
  switch (code) {
    case BackendErrc::Transport: return "TransportError";
    case BackendErrc::Auth: return "AuthError";
    case BackendErrc::BudgetExceeded: return "BudgetExceeded";
    case BackendErrc::ScriptMismatch: return "ScriptMismatch";
    case BackendErrc::InvalidRequest: return "InvalidRequest";
  }
  return "Unknown";
}

class BackendError : public std::runtime_error {
 public:
  BackendError(BackendErrc code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}
  BackendErrc code() const noexcept { return code_; }

 private:
  BackendErrc code_;
};

struct CompletionRequest {
  std::string prompt;
  double temperature = 0.7;
  int max_tokens = 2048;
  int num_samples = 1;
  std::vector<std::string> stop_sequences;
};

struct CompletionResponse {
  std::vector<std::string> samples;
  UsageStats usage;  // for this call only
};

struct BackendLimits {
  std::optional<std::uint64_t> max_total_tokens;
  std::optional<std::uint64_t> max_requests;
  int max_in_flight = 4;
};

inline std::uint64_t count_whitespace_tokens(std::string_view text) {
  std::uint64_t n = 0;
  bool in_token = false;
  for (unsigned char c : text) {
    bool space = c == ' ' || c == '\n' || c == '\t' || c == '\r' || c == '\f' || c == '\v';
    if (!space && !in_token) ++n;
    in_token = !space;
  }
  return n;
}

/// Front for every provider: validates requests, enforces the budget and the
/// in-flight limit, and accumulates usage. Implementations override
/// do_complete() and must be safe to call from several threads.
class Backend {
 public:
  explicit Backend(BackendLimits limits = {})
      : limits_(limits), in_flight_(std::max(1, limits.max_in_flight)) {}
  virtual ~Backend() = default;

  Backend(const Backend&) = delete;
  Backend& operator=(const Backend&) = delete;

  CompletionResponse complete(const CompletionRequest& request) {
    if (request.num_samples < 1) throw BackendError(BackendErrc::InvalidRequest, "num_samples must be >= 1");
    if (request.max_tokens < 1) throw BackendError(BackendErrc::InvalidRequest, "max_tokens must be >= 1");
    check_budget();
    in_flight_.acquire();
    note_in_flight(+1);
    struct Slot {
      Backend& self;
      ~Slot() {
        self.note_in_flight(-1);
        self.in_flight_.release();
      }
    } slot{*this};
    CompletionResponse response = do_complete(request);
    if (response.samples.size() != static_cast<std::size_t>(request.num_samples))
      throw BackendError(BackendErrc::Transport, "backend returned " + std::to_string(response.samples.size()) +
                                                     " samples, expected " + std::to_string(request.num_samples));
    std::lock_guard lock(mutex_);
    total_ += response.usage;
    return response;
  }

  UsageStats usage() const {
    std::lock_guard lock(mutex_);
    return total_;
  }

  int peak_in_flight() const {
    std::lock_guard lock(mutex_);
    return peak_in_flight_;
  }

  virtual std::string model_label() const = 0;

 protected:
  virtual CompletionResponse do_complete(const CompletionRequest& request) = 0;

 private:
  void check_budget() const {
    std::lock_guard lock(mutex_);
    if (limits_.max_requests && total_.requests >= *limits_.max_requests)
      throw BackendError(BackendErrc::BudgetExceeded,
                         "request cap of " + std::to_string(*limits_.max_requests) + " reached");
    if (limits_.max_total_tokens && total_.prompt_tokens + total_.completion_tokens >= *limits_.max_total_tokens)
      throw BackendError(BackendErrc::BudgetExceeded,
                         "token cap of " + std::to_string(*limits_.max_total_tokens) + " reached");
  }

  void note_in_flight(int delta) {
    std::lock_guard lock(mutex_);
    current_in_flight_ += delta;
    peak_in_flight_ = std::max(peak_in_flight_, current_in_flight_);
  }

  BackendLimits limits_;
  std::counting_semaphore<1024> in_flight_;
  mutable std::mutex mutex_;
  UsageStats total_;
  int current_in_flight_ = 0;
  int peak_in_flight_ = 0;
};

// --- scripted backend ----------------------------------------------------

struct ScriptRule {
  std::string match;                 // substring of the prompt
  std::optional<std::string> regex;  // used instead of `match` when set
  std::vector<std::string> responses;
  bool cycle = false;  // wrap around instead of running dry
};

struct Script {
  enum class Mode { Sequence, Pattern };
  Mode mode = Mode::Sequence;
  std::vector<std::string> responses;  // Sequence
  std::vector<ScriptRule> rules;       // Pattern; first matching rule wins

  bool empty() const { return mode == Mode::Sequence ? responses.empty() : rules.empty(); }
};

inline void to_json(nlohmann::json& j, const ScriptRule& r) {
  j = nlohmann::json{{"match", r.match}, {"responses", r.responses}, {"cycle", r.cycle}};
  if (r.regex) j["regex"] = *r.regex;
}

inline void from_json(const nlohmann::json& j, ScriptRule& r) {
  r.match = j.value("match", "");
  if (j.contains("regex")) r.regex = j.at("regex").get<std::string>();
  r.responses = j.at("responses").get<std::vector<std::string>>();
  r.cycle = j.value("cycle", false);
}

inline void to_json(nlohmann::json& j, const Script& s) {
  if (s.mode == Script::Mode::Sequence) {
    j = nlohmann::json{{"mode", "sequence"}, {"responses", s.responses}};
  } else {
    j = nlohmann::json{{"mode", "pattern"}, {"rules", s.rules}};
  }
}

inline void from_json(const nlohmann::json& j, Script& s) {
  s = {};
  const auto mode = j.value("mode", "sequence");
  if (mode == "sequence") {
    s.mode = Script::Mode::Sequence;
    s.responses = j.at("responses").get<std::vector<std::string>>();
  } else if (mode == "pattern") {
    s.mode = Script::Mode::Pattern;
    s.rules = j.at("rules").get<std::vector<ScriptRule>>();
  } else {
    throw std::invalid_argument("unknown script mode '" + mode + "'");
  }
}

/// Script file with one script per instance plus an optional fallback:
///
///   {"default": {...}, "instances": {"id-1": {...}, ...}}
///
/// A bare script object is treated as the default.
struct ScriptBook {
  std::optional<Script> fallback;
  std::map<std::string, Script> per_instance;

  const Script* for_instance(const std::string& id) const {
    if (auto it = per_instance.find(id); it != per_instance.end()) return &it->second;
    return fallback ? &*fallback : nullptr;
  }
};

inline void to_json(nlohmann::json& j, const ScriptBook& b) {
  j = nlohmann::json::object();
  if (b.fallback) j["default"] = *b.fallback;
  if (!b.per_instance.empty()) j["instances"] = b.per_instance;
}

inline ScriptBook load_script_book(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read script " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error(path.string() + ": " + e.what());
  }
  ScriptBook book;
  if (j.contains("instances") || j.contains("default")) {
    if (j.contains("default")) book.fallback = j.at("default").get<Script>();
    if (j.contains("instances")) book.per_instance = j.at("instances").get<std::map<std::string, Script>>();
  } else {
    book.fallback = j.get<Script>();
  }
  return book;
}

/// Replays a Script. Every prompt received is recorded; token usage is
/// counted in whitespace-separated tokens.
class ScriptedBackend : public Backend {
 public:
  explicit ScriptedBackend(Script script, std::string label = "scripted", BackendLimits limits = {})
      : Backend(limits), script_(std::move(script)), label_(std::move(label)), rule_cursor_(script_.rules.size(), 0) {
    if (script_.empty()) throw std::invalid_argument("scripted backend needs a nonempty script");
    for (const auto& r : script_.rules) compiled_.push_back(r.regex ? std::optional<std::regex>(*r.regex) : std::nullopt);
  }

  std::string model_label() const override { return label_; }

  std::vector<std::string> prompts() const {
    std::lock_guard lock(mutex_);
    return prompts_;
  }

  std::size_t remaining() const {
    std::lock_guard lock(mutex_);
    return script_.responses.size() - cursor_;
  }

 protected:
  CompletionResponse do_complete(const CompletionRequest& request) override {
    std::lock_guard lock(mutex_);
    prompts_.push_back(request.prompt);
    CompletionResponse out;
    const auto n = static_cast<std::size_t>(request.num_samples);
    if (script_.mode == Script::Mode::Sequence) {
      if (script_.responses.size() - cursor_ < n)
        throw BackendError(BackendErrc::Transport, "script exhausted after " + std::to_string(cursor_) + " responses");
      out.samples.assign(script_.responses.begin() + static_cast<std::ptrdiff_t>(cursor_),
                         script_.responses.begin() + static_cast<std::ptrdiff_t>(cursor_ + n));
      cursor_ += n;
    } else {
      std::size_t rule = find_rule(request.prompt);
      auto& r = script_.rules[rule];
      for (std::size_t i = 0; i < n; ++i) {
        auto& at = rule_cursor_[rule];
        if (at >= r.responses.size()) {
          if (!r.cycle || r.responses.empty())
            throw BackendError(BackendErrc::Transport, "responses for rule '" + describe(r) + "' exhausted");
          at = 0;
        }
        out.samples.push_back(r.responses[at++]);
      }
    }
    out.usage.requests = 1;
    out.usage.attempts = 1;
    out.usage.samples = n;
    out.usage.prompt_tokens = count_whitespace_tokens(request.prompt);
    for (const auto& s : out.samples) out.usage.completion_tokens += count_whitespace_tokens(s);
    return out;
  }

 private:
  static std::string describe(const ScriptRule& r) { return r.regex ? "regex:" + *r.regex : r.match; }

  std::size_t find_rule(const std::string& prompt) const {
    for (std::size_t i = 0; i < script_.rules.size(); ++i) {
      bool hit = compiled_[i] ? std::regex_search(prompt, *compiled_[i])
                              : prompt.find(script_.rules[i].match) != std::string::npos;
      if (hit) return i;
    }
    throw BackendError(BackendErrc::ScriptMismatch,
                       "no script rule matches prompt starting '" + prompt.substr(0, 60) + "'");
  }

  Script script_;
  std::string label_;
  std::vector<std::optional<std::regex>> compiled_;
  mutable std::mutex mutex_;
  std::size_t cursor_ = 0;
  std::vector<std::size_t> rule_cursor_;
  std::vector<std::string> prompts_;
};

}  // namespace tot_repair
