#pragma once

// Prompt templates, rendering, and parsing of the fixed answer formats.

#include <charconv>
#include <filesystem>
#include <fstream>
#include <limits>
#include <optional>
#include <regex>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "tot_repair/task.hpp"

namespace tot_repair {

enum class ResponseErrc { NoVoteFound, VoteOutOfRange, NoScoreFound, ScoreOutOfRange, NoPatchBlock };

inline const char* to_string(ResponseErrc code) {
  switch (code) {
    case ResponseErrc::NoVoteFound: return "NoVoteFound";
    case ResponseErrc::VoteOutOfRange: return "VoteOutOfRange";
    case ResponseErrc::NoScoreFound: return "NoScoreFound";
    case ResponseErrc::ScoreOutOfRange: return "ScoreOutOfRange";
    case ResponseErrc::NoPatchBlock: return "NoPatchBlock";
  }
  return "Unknown";
}

class ResponseError : public std::runtime_error {
 public:
  ResponseError(ResponseErrc code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}
  ResponseErrc code() const noexcept { return code_; }

 private:
  ResponseErrc code_;
};

class TemplateError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Raised when a prompt would leak the reference patch.
class RedactionError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

namespace templates {

inline constexpr std::string_view kPlan =
    R"tpl(Given the Repository url, Base commit and Problem statement of a github issue. Please write a plan to solve it.
Your output must be of the following format:

Plan:
Your plan here.

{input}
)tpl";

inline constexpr std::string_view kPatch =
    R"tpl(Given the Repository url, Base commit, Problem statement of a github issue and a plan. Please write a correct git patch to solve it.

Your output must be of the following format:

Patch:
```diff
Your patch here.
```

The patch file should be in the unified diff format. Example:

```diff
diff --git a/file.py b/file.py
--- a/file.py
+++ b/file.py
@@ -1,27 +1,35 @@
 def euclidean(a, b):
-    while b:
-        a, b = b, a % b
-    return a
+    if b == 0:
+        return a
+    return euclidean(b, a % b)
```

{input}
)tpl";

inline constexpr std::string_view kVote =
    R"tpl(Given an instruction and several choices, decide which choice is most promising. Analyze each choice in detail, then conclude in the last line "The best choice is {s}", where {s} the integer id of the choice.)tpl";

inline constexpr std::string_view kScore =
    R"tpl(Analyze the following patch, then at the last line conclude "Therefore the correctness score is {s}", where {s} is an integer from 1 to 10.)tpl";

inline constexpr std::string_view kIo =
    R"tpl(Given the Repository url, Base commit and Problem statement of a github issue. Please write a correct git patch to solve it.

Your output must be of the following format:

Patch:
```diff
Your patch here.
```

{examples}{input}
)tpl";

}  // namespace templates

struct FewShotExample {
  std::string input;  // a rendered instance block
  std::string patch;
};

inline void to_json(nlohmann::json& j, const FewShotExample& e) { j = {{"input", e.input}, {"patch", e.patch}}; }
inline void from_json(const nlohmann::json& j, FewShotExample& e) {
  e.input = j.at("input").get<std::string>();
  e.patch = j.at("patch").get<std::string>();
}

// Stand-in demonstrations for the IO baseline; replace with load_few_shot().
inline std::vector<FewShotExample> default_few_shot_examples() {
  return {
      {"Repository url: https://github.com/example/strutils\nBase commit: 3f2a9c1\nProblem statement: "
       "capitalize('') raises IndexError instead of returning an empty string.",
       "diff --git a/strutils/core.py b/strutils/core.py\n"
       "--- a/strutils/core.py\n"
       "+++ b/strutils/core.py\n"
       "@@ -1,2 +1,4 @@\n"
       " def capitalize(word):\n"
       "+    if not word:\n"
       "+        return word\n"
       "     return word[0].upper() + word[1:]\n"},
      {"Repository url: https://github.com/example/geometry\nBase commit: 8d41e07\nProblem statement: "
       "Rectangle.area returns the perimeter instead of width times height.",
       "diff --git a/geometry/shapes.py b/geometry/shapes.py\n"
       "--- a/geometry/shapes.py\n"
       "+++ b/geometry/shapes.py\n"
       "@@ -6,4 +6,4 @@ class Rectangle:\n"
       "         self.height = height\n"
       " \n"
       "     def area(self):\n"
       "-        return 2 * (self.width + self.height)\n"
       "+        return self.width * self.height\n"},
      {"Repository url: https://github.com/example/config\nBase commit: c0ffee1\nProblem statement: "
       "get_bool treats the string 'false' as True because any nonempty string is truthy.",
       "diff --git a/config/values.py b/config/values.py\n"
       "--- a/config/values.py\n"
       "+++ b/config/values.py\n"
       "@@ -1,3 +1,3 @@\n"
       " def get_bool(raw):\n"
       "     \"\"\"Interpret a configuration string as a boolean.\"\"\"\n"
       "-    return bool(raw)\n"
       "+    return raw.strip().lower() in (\"1\", \"true\", \"yes\", \"on\")\n"},
      {"Repository url: https://github.com/example/stats\nBase commit: 51b7aa0\nProblem statement: "
       "mean() divides by zero on an empty list; it should return None.",
       "diff --git a/stats/basic.py b/stats/basic.py\n"
       "--- a/stats/basic.py\n"
       "+++ b/stats/basic.py\n"
       "@@ -1,2 +1,4 @@\n"
       " def mean(values):\n"
       "+    if not values:\n"
       "+        return None\n"
       "     return sum(values) / len(values)\n"},
      {"Repository url: https://github.com/example/paths\nBase commit: 9e3d2b4\nProblem statement: "
       "join_url drops the path segment when the base URL has no trailing slash.",
       "diff --git a/paths/url.py b/paths/url.py\n"
       "--- a/paths/url.py\n"
       "+++ b/paths/url.py\n"
       "@@ -1,2 +1,2 @@\n"
       " def join_url(base, path):\n"
       "-    return base + path\n"
       "+    return base.rstrip(\"/\") + \"/\" + path.lstrip(\"/\")\n"},
  };
}

struct PromptBundle {
  std::string plan_template{templates::kPlan};
  std::string patch_template{templates::kPatch};
  std::string vote_template{templates::kVote};
  std::string score_template{templates::kScore};
  std::string io_template{templates::kIo};
  std::vector<FewShotExample> few_shot_examples = default_few_shot_examples();
};

namespace detail {

inline void require_placeholder(const std::string& tpl, std::string_view name, std::string_view which) {
  if (tpl.find("{" + std::string(name) + "}") == std::string::npos)
    throw TemplateError(std::string(which) + " template is missing placeholder {" + std::string(name) + "}");
}

// Replaces only the named placeholders; other braces (e.g. "{s}") are literal.
inline std::string substitute(const std::string& tpl, const std::vector<std::pair<std::string, std::string>>& values) {
  std::string out;
  out.reserve(tpl.size());
  std::size_t pos = 0;
  while (pos < tpl.size()) {
    bool replaced = false;
    if (tpl[pos] == '{') {
      for (const auto& [name, value] : values) {
        std::string key = "{" + name + "}";
        if (tpl.compare(pos, key.size(), key) == 0) {
          out += value;
          pos += key.size();
          replaced = true;
          break;
        }
      }
    }
    if (!replaced) out += tpl[pos++];
  }
  return out;
}

inline void ensure_trailing_newline(std::string& s) {
  if (s.empty() || s.back() != '\n') s += '\n';
}

inline void guard_redaction(const std::string& prompt, const TaskInstance& instance) {
  if (!instance.gold_patch) return;
  std::string_view gold = *instance.gold_patch;
  while (!gold.empty() && (gold.back() == '\n' || gold.back() == ' ')) gold.remove_suffix(1);
  if (!gold.empty() && prompt.find(gold) != std::string::npos)
    throw RedactionError("prompt for " + instance.instance_id + " contains the gold patch");
}

}  // namespace detail

/// "Repository url:", "Base commit:", "Problem statement:" in that order.
/// Only these three fields are read from the instance.
inline std::string render_input_block(const TaskInstance& instance) {
  return "Repository url: " + instance.repo + "\nBase commit: " + instance.base_commit +
         "\nProblem statement: " + instance.problem_statement;
}

inline std::string render_plan_prompt(const TaskInstance& instance, const PromptBundle& bundle = {}) {
  detail::require_placeholder(bundle.plan_template, "input", "plan");
  auto out = detail::substitute(bundle.plan_template, {{"input", render_input_block(instance)}});
  detail::guard_redaction(out, instance);
  return out;
}

/// The plan is appended to the instance block under a "Plan:" heading unless
/// it already starts with one (which plan responses are asked to do).
inline std::string render_patch_prompt(const TaskInstance& instance, const std::string& plan,
                                       const PromptBundle& bundle = {}) {
  detail::require_placeholder(bundle.patch_template, "input", "patch");
  std::string input = render_input_block(instance) + "\n";
  std::string_view p = plan;
  while (!p.empty() && (p.front() == ' ' || p.front() == '\n')) p.remove_prefix(1);
  if (p.substr(0, 5) != "Plan:") input += "Plan:\n";
  input += std::string(p);
  while (!input.empty() && input.back() == '\n') input.pop_back();
  auto out = detail::substitute(bundle.patch_template, {{"input", input}});
  detail::guard_redaction(out, instance);
  return out;
}

/// Choices are numbered from 1 in the order given.
inline std::string render_vote_prompt(const std::string& instruction, const std::vector<std::string>& choices,
                                      const PromptBundle& bundle = {}) {
  if (choices.size() < 2) throw TemplateError("vote prompt needs at least 2 choices");
  std::string out = bundle.vote_template + "\n\nInstruction:\n" + instruction;
  detail::ensure_trailing_newline(out);
  out += "\n";
  for (std::size_t i = 0; i < choices.size(); ++i) {
    out += "Choice " + std::to_string(i + 1) + ":\n" + choices[i];
    detail::ensure_trailing_newline(out);
  }
  return out;
}

inline std::string render_score_prompt(const std::string& patch, const PromptBundle& bundle = {}) {
  std::string out = bundle.score_template + "\n\n" + patch;
  detail::ensure_trailing_newline(out);
  return out;
}

inline std::string render_few_shot_block(const std::vector<FewShotExample>& examples) {
  std::string out;
  for (const auto& ex : examples) {
    out += ex.input;
    detail::ensure_trailing_newline(out);
    out += "\nPatch:\n```diff\n" + ex.patch;
    detail::ensure_trailing_newline(out);
    out += "```\n\n";
  }
  return out;
}

inline std::string render_io_prompt(const TaskInstance& instance, const PromptBundle& bundle = {}) {
  detail::require_placeholder(bundle.io_template, "input", "io");
  detail::require_placeholder(bundle.io_template, "examples", "io");
  auto out = detail::substitute(bundle.io_template, {{"examples", render_few_shot_block(bundle.few_shot_examples)},
                                                     {"input", render_input_block(instance)}});
  detail::guard_redaction(out, instance);
  return out;
}

/// The question the vote prompt's choices answer: the plan task plus the
/// instance block.
inline std::string plan_vote_instruction(const TaskInstance& instance, const PromptBundle& bundle = {}) {
  auto first_line = bundle.plan_template.substr(0, bundle.plan_template.find('\n'));
  return first_line + "\n\n" + render_input_block(instance);
}

// --- response parsing ----------------------------------------------------

namespace detail {

// Integer from the last match of `pattern`; nullopt when absent. Values that
// overflow come back as INT_MAX so range checks reject them.
inline std::optional<long long> last_match_value(const std::string& text, const std::regex& pattern) {
  std::optional<long long> value;
  for (auto it = std::sregex_iterator(text.begin(), text.end(), pattern); it != std::sregex_iterator(); ++it) {
    const auto digits = (*it)[1].str();
    long long v = 0;
    auto [ptr, ec] = std::from_chars(digits.data(), digits.data() + digits.size(), v);
    value = ec == std::errc{} ? v : std::numeric_limits<long long>::max();
  }
  return value;
}

}  // namespace detail

/// 1-based index from the last "The best choice is N".
inline int parse_vote(const std::string& response, int num_choices) {
  static const std::regex pattern(R"(The\s+best\s+choice\s+is\s+(\d+))");
  auto v = detail::last_match_value(response, pattern);
  if (!v) throw ResponseError(ResponseErrc::NoVoteFound, "no 'The best choice is' conclusion");
  if (*v < 1 || *v > num_choices)
    throw ResponseError(ResponseErrc::VoteOutOfRange,
                        std::to_string(*v) + " not in [1, " + std::to_string(num_choices) + "]");
  return static_cast<int>(*v);
}

/// Score in [1, 10] from the last "Therefore the correctness score is N".
inline int parse_score(const std::string& response) {
  static const std::regex pattern(R"(Therefore\s+the\s+correctness\s+score\s+is\s+(\d+))");
  auto v = detail::last_match_value(response, pattern);
  if (!v) throw ResponseError(ResponseErrc::NoScoreFound, "no 'Therefore the correctness score is' conclusion");
  if (*v < 1 || *v > 10) throw ResponseError(ResponseErrc::ScoreOutOfRange, std::to_string(*v) + " not in [1, 10]");
  return static_cast<int>(*v);
}

namespace detail {

// Offset of the first "```diff" fence line at or after `from`, and the offset
// where its body starts.
inline std::optional<std::pair<std::size_t, std::size_t>> find_diff_fence(const std::string& text, std::size_t from) {
  std::size_t pos = from;
  while (pos < text.size()) {
    auto fence = text.find("```", pos);
    if (fence == std::string::npos) return std::nullopt;
    bool line_start = fence == 0 || text[fence - 1] == '\n';
    if (!line_start) {
      // allow indentation before the fence
      auto bol = text.rfind('\n', fence);
      bol = bol == std::string::npos ? 0 : bol + 1;
      line_start = text.find_first_not_of(" \t", bol) == fence;
    }
    auto eol = text.find('\n', fence);
    std::string_view info(text.data() + fence + 3, (eol == std::string::npos ? text.size() : eol) - fence - 3);
    while (!info.empty() && (info.back() == ' ' || info.back() == '\r' || info.back() == '\t')) info.remove_suffix(1);
    while (!info.empty() && info.front() == ' ') info.remove_prefix(1);
    if (line_start && info == "diff") {
      return std::pair{fence, eol == std::string::npos ? text.size() : eol + 1};
    }
    pos = fence + 3;
  }
  return std::nullopt;
}

inline std::string fence_body(const std::string& text, std::size_t body_start) {
  std::size_t pos = body_start;
  while (pos < text.size()) {
    auto eol = text.find('\n', pos);
    std::string_view line(text.data() + pos, (eol == std::string::npos ? text.size() : eol) - pos);
    std::string_view trimmed = line;
    while (!trimmed.empty() && (trimmed.back() == ' ' || trimmed.back() == '\r' || trimmed.back() == '\t'))
      trimmed.remove_suffix(1);
    while (!trimmed.empty() && trimmed.front() == ' ') trimmed.remove_prefix(1);
    if (trimmed == "```") return text.substr(body_start, pos - body_start);
    if (eol == std::string::npos) break;
    pos = eol + 1;
  }
  // Unterminated fence: the response was cut off; keep what arrived.
  return text.substr(body_start);
}

}  // namespace detail

/// Body of the first ```diff fence after "Patch:", or of the first ```diff
/// fence anywhere when no marker precedes one.
inline std::string extract_patch(const std::string& response) {
  std::optional<std::pair<std::size_t, std::size_t>> fence;
  if (auto marker = response.find("Patch:"); marker != std::string::npos)
    fence = detail::find_diff_fence(response, marker);
  if (!fence) fence = detail::find_diff_fence(response, 0);
  if (!fence) throw ResponseError(ResponseErrc::NoPatchBlock, "no ```diff block in response");
  return detail::fence_body(response, fence->second);
}

// --- template files ------------------------------------------------------

/// Section-per-template override file:
///
///   [[plan]]
///   ...template text...
///   [[vote]]
///   ...
///
/// A section body runs up to the next header; the newline before the next
/// header is a separator, not content. Sections not present keep defaults.
inline PromptBundle load_template_overrides(const std::filesystem::path& path, PromptBundle bundle = {}) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw TemplateError("cannot read template file " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  const std::string text = ss.str();
  static const std::regex header(R"(^\[\[(plan|patch|vote|score|io)\]\][ \t]*\r?$)", std::regex::multiline);
  std::vector<std::pair<std::string, std::pair<std::size_t, std::size_t>>> sections;  // name, (header, body)
  for (auto it = std::sregex_iterator(text.begin(), text.end(), header); it != std::sregex_iterator(); ++it) {
    std::size_t start = static_cast<std::size_t>(it->position(0));
    std::size_t body = start + static_cast<std::size_t>(it->length(0));
    if (body < text.size() && text[body] == '\n') ++body;
    sections.push_back({(*it)[1].str(), {start, body}});
  }
  if (sections.empty()) throw TemplateError(path.string() + ": no [[section]] headers found");
  for (std::size_t i = 0; i < sections.size(); ++i) {
    std::size_t body = sections[i].second.second;
    std::size_t end = i + 1 < sections.size() ? sections[i + 1].second.first : text.size();
    std::string content = body <= end ? text.substr(body, end - body) : std::string{};
    if (i + 1 < sections.size() && !content.empty() && content.back() == '\n') content.pop_back();
    const auto& name = sections[i].first;
    if (name == "plan") bundle.plan_template = content;
    else if (name == "patch") bundle.patch_template = content;
    else if (name == "vote") bundle.vote_template = content;
    else if (name == "score") bundle.score_template = content;
    else if (name == "io") bundle.io_template = content;
    else throw TemplateError(path.string() + ": unknown section [[" + name + "]]");
  }
  return bundle;
}

/// One {"input": ..., "patch": ...} object per line.
inline std::vector<FewShotExample> load_few_shot(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw TemplateError("cannot read few-shot file " + path.string());
  std::vector<FewShotExample> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    auto j = nlohmann::json::parse(line, nullptr, false);
    if (j.is_discarded() || !j.is_object() || !j.contains("input") || !j.contains("patch"))
      throw TemplateError(path.string() + ":" + std::to_string(lineno) + ": malformed few-shot record");
    out.push_back(j.get<FewShotExample>());
  }
  return out;
}

}  // namespace tot_repair
