#pragma once

// Newline-delimited task datasets and the Lite exclusion criteria.

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <limits>
#include <map>
#include <random>
#include <regex>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

#include <nlohmann/json.hpp>

#include "tot_repair/diff.hpp"
#include "tot_repair/task.hpp"

namespace tot_repair {

class DatasetError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Dataset {
  std::string split_name;
  std::vector<TaskInstance> instances;

  const TaskInstance* find(const std::string& id) const {
    auto it = std::find_if(instances.begin(), instances.end(),
                           [&](const TaskInstance& t) { return t.instance_id == id; });
    return it == instances.end() ? nullptr : &*it;
  }
};

// --- serialization -------------------------------------------------------

namespace detail {

inline const std::set<std::string>& known_instance_fields() {
  static const std::set<std::string> fields{"instance_id",  "repo",         "base_commit", "problem_statement",
                                            "test_patch",   "fail_to_pass", "pass_to_pass", "gold_patch",
                                            "test_command"};
  return fields;
}

// SWE-bench ships test lists as JSON-encoded strings; accept both shapes.
inline std::vector<std::string> string_list(const nlohmann::json& j, const char* field) {
  if (!j.contains(field) || j.at(field).is_null()) return {};
  const auto& v = j.at(field);
  if (v.is_string()) {
    auto inner = nlohmann::json::parse(v.get<std::string>(), nullptr, false);
    if (inner.is_discarded() || !inner.is_array())
      throw DatasetError(std::string(field) + " is a string but not an encoded list");
    return inner.get<std::vector<std::string>>();
  }
  return v.get<std::vector<std::string>>();
}

}  // namespace detail

inline void to_json(nlohmann::json& j, const TestCommand& c) {
  j = nlohmann::json::array();
  j.push_back(c.program);
  for (const auto& a : c.args) j.push_back(a);
}

inline void from_json(const nlohmann::json& j, TestCommand& c) {
  c = {};
  if (j.is_array()) {
    auto parts = j.get<std::vector<std::string>>();
    if (parts.empty()) return;
    c.program = parts.front();
    c.args.assign(parts.begin() + 1, parts.end());
  } else if (j.is_object()) {
    c.program = j.at("program").get<std::string>();
    c.args = j.value("args", std::vector<std::string>{});
  } else if (!j.is_null()) {
    throw DatasetError("test_command must be an array or {program, args}");
  }
}

inline void to_json(nlohmann::json& j, const TaskInstance& t) {
  j = nlohmann::json{{"instance_id", t.instance_id},
                     {"repo", t.repo},
                     {"base_commit", t.base_commit},
                     {"problem_statement", t.problem_statement},
                     {"test_patch", t.test_patch},
                     {"fail_to_pass", t.fail_to_pass},
                     {"pass_to_pass", t.pass_to_pass},
                     {"test_command", t.test_command}};
  if (t.gold_patch) j["gold_patch"] = *t.gold_patch;
}

inline void from_json(const nlohmann::json& j, TaskInstance& t) {
  t = {};
  t.instance_id = j.value("instance_id", "");
  t.repo = j.value("repo", "");
  t.base_commit = j.value("base_commit", "");
  t.problem_statement = j.value("problem_statement", "");
  t.test_patch = j.value("test_patch", "");
  t.fail_to_pass = detail::string_list(j, "fail_to_pass");
  t.pass_to_pass = detail::string_list(j, "pass_to_pass");
  if (j.contains("gold_patch") && !j.at("gold_patch").is_null()) t.gold_patch = j.at("gold_patch").get<std::string>();
  if (j.contains("test_command")) t.test_command = j.at("test_command").get<TestCommand>();
}

struct LoadOptions {
  std::function<void(const std::string&)> on_warning = [](const std::string& msg) {
    std::cerr << "warning: " << msg << "\n";
  };
};

/// Reads one TaskInstance per line, preserving file order. Blank lines are
/// skipped. Split name is the file stem.
inline Dataset load_dataset(const std::filesystem::path& path, const LoadOptions& options = {}) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DatasetError("cannot read dataset " + path.string());
  Dataset ds;
  ds.split_name = path.stem().string();
  std::map<std::string, std::size_t> first_seen;
  std::set<std::string> warned;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.find_first_not_of(" \t") == std::string::npos) continue;
    auto where = path.string() + ":" + std::to_string(lineno);
    auto j = nlohmann::json::parse(line, nullptr, false);
    if (j.is_discarded() || !j.is_object()) throw DatasetError(where + ": malformed record");
    for (const auto& [key, _] : j.items()) {
      if (!detail::known_instance_fields().contains(key) && warned.insert(key).second && options.on_warning)
        options.on_warning(where + ": ignoring unknown field '" + key + "'");
    }
    TaskInstance t;
    try {
      t = j.get<TaskInstance>();
    } catch (const std::exception& e) {
      throw DatasetError(where + ": malformed record: " + e.what());
    }
    auto violations = validate_instance(t);
    if (!violations.empty()) {
      std::string msg = where + ": invalid instance:";
      for (const auto& v : violations) msg += " " + v + ";";
      throw DatasetError(msg);
    }
    auto [it, inserted] = first_seen.emplace(t.instance_id, lineno);
    if (!inserted)
      throw DatasetError(path.string() + ": duplicate instance_id '" + t.instance_id + "' on lines " +
                         std::to_string(it->second) + " and " + std::to_string(lineno));
    ds.instances.push_back(std::move(t));
  }
  return ds;
}

inline void write_dataset(const std::filesystem::path& path, const Dataset& ds) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DatasetError("cannot write dataset " + path.string());
  for (const auto& t : ds.instances) out << nlohmann::json(t).dump() << "\n";
}

// --- Lite filter ---------------------------------------------------------

enum class LiteCriterion { C1, C2, C3, C4, C5, C6 };

inline const char* to_string(LiteCriterion c) {
  static const char* names[] = {"C1", "C2", "C3", "C4", "C5", "C6"};
  return names[static_cast<int>(c)];
}

struct FilterVerdict {
  std::string instance_id;
  bool excluded = false;
  std::vector<LiteCriterion> reasons;

  std::vector<std::string> reason_labels() const {
    std::vector<std::string> out;
    for (auto r : reasons) out.emplace_back(to_string(r));
    return out;
  }
};

inline void to_json(nlohmann::json& j, const FilterVerdict& v) {
  j = nlohmann::json{{"instance_id", v.instance_id}, {"excluded", v.excluded}, {"reasons", v.reason_labels()}};
}

/// Detection rules for the criteria the benchmark names but does not define.
/// Every C1 sub-pattern can be switched off; C6 patterns are replaceable.
struct LiteFilterOptions {
  bool detect_images = true;
  bool detect_links = true;
  bool detect_commits = true;
  bool detect_pr_refs = true;
  std::size_t min_words = 40;
  std::size_t max_files = 1;
  std::size_t max_hunks = 3;
  // Matched against lines added by the test patch.
  std::vector<std::string> error_message_patterns = {
      R"(raises\s*\([^)]*\bmatch\s*=)",
      R"(assert(Raises|Warns)Regexp?\s*\()",
      R"(\.match\s*\(\s*[rbu]?["'])",
      R"(assert\w*\s*\(.*\b(msg|message)\s*=\s*[rbu]?["'])",
      R"(str\s*\(\s*\w+(\.value)?\s*\)\s*==\s*[rbu]?["'])",
      R"(\b(excinfo|exc_info|cm|ctx|e|err|exc)(\.value|\.exception)?\.(args\[0\]|message)\s*==\s*[rbu]?["'])",
      R"(assertEqual\s*\(\s*str\s*\()",
  };
};

class LiteFilterError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline std::size_t count_words(std::string_view text) {
  std::size_t words = 0;
  bool in_word = false;
  for (unsigned char ch : text) {
    bool space = std::isspace(ch) != 0;
    if (!space && !in_word) ++words;
    in_word = !space;
  }
  return words;
}

inline bool has_external_references(const std::string& text, const LiteFilterOptions& o) {
  static const std::regex image(R"((!\[[^\]]*\]\([^)]*\))|(<img\b)|(\.(png|jpe?g|gif|svg|webp)\b))",
                                std::regex::icase);
  static const std::regex link(R"(\bhttps?://\S+)", std::regex::icase);
  static const std::regex commit(R"(\bcommits?\b[^0-9a-fA-F\n]{0,20}\b[0-9a-fA-F]{7,40}\b)", std::regex::icase);
  static const std::regex pr_ref(R"((^|[^\w&/\[])#\d+\b)");
  return (o.detect_images && std::regex_search(text, image)) || (o.detect_links && std::regex_search(text, link)) ||
         (o.detect_commits && std::regex_search(text, commit)) || (o.detect_pr_refs && std::regex_search(text, pr_ref));
}

inline bool has_error_message_checks(const UnifiedDiff& test_diff, const LiteFilterOptions& o) {
  std::vector<std::regex> patterns;
  patterns.reserve(o.error_message_patterns.size());
  for (const auto& p : o.error_message_patterns) patterns.emplace_back(p);
  for (const auto& fd : test_diff.file_diffs)
    for (const auto& h : fd.hunks)
      for (const auto& l : h.lines) {
        if (l.tag != LineTag::Add) continue;
        for (const auto& re : patterns)
          if (std::regex_search(l.text, re)) return true;
      }
  return false;
}

/// Lists every exclusion criterion the instance violates.
inline FilterVerdict lite_filter(const TaskInstance& instance, const LiteFilterOptions& options = {}) {
  if (!instance.gold_patch) throw LiteFilterError(instance.instance_id + ": gold_patch missing");
  if (instance.test_patch.empty()) throw LiteFilterError(instance.instance_id + ": test_patch missing");
  UnifiedDiff gold;
  UnifiedDiff tests;
  try {
    gold = parse_diff(*instance.gold_patch);
  } catch (const DiffError& e) {
    throw LiteFilterError(instance.instance_id + ": gold_patch unparsable: " + e.what());
  }
  try {
    tests = parse_diff(instance.test_patch);
  } catch (const DiffError& e) {
    throw LiteFilterError(instance.instance_id + ": test_patch unparsable: " + e.what());
  }

  FilterVerdict v;
  v.instance_id = instance.instance_id;
  const DiffStats stats = diff_stats(gold);
  if (has_external_references(instance.problem_statement, options)) v.reasons.push_back(LiteCriterion::C1);
  if (count_words(instance.problem_statement) < options.min_words) v.reasons.push_back(LiteCriterion::C2);
  if (stats.files_edited > options.max_files) v.reasons.push_back(LiteCriterion::C3);
  if (stats.hunk_count > options.max_hunks) v.reasons.push_back(LiteCriterion::C4);
  if (stats.creates || stats.deletes) v.reasons.push_back(LiteCriterion::C5);
  if (has_error_message_checks(tests, options)) v.reasons.push_back(LiteCriterion::C6);
  v.excluded = !v.reasons.empty();
  return v;
}

// --- subset selection ----------------------------------------------------

// Either an absolute count or a fraction num/den of the dataset.
struct SubsetSpec {
  std::variant<std::size_t, std::pair<std::uint64_t, std::uint64_t>> limit;

  static SubsetSpec count(std::size_t n) { return {n}; }
  static SubsetSpec fraction(std::uint64_t num, std::uint64_t den) { return {std::pair{num, den}}; }

  /// Accepts "100", "1/3", "0.5" or "1.0".
  static SubsetSpec parse(const std::string& text) {
    auto slash = text.find('/');
    try {
      if (slash != std::string::npos) {
        return fraction(std::stoull(text.substr(0, slash)), std::stoull(text.substr(slash + 1)));
      }
      if (text.find('.') != std::string::npos) {
        // Decimal fractions are taken exactly: "0.33" -> 33/100.
        auto dot = text.find('.');
        std::string digits = text.substr(0, dot) + text.substr(dot + 1);
        std::uint64_t den = 1;
        for (std::size_t i = dot + 1; i < text.size(); ++i) den *= 10;
        return fraction(std::stoull(digits), den);
      }
      return count(std::stoull(text));
    } catch (const std::logic_error&) {
      throw DatasetError("invalid subset spec '" + text + "'");
    }
  }

  std::size_t resolve(std::size_t dataset_size) const {
    if (auto* n = std::get_if<std::size_t>(&limit)) return *n;
    auto [num, den] = std::get<std::pair<std::uint64_t, std::uint64_t>>(limit);
    if (den == 0) throw DatasetError("subset fraction has zero denominator");
    return static_cast<std::size_t>(static_cast<std::uint64_t>(dataset_size) * num / den);
  }

  std::string to_string() const {
    if (auto* n = std::get_if<std::size_t>(&limit)) return std::to_string(*n);
    auto [num, den] = std::get<std::pair<std::uint64_t, std::uint64_t>>(limit);
    return std::to_string(num) + "/" + std::to_string(den);
  }
};

namespace detail {

// Fisher-Yates with explicit unbiased draws so results do not depend on the
// standard library's distribution implementations.
template <typename T>
void seeded_shuffle(std::vector<T>& items, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  for (std::size_t i = items.size(); i > 1; --i) {
    const std::uint64_t bound = i;
    const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() - std::numeric_limits<std::uint64_t>::max() % bound;
    std::uint64_t r;
    do {
      r = rng();
    } while (r >= limit);
    std::swap(items[i - 1], items[r % bound]);
  }
}

}  // namespace detail

/// Seeded shuffle, take the first `limit`, then sort by instance_id.
inline Dataset select_subset(const Dataset& dataset, const SubsetSpec& spec, std::uint64_t seed) {
  const std::size_t limit = spec.resolve(dataset.instances.size());
  if (limit == 0 || limit > dataset.instances.size())
    throw DatasetError("subset size " + std::to_string(limit) + " out of range for dataset of " +
                       std::to_string(dataset.instances.size()));
  std::vector<std::size_t> order(dataset.instances.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  detail::seeded_shuffle(order, seed);
  order.resize(limit);
  Dataset out;
  out.split_name = dataset.split_name;
  for (auto i : order) out.instances.push_back(dataset.instances[i]);
  std::sort(out.instances.begin(), out.instances.end(),
            [](const TaskInstance& a, const TaskInstance& b) { return a.instance_id < b.instance_id; });
  return out;
}

}  // namespace tot_repair
