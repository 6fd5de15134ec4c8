#pragma once

// Randomized agreement check against GNU diff: build a small tree, edit it,
// let `diff -u` produce the patch, and require apply_diff to reproduce the
// edited tree byte for byte.

#include <random>
#include <string>
#include <vector>

#include "support.hpp"
#include "tot_repair/diff.hpp"
#include "tot_repair/eval.hpp"

namespace test_support {

struct OracleCase {
  tot_repair::FileTree before;
  tot_repair::FileTree after;
  std::string patch;
};

struct OracleReport {
  int cases = 0;
  int agreed = 0;
  std::vector<std::string> failures;  // first few, for diagnostics
};

namespace oracle_detail {

inline std::string random_line(std::mt19937_64& rng) {
  static const std::vector<std::string> words = {"alpha", "beta", "gamma", "delta", "return x", "if y:", "pass",
                                                 "    indent", "", "x = 1", "def f():", "}", "{", "# note"};
  // Small vocabulary so repeated lines exercise context matching.
  return words[rng() % words.size()];
}

inline std::string random_file(std::mt19937_64& rng) {
  const int n = 1 + static_cast<int>(rng() % 25);
  std::string s;
  for (int i = 0; i < n; ++i) s += random_line(rng) + "\n";
  if (rng() % 8 == 0) s.pop_back();  // no trailing newline
  return s;
}

inline std::string edit_file(std::mt19937_64& rng, const std::string& content) {
  auto t = tot_repair::detail::split_lines(content);
  auto& lines = t.lines;
  const int edits = 1 + static_cast<int>(rng() % 4);
  for (int e = 0; e < edits; ++e) {
    const auto kind = rng() % 3;
    if (kind == 0 || lines.empty()) {
      lines.insert(lines.begin() + static_cast<std::ptrdiff_t>(lines.empty() ? 0 : rng() % (lines.size() + 1)),
                   random_line(rng));
    } else if (kind == 1) {
      lines.erase(lines.begin() + static_cast<std::ptrdiff_t>(rng() % lines.size()));
    } else {
      lines[rng() % lines.size()] = random_line(rng) + " changed";
    }
  }
  if (rng() % 10 == 0) t.trailing_newline = !t.trailing_newline;
  if (lines.empty()) t.trailing_newline = true;
  return tot_repair::detail::join_lines(t);
}

inline std::string run_diff(const fs::path& cwd, const std::string& old_label, const std::string& new_label,
                            const std::string& old_file, const std::string& new_file) {
  auto r = tot_repair::run_process(
      {"diff", {"-u", "--label", old_label, "--label", new_label, old_file, new_file}}, cwd, std::chrono::seconds(30));
  if (r.exit_code > 1) throw std::runtime_error("diff failed: " + r.output);
  return r.output;
}

}  // namespace oracle_detail

inline OracleCase make_oracle_case(std::mt19937_64& rng, const fs::path& scratch) {
  using namespace oracle_detail;
  OracleCase c;
  const int files = 1 + static_cast<int>(rng() % 4);
  for (int i = 0; i < files; ++i) {
    std::string name = (rng() % 2 ? "pkg/" : "") + std::string("f") + std::to_string(i) + ".txt";
    c.before[name] = random_file(rng);
  }
  c.after = c.before;
  for (auto& [path, content] : c.after)
    if (rng() % 4 != 0) content = edit_file(rng, content);
  if (rng() % 4 == 0) c.after.erase(c.after.begin());
  if (rng() % 4 == 0) c.after["new/created.txt"] = random_file(rng);

  fs::remove_all(scratch);
  fs::create_directories(scratch / "a");
  fs::create_directories(scratch / "b");
  for (const auto& [p, s] : c.before) write_text(scratch / "a" / p, s);
  for (const auto& [p, s] : c.after) write_text(scratch / "b" / p, s);

  std::set<std::string> paths;
  for (const auto& [p, _] : c.before) paths.insert(p);
  for (const auto& [p, _] : c.after) paths.insert(p);
  for (const auto& p : paths) {
    const bool in_a = c.before.contains(p), in_b = c.after.contains(p);
    if (in_a && in_b && c.before.at(p) == c.after.at(p)) continue;
    c.patch += run_diff(scratch, in_a ? "a/" + p : "/dev/null", in_b ? "b/" + p : "/dev/null",
                        in_a ? "a/" + p : "/dev/null", in_b ? "b/" + p : "/dev/null");
  }
  return c;
}

inline OracleReport run_diff_oracle(int cases, std::uint64_t seed) {
  OracleReport report;
  TempDir scratch;
  std::mt19937_64 rng(seed);
  while (report.cases < cases) {
    OracleCase c = make_oracle_case(rng, scratch.path / "case");
    if (c.patch.empty()) continue;  // every edit was a no-op
    ++report.cases;
    try {
      auto out = tot_repair::apply_diff(c.before, tot_repair::parse_diff(c.patch));
      if (out == c.after) {
        ++report.agreed;
        continue;
      }
      if (report.failures.size() < 3) report.failures.push_back("tree differs for patch:\n" + c.patch);
    } catch (const std::exception& e) {
      if (report.failures.size() < 3) report.failures.push_back(std::string(e.what()) + "\n" + c.patch);
    }
  }
  return report;
}

}  // namespace test_support
