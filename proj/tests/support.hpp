#pragma once

#include <filesystem>
#include <fstream>
#include <random>
#include <set>
#include <sstream>
#include <string>

#include "tot_repair/backend.hpp"
#include "tot_repair/dataset.hpp"
#include "tot_repair/eval.hpp"
#include "tot_repair/runner.hpp"

namespace test_support {

namespace fs = std::filesystem;

inline fs::path fixture_dir() { return TOT_FIXTURE_DIR; }
inline fs::path fixture_dataset() { return fixture_dir() / "dataset.jsonl"; }
inline fs::path fixture_repos() { return fixture_dir() / "repos"; }

inline std::string read_text(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void write_text(const fs::path& p, const std::string& s) {
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  std::ofstream(p, std::ios::binary | std::ios::trunc) << s;
}

inline std::string variant_patch(const std::string& id, const std::string& name) {
  return read_text(fixture_repos() / id / "variants" / (name + ".diff"));
}

/// Temporary directory removed on scope exit.
struct TempDir {
  fs::path path = tot_repair::detail::unique_temp_dir("tot-repair-test");
  ~TempDir() {
    std::error_code ec;
    fs::remove_all(path, ec);
  }
  fs::path operator/(const std::string& s) const { return path / s; }
};

// The example diff shown inside the patch prompt. The hunk header declares
// 27/35 lines while only the first few are reproduced.
inline const std::string kPromptExampleDiff =
    "diff --git a/file.py b/file.py\n"
    "--- a/file.py\n"
    "+++ b/file.py\n"
    "@@ -1,27 +1,35 @@\n"
    " def euclidean(a, b):\n"
    "-    while b:\n"
    "-        a, b = b, a % b\n"
    "-    return a\n"
    "+    if b == 0:\n"
    "+        return a\n"
    "+    return euclidean(b, a % b)\n";

inline std::string fenced(const std::string& patch) { return "Patch:\n```diff\n" + patch + "```\n"; }

/// Sequence script for the default ToT shape (n plans, v votes, k patches,
/// s scores each) where patch `best` receives the top score.
inline tot_repair::Script tot_script(const std::string& winning_patch, const std::string& other_patch, int n = 5,
                                     int v = 5, int k = 5, int s = 1, int best = 4) {
  tot_repair::Script script;
  for (int i = 0; i < n; ++i) script.responses.push_back("Plan:\nplan number " + std::to_string(i + 1));
  for (int i = 0; i < v; ++i) script.responses.push_back("Choice 1 looks right.\nThe best choice is 1");
  for (int i = 0; i < k; ++i) script.responses.push_back(fenced(i == best ? winning_patch : other_patch));
  for (int i = 0; i < k; ++i)
    for (int j = 0; j < s; ++j)
      script.responses.push_back("Therefore the correctness score is " + std::string(i == best ? "9" : "3"));
  return script;
}

/// One script per fixture instance whose selected patch is variant `winner`.
inline tot_repair::ScriptBook fixture_book(const std::string& winner, tot_repair::Mode mode = tot_repair::Mode::ToT) {
  tot_repair::ScriptBook book;
  for (const auto& t : tot_repair::load_dataset(fixture_dataset()).instances) {
    const auto win = variant_patch(t.instance_id, winner);
    if (mode == tot_repair::Mode::IO) {
      tot_repair::Script s;
      s.responses = {fenced(win)};
      book.per_instance[t.instance_id] = s;
    } else {
      book.per_instance[t.instance_id] = tot_script(win, variant_patch(t.instance_id, "wrong"));
    }
  }
  return book;
}

inline tot_repair::RunManifest fixture_run(const fs::path& book, const fs::path& out,
                                           tot_repair::Mode mode = tot_repair::Mode::ToT, int jobs = 2) {
  tot_repair::RunManifest m;
  m.dataset = fixture_dataset().string();
  m.mode = mode;
  m.backend.script = book.string();
  m.out = out.string();
  m.jobs = jobs;
  return m;
}

inline void write_book(const fs::path& p, const tot_repair::ScriptBook& b) { write_text(p, nlohmann::json(b).dump(2)); }

}  // namespace test_support
