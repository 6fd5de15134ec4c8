#pragma once

// Git-flavoured unified diff: parsing, strict application and summary stats.

#include <algorithm>
#include <charconv>
#include <cstddef>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace tot_repair {

enum class DiffErrc {
  EmptyDiff,
  MalformedHeader,
  MalformedHunkHeader,
  HunkArithmeticMismatch,
  HunkOrder,
  BinaryPatch,
  UnsafePath,
  TruncatedHunk,
  ContextMismatch,
  MissingFile,
  FileAlreadyExists,
};

inline const char* to_string(DiffErrc code) {
  switch (code) {
    case DiffErrc::EmptyDiff: return "EmptyDiff";
    case DiffErrc::MalformedHeader: return "MalformedHeader";
    case DiffErrc::MalformedHunkHeader: return "MalformedHunkHeader";
    case DiffErrc::HunkArithmeticMismatch: return "HunkArithmeticMismatch";
    case DiffErrc::HunkOrder: return "HunkOrder";
    case DiffErrc::BinaryPatch: return "BinaryPatch";
    case DiffErrc::UnsafePath: return "UnsafePath";
    case DiffErrc::TruncatedHunk: return "TruncatedHunk";
    case DiffErrc::ContextMismatch: return "ContextMismatch";
    case DiffErrc::MissingFile: return "MissingFile";
    case DiffErrc::FileAlreadyExists: return "FileAlreadyExists";
  }
  return "Unknown";
}

class DiffError : public std::runtime_error {
 public:
  DiffError(DiffErrc code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

  DiffErrc code() const noexcept { return code_; }

 private:
  DiffErrc code_;
};

enum class LineTag { Context, Add, Del };
enum class ChangeKind { Modify, Create, Delete };

struct HunkLine {
  LineTag tag = LineTag::Context;
  std::string text;
  // Set when followed by "\ No newline at end of file".
  bool no_newline = false;

  friend bool operator==(const HunkLine&, const HunkLine&) = default;
};

struct Hunk {
  std::size_t old_start = 0;
  std::size_t old_len = 0;
  std::size_t new_start = 0;
  std::size_t new_len = 0;
  std::string section;  // trailing text after the second "@@"
  std::vector<HunkLine> lines;
  // Only produced with ParseOptions::allow_truncated_hunks; never applicable.
  bool truncated = false;

  std::size_t old_count() const {
    return static_cast<std::size_t>(std::count_if(
        lines.begin(), lines.end(), [](const HunkLine& l) { return l.tag != LineTag::Add; }));
  }
  std::size_t new_count() const {
    return static_cast<std::size_t>(std::count_if(
        lines.begin(), lines.end(), [](const HunkLine& l) { return l.tag != LineTag::Del; }));
  }

  friend bool operator==(const Hunk&, const Hunk&) = default;
};

inline constexpr std::string_view kNullPath = "/dev/null";

struct FileDiff {
  std::string old_path;  // kNullPath for Create
  std::string new_path;  // kNullPath for Delete
  ChangeKind change_kind = ChangeKind::Modify;
  std::vector<Hunk> hunks;

  // The path the change lands on in the tree.
  const std::string& target_path() const {
    return change_kind == ChangeKind::Delete ? old_path : new_path;
  }

  friend bool operator==(const FileDiff&, const FileDiff&) = default;
};

struct UnifiedDiff {
  std::vector<FileDiff> file_diffs;

  friend bool operator==(const UnifiedDiff&, const UnifiedDiff&) = default;
};

// Repository-relative path -> file content.
using FileTree = std::map<std::string, std::string>;

struct DiffStats {
  std::size_t files_edited = 0;
  std::size_t hunk_count = 0;
  bool creates = false;
  bool deletes = false;

  friend bool operator==(const DiffStats&, const DiffStats&) = default;
};

struct ParseOptions {
  // Accept hunks that end before their declared lengths are reached, keeping
  // the declared coordinates. Useful for abbreviated illustrative diffs.
  bool allow_truncated_hunks = false;
};

struct ApplyOptions {
  // Search up to this many lines either side of the declared position when
  // context does not match. Zero means strict git-style application.
  std::size_t max_offset = 0;
};

namespace detail {

struct TextLines {
  std::vector<std::string> lines;
  bool trailing_newline = true;
};

inline TextLines split_lines(std::string_view text) {
  TextLines out;
  if (text.empty()) return out;
  std::size_t pos = 0;
  while (pos < text.size()) {
    auto nl = text.find('\n', pos);
    if (nl == std::string_view::npos) {
      out.lines.emplace_back(text.substr(pos));
      out.trailing_newline = false;
      break;
    }
    out.lines.emplace_back(text.substr(pos, nl - pos));
    pos = nl + 1;
  }
  return out;
}

inline std::string join_lines(const TextLines& t) {
  std::string out;
  for (std::size_t i = 0; i < t.lines.size(); ++i) {
    out += t.lines[i];
    if (i + 1 < t.lines.size() || t.trailing_newline) out += '\n';
  }
  return out;
}

inline bool starts_with(std::string_view s, std::string_view prefix) {
  return s.substr(0, prefix.size()) == prefix;
}

inline bool is_safe_relative_path(std::string_view path) {
  if (path.empty() || path.front() == '/') return false;
  std::size_t pos = 0;
  while (pos <= path.size()) {
    auto slash = path.find('/', pos);
    auto seg = path.substr(pos, slash == std::string_view::npos ? std::string_view::npos : slash - pos);
    if (seg.empty() || seg == "." || seg == "..") return false;
    if (slash == std::string_view::npos) break;
    pos = slash + 1;
  }
  return true;
}

// "--- a/foo.py\t2024-01-01 ..." -> "foo.py"; "/dev/null" stays as is.
inline std::string header_path(std::string_view rest, char side_prefix) {
  auto tab = rest.find('\t');
  if (tab != std::string_view::npos) rest = rest.substr(0, tab);
  while (!rest.empty() && (rest.back() == ' ' || rest.back() == '\r')) rest.remove_suffix(1);
  if (rest.size() >= 2 && rest.front() == '"' && rest.back() == '"') rest = rest.substr(1, rest.size() - 2);
  if (rest == kNullPath) return std::string(kNullPath);
  if (rest.size() > 2 && rest[0] == side_prefix && rest[1] == '/') rest.remove_prefix(2);
  return std::string(rest);
}

inline bool parse_number(std::string_view& s, std::size_t& out) {
  const char* first = s.data();
  const char* last = s.data() + s.size();
  auto [ptr, ec] = std::from_chars(first, last, out);
  if (ec != std::errc{} || ptr == first) return false;
  s.remove_prefix(static_cast<std::size_t>(ptr - first));
  return true;
}

// "@@ -a[,b] +c[,d] @@ section"
inline std::optional<Hunk> parse_hunk_header(std::string_view line) {
  Hunk h;
  if (!starts_with(line, "@@ -")) return std::nullopt;
  line.remove_prefix(4);
  if (!parse_number(line, h.old_start)) return std::nullopt;
  h.old_len = 1;
  if (!line.empty() && line.front() == ',') {
    line.remove_prefix(1);
    if (!parse_number(line, h.old_len)) return std::nullopt;
  }
  if (!starts_with(line, " +")) return std::nullopt;
  line.remove_prefix(2);
  if (!parse_number(line, h.new_start)) return std::nullopt;
  h.new_len = 1;
  if (!line.empty() && line.front() == ',') {
    line.remove_prefix(1);
    if (!parse_number(line, h.new_len)) return std::nullopt;
  }
  if (!starts_with(line, " @@")) return std::nullopt;
  line.remove_prefix(3);
  if (!line.empty() && line.front() == ' ') line.remove_prefix(1);
  h.section = std::string(line);
  return h;
}

// Paths from "diff --git a/x b/y". Only unambiguous when both halves match.
inline std::optional<std::pair<std::string, std::string>> git_header_paths(std::string_view rest) {
  if (!starts_with(rest, "a/")) return std::nullopt;
  auto mid = rest.find(" b/");
  if (mid == std::string_view::npos) return std::nullopt;
  return std::pair{std::string(rest.substr(2, mid - 2)), std::string(rest.substr(mid + 3))};
}

// 0-based index of the first old-side line; an empty old side inserts after old_start.
inline std::size_t hunk_begin(const Hunk& h) { return h.old_len == 0 ? h.old_start : h.old_start - 1; }

class DiffParser {
 public:
  DiffParser(std::string_view text, ParseOptions options)
      : lines_(split_lines(text).lines), options_(options) {}

  UnifiedDiff parse() {
    UnifiedDiff diff;
    while (pos_ < lines_.size()) {
      std::string_view line = lines_[pos_];
      if (starts_with(line, "diff --git ")) {
        diff.file_diffs.push_back(parse_git_file());
      } else if (starts_with(line, "--- ") && pos_ + 1 < lines_.size() && starts_with(lines_[pos_ + 1], "+++ ")) {
        diff.file_diffs.push_back(parse_plain_file());
      } else if (starts_with(line, "@@ ")) {
        throw DiffError(DiffErrc::MalformedHeader, "hunk at line " + std::to_string(pos_ + 1) + " has no file header");
      } else if (starts_with(line, "GIT binary patch") || starts_with(line, "Binary files ")) {
        throw DiffError(DiffErrc::BinaryPatch, "binary patch at line " + std::to_string(pos_ + 1));
      } else {
        ++pos_;  // preamble or inter-file noise
      }
    }
    if (diff.file_diffs.empty()) throw DiffError(DiffErrc::EmptyDiff, "no file headers found");
    return diff;
  }

 private:
  FileDiff parse_git_file() {
    const std::size_t header_line = pos_;
    auto paths = git_header_paths(std::string_view(lines_[pos_]).substr(11));
    ++pos_;
    bool created = false;
    bool deleted = false;
    while (pos_ < lines_.size()) {
      std::string_view line = lines_[pos_];
      if (starts_with(line, "new file mode")) {
        created = true;
      } else if (starts_with(line, "deleted file mode")) {
        deleted = true;
      } else if (starts_with(line, "GIT binary patch") || starts_with(line, "Binary files ")) {
        throw DiffError(DiffErrc::BinaryPatch, "binary patch at line " + std::to_string(pos_ + 1));
      } else if (starts_with(line, "index ") || starts_with(line, "old mode") || starts_with(line, "new mode") ||
                 starts_with(line, "similarity index") || starts_with(line, "dissimilarity index") ||
                 starts_with(line, "rename ") || starts_with(line, "copy ")) {
        // extended headers we do not act on
      } else {
        break;
      }
      ++pos_;
    }
    if (pos_ < lines_.size() && starts_with(lines_[pos_], "--- ")) {
      FileDiff fd = parse_plain_file();
      if (created && fd.change_kind != ChangeKind::Create)
        throw DiffError(DiffErrc::MalformedHeader, "new file mode without /dev/null old side at line " +
                                                       std::to_string(header_line + 1));
      if (deleted && fd.change_kind != ChangeKind::Delete)
        throw DiffError(DiffErrc::MalformedHeader, "deleted file mode without /dev/null new side at line " +
                                                       std::to_string(header_line + 1));
      return fd;
    }
    // No ---/+++ pair: only an empty-file create or delete carries meaning.
    if (!paths || paths->first != paths->second)
      throw DiffError(DiffErrc::MalformedHeader, "cannot determine path at line " + std::to_string(header_line + 1));
    if (pos_ < lines_.size() && starts_with(lines_[pos_], "@@"))
      throw DiffError(DiffErrc::MalformedHeader, "hunk without ---/+++ header at line " + std::to_string(pos_ + 1));
    FileDiff fd;
    if (created) {
      fd.change_kind = ChangeKind::Create;
      fd.old_path = std::string(kNullPath);
      fd.new_path = paths->second;
    } else if (deleted) {
      fd.change_kind = ChangeKind::Delete;
      fd.old_path = paths->first;
      fd.new_path = std::string(kNullPath);
    } else {
      throw DiffError(DiffErrc::MalformedHeader,
                      "mode-only or rename-only change at line " + std::to_string(header_line + 1));
    }
    check_path(fd.target_path(), header_line);
    return fd;
  }

  FileDiff parse_plain_file() {
    const std::size_t header_line = pos_;
    if (pos_ + 1 >= lines_.size() || !starts_with(lines_[pos_ + 1], "+++ "))
      throw DiffError(DiffErrc::MalformedHeader, "'---' without '+++' at line " + std::to_string(header_line + 1));
    FileDiff fd;
    fd.old_path = header_path(std::string_view(lines_[pos_]).substr(4), 'a');
    fd.new_path = header_path(std::string_view(lines_[pos_ + 1]).substr(4), 'b');
    pos_ += 2;
    const bool old_null = fd.old_path == kNullPath;
    const bool new_null = fd.new_path == kNullPath;
    if (old_null && new_null)
      throw DiffError(DiffErrc::MalformedHeader, "both sides are /dev/null at line " + std::to_string(header_line + 1));
    if (fd.old_path.empty() || fd.new_path.empty())
      throw DiffError(DiffErrc::MalformedHeader, "empty path at line " + std::to_string(header_line + 1));
    fd.change_kind = old_null ? ChangeKind::Create : new_null ? ChangeKind::Delete : ChangeKind::Modify;
    if (!old_null) check_path(fd.old_path, header_line);
    if (!new_null) check_path(fd.new_path, header_line);

    while (pos_ < lines_.size() && starts_with(lines_[pos_], "@@")) {
      fd.hunks.push_back(parse_hunk());
    }
    if (fd.hunks.empty())
      throw DiffError(DiffErrc::MalformedHeader, "file header without hunks at line " + std::to_string(header_line + 1));
    for (std::size_t i = 1; i < fd.hunks.size(); ++i) {
      const Hunk& prev = fd.hunks[i - 1];
      const Hunk& cur = fd.hunks[i];
      if (cur.old_start < prev.old_start || hunk_begin(cur) < hunk_begin(prev) + prev.old_len)
        throw DiffError(DiffErrc::HunkOrder, "hunks out of order or overlapping in " + fd.target_path());
    }
    if (fd.change_kind == ChangeKind::Create) {
      for (const Hunk& h : fd.hunks)
        if (h.old_len != 0) throw DiffError(DiffErrc::MalformedHunkHeader, "create with nonempty old side");
    }
    if (fd.change_kind == ChangeKind::Delete) {
      for (const Hunk& h : fd.hunks)
        if (h.new_len != 0) throw DiffError(DiffErrc::MalformedHunkHeader, "delete with nonempty new side");
    }
    return fd;
  }

  Hunk parse_hunk() {
    const std::size_t header_line = pos_;
    auto parsed = parse_hunk_header(lines_[pos_]);
    if (!parsed)
      throw DiffError(DiffErrc::MalformedHunkHeader,
                      "line " + std::to_string(pos_ + 1) + ": '" + lines_[pos_] + "'");
    Hunk h = std::move(*parsed);
    if ((h.old_start == 0 && h.old_len > 0) || (h.new_start == 0 && h.new_len > 0))
      throw DiffError(DiffErrc::MalformedHunkHeader, "line " + std::to_string(pos_ + 1) + ": zero start with nonzero length");
    ++pos_;
    std::size_t old_seen = 0;
    std::size_t new_seen = 0;
    auto complete = [&] { return old_seen == h.old_len && new_seen == h.new_len; };
    while (!complete() && pos_ < lines_.size()) {
      std::string_view line = lines_[pos_];
      LineTag tag;
      if (line.empty()) {
        tag = LineTag::Context;  // blank context line with its leading space stripped
      } else if (line.front() == ' ') {
        tag = LineTag::Context;
      } else if (line.front() == '-') {
        tag = LineTag::Del;
      } else if (line.front() == '+') {
        tag = LineTag::Add;
      } else if (line.front() == '\\') {
        mark_no_newline(h);
        ++pos_;
        continue;
      } else {
        break;
      }
      if (tag != LineTag::Add) ++old_seen;
      if (tag != LineTag::Del) ++new_seen;
      if (old_seen > h.old_len || new_seen > h.new_len) {
        throw DiffError(DiffErrc::HunkArithmeticMismatch,
                        "hunk at line " + std::to_string(header_line + 1) + " has more lines than declared");
      }
      h.lines.push_back(HunkLine{tag, std::string(line.empty() ? line : line.substr(1)), false});
      ++pos_;
    }
    if (!complete()) {
      if (!options_.allow_truncated_hunks)
        throw DiffError(DiffErrc::HunkArithmeticMismatch,
                        "hunk at line " + std::to_string(header_line + 1) + " declares -" +
                            std::to_string(h.old_len) + " +" + std::to_string(h.new_len) + " but has -" +
                            std::to_string(old_seen) + " +" + std::to_string(new_seen));
      h.truncated = true;
    }
    if (pos_ < lines_.size() && !lines_[pos_].empty() && lines_[pos_].front() == '\\') {
      mark_no_newline(h);
      ++pos_;
    }
    // A body line right after a complete hunk means the header undercounted.
    if (!h.truncated && pos_ < lines_.size()) {
      std::string_view next = lines_[pos_];
      bool next_file = starts_with(next, "--- ") && pos_ + 1 < lines_.size() && starts_with(lines_[pos_ + 1], "+++ ");
      bool signature = next == "--" || next == "-- ";
      if (!next_file && !signature && !next.empty() &&
          (next.front() == ' ' || next.front() == '+' || next.front() == '-'))
        throw DiffError(DiffErrc::HunkArithmeticMismatch,
                        "hunk at line " + std::to_string(header_line + 1) + " has more lines than declared");
    }
    return h;
  }

  void mark_no_newline(Hunk& h) {
    if (h.lines.empty())
      throw DiffError(DiffErrc::MalformedHunkHeader, "no-newline marker without a preceding line at line " +
                                                         std::to_string(pos_ + 1));
    h.lines.back().no_newline = true;
  }

  void check_path(const std::string& path, std::size_t line) {
    if (!is_safe_relative_path(path))
      throw DiffError(DiffErrc::UnsafePath, "'" + path + "' at line " + std::to_string(line + 1));
  }

  std::vector<std::string> lines_;
  ParseOptions options_;
  std::size_t pos_ = 0;
};

inline bool hunk_matches_at(const TextLines& file, const Hunk& hunk, std::size_t begin) {
  std::size_t idx = begin;
  for (const HunkLine& l : hunk.lines) {
    if (l.tag == LineTag::Add) continue;
    if (idx >= file.lines.size() || file.lines[idx] != l.text) return false;
    const bool unterminated_last = idx + 1 == file.lines.size() && !file.trailing_newline;
    if (l.no_newline != unterminated_last) return false;
    ++idx;
  }
  return true;
}

inline std::string describe_mismatch(const TextLines& file, const Hunk& hunk, std::size_t begin,
                                     const std::string& path, std::size_t hunk_index) {
  std::size_t idx = begin;
  for (const HunkLine& l : hunk.lines) {
    if (l.tag == LineTag::Add) continue;
    if (idx >= file.lines.size())
      return path + " hunk " + std::to_string(hunk_index + 1) + ": expected '" + l.text + "' at line " +
             std::to_string(idx + 1) + " past end of file";
    if (file.lines[idx] != l.text)
      return path + " hunk " + std::to_string(hunk_index + 1) + ": line " + std::to_string(idx + 1) +
             " expected '" + l.text + "' found '" + file.lines[idx] + "'";
    ++idx;
  }
  return path + " hunk " + std::to_string(hunk_index + 1) + ": end-of-file newline state differs";
}

inline std::string apply_hunks(const std::string& path, const std::string& content,
                               const std::vector<Hunk>& hunks, const ApplyOptions& options) {
  TextLines file = split_lines(content);
  TextLines out;
  out.trailing_newline = file.trailing_newline;
  std::size_t cursor = 0;  // next unconsumed line of the original
  for (std::size_t hi = 0; hi < hunks.size(); ++hi) {
    const Hunk& hunk = hunks[hi];
    if (hunk.truncated)
      throw DiffError(DiffErrc::TruncatedHunk, path + " hunk " + std::to_string(hi + 1) + " is truncated");
    std::size_t declared = hunk_begin(hunk);
    std::optional<std::size_t> found;
    for (std::size_t delta = 0; delta <= options.max_offset && !found; ++delta) {
      for (int sign : {-1, 1}) {
        if (delta == 0 && sign == 1) continue;
        if (sign < 0 && delta > declared) continue;
        std::size_t at = sign < 0 ? declared - delta : declared + delta;
        if (at < cursor || at > file.lines.size()) continue;
        if (hunk_matches_at(file, hunk, at)) {
          found = at;
          break;
        }
      }
    }
    if (!found) {
      if (declared < cursor || declared > file.lines.size())
        throw DiffError(DiffErrc::ContextMismatch, path + " hunk " + std::to_string(hi + 1) + ": position " +
                                                       std::to_string(declared + 1) + " out of range");
      throw DiffError(DiffErrc::ContextMismatch, describe_mismatch(file, hunk, declared, path, hi));
    }
    out.lines.insert(out.lines.end(), file.lines.begin() + static_cast<std::ptrdiff_t>(cursor),
                     file.lines.begin() + static_cast<std::ptrdiff_t>(*found));
    bool old_marks_eof = false;
    bool new_marks_eof = false;
    for (const HunkLine& l : hunk.lines) {
      if (l.tag != LineTag::Del) out.lines.push_back(l.text);
      if (l.no_newline && l.tag != LineTag::Add) old_marks_eof = true;
      if (l.no_newline && l.tag != LineTag::Del) new_marks_eof = true;
    }
    cursor = *found + hunk.old_count();
    if (new_marks_eof) {
      out.trailing_newline = false;
    } else if (old_marks_eof) {
      out.trailing_newline = true;
    }
  }
  out.lines.insert(out.lines.end(), file.lines.begin() + static_cast<std::ptrdiff_t>(cursor), file.lines.end());
  if (out.lines.empty()) out.trailing_newline = true;
  return join_lines(out);
}

}  // namespace detail

/// Parses git-style unified diff text. Preamble and inter-file prose are
/// skipped; everything from a file header onwards must be well formed.
inline UnifiedDiff parse_diff(std::string_view text, ParseOptions options = {}) {
  return detail::DiffParser(text, options).parse();
}

/// Applies every file diff to a copy of `tree`. Context and deleted lines must
/// match exactly; any failure throws and leaves `tree` untouched.
inline FileTree apply_diff(const FileTree& tree, const UnifiedDiff& diff, ApplyOptions options = {}) {
  FileTree result = tree;
  for (const FileDiff& fd : diff.file_diffs) {
    switch (fd.change_kind) {
      case ChangeKind::Create: {
        if (result.contains(fd.new_path)) throw DiffError(DiffErrc::FileAlreadyExists, fd.new_path);
        result[fd.new_path] = detail::apply_hunks(fd.new_path, "", fd.hunks, {});
        break;
      }
      case ChangeKind::Delete: {
        auto it = result.find(fd.old_path);
        if (it == result.end()) throw DiffError(DiffErrc::MissingFile, fd.old_path);
        std::string remaining = detail::apply_hunks(fd.old_path, it->second, fd.hunks, {});
        if (!remaining.empty())
          throw DiffError(DiffErrc::ContextMismatch, fd.old_path + ": delete does not cover the whole file");
        result.erase(it);
        break;
      }
      case ChangeKind::Modify: {
        auto it = result.find(fd.old_path);
        if (it == result.end()) throw DiffError(DiffErrc::MissingFile, fd.old_path);
        std::string patched = detail::apply_hunks(fd.old_path, it->second, fd.hunks, options);
        if (fd.new_path != fd.old_path) {
          if (result.contains(fd.new_path)) throw DiffError(DiffErrc::FileAlreadyExists, fd.new_path);
          result.erase(it);
          result[fd.new_path] = std::move(patched);
        } else {
          it->second = std::move(patched);
        }
        break;
      }
    }
  }
  return result;
}

inline DiffStats diff_stats(const UnifiedDiff& diff) {
  DiffStats s;
  s.files_edited = diff.file_diffs.size();
  for (const FileDiff& fd : diff.file_diffs) {
    s.hunk_count += fd.hunks.size();
    s.creates = s.creates || fd.change_kind == ChangeKind::Create;
    s.deletes = s.deletes || fd.change_kind == ChangeKind::Delete;
  }
  return s;
}

/// Mechanical inverse: swaps sides, coordinates and Add/Del tags.
inline UnifiedDiff invert_diff(const UnifiedDiff& diff) {
  UnifiedDiff inv;
  for (auto it = diff.file_diffs.rbegin(); it != diff.file_diffs.rend(); ++it) {
    FileDiff fd = *it;
    std::swap(fd.old_path, fd.new_path);
    if (fd.change_kind == ChangeKind::Create) fd.change_kind = ChangeKind::Delete;
    else if (fd.change_kind == ChangeKind::Delete) fd.change_kind = ChangeKind::Create;
    for (Hunk& h : fd.hunks) {
      std::swap(h.old_start, h.new_start);
      std::swap(h.old_len, h.new_len);
      for (HunkLine& l : h.lines) {
        if (l.tag == LineTag::Add) l.tag = LineTag::Del;
        else if (l.tag == LineTag::Del) l.tag = LineTag::Add;
      }
      // Keep deletions before additions within each change run, as diff tools emit them.
      std::vector<HunkLine> reordered;
      for (std::size_t i = 0; i < h.lines.size();) {
        if (h.lines[i].tag == LineTag::Context) {
          reordered.push_back(h.lines[i++]);
          continue;
        }
        std::size_t j = i;
        while (j < h.lines.size() && h.lines[j].tag != LineTag::Context) ++j;
        for (std::size_t k = i; k < j; ++k)
          if (h.lines[k].tag == LineTag::Del) reordered.push_back(h.lines[k]);
        for (std::size_t k = i; k < j; ++k)
          if (h.lines[k].tag == LineTag::Add) reordered.push_back(h.lines[k]);
        i = j;
      }
      h.lines = std::move(reordered);
    }
    inv.file_diffs.push_back(std::move(fd));
  }
  return inv;
}

/// Renders a parsed diff back to text in ---/+++ form.
inline std::string format_diff(const UnifiedDiff& diff) {
  std::string out;
  for (const FileDiff& fd : diff.file_diffs) {
    const std::string& a = fd.old_path == kNullPath ? fd.new_path : fd.old_path;
    const std::string& b = fd.new_path == kNullPath ? fd.old_path : fd.new_path;
    out += "diff --git a/" + a + " b/" + b + "\n";
    if (fd.change_kind == ChangeKind::Create) out += "new file mode 100644\n";
    if (fd.change_kind == ChangeKind::Delete) out += "deleted file mode 100644\n";
    if (fd.hunks.empty()) continue;
    out += "--- " + (fd.old_path == kNullPath ? std::string(kNullPath) : "a/" + fd.old_path) + "\n";
    out += "+++ " + (fd.new_path == kNullPath ? std::string(kNullPath) : "b/" + fd.new_path) + "\n";
    for (const Hunk& h : fd.hunks) {
      out += "@@ -" + std::to_string(h.old_start) + "," + std::to_string(h.old_len) + " +" +
             std::to_string(h.new_start) + "," + std::to_string(h.new_len) + " @@";
      if (!h.section.empty()) out += " " + h.section;
      out += "\n";
      for (const HunkLine& l : h.lines) {
        out += l.tag == LineTag::Context ? ' ' : l.tag == LineTag::Add ? '+' : '-';
        out += l.text + "\n";
        if (l.no_newline) out += "\\ No newline at end of file\n";
      }
    }
  }
  return out;
}

}  // namespace tot_repair
