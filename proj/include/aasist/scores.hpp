#pragma once

#include <charconv>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace aasist {

class ScoreFileError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct ScoreRow {
  std::string id;
  double score = 0.0;
  bool operator==(const ScoreRow&) const = default;
};

struct ScoreFile {
  std::vector<ScoreRow> rows;
  bool operator==(const ScoreFile&) const = default;
};

/// `id<TAB>score<LF>` with shortest round-trip formatting.
inline std::string format_scores(const ScoreFile& f) {
  std::string out;
  std::set<std::string_view> seen;
  for (const ScoreRow& r : f.rows) {
    if (r.id.empty() || r.id.find_first_of("\t\n\r") != std::string::npos) {
      throw ScoreFileError("scores: id '" + r.id + "' is empty or contains tab/newline");
    }
    if (!seen.insert(r.id).second) throw ScoreFileError("scores: duplicate id '" + r.id + "'");
    if (!std::isfinite(r.score)) throw ScoreFileError("scores: non-finite score for '" + r.id + "'");
    char buf[32];
    auto res = std::to_chars(buf, buf + sizeof buf, r.score);
    out += r.id;
    out += '\t';
    out.append(buf, res.ptr);
    out += '\n';
  }
  return out;
}

inline ScoreFile parse_scores(std::string_view text) {
  ScoreFile f;
  std::set<std::string> seen;
  std::size_t lineno = 0, pos = 0;
  while (pos < text.size()) {
    std::size_t nl = text.find('\n', pos);
    if (nl == std::string_view::npos) nl = text.size();
    std::string_view line = text.substr(pos, nl - pos);
    pos = nl + 1;
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (line.empty()) continue;
    const std::size_t tab = line.find('\t');
    if (tab == std::string_view::npos || tab == 0 || line.find('\t', tab + 1) != std::string_view::npos) {
      throw ScoreFileError("scores: line " + std::to_string(lineno) + ": expected 'id<TAB>score'");
    }
    std::string id(line.substr(0, tab));
    std::string_view num = line.substr(tab + 1);
    double v = 0.0;
    auto res = std::from_chars(num.data(), num.data() + num.size(), v);
    if (res.ec != std::errc() || res.ptr != num.data() + num.size() || !std::isfinite(v)) {
      throw ScoreFileError("scores: line " + std::to_string(lineno) + ": bad score '" + std::string(num) + "'");
    }
    if (!seen.insert(id).second) throw ScoreFileError("scores: duplicate id '" + id + "'");
    f.rows.push_back({std::move(id), v});
  }
  return f;
}

inline void write_scores(const std::filesystem::path& path, const ScoreFile& f) {
  const std::string text = format_scores(f);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ScoreFileError("scores: cannot write " + path.string());
  out << text;
  if (!out) throw ScoreFileError("scores: write failed for " + path.string());
}

inline std::string read_text_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ScoreFileError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline ScoreFile read_scores(const std::filesystem::path& path) { return parse_scores(read_text_file(path)); }

/// Protocol labels, `id<TAB>bonafide|spoof` per line.
inline std::map<std::string, bool> parse_labels(std::string_view text) {
  std::map<std::string, bool> out;  // id -> is bona fide
  std::size_t lineno = 0, pos = 0;
  while (pos < text.size()) {
    std::size_t nl = text.find('\n', pos);
    if (nl == std::string_view::npos) nl = text.size();
    std::string_view line = text.substr(pos, nl - pos);
    pos = nl + 1;
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (line.empty()) continue;
    const std::size_t tab = line.find('\t');
    if (tab == std::string_view::npos || tab == 0) {
      throw ScoreFileError("labels: line " + std::to_string(lineno) + ": expected 'id<TAB>label'");
    }
    std::string id(line.substr(0, tab));
    std::string_view label = line.substr(tab + 1);
    bool bona;
    if (label == "bonafide" || label == "bona-fide") bona = true;
    else if (label == "spoof") bona = false;
    else throw ScoreFileError("labels: line " + std::to_string(lineno) + ": unknown label '" + std::string(label) + "'");
    if (!out.emplace(id, bona).second) throw ScoreFileError("labels: duplicate id '" + id + "'");
  }
  return out;
}

inline std::map<std::string, bool> read_labels(const std::filesystem::path& path) {
  return parse_labels(read_text_file(path));
}

}  // namespace aasist
