#pragma once

// Matrix files (GMX1 binary, small CSV), geometry manifests, and a flat
// sectioned key = value text format used for configs and manifests.

#include <algorithm>
#include <bit>
#include <cerrno>
#include <cstdint>
#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "errors.hpp"
#include "geometry.hpp"
#include "linalg.hpp"
#include "numeric.hpp"

namespace fishmech::io {

static_assert(std::endian::native == std::endian::little, "GMX1 payloads are read in host order");

namespace fs = std::filesystem;

inline std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw IoError("cannot open '" + p.string() + "' for reading");
  std::ostringstream ss;
  ss << in.rdbuf();
  if (in.bad()) throw IoError("read failed for '" + p.string() + "'");
  return ss.str();
}

inline void write_file(const fs::path& p, const std::string& bytes) {
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open '" + p.string() + "' for writing");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed for '" + p.string() + "'");
}

// ---------------------------------------------------------------------------
// GMX1: "GMX1 <rows> <cols>\n" then rows*cols little-endian float64, row-major.

inline std::string encode_gmx(const Matrix& m) {
  std::string out = "GMX1 " + std::to_string(m.rows()) + " " + std::to_string(m.cols()) + "\n";
  const std::size_t header = out.size();
  out.resize(header + static_cast<std::size_t>(m.size()) * sizeof(double));
  char* p = out.data() + header;
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    for (Eigen::Index c = 0; c < m.cols(); ++c) {
      const double v = m(r, c);
      std::memcpy(p, &v, sizeof v);
      p += sizeof v;
    }
  }
  return out;
}

namespace detail {

/// Parses a positive decimal integer at bytes[pos], advancing pos.
inline std::size_t parse_dim(const std::string& bytes, std::size_t& pos) {
  const std::size_t start = pos;
  std::size_t v = 0;
  while (pos < bytes.size() && bytes[pos] >= '0' && bytes[pos] <= '9') {
    v = v * 10 + static_cast<std::size_t>(bytes[pos] - '0');
    if (v > (1u << 20)) throw ParseError("GMX1 dimension too large", start);
    ++pos;
  }
  if (pos == start) throw ParseError("GMX1 header: expected a dimension", start);
  if (v == 0) throw ParseError("GMX1 header: dimension must be >= 1", start);
  return v;
}

}  // namespace detail

inline Matrix decode_gmx(const std::string& bytes) {
  if (bytes.compare(0, 5, "GMX1 ") != 0) throw ParseError("missing GMX1 magic", 0);
  std::size_t pos = 5;
  const std::size_t rows = detail::parse_dim(bytes, pos);
  if (pos >= bytes.size() || bytes[pos] != ' ') throw ParseError("GMX1 header: expected a space", pos);
  ++pos;
  const std::size_t cols = detail::parse_dim(bytes, pos);
  if (pos >= bytes.size() || bytes[pos] != '\n') throw ParseError("GMX1 header: expected end of line", pos);
  ++pos;
  const std::size_t need = rows * cols * sizeof(double);
  if (bytes.size() - pos < need) {
    throw ParseError("GMX1 payload truncated: expected " + std::to_string(need) + " bytes", bytes.size());
  }
  if (bytes.size() - pos > need) throw ParseError("GMX1 payload has trailing bytes", pos + need);
  Matrix m(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
  const char* p = bytes.data() + pos;
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c) {
      double v;
      std::memcpy(&v, p, sizeof v);
      p += sizeof v;
      m(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = v;
    }
  }
  return m;
}

// ---------------------------------------------------------------------------
// CSV: one row per line, comma separated; blank lines ignored.

inline constexpr std::size_t kCsvMaxDim = 512;

inline Matrix decode_csv(const std::string& text) {
  std::vector<std::vector<double>> rows;
  std::size_t pos = 0;
  while (pos < text.size()) {
    std::size_t end = text.find('\n', pos);
    if (end == std::string::npos) end = text.size();
    std::string line = text.substr(pos, end - pos);
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.find_first_not_of(" \t") != std::string::npos) {
      std::vector<double> row;
      std::size_t i = 0;
      while (true) {
        const char* begin = line.c_str() + i;
        char* stop = nullptr;
        errno = 0;
        const double v = std::strtod(begin, &stop);
        if (stop == begin || errno == ERANGE) throw ParseError("CSV: expected a number", pos + i);
        i = static_cast<std::size_t>(stop - line.c_str());
        while (i < line.size() && (line[i] == ' ' || line[i] == '\t')) ++i;
        row.push_back(v);
        if (i == line.size()) break;
        if (line[i] != ',') throw ParseError("CSV: expected ','", pos + i);
        ++i;
      }
      if (!rows.empty() && row.size() != rows.front().size()) {
        throw ParseError("CSV: row has " + std::to_string(row.size()) + " columns, expected " +
                             std::to_string(rows.front().size()),
                         pos);
      }
      if (row.size() > kCsvMaxDim) throw ParseError("CSV import is limited to 512 columns", pos);
      rows.push_back(std::move(row));
    }
    pos = end + 1;
  }
  if (rows.empty()) throw ParseError("CSV: no data rows", 0);
  Matrix m(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(rows.front().size()));
  for (std::size_t r = 0; r < rows.size(); ++r)
    for (std::size_t c = 0; c < rows[r].size(); ++c)
      m(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = rows[r][c];
  return m;
}

/// GMX1 when the file carries the magic, CSV when it ends in .csv.
inline Matrix read_matrix(const fs::path& p) {
  const std::string bytes = read_file(p);
  if (bytes.compare(0, 4, "GMX1") == 0) return decode_gmx(bytes);
  if (p.extension() == ".csv") return decode_csv(bytes);
  return decode_gmx(bytes);
}

inline void write_matrix(const fs::path& p, const Matrix& m) { write_file(p, encode_gmx(m)); }

// ---------------------------------------------------------------------------
// Sectioned key = value files. '#' starts a comment line.

struct KvEntry {
  std::string key;
  std::string value;
  std::size_t line = 0;
};

struct KvFile {
  fs::path source;
  std::map<std::string, std::vector<KvEntry>> sections;

  const KvEntry* find(const std::string& section, const std::string& key) const {
    auto it = sections.find(section);
    if (it == sections.end()) return nullptr;
    for (const auto& e : it->second) {
      if (e.key == key) return &e;
    }
    return nullptr;
  }
};

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

inline KvFile parse_kv(const std::string& text, const fs::path& source = {}) {
  KvFile f;
  f.source = source;
  std::string section;
  std::istringstream in(text);
  std::string raw;
  std::size_t lineno = 0;
  auto where = [&](std::size_t n) { return source.string() + ":" + std::to_string(n) + ": "; };
  while (std::getline(in, raw)) {
    ++lineno;
    const std::string line = trim(raw);
    if (line.empty() || line[0] == '#') continue;
    if (line.front() == '[') {
      if (line.back() != ']') throw ConfigError(where(lineno) + "malformed section header");
      section = trim(line.substr(1, line.size() - 2));
      f.sections[section];
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError(where(lineno) + "expected 'key = value'");
    if (section.empty()) throw ConfigError(where(lineno) + "key outside any [section]");
    KvEntry e{trim(line.substr(0, eq)), trim(line.substr(eq + 1)), lineno};
    if (e.key.empty()) throw ConfigError(where(lineno) + "empty key");
    for (const auto& prev : f.sections[section]) {
      if (prev.key == e.key) throw ConfigError(where(lineno) + "duplicate key '" + e.key + "'");
    }
    f.sections[section].push_back(std::move(e));
  }
  return f;
}

inline KvFile read_kv(const fs::path& p) { return parse_kv(read_file(p), p); }

/// Rejects sections and keys outside the allowed schema.
inline void require_schema(const KvFile& f, const std::map<std::string, std::vector<std::string>>& allowed) {
  for (const auto& [section, entries] : f.sections) {
    auto it = allowed.find(section);
    if (it == allowed.end()) throw ConfigError(f.source.string() + ": unknown section [" + section + "]");
    for (const auto& e : entries) {
      if (std::find(it->second.begin(), it->second.end(), e.key) == it->second.end()) {
        throw ConfigError(f.source.string() + ":" + std::to_string(e.line) + ": unknown key '" + e.key +
                          "' in [" + section + "]");
      }
    }
  }
}

inline double parse_double(const std::string& s, const std::string& what) {
  char* end = nullptr;
  errno = 0;
  const double v = std::strtod(s.c_str(), &end);
  if (s.empty() || *end != '\0' || errno == ERANGE) throw ConfigError(what + ": expected a number, got '" + s + "'");
  return v;
}

inline std::uint64_t parse_u64(const std::string& s, const std::string& what) {
  char* end = nullptr;
  errno = 0;
  if (s.empty() || s[0] == '-') throw ConfigError(what + ": expected a non-negative integer, got '" + s + "'");
  const unsigned long long v = std::strtoull(s.c_str(), &end, 10);
  if (*end != '\0' || errno == ERANGE) throw ConfigError(what + ": expected a non-negative integer, got '" + s + "'");
  return v;
}

inline std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::string cur;
  std::istringstream in(s);
  while (std::getline(in, cur, ',')) {
    cur = trim(cur);
    if (!cur.empty()) out.push_back(cur);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Geometry manifests:
//   [geometry]
//   label = ...
//   seed = 7            (optional)
//   dim = 10
//   fisher = x.fisher.gmx
//   margin = x.margin.gmx
// Matrix paths are relative to the manifest.

inline GeometrySpec read_geometry(const fs::path& manifest) {
  const KvFile f = read_kv(manifest);
  require_schema(f, {{"geometry", {"label", "seed", "dim", "fisher", "margin"}}});
  auto get = [&](const std::string& key) -> std::string {
    const KvEntry* e = f.find("geometry", key);
    if (!e) throw ConfigError(manifest.string() + ": missing key '" + key + "' in [geometry]");
    return e->value;
  };
  const fs::path dir = manifest.parent_path();
  Matrix fm = read_matrix(dir / get("fisher"));
  Matrix sm = read_matrix(dir / get("margin"));
  const std::uint64_t dim = parse_u64(get("dim"), "dim");
  if (static_cast<std::uint64_t>(fm.rows()) != dim || static_cast<std::uint64_t>(sm.rows()) != dim) {
    throw ConfigError(manifest.string() + ": matrix dimensions do not match dim = " + std::to_string(dim));
  }
  std::optional<std::uint64_t> seed;
  if (const KvEntry* e = f.find("geometry", "seed")) seed = parse_u64(e->value, "seed");
  const KvEntry* lbl = f.find("geometry", "label");
  return GeometrySpec(PsdMatrix(std::move(fm)), PsdMatrix(std::move(sm)), lbl ? lbl->value : std::string{}, seed);
}

/// Writes <stem>.fisher.gmx, <stem>.margin.gmx and the manifest itself.
inline void write_geometry(const fs::path& manifest, const GeometrySpec& g) {
  const std::string stem = manifest.stem().string();
  const fs::path dir = manifest.parent_path();
  const std::string fname = stem + ".fisher.gmx";
  const std::string sname = stem + ".margin.gmx";
  write_matrix(dir / fname, g.fisher.matrix());
  write_matrix(dir / sname, g.margin_cov.matrix());
  std::string text = "[geometry]\n";
  text += "label = " + g.label + "\n";
  if (g.seed) text += "seed = " + std::to_string(*g.seed) + "\n";
  text += "dim = " + std::to_string(g.dim()) + "\n";
  text += "fisher = " + fname + "\n";
  text += "margin = " + sname + "\n";
  write_file(manifest, text);
}

}  // namespace fishmech::io
