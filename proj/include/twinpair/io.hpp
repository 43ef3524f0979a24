#pragma once

// Text formats: frame files, histogram CSVs, curve CSVs and key=value reports.

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <istream>
#include <map>
#include <ostream>
#include <sstream>
#include <string>
#include <string_view>
#include <tuple>
#include <utility>
#include <vector>

#include "twinpair/errors.hpp"
#include "twinpair/simulator.hpp"

namespace twinpair::io {

using Metadata = std::vector<std::pair<std::string, std::string>>;

/// Decimal with 12 significant digits; "nan" / "inf" for non-finite values.
inline std::string format_number(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.12g", v);
  return buf;
}

inline std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

inline std::vector<std::string> split(std::string_view s, char sep) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const auto pos = s.find(sep, start);
    out.emplace_back(s.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

inline double parse_double(const std::string& s, std::size_t line, const std::string& what) {
  const std::string t = trim(s);
  if (t == "nan") return std::nan("");
  if (t == "inf") return INFINITY;
  if (t == "-inf") return -INFINITY;
  try {
    std::size_t used = 0;
    const double v = std::stod(t, &used);
    if (used == t.size()) return v;
  } catch (const std::exception&) {
  }
  throw FormatError("invalid " + what + " '" + t + "'", line);
}

template <class Int>
Int parse_int(const std::string& s, std::size_t line, const std::string& what) {
  const std::string t = trim(s);
  Int v{};
  const auto [p, ec] = std::from_chars(t.data(), t.data() + t.size(), v);
  if (ec != std::errc() || p != t.data() + t.size() || t.empty())
    throw FormatError("invalid " + what + " '" + t + "'", line);
  return v;
}

inline void parse_preamble_line(const std::string& t, std::map<std::string, std::string>& meta) {
  const auto body = trim(std::string_view(t).substr(1));
  const auto eq = body.find('=');
  if (eq != std::string::npos) meta[trim(body.substr(0, eq))] = trim(body.substr(eq + 1));
}

// ---------------------------------------------------------------------------
// Frames: `frame_id;s:x,y x,y;i:x,y ...`

inline void write_frame(std::ostream& os, const Frame& f) {
  os << f.frame_id << ";s:";
  for (std::size_t k = 0; k < f.signal.size(); ++k)
    os << (k ? " " : "") << f.signal[k].x << ',' << f.signal[k].y;
  os << ";i:";
  for (std::size_t k = 0; k < f.idler.size(); ++k)
    os << (k ? " " : "") << f.idler[k].x << ',' << f.idler[k].y;
  os << '\n';
}

inline void write_frames(std::ostream& os, std::span<const Frame> frames) {
  for (const auto& f : frames) write_frame(os, f);
}

inline std::vector<Pixel> parse_pixels(const std::string& list, std::size_t line) {
  std::vector<Pixel> out;
  for (const auto& tok : split(trim(list), ' ')) {
    if (tok.empty()) continue;
    const auto xy = split(tok, ',');
    if (xy.size() != 2) throw FormatError("malformed coordinate '" + tok + "'", line);
    out.push_back({parse_int<std::int32_t>(xy[0], line, "x coordinate"),
                   parse_int<std::int32_t>(xy[1], line, "y coordinate")});
  }
  return out;
}

/// Reads frames; when a geometry is given, coordinates are checked against
/// it. `#` preamble lines of the form `# key=value` go to `meta`.
inline std::vector<Frame> read_frames(std::istream& is, const StripGeometry* geometry = nullptr,
                                      std::map<std::string, std::string>* meta = nullptr) {
  std::vector<Frame> frames;
  std::string text;
  std::size_t line = 0;
  while (std::getline(is, text)) {
    ++line;
    const std::string t = trim(text);
    if (t.empty()) continue;
    if (t[0] == '#') {
      if (meta) parse_preamble_line(t, *meta);
      continue;
    }
    const auto parts = split(t, ';');
    if (parts.size() != 3 || parts[1].rfind("s:", 0) != 0 || parts[2].rfind("i:", 0) != 0)
      throw FormatError("expected 'frame_id;s:...;i:...'", line);
    Frame f;
    f.frame_id = parse_int<std::uint64_t>(parts[0], line, "frame id");
    f.signal = parse_pixels(parts[1].substr(2), line);
    f.idler = parse_pixels(parts[2].substr(2), line);
    for (auto* strip : {&f.signal, &f.idler}) {
      if (geometry)
        for (const auto& p : *strip)
          if (!geometry->contains(p)) throw FormatError("coordinate outside the strip", line);
      auto sorted = *strip;
      std::sort(sorted.begin(), sorted.end());
      if (std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end())
        throw FormatError("two counts on one pixel", line);
      *strip = std::move(sorted);
    }
    frames.push_back(std::move(f));
  }
  return frames;
}

// ---------------------------------------------------------------------------
// Histograms: `#` preamble, then `table,block,c_p,d_s,d_i,frames`

inline void write_histogram(std::ostream& os, const HistogramSet& h, const Metadata& meta) {
  for (const auto& [k, v] : meta) os << "# " << k << '=' << v << '\n';
  os << "# m_d=" << format_number(h.m_d()) << '\n';
  os << "# blocks=" << h.blocks() << '\n';
  os << "table,block,c_p,d_s,d_i,frames\n";
  for (std::size_t b = 0; b < h.blocks(); ++b) {
    const char* names[2] = {"full", "reduced"};
    const CountCube* cubes[2] = {&h.full_block(b), &h.reduced_block(b)};
    for (int t = 0; t < 2; ++t)
      cubes[t]->for_each([&](auto p, auto s, auto i, double v) {
        os << names[t] << ',' << b << ',' << p << ',' << s << ',' << i << ','
           << format_number(v) << '\n';
      });
  }
}

struct HistogramFile {
  HistogramSet set;
  std::map<std::string, std::string> meta;
};

inline HistogramFile read_histogram(std::istream& is) {
  HistogramFile out;
  std::string text;
  std::size_t line = 0;
  bool header = false;
  std::vector<std::tuple<std::size_t, bool, std::size_t, std::size_t, std::size_t, double, std::size_t>> rows;
  while (std::getline(is, text)) {
    ++line;
    const std::string t = trim(text);
    if (t.empty()) continue;
    if (t[0] == '#') {
      parse_preamble_line(t, out.meta);
      continue;
    }
    if (!header) {
      if (t != "table,block,c_p,d_s,d_i,frames")
        throw FormatError("expected header 'table,block,c_p,d_s,d_i,frames'", line);
      header = true;
      continue;
    }
    const auto f = split(t, ',');
    if (f.size() != 6) throw FormatError("expected 6 fields", line);
    if (f[0] != "full" && f[0] != "reduced") throw FormatError("unknown table '" + f[0] + "'", line);
    const double v = parse_double(f[5], line, "frame count");
    if (!(v >= 0.0)) throw FormatError("negative frame count", line);
    rows.emplace_back(parse_int<std::size_t>(f[1], line, "block"), f[0] == "reduced",
                      parse_int<std::size_t>(f[2], line, "c_p"), parse_int<std::size_t>(f[3], line, "d_s"),
                      parse_int<std::size_t>(f[4], line, "d_i"), v, line);
  }
  if (!header) throw FormatError("missing header row", line);
  if (!out.meta.count("m_d") || !out.meta.count("blocks"))
    throw FormatError("preamble lacks m_d or blocks", line);
  const double m_d = parse_double(out.meta["m_d"], 0, "m_d");
  const auto blocks = parse_int<std::size_t>(out.meta["blocks"], 0, "blocks");
  if (blocks < 1) throw FormatError("blocks must be >= 1", 0);
  out.set = HistogramSet(m_d, blocks);
  for (const auto& [b, reduced, p, s, i, v, ln] : rows) {
    if (b >= blocks) throw FormatError("block index out of range", ln);
    (reduced ? out.set.reduced_block(b) : out.set.full_block(b)).add(p, s, i, v);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Curves: `m_d,value,stat_error`

struct Curve {
  std::vector<double> m_d, value, error;
  std::map<std::string, std::string> meta;
};

inline void write_curve(std::ostream& os, std::span<const double> m_d, std::span<const double> value,
                        std::span<const double> error, const Metadata& meta) {
  for (const auto& [k, v] : meta) os << "# " << k << '=' << v << '\n';
  os << "m_d,value,stat_error\n";
  for (std::size_t k = 0; k < m_d.size(); ++k)
    os << format_number(m_d[k]) << ',' << format_number(value[k]) << ','
       << format_number(k < error.size() ? error[k] : std::nan("")) << '\n';
}

inline Curve read_curve(std::istream& is) {
  Curve c;
  std::string text;
  std::size_t line = 0;
  bool header = false;
  while (std::getline(is, text)) {
    ++line;
    const std::string t = trim(text);
    if (t.empty()) continue;
    if (t[0] == '#') {
      parse_preamble_line(t, c.meta);
      continue;
    }
    if (!header) {
      if (t != "m_d,value,stat_error") throw FormatError("expected header 'm_d,value,stat_error'", line);
      header = true;
      continue;
    }
    const auto f = split(t, ',');
    if (f.size() != 3) throw FormatError("expected 3 fields", line);
    c.m_d.push_back(parse_double(f[0], line, "m_d"));
    c.value.push_back(parse_double(f[1], line, "value"));
    c.error.push_back(parse_double(f[2], line, "stat_error"));
  }
  if (!header) throw FormatError("missing header row", line);
  return c;
}

// ---------------------------------------------------------------------------
// key=value text (reports, manifests, configs)

inline void write_key_values(std::ostream& os, const Metadata& kv) {
  for (const auto& [k, v] : kv) os << k << '=' << v << '\n';
}

inline Metadata read_key_values(std::istream& is) {
  Metadata out;
  std::string text;
  std::size_t line = 0;
  while (std::getline(is, text)) {
    ++line;
    const std::string t = trim(text);
    if (t.empty() || t[0] == '#') continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos || eq == 0) throw FormatError("expected key=value", line);
    out.emplace_back(trim(t.substr(0, eq)), trim(t.substr(eq + 1)));
  }
  return out;
}

inline std::ifstream open_input(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open '" + path + "'", 0);
  return in;
}

}  // namespace twinpair::io
