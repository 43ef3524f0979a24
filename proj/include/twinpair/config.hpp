#pragma once

// Run configuration: flat key=value text with dotted keys. Defaults are the
// twin-beam parameters of the reference experiment.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <istream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "twinpair/detection.hpp"
#include "twinpair/distributions.hpp"
#include "twinpair/errors.hpp"
#include "twinpair/io.hpp"
#include "twinpair/pairing.hpp"
#include "twinpair/simulator.hpp"

namespace twinpair {

struct RunConfig {
  TwinBeamParams beam{{280.0, 0.032}, {0.009, 8.2}, {0.033, 4.7}};
  DetectorParams detector;
  CorrelationProfile profile;
  StripGeometry geometry;
  std::uint64_t frames = 100000;
  std::uint64_t seed = 1;
  std::vector<double> m_d_grid;  // empty: default grid for the geometry
  PairingModel model_variant = PairingModel::Refined;
  std::string output_dir = "out";
  std::size_t blocks = 20;
  std::size_t replicates = 200;
  unsigned threads = 1;
  std::optional<double> md0;
  std::optional<double> normalize_at;
  std::size_t smoothing = 0;

  void validate() const {
    beam.validate();
    detector.validate();
    profile.validate();
    geometry.validate();
    if (geometry.pixels() != detector.pixels)
      throw ParameterError("detector.pixels (" + std::to_string(detector.pixels) +
                           ") must equal geometry.width*geometry.height (" +
                           std::to_string(geometry.pixels()) + ")");
    if (frames < 1) throw ParameterError("run.frames must be >= 1");
    if (blocks < 1) throw ParameterError("run.blocks must be >= 1");
    if (threads < 1) throw ParameterError("run.threads must be >= 1");
    for (std::size_t k = 0; k < m_d_grid.size(); ++k) {
      if (!(m_d_grid[k] >= 0.0) || m_d_grid[k] > double(detector.pixels))
        throw ParameterError("sweep.grid value " + io::format_number(m_d_grid[k]) +
                             " outside [0, detector.pixels]");
      if (k > 0 && !(m_d_grid[k] > m_d_grid[k - 1]))
        throw ParameterError("sweep.grid must be strictly increasing");
    }
  }
};

/// Logarithmic grid snapped to lattice pixel counts; duplicates dropped.
inline std::vector<double> log_grid(double lo, double hi, std::size_t points, const StripGeometry& g) {
  if (!(lo > 0.0) || !(hi >= lo) || points < 1) throw ParameterError("invalid log grid");
  std::vector<double> out;
  for (std::size_t k = 0; k < points; ++k) {
    const double t = points == 1 ? 0.0 : double(k) / double(points - 1);
    const double m = effective_detection_area(lo * std::pow(hi / lo, t), g);
    if (m > 0.0 && (out.empty() || m > out.back())) out.push_back(m);
  }
  return out;
}

/// 24 distinct logarithmic lattice areas in [10, 3000] (capped at the largest
/// area the strip holds); in one-dimensional mode every odd length up to the
/// strip width.
inline std::vector<double> default_grid(const StripGeometry& g) {
  if (g.one_dim) {
    std::vector<double> out;
    for (std::uint32_t m = 1; m < g.width; m += 2) out.push_back(m);
    return out;
  }
  // Snapping merges neighbouring small areas; add nominal points until 24 remain.
  const double hi = std::min(3000.0, max_detection_area(g));
  std::vector<double> out;
  for (std::size_t n = 24; n < 48 && out.size() < 24; ++n) out = log_grid(10.0, hi, n, g);
  return out;
}

inline std::vector<double> effective_grid(const RunConfig& c) {
  if (c.m_d_grid.empty()) return default_grid(c.geometry);
  std::vector<double> out;
  for (double m : c.m_d_grid) {
    const double e = effective_detection_area(m, c.geometry);
    if (!out.empty() && !(e > out.back()))
      throw ParameterError("sweep.grid values " + io::format_number(m) +
                           " and its predecessor select the same detection area");
    out.push_back(e);
  }
  return out;
}

/// Grid text: comma list "10,50,290" or "log:lo:hi:points".
inline std::vector<double> parse_grid(const std::string& text, const StripGeometry& g) {
  const std::string t = io::trim(text);
  if (t.empty()) return {};
  if (t.rfind("log:", 0) == 0) {
    const auto f = io::split(t.substr(4), ':');
    if (f.size() != 3) throw ParameterError("sweep.grid: expected log:lo:hi:points");
    try {
      return log_grid(std::stod(f[0]), std::stod(f[1]), std::stoul(f[2]), g);
    } catch (const std::logic_error&) {
      throw ParameterError("sweep.grid: invalid log specification '" + t + "'");
    }
  }
  std::vector<double> out;
  for (const auto& v : io::split(t, ',')) {
    try {
      out.push_back(io::parse_double(v, 0, "grid value"));
    } catch (const FormatError&) {
      throw ParameterError("sweep.grid: invalid value '" + io::trim(v) + "'");
    }
  }
  return out;
}

inline std::string profile_kind_name(ProfileKind k) {
  switch (k) {
    case ProfileKind::Flat: return "flat";
    case ProfileKind::Gaussian1D: return "gaussian1d";
    case ProfileKind::Gaussian2D: return "gaussian2d";
  }
  return "gaussian2d";
}

inline std::string boundary_name(BoundaryPolicy b) {
  switch (b) {
    case BoundaryPolicy::Clip: return "clip";
    case BoundaryPolicy::Discard: return "discard";
    case BoundaryPolicy::Wrap: return "wrap";
  }
  return "wrap";
}

inline PairingModel parse_variant(const std::string& v) {
  if (v == "basic") return PairingModel::Basic;
  if (v == "refined") return PairingModel::Refined;
  throw ParameterError("variant must be basic or refined, got '" + v + "'");
}

namespace detail {

inline double to_double(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    const double d = std::stod(v, &used);
    if (used == v.size()) return d;
  } catch (const std::logic_error&) {
  }
  throw ParameterError(key + ": expected a number, got '" + v + "'");
}

inline std::uint64_t to_uint(const std::string& key, const std::string& v) {
  if (v.empty() || v.find_first_not_of("0123456789") != std::string::npos)
    throw ParameterError(key + ": expected a non-negative integer, got '" + v + "'");
  try {
    return std::stoull(v);
  } catch (const std::out_of_range&) {
    throw ParameterError(key + ": integer out of range");
  }
}

inline bool to_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw ParameterError(key + ": expected true or false, got '" + v + "'");
}

}  // namespace detail

/// Applies one key=value setting; unknown keys are errors.
inline void apply_setting(RunConfig& c, const std::string& key, const std::string& value) {
  using namespace detail;
  const std::map<std::string, std::function<void(const std::string&)>> setters = {
      {"beam.paired.modes", [&](auto& v) { c.beam.paired.modes = to_double(key, v); }},
      {"beam.paired.mean_per_mode", [&](auto& v) { c.beam.paired.mean_per_mode = to_double(key, v); }},
      {"beam.noise_signal.modes", [&](auto& v) { c.beam.noise_signal.modes = to_double(key, v); }},
      {"beam.noise_signal.mean_per_mode", [&](auto& v) { c.beam.noise_signal.mean_per_mode = to_double(key, v); }},
      {"beam.noise_idler.modes", [&](auto& v) { c.beam.noise_idler.modes = to_double(key, v); }},
      {"beam.noise_idler.mean_per_mode", [&](auto& v) { c.beam.noise_idler.mean_per_mode = to_double(key, v); }},
      {"detector.pixels", [&](auto& v) { c.detector.pixels = to_uint(key, v); }},
      {"detector.eta_signal", [&](auto& v) { c.detector.eta_signal = to_double(key, v); }},
      {"detector.eta_idler", [&](auto& v) { c.detector.eta_idler = to_double(key, v); }},
      {"detector.dark_signal", [&](auto& v) { c.detector.dark_signal = to_double(key, v); }},
      {"detector.dark_idler", [&](auto& v) { c.detector.dark_idler = to_double(key, v); }},
      {"profile.kind",
       [&](auto& v) {
         if (v == "gaussian2d") c.profile.kind = ProfileKind::Gaussian2D;
         else if (v == "gaussian1d") c.profile.kind = ProfileKind::Gaussian1D;
         else if (v == "flat") c.profile.kind = ProfileKind::Flat;
         else throw ParameterError(key + ": expected gaussian2d, gaussian1d or flat");
       }},
      {"profile.extent", [&](auto& v) { c.profile.extent = to_double(key, v); }},
      {"geometry.width", [&](auto& v) { c.geometry.width = std::uint32_t(to_uint(key, v)); }},
      {"geometry.height", [&](auto& v) { c.geometry.height = std::uint32_t(to_uint(key, v)); }},
      {"geometry.boundary",
       [&](auto& v) {
         if (v == "wrap") c.geometry.boundary = BoundaryPolicy::Wrap;
         else if (v == "clip") c.geometry.boundary = BoundaryPolicy::Clip;
         else if (v == "discard") c.geometry.boundary = BoundaryPolicy::Discard;
         else throw ParameterError(key + ": expected wrap, clip or discard");
       }},
      {"geometry.mapping",
       [&](auto& v) {
         if (v == "identity") c.geometry.mapping = StripMapping::Identity;
         else if (v == "mirror_x") c.geometry.mapping = StripMapping::MirrorX;
         else throw ParameterError(key + ": expected identity or mirror_x");
       }},
      {"geometry.one_dim", [&](auto& v) { c.geometry.one_dim = to_bool(key, v); }},
      {"run.frames", [&](auto& v) { c.frames = to_uint(key, v); }},
      {"run.seed", [&](auto& v) { c.seed = to_uint(key, v); }},
      {"run.blocks", [&](auto& v) { c.blocks = to_uint(key, v); }},
      {"run.threads", [&](auto& v) { c.threads = unsigned(to_uint(key, v)); }},
      {"run.output_dir", [&](auto& v) { c.output_dir = v; }},
      {"sweep.grid", [&](auto& v) { c.m_d_grid = parse_grid(v, c.geometry); }},
      {"sweep.variant", [&](auto& v) { c.model_variant = parse_variant(v); }},
      {"analysis.md0", [&](auto& v) { c.md0 = to_double(key, v); }},
      {"analysis.normalize_at", [&](auto& v) { c.normalize_at = to_double(key, v); }},
      {"analysis.replicates", [&](auto& v) { c.replicates = to_uint(key, v); }},
      {"analysis.smoothing", [&](auto& v) { c.smoothing = to_uint(key, v); }},
  };
  const auto it = setters.find(key);
  if (it == setters.end()) throw ParameterError("unknown config key '" + key + "'");
  it->second(value);
}

inline void apply_config(RunConfig& c, std::istream& is) {
  io::Metadata kv;
  try {
    kv = io::read_key_values(is);
  } catch (const FormatError& e) {
    throw ParameterError(std::string("config: ") + e.what());
  }
  // Geometry first so that log grids snap against the configured strip.
  for (const auto& [k, v] : kv)
    if (k.rfind("geometry.", 0) == 0) apply_setting(c, k, v);
  for (const auto& [k, v] : kv)
    if (k.rfind("geometry.", 0) != 0) apply_setting(c, k, v);
}

inline RunConfig parse_config(std::istream& is) {
  RunConfig c;
  apply_config(c, is);
  return c;
}

/// Every setting of a config in the key=value format it is read from.
inline io::Metadata config_entries(const RunConfig& c) {
  using io::format_number;
  std::string grid;
  for (double m : effective_grid(c)) grid += (grid.empty() ? "" : ",") + format_number(m);
  io::Metadata kv = {
      {"beam.paired.modes", format_number(c.beam.paired.modes)},
      {"beam.paired.mean_per_mode", format_number(c.beam.paired.mean_per_mode)},
      {"beam.noise_signal.modes", format_number(c.beam.noise_signal.modes)},
      {"beam.noise_signal.mean_per_mode", format_number(c.beam.noise_signal.mean_per_mode)},
      {"beam.noise_idler.modes", format_number(c.beam.noise_idler.modes)},
      {"beam.noise_idler.mean_per_mode", format_number(c.beam.noise_idler.mean_per_mode)},
      {"detector.pixels", std::to_string(c.detector.pixels)},
      {"detector.eta_signal", format_number(c.detector.eta_signal)},
      {"detector.eta_idler", format_number(c.detector.eta_idler)},
      {"detector.dark_signal", format_number(c.detector.dark_signal)},
      {"detector.dark_idler", format_number(c.detector.dark_idler)},
      {"profile.kind", profile_kind_name(c.profile.kind)},
      {"profile.extent", format_number(c.profile.extent)},
      {"geometry.width", std::to_string(c.geometry.width)},
      {"geometry.height", std::to_string(c.geometry.height)},
      {"geometry.boundary", boundary_name(c.geometry.boundary)},
      {"geometry.mapping", c.geometry.mapping == StripMapping::MirrorX ? "mirror_x" : "identity"},
      {"geometry.one_dim", c.geometry.one_dim ? "true" : "false"},
      {"run.frames", std::to_string(c.frames)},
      {"run.seed", std::to_string(c.seed)},
      {"run.blocks", std::to_string(c.blocks)},
      {"run.threads", std::to_string(c.threads)},
      {"run.output_dir", c.output_dir},
      {"sweep.grid", grid},
      {"sweep.variant", to_string(c.model_variant)},
      {"analysis.replicates", std::to_string(c.replicates)},
      {"analysis.smoothing", std::to_string(c.smoothing)},
  };
  if (c.md0) kv.emplace_back("analysis.md0", format_number(*c.md0));
  if (c.normalize_at) kv.emplace_back("analysis.normalize_at", format_number(*c.normalize_at));
  return kv;
}

}  // namespace twinpair
