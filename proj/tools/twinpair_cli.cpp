// twinpair: model curves, frame simulation, pairing sweeps, analysis and
// model/data comparison, all exchanged through files.

#include <CLI11.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "twinpair/twinpair.hpp"

namespace fs = std::filesystem;
using namespace twinpair;
using io::format_number;

namespace {

constexpr int kExitConfig = 2;
constexpr int kExitData = 3;
constexpr int kExitNumerical = 4;

struct Common {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::optional<std::uint64_t> frames;
  std::string md_grid;
  std::string variant;
  bool reduced = false;
  bool one_dim = false;
  std::optional<unsigned> threads;
  std::string out;
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("--config", c.config_path, "key=value config file");
  cmd->add_option("--seed", c.seed, "master seed");
  cmd->add_option("--frames", c.frames, "number of frames");
  cmd->add_option("--md-grid", c.md_grid, "detection areas: 10,50,290 or log:lo:hi:points");
  cmd->add_option("--variant", c.variant, "pairing model")->check(CLI::IsMember({"basic", "refined"}));
  cmd->add_flag("--reduced", c.reduced, "also accumulate noise-reduced histograms");
  cmd->add_flag("--one-dim", c.one_dim, "row-shaped detection areas");
  cmd->add_option("--threads", c.threads, "worker cap");
  cmd->add_option("--out", c.out, "output directory");
}

/// Config from (in order) an input file preamble, --config, then flags.
RunConfig resolve(const Common& c, const std::map<std::string, std::string>& preamble = {}) {
  RunConfig cfg;
  std::ostringstream inherited;
  for (const auto& [k, v] : preamble)
    if (k.find('.') != std::string::npos && k != "run.threads" && k != "run.output_dir")
      inherited << k << '=' << v << '\n';
  std::istringstream in(inherited.str());
  apply_config(cfg, in);
  if (!c.config_path.empty()) {
    std::ifstream f(c.config_path);
    if (!f) throw ParameterError("cannot open config '" + c.config_path + "'");
    apply_config(cfg, f);
  }
  if (c.one_dim) cfg.geometry.one_dim = true;
  if (c.seed) cfg.seed = *c.seed;
  if (c.frames) cfg.frames = *c.frames;
  if (!c.md_grid.empty()) cfg.m_d_grid = parse_grid(c.md_grid, cfg.geometry);
  if (!c.variant.empty()) cfg.model_variant = parse_variant(c.variant);
  if (c.threads) cfg.threads = *c.threads;
  if (!c.out.empty()) cfg.output_dir = c.out;
  cfg.validate();
  return cfg;
}

/// Settings that determine data products (thread count and paths excluded,
/// so outputs are identical for any worker count).
io::Metadata product_metadata(const RunConfig& cfg) {
  io::Metadata out;
  for (auto& kv : config_entries(cfg))
    if (kv.first != "run.threads" && kv.first != "run.output_dir") out.push_back(kv);
  return out;
}

void write_manifest(const RunConfig& cfg, const std::string& command,
                    const std::vector<std::string>& inputs) {
  std::ofstream os(fs::path(cfg.output_dir) / "manifest.txt");
  os << "# twinpair run manifest\n";
  io::Metadata kv = {{"command", command}, {"version", kVersion}};
  for (std::size_t k = 0; k < inputs.size(); ++k) kv.emplace_back("input." + std::to_string(k), inputs[k]);
  for (auto& e : config_entries(cfg)) kv.push_back(e);
  io::write_key_values(os, kv);
}

std::ofstream create(const fs::path& p) {
  std::ofstream os(p);
  if (!os) throw FormatError("cannot write '" + p.string() + "'");
  return os;
}

void write_curves(const fs::path& dir, const std::string& prefix, const SweepCurves& c,
                  const std::map<std::string, std::vector<double>>& errors,
                  const io::Metadata& meta, bool zero_errors) {
  for (const auto& [name, v] : c.named()) {
    std::vector<double> err(v->size(), zero_errors ? 0.0 : std::nan(""));
    if (auto it = errors.find(name); it != errors.end()) err = it->second;
    auto os = create(dir / (prefix + name + ".csv"));
    io::Metadata m = meta;
    m.emplace_back("curve", name);
    io::write_curve(os, c.m_d_grid, *v, err, m);
  }
}

int cmd_model(const Common& common) {
  const RunConfig cfg = resolve(common);
  fs::create_directories(cfg.output_dir);
  const auto grid = effective_grid(cfg);
  io::Metadata report;
  for (auto variant : {PairingModel::Basic, PairingModel::Refined}) {
    const ModelEvaluator ev(cfg.beam, cfg.detector, cfg.profile, variant);
    const auto curves = model_curves(ev, grid);
    auto meta = product_metadata(cfg);
    meta.emplace_back("source", std::string("model.") + to_string(variant));
    write_curves(cfg.output_dir, std::string("model_") + to_string(variant) + "_", curves, {}, meta, true);
    const std::string v = to_string(variant);
    try {
      report.emplace_back(v + ".m_d0", format_number(find_md0(curves.m_d_grid, curves.cov_unpaired)));
    } catch (const AnalysisError&) {
      report.emplace_back(v + ".m_d0", "nan");
    }
    const auto st = ev.evaluate(grid.front()).stats();
    if (variant == PairingModel::Refined) {
      report.emplace_back("C", format_number(st.covariance));
      report.emplace_back("R", format_number(st.sub_shot_noise));
      report.emplace_back("mean_s", format_number(st.mean_s));
      report.emplace_back("mean_i", format_number(st.mean_i));
      report.emplace_back("rel_var_s", format_number(st.rel_var_s));
      report.emplace_back("rel_var_i", format_number(st.rel_var_i));
    }
  }
  auto os = create(fs::path(cfg.output_dir) / "model_report.txt");
  io::write_key_values(os, report);
  write_manifest(cfg, "model", {});
  io::write_key_values(std::cout, report);
  return 0;
}

int cmd_simulate(const Common& common) {
  const RunConfig cfg = resolve(common);
  fs::create_directories(cfg.output_dir);
  const FrameGenerator gen(cfg.beam, cfg.detector, cfg.profile, cfg.geometry);
  const auto frames = generate_frames(gen, cfg.seed, cfg.frames, cfg.threads);
  auto os = create(fs::path(cfg.output_dir) / "frames.txt");
  for (const auto& [k, v] : product_metadata(cfg)) os << "# " << k << '=' << v << '\n';
  io::write_frames(os, frames);
  write_manifest(cfg, "simulate", {});
  std::cout << "frames=" << frames.size() << "\nfile=" << (fs::path(cfg.output_dir) / "frames.txt").string() << '\n';
  return 0;
}

int cmd_pair(const Common& common, const std::string& input) {
  std::map<std::string, std::string> preamble;
  auto in = io::open_input(input);
  StripGeometry probe;
  {
    // The geometry for coordinate checks comes from the resolved config.
    std::map<std::string, std::string> head;
    std::string line;
    while (in.peek() == '#' && std::getline(in, line)) io::parse_preamble_line(line, head);
    preamble = head;
    in.clear();
    in.seekg(0);
  }
  RunConfig cfg = resolve(common, preamble);
  probe = cfg.geometry;
  const auto frames = io::read_frames(in, &probe);
  if (frames.empty()) throw FormatError("no frames in '" + input + "'");
  cfg.frames = frames.size();
  fs::create_directories(cfg.output_dir);
  const auto grid = effective_grid(cfg);
  const auto sets = sweep_and_accumulate(frames, grid, cfg.geometry, common.reduced, cfg.blocks, cfg.threads);
  auto meta = product_metadata(cfg);
  meta.emplace_back("reduced", common.reduced ? "true" : "false");
  for (std::size_t k = 0; k < sets.size(); ++k) {
    char name[32];
    std::snprintf(name, sizeof name, "hist_%03zu.csv", k);
    auto os = create(fs::path(cfg.output_dir) / name);
    io::write_histogram(os, sets[k], meta);
  }
  write_manifest(cfg, "pair", {input});
  std::cout << "histograms=" << sets.size() << "\nframes=" << frames.size() << '\n';
  return 0;
}

std::vector<std::string> expand_inputs(const std::vector<std::string>& inputs) {
  std::vector<std::string> out;
  for (const auto& p : inputs) {
    if (fs::is_directory(p)) {
      std::vector<std::string> found;
      for (const auto& e : fs::directory_iterator(p))
        if (e.path().filename().string().rfind("hist_", 0) == 0 && e.path().extension() == ".csv")
          found.push_back(e.path().string());
      std::sort(found.begin(), found.end());
      out.insert(out.end(), found.begin(), found.end());
    } else {
      out.push_back(p);
    }
  }
  if (out.empty()) throw FormatError("no histogram files given");
  return out;
}

int cmd_analyze(const Common& common, const std::vector<std::string>& inputs) {
  const auto files = expand_inputs(inputs);
  std::vector<io::HistogramFile> hist;
  for (const auto& f : files) {
    auto in = io::open_input(f);
    try {
      hist.push_back(io::read_histogram(in));
    } catch (const FormatError& e) {
      throw FormatError(f + ": " + e.what());
    }
  }
  std::sort(hist.begin(), hist.end(), [](const auto& a, const auto& b) { return a.set.m_d() < b.set.m_d(); });
  const RunConfig cfg = resolve(common, hist.front().meta);
  fs::create_directories(cfg.output_dir);

  std::vector<HistogramSet> sets;
  for (auto& h : hist) sets.push_back(std::move(h.set));
  AnalysisOptions opt;
  opt.pixels = cfg.detector.pixels;
  opt.model = cfg.model_variant;
  opt.kind = cfg.profile.kind;
  opt.md0 = cfg.md0;
  opt.normalize_at = cfg.normalize_at;
  opt.smoothing = cfg.smoothing;
  opt.replicates = cfg.replicates;
  opt.seed = cfg.seed;
  const auto rep = analyze(sets, opt);

  auto meta = product_metadata(cfg);
  meta.emplace_back("source", "analysis");
  write_curves(cfg.output_dir, "curve_", rep.value.curves, rep.curve_errors, meta, false);
  const auto& grid = rep.value.curves.m_d_grid;
  auto err = [&](const std::string& k) {
    auto it = rep.curve_errors.find(k);
    return it == rep.curve_errors.end() ? std::vector<double>(grid.size(), std::nan("")) : it->second;
  };
  {
    auto os = create(fs::path(cfg.output_dir) / "curve_genuine_normalized.csv");
    io::write_curve(os, grid, rep.value.genuine_normalized, err("genuine_normalized"), meta);
  }
  {
    auto os = create(fs::path(cfg.output_dir) / "curve_profile.csv");
    io::write_curve(os, grid, rep.value.profile.t_app, err("profile"), meta);
  }

  io::Metadata report;
  for (const auto& key : {"m_c", "m_d0", "eta_s0", "eta_i0", "eta_s_reg_max", "eta_i_reg_max", "C", "R",
                          "mean_s", "mean_i", "fit_residual", "profile_integral"}) {
    report.emplace_back(key, format_number(rep.value.scalars.at(key)));
    auto it = rep.scalar_errors.find(key);
    report.emplace_back(std::string(key) + "_err", format_number(it == rep.scalar_errors.end() ? std::nan("") : it->second));
  }
  report.emplace_back("normalize_at", format_number(rep.value.normalize_at));
  report.emplace_back("genuine_decreasing_at_norm", rep.value.genuine_decreasing_at_norm ? "true" : "false");
  report.emplace_back("variant", to_string(cfg.model_variant));
  report.emplace_back("frames", format_number(sets.front().frames()));
  report.emplace_back("histograms", std::to_string(sets.size()));
  report.emplace_back("replicates_used", std::to_string(rep.replicates_used));
  report.emplace_back("replicates_failed", std::to_string(rep.replicates_failed));
  auto os = create(fs::path(cfg.output_dir) / "report.txt");
  io::write_key_values(os, report);
  write_manifest(cfg, "analyze", files);
  if (rep.value.genuine_decreasing_at_norm)
    std::cerr << "warning: genuine-pair curve decreases at the normalization extent\n";
  io::write_key_values(std::cout, report);
  return 0;
}

int cmd_compare(const std::string& model_path, const std::string& data_path, const std::string& out) {
  auto a_in = io::open_input(model_path);
  auto b_in = io::open_input(data_path);
  const auto a = io::read_curve(a_in);
  const auto b = io::read_curve(b_in);
  if (a.m_d.size() != b.m_d.size())
    throw AnalysisError("curve grids differ in length; resampling is not supported");
  for (std::size_t k = 0; k < a.m_d.size(); ++k)
    if (std::fabs(a.m_d[k] - b.m_d[k]) > 1e-9 * std::max(1.0, std::fabs(a.m_d[k])))
      throw AnalysisError("curve grids differ at m_d=" + format_number(a.m_d[k]) +
                          "; resampling is not supported");
  double max_abs = 0.0, max_rel = 0.0, max_z = 0.0;
  std::size_t z_points = 0;
  for (std::size_t k = 0; k < a.m_d.size(); ++k) {
    if (!std::isfinite(a.value[k]) || !std::isfinite(b.value[k])) continue;
    const double d = std::fabs(a.value[k] - b.value[k]);
    max_abs = std::max(max_abs, d);
    if (a.value[k] != 0.0) max_rel = std::max(max_rel, d / std::fabs(a.value[k]));
    else if (d > 0.0) max_rel = INFINITY;
    double var = 0.0;
    for (double e : {a.error[k], b.error[k]})
      if (std::isfinite(e)) var += e * e;
    if (var > 0.0) {
      max_z = std::max(max_z, d / std::sqrt(var));
      ++z_points;
    } else if (d > 0.0) {
      max_z = INFINITY;
    }
  }
  io::Metadata report = {{"points", std::to_string(a.m_d.size())},
                         {"max_abs_deviation", format_number(max_abs)},
                         {"max_rel_deviation", format_number(max_rel)},
                         {"max_abs_z", format_number(max_z)},
                         {"z_points", std::to_string(z_points)}};
  if (!out.empty()) {
    auto os = create(out);
    io::write_key_values(os, report);
  }
  io::write_key_values(std::cout, report);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"twinpair: photon-pair counting model, simulation and analysis"};
  app.require_subcommand(1);
  Common common;
  std::vector<std::string> inputs;
  std::string frames_file, model_curve, data_curve, compare_out;

  auto* model = app.add_subcommand("model", "analytic curves for both pairing models");
  add_common(model, common);
  auto* simulate = app.add_subcommand("simulate", "Monte Carlo frames");
  add_common(simulate, common);
  auto* pair = app.add_subcommand("pair", "pairing sweep over a frame file");
  add_common(pair, common);
  pair->add_option("frames_file", frames_file, "frame file")->required();
  auto* analyze_cmd = app.add_subcommand("analyze", "analysis of histogram files");
  add_common(analyze_cmd, common);
  analyze_cmd->add_option("histograms", inputs, "histogram CSVs or directories")->required();
  auto* compare = app.add_subcommand("compare", "deviations between two curve CSVs");
  compare->add_option("model_curve", model_curve, "reference curve CSV")->required();
  compare->add_option("data_curve", data_curve, "empirical curve CSV")->required();
  compare->add_option("--out", compare_out, "write the deviation report here");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitConfig;
  }

  try {
    if (model->parsed()) return cmd_model(common);
    if (simulate->parsed()) return cmd_simulate(common);
    if (pair->parsed()) return cmd_pair(common, frames_file);
    if (analyze_cmd->parsed()) return cmd_analyze(common, inputs);
    if (compare->parsed()) return cmd_compare(model_curve, data_curve, compare_out);
  } catch (const ParameterError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const FormatError& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return kExitData;
  } catch (const AnalysisError& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return kExitData;
  } catch (const TruncationError& e) {
    std::cerr << "numerical error: " << e.what() << " (try n_max >= " << e.suggested_n_max() << ")\n";
    return kExitNumerical;
  } catch (const NumericalError& e) {
    std::cerr << "numerical error: " << e.what() << '\n';
    return kExitNumerical;
  } catch (const fs::filesystem_error& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return kExitData;
  }
  return kExitConfig;
}
