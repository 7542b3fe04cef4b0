// micromotion: simulate, fit, convert, correlate and monitor from the command line.
//
// Exit codes: 0 success, 2 input or configuration error, 3 fit did not
// converge or is not identifiable.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "micromotion/config.hpp"
#include "micromotion/correlation.hpp"
#include "micromotion/drift.hpp"
#include "micromotion/fit.hpp"
#include "micromotion/io.hpp"
#include "micromotion/presets.hpp"
#include "micromotion/report.hpp"
#include "micromotion/simulator.hpp"

namespace fs = std::filesystem;
using namespace micromotion;
using nlohmann::json;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitInput = 2;
constexpr int kExitFit = 3;

struct InputError : Error {
  using Error::Error;
};

struct Globals {
  std::optional<std::uint64_t> seed;
  std::optional<std::string> preset;
  std::optional<std::string> output_dir;
};

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot open '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

RunConfig load_config(const std::string& path, const Globals& g) {
  RunConfig cfg = parse_run_config(slurp(path), path, g.preset);
  if (g.seed) cfg.seed = g.seed;
  return cfg;
}

fs::path output_dir(const Globals& g, const std::string& config_dir = "") {
  fs::path dir = g.output_dir ? fs::path(*g.output_dir) : fs::path(config_dir.empty() ? "." : config_dir);
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw InputError("cannot create output directory '" + dir.string() + "': " + ec.message());
  return dir;
}

void write_file(const fs::path& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw InputError("cannot write '" + path.string() + "'");
  out << content;
}

std::string dump(const json& doc) { return doc.dump(2) + "\n"; }

std::string fmt(double value) { return io::format_number(value, 6); }

Preset require_preset(const Globals& g) {
  if (!g.preset) throw InputError("a preset is required (--preset; known: surface-trap, blade-trap)");
  auto preset = find_preset(*g.preset);
  if (!preset) throw InputError("unknown preset '" + *g.preset + "'");
  return *preset;
}

std::uint64_t require_seed(const RunConfig& cfg) {
  if (!cfg.seed) throw ConfigError("a seed is required for simulation (config 'seed' or --seed)");
  return *cfg.seed;
}

// ---------------------------------------------------------------- simulate

struct SimulateArgs {
  std::string config;
};

int cmd_simulate(const SimulateArgs& args, const Globals& g) {
  RunConfig cfg = load_config(args.config, g);
  if (cfg.plan.voltages.empty()) throw ConfigError(args.config + ": missing 'plan' section");
  const std::uint64_t seed = require_seed(cfg);
  std::optional<FluorescenceConfig> fluo;
  if (cfg.plan.mode == ScanMode::fluorescence) fluo = cfg.fluorescence;
  const auto records = simulate_scan(cfg.plan, cfg.apparatus, cfg.stray, cfg.thermal, fluo, seed);

  const fs::path dir = output_dir(g, cfg.output_dir);
  std::ostringstream csv;
  io::write_scan_csv(csv, records);
  write_file(dir / "scan.csv", csv.str());
  write_file(dir / "config_echo.json", dump(config_to_json(cfg)));

  const double span = records.back().timestamp - records.front().timestamp +
                      point_duration(cfg.plan, fluo ? &*fluo : nullptr);
  std::cout << "wrote " << records.size() << " points to " << (dir / "scan.csv").string() << " (scan time "
            << fmt(span) << " s)\n";
  return kExitOk;
}

// ---------------------------------------------------------------- fit

struct FitArgs {
  std::string data;
  std::optional<std::string> config;
  std::optional<int> order;
  std::optional<std::string> mode;
  std::optional<double> pulse_time;
  bool float_tp = false;
  bool fix_tp = false;
  std::optional<double> lamb_dicke;
  std::string quadratic = "auto";
};

int cmd_fit(const FitArgs& args, const Globals& g) {
  Apparatus app;
  ThermalState thermal;
  int order = 0;
  std::optional<double> plan_pulse;
  std::string config_dir;
  if (args.config) {
    const RunConfig cfg = load_config(*args.config, g);
    app = cfg.apparatus;
    thermal = cfg.thermal;
    config_dir = cfg.output_dir;
    if (!cfg.plan.voltages.empty()) {
      order = cfg.plan.order;
      plan_pulse = cfg.plan.pulse_time;
    }
  } else {
    const Preset preset = find_preset(g.preset.value_or("surface-trap")).value_or(surface_trap_preset());
    if (g.preset && !find_preset(*g.preset)) throw InputError("unknown preset '" + *g.preset + "'");
    app = Apparatus::from_preset(preset);
    thermal = preset.thermal;
  }

  std::vector<ScanRecord> records;
  {
    std::ifstream in(args.data);
    if (!in) throw InputError("cannot open '" + args.data + "'");
    records = io::read_scan_csv(in);
  }
  const bool has_counts = records.front().photon_counts.has_value();
  ModelSpec spec;
  spec.kind = has_counts ? ModelKind::fluorescence_scan : ModelKind::raman_scan;
  if (args.mode) {
    const ScanMode mode = scan_mode_from_string(*args.mode);
    if ((mode == ScanMode::fluorescence) != has_counts)
      throw InputError("--mode " + *args.mode + " does not match the data columns");
  }
  spec.order = args.order.value_or(order);
  spec.pulse_time = args.pulse_time.value_or(plan_pulse.value_or(constants::pi / app.rabi_frequency));
  spec.float_pulse_time = args.float_tp && !args.fix_tp;
  spec.lamb_dicke = args.lamb_dicke.value_or(thermal.lamb_dicke);
  if (args.quadratic == "auto") spec.quadratic = QuadraticTerm::automatic;
  else if (args.quadratic == "float") spec.quadratic = QuadraticTerm::floated;
  else if (args.quadratic == "pin") spec.quadratic = QuadraticTerm::pinned;
  else throw InputError("--quadratic must be auto, float or pin");

  const FitResult fit = fit_scan(records, spec);
  const fs::path dir = output_dir(g, config_dir);
  write_file(dir / "fit_report.json", dump(fit_report_json(fit, records, app.trap)));

  std::cout << "c = " << fmt(fit.compensation_voltage()) << " V ± " << fmt(fit.compensation_ci95()) << " V ("
            << fmt(voltage_to_field(fit.compensation_voltage(), app.trap)) << " V/m ± "
            << fmt(voltage_to_field(fit.compensation_ci95(), app.trap)) << " V/m)\n";
  if (!fit.converged) {
    std::cerr << "warning: fit did not converge after " << fit.iterations << " iterations; report written\n";
    return kExitFit;
  }
  return kExitOk;
}

// ---------------------------------------------------------------- convert

struct ConvertArgs {
  std::optional<double> voltage;
  std::optional<double> field;
  std::optional<double> beta;
};

int cmd_convert(const ConvertArgs& args, const Globals& g) {
  const int given = args.voltage.has_value() + args.field.has_value() + args.beta.has_value();
  if (given != 1) throw InputError("give exactly one of --voltage, --field, --beta");
  const Preset preset = require_preset(g);
  const double per_field = beta_per_field(preset.trap, preset.ion, preset.laser);
  double field = 0.0;
  if (args.voltage) field = voltage_to_field(*args.voltage, preset.trap);
  if (args.field) field = *args.field;
  if (args.beta) field = *args.beta / per_field;
  const double voltage = field_to_voltage(field, preset.trap);
  const double beta = field * per_field;
  std::cout << "preset " << preset.name << "\n"
            << "voltage " << fmt(voltage) << " V\n"
            << "field " << fmt(field) << " V/m\n"
            << "beta " << fmt(beta) << "\n";
  return kExitOk;
}

// ---------------------------------------------------------------- correlate

struct CorrelateArgs {
  std::optional<std::string> histogram;
  std::optional<std::string> config;
};

int cmd_correlate(const CorrelateArgs& args, const Globals& g) {
  if (args.histogram.has_value() == args.config.has_value())
    throw InputError("give exactly one of --histogram or --config");

  std::vector<CorrelationHistogram> series;
  std::optional<TrapConfig> trap;
  std::string config_dir;
  json report;
  if (args.histogram) {
    std::ifstream in(*args.histogram);
    if (!in) throw InputError("cannot open '" + *args.histogram + "'");
    series = io::read_histogram_csv(in);
    if (g.preset) trap = require_preset(g).trap;
  } else {
    const RunConfig cfg = load_config(*args.config, g);
    if (!cfg.correlation) throw ConfigError(*args.config + ": missing 'correlation' section");
    const std::uint64_t seed = require_seed(cfg);
    const auto& setup = *cfg.correlation;
    Apparatus app = cfg.apparatus;
    app.trap = setup.trap;
    app.laser = setup.laser;
    trap = setup.trap;
    config_dir = cfg.output_dir;
    const double stray = cfg.stray.at(0.0);
    if (setup.voltages.empty()) {
      auto hist = simulate_correlation_histogram(
          setup.config, beta_from_voltage(0.0, stray, app.trap, app.ion, app.laser), seed);
      series.push_back(std::move(hist));
    } else {
      series = simulate_correlation_series(setup.voltages, setup.config, app, stray, seed);
    }
    report["config"] = config_to_json(cfg);
  }

  const fs::path dir = output_dir(g, config_dir);
  if (args.config) {
    std::ostringstream csv;
    io::write_histogram_csv(csv, series);
    write_file(dir / "histograms.csv", csv.str());
  }

  json fits = json::array();
  std::vector<VisibilityPoint> points;
  for (const auto& hist : series) {
    const SinusoidFit fit = fit_sinusoid(hist);
    json entry = sinusoid_json(fit);
    entry["total_counts"] = hist.total();
    if (hist.voltage) {
      entry["voltage_V"] = *hist.voltage;
      points.push_back({*hist.voltage, fit.signed_visibility(), fit.visibility_error});
    }
    std::cout << (hist.voltage ? "V = " + fmt(*hist.voltage) + " V: " : std::string())
              << "visibility = " << fmt(fit.visibility) << " ± " << fmt(fit.visibility_error)
              << " (phase " << fmt(fit.phase) << " rad)\n";
    fits.push_back(entry);
  }
  report["histograms"] = fits;

  if (series.size() >= 3 && points.size() == series.size()) {
    const ZeroCrossing zc = visibility_zero_crossing(points);
    report["zero_crossing"] = zero_crossing_json(zc, trap);
    std::cout << "zero crossing: " << fmt(zc.voltage) << " V ± " << fmt(zc.ci95) << " V";
    if (trap) std::cout << " (" << fmt(voltage_to_field(zc.voltage, *trap)) << " V/m ± "
                        << fmt(voltage_to_field(zc.ci95, *trap)) << " V/m)";
    std::cout << '\n';
    if (zc.extrapolated) std::cerr << "warning: signed visibility does not change sign; root is extrapolated\n";
  }
  write_file(dir / "correlation_report.json", dump(report));
  return kExitOk;
}

// ---------------------------------------------------------------- monitor

struct MonitorArgs {
  std::string config;
  std::optional<std::string> data;
  std::optional<int> repeat;
  std::optional<int> limit;
};

int cmd_monitor(const MonitorArgs& args, const Globals& g) {
  const RunConfig cfg = load_config(args.config, g);
  if (cfg.plan.voltages.empty()) throw ConfigError(args.config + ": missing 'plan' section");
  if (cfg.plan.mode != ScanMode::raman) throw ConfigError(args.config + ": monitor supports raman-mode plans only");
  const MonitorSetup setup = cfg.monitor.value_or(MonitorSetup{});
  const int repeat = args.repeat.value_or(setup.repeat);
  if (repeat < 1) throw InputError("--repeat must be >= 1");

  ModelSpec spec;
  spec.kind = ModelKind::raman_scan;
  spec.order = cfg.plan.order;
  spec.pulse_time = cfg.plan.pulse_time;
  spec.lamb_dicke = cfg.thermal.lamb_dicke;

  std::unique_ptr<ScanSource> source;
  if (args.data) {
    std::ifstream in(*args.data);
    if (!in) throw InputError("cannot open '" + *args.data + "'");
    source = std::make_unique<RecordedScanSource>(io::read_scan_csv_grouped(in));
  } else {
    const double cadence = setup.cadence > 0.0 ? setup.cadence : scan_duration(cfg.plan, nullptr);
    source = std::make_unique<SimulatedScanSource>(cfg.plan, cfg.apparatus, cfg.stray, cfg.thermal, cadence,
                                                   require_seed(cfg), args.limit);
  }
  const MonitorResult result = run_monitor(*source, spec, repeat);

  const fs::path dir = output_dir(g, cfg.output_dir);
  std::ostringstream drift_csv, waterfall_csv;
  io::write_drift_csv(drift_csv, result.series);
  io::write_waterfall_csv(waterfall_csv, result.waterfall);
  write_file(dir / "drift_series.csv", drift_csv.str());
  write_file(dir / "waterfall.csv", waterfall_csv.str());
  write_file(dir / "waterfall.json", dump(waterfall_sidecar_json(result.waterfall)));

  json summary;
  summary["requested_scans"] = result.requested;
  summary["acquired_scans"] = result.acquired;
  summary["source_exhausted"] = result.source_exhausted;
  summary["scan_rate_per_min"] = result.series.scan_rate();
  summary["warnings"] = result.warnings;
  const auto converged = result.series.converged_entries();
  summary["converged_scans"] = converged.size();

  std::cout << "scans: " << result.acquired << " of " << result.requested << " (" << converged.size()
            << " converged), " << fmt(result.series.scan_rate()) << " scans/min\n";
  for (const auto& w : result.warnings) std::cerr << "warning: " << w << '\n';
  try {
    const DriftRate rate = drift_rate(result.series);
    const double elapsed = converged.back().timestamp - converged.front().timestamp;
    const double total = rate.slope * elapsed;
    const double total_ci = rate.ci95 * elapsed;
    const double endpoint = converged.back().compensation_voltage - converged.front().compensation_voltage;
    summary["drift_rate"] = {{"slope_V_per_s", rate.slope},
                             {"ci95_V_per_s", rate.ci95},
                             {"elapsed_s", elapsed},
                             {"total_V", total},
                             {"total_ci95_V", total_ci},
                             {"total_V_per_m", voltage_to_field(total, cfg.apparatus.trap)},
                             {"total_ci95_V_per_m", voltage_to_field(total_ci, cfg.apparatus.trap)},
                             {"endpoint_difference_V", endpoint}};
    summary["alert_threshold_V"] = default_alert_threshold(result.series);
    std::cout << "drift: " << fmt(rate.slope * 60.0) << " ± " << fmt(rate.ci95 * 60.0) << " V/min; total "
              << fmt(total) << " V ± " << fmt(total_ci) << " V (" << fmt(voltage_to_field(total, cfg.apparatus.trap))
              << " V/m ± " << fmt(voltage_to_field(total_ci, cfg.apparatus.trap)) << " V/m) over "
              << fmt(elapsed) << " s\n";
  } catch (const InsufficientDataError& e) {
    summary["drift_rate"] = nullptr;
    summary["drift_rate_note"] = e.what();
    std::cout << "drift: not computed (" << e.what() << ")\n";
  }
  write_file(dir / "monitor_report.json", dump(summary));
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Micromotion compensation toolkit: Bessel-modulated scan simulation and fitting"};
  app.require_subcommand(1);
  Globals g;
  app.add_option("--seed", g.seed, "RNG seed (overrides the config)");
  app.add_option("--preset", g.preset, "trap preset: surface-trap or blade-trap");
  app.add_option("--output-dir", g.output_dir, "directory for output files");

  SimulateArgs sim;
  auto* simulate = app.add_subcommand("simulate", "simulate one voltage scan from a config file");
  simulate->add_option("config", sim.config, "run configuration (JSON)")->required();

  FitArgs fit;
  auto* fitc = app.add_subcommand("fit", "fit a scan CSV and report the compensation voltage");
  fitc->add_option("data", fit.data, "scan CSV")->required();
  fitc->add_option("--config", fit.config, "run configuration supplying the apparatus");
  fitc->add_option("--order", fit.order, "sideband order n")->check(CLI::Range(0, kMaxBesselOrder));
  fitc->add_option("--mode", fit.mode, "raman or fluorescence (checked against the data columns)");
  fitc->add_option("--pulse-time", fit.pulse_time, "commanded pulse time in s");
  fitc->add_flag("--float-tp", fit.float_tp, "fit the pulse time");
  fitc->add_flag("--fix-tp", fit.fix_tp, "hold the pulse time at its commanded value (default)");
  fitc->add_option("--lamb-dicke", fit.lamb_dicke, "Lamb-Dicke parameter");
  fitc->add_option("--quadratic", fit.quadratic, "quadratic term: auto, float or pin");

  ConvertArgs conv;
  auto* convert = app.add_subcommand("convert", "convert between voltage, field and modulation depth");
  auto* v_opt = convert->add_option("--voltage", conv.voltage, "control voltage in V");
  auto* f_opt = convert->add_option("--field", conv.field, "electric field in V/m");
  auto* b_opt = convert->add_option("--beta", conv.beta, "modulation depth");
  v_opt->excludes(f_opt)->excludes(b_opt);
  f_opt->excludes(b_opt);

  CorrelateArgs corr;
  auto* correlate = app.add_subcommand("correlate", "photon-correlation visibility and zero crossing");
  correlate->add_option("--histogram", corr.histogram, "histogram CSV (bin,phase_rad,counts[,voltage_V])");
  correlate->add_option("--config", corr.config, "simulate from the config's correlation section");

  MonitorArgs mon;
  auto* monitor = app.add_subcommand("monitor", "repeated scans and drift of the compensation voltage");
  monitor->add_option("config", mon.config, "run configuration (JSON)")->required();
  monitor->add_option("--data", mon.data, "recorded multi-scan CSV with a scan_index column");
  monitor->add_option("--repeat", mon.repeat, "number of scans (overrides the config)");
  monitor->add_option("--limit", mon.limit, "stop the simulated source after this many scans");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitInput;
  }

  try {
    if (*simulate) return cmd_simulate(sim, g);
    if (*fitc) return cmd_fit(fit, g);
    if (*convert) return cmd_convert(conv, g);
    if (*correlate) return cmd_correlate(corr, g);
    if (*monitor) return cmd_monitor(mon, g);
  } catch (const DegenerateFitError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitFit;
  } catch (const InitializationError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitFit;
  } catch (const InsufficientDataError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitFit;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitInput;
  }
  return kExitInput;
}
