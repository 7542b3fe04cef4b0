#pragma once

// Long-term monitoring of the compensation voltage: repeated scans are
// fitted one after another, producing a time series of fitted nulls and a
// waterfall of the raw measured profiles.

#include <algorithm>
#include <cmath>
#include <future>
#include <optional>
#include <string>
#include <vector>

#include "micromotion/errors.hpp"
#include "micromotion/fit.hpp"
#include "micromotion/levenberg_marquardt.hpp"
#include "micromotion/simulator.hpp"

namespace micromotion {

struct DriftEntry {
  double timestamp = 0.0;  // s, mean acquisition time of the scan
  double compensation_voltage = 0.0;
  double ci95 = 0.0;
  bool converged = false;
};

/// Append-only, time-ordered series of fitted compensation voltages.
class DriftSeries {
 public:
  void append(const DriftEntry& entry) {
    if (!entries_.empty() && !(entry.timestamp > entries_.back().timestamp))
      throw DataError("drift series: timestamps must be strictly increasing");
    entries_.push_back(entry);
  }

  const std::vector<DriftEntry>& entries() const { return entries_; }
  std::size_t size() const { return entries_.size(); }
  bool empty() const { return entries_.empty(); }

  double scan_rate() const { return scan_rate_; }  // scans per minute
  void set_scan_rate(double rate) {
    if (!(rate > 0.0)) throw DataError("drift series: scan_rate must be > 0");
    scan_rate_ = rate;
  }

  std::vector<DriftEntry> converged_entries() const {
    std::vector<DriftEntry> out;
    std::copy_if(entries_.begin(), entries_.end(), std::back_inserter(out),
                 [](const DriftEntry& e) { return e.converged; });
    return out;
  }

 private:
  std::vector<DriftEntry> entries_;
  double scan_rate_ = 1.0;
};

/// Raw measured success fractions, one row per scan.
struct WaterfallFrame {
  std::vector<double> voltages;
  std::vector<std::vector<double>> probabilities;  // [scan][voltage]
  std::vector<double> timestamps;                  // scan start, s
};

/// Supplier of successive scans.
class ScanSource {
 public:
  virtual ~ScanSource() = default;
  virtual std::optional<TimedScan> next() = 0;
};

/// Scans generated on demand from the simulator, scan i starting at i * cadence.
class SimulatedScanSource : public ScanSource {
 public:
  SimulatedScanSource(ScanPlan plan, Apparatus apparatus, StrayFieldModel stray, ThermalState thermal,
                      double cadence, std::uint64_t seed, std::optional<int> limit = std::nullopt)
      : plan_(std::move(plan)),
        apparatus_(std::move(apparatus)),
        stray_(stray),
        thermal_(thermal),
        cadence_(cadence),
        seed_(seed),
        limit_(limit) {
    if (plan_.mode != ScanMode::raman) throw ConfigError("monitor: only raman-mode scans are supported");
    const double duration = scan_duration(plan_, nullptr);
    if (!(cadence_ >= duration * (1.0 - 1e-12)))
      throw ConfigError("monitor: cadence shorter than one scan (" + std::to_string(duration) + " s)");
  }

  std::optional<TimedScan> next() override {
    if (limit_ && index_ >= *limit_) return std::nullopt;
    const double start = index_ * cadence_;
    TimedScan scan{start, simulate_scan(plan_, apparatus_, stray_, thermal_, std::nullopt, seed_, start,
                                        static_cast<std::uint64_t>(index_))};
    ++index_;
    return scan;
  }

 private:
  ScanPlan plan_;
  Apparatus apparatus_;
  StrayFieldModel stray_;
  ThermalState thermal_;
  double cadence_;
  std::uint64_t seed_;
  std::optional<int> limit_;
  int index_ = 0;
};

/// Replays previously recorded scans in order.
class RecordedScanSource : public ScanSource {
 public:
  explicit RecordedScanSource(std::vector<TimedScan> scans) : scans_(std::move(scans)) {}

  std::optional<TimedScan> next() override {
    if (index_ >= scans_.size()) return std::nullopt;
    return scans_[index_++];
  }

 private:
  std::vector<TimedScan> scans_;
  std::size_t index_ = 0;
};

struct MonitorResult {
  DriftSeries series;
  WaterfallFrame waterfall;
  std::vector<FitResult> fits;  // one per acquired scan; failures are marked non-converged
  int requested = 0;
  int acquired = 0;
  bool source_exhausted = false;
  std::vector<std::string> warnings;
};

namespace detail {

inline double mean_timestamp(const std::vector<ScanRecord>& records) {
  double sum = 0.0;
  for (const auto& r : records) sum += r.timestamp;
  return sum / static_cast<double>(records.size());
}

}  // namespace detail

/// Fits `repeat` scans from `source`. Each fit starts from the previous
/// converged result and falls back to the data-driven guess if that fails.
/// Acquisition of scan i+1 overlaps the fit of scan i.
inline MonitorResult run_monitor(ScanSource& source, const ModelSpec& spec, int repeat) {
  if (repeat < 1) throw ConfigError("monitor: repeat must be >= 1");
  if (spec.kind != ModelKind::raman_scan) throw ConfigError("monitor: only raman_scan models are supported");

  MonitorResult out;
  out.requested = repeat;
  std::optional<FitResult> previous;
  double last_scan_span = 0.0;

  std::optional<TimedScan> current = source.next();
  for (int i = 0; i < repeat; ++i) {
    if (!current) {
      out.source_exhausted = true;
      out.warnings.push_back("source exhausted after " + std::to_string(i) + " of " + std::to_string(repeat) +
                             " scans");
      break;
    }
    std::future<std::optional<TimedScan>> upcoming;
    if (i + 1 < repeat) upcoming = std::async(std::launch::async, [&source] { return source.next(); });

    const TimedScan scan = std::move(*current);
    ++out.acquired;
    if (scan.records.size() >= 2) {
      const auto [lo, hi] = std::minmax_element(
          scan.records.begin(), scan.records.end(),
          [](const ScanRecord& l, const ScanRecord& r) { return l.timestamp < r.timestamp; });
      const double n = static_cast<double>(scan.records.size());
      last_scan_span = (hi->timestamp - lo->timestamp) * n / (n - 1.0);
    }

    std::vector<double> grid;
    std::vector<double> fractions;
    {
      std::vector<ScanRecord> sorted = scan.records;
      std::stable_sort(sorted.begin(), sorted.end(),
                       [](const ScanRecord& l, const ScanRecord& r) { return l.voltage < r.voltage; });
      for (const auto& r : sorted) {
        if (!r.successes) throw DataError("monitor: scan records lack successes");
        grid.push_back(r.voltage);
        fractions.push_back(r.fraction());
      }
    }
    if (out.waterfall.voltages.empty()) {
      out.waterfall.voltages = grid;
    } else if (grid != out.waterfall.voltages) {
      throw DataError("monitor: scan " + std::to_string(i) + " uses a different voltage grid");
    }
    out.waterfall.probabilities.push_back(fractions);
    out.waterfall.timestamps.push_back(scan.timestamp);

    FitResult fit;
    bool have_fit = false;
    if (previous) {
      try {
        ParamHints warm = ParamHints::from(previous->params);
        warm.t_p = std::nullopt;
        fit = fit_bessel_scan(scan.records, spec, warm);
        have_fit = fit.converged;
      } catch (const Error&) {
        have_fit = false;
      }
    }
    if (!have_fit) {
      try {
        fit = fit_bessel_scan(scan.records, spec);
        have_fit = true;
      } catch (const Error& e) {
        out.warnings.push_back("scan " + std::to_string(i) + ": " + e.what());
        fit = FitResult{};
        fit.spec = spec;
        fit.converged = false;
        fit.params.c = std::numeric_limits<double>::quiet_NaN();
        fit.ci95.c = std::numeric_limits<double>::quiet_NaN();
      }
    }
    if (fit.converged) previous = fit;

    out.series.append({detail::mean_timestamp(scan.records), fit.params.c, fit.ci95.c, fit.converged});
    out.fits.push_back(std::move(fit));

    if (upcoming.valid()) current = upcoming.get();
    else current.reset();
  }

  const auto& entries = out.series.entries();
  if (entries.size() >= 2) {
    out.series.set_scan_rate(60.0 * static_cast<double>(entries.size() - 1) /
                             (entries.back().timestamp - entries.front().timestamp));
  } else if (entries.size() == 1 && last_scan_span > 0.0) {
    out.series.set_scan_rate(60.0 / last_scan_span);
  }
  return out;
}

struct DriftRate {
  double slope = 0.0;  // V/s
  double ci95 = 0.0;   // V/s
  double intercept = 0.0;
};

/// Weighted straight line through the converged entries, weights 1/ci95^2.
inline DriftRate drift_rate(const DriftSeries& series) {
  const auto entries = series.converged_entries();
  if (entries.size() < 3) throw InsufficientDataError("drift_rate: need at least 3 converged entries");
  bool weighted = true;
  for (const auto& e : entries)
    if (!(e.ci95 > 0.0) || !std::isfinite(e.ci95)) weighted = false;

  double sw = 0.0, sx = 0.0, sy = 0.0, sxx = 0.0, sxy = 0.0;
  // Centre time for conditioning.
  double t0 = 0.0;
  for (const auto& e : entries) t0 += e.timestamp;
  t0 /= static_cast<double>(entries.size());
  for (const auto& e : entries) {
    const double w = weighted ? 1.0 / (e.ci95 * e.ci95) : 1.0;
    const double x = e.timestamp - t0;
    sw += w;
    sx += w * x;
    sy += w * e.compensation_voltage;
    sxx += w * x * x;
    sxy += w * x * e.compensation_voltage;
  }
  const double det = sw * sxx - sx * sx;
  if (!(det > 0.0)) throw InsufficientDataError("drift_rate: timestamps do not span an interval");
  DriftRate out;
  out.slope = (sw * sxy - sx * sy) / det;
  const double mean_level = (sxx * sy - sx * sxy) / det;
  out.intercept = mean_level - out.slope * t0;

  double chi2 = 0.0;
  for (const auto& e : entries) {
    const double w = weighted ? 1.0 / (e.ci95 * e.ci95) : 1.0;
    const double r = e.compensation_voltage - (mean_level + out.slope * (e.timestamp - t0));
    chi2 += w * r * r;
  }
  const int dof = static_cast<int>(entries.size()) - 2;
  out.ci95 = t_quantile(dof) * std::sqrt(chi2 / dof * sw / det);
  return out;
}

/// Default alert threshold: three times the median ci95 of the converged entries.
inline double default_alert_threshold(const DriftSeries& series) {
  std::vector<double> cis;
  for (const auto& e : series.converged_entries()) cis.push_back(e.ci95);
  if (cis.empty()) throw InsufficientDataError("alert threshold: no converged entries");
  std::sort(cis.begin(), cis.end());
  const std::size_t n = cis.size();
  const double median = n % 2 == 1 ? cis[n / 2] : 0.5 * (cis[n / 2 - 1] + cis[n / 2]);
  return 3.0 * median;
}

/// |c_latest - c_reference| > threshold for the newest converged entry.
inline bool drift_alert(const DriftSeries& series, double reference_voltage, double threshold) {
  const auto entries = series.converged_entries();
  if (entries.empty()) return false;
  return std::abs(entries.back().compensation_voltage - reference_voltage) > threshold;
}

}  // namespace micromotion
