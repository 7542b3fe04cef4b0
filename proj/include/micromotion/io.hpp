#pragma once

// CSV readers and writers for scan records, correlation histograms, drift
// series and waterfall matrices. Every file starts with a header row.

#include <cstdio>
#include <istream>
#include <map>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "micromotion/drift.hpp"
#include "micromotion/errors.hpp"
#include "micromotion/simulator.hpp"

namespace micromotion::io {

/// Shortest-looking fixed representation used in every text output.
inline std::string format_number(double value, int precision = 12) {
  char buffer[64];
  std::snprintf(buffer, sizeof buffer, "%.*g", precision, value);
  return buffer;
}

namespace detail {

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> cells;
  std::string cell;
  std::istringstream in(line);
  while (std::getline(in, cell, ',')) {
    const auto first = cell.find_first_not_of(" \t\r");
    const auto last = cell.find_last_not_of(" \t\r");
    cells.push_back(first == std::string::npos ? "" : cell.substr(first, last - first + 1));
  }
  if (!line.empty() && line.back() == ',') cells.emplace_back();
  return cells;
}

inline bool blank(const std::string& line) { return line.find_first_not_of(" \t\r") == std::string::npos; }

struct CsvTable {
  std::map<std::string, std::size_t> columns;
  std::vector<std::vector<std::string>> rows;
  std::vector<int> line_numbers;

  std::optional<std::size_t> find(const std::string& name) const {
    const auto it = columns.find(name);
    if (it == columns.end()) return std::nullopt;
    return it->second;
  }
  std::size_t require(const std::string& name, const std::string& what) const {
    if (auto col = find(name)) return *col;
    throw DataError(what + ": missing required column '" + name + "'");
  }
};

inline CsvTable read_table(std::istream& in, const std::string& what) {
  CsvTable table;
  std::string line;
  int line_no = 0;
  bool have_header = false;
  while (std::getline(in, line)) {
    ++line_no;
    if (blank(line) || line[0] == '#') continue;
    const auto cells = split_csv_line(line);
    if (!have_header) {
      for (std::size_t i = 0; i < cells.size(); ++i) table.columns[cells[i]] = i;
      have_header = true;
      continue;
    }
    if (cells.size() != table.columns.size())
      throw DataError(what + ": line " + std::to_string(line_no) + ": expected " +
                      std::to_string(table.columns.size()) + " fields, found " + std::to_string(cells.size()));
    table.rows.push_back(cells);
    table.line_numbers.push_back(line_no);
  }
  if (!have_header) throw DataError(what + ": empty file (header row required)");
  return table;
}

inline double parse_double(const std::string& cell, int line, const std::string& what) {
  try {
    std::size_t used = 0;
    const double v = std::stod(cell, &used);
    if (used != cell.size()) throw std::invalid_argument(cell);
    return v;
  } catch (const std::exception&) {
    throw DataError(what + ": line " + std::to_string(line) + ": not a number: '" + cell + "'");
  }
}

inline long long parse_integer(const std::string& cell, int line, const std::string& what) {
  try {
    std::size_t used = 0;
    const long long v = std::stoll(cell, &used);
    if (used != cell.size()) throw std::invalid_argument(cell);
    return v;
  } catch (const std::exception&) {
    throw DataError(what + ": line " + std::to_string(line) + ": not an integer: '" + cell + "'");
  }
}

}  // namespace detail

/// Writes timestamp_s,voltage_V,shots,successes (raman) or ...,counts
/// (fluorescence). An optional leading scan_index column tags multi-scan files.
inline void write_scan_csv(std::ostream& out, const std::vector<ScanRecord>& records,
                           std::optional<int> scan_index = std::nullopt, bool header = true) {
  bool raman = true;
  if (!records.empty()) raman = records.front().successes.has_value();
  for (const auto& r : records)
    if (r.successes.has_value() != raman || r.photon_counts.has_value() == raman)
      throw DataError("write_scan_csv: records mix raman and fluorescence data");
  if (header) {
    if (scan_index) out << "scan_index,";
    out << "timestamp_s,voltage_V,shots," << (raman ? "successes" : "counts") << '\n';
  }
  for (const auto& r : records) {
    if (scan_index) out << *scan_index << ',';
    out << format_number(r.timestamp) << ',' << format_number(r.voltage) << ',' << r.shots << ',';
    if (raman)
      out << *r.successes;
    else
      out << *r.photon_counts;
    out << '\n';
  }
}

/// Scans read from CSV, grouped by scan_index when that column is present.
inline std::vector<TimedScan> read_scan_csv_grouped(std::istream& in) {
  const std::string what = "scan csv";
  const auto table = detail::read_table(in, what);
  const auto voltage = table.require("voltage_V", what);
  const auto shots = table.require("shots", what);
  const auto successes = table.find("successes");
  const auto counts = table.find("counts");
  if (successes.has_value() == counts.has_value())
    throw DataError(what + ": exactly one of 'successes' or 'counts' columns is required");
  const auto timestamp = table.find("timestamp_s");
  const auto scan_col = table.find("scan_index");

  std::vector<TimedScan> scans;
  std::map<long long, std::size_t> index_of;
  for (std::size_t i = 0; i < table.rows.size(); ++i) {
    const auto& row = table.rows[i];
    const int line = table.line_numbers[i];
    ScanRecord rec;
    rec.voltage = detail::parse_double(row[voltage], line, what);
    rec.shots = static_cast<int>(detail::parse_integer(row[shots], line, what));
    rec.timestamp = timestamp ? detail::parse_double(row[*timestamp], line, what) : static_cast<double>(i);
    if (rec.shots < 1) throw DataError(what + ": line " + std::to_string(line) + ": shots must be >= 1");
    if (successes) {
      const long long s = detail::parse_integer(row[*successes], line, what);
      if (s < 0 || s > rec.shots)
        throw DataError(what + ": line " + std::to_string(line) + ": successes outside [0, shots]");
      rec.successes = static_cast<int>(s);
    } else {
      const long long c = detail::parse_integer(row[*counts], line, what);
      if (c < 0) throw DataError(what + ": line " + std::to_string(line) + ": counts must be >= 0");
      rec.photon_counts = c;
    }
    const long long key = scan_col ? detail::parse_integer(row[*scan_col], line, what) : 0;
    auto it = index_of.find(key);
    if (it == index_of.end()) {
      it = index_of.emplace(key, scans.size()).first;
      scans.push_back({rec.timestamp, {}});
    }
    scans[it->second].records.push_back(rec);
  }
  if (scans.empty()) throw DataError(what + ": no data rows");
  return scans;
}

inline std::vector<ScanRecord> read_scan_csv(std::istream& in) {
  auto scans = read_scan_csv_grouped(in);
  if (scans.size() != 1) throw DataError("scan csv: expected a single scan, found " + std::to_string(scans.size()));
  return std::move(scans.front().records);
}

/// bin,phase_rad,counts with an optional leading voltage_V column.
inline void write_histogram_csv(std::ostream& out, const std::vector<CorrelationHistogram>& series) {
  const bool with_voltage = !series.empty() && series.front().voltage.has_value();
  out << (with_voltage ? "voltage_V,bin,phase_rad,counts\n" : "bin,phase_rad,counts\n");
  for (const auto& h : series) {
    for (std::size_t k = 0; k < h.counts.size(); ++k) {
      if (with_voltage) out << format_number(h.voltage.value_or(0.0)) << ',';
      out << k << ',' << format_number(h.phases[k]) << ',' << h.counts[k] << '\n';
    }
  }
}

inline std::vector<CorrelationHistogram> read_histogram_csv(std::istream& in) {
  const std::string what = "histogram csv";
  const auto table = detail::read_table(in, what);
  const auto phase = table.require("phase_rad", what);
  const auto counts = table.require("counts", what);
  const auto voltage = table.find("voltage_V");

  std::vector<CorrelationHistogram> series;
  for (std::size_t i = 0; i < table.rows.size(); ++i) {
    const auto& row = table.rows[i];
    const int line = table.line_numbers[i];
    std::optional<double> v;
    if (voltage) v = detail::parse_double(row[*voltage], line, what);
    if (series.empty() || series.back().voltage != v) {
      series.emplace_back();
      series.back().voltage = v;
    }
    const long long c = detail::parse_integer(row[counts], line, what);
    if (c < 0) throw DataError(what + ": line " + std::to_string(line) + ": counts must be >= 0");
    series.back().phases.push_back(detail::parse_double(row[phase], line, what));
    series.back().counts.push_back(c);
  }
  if (series.empty()) throw DataError(what + ": no data rows");
  return series;
}

inline void write_drift_csv(std::ostream& out, const DriftSeries& series) {
  out << "timestamp_s,c_V,ci95_V,converged\n";
  for (const auto& e : series.entries()) {
    out << format_number(e.timestamp) << ',' << format_number(e.compensation_voltage) << ','
        << format_number(e.ci95) << ',' << (e.converged ? 1 : 0) << '\n';
  }
}

/// Header: timestamp_s followed by the voltage grid; one row per scan.
inline void write_waterfall_csv(std::ostream& out, const WaterfallFrame& frame) {
  out << "timestamp_s";
  for (double v : frame.voltages) out << ',' << format_number(v);
  out << '\n';
  for (std::size_t i = 0; i < frame.probabilities.size(); ++i) {
    out << format_number(frame.timestamps[i]);
    for (double p : frame.probabilities[i]) out << ',' << format_number(p);
    out << '\n';
  }
}

}  // namespace micromotion::io
