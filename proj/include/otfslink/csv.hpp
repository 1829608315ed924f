#pragma once
// CSV serialization of experiment reports.  The format keeps the data table
// clean for standard readers (comment = '#'): metadata and the aggregates
// block ride on comment lines, values are printed with full double precision
// (%.17g) so re-parsing reproduces them bit for bit.

#include <algorithm>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "otfslink/experiment.hpp"

#ifndef OTFSLINK_GIT_DESCRIBE
#define OTFSLINK_GIT_DESCRIBE "unversioned"
#endif

namespace otfslink {

inline constexpr int kCsvSchemaVersion = 1;

/// Shortest decimal form that round-trips a double exactly.
inline std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

namespace detail {

inline void csv_metadata(std::ostringstream& out, const SEReport& rep) {
  out << "# schema " << kCsvSchemaVersion << "\n";
  out << "# tool otfslink " << OTFSLINK_GIT_DESCRIBE << "\n";
  out << "# scenario " << rep.scenario << "\n";
  out << "# seed " << rep.seed << "\n";
  out << "# drops " << rep.drops << "\n";
  out << "# trials " << rep.trials << "\n";
}

inline void csv_aggregates(std::ostringstream& out, const SEReport& rep) {
  out << "# aggregates\n";
  for (const auto& v : rep.variants) {
    const auto row = [&](const char* stat, double value) {
      out << "# agg," << v.name << "," << stat << "," << format_double(value) << "\n";
    };
    out << "# agg," << v.name << ",count," << v.agg.count << "\n";
    row("mean", v.agg.mean);
    row("std_error", v.agg.std_error);
    row("sum_mean", v.agg.sum_mean);
    row("likely95", v.agg.likely95);
    row("median", v.agg.median);
    row("min", v.agg.min);
    row("max", v.agg.max);
  }
}

}  // namespace detail

/// Main table: one row per (variant, drop, user) plus the aggregates block.
inline std::string report_csv(const SEReport& rep) {
  std::ostringstream out;
  detail::csv_metadata(out, rep);
  out << "variant,drop,user,value\n";
  for (const auto& v : rep.variants)
    for (std::size_t d = 0; d < v.values.size(); ++d)
      for (std::size_t q = 0; q < v.values[d].size(); ++q)
        out << v.name << "," << d << "," << q << "," << format_double(v.values[d][q]) << "\n";
  detail::csv_aggregates(out, rep);
  return out.str();
}

/// Empirical-distribution table: per variant, the flattened values sorted
/// ascending with their plotting positions quantile = i/(n-1), matching the
/// interpolation used by the aggregate percentiles.
inline std::string report_cdf_csv(const SEReport& rep) {
  std::ostringstream out;
  detail::csv_metadata(out, rep);
  out << "variant,index,quantile,value\n";
  for (const auto& v : rep.variants) {
    std::vector<double> flat;
    for (const auto& drop : v.values) flat.insert(flat.end(), drop.begin(), drop.end());
    std::sort(flat.begin(), flat.end());
    const std::size_t n = flat.size();
    for (std::size_t i = 0; i < n; ++i) {
      const double quantile = n > 1 ? static_cast<double>(i) / (n - 1) : 0.0;
      out << v.name << "," << i << "," << format_double(quantile) << ","
          << format_double(flat[i]) << "\n";
    }
  }
  return out.str();
}

/// Comparison table for two reports ("gain of A over B").
inline std::string compare_csv(const std::vector<GainRow>& rows) {
  std::ostringstream out;
  out << "# schema " << kCsvSchemaVersion << "\n";
  out << "# tool otfslink " << OTFSLINK_GIT_DESCRIBE << "\n";
  out << "variant_a,variant_b,stat,value_a,value_b,ratio\n";
  for (const auto& r : rows)
    out << r.variant_a << "," << r.variant_b << "," << r.stat << "," << format_double(r.a) << ","
        << format_double(r.b) << "," << format_double(r.ratio) << "\n";
  return out.str();
}

// ---------------------------------------------------------------------------
// Parsing (round-trip checks and downstream tooling)
// ---------------------------------------------------------------------------

struct ParsedCsv {
  std::map<std::string, std::string> metadata;  // "# key value" lines before the header
  std::string header;
  std::vector<std::vector<std::string>> rows;           // data cells per line
  std::vector<std::vector<std::string>> aggregates;     // "# agg,..." cells
};

inline ParsedCsv parse_report_csv(const std::string& text) {
  ParsedCsv parsed;
  std::istringstream in(text);
  std::string line;
  const auto split = [](const std::string& s) {
    std::vector<std::string> cells;
    std::string cell;
    std::istringstream ls(s);
    while (std::getline(ls, cell, ',')) cells.push_back(cell);
    return cells;
  };
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    if (line.rfind("# agg,", 0) == 0) {
      parsed.aggregates.push_back(split(line.substr(6)));
      continue;
    }
    if (line.rfind("#", 0) == 0) {
      const std::string body = line.substr(line.find_first_not_of("# "));
      const auto space = body.find(' ');
      if (space != std::string::npos)
        parsed.metadata[body.substr(0, space)] = body.substr(space + 1);
      continue;
    }
    if (parsed.header.empty()) {
      parsed.header = line;
      continue;
    }
    parsed.rows.push_back(split(line));
  }
  if (parsed.header.empty()) throw std::runtime_error("parse_report_csv: no header line");
  return parsed;
}

inline void write_file(const std::string& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("write_file: cannot open '" + path + "'");
  out << content;
  if (!out) throw std::runtime_error("write_file: write failed for '" + path + "'");
}

}  // namespace otfslink
