#pragma once

#include <cmath>
#include <cstdio>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "cubemap/error.hpp"
#include "cubemap/optim.hpp"
#include "cubemap/sim.hpp"

namespace cubemap {

// Six significant digits; non-finite values spelled "inf", "-inf", "nan".
inline std::string FormatNumber(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.6g", v);
  return buf;
}

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;
};

inline void WriteCsv(std::ostream& out, const CsvTable& table) {
  if (table.rows.empty()) throw Error(ErrorKind::kValidation, "report has no records");
  const auto write_row = [&](const std::vector<std::string>& cells) {
    for (std::size_t i = 0; i < cells.size(); ++i) {
      if (i) out << ',';
      out << cells[i];
    }
    out << '\n';
  };
  write_row(table.header);
  for (const auto& r : table.rows) {
    if (r.size() != table.header.size()) {
      throw Error(ErrorKind::kValidation, "report row width does not match header");
    }
    write_row(r);
  }
}

inline std::string ToCsv(const CsvTable& table) {
  std::ostringstream out;
  WriteCsv(out, table);
  return out.str();
}

inline CsvTable BenchReport(const std::vector<MetricBenchRow>& rows) {
  CsvTable t{{"metric", "seed", "ate_rmse", "failed"}, {}};
  for (const auto& r : rows) {
    t.rows.push_back({MetricName(r.metric), std::to_string(r.seed), FormatNumber(r.ate_rmse),
                      r.failed ? "1" : "0"});
  }
  return t;
}

inline CsvTable FrameStatsReport(const std::vector<FrameStats>& stats) {
  CsvTable t{{"frame", "tracked", "map_points", "final_cost", "converged"}, {}};
  for (const auto& s : stats) {
    t.rows.push_back({std::to_string(s.frame), std::to_string(s.tracked),
                      std::to_string(s.map_points), FormatNumber(s.final_cost),
                      s.converged ? "1" : "0"});
  }
  return t;
}

}  // namespace cubemap
