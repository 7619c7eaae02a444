#pragma once

// CSV metric tables and self-contained SVG charts. Output is byte-stable for
// identical inputs.

#include "ccnet/evaluation.hpp"

#include <string>
#include <vector>

namespace ccnet {

struct MetricRow {
  std::string protocol;
  std::string subset;  // e.g. "R+N+T" or "center"
  double ratio = 0.0;
  int trial = -1;  // -1 renders as "mean"
  Metrics metrics;
};

// Header: protocol,subset,ratio,trial,mAP,rank1,rank5,rank10
std::string metrics_table_csv(const std::vector<MetricRow>& rows);

struct ChartSeries {
  std::string name;
  std::vector<double> values;
};

// Line chart of the series against shared x positions.
std::string svg_line_chart(const std::string& title, const std::string& x_label,
                           const std::vector<double>& xs, const std::vector<ChartSeries>& series);

// Grouped bars, one group per label.
std::string svg_bar_chart(const std::string& title, const std::vector<std::string>& labels,
                          const std::vector<ChartSeries>& series);

void write_text_file(const std::string& path, const std::string& content);

// CSV plus a chart rendered from the same rows: a line chart over ratios
// when they vary, otherwise bars over the subset column. Throws MetricError
// on an empty row set before touching the filesystem.
void emit_report(const std::vector<MetricRow>& rows, const std::string& csv_path,
                 const std::string& svg_path);

}  // namespace ccnet
