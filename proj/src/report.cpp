#include "ccnet/report.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

namespace ccnet {

namespace {

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.10g", v);
  return buf;
}

std::string fmt2(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.2f", v);
  return buf;
}

}  // namespace

std::string metrics_table_csv(const std::vector<MetricRow>& rows) {
  if (rows.empty()) throw MetricError("metrics_table_csv: empty metric set");
  std::string out = "protocol,subset,ratio,trial,mAP,rank1,rank5,rank10\n";
  for (const auto& r : rows) {
    out += r.protocol + "," + r.subset + "," + fmt(r.ratio) + ",";
    out += r.trial < 0 ? std::string("mean") : std::to_string(r.trial);
    out += "," + fmt(r.metrics.map) + "," + fmt(r.metrics.rank1) + "," + fmt(r.metrics.rank5) +
           "," + fmt(r.metrics.rank10) + "\n";
  }
  return out;
}

namespace {

constexpr int kWidth = 640;
constexpr int kHeight = 420;
constexpr int kMarginLeft = 60;
constexpr int kMarginRight = 140;
constexpr int kMarginTop = 40;
constexpr int kMarginBottom = 50;

const char* kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"};

std::string svg_header(const std::string& title) {
  std::string s;
  s += "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + std::to_string(kWidth) +
       "\" height=\"" + std::to_string(kHeight) + "\" viewBox=\"0 0 " + std::to_string(kWidth) +
       " " + std::to_string(kHeight) + "\">\n";
  s += "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  s += "<text x=\"" + std::to_string(kWidth / 2) +
       "\" y=\"24\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"16\">" + title +
       "</text>\n";
  return s;
}

std::string axes_and_grid() {
  std::string s;
  const int x0 = kMarginLeft, x1 = kWidth - kMarginRight;
  const int y0 = kHeight - kMarginBottom, y1 = kMarginTop;
  // y grid at 0, 0.25, ..., 1 (metrics live in [0,1])
  for (int i = 0; i <= 4; ++i) {
    const double frac = i / 4.0;
    const int y = static_cast<int>(y0 - frac * (y0 - y1));
    s += "<line x1=\"" + std::to_string(x0) + "\" y1=\"" + std::to_string(y) + "\" x2=\"" +
         std::to_string(x1) + "\" y2=\"" + std::to_string(y) +
         "\" stroke=\"#dddddd\" stroke-width=\"1\"/>\n";
    s += "<text x=\"" + std::to_string(x0 - 8) + "\" y=\"" + std::to_string(y + 4) +
         "\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"11\">" + fmt2(frac) +
         "</text>\n";
  }
  s += "<line x1=\"" + std::to_string(x0) + "\" y1=\"" + std::to_string(y0) + "\" x2=\"" +
       std::to_string(x1) + "\" y2=\"" + std::to_string(y0) +
       "\" stroke=\"black\" stroke-width=\"1\"/>\n";
  s += "<line x1=\"" + std::to_string(x0) + "\" y1=\"" + std::to_string(y0) + "\" x2=\"" +
       std::to_string(x0) + "\" y2=\"" + std::to_string(y1) +
       "\" stroke=\"black\" stroke-width=\"1\"/>\n";
  return s;
}

std::string legend(const std::vector<ChartSeries>& series) {
  std::string s;
  const int lx = kWidth - kMarginRight + 16;
  int ly = kMarginTop + 10;
  for (size_t i = 0; i < series.size(); ++i) {
    const char* color = kPalette[i % 6];
    s += "<rect x=\"" + std::to_string(lx) + "\" y=\"" + std::to_string(ly - 9) +
         "\" width=\"12\" height=\"12\" fill=\"" + color + "\"/>\n";
    s += "<text x=\"" + std::to_string(lx + 18) + "\" y=\"" + std::to_string(ly + 2) +
         "\" font-family=\"sans-serif\" font-size=\"12\">" + series[i].name + "</text>\n";
    ly += 20;
  }
  return s;
}

double clamp01(double v) { return std::max(0.0, std::min(1.0, v)); }

}  // namespace

std::string svg_line_chart(const std::string& title, const std::string& x_label,
                           const std::vector<double>& xs, const std::vector<ChartSeries>& series) {
  if (xs.empty() || series.empty()) throw MetricError("svg_line_chart: nothing to plot");
  const int x0 = kMarginLeft, x1 = kWidth - kMarginRight;
  const int y0 = kHeight - kMarginBottom, y1 = kMarginTop;
  const double xmin = *std::min_element(xs.begin(), xs.end());
  const double xmax = *std::max_element(xs.begin(), xs.end());
  const double span = xmax > xmin ? xmax - xmin : 1.0;

  std::string s = svg_header(title);
  s += axes_and_grid();
  for (size_t i = 0; i < xs.size(); ++i) {
    const int px = static_cast<int>(x0 + (xs[i] - xmin) / span * (x1 - x0));
    s += "<text x=\"" + std::to_string(px) + "\" y=\"" + std::to_string(y0 + 18) +
         "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"11\">" + fmt(xs[i]) +
         "</text>\n";
  }
  s += "<text x=\"" + std::to_string((x0 + x1) / 2) + "\" y=\"" + std::to_string(kHeight - 12) +
       "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"12\">" + x_label +
       "</text>\n";

  for (size_t i = 0; i < series.size(); ++i) {
    if (series[i].values.size() != xs.size()) {
      throw MetricError("svg_line_chart: series length mismatch");
    }
    const char* color = kPalette[i % 6];
    std::string points;
    for (size_t j = 0; j < xs.size(); ++j) {
      const double px = x0 + (xs[j] - xmin) / span * (x1 - x0);
      const double py = y0 - clamp01(series[i].values[j]) * (y0 - y1);
      points += fmt2(px) + "," + fmt2(py) + " ";
      s += "<circle cx=\"" + fmt2(px) + "\" cy=\"" + fmt2(py) + "\" r=\"3\" fill=\"" + color +
           "\"/>\n";
    }
    s += "<polyline points=\"" + points + "\" fill=\"none\" stroke=\"" + color +
         "\" stroke-width=\"2\"/>\n";
  }
  s += legend(series);
  s += "</svg>\n";
  return s;
}

std::string svg_bar_chart(const std::string& title, const std::vector<std::string>& labels,
                          const std::vector<ChartSeries>& series) {
  if (labels.empty() || series.empty()) throw MetricError("svg_bar_chart: nothing to plot");
  const int x0 = kMarginLeft, x1 = kWidth - kMarginRight;
  const int y0 = kHeight - kMarginBottom, y1 = kMarginTop;
  const double group_w = static_cast<double>(x1 - x0) / labels.size();
  const double bar_w = group_w * 0.8 / series.size();

  std::string s = svg_header(title);
  s += axes_and_grid();
  for (size_t g = 0; g < labels.size(); ++g) {
    const double gx = x0 + g * group_w;
    s += "<text x=\"" + fmt2(gx + group_w / 2) + "\" y=\"" + std::to_string(y0 + 18) +
         "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"11\">" + labels[g] +
         "</text>\n";
    for (size_t i = 0; i < series.size(); ++i) {
      if (series[i].values.size() != labels.size()) {
        throw MetricError("svg_bar_chart: series length mismatch");
      }
      const double v = clamp01(series[i].values[g]);
      const double bx = gx + group_w * 0.1 + i * bar_w;
      const double bh = v * (y0 - y1);
      s += "<rect x=\"" + fmt2(bx) + "\" y=\"" + fmt2(y0 - bh) + "\" width=\"" + fmt2(bar_w) +
           "\" height=\"" + fmt2(bh) + "\" fill=\"" + std::string(kPalette[i % 6]) + "\"/>\n";
    }
  }
  s += legend(series);
  s += "</svg>\n";
  return s;
}

void write_text_file(const std::string& path, const std::string& content) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("cannot open for writing: " + path);
  os.write(content.data(), static_cast<std::streamsize>(content.size()));
  if (!os) throw IoError("write failed: " + path);
}

void emit_report(const std::vector<MetricRow>& rows, const std::string& csv_path,
                 const std::string& svg_path) {
  const std::string csv = metrics_table_csv(rows);  // throws on empty before any IO

  std::set<double> ratios;
  for (const auto& r : rows) ratios.insert(r.ratio);

  std::string svg;
  if (ratios.size() > 1) {
    std::vector<double> xs(ratios.begin(), ratios.end());
    std::vector<ChartSeries> series = {{"mAP", {}}, {"rank1", {}}, {"rank5", {}}, {"rank10", {}}};
    for (double x : xs) {
      // Mean over rows at this ratio (typically exactly one mean row).
      Metrics acc;
      int n = 0;
      for (const auto& r : rows) {
        if (r.ratio == x && r.trial < 0) {
          acc.map += r.metrics.map;
          acc.rank1 += r.metrics.rank1;
          acc.rank5 += r.metrics.rank5;
          acc.rank10 += r.metrics.rank10;
          ++n;
        }
      }
      if (n == 0) n = 1;
      series[0].values.push_back(acc.map / n);
      series[1].values.push_back(acc.rank1 / n);
      series[2].values.push_back(acc.rank5 / n);
      series[3].values.push_back(acc.rank10 / n);
    }
    svg = svg_line_chart("metrics vs missing ratio", "missing ratio", xs, series);
  } else {
    std::vector<std::string> labels;
    std::vector<ChartSeries> series = {{"mAP", {}}, {"rank1", {}}};
    for (const auto& r : rows) {
      if (r.trial >= 0) continue;
      labels.push_back(r.subset + "/" + r.protocol);
      series[0].values.push_back(r.metrics.map);
      series[1].values.push_back(r.metrics.rank1);
    }
    if (labels.empty()) {
      for (const auto& r : rows) {
        labels.push_back(r.subset + "/" + r.protocol);
        series[0].values.push_back(r.metrics.map);
        series[1].values.push_back(r.metrics.rank1);
      }
    }
    svg = svg_bar_chart("retrieval metrics", labels, series);
  }

  write_text_file(csv_path, csv);
  write_text_file(svg_path, svg);
}

}  // namespace ccnet
