#include "tktr/exp/plot.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

namespace tktr::exp {

namespace {

constexpr double kWidth = 760, kHeight = 460;
constexpr double kLeft = 64, kRight = 180, kTop = 28, kBottom = 52;
constexpr const char* kColors[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf"};

std::string fmt(const char* f, double a) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, a);
  return buf;
}

std::string escape(const std::string& s) {
  std::string out;
  for (char ch : s) {
    switch (ch) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += ch;
    }
  }
  return out;
}

// 1, 2 or 5 times a power of ten, giving at most about six intervals.
double nice_step(double span) {
  const double raw = span / 6.0;
  const double mag = std::pow(10.0, std::floor(std::log10(raw)));
  for (double m : {1.0, 2.0, 5.0})
    if (m * mag >= raw) return m * mag;
  return 10.0 * mag;
}

}  // namespace

std::string render_svg(const std::vector<PlotSeries>& series) {
  double xmax = 0.0;
  for (const auto& s : series)
    for (const auto& r : s.rows) xmax = std::max(xmax, r.wall_time_s);
  const double xstep = xmax > 0.0 ? nice_step(xmax) : 1.0;
  xmax = xmax > 0.0 ? std::ceil(xmax / xstep) * xstep : 6.0;

  const double pw = kWidth - kLeft - kRight, ph = kHeight - kTop - kBottom;
  auto px = [&](double x) { return kLeft + pw * x / xmax; };
  auto py = [&](double y) { return kTop + ph * (1.0 - std::clamp(y, 0.0, 1.0)); };

  std::string o;
  o += "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + fmt("%.0f", kWidth) + "\" height=\"" +
       fmt("%.0f", kHeight) + "\" viewBox=\"0 0 " + fmt("%.0f", kWidth) + " " + fmt("%.0f", kHeight) +
       "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  o += "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";

  for (int i = 0; i <= 10; i += 2) {
    const double y = py(i / 10.0);
    o += "<line x1=\"" + fmt("%.2f", kLeft) + "\" y1=\"" + fmt("%.2f", y) + "\" x2=\"" + fmt("%.2f", kLeft + pw) +
         "\" y2=\"" + fmt("%.2f", y) + "\" stroke=\"#e0e0e0\"/>\n";
    o += "<text x=\"" + fmt("%.2f", kLeft - 8) + "\" y=\"" + fmt("%.2f", y + 4) + "\" text-anchor=\"end\">" +
         fmt("%.1f", i / 10.0) + "</text>\n";
  }
  const int xticks = int(std::lround(xmax / xstep));
  for (int i = 0; i <= xticks; ++i) {
    const double x = px(i * xstep);
    o += "<line x1=\"" + fmt("%.2f", x) + "\" y1=\"" + fmt("%.2f", kTop + ph) + "\" x2=\"" + fmt("%.2f", x) +
         "\" y2=\"" + fmt("%.2f", kTop + ph + 5) + "\" stroke=\"black\"/>\n";
    o += "<text x=\"" + fmt("%.2f", x) + "\" y=\"" + fmt("%.2f", kTop + ph + 19) + "\" text-anchor=\"middle\">" +
         fmt("%g", i * xstep) + "</text>\n";
  }
  o += "<rect x=\"" + fmt("%.2f", kLeft) + "\" y=\"" + fmt("%.2f", kTop) + "\" width=\"" + fmt("%.2f", pw) +
       "\" height=\"" + fmt("%.2f", ph) + "\" fill=\"none\" stroke=\"black\"/>\n";
  o += "<text x=\"" + fmt("%.2f", kLeft + pw / 2) + "\" y=\"" + fmt("%.2f", kHeight - 12) +
       "\" text-anchor=\"middle\">wall time (s)</text>\n";
  o += "<text transform=\"translate(16 " + fmt("%.2f", kTop + ph / 2) +
       ") rotate(-90)\" text-anchor=\"middle\">test accuracy</text>\n";

  for (std::size_t si = 0; si < series.size(); ++si) {
    const auto& s = series[si];
    const std::string color = kColors[si % std::size(kColors)];
    for (std::size_t i = 1; i < s.rows.size(); ++i) {
      if (s.rows[i].phase == s.rows[i - 1].phase) continue;
      const double x = px(s.rows[i].wall_time_s);
      o += "<line x1=\"" + fmt("%.2f", x) + "\" y1=\"" + fmt("%.2f", kTop) + "\" x2=\"" + fmt("%.2f", x) +
           "\" y2=\"" + fmt("%.2f", kTop + ph) + "\" stroke=\"" + color +
           "\" stroke-dasharray=\"4 3\"><title>" + escape(s.label) + ": " + io::to_string(s.rows[i].phase) +
           " at epoch " + std::to_string(s.rows[i].epoch) + "</title></line>\n";
    }
    if (!s.rows.empty()) {
      o += "<polyline fill=\"none\" stroke=\"" + color + "\" stroke-width=\"1.5\" points=\"";
      for (std::size_t i = 0; i < s.rows.size(); ++i)
        o += (i ? " " : "") + fmt("%.2f", px(s.rows[i].wall_time_s)) + "," + fmt("%.2f", py(s.rows[i].test_acc));
      o += "\"/>\n";
    }
    const double ly = kTop + 14 + 18 * double(si);
    o += "<line x1=\"" + fmt("%.2f", kLeft + pw + 12) + "\" y1=\"" + fmt("%.2f", ly - 4) + "\" x2=\"" +
         fmt("%.2f", kLeft + pw + 32) + "\" y2=\"" + fmt("%.2f", ly - 4) + "\" stroke=\"" + color +
         "\" stroke-width=\"2\"/>\n";
    o += "<text x=\"" + fmt("%.2f", kLeft + pw + 38) + "\" y=\"" + fmt("%.2f", ly) + "\">" + escape(s.label) +
         "</text>\n";
  }
  o += "</svg>\n";
  return o;
}

}  // namespace tktr::exp
