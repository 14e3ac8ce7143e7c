// Copyright 2026 The segshift Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

// Minimal static SVG charts: line, histogram and bar.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

namespace segshift::plot {

struct Series {
  std::string name;
  std::vector<double> x;
  std::vector<double> y;
};

namespace detail {

inline constexpr int kW = 640, kH = 400, kLeft = 70, kRight = 150, kTop = 40, kBottom = 50;
inline constexpr const char* kColors[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#17becf", "#7f7f7f"};

inline std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4g", v);
  return buf;
}

inline std::string escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

struct Frame {
  double x0, x1, y0, y1;
  double px(double x) const { return kLeft + (x - x0) / (x1 - x0) * (kW - kLeft - kRight); }
  double py(double y) const { return kH - kBottom - (y - y0) / (y1 - y0) * (kH - kTop - kBottom); }
};

inline void fix_range(double& lo, double& hi) {
  if (!std::isfinite(lo) || !std::isfinite(hi)) lo = 0.0, hi = 1.0;
  if (hi - lo < 1e-12) lo -= 0.5, hi += 0.5;
}

inline std::string open(const std::string& title, const std::string& xlabel, const std::string& ylabel, const Frame& f) {
  std::ostringstream os;
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kW << "\" height=\"" << kH
     << "\" font-family=\"sans-serif\" font-size=\"11\">\n"
     << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
     << "<text x=\"" << kW / 2 << "\" y=\"22\" text-anchor=\"middle\" font-size=\"14\">" << escape(title) << "</text>\n"
     << "<line x1=\"" << kLeft << "\" y1=\"" << kH - kBottom << "\" x2=\"" << kW - kRight << "\" y2=\"" << kH - kBottom
     << "\" stroke=\"black\"/>\n"
     << "<line x1=\"" << kLeft << "\" y1=\"" << kTop << "\" x2=\"" << kLeft << "\" y2=\"" << kH - kBottom
     << "\" stroke=\"black\"/>\n";
  for (int t = 0; t <= 4; ++t) {
    const double xv = f.x0 + (f.x1 - f.x0) * t / 4.0, yv = f.y0 + (f.y1 - f.y0) * t / 4.0;
    os << "<text x=\"" << num(f.px(xv)) << "\" y=\"" << kH - kBottom + 15 << "\" text-anchor=\"middle\">" << num(xv)
       << "</text>\n"
       << "<text x=\"" << kLeft - 5 << "\" y=\"" << num(f.py(yv) + 4) << "\" text-anchor=\"end\">" << num(yv)
       << "</text>\n";
  }
  os << "<text x=\"" << (kLeft + kW - kRight) / 2 << "\" y=\"" << kH - 12 << "\" text-anchor=\"middle\">"
     << escape(xlabel) << "</text>\n"
     << "<text x=\"16\" y=\"" << (kTop + kH - kBottom) / 2 << "\" text-anchor=\"middle\" transform=\"rotate(-90 16 "
     << (kTop + kH - kBottom) / 2 << ")\">" << escape(ylabel) << "</text>\n";
  return os.str();
}

inline std::string legend(const std::vector<std::string>& names) {
  std::ostringstream os;
  for (std::size_t i = 0; i < names.size(); ++i) {
    const int y = kTop + 10 + static_cast<int>(i) * 16;
    os << "<rect x=\"" << kW - kRight + 10 << "\" y=\"" << y - 8 << "\" width=\"10\" height=\"10\" fill=\""
       << kColors[i % 8] << "\"/>\n"
       << "<text x=\"" << kW - kRight + 25 << "\" y=\"" << y + 1 << "\">" << escape(names[i]) << "</text>\n";
  }
  return os.str();
}

}  // namespace detail

inline std::string line_chart(const std::string& title, const std::vector<Series>& series, const std::string& xlabel,
                              const std::string& ylabel) {
  using namespace detail;
  double x0 = std::numeric_limits<double>::infinity(), x1 = -x0, y0 = x0, y1 = -x0;
  for (const auto& s : series)
    for (std::size_t i = 0; i < s.x.size() && i < s.y.size(); ++i) {
      if (!std::isfinite(s.y[i])) continue;
      x0 = std::min(x0, s.x[i]), x1 = std::max(x1, s.x[i]);
      y0 = std::min(y0, s.y[i]), y1 = std::max(y1, s.y[i]);
    }
  fix_range(x0, x1);
  fix_range(y0, y1);
  const Frame f{x0, x1, y0, y1};
  std::string out = open(title, xlabel, ylabel, f);
  std::vector<std::string> names;
  for (std::size_t k = 0; k < series.size(); ++k) {
    const auto& s = series[k];
    names.push_back(s.name);
    std::ostringstream pts;
    for (std::size_t i = 0; i < s.x.size() && i < s.y.size(); ++i)
      if (std::isfinite(s.y[i])) pts << num(f.px(s.x[i])) << "," << num(f.py(s.y[i])) << " ";
    out += "<polyline fill=\"none\" stroke=\"" + std::string(kColors[k % 8]) + "\" stroke-width=\"1.5\" points=\"" +
           pts.str() + "\"/>\n";
  }
  return out + legend(names) + "</svg>\n";
}

/// Overlaid normalised histograms (each series sums to 1) over a shared range.
inline std::string histogram_chart(const std::string& title, const std::vector<std::string>& names,
                                   const std::vector<std::vector<double>>& values, int bins, const std::string& xlabel) {
  using namespace detail;
  double lo = std::numeric_limits<double>::infinity(), hi = -lo;
  for (const auto& v : values)
    for (double x : v)
      if (std::isfinite(x)) lo = std::min(lo, x), hi = std::max(hi, x);
  fix_range(lo, hi);
  std::vector<std::vector<double>> h(values.size(), std::vector<double>(static_cast<std::size_t>(bins), 0.0));
  double top = 0.0;
  for (std::size_t k = 0; k < values.size(); ++k) {
    std::size_t n = 0;
    for (double x : values[k]) {
      if (!std::isfinite(x)) continue;
      const int b = std::clamp(static_cast<int>((x - lo) / (hi - lo) * bins), 0, bins - 1);
      h[k][static_cast<std::size_t>(b)] += 1.0;
      ++n;
    }
    for (auto& c : h[k]) {
      if (n) c /= static_cast<double>(n);
      top = std::max(top, c);
    }
  }
  const Frame f{lo, hi, 0.0, top > 0 ? top : 1.0};
  std::string out = open(title, xlabel, "fraction of pixels", f);
  const double bw = (hi - lo) / bins;
  for (std::size_t k = 0; k < h.size(); ++k)
    for (int b = 0; b < bins; ++b) {
      const double c = h[k][static_cast<std::size_t>(b)];
      if (c <= 0) continue;
      const double xa = f.px(lo + b * bw), xb = f.px(lo + (b + 1) * bw);
      out += "<rect x=\"" + num(xa) + "\" y=\"" + num(f.py(c)) + "\" width=\"" + num(xb - xa) + "\" height=\"" +
             num(f.py(0) - f.py(c)) + "\" fill=\"" + kColors[k % 8] + "\" fill-opacity=\"0.5\"/>\n";
    }
  return out + legend(names) + "</svg>\n";
}

inline std::string bar_chart(const std::string& title, const std::vector<std::string>& labels,
                             const std::vector<double>& values, const std::string& ylabel) {
  using namespace detail;
  double hi = 0.0;
  for (double v : values)
    if (std::isfinite(v)) hi = std::max(hi, v);
  const Frame f{0.0, static_cast<double>(std::max<std::size_t>(labels.size(), 1)), 0.0, hi > 0 ? hi : 1.0};
  std::ostringstream os;
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kW << "\" height=\"" << kH
     << "\" font-family=\"sans-serif\" font-size=\"11\">\n<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
     << "<text x=\"" << kW / 2 << "\" y=\"22\" text-anchor=\"middle\" font-size=\"14\">" << escape(title) << "</text>\n"
     << "<text x=\"16\" y=\"" << (kTop + kH - kBottom) / 2 << "\" text-anchor=\"middle\" transform=\"rotate(-90 16 "
     << (kTop + kH - kBottom) / 2 << ")\">" << escape(ylabel) << "</text>\n";
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const double v = i < values.size() && std::isfinite(values[i]) ? values[i] : 0.0;
    const double xa = f.px(i + 0.15), xb = f.px(i + 0.85);
    os << "<rect x=\"" << num(xa) << "\" y=\"" << num(f.py(v)) << "\" width=\"" << num(xb - xa) << "\" height=\""
       << num(f.py(0) - f.py(v)) << "\" fill=\"" << kColors[i % 8] << "\"/>\n"
       << "<text x=\"" << num((xa + xb) / 2) << "\" y=\"" << num(f.py(v) - 3) << "\" text-anchor=\"middle\">" << num(v)
       << "</text>\n"
       << "<text x=\"" << num((xa + xb) / 2) << "\" y=\"" << kH - kBottom + 14 << "\" text-anchor=\"end\" transform=\"rotate(-30 "
       << num((xa + xb) / 2) << " " << kH - kBottom + 14 << ")\">" << escape(labels[i]) << "</text>\n";
  }
  os << "<line x1=\"" << kLeft << "\" y1=\"" << kH - kBottom << "\" x2=\"" << kW - kRight << "\" y2=\"" << kH - kBottom
     << "\" stroke=\"black\"/>\n</svg>\n";
  return os.str();
}

}  // namespace segshift::plot
