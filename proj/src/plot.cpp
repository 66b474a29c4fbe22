/* Copyright 2026 The anchordistill Authors. All Rights Reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License. */

#include "anchordistill/plot.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>

#include <json.hpp>

#include "anchordistill/errors.hpp"

namespace ad {

namespace {

constexpr double kWidth = 720, kHeight = 420;
constexpr double kLeft = 70, kRight = 160, kTop = 40, kBottom = 60;
constexpr const char* kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd",
                                    "#ff7f0e", "#8c564b", "#e377c2", "#17becf"};

std::string escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '&': out += "&amp;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

std::ostringstream open_svg(const std::string& title) {
  std::ostringstream os;
  os.precision(6);
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kWidth << "\" height=\"" << kHeight
     << "\" font-family=\"sans-serif\" font-size=\"12\">\n"
     << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
     << "<text x=\"" << kWidth / 2 << "\" y=\"24\" text-anchor=\"middle\" font-size=\"15\">"
     << escape(title) << "</text>\n";
  const double x0 = kLeft, y0 = kHeight - kBottom;
  os << "<line x1=\"" << x0 << "\" y1=\"" << y0 << "\" x2=\"" << kWidth - kRight << "\" y2=\"" << y0
     << "\" stroke=\"black\"/>\n"
     << "<line x1=\"" << x0 << "\" y1=\"" << kTop << "\" x2=\"" << x0 << "\" y2=\"" << y0
     << "\" stroke=\"black\"/>\n";
  return os;
}

}  // namespace

LossSeries read_loss_series(const std::filesystem::path& metrics, const std::string& key,
                            std::string label) {
  std::ifstream is(metrics);
  if (!is) throw FormatError("cannot read " + metrics.string());
  LossSeries s;
  s.label = label.empty() ? metrics.parent_path().filename().string() : std::move(label);
  std::string line;
  int row = 0;
  while (std::getline(is, line)) {
    ++row;
    if (line.empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
      s.steps.push_back(j.at("step").get<double>());
      s.values.push_back(j.at(key).get<double>());
    } catch (const nlohmann::json::exception& e) {
      throw FormatError(metrics.string() + ":" + std::to_string(row) + ": " + e.what());
    }
  }
  if (s.steps.empty()) throw FormatError(metrics.string() + ": no records");
  return s;
}

std::vector<ApBar> read_report_bars(const std::filesystem::path& report) {
  std::ifstream is(report);
  if (!is) throw FormatError("cannot read " + report.string());
  std::vector<ApBar> bars;
  try {
    const auto j = nlohmann::json::parse(is);
    for (const auto& c : j.at("cells")) {
      bars.push_back({c.at("label").get<std::string>(), c.at("mean_toy_ap").get<double>()});
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(report.string() + ": " + e.what());
  }
  return bars;
}

std::string render_loss_svg(const std::vector<LossSeries>& series, const std::string& title) {
  if (series.empty()) throw ParameterError("render_loss_svg: no series");
  double xmin = std::numeric_limits<double>::infinity(), xmax = -xmin;
  double ymin = xmin, ymax = -xmin;
  for (const auto& s : series) {
    for (std::size_t i = 0; i < s.steps.size(); ++i) {
      xmin = std::min(xmin, s.steps[i]);
      xmax = std::max(xmax, s.steps[i]);
      ymin = std::min(ymin, s.values[i]);
      ymax = std::max(ymax, s.values[i]);
    }
  }
  const bool log_y = ymin > 0;
  auto ty = [&](double v) { return log_y ? std::log10(v) : v; };
  double lo = ty(ymin), hi = ty(ymax);
  if (hi - lo < 1e-12) {
    lo -= 0.5;
    hi += 0.5;
  }
  if (xmax - xmin < 1e-12) xmax = xmin + 1;
  const double pw = kWidth - kLeft - kRight, ph = kHeight - kTop - kBottom;
  auto px = [&](double x) { return kLeft + (x - xmin) / (xmax - xmin) * pw; };
  auto py = [&](double y) { return kTop + (1.0 - (ty(y) - lo) / (hi - lo)) * ph; };

  auto os = open_svg(title);
  for (int t = 0; t <= 4; ++t) {
    const double f = t / 4.0;
    const double xv = xmin + f * (xmax - xmin);
    const double yv = lo + f * (hi - lo);
    os << "<text x=\"" << px(xv) << "\" y=\"" << kHeight - kBottom + 18
       << "\" text-anchor=\"middle\">" << std::lround(xv) << "</text>\n";
    os << "<text x=\"" << kLeft - 6 << "\" y=\"" << kTop + (1 - f) * ph + 4
       << "\" text-anchor=\"end\">" << (log_y ? std::pow(10.0, yv) : yv) << "</text>\n";
  }
  os << "<text x=\"" << kLeft + pw / 2 << "\" y=\"" << kHeight - 18
     << "\" text-anchor=\"middle\">step</text>\n";
  for (std::size_t i = 0; i < series.size(); ++i) {
    const char* color = kPalette[i % std::size(kPalette)];
    os << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"1.5\" points=\"";
    for (std::size_t p = 0; p < series[i].steps.size(); ++p) {
      os << px(series[i].steps[p]) << ',' << py(series[i].values[p]) << ' ';
    }
    os << "\"/>\n";
    const double ly = kTop + 14 + 18 * static_cast<double>(i);
    os << "<rect x=\"" << kWidth - kRight + 12 << "\" y=\"" << ly - 9
       << "\" width=\"12\" height=\"3\" fill=\"" << color << "\"/>\n"
       << "<text x=\"" << kWidth - kRight + 30 << "\" y=\"" << ly << "\">"
       << escape(series[i].label) << "</text>\n";
  }
  os << "</svg>\n";
  return os.str();
}

std::string render_ap_svg(const std::vector<ApBar>& bars, const std::string& title) {
  if (bars.empty()) throw ParameterError("render_ap_svg: no bars");
  double top = 0.0;
  for (const auto& b : bars) {
    if (std::isfinite(b.value)) top = std::max(top, b.value);
  }
  if (top <= 0) top = 1.0;
  const double pw = kWidth - kLeft - kRight / 4, ph = kHeight - kTop - kBottom;
  const double slot = pw / static_cast<double>(bars.size());
  auto os = open_svg(title);
  for (int t = 0; t <= 4; ++t) {
    const double v = top * t / 4.0;
    os << "<text x=\"" << kLeft - 6 << "\" y=\"" << kTop + (1 - t / 4.0) * ph + 4
       << "\" text-anchor=\"end\">" << v << "</text>\n";
  }
  for (std::size_t i = 0; i < bars.size(); ++i) {
    const double v = std::isfinite(bars[i].value) ? bars[i].value : 0.0;
    const double h = v / top * ph;
    const double x = kLeft + slot * (static_cast<double>(i) + 0.15);
    os << "<rect x=\"" << x << "\" y=\"" << kTop + ph - h << "\" width=\"" << slot * 0.7
       << "\" height=\"" << h << "\" fill=\"" << kPalette[i % std::size(kPalette)] << "\"/>\n";
    const double cx = x + slot * 0.35;
    const double ly = kHeight - kBottom + 14;
    os << "<text transform=\"translate(" << cx << ',' << ly << ") rotate(30)\" font-size=\"10\">"
       << escape(bars[i].label) << "</text>\n";
  }
  os << "</svg>\n";
  return os.str();
}

}  // namespace ad
