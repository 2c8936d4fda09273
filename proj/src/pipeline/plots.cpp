#include "maeloc/pipeline/plots.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "maeloc/error.hpp"

namespace maeloc::pipeline {

namespace {

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

std::string num(double v) {
  char b[32];
  std::snprintf(b, sizeof b, "%.6g", v);
  return b;
}

Series curve(const std::string& label, const std::vector<ConditionStats>& cs, bool mae) {
  Series s{label, {}, {}};
  for (const auto& c : cs) {
    if (!std::isfinite(c.key)) continue;
    s.x.push_back(c.key);
    s.y.push_back(mae ? c.mae_cm : c.acc);
  }
  return s;
}

}  // namespace

Series error_cdf(const std::string& label, const EvalReport& report) {
  std::vector<double> e;
  for (const auto& f : report.frames) e.push_back(f.error);
  std::sort(e.begin(), e.end());
  Series s{label, {}, {}};
  for (std::size_t k = 0; k < e.size(); ++k) {
    s.x.push_back(e[k]);
    s.y.push_back(static_cast<double>(k + 1) / static_cast<double>(e.size()));
  }
  return s;
}

std::vector<Panel> panels_from(const std::vector<std::pair<std::string, const EvalReport*>>& reports) {
  if (reports.empty()) throw InvalidArgument("emit_plots: no reports");
  Panel mae_snr{"mae_vs_snr", "SNR [dB]", "MAE [cm]", {}};
  Panel acc_snr{"acc_vs_snr", "SNR [dB]", "acc@30cm", {}};
  Panel mae_t60{"mae_vs_t60", "t60 [s]", "MAE [cm]", {}};
  Panel acc_t60{"acc_vs_t60", "t60 [s]", "acc@30cm", {}};
  Panel gain{"snr_out_vs_in", "input SNR [dB]", "output SNR [dB]", {}};
  Panel cdf{"error_cdf", "error [m]", "fraction of frames", {}};
  for (const auto& [label, r] : reports) {
    if (r->frames.empty()) throw InvalidArgument("emit_plots: empty report " + label);
    mae_snr.series.push_back(curve(label, r->by_snr, true));
    acc_snr.series.push_back(curve(label, r->by_snr, false));
    mae_t60.series.push_back(curve(label, r->by_t60, true));
    acc_t60.series.push_back(curve(label, r->by_t60, false));
    Series g{label, {}, {}};
    for (const auto& c : r->by_snr)
      if (std::isfinite(c.key) && std::isfinite(c.snr_in) && std::isfinite(c.snr_out)) {
        g.x.push_back(c.snr_in);
        g.y.push_back(c.snr_out);
      }
    gain.series.push_back(g);
    cdf.series.push_back(error_cdf(label, *r));
  }
  return {mae_snr, acc_snr, mae_t60, acc_t60, gain, cdf};
}

void write_csv(const std::filesystem::path& path, const Panel& panel) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << "series,x,y\n";
  for (const auto& s : panel.series)
    for (std::size_t k = 0; k < s.x.size(); ++k) out << s.label << ',' << num(s.x[k]) << ',' << num(s.y[k]) << '\n';
}

std::string render_svg(const Panel& panel) {
  constexpr double W = 480, H = 320, L = 60, R = 130, T = 20, B = 45;
  double x0 = 1e300, x1 = -1e300, y0 = 1e300, y1 = -1e300;
  for (const auto& s : panel.series)
    for (std::size_t k = 0; k < s.x.size(); ++k) {
      x0 = std::min(x0, s.x[k]);
      x1 = std::max(x1, s.x[k]);
      y0 = std::min(y0, s.y[k]);
      y1 = std::max(y1, s.y[k]);
    }
  if (x0 > x1) x0 = 0, x1 = 1, y0 = 0, y1 = 1;
  if (x1 - x0 < 1e-12) x0 -= 0.5, x1 += 0.5;
  if (y1 - y0 < 1e-12) y0 -= 0.5, y1 += 0.5;
  auto px = [&](double x) { return L + (x - x0) / (x1 - x0) * (W - L - R); };
  auto py = [&](double y) { return H - B - (y - y0) / (y1 - y0) * (H - T - B); };
  static const char* colors[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"};

  std::ostringstream svg;
  svg << "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n"
      << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H << "\">\n"
      << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
      << "<line x1=\"" << L << "\" y1=\"" << H - B << "\" x2=\"" << W - R << "\" y2=\"" << H - B
      << "\" stroke=\"black\"/>\n"
      << "<line x1=\"" << L << "\" y1=\"" << T << "\" x2=\"" << L << "\" y2=\"" << H - B << "\" stroke=\"black\"/>\n";
  for (int k = 0; k <= 4; ++k) {
    const double xv = x0 + (x1 - x0) * k / 4.0, yv = y0 + (y1 - y0) * k / 4.0;
    svg << "<text x=\"" << px(xv) << "\" y=\"" << H - B + 15 << "\" font-size=\"10\" text-anchor=\"middle\">"
        << num(xv) << "</text>\n";
    svg << "<text x=\"" << L - 5 << "\" y=\"" << py(yv) + 3 << "\" font-size=\"10\" text-anchor=\"end\">" << num(yv)
        << "</text>\n";
  }
  svg << "<text x=\"" << (L + W - R) / 2 << "\" y=\"" << H - 8 << "\" font-size=\"12\" text-anchor=\"middle\">"
      << escape(panel.x_label) << "</text>\n";
  svg << "<text x=\"14\" y=\"" << (T + H - B) / 2 << "\" font-size=\"12\" text-anchor=\"middle\" transform=\"rotate(-90 14 "
      << (T + H - B) / 2 << ")\">" << escape(panel.y_label) << "</text>\n";
  for (std::size_t s = 0; s < panel.series.size(); ++s) {
    const auto& ser = panel.series[s];
    const char* color = colors[s % 6];
    svg << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"1.5\" points=\"";
    for (std::size_t k = 0; k < ser.x.size(); ++k) svg << (k ? " " : "") << px(ser.x[k]) << ',' << py(ser.y[k]);
    svg << "\"/>\n";
    svg << "<text x=\"" << W - R + 8 << "\" y=\"" << T + 14 * (s + 1) << "\" font-size=\"11\" fill=\"" << color << "\">"
        << escape(ser.label) << "</text>\n";
  }
  svg << "</svg>\n";
  return svg.str();
}

std::vector<std::filesystem::path> emit_plots(const std::vector<std::pair<std::string, const EvalReport*>>& reports,
                                              const std::filesystem::path& out_dir) {
  std::filesystem::create_directories(out_dir);
  std::vector<std::filesystem::path> files;
  for (const auto& p : panels_from(reports)) {
    const auto csv = out_dir / (p.name + ".csv");
    write_csv(csv, p);
    const auto svg = out_dir / (p.name + ".svg");
    std::ofstream out(svg);
    if (!out) throw IoError("cannot write " + svg.string());
    out << render_svg(p);
    files.push_back(csv);
    files.push_back(svg);
  }
  return files;
}

}  // namespace maeloc::pipeline
