#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "maeloc/pipeline/evaluate.hpp"

namespace maeloc::pipeline {

struct Series {
  std::string label;
  std::vector<double> x, y;
};

struct Panel {
  std::string name;  // file stem
  std::string x_label, y_label;
  std::vector<Series> series;
};

/// Panels from labelled reports: mae_vs_snr, acc_vs_snr, mae_vs_t60,
/// acc_vs_t60, snr_out_vs_in and error_cdf. One point per evaluated
/// condition; conditions with infinite keys are skipped.
std::vector<Panel> panels_from(const std::vector<std::pair<std::string, const EvalReport*>>& reports);

/// Sorted truncated errors (m) against the fraction of frames at or below.
Series error_cdf(const std::string& label, const EvalReport& report);

/// CSV with header "series,x,y", one row per point.
void write_csv(const std::filesystem::path& path, const Panel& panel);
/// Polyline chart with axes, tick labels and a legend.
std::string render_svg(const Panel& panel);

/// Writes <name>.csv and <name>.svg for every panel; returns the files.
std::vector<std::filesystem::path> emit_plots(const std::vector<std::pair<std::string, const EvalReport*>>& reports,
                                              const std::filesystem::path& out_dir);

}  // namespace maeloc::pipeline
