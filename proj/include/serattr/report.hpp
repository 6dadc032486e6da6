// Copyright (c) 2026, the serattr authors. All rights reserved.
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

#ifndef SERATTR_REPORT_HPP_
#define SERATTR_REPORT_HPP_

#include <Eigen/Dense>
#include <Eigen/Eigenvalues>
#include <filesystem>
#include <iomanip>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "serattr/csv.hpp"
#include "serattr/training.hpp"

namespace serattr {

struct RunRow {
  std::string name;  // run directory basename
  int epochs_run = 0;
  bool evaluated = false;  // false for an epochs=0 run
  EpochStats best;         // row with the highest balanced mean
};

inline RunRow load_run_row(const std::string& run_dir) {
  const auto hist_path = std::filesystem::path(run_dir) / "history.csv";
  RunRow row;
  row.name = std::filesystem::path(run_dir).filename().string();
  if (row.name.empty()) {
    row.name = std::filesystem::path(run_dir).parent_path().filename().string();
  }

  std::istringstream in(read_text_file(hist_path.string()));
  std::string line;
  if (!std::getline(in, line) || strip_cr(line) != kHistoryHeader) {
    throw ValidationError(hist_path.string() + ": bad or missing history header");
  }
  while (std::getline(in, line)) {
    line = strip_cr(line);
    if (line.empty()) continue;
    auto cells = csv_split(line);
    if (cells.size() != 11) {
      throw ValidationError(hist_path.string() + ": malformed history row");
    }
    EpochStats e;
    auto ep = try_parse_int64(cells[0]);
    if (!ep) throw ValidationError(hist_path.string() + ": bad epoch cell");
    e.epoch = static_cast<int>(*ep);
    std::array<double*, 10> slots{&e.loss_total,  &e.loss_emotion, &e.loss_gender,
                                  &e.loss_speaker, &e.ccc_arousal,  &e.ccc_valence,
                                  &e.ccc_dominance, &e.ccc_average, &e.balanced_mean,
                                  &e.balanced_std};
    for (size_t i = 0; i < slots.size(); ++i) {
      auto v = try_parse_double(cells[i + 1]);
      if (!v) throw ValidationError(hist_path.string() + ": bad numeric cell");
      *slots[i] = *v;
    }
    ++row.epochs_run;
    if (!row.evaluated || e.balanced_mean > row.best.balanced_mean) {
      row.best = e;
      row.evaluated = true;
    }
  }
  return row;
}

namespace detail {

inline std::string fixed4(double v) {
  std::ostringstream out;
  out << std::fixed << std::setprecision(4) << v;
  return out.str();
}

}  // namespace detail

/** Side-by-side best-epoch metrics, one row per run directory. */
inline std::string comparison_table(const std::vector<RunRow>& rows) {
  std::vector<std::array<std::string, 8>> cells;
  cells.push_back({"run", "epochs", "best_epoch", "ccc_arousal", "ccc_valence", "ccc_dominance",
                   "ccc_average", "balanced_ccc"});
  for (const auto& r : rows) {
    if (!r.evaluated) {
      cells.push_back({r.name, std::to_string(r.epochs_run), "-", "-", "-", "-", "-", "-"});
      continue;
    }
    cells.push_back({r.name, std::to_string(r.epochs_run), std::to_string(r.best.epoch),
                     detail::fixed4(r.best.ccc_arousal), detail::fixed4(r.best.ccc_valence),
                     detail::fixed4(r.best.ccc_dominance), detail::fixed4(r.best.ccc_average),
                     detail::fixed4(r.best.balanced_mean)});
  }
  std::array<size_t, 8> width{};
  for (const auto& row : cells) {
    for (size_t c = 0; c < row.size(); ++c) width[c] = std::max(width[c], row[c].size());
  }
  std::ostringstream out;
  for (const auto& row : cells) {
    for (size_t c = 0; c < row.size(); ++c) {
      out << std::left << std::setw(static_cast<int>(width[c]) + 2) << row[c];
    }
    out << '\n';
  }
  return out.str();
}

inline std::string comparison_csv(const std::vector<RunRow>& rows) {
  std::ostringstream out;
  out << "run,epochs,best_epoch,ccc_arousal,ccc_valence,ccc_dominance,ccc_average,"
         "balanced_ccc_mean,balanced_ccc_std\n";
  for (const auto& r : rows) {
    out << csv_escape(r.name) << ',' << r.epochs_run << ',';
    if (!r.evaluated) {
      out << ",,,,,,\n";
      continue;
    }
    out << r.best.epoch << ',' << format_double(r.best.ccc_arousal) << ','
        << format_double(r.best.ccc_valence) << ',' << format_double(r.best.ccc_dominance) << ','
        << format_double(r.best.ccc_average) << ',' << format_double(r.best.balanced_mean) << ','
        << format_double(r.best.balanced_std) << '\n';
  }
  return out.str();
}

/** PCA onto the top two principal axes. Columns of `points` are samples;
 *  returns a 2 x n matrix in the same column order. */
inline Eigen::MatrixXd pca_project_2d(const Eigen::MatrixXd& points) {
  if (points.cols() < 2 || points.rows() < 2) {
    throw ValidationError("projection: needs at least 2 samples of dimension >= 2");
  }
  Eigen::MatrixXd centered = points.colwise() - points.rowwise().mean();
  Eigen::MatrixXd cov = centered * centered.transpose() / static_cast<double>(points.cols());
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(cov);
  // Eigenvalues ascend; the last two columns span the dominant plane.
  const Eigen::Index d = cov.rows();
  Eigen::MatrixXd basis(d, 2);
  basis.col(0) = es.eigenvectors().col(d - 1);
  basis.col(1) = es.eigenvectors().col(d - 2);
  return basis.transpose() * centered;
}

struct ProjectedPoint {
  std::string id;
  std::string label;
  double x = 0.0;
  double y = 0.0;
};

inline std::string projection_to_csv(const std::vector<ProjectedPoint>& pts) {
  std::ostringstream out;
  out << "utterance_id,label,x,y\n";
  for (const auto& p : pts) {
    out << csv_escape(p.id) << ',' << csv_escape(p.label) << ',' << format_double(p.x) << ','
        << format_double(p.y) << '\n';
  }
  return out.str();
}

/** Minimal self-contained scatter plot, one color per label. */
inline std::string projection_to_svg(const std::vector<ProjectedPoint>& pts) {
  const int w = 640, h = 480, margin = 40;
  double min_x = 0, max_x = 1, min_y = 0, max_y = 1;
  if (!pts.empty()) {
    min_x = max_x = pts[0].x;
    min_y = max_y = pts[0].y;
    for (const auto& p : pts) {
      min_x = std::min(min_x, p.x);
      max_x = std::max(max_x, p.x);
      min_y = std::min(min_y, p.y);
      max_y = std::max(max_y, p.y);
    }
  }
  if (max_x == min_x) max_x = min_x + 1;
  if (max_y == min_y) max_y = min_y + 1;

  std::map<std::string, int> label_ids;
  for (const auto& p : pts) label_ids.emplace(p.label, 0);
  int next = 0;
  for (auto& [label, idx] : label_ids) idx = next++;

  auto color = [](int idx) {
    static const char* palette[] = {"#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd",
                                    "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf"};
    return std::string(palette[idx % 10]);
  };

  std::ostringstream out;
  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << w << "\" height=\"" << h
      << "\">\n<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  for (const auto& p : pts) {
    const double px = margin + (p.x - min_x) / (max_x - min_x) * (w - 2 * margin);
    const double py = h - margin - (p.y - min_y) / (max_y - min_y) * (h - 2 * margin);
    out << "<circle cx=\"" << detail::fixed4(px) << "\" cy=\"" << detail::fixed4(py)
        << "\" r=\"3\" fill=\"" << color(label_ids[p.label]) << "\"><title>" << p.id << " ("
        << p.label << ")</title></circle>\n";
  }
  int row = 0;
  for (const auto& [label, idx] : label_ids) {
    out << "<circle cx=\"" << w - margin - 100 << "\" cy=\"" << margin + row * 16
        << "\" r=\"4\" fill=\"" << color(idx) << "\"/>"
        << "<text x=\"" << w - margin - 90 << "\" y=\"" << margin + row * 16 + 4
        << "\" font-size=\"12\" font-family=\"sans-serif\">" << label << "</text>\n";
    ++row;
  }
  out << "</svg>\n";
  return out.str();
}

}  // namespace serattr

#endif  // SERATTR_REPORT_HPP_
