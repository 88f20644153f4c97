// SPDX-License-Identifier: Apache-2.0
#include "osfpi/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <stdexcept>
#include <unordered_map>

#include <fmt/format.h>
#include <fmt/ranges.h>

#include "osfpi/csv.hpp"
#include "osfpi/errors.hpp"

namespace osfpi {

double rds(double dx, double dy, double w, double h, double k) {
  if (!(w > 0.0) || !(h > 0.0)) {
    throw std::invalid_argument(fmt::format("rds: image size {}x{} must be positive", w, h));
  }
  const double nx = dx / w;
  const double ny = dy / h;
  return std::exp(-k * std::sqrt((nx * nx + ny * ny) / 2.0));
}

double pixel_to_meters(double dx, double dy, double w, double coverage_m) {
  return std::hypot(dx, dy) * coverage_m / w;
}

std::map<double, double> ma_curve(std::span<const double> errors_m,
                                  std::span<const double> thresholds) {
  if (errors_m.empty()) {
    throw std::invalid_argument("ma_curve: no errors");
  }
  if (!std::is_sorted(thresholds.begin(), thresholds.end())) {
    throw std::invalid_argument("ma_curve: thresholds must be ascending");
  }
  std::vector<double> sorted(errors_m.begin(), errors_m.end());
  std::sort(sorted.begin(), sorted.end());
  std::map<double, double> curve;
  for (double t : thresholds) {
    const auto below = std::lower_bound(sorted.begin(), sorted.end(), t) - sorted.begin();
    curve[t] = 100.0 * static_cast<double>(below) / static_cast<double>(sorted.size());
  }
  return curve;
}

namespace {

ScaleSummary summarize(std::span<const EvalRecord> records, std::span<const double> thresholds) {
  ScaleSummary s;
  s.count = records.size();
  std::vector<double> errors;
  double rds_sum = 0.0;
  for (const auto& r : records) {
    rds_sum += r.rds;
    errors.push_back(r.error_m);
  }
  s.mean_rds = rds_sum / static_cast<double>(records.size());
  s.ma = ma_curve(errors, thresholds);
  return s;
}

}  // namespace

MetricsReport evaluate_dataset(std::span<const PointPrediction> predictions,
                               std::span<const LocationLabel> labels,
                               std::span<const double> thresholds) {
  if (labels.empty()) {
    throw std::invalid_argument("evaluate_dataset: no labels");
  }
  std::unordered_map<std::string, const PointPrediction*> by_id;
  for (const auto& p : predictions) {
    by_id.emplace(p.sample_id, &p);
  }
  std::vector<std::string> missing;
  MetricsReport report;
  std::unordered_map<std::string, bool> labelled;
  for (const auto& label : labels) {
    labelled.emplace(label.sample_id, true);
    auto it = by_id.find(label.sample_id);
    if (it == by_id.end()) {
      missing.push_back("no prediction for " + label.sample_id);
      continue;
    }
    EvalRecord r;
    r.sample_id = label.sample_id;
    r.dx = std::abs(it->second->x - label.gt_x);
    r.dy = std::abs(it->second->y - label.gt_y);
    r.w = label.w;
    r.h = label.h;
    r.coverage_m = label.coverage_m;
    r.error_m = pixel_to_meters(r.dx, r.dy, label.w, label.coverage_m);
    r.rds = rds(r.dx, r.dy, label.w, label.h);
    report.records.push_back(std::move(r));
  }
  for (const auto& p : predictions) {
    if (!labelled.contains(p.sample_id)) {
      missing.push_back("no label for " + p.sample_id);
    }
  }
  if (!missing.empty()) {
    std::sort(missing.begin(), missing.end());
    throw std::invalid_argument(fmt::format("evaluate_dataset: id mismatch: {}",
                                            fmt::join(missing, "; ")));
  }

  // Aggregate in id order so the result does not depend on input order.
  std::sort(report.records.begin(), report.records.end(),
            [](const EvalRecord& a, const EvalRecord& b) { return a.sample_id < b.sample_id; });
  const auto overall = summarize(report.records, thresholds);
  report.count = overall.count;
  report.mean_rds = overall.mean_rds;
  report.ma = overall.ma;
  double err_sum = 0.0;
  std::map<double, std::vector<EvalRecord>> groups;
  for (const auto& r : report.records) {
    err_sum += r.error_m;
    groups[r.coverage_m].push_back(r);
  }
  report.mean_error_m = err_sum / static_cast<double>(report.records.size());
  for (const auto& [coverage, group] : groups) {
    report.per_scale[coverage] = summarize(group, thresholds);
  }
  return report;
}

namespace {

nlohmann::json ma_json(const std::map<double, double>& ma) {
  nlohmann::json j = nlohmann::json::object();
  for (const auto& [t, pct] : ma) {
    j[fmt::format("{}", t)] = pct;
  }
  return j;
}

}  // namespace

nlohmann::json to_json(const MetricsReport& report) {
  nlohmann::json scales = nlohmann::json::array();
  for (const auto& [coverage, s] : report.per_scale) {
    scales.push_back({{"coverage_m", coverage},
                      {"count", s.count},
                      {"mean_rds", s.mean_rds},
                      {"ma", ma_json(s.ma)}});
  }
  return {{"count", report.count},
          {"mean_rds", report.mean_rds},
          {"mean_error_m", report.mean_error_m},
          {"ma", ma_json(report.ma)},
          {"per_scale", scales}};
}

void write_per_scale_csv(const std::filesystem::path& path, const MetricsReport& report) {
  std::ofstream out(path);
  if (!out) {
    throw IoError(fmt::format("cannot write {}", path.string()));
  }
  out << "coverage_m,count,mean_rds";
  for (const auto& [t, pct] : report.ma) {
    out << fmt::format(",ma_{}m", t);
  }
  out << '\n';
  for (const auto& [coverage, s] : report.per_scale) {
    out << fmt::format("{},{},{}", coverage, s.count, s.mean_rds);
    for (const auto& [t, pct] : s.ma) {
      out << fmt::format(",{}", pct);
    }
    out << '\n';
  }
}

std::vector<PointPrediction> read_predictions_csv(const std::filesystem::path& path) {
  const auto table = CsvTable::read(path);
  const auto id = table.column("sample_id");
  const auto x = table.column("point_x");
  const auto y = table.column("point_y");
  std::vector<PointPrediction> out;
  for (std::size_t r = 0; r < table.rows(); ++r) {
    out.push_back({table.text(r, id), table.number(r, x), table.number(r, y)});
  }
  return out;
}

std::vector<LocationLabel> read_labels_csv(const std::filesystem::path& path) {
  const auto table = CsvTable::read(path);
  const auto id = table.column("sample_id");
  const auto gx = table.column("gt_x");
  const auto gy = table.column("gt_y");
  const auto w = table.column("w");
  const auto h = table.column("h");
  const auto cov = table.column("coverage_m");
  std::vector<LocationLabel> out;
  for (std::size_t r = 0; r < table.rows(); ++r) {
    out.push_back({table.text(r, id), table.number(r, gx), table.number(r, gy),
                   table.number(r, w), table.number(r, h), table.number(r, cov)});
  }
  return out;
}

void write_labels_csv(const std::filesystem::path& path, std::span<const LocationLabel> labels) {
  std::ofstream out(path);
  if (!out) {
    throw IoError(fmt::format("cannot write {}", path.string()));
  }
  out << "sample_id,gt_x,gt_y,w,h,coverage_m\n";
  for (const auto& l : labels) {
    out << fmt::format("{},{},{},{},{},{}\n", l.sample_id, l.gt_x, l.gt_y, l.w, l.h, l.coverage_m);
  }
}

}  // namespace osfpi
