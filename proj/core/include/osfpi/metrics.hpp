// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

namespace osfpi {

/// MA thresholds in meters.
inline const std::vector<double> kDefaultThresholdsM{1, 3, 5, 10, 20, 30, 40, 50};

/// Relative distance score, exp(-k sqrt(((dx/w)^2 + (dy/h)^2) / 2)).
/// Throws std::invalid_argument for nonpositive w or h.
double rds(double dx, double dy, double w, double h, double k = 10.0);

/// Euclidean pixel distance scaled by coverage_m / w (square tiles).
double pixel_to_meters(double dx, double dy, double w, double coverage_m);

/// Percentage of errors strictly below each threshold. Thresholds must be
/// ascending; an empty error list throws std::invalid_argument.
std::map<double, double> ma_curve(std::span<const double> errors_m,
                                  std::span<const double> thresholds);

struct PointPrediction {
  std::string sample_id;
  double x = 0.0;
  double y = 0.0;
};

struct LocationLabel {
  std::string sample_id;
  double gt_x = 0.0;
  double gt_y = 0.0;
  double w = 0.0;
  double h = 0.0;
  double coverage_m = 0.0;
};

struct EvalRecord {
  std::string sample_id;
  double dx = 0.0;
  double dy = 0.0;
  double w = 0.0;
  double h = 0.0;
  double coverage_m = 0.0;
  double error_m = 0.0;
  double rds = 0.0;
};

struct ScaleSummary {
  std::size_t count = 0;
  double mean_rds = 0.0;
  std::map<double, double> ma;
};

struct MetricsReport {
  std::size_t count = 0;
  double mean_rds = 0.0;
  double mean_error_m = 0.0;
  std::map<double, double> ma;
  std::map<double, ScaleSummary> per_scale;  // keyed by coverage_m
  std::vector<EvalRecord> records;           // sorted by sample id
};

/// Matches predictions to labels by id. Throws std::invalid_argument listing
/// the ids missing on either side.
MetricsReport evaluate_dataset(std::span<const PointPrediction> predictions,
                               std::span<const LocationLabel> labels,
                               std::span<const double> thresholds = kDefaultThresholdsM);

nlohmann::json to_json(const MetricsReport& report);

/// coverage_m, count, mean_rds, ma_<t>m... one row per scale.
void write_per_scale_csv(const std::filesystem::path& path, const MetricsReport& report);

/// Columns: sample_id, point_x, point_y (extra columns are ignored).
std::vector<PointPrediction> read_predictions_csv(const std::filesystem::path& path);
/// Columns: sample_id, gt_x, gt_y, w, h, coverage_m.
std::vector<LocationLabel> read_labels_csv(const std::filesystem::path& path);
void write_labels_csv(const std::filesystem::path& path, std::span<const LocationLabel> labels);

}  // namespace osfpi
