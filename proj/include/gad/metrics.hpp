#pragma once

#include <map>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>
#include <json.hpp>

#include "gad/core_data.hpp"

namespace gad {

/// Jaccard index of two sorted actor sets; two empty sets score 1.
double group_iou(std::span<const ActorId> gt, std::span<const ActorId> pred);

struct PRPoint {
  double recall{0.0};
  double precision{0.0};
  double confidence{0.0};
};

/// Area under the monotone precision envelope (all-point interpolation).
/// `curve` must be ordered by descending confidence.
double average_precision(std::span<const PRPoint> curve);

struct ClassCounts {
  int true_positives{0};
  int false_positives{0};
  int num_gt{0};
};

struct EvalOptions {
  /// Score each outlier as a singleton group of the no-activity class (0),
  /// which then takes part in the mean like any other class.
  bool outliers_as_singletons{false};
};

struct EvalReport {
  double theta{1.0};
  std::map<int, double> class_ap;        // classes with at least one gt group
  std::map<int, ClassCounts> counts;     // every class seen in gt or predictions
  std::map<int, std::vector<PRPoint>> curves;
  double group_map{0.0};
  double outlier_miou{0.0};
};

/// Group mAP at Group IoU threshold `theta`. Predictions are aligned to
/// clips by clip_id; throws MissingPrediction when a clip has none.
EvalReport group_map(std::span<const Clip> dataset, std::span<const ClipPrediction> preds, double theta,
                     const EvalOptions& opts = {});

/// Mean over clips of the Jaccard index between gt and predicted outliers.
double outlier_miou(std::span<const Clip> dataset, std::span<const ClipPrediction> preds);

/// (C+1) x (C+1) counts; rows are gt classes, columns predicted argmax
/// classes. Class-agnostic greedy matching at Group IoU >= theta, ordered
/// by the highest non-empty class score. Unmatched gt groups count in
/// column 0; unmatched predictions count in row 0.
Eigen::MatrixXi confusion_matrix(std::span<const Clip> dataset, std::span<const ClipPrediction> preds,
                                 double theta = 0.5);

/// Number of activity classes C implied by gt labels and score vectors.
int infer_num_classes(std::span<const Clip> dataset, std::span<const ClipPrediction> preds);

nlohmann::json report_to_json(const EvalReport& report);
nlohmann::json confusion_to_json(const Eigen::MatrixXi& confusion);
std::string report_table(std::span<const EvalReport> reports);
std::string confusion_table(const Eigen::MatrixXi& confusion);

}  // namespace gad
