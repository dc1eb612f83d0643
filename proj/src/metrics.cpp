#include "gad/metrics.hpp"

#include <algorithm>
#include <cstdio>
#include <iomanip>
#include <sstream>
#include <unordered_map>

#include "gad/error.hpp"

namespace gad {

namespace {

// Prediction per clip, in dataset order, with members resolved.
std::vector<ClipPrediction> align(std::span<const Clip> dataset, std::span<const ClipPrediction> preds) {
  std::unordered_map<std::string, const ClipPrediction*> by_id;
  for (const auto& p : preds) by_id.emplace(p.clip_id, &p);
  std::vector<ClipPrediction> aligned;
  aligned.reserve(dataset.size());
  for (const auto& clip : dataset) {
    auto it = by_id.find(clip.clip_id);
    if (it == by_id.end()) throw MissingPrediction("no prediction for clip '" + clip.clip_id + "'");
    ClipPrediction p = *it->second;
    if (!p.members_resolved) derive_members(p, clip);
    aligned.push_back(std::move(p));
  }
  return aligned;
}

// Gt groups, optionally extended with outliers as class-0 singletons.
std::vector<GroupAnnotation> scored_gt_groups(const Clip& clip, const EvalOptions& opts) {
  std::vector<GroupAnnotation> groups = clip.groups;
  if (opts.outliers_as_singletons) {
    for (ActorId o : clip.outliers) groups.push_back({-1, {o}, 0});
  }
  return groups;
}

std::vector<GroupPrediction> scored_pred_groups(const ClipPrediction& pred, int num_classes,
                                                const EvalOptions& opts) {
  std::vector<GroupPrediction> groups = pred.groups;
  if (opts.outliers_as_singletons) {
    for (ActorId o : pred.predicted_outliers) {
      GroupPrediction g;
      g.class_scores = Eigen::VectorXd::Zero(num_classes + 1);
      g.class_scores[0] = 1.0;
      g.members = {o};
      groups.push_back(std::move(g));
    }
  }
  return groups;
}

double score_of(const GroupPrediction& g, int c) {
  return c < g.class_scores.size() ? g.class_scores[c] : 0.0;
}

}  // namespace

double group_iou(std::span<const ActorId> gt, std::span<const ActorId> pred) {
  if (gt.empty() && pred.empty()) return 1.0;
  std::size_t inter = 0;
  auto a = gt.begin();
  auto b = pred.begin();
  while (a != gt.end() && b != pred.end()) {
    if (*a < *b) {
      ++a;
    } else if (*b < *a) {
      ++b;
    } else {
      ++inter;
      ++a;
      ++b;
    }
  }
  const std::size_t uni = gt.size() + pred.size() - inter;
  return static_cast<double>(inter) / static_cast<double>(uni);
}

double average_precision(std::span<const PRPoint> curve) {
  if (curve.empty()) return 0.0;
  std::vector<double> mrec{0.0}, mpre{0.0};
  for (const auto& p : curve) {
    mrec.push_back(p.recall);
    mpre.push_back(p.precision);
  }
  mrec.push_back(1.0);
  mpre.push_back(0.0);
  for (std::size_t i = mpre.size() - 1; i > 0; --i) mpre[i - 1] = std::max(mpre[i - 1], mpre[i]);
  double ap = 0.0;
  for (std::size_t i = 1; i < mrec.size(); ++i) {
    if (mrec[i] != mrec[i - 1]) ap += (mrec[i] - mrec[i - 1]) * mpre[i];
  }
  return ap;
}

int infer_num_classes(std::span<const Clip> dataset, std::span<const ClipPrediction> preds) {
  int c = 0;
  for (const auto& clip : dataset) {
    for (const auto& g : clip.groups) c = std::max(c, g.activity);
  }
  for (const auto& p : preds) {
    for (const auto& g : p.groups) c = std::max(c, static_cast<int>(g.class_scores.size()) - 1);
  }
  return c;
}

EvalReport group_map(std::span<const Clip> dataset, std::span<const ClipPrediction> preds, double theta,
                     const EvalOptions& opts) {
  if (!(theta > 0.0 && theta <= 1.0)) throw InvariantError("group_map: theta must lie in (0, 1]");
  const auto aligned = align(dataset, preds);
  const int num_classes = infer_num_classes(dataset, preds);

  std::vector<std::vector<GroupAnnotation>> gt_groups;
  std::vector<std::vector<GroupPrediction>> pred_groups;
  for (std::size_t v = 0; v < dataset.size(); ++v) {
    gt_groups.push_back(scored_gt_groups(dataset[v], opts));
    pred_groups.push_back(scored_pred_groups(aligned[v], num_classes, opts));
  }

  EvalReport report;
  report.theta = theta;
  report.outlier_miou = outlier_miou(dataset, preds);

  struct Detection {
    double confidence;
    const std::string* clip_id;
    std::size_t clip;
    std::size_t group;
  };

  const int first_class = opts.outliers_as_singletons ? 0 : 1;
  double ap_sum = 0.0;
  for (int c = first_class; c <= num_classes; ++c) {
    int num_gt = 0;
    for (const auto& groups : gt_groups) {
      num_gt += static_cast<int>(std::count_if(groups.begin(), groups.end(),
                                               [c](const GroupAnnotation& g) { return g.activity == c; }));
    }
    std::vector<Detection> dets;
    for (std::size_t v = 0; v < pred_groups.size(); ++v) {
      for (std::size_t g = 0; g < pred_groups[v].size(); ++g) {
        dets.push_back({score_of(pred_groups[v][g], c), &dataset[v].clip_id, v, g});
      }
    }
    std::sort(dets.begin(), dets.end(), [](const Detection& a, const Detection& b) {
      if (a.confidence != b.confidence) return a.confidence > b.confidence;
      if (*a.clip_id != *b.clip_id) return *a.clip_id < *b.clip_id;
      return a.group < b.group;
    });

    std::vector<std::vector<char>> matched(gt_groups.size());
    for (std::size_t v = 0; v < gt_groups.size(); ++v) matched[v].assign(gt_groups[v].size(), 0);

    ClassCounts counts;
    counts.num_gt = num_gt;
    std::vector<PRPoint> curve;
    for (const auto& d : dets) {
      const auto& members = pred_groups[d.clip][d.group].members;
      int best = -1;
      double best_iou = -1.0;
      for (std::size_t g = 0; g < gt_groups[d.clip].size(); ++g) {
        const auto& gt = gt_groups[d.clip][g];
        if (gt.activity != c || matched[d.clip][g]) continue;
        const double iou = group_iou(gt.members, members);
        if (iou >= theta && iou > best_iou) {
          best = static_cast<int>(g);
          best_iou = iou;
        }
      }
      if (best >= 0) {
        matched[d.clip][static_cast<std::size_t>(best)] = 1;
        ++counts.true_positives;
      } else {
        ++counts.false_positives;
      }
      const int seen = counts.true_positives + counts.false_positives;
      curve.push_back({num_gt > 0 ? static_cast<double>(counts.true_positives) / num_gt : 0.0,
                       static_cast<double>(counts.true_positives) / seen, d.confidence});
    }
    if (num_gt > 0 || !dets.empty()) report.counts[c] = counts;
    if (num_gt > 0) {
      const double ap = average_precision(curve);
      report.class_ap[c] = ap;
      ap_sum += ap;
    }
    report.curves[c] = std::move(curve);
  }
  report.group_map = report.class_ap.empty() ? 0.0 : ap_sum / static_cast<double>(report.class_ap.size());
  return report;
}

double outlier_miou(std::span<const Clip> dataset, std::span<const ClipPrediction> preds) {
  std::unordered_map<std::string, const ClipPrediction*> by_id;
  for (const auto& p : preds) by_id.emplace(p.clip_id, &p);
  if (dataset.empty()) return 0.0;
  double sum = 0.0;
  for (const auto& clip : dataset) {
    auto it = by_id.find(clip.clip_id);
    if (it == by_id.end()) throw MissingPrediction("no prediction for clip '" + clip.clip_id + "'");
    sum += group_iou(clip.outliers, it->second->predicted_outliers);
  }
  return sum / static_cast<double>(dataset.size());
}

Eigen::MatrixXi confusion_matrix(std::span<const Clip> dataset, std::span<const ClipPrediction> preds,
                                 double theta) {
  const auto aligned = align(dataset, preds);
  const int num_classes = infer_num_classes(dataset, preds);
  Eigen::MatrixXi cm = Eigen::MatrixXi::Zero(num_classes + 1, num_classes + 1);

  for (std::size_t v = 0; v < dataset.size(); ++v) {
    const auto& gts = dataset[v].groups;
    const auto& pgs = aligned[v].groups;
    std::vector<std::size_t> order(pgs.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
      return pgs[a].max_activity_score() > pgs[b].max_activity_score();
    });
    std::vector<char> gt_matched(gts.size(), 0);
    for (std::size_t p : order) {
      int best = -1;
      double best_iou = -1.0;
      for (std::size_t g = 0; g < gts.size(); ++g) {
        if (gt_matched[g]) continue;
        const double iou = group_iou(gts[g].members, pgs[p].members);
        if (iou >= theta && iou > best_iou) {
          best = static_cast<int>(g);
          best_iou = iou;
        }
      }
      const int predicted = pgs[p].argmax_class();
      if (best >= 0) {
        gt_matched[static_cast<std::size_t>(best)] = 1;
        ++cm(gts[static_cast<std::size_t>(best)].activity, predicted);
      } else {
        ++cm(0, predicted);
      }
    }
    for (std::size_t g = 0; g < gts.size(); ++g) {
      if (!gt_matched[g]) ++cm(gts[g].activity, 0);
    }
  }
  return cm;
}

nlohmann::json report_to_json(const EvalReport& report) {
  nlohmann::json classes = nlohmann::json::object();
  for (const auto& [c, counts] : report.counts) {
    nlohmann::json entry = {{"tp", counts.true_positives}, {"fp", counts.false_positives}, {"num_gt", counts.num_gt}};
    if (auto it = report.class_ap.find(c); it != report.class_ap.end()) entry["ap"] = it->second;
    classes[std::to_string(c)] = entry;
  }
  return {{"theta", report.theta},
          {"group_map", report.group_map},
          {"outlier_miou", report.outlier_miou},
          {"classes", classes}};
}

nlohmann::json confusion_to_json(const Eigen::MatrixXi& confusion) {
  nlohmann::json rows = nlohmann::json::array();
  for (Eigen::Index r = 0; r < confusion.rows(); ++r) {
    std::vector<int> row;
    for (Eigen::Index c = 0; c < confusion.cols(); ++c) row.push_back(confusion(r, c));
    rows.push_back(row);
  }
  return rows;
}

std::string report_table(std::span<const EvalReport> reports) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(2);
  os << std::left << std::setw(10) << "theta" << std::right << std::setw(12) << "Group mAP" << std::setw(14)
     << "Outlier mIoU" << '\n';
  for (const auto& r : reports) {
    os << std::left << std::setw(10) << r.theta << std::right << std::setw(12) << 100.0 * r.group_map
       << std::setw(14) << 100.0 * r.outlier_miou << '\n';
  }
  for (const auto& r : reports) {
    os << "\nper-class AP @ theta=" << r.theta << '\n';
    os << std::setw(6) << "class" << std::setw(10) << "AP" << std::setw(6) << "TP" << std::setw(6) << "FP"
       << std::setw(8) << "num_gt" << '\n';
    for (const auto& [c, counts] : r.counts) {
      os << std::setw(6) << c;
      if (auto it = r.class_ap.find(c); it != r.class_ap.end()) {
        os << std::setw(10) << 100.0 * it->second;
      } else {
        os << std::setw(10) << "-";
      }
      os << std::setw(6) << counts.true_positives << std::setw(6) << counts.false_positives << std::setw(8)
         << counts.num_gt << '\n';
    }
  }
  return os.str();
}

std::string confusion_table(const Eigen::MatrixXi& confusion) {
  std::ostringstream os;
  os << std::setw(8) << "gt\\pred";
  for (Eigen::Index c = 0; c < confusion.cols(); ++c) os << std::setw(6) << (c == 0 ? std::string("none") : std::to_string(c));
  os << '\n';
  for (Eigen::Index r = 0; r < confusion.rows(); ++r) {
    os << std::setw(8) << (r == 0 ? std::string("none") : std::to_string(r));
    for (Eigen::Index c = 0; c < confusion.cols(); ++c) os << std::setw(6) << confusion(r, c);
    os << '\n';
  }
  return os.str();
}

}  // namespace gad
