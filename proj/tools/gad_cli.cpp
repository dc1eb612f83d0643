// gad: evaluation, statistics, toy training, inference and baselines for
// group activity detection.

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "gad/clustering_baseline.hpp"
#include "gad/core_data.hpp"
#include "gad/dataset_stats.hpp"
#include "gad/error.hpp"
#include "gad/grouping_transformer.hpp"
#include "gad/metrics.hpp"
#include "gad/synthgen.hpp"
#include "gad/training.hpp"

namespace fs = std::filesystem;
using namespace gad;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitInput = 1;
constexpr int kExitNumeric = 2;

void warn(const std::string& msg) { std::cerr << "warning: " << msg << '\n'; }

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw ParseError("cannot write " + path.string());
  out << text;
}

void write_json(const fs::path& path, const nlohmann::json& doc) { write_text(path, doc.dump(2) + "\n"); }

nlohmann::json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open " + path.string());
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
}

int max_activity(std::span<const Clip> clips) {
  int c = 1;
  for (const auto& clip : clips) {
    for (const auto& g : clip.groups) c = std::max(c, g.activity);
  }
  return c;
}

void check_thetas(const std::vector<double>& thetas) {
  for (double t : thetas) {
    if (!(t > 0.0 && t <= 1.0)) throw SchemaError("--theta values must lie in (0, 1]");
  }
}

std::vector<EvalReport> evaluate_all(std::span<const Clip> clips, std::span<const ClipPrediction> preds,
                                     const std::vector<double>& thetas, const EvalOptions& opts = {}) {
  std::vector<EvalReport> reports;
  for (double t : thetas) reports.push_back(group_map(clips, preds, t, opts));
  return reports;
}

// ---------------------------------------------------------------------------

struct ModelFlags {
  int k_tokens{12};
  int layers{6};
  int heads{4};
  int dim{32};
  int frames{5};
  double mu{0.2};
  bool no_mask{false};

  void attach(CLI::App* cmd, bool shapes) {
    if (shapes) {
      cmd->add_option("--k-tokens", k_tokens, "group tokens K")->capture_default_str();
      cmd->add_option("--layers", layers, "transformer layers L")->capture_default_str();
      cmd->add_option("--dim", dim, "model width D")->capture_default_str();
    }
    cmd->add_option("--heads", heads, "attention heads H")->capture_default_str();
    cmd->add_option("--frames", frames, "sampled frames T")->capture_default_str();
    cmd->add_option("--mu", mu, "distance-mask threshold")->capture_default_str();
    cmd->add_flag("--no-distance-mask", no_mask, "disable the actor distance mask");
  }

  ModelConfig apply(ModelConfig cfg) const {
    cfg.num_heads = heads;
    cfg.num_frames = frames;
    cfg.mu = mu;
    cfg.use_distance_mask = !no_mask;
    return cfg;
  }
};

// ---------------------------------------------------------------------------
// evaluate

struct EvaluateArgs {
  std::string gt, pred, json_out;
  std::vector<double> thetas{1.0, 0.5};
  bool singletons{false};
  bool allow_singleton_groups{false};
};

int run_evaluate(const EvaluateArgs& a) {
  check_thetas(a.thetas);
  const auto clips = load_dataset(a.gt, {a.allow_singleton_groups, warn});
  const auto preds = load_predictions(a.pred);
  const auto reports = evaluate_all(clips, preds, a.thetas, {a.singletons});
  const auto confusion = confusion_matrix(clips, preds, 0.5);

  std::cout << report_table(reports) << "\nconfusion @ theta=0.50\n" << confusion_table(confusion);
  if (!a.json_out.empty()) {
    nlohmann::json doc;
    for (const auto& r : reports) doc["reports"].push_back(report_to_json(r));
    doc["outlier_miou"] = reports.empty() ? outlier_miou(clips, preds) : reports.front().outlier_miou;
    doc["confusion"] = confusion_to_json(confusion);
    write_json(a.json_out, doc);
  }
  return kExitOk;
}

// ---------------------------------------------------------------------------
// stats

struct StatsArgs {
  std::string data, out_dir;
  bool allow_singleton_groups{false};
};

int run_stats(const StatsArgs& a) {
  const auto clips = load_dataset(a.data, {a.allow_singleton_groups, warn});
  const auto s = summarize(clips);
  std::cout << stats_to_json(s).dump(2) << '\n';
  if (!a.out_dir.empty()) {
    const fs::path dir(a.out_dir);
    write_json(dir / "stats.json", stats_to_json(s));
    write_text(dir / "group_size.csv", group_size_csv(s));
    write_text(dir / "aspect_ratio.csv", aspect_ratio_csv(s));
    write_text(dir / "actors_per_clip.csv", actors_per_clip_csv(s));
  }
  return kExitOk;
}

// ---------------------------------------------------------------------------
// train-toy

struct TrainArgs {
  std::string data, features, out_dir{"toy_run"};
  int toy_clips{4};
  int classes{0};
  std::uint64_t seed{0};
  Schedule schedule{200, 1e-3, 5, 1};
  LossWeights weights;
  ModelFlags model;
  std::vector<double> thetas{1.0, 0.5};
  bool quiet{false};
};

int run_train(const TrainArgs& a) {
  check_thetas(a.thetas);
  if (a.data.empty() != a.features.empty()) throw SchemaError("--data and --features go together");
  const fs::path dir(a.out_dir);
  fs::create_directories(dir);

  SynthData data;
  int classes = a.classes;
  if (a.data.empty()) {
    SynthSpec spec;
    spec.num_clips = a.toy_clips;
    spec.seed = a.seed;
    if (classes > 0) spec.num_classes = classes;
    data = generate(spec);
    classes = spec.num_classes;
    save_dataset(dir / "toy_data.json", data.clips);
    save_features(dir / "toy_features.json", data.features);
  } else {
    data.clips = load_dataset(a.data, {false, warn});
    data.features = load_features(a.features);
    if (classes <= 0) classes = max_activity(data.clips);
  }
  if (data.features.empty() || data.features.front().frames.empty()) throw SchemaError("no feature frames to train on");

  ModelConfig cfg = a.model.apply({});
  cfg.num_tokens = a.model.k_tokens;
  cfg.num_layers = a.model.layers;
  cfg.dim = a.model.dim;
  cfg.num_classes = classes;
  cfg.input_dim = static_cast<int>(data.features.front().frames.front().actor_feats.cols());
  GroupingTransformer model(cfg, a.seed);

  const auto curve = train(model, data.clips, data.features, a.schedule, a.weights, a.seed,
                           [&](int epoch, const LossBreakdown& l) {
                             if (!a.quiet && (epoch % 10 == 0 || epoch + 1 == a.schedule.epochs)) {
                               std::cerr << "epoch " << epoch << " total " << l.total << '\n';
                             }
                           },
                           warn);
  write_json(dir / "checkpoint.json", nn::params_to_json(model.params()));
  write_text(dir / "loss_curve.csv", loss_curve_csv(curve));

  const auto preds = predict(model, data.clips, data.features);
  save_predictions(dir / "train_predictions.json", preds);
  std::cout << "train-set evaluation\n" << report_table(evaluate_all(data.clips, preds, a.thetas));
  return kExitOk;
}

// ---------------------------------------------------------------------------
// infer

struct InferArgs {
  std::string checkpoint, data, features, out{"predictions.json"};
  ModelFlags model;
  double threshold{0.5};
  bool keep_small{false};
};

int run_infer(const InferArgs& a) {
  const auto ckpt = read_json(a.checkpoint);
  const ModelConfig cfg = config_from_checkpoint(ckpt, a.model.apply({}));
  GroupingTransformer model(cfg);
  nn::load_params_json(model.params(), ckpt);
  const auto clips = load_dataset(a.data, {a.keep_small, warn});
  const auto features = load_features(a.features);
  const auto preds = predict(model, clips, features, {a.threshold, !a.keep_small});
  for (const auto& p : preds) validate_prediction(p);
  save_predictions(a.out, preds);
  std::cout << "wrote " << preds.size() << " clip predictions to " << a.out << '\n';
  return kExitOk;
}

// ---------------------------------------------------------------------------
// baseline

struct BaselineArgs {
  std::string data, features, out{"baseline_predictions.json"}, affinity{"rbf"};
  int k{4};
  double bandwidth{0.1};
  int classes{0};
  std::uint64_t seed{0};
  std::vector<double> thetas{1.0, 0.5};
};

int run_baseline(const BaselineArgs& a) {
  check_thetas(a.thetas);
  if (a.k < 0) throw SchemaError("--k must be >= 0");
  const AffinityKind kind = a.affinity == "cosine" ? AffinityKind::kCosine : AffinityKind::kRbf;
  const auto clips = load_dataset(a.data, {false, warn});
  std::vector<ClipFeatures> features;
  if (kind == AffinityKind::kCosine) {
    if (a.features.empty()) throw SchemaError("--affinity cosine needs --features");
    features = load_features(a.features);
  }
  const int classes = a.classes > 0 ? a.classes : max_activity(clips);

  std::vector<ClipPrediction> preds;
  for (const auto& clip : clips) {
    const auto n = static_cast<Eigen::Index>(clip.tracklets.size());
    Eigen::MatrixXd points;
    if (kind == AffinityKind::kRbf) {
      points.resize(n, 2);
      for (Eigen::Index j = 0; j < n; ++j) {
        points.row(j) = box_center_normalized(key_frame_box(clip.tracklets[static_cast<std::size_t>(j)]),
                                              clip.frame_size).transpose();
      }
    } else {
      auto it = std::find_if(features.begin(), features.end(),
                             [&](const ClipFeatures& f) { return f.clip_id == clip.clip_id; });
      if (it == features.end() || it->frames.empty()) throw SchemaError("no features for clip '" + clip.clip_id + "'");
      points = Eigen::MatrixXd::Zero(n, it->frames.front().actor_feats.cols());
      for (const auto& rec : it->frames) {
        if (rec.actor_feats.rows() != n) throw SchemaError("clip '" + clip.clip_id + "': feature rows != actors");
        points += rec.actor_feats;
      }
      points /= static_cast<double>(it->frames.size());
    }
    int k = a.k == 0 ? static_cast<int>(clip.groups.size() + clip.outliers.size()) : a.k;
    k = std::clamp(k, 1, static_cast<int>(n));
    const auto res = spectral_cluster(build_affinity(points, kind, a.bandwidth), k, a.seed);
    preds.push_back(clusters_to_prediction(clip.clip_id, clip.actor_ids(), res.labels, classes));
  }
  save_predictions(a.out, preds);
  std::cout << report_table(evaluate_all(clips, preds, a.thetas));
  return kExitOk;
}

// ---------------------------------------------------------------------------
// synth

struct SynthArgs {
  SynthSpec spec;
  std::string out_data{"synth_data.json"}, out_features{"synth_features.json"};
};

int run_synth(const SynthArgs& a) {
  const auto data = generate(a.spec);
  save_dataset(a.out_data, data.clips);
  save_features(a.out_features, data.features);
  std::cout << "wrote " << data.clips.size() << " clips to " << a.out_data << " and " << a.out_features << '\n';
  return kExitOk;
}

// ---------------------------------------------------------------------------
// gradcheck

struct GradcheckArgs {
  std::uint64_t seed{0};
  double h{1e-5};
  double tol{1e-3};
};

int run_gradcheck(const GradcheckArgs& a) {
  bool ok = true;
  auto report = [&](const std::string& kind, const std::vector<nn::NamedCheck>& checks) {
    for (const auto& c : checks) {
      ok = ok && c.result.passed;
      std::cout << (c.result.passed ? "PASS " : "FAIL ") << kind << ' ' << std::left << std::setw(36) << c.name
                << " max_rel_err=" << std::scientific << std::setprecision(3) << c.result.max_rel_error
                << std::defaultfloat << '\n';
    }
  };
  report("op   ", nn::check_all_ops(a.seed, a.h, a.tol));
  report("model", model_grad_checks(a.seed, a.h, a.tol));
  std::cout << (ok ? "all gradient checks passed" : "gradient check failed") << '\n';
  return ok ? kExitOk : kExitNumeric;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Group activity detection toolkit"};
  app.require_subcommand(1);

  EvaluateArgs ev;
  auto* evaluate = app.add_subcommand("evaluate", "Group mAP, Outlier mIoU and confusion matrix");
  evaluate->add_option("gt", ev.gt, "ground-truth dataset JSON")->required();
  evaluate->add_option("pred", ev.pred, "prediction JSON")->required();
  evaluate->add_option("--theta", ev.thetas, "Group IoU thresholds")->capture_default_str();
  evaluate->add_option("--json", ev.json_out, "also write the report as JSON");
  evaluate->add_flag("--outliers-as-singletons", ev.singletons, "score outliers as singleton groups");
  evaluate->add_flag("--allow-singleton-groups", ev.allow_singleton_groups, "accept singleton gt groups");

  StatsArgs st;
  auto* stats = app.add_subcommand("stats", "dataset statistics");
  stats->add_option("data", st.data, "dataset JSON")->required();
  stats->add_option("--out-dir", st.out_dir, "write stats.json and CSV histograms here");
  stats->add_flag("--allow-singleton-groups", st.allow_singleton_groups, "accept singleton groups");

  TrainArgs tr;
  auto* train_cmd = app.add_subcommand("train-toy", "train the grouping transformer on a toy or given dataset");
  train_cmd->add_option("--data", tr.data, "dataset JSON (default: synthesize a toy set)");
  train_cmd->add_option("--features", tr.features, "feature JSON matching --data");
  train_cmd->add_option("--toy-clips", tr.toy_clips, "clips in the synthesized toy set")->capture_default_str();
  train_cmd->add_option("--classes", tr.classes, "activity classes C (0: from data)")->capture_default_str();
  train_cmd->add_option("--out-dir", tr.out_dir, "output directory")->capture_default_str();
  train_cmd->add_option("--seed", tr.seed, "seed")->capture_default_str();
  train_cmd->add_option("--epochs", tr.schedule.epochs, "epochs")->capture_default_str();
  train_cmd->add_option("--lr", tr.schedule.lr, "peak learning rate")->capture_default_str();
  train_cmd->add_option("--warmup-epochs", tr.schedule.warmup_epochs, "linear warmup epochs")->capture_default_str();
  train_cmd->add_option("--batch", tr.schedule.batch, "clips per step")->capture_default_str();
  train_cmd->add_option("--lambda-mem", tr.weights.lambda_mem, "membership loss weight")->capture_default_str();
  train_cmd->add_option("--lambda-con", tr.weights.lambda_con, "consistency loss weight")->capture_default_str();
  train_cmd->add_option("--tau", tr.weights.tau, "consistency temperature")->capture_default_str();
  train_cmd->add_option("--empty-weight", tr.weights.empty_class_weight, "weight of no-activity targets")
      ->capture_default_str();
  train_cmd->add_option("--theta", tr.thetas, "thresholds for the final report")->capture_default_str();
  train_cmd->add_flag("--quiet", tr.quiet, "no per-epoch progress");
  tr.model.attach(train_cmd, true);

  InferArgs in;
  auto* infer = app.add_subcommand("infer", "predict groups with a trained checkpoint");
  infer->add_option("--checkpoint", in.checkpoint, "checkpoint JSON")->required();
  infer->add_option("--data", in.data, "dataset JSON")->required();
  infer->add_option("--features", in.features, "feature JSON")->required();
  infer->add_option("--out", in.out, "prediction JSON")->capture_default_str();
  infer->add_option("--score-threshold", in.threshold, "minimum membership score")->capture_default_str();
  infer->add_flag("--keep-small-groups", in.keep_small, "do not dissolve groups with fewer than two members");
  in.model.attach(infer, false);

  BaselineArgs bl;
  auto* baseline = app.add_subcommand("baseline", "spectral-clustering baseline");
  baseline->add_option("--data", bl.data, "dataset JSON")->required();
  baseline->add_option("--features", bl.features, "feature JSON (cosine affinity)");
  baseline->add_option("--k,--k-clusters", bl.k, "clusters per clip (0: #groups + #outliers)")->capture_default_str();
  baseline->add_option("--affinity", bl.affinity, "rbf (box centers) or cosine (features)")
      ->check(CLI::IsMember({"rbf", "cosine"}))
      ->capture_default_str();
  baseline->add_option("--bandwidth", bl.bandwidth, "rbf bandwidth in normalized units")->capture_default_str();
  baseline->add_option("--classes", bl.classes, "activity classes C (0: from data)")->capture_default_str();
  baseline->add_option("--seed", bl.seed, "k-means seed")->capture_default_str();
  baseline->add_option("--out", bl.out, "prediction JSON")->capture_default_str();
  baseline->add_option("--theta", bl.thetas, "thresholds for the report")->capture_default_str();

  SynthArgs sy;
  auto* synth = app.add_subcommand("synth", "generate a synthetic dataset and features");
  synth->add_option("--out-data", sy.out_data, "dataset JSON")->capture_default_str();
  synth->add_option("--out-features", sy.out_features, "feature JSON")->capture_default_str();
  synth->add_option("--clips", sy.spec.num_clips, "clips")->capture_default_str();
  synth->add_option("--min-actors", sy.spec.min_actors)->capture_default_str();
  synth->add_option("--max-actors", sy.spec.max_actors)->capture_default_str();
  synth->add_option("--min-groups", sy.spec.min_groups)->capture_default_str();
  synth->add_option("--max-groups", sy.spec.max_groups)->capture_default_str();
  synth->add_option("--min-group-size", sy.spec.min_group_size)->capture_default_str();
  synth->add_option("--max-group-size", sy.spec.max_group_size)->capture_default_str();
  synth->add_option("--outlier-fraction", sy.spec.outlier_fraction)->capture_default_str();
  synth->add_option("--tightness", sy.spec.tightness)->capture_default_str();
  synth->add_option("--noise", sy.spec.feature_noise, "feature noise")->capture_default_str();
  synth->add_option("--classes", sy.spec.num_classes)->capture_default_str();
  synth->add_option("--feature-dim", sy.spec.feature_dim)->capture_default_str();
  synth->add_option("--frames", sy.spec.num_frames)->capture_default_str();
  synth->add_option("--seed", sy.spec.seed)->capture_default_str();

  GradcheckArgs gc;
  auto* gradcheck = app.add_subcommand("gradcheck", "finite-difference checks of every op and the full model");
  gradcheck->add_option("--seed", gc.seed)->capture_default_str();
  gradcheck->add_option("--step", gc.h, "central-difference step")->capture_default_str();
  gradcheck->add_option("--tol", gc.tol, "relative error tolerance")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitInput;
  }

  try {
    if (*evaluate) return run_evaluate(ev);
    if (*stats) return run_stats(st);
    if (*train_cmd) return run_train(tr);
    if (*infer) return run_infer(in);
    if (*baseline) return run_baseline(bl);
    if (*synth) return run_synth(sy);
    if (*gradcheck) return run_gradcheck(gc);
  } catch (const DivergenceError& e) {
    std::cerr << "numerical failure: " << e.what() << '\n';
    return kExitNumeric;
  } catch (const NonScalarLoss& e) {
    std::cerr << "numerical failure: " << e.what() << '\n';
    return kExitNumeric;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitInput;
  }
  return kExitInput;
}
