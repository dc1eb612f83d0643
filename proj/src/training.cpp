#include "gad/training.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <numeric>
#include <sstream>

#include "gad/error.hpp"

namespace gad {

using nn::Matrix;
using nn::Tensor;

namespace {

// Groups usable as positives: at least two in-range members.
std::vector<std::vector<int>> usable_groups(std::span<const std::vector<int>> groups, Eigen::Index n,
                                            const WarnFn& warn) {
  std::vector<std::vector<int>> out;
  for (const auto& g : groups) {
    for (int j : g) {
      if (j < 0 || j >= n) throw ShapeError("consistency_loss: member index out of range");
    }
    if (g.size() < 2) {
      if (warn) warn("consistency_loss: skipping group with fewer than two members");
      continue;
    }
    out.push_back(g);
  }
  return out;
}

Tensor zero_scalar() { return Tensor(Matrix::Zero(1, 1)); }

}  // namespace

AssignmentResult match_groups(std::span<const GroupTarget> targets, const ModelOutput& out) {
  return hungarian(group_matching_cost(targets, out.class_probs(), out.membership_probs()));
}

double group_loss(int target, const Eigen::VectorXd& logits) {
  const int t = target;
  return nn::cross_entropy_rows(Tensor(logits.transpose()), std::span<const int>(&t, 1)).item();
}

double membership_loss(const Eigen::VectorXd& target, const Eigen::VectorXd& probs, double eps) {
  if (target.size() != probs.size()) throw DimError("membership_loss: target and scores differ in length");
  if (target.size() == 0) return 0.0;
  double total = 0.0;
  for (Eigen::Index j = 0; j < target.size(); ++j) {
    const double p = std::clamp(probs(j), eps, 1.0 - eps);
    total += target(j) * std::log(p) + (1.0 - target(j)) * std::log(1.0 - p);
  }
  return -total / static_cast<double>(target.size());
}

double consistency_loss(const Eigen::MatrixXd& embeddings, std::span<const std::vector<int>> groups, double tau,
                        const WarnFn& warn) {
  return consistency_loss(Tensor(embeddings), groups, tau, warn).item();
}

double individual_action_loss(const Eigen::MatrixXd& logits, std::span<const int> labels) {
  return individual_action_loss(Tensor(logits), labels).item();
}

Tensor consistency_loss(const Tensor& embeddings, std::span<const std::vector<int>> groups, double tau,
                        const WarnFn& warn) {
  if (!(tau > 0.0)) throw ShapeError("consistency_loss: tau must be positive");
  const Eigen::Index n = embeddings.rows();
  const auto used = usable_groups(groups, n, warn);
  if (used.empty()) return zero_scalar();

  // Same-group pairs (k != j) in the numerator, every k != j in the denominator.
  Matrix same = Matrix::Zero(n, n);
  Matrix others = Matrix::Ones(n, n);
  others.diagonal().setZero();
  std::vector<std::pair<Eigen::Index, Eigen::Index>> rows;
  for (const auto& g : used) {
    for (int j : g) {
      rows.emplace_back(j, 0);
      for (int k : g) {
        if (k != j) same(j, k) = 1.0;
      }
    }
  }

  const Tensor f = nn::normalize_rows(embeddings);
  const Tensor sim = nn::scale(nn::matmul(f, nn::transpose(f)), 1.0 / tau);
  // Shifting by the largest possible logit keeps exp in range.
  const Tensor e = nn::exp(nn::add_scalar(sim, -1.0 / tau));
  const Tensor num = nn::gather(nn::row_sum(nn::mul(e, Tensor(same))), rows);
  const Tensor den = nn::gather(nn::row_sum(nn::mul(e, Tensor(others))), rows);
  return nn::scale(nn::sum(nn::sub(nn::log(num), nn::log(den))), -1.0);
}

Tensor individual_action_loss(const Tensor& logits, std::span<const int> labels) {
  if (static_cast<Eigen::Index>(labels.size()) != logits.rows()) {
    throw DimError("individual_action_loss: one label per actor required");
  }
  return nn::mean(nn::cross_entropy_rows(logits, labels));
}

std::vector<std::vector<int>> group_indices(const Clip& clip) {
  std::vector<std::vector<int>> out;
  for (const auto& g : clip.groups) {
    auto& idx = out.emplace_back();
    for (ActorId m : g.members) idx.push_back(clip.actor_index(m));
  }
  return out;
}

ClipLoss clip_loss(const ModelOutput& out, const Clip& clip, const LossWeights& weights, const WarnFn& warn) {
  const auto k = static_cast<int>(out.group_logits.rows());
  const auto targets = padded_targets(clip, k);
  if (targets.front().membership.size() != out.membership_logits.cols()) {
    throw DimError("clip '" + clip.clip_id + "': model output does not match the actor count");
  }

  ClipLoss res;
  res.matching = match_groups(targets, out);

  std::vector<int> slot_class(static_cast<std::size_t>(k), 0);
  for (std::size_t i = 0; i < targets.size(); ++i) {
    slot_class[static_cast<std::size_t>(res.matching.assignment[i])] = targets[i].activity;
  }
  Matrix slot_weight(k, 1);
  for (int s = 0; s < k; ++s) slot_weight(s, 0) = slot_class[static_cast<std::size_t>(s)] == 0 ? weights.empty_class_weight : 1.0;
  const Tensor l_group = nn::sum(nn::mul(nn::cross_entropy_rows(out.group_logits, slot_class), Tensor(slot_weight)));

  Tensor l_mem = zero_scalar();
  for (std::size_t i = 0; i < targets.size(); ++i) {
    if (targets[i].activity == 0) continue;
    const Tensor row = nn::slice(out.membership_logits, 0, res.matching.assignment[i], 1);
    l_mem = nn::add(l_mem, nn::bce_with_logits(row, targets[i].membership.transpose()));
  }

  const auto groups = group_indices(clip);
  const Tensor l_con = consistency_loss(out.actor_embeddings, groups, weights.tau, warn);
  const auto labels = clip.actor_labels();
  const Tensor l_ind = individual_action_loss(out.actor_logits, labels);

  res.total = nn::add(nn::add(l_ind, l_group),
                      nn::add(nn::scale(l_mem, weights.lambda_mem), nn::scale(l_con, weights.lambda_con)));
  res.parts = {l_ind.item(), l_group.item(), l_mem.item(), l_con.item(), res.total.item()};
  return res;
}

double learning_rate(const Schedule& schedule, int epoch) {
  if (epoch < schedule.warmup_epochs) {
    return schedule.lr * (0.1 + 0.9 * static_cast<double>(epoch) / schedule.warmup_epochs);
  }
  const int decay = schedule.epochs - schedule.warmup_epochs;
  if (decay <= 0) return schedule.lr;
  return schedule.lr * static_cast<double>(schedule.epochs - epoch) / decay;
}

std::vector<LossBreakdown> train(GroupingTransformer& model, std::span<const Clip> clips,
                                 std::span<const ClipFeatures> features, const Schedule& schedule,
                                 const LossWeights& weights, std::uint64_t seed, const EpochCallback& on_epoch,
                                 const WarnFn& warn) {
  if (schedule.batch < 1) throw ShapeError("train: batch size must be >= 1");
  std::vector<const ClipFeatures*> feats;
  for (const auto& clip : clips) {
    auto it = std::find_if(features.begin(), features.end(),
                           [&](const ClipFeatures& f) { return f.clip_id == clip.clip_id; });
    if (it == features.end()) throw SchemaError("no features for clip '" + clip.clip_id + "'");
    feats.push_back(&*it);
  }

  auto& params = model.params();
  nn::Adam adam;
  SplitMix64 shuffle_rng = SplitMix64::derive(seed, 1);
  std::vector<std::size_t> order(clips.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::vector<LossBreakdown> curve;

  for (int epoch = 0; epoch < schedule.epochs; ++epoch) {
    // Fisher-Yates with our own generator so the order is portable.
    for (std::size_t i = order.size(); i > 1; --i) {
      std::swap(order[i - 1], order[static_cast<std::size_t>(shuffle_rng.uniform_int(0, static_cast<int>(i) - 1))]);
    }
    const double lr = learning_rate(schedule, epoch);
    LossBreakdown epoch_loss;

    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(schedule.batch)) {
      const std::size_t stop = std::min(order.size(), start + static_cast<std::size_t>(schedule.batch));
      const double inv_batch = 1.0 / static_cast<double>(stop - start);
      params.zero_grad();
      for (std::size_t b = start; b < stop; ++b) {
        const std::size_t ci = order[b];
        const Clip& clip = clips[ci];
        const std::uint64_t frame_seed = SplitMix64::derive(seed, 1000003ULL * (epoch + 1) + ci)();
        const auto frames = sample_frames(clip, model.config().num_frames, schedule.sampling, frame_seed);
        const ModelOutput out = model.forward(build_input(clip, *feats[ci], frames));
        if (!out.group_logits.value().allFinite() || !out.membership_logits.value().allFinite()) {
          throw DivergenceError("non-finite model output at epoch " + std::to_string(epoch) + " on clip '" +
                                clip.clip_id + "'");
        }
        const ClipLoss loss = clip_loss(out, clip, weights, warn);
        if (!std::isfinite(loss.parts.total)) {
          throw DivergenceError("non-finite loss at epoch " + std::to_string(epoch) + " on clip '" + clip.clip_id + "'");
        }
        nn::backward(nn::scale(loss.total, inv_batch));
        epoch_loss.l_ind += loss.parts.l_ind;
        epoch_loss.l_group += loss.parts.l_group;
        epoch_loss.l_mem += loss.parts.l_mem;
        epoch_loss.l_con += loss.parts.l_con;
        epoch_loss.total += loss.parts.total;
      }
      const double norm = nn::clip_grad_norm(params, schedule.clip_norm);
      if (!std::isfinite(norm)) throw DivergenceError("non-finite gradient norm at epoch " + std::to_string(epoch));
      adam.step(params, lr);
    }

    const double inv = clips.empty() ? 0.0 : 1.0 / static_cast<double>(clips.size());
    epoch_loss.l_ind *= inv;
    epoch_loss.l_group *= inv;
    epoch_loss.l_mem *= inv;
    epoch_loss.l_con *= inv;
    epoch_loss.total *= inv;
    curve.push_back(epoch_loss);
    if (on_epoch) on_epoch(epoch, epoch_loss);
  }
  return curve;
}

std::vector<nn::NamedCheck> model_grad_checks(std::uint64_t seed, double h, double tol) {
  ModelConfig cfg;
  cfg.input_dim = 4;
  cfg.dim = 8;
  cfg.num_tokens = 2;
  cfg.num_layers = 1;
  cfg.num_heads = 2;
  cfg.num_classes = 2;
  cfg.num_frames = 2;
  cfg.embed_dim = 8;
  cfg.ffn_dim = 16;
  cfg.scene_tokens = 2;
  GroupingTransformer model(cfg, seed);
  SplitMix64 rng = SplitMix64::derive(seed, 7);

  Clip clip;
  clip.clip_id = "gradcheck";
  clip.frame_size = {100, 100};
  clip.num_frames = cfg.num_frames;
  // Actors 1 and 2 stand together; actor 3 is far enough to be masked out.
  const double xs[] = {10.0, 20.0, 80.0};
  for (int j = 0; j < 3; ++j) {
    Tracklet t;
    t.actor_id = j + 1;
    for (int f = 0; f < cfg.num_frames; ++f) t.boxes.push_back({f, BBox{xs[j], 40.0 + f, xs[j] + 8.0, 60.0 + f}});
    clip.tracklets.push_back(std::move(t));
  }
  clip.groups.push_back({1, {1, 2}, 2});
  clip.outliers = {3};

  ClipFeatures feats;
  feats.clip_id = clip.clip_id;
  for (int f = 0; f < cfg.num_frames; ++f) {
    feats.frames.push_back({nn::normal_matrix(3, cfg.input_dim, 1.0, rng), nn::normal_matrix(2, cfg.input_dim, 1.0, rng)});
  }
  const auto frames = sample_frames(clip, cfg.num_frames);
  const ModelInput input = build_input(clip, feats, frames);
  const auto loss = [&] { return clip_loss(model.forward(input), clip).total; };

  std::vector<nn::NamedCheck> out;
  for (const auto& p : model.params().params()) {
    out.push_back({p.name, nn::grad_check(loss, p.tensor, h, tol)});
  }
  return out;
}

std::string loss_curve_csv(std::span<const LossBreakdown> curve) {
  std::ostringstream os;
  os << std::setprecision(17);
  os << "epoch,l_ind,l_group,l_mem,l_con,total\n";
  for (std::size_t e = 0; e < curve.size(); ++e) {
    const auto& c = curve[e];
    os << e << ',' << c.l_ind << ',' << c.l_group << ',' << c.l_mem << ',' << c.l_con << ',' << c.total << '\n';
  }
  return os.str();
}

}  // namespace gad
