#include "gad/grouping_transformer.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>

#include "gad/error.hpp"

namespace gad {

using nn::Matrix;
using nn::Tensor;

namespace {

constexpr const char* kAttentionBlocks[] = {"actor_self", "group_self", "grouping", "actor_cross", "group_cross"};

std::string layer_prefix(int l) { return "layer" + std::to_string(l) + "."; }

void add_linear(nn::ParamSet& ps, const std::string& name, int in, int out, SplitMix64& rng) {
  ps.add(name + ".w", nn::xavier_uniform(in, out, rng));
  ps.add(name + ".b", Matrix::Zero(1, out));
}

void add_norm(nn::ParamSet& ps, const std::string& name, int dim) {
  ps.add(name + ".g", Matrix::Ones(1, dim));
  ps.add(name + ".b", Matrix::Zero(1, dim));
}

class Layers {
 public:
  explicit Layers(const nn::ParamSet& ps) : ps_(ps) {}

  Tensor linear(const std::string& name, const Tensor& x) const {
    return nn::add_row(nn::matmul(x, ps_.get(name + ".w")), ps_.get(name + ".b"));
  }

  Tensor norm(const std::string& name, const Tensor& x) const {
    return nn::layer_norm(x, ps_.get(name + ".g"), ps_.get(name + ".b"));
  }

  Tensor mlp(const std::string& name, const Tensor& x) const {
    return linear(name + ".fc2", nn::gelu(linear(name + ".fc1", x)));
  }

  // Multi-head attention of `queries` over `keys` (both already normalized).
  Tensor attention(const std::string& name, const Tensor& queries, const Tensor& keys, int heads,
                   const nn::BoolMatrix* mask, std::vector<Matrix>* weights) const {
    const Tensor q = nn::matmul(queries, ps_.get(name + ".q"));
    const Tensor k = nn::matmul(keys, ps_.get(name + ".k"));
    const Tensor v = nn::matmul(keys, ps_.get(name + ".v"));
    const auto dh = q.cols() / heads;
    const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));
    std::vector<Tensor> outs;
    outs.reserve(static_cast<std::size_t>(heads));
    for (int h = 0; h < heads; ++h) {
      const Tensor qh = nn::slice(q, 1, h * dh, dh);
      const Tensor kh = nn::slice(k, 1, h * dh, dh);
      const Tensor vh = nn::slice(v, 1, h * dh, dh);
      const Tensor scores = nn::scale(nn::matmul(qh, nn::transpose(kh)), inv_sqrt);
      const Tensor attn = mask ? nn::masked_softmax(scores, *mask) : nn::softmax_rows(scores);
      if (weights) weights->push_back(attn.value());
      outs.push_back(nn::matmul(attn, vh));
    }
    return nn::add_row(nn::matmul(nn::concat(outs, 1), ps_.get(name + ".o.w")), ps_.get(name + ".o.b"));
  }

 private:
  const nn::ParamSet& ps_;
};

nn::Matrix sigmoid_values(const nn::Matrix& x) {
  return x.unaryExpr([](double v) { return v >= 0 ? 1.0 / (1.0 + std::exp(-v)) : std::exp(v) / (1.0 + std::exp(v)); });
}

nn::Matrix softmax_values(const nn::Matrix& x) {
  nn::Matrix y(x.rows(), x.cols());
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    const double mx = x.row(r).maxCoeff();
    for (Eigen::Index c = 0; c < x.cols(); ++c) y(r, c) = std::exp(x(r, c) - mx);
    y.row(r) /= y.row(r).sum();
  }
  return y;
}

}  // namespace

void ModelConfig::validate() const {
  if (num_heads < 1 || dim % num_heads != 0) throw ShapeError("model config: D must be divisible by H");
  if (num_tokens < 1) throw ShapeError("model config: K must be >= 1");
  if (num_layers < 0) throw ShapeError("model config: L must be >= 0");
  if (num_classes < 1) throw ShapeError("model config: C must be >= 1");
  if (num_frames < 1) throw ShapeError("model config: T must be >= 1");
  if (!(mu > 0.0 && mu <= std::numbers::sqrt2 + 1e-12)) throw ShapeError("model config: mu must lie in (0, sqrt 2]");
  if (input_dim < 1 || dim < 1 || embed_dim < 1 || ffn_dim < 1 || scene_tokens < 1) {
    throw ShapeError("model config: widths must be positive");
  }
}

Eigen::MatrixXd ModelOutput::class_probs() const { return softmax_values(group_logits.value()); }

Eigen::MatrixXd ModelOutput::membership_probs() const { return sigmoid_values(membership_logits.value()); }

GroupingTransformer::GroupingTransformer(const ModelConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
  cfg_.validate();
  SplitMix64 rng(seed);
  const int d = cfg.dim;
  auto& ps = params_;

  add_linear(ps, "actor_in", cfg.input_dim, d, rng);
  add_linear(ps, "scene_in", cfg.input_dim, d, rng);
  add_linear(ps, "box_embed", 4, d, rng);
  ps.add("scene_tokens", nn::normal_matrix(cfg.scene_tokens, d, 1.0, rng));
  ps.add("group_tokens", nn::normal_matrix(cfg.num_tokens, d, 1.0, rng));

  for (int l = 0; l < cfg.num_layers; ++l) {
    const std::string pre = layer_prefix(l);
    for (const char* block : kAttentionBlocks) {
      const std::string name = pre + block;
      add_norm(ps, name + ".norm", d);
      ps.add(name + ".q", nn::xavier_uniform(d, d, rng));
      ps.add(name + ".k", nn::xavier_uniform(d, d, rng));
      ps.add(name + ".v", nn::xavier_uniform(d, d, rng));
      add_linear(ps, name + ".o", d, d, rng);
    }
    add_norm(ps, pre + "grouping.key_norm", d);
    add_norm(ps, pre + "actor_cross.key_norm", d);
    add_norm(ps, pre + "group_cross.key_norm", d);
    for (const char* stream : {"actor_ffn", "group_ffn"}) {
      add_norm(ps, pre + stream + ".norm", d);
      add_linear(ps, pre + stream + ".fc1", d, cfg.ffn_dim, rng);
      add_linear(ps, pre + stream + ".fc2", cfg.ffn_dim, d, rng);
    }
  }
  add_norm(ps, "actor_final_norm", d);
  add_norm(ps, "group_final_norm", d);
  add_linear(ps, "actor_cls.fc1", d, d, rng);
  add_linear(ps, "actor_cls.fc2", d, cfg.num_classes + 1, rng);
  add_linear(ps, "group_cls.fc1", d, d, rng);
  add_linear(ps, "group_cls.fc2", d, cfg.num_classes + 1, rng);
  add_linear(ps, "actor_mem.fc1", d, d, rng);
  add_linear(ps, "actor_mem.fc2", d, cfg.embed_dim, rng);
  add_linear(ps, "group_mem.fc1", d, d, rng);
  add_linear(ps, "group_mem.fc2", d, cfg.embed_dim, rng);
}

ModelOutput GroupingTransformer::forward(const ModelInput& input, bool record_attention) const {
  const auto num_frames = input.actor_feats.size();
  if (num_frames == 0) throw ShapeError("forward: no frames");
  if (input.boxes.size() != num_frames) throw ShapeError("forward: boxes and features disagree on T");
  if (!input.scene_feats.empty() && input.scene_feats.size() != num_frames) {
    throw ShapeError("forward: scene features and actor features disagree on T");
  }
  const Eigen::Index n = input.actor_feats.front().rows();
  if (n < 1) throw ShapeError("forward: need at least one actor");

  const Layers nnl(params_);
  const int heads = cfg_.num_heads;
  ModelOutput out;
  std::vector<Tensor> actor_emb, group_emb, actor_logits, group_logits, mem_logits;

  for (std::size_t t = 0; t < num_frames; ++t) {
    const Matrix& feats = input.actor_feats[t];
    const Matrix& boxes = input.boxes[t];
    if (feats.rows() != n || feats.cols() != cfg_.input_dim) {
      throw ShapeError("forward: frame " + std::to_string(t) + " actor features must be " + std::to_string(n) + "x" +
                       std::to_string(cfg_.input_dim));
    }
    if (boxes.rows() != n || boxes.cols() != 4) throw ShapeError("forward: boxes must be N x 4");

    Tensor x = nn::add(nnl.linear("actor_in", Tensor(feats)), nnl.linear("box_embed", Tensor(boxes)));
    Tensor g = params_.get("group_tokens");
    Tensor scene = params_.get("scene_tokens");
    if (!input.scene_feats.empty() && input.scene_feats[t].rows() > 0) {
      if (input.scene_feats[t].cols() != cfg_.input_dim) throw ShapeError("forward: scene features width mismatch");
      scene = nnl.linear("scene_in", Tensor(input.scene_feats[t]));
    }

    nn::BoolMatrix mask;
    const nn::BoolMatrix* mask_ptr = nullptr;
    if (cfg_.use_distance_mask) {
      mask = distance_mask(boxes.leftCols<2>(), cfg_.mu);
      mask_ptr = &mask;
    }

    std::vector<std::vector<Matrix>> frame_attention;
    for (int l = 0; l < cfg_.num_layers; ++l) {
      const std::string pre = layer_prefix(l);
      std::vector<Matrix>* weights = nullptr;
      if (record_attention) weights = &frame_attention.emplace_back();

      // Self-attention within each stream.
      Tensor xn = nnl.norm(pre + "actor_self.norm", x);
      x = nn::add(x, nnl.attention(pre + "actor_self", xn, xn, heads, mask_ptr, weights));
      Tensor gn = nnl.norm(pre + "group_self.norm", g);
      g = nn::add(g, nnl.attention(pre + "group_self", gn, gn, heads, nullptr, nullptr));

      // Grouping attention: group tokens query the actors.
      gn = nnl.norm(pre + "grouping.norm", g);
      const Tensor keys = nnl.norm(pre + "grouping.key_norm", x);
      g = nn::add(g, nnl.attention(pre + "grouping", gn, keys, heads, nullptr, nullptr));

      // Cross-attention of both streams over the scene tokens.
      xn = nnl.norm(pre + "actor_cross.norm", x);
      x = nn::add(x, nnl.attention(pre + "actor_cross", xn, nnl.norm(pre + "actor_cross.key_norm", scene), heads,
                                   nullptr, nullptr));
      gn = nnl.norm(pre + "group_cross.norm", g);
      g = nn::add(g, nnl.attention(pre + "group_cross", gn, nnl.norm(pre + "group_cross.key_norm", scene), heads,
                                   nullptr, nullptr));

      x = nn::add(x, nnl.mlp(pre + "actor_ffn", nnl.norm(pre + "actor_ffn.norm", x)));
      g = nn::add(g, nnl.mlp(pre + "group_ffn", nnl.norm(pre + "group_ffn.norm", g)));
    }
    if (record_attention) out.actor_attention.push_back(std::move(frame_attention));

    x = nnl.norm("actor_final_norm", x);
    g = nnl.norm("group_final_norm", g);
    actor_emb.push_back(x);
    group_emb.push_back(g);
    actor_logits.push_back(nnl.mlp("actor_cls", x));
    group_logits.push_back(nnl.mlp("group_cls", g));
    const Tensor psi = nnl.mlp("actor_mem", x);
    const Tensor phi = nnl.mlp("group_mem", g);
    mem_logits.push_back(nn::matmul(phi, nn::transpose(psi)));
  }

  out.actor_embeddings = nn::average(actor_emb);
  out.group_embeddings = nn::average(group_emb);
  out.actor_logits = nn::average(actor_logits);
  out.group_logits = nn::average(group_logits);
  out.membership_logits = nn::average(mem_logits);
  return out;
}

nn::BoolMatrix distance_mask(const Eigen::MatrixX2d& centers, double mu) {
  const Eigen::Index n = centers.rows();
  nn::BoolMatrix mask(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < n; ++j) {
      mask(i, j) = i == j || (centers.row(i) - centers.row(j)).norm() <= mu;
    }
  }
  return mask;
}

ClipPrediction infer_groups(const ModelOutput& out, std::span<const ActorId> actor_ids, const std::string& clip_id,
                            const InferOptions& opts) {
  const Matrix class_probs = out.class_probs();
  const Matrix member_probs = out.membership_probs();
  const auto n = static_cast<Eigen::Index>(actor_ids.size());
  if (member_probs.cols() != n) throw ShapeError("infer_groups: membership scores do not match the actor list");

  std::vector<Eigen::Index> surviving;
  for (Eigen::Index k = 0; k < class_probs.rows(); ++k) {
    Eigen::Index best = 0;
    class_probs.row(k).maxCoeff(&best);
    if (best != 0) surviving.push_back(k);
  }

  std::vector<std::vector<ActorId>> members(surviving.size());
  ClipPrediction pred;
  pred.clip_id = clip_id;
  for (Eigen::Index j = 0; j < n; ++j) {
    int best = -1;
    for (std::size_t s = 0; s < surviving.size(); ++s) {
      if (best < 0 || member_probs(surviving[s], j) > member_probs(surviving[static_cast<std::size_t>(best)], j)) {
        best = static_cast<int>(s);
      }
    }
    if (best >= 0 && member_probs(surviving[static_cast<std::size_t>(best)], j) >= opts.score_threshold) {
      members[static_cast<std::size_t>(best)].push_back(actor_ids[static_cast<std::size_t>(j)]);
    } else {
      pred.predicted_outliers.push_back(actor_ids[static_cast<std::size_t>(j)]);
    }
  }
  for (std::size_t s = 0; s < surviving.size(); ++s) {
    auto& m = members[s];
    if (m.empty() || (opts.dissolve_small_groups && m.size() < 2)) {
      pred.predicted_outliers.insert(pred.predicted_outliers.end(), m.begin(), m.end());
      continue;
    }
    GroupPrediction gp;
    gp.class_scores = class_probs.row(surviving[s]).transpose();
    gp.member_scores = member_probs.row(surviving[s]).transpose();
    gp.members = std::move(m);
    std::sort(gp.members.begin(), gp.members.end());
    pred.groups.push_back(std::move(gp));
  }
  std::sort(pred.predicted_outliers.begin(), pred.predicted_outliers.end());
  return pred;
}

// ---------------------------------------------------------------------------
// Feature files

namespace {

Matrix rows_to_matrix(const nlohmann::json& rows, const std::string& path) {
  if (!rows.is_array()) throw SchemaError(path + ": expected an array of rows");
  if (rows.empty()) return Matrix(0, 0);
  const auto width = rows[0].size();
  Matrix m(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(width));
  for (std::size_t r = 0; r < rows.size(); ++r) {
    if (!rows[r].is_array() || rows[r].size() != width) throw SchemaError(path + ": ragged rows");
    for (std::size_t c = 0; c < width; ++c) {
      if (!rows[r][c].is_number()) throw SchemaError(path + ": non-numeric entry");
      m(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = rows[r][c].get<double>();
    }
  }
  return m;
}

nlohmann::json matrix_to_rows(const Matrix& m) {
  nlohmann::json rows = nlohmann::json::array();
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    std::vector<double> row(static_cast<std::size_t>(m.cols()));
    for (Eigen::Index c = 0; c < m.cols(); ++c) row[static_cast<std::size_t>(c)] = m(r, c);
    rows.push_back(row);
  }
  return rows;
}

ClipFeatures parse_clip_features(const nlohmann::json& jc, const std::string& path) {
  if (!jc.is_object() || !jc.contains("clip_id") || !jc.contains("frames")) {
    throw SchemaError(path + ": expected {\"clip_id\", \"frames\"}");
  }
  ClipFeatures cf;
  cf.clip_id = jc.at("clip_id").get<std::string>();
  const auto& frames = jc.at("frames");
  if (!frames.is_array()) throw SchemaError(path + ".frames: expected an array");
  for (std::size_t f = 0; f < frames.size(); ++f) {
    const std::string fpath = path + ".frames[" + std::to_string(f) + "]";
    if (!frames[f].contains("actor_feats")) throw SchemaError(fpath + ": missing field 'actor_feats'");
    FrameFeatureRecord rec;
    rec.actor_feats = rows_to_matrix(frames[f].at("actor_feats"), fpath + ".actor_feats");
    if (frames[f].contains("scene_feats")) {
      rec.scene_feats = rows_to_matrix(frames[f].at("scene_feats"), fpath + ".scene_feats");
    }
    cf.frames.push_back(std::move(rec));
  }
  return cf;
}

}  // namespace

std::vector<ClipFeatures> parse_features(const nlohmann::json& doc) {
  std::vector<ClipFeatures> out;
  if (doc.is_object() && doc.contains("clips")) {
    const auto& clips = doc.at("clips");
    if (!clips.is_array()) throw SchemaError("$.clips: expected an array");
    for (std::size_t i = 0; i < clips.size(); ++i) {
      out.push_back(parse_clip_features(clips[i], "$.clips[" + std::to_string(i) + "]"));
    }
  } else if (doc.is_array()) {
    for (std::size_t i = 0; i < doc.size(); ++i) out.push_back(parse_clip_features(doc[i], "$[" + std::to_string(i) + "]"));
  } else {
    out.push_back(parse_clip_features(doc, "$"));
  }
  return out;
}

std::vector<ClipFeatures> load_features(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open " + path.string());
  try {
    return parse_features(nlohmann::json::parse(in));
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
}

nlohmann::json features_to_json(std::span<const ClipFeatures> features) {
  nlohmann::json clips = nlohmann::json::array();
  for (const auto& cf : features) {
    nlohmann::json frames = nlohmann::json::array();
    for (const auto& rec : cf.frames) {
      nlohmann::json jf = {{"actor_feats", matrix_to_rows(rec.actor_feats)}};
      if (rec.scene_feats.size() > 0) jf["scene_feats"] = matrix_to_rows(rec.scene_feats);
      frames.push_back(std::move(jf));
    }
    clips.push_back({{"clip_id", cf.clip_id}, {"frames", frames}});
  }
  return {{"clips", clips}};
}

void save_features(const std::filesystem::path& path, std::span<const ClipFeatures> features) {
  std::ofstream out(path);
  if (!out) throw ParseError("cannot write " + path.string());
  out << features_to_json(features).dump() << '\n';
}

ModelInput build_input(const Clip& clip, const ClipFeatures& features, std::span<const int> frames) {
  if (static_cast<int>(features.frames.size()) != clip.num_frames) {
    throw SchemaError("features for clip '" + clip.clip_id + "' have " + std::to_string(features.frames.size()) +
                      " frames, clip has " + std::to_string(clip.num_frames));
  }
  const auto n = static_cast<Eigen::Index>(clip.tracklets.size());
  ModelInput input;
  for (int f : frames) {
    const auto& rec = features.frames[static_cast<std::size_t>(f)];
    if (rec.actor_feats.rows() != n) {
      throw SchemaError("features for clip '" + clip.clip_id + "' frame " + std::to_string(f) + " have " +
                        std::to_string(rec.actor_feats.rows()) + " actor rows, clip has " + std::to_string(n));
    }
    Matrix boxes(n, 4);
    for (Eigen::Index j = 0; j < n; ++j) {
      const BBox b = normalize_box(clip.tracklets[static_cast<std::size_t>(j)].nearest_box(f), clip.frame_size);
      boxes.row(j) << 0.5 * (b.x1 + b.x2), 0.5 * (b.y1 + b.y2), b.width(), b.height();
    }
    input.actor_feats.push_back(rec.actor_feats);
    input.boxes.push_back(std::move(boxes));
    input.scene_feats.push_back(rec.scene_feats);
  }
  return input;
}

std::vector<ClipPrediction> predict(const GroupingTransformer& model, std::span<const Clip> clips,
                                    std::span<const ClipFeatures> features, const InferOptions& opts) {
  std::vector<ClipPrediction> preds;
  preds.reserve(clips.size());
  for (const auto& clip : clips) {
    auto it = std::find_if(features.begin(), features.end(),
                           [&](const ClipFeatures& f) { return f.clip_id == clip.clip_id; });
    if (it == features.end()) throw SchemaError("no features for clip '" + clip.clip_id + "'");
    const auto frames = sample_frames(clip, model.config().num_frames);
    const ModelOutput out = model.forward(build_input(clip, *it, frames));
    preds.push_back(infer_groups(out, clip.actor_ids(), clip.clip_id, opts));
  }
  return preds;
}

ModelConfig config_from_checkpoint(const nlohmann::json& checkpoint, ModelConfig base) {
  const auto tokens = nn::checkpoint_shape(checkpoint, "group_tokens");
  const auto actor_in = nn::checkpoint_shape(checkpoint, "actor_in.w");
  const auto cls = nn::checkpoint_shape(checkpoint, "group_cls.fc2.w");
  const auto mem = nn::checkpoint_shape(checkpoint, "group_mem.fc2.w");
  const auto scene = nn::checkpoint_shape(checkpoint, "scene_tokens");
  base.num_tokens = static_cast<int>(tokens[0]);
  base.dim = static_cast<int>(tokens[1]);
  base.input_dim = static_cast<int>(actor_in[0]);
  base.num_classes = static_cast<int>(cls[1]) - 1;
  base.embed_dim = static_cast<int>(mem[1]);
  base.scene_tokens = static_cast<int>(scene[0]);
  int layers = 0;
  while (checkpoint.contains(layer_prefix(layers) + "actor_self.q")) ++layers;
  base.num_layers = layers;
  if (layers > 0) base.ffn_dim = static_cast<int>(nn::checkpoint_shape(checkpoint, "layer0.actor_ffn.fc1.w")[1]);
  return base;
}

}  // namespace gad
