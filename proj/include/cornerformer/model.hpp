#pragma once

// The differentiable reconstruction pipeline:
//
//   image -> conv pyramid F^0..F^5
//         -> coarse encoder over F^3..F^5 (deformable self-attention)
//         -> corner decoder: stride-4 patch queries cross-attend to the coarse
//            memory, then fuse back up through F^2, F^1, F^0 into 128-channel
//            fine maps and 4 direction confidence maps + 1 segmentation map
//         -> per-corner features pooled from the fine maps with learned
//            per-channel layer weights
//         -> candidate-edge features, refined by masked self-attention (PFEM)
//         -> edge decoder: deformable cross-attention to the coarse memory
//            around each candidate's midpoint
//         -> one shared classification head for both the PFEM output and the
//            edge decoder output.

#include <array>
#include <cmath>
#include <cstdint>
#include <map>
#include <numbers>
#include <optional>
#include <random>
#include <sstream>
#include <tuple>
#include <string>
#include <vector>

#include "cornerformer/checkpoint.hpp"
#include "cornerformer/config.hpp"
#include "cornerformer/geometry.hpp"
#include "cornerformer/heatmap.hpp"
#include "cornerformer/image.hpp"
#include "cornerformer/params.hpp"
#include "cornerformer/tensor.hpp"

namespace cornerformer {

inline constexpr std::size_t kPyramidLevels = 6;
inline constexpr std::size_t kFineLevels = 3;    // l0..l2
inline constexpr std::size_t kCoarseLevels = 3;  // l3..l5

template <class T>
struct FeaturePyramid {
  std::array<Tensor<T>, kPyramidLevels> levels;  // H/2^l x W/2^l x C^l
};

template <class T>
struct CoarseMemory {
  Tensor<T> tokens;  // sum_l h_l w_l x d, level 3 first, raster order inside a level
  std::array<std::size_t, kCoarseLevels> rows{}, cols{}, start{};
  std::vector<int> level_of_token;
  std::vector<Point> token_position;  // normalized [0, 1)
  std::size_t size() const { return tokens.dim(0); }
};

template <class T>
struct CornerOutputs {
  std::array<Tensor<T>, kFineLevels> fine;  // fine_dim channels each
  Tensor<T> confidence;                    // H x W x 4
  Tensor<T> seg;                           // H x W x 1
};

template <class T>
struct CornerFeatures {
  Tensor<T> features;  // N x fine_dim
  Tensor<T> weights;   // N x 3 x fine_dim, softmax over the layer axis
};

template <class T>
struct ProposalFeatures {
  Tensor<T> features;  // T x d
  Tensor<T> position;  // T x d
};

template <class T>
struct DeformSample {
  Tensor<T> output;   // N x d
  Tensor<T> weights;  // N x (3 * S), joint softmax
  Tensor<T> offsets;  // N x (3 * S * 2), normalized level coordinates
};

template <class T>
struct LossTerms {
  Tensor<T> direct, seg, boost, edge, total;
};

template <class T>
struct TrainForward {
  CornerOutputs<T> corners;
  CandidateSet candidates;
  Tensor<T> boost_prob, edge_prob;
  LossTerms<T> loss;
};

struct InferenceResult {
  PlanarGraph graph;
  std::vector<CornerDetection> detections;  // all decoded corners, before edge pruning
  CandidateSet candidates;
  std::vector<double> edge_prob;            // per candidate
  DirectionHeatmap heatmap;
};

// Fixed sinusoid of a normalized coordinate: `pairs` (sin, cos) pairs with a
// geometric frequency ladder of base 10000 over the angle 2 pi u.
inline std::vector<double> sine_encoding(double u, std::size_t pairs) {
  std::vector<double> out(2 * pairs);
  for (std::size_t k = 0; k < pairs; ++k) {
    const double freq = std::pow(10000.0, -static_cast<double>(k) / static_cast<double>(pairs));
    const double a = 2 * std::numbers::pi * u * freq;
    out[2 * k] = std::sin(a);
    out[2 * k + 1] = std::cos(a);
  }
  return out;
}

// d-vector for a point: x encoding then y encoding, d/4 pairs each.
template <class T>
Tensor<T> point_encoding(const std::vector<Point>& normalized, std::size_t d) {
  std::vector<T> data;
  data.reserve(normalized.size() * d);
  for (const auto& p : normalized) {
    for (double v : sine_encoding(p.x, d / 4)) data.push_back(static_cast<T>(v));
    for (double v : sine_encoding(p.y, d / 4)) data.push_back(static_cast<T>(v));
  }
  return Tensor<T>::from_data({normalized.size(), d}, std::move(data));
}

template <class T>
Tensor<T> image_tensor(const Image& img) {
  std::vector<T> data(img.rgb.size());
  for (std::size_t i = 0; i < data.size(); ++i) data[i] = static_cast<T>(img.rgb[i] / 127.5 - 1.0);
  return Tensor<T>::from_data(
      {static_cast<std::size_t>(img.height), static_cast<std::size_t>(img.width), 3}, std::move(data));
}

template <class T>
DirectionHeatmap to_heatmap(const Tensor<T>& confidence, const Tensor<T>& seg) {
  DirectionHeatmap h;
  h.height = static_cast<int>(confidence.dim(0));
  h.width = static_cast<int>(confidence.dim(1));
  h.confidence.assign(confidence.data().begin(), confidence.data().end());
  h.seg.assign(seg.data().begin(), seg.data().end());
  return h;
}

template <class T>
class CornerFormer {
 public:
  explicit CornerFormer(Config cfg, std::uint64_t init_seed = 0) : cfg_(std::move(cfg)) {
    check_config();
    init(init_seed);
  }

  const Config& config() const { return cfg_; }
  ParamStore<T>& params() { return params_; }
  const ParamStore<T>& params() const { return params_; }

  // ---- backbone -----------------------------------------------------------

  FeaturePyramid<T> backbone(const Tensor<T>& image) const {
    if (image.rank() != 3 || image.dim(2) != 3 || image.dim(0) % 32 || image.dim(1) % 32)
      throw DimensionError("backbone: image must be H x W x 3 with H, W divisible by 32, got " +
                           shape_str(image.shape()));
    if (image.dim(0) != static_cast<std::size_t>(cfg_.image_size) ||
        image.dim(1) != static_cast<std::size_t>(cfg_.image_size))
      throw DimensionError("backbone: model is configured for " + std::to_string(cfg_.image_size) +
                           "px images, got " + shape_str(image.shape()));
    FeaturePyramid<T> pyr;
    pyr.levels[0] = relu(conv("backbone.l0.stem", image));
    for (std::size_t l = 1; l < kPyramidLevels; ++l) {
      const std::string p = "backbone.l" + std::to_string(l);
      auto x = relu(conv(p + ".down", pyr.levels[l - 1], 2));
      pyr.levels[l] = relu(conv(p + ".conv", x));
    }
    return pyr;
  }

  // ---- coarse encoder -----------------------------------------------------

  CoarseMemory<T> encode_coarse(const FeaturePyramid<T>& pyr) const {
    CoarseMemory<T> mem;
    const std::size_t d = cfg_.d_model;
    std::vector<Tensor<T>> parts;
    std::size_t start = 0;
    for (std::size_t k = 0; k < kCoarseLevels; ++k) {
      const auto& f = pyr.levels[3 + k];
      const std::size_t h = f.dim(0), w = f.dim(1);
      mem.rows[k] = h;
      mem.cols[k] = w;
      mem.start[k] = start;
      start += h * w;
      auto tok = lin("coarse.proj" + std::to_string(3 + k), reshape(f, {h * w, f.dim(2)}));
      parts.push_back(add_rowvec(tok, slice(P("coarse.level_embed"), 0, k, 1)));
      for (std::size_t i = 0; i < h; ++i)
        for (std::size_t j = 0; j < w; ++j) {
          mem.level_of_token.push_back(static_cast<int>(3 + k));
          mem.token_position.push_back({static_cast<double>(j) / w, static_cast<double>(i) / h});
        }
    }
    auto x = concat(parts, 0);
    const auto pos = point_encoding<T>(mem.token_position, d);
    for (int i = 0; i < cfg_.encoder_layers; ++i) {
      const std::string p = "encoder" + std::to_string(i);
      mem.tokens = x;
      auto maps = value_maps(p + ".value", mem);
      auto attn = lin(p + ".out", deform_sample(p, add(x, pos), mem.token_position, maps, mem).output);
      x = norm(p + ".ln1", x, attn);
      x = norm(p + ".ln2", x, ffn(p + ".ffn", x));
    }
    mem.tokens = x;
    return mem;
  }

  // ---- corner decoder -----------------------------------------------------

  CornerOutputs<T> corner_decoder(const FeaturePyramid<T>& pyr, const CoarseMemory<T>& mem) const {
    const auto& b2 = pyr.levels[2];
    const std::size_t h = b2.dim(0), w = b2.dim(1), d = cfg_.d_model;
    std::vector<Point> refs;
    for (std::size_t i = 0; i < h; ++i)
      for (std::size_t j = 0; j < w; ++j) refs.push_back({static_cast<double>(j) / w, static_cast<double>(i) / h});
    auto q = add(P("corner.query_pos"), lin("corner.query_proj", reshape(b2, {h * w, b2.dim(2)})));
    auto maps = value_maps("corner.value", mem);
    auto attn = lin("corner.out", deform_sample("corner", q, refs, maps, mem).output);
    auto x = norm("corner.ln1", q, attn);
    x = norm("corner.ln2", x, ffn("corner.ffn", x));
    auto decoded = reshape(x, {h, w, d});

    CornerOutputs<T> out;
    out.fine[2] = relu(conv("corner.mix2", concat<T>({decoded, b2}, 2)));
    out.fine[1] = relu(conv("corner.mix1", concat<T>({upsample2x_nearest(out.fine[2]), pyr.levels[1]}, 2)));
    out.fine[0] = relu(conv("corner.mix0", concat<T>({upsample2x_nearest(out.fine[1]), pyr.levels[0]}, 2)));
    out.confidence = sigmoid(conv("corner.head_dir", out.fine[0]));
    out.seg = sigmoid(conv("corner.head_seg", out.fine[0]));
    return out;
  }

  // ---- corner feature extractor -------------------------------------------

  // phi^l = F^l_fine sampled at (x / 2^l, y / 2^l); per-channel softmax over
  // the three layers of phi^l W_e; f_e = sum_l A^l * phi^l.
  CornerFeatures<T> extract_corner_features(const std::array<Tensor<T>, kFineLevels>& fine,
                                            const std::vector<Point>& corners) const {
    const std::size_t n = corners.size(), f = cfg_.fine_dim;
    const double limit = static_cast<double>(cfg_.image_size - 1);
    for (const auto& c : corners)
      if (!(c.x >= 0 && c.y >= 0 && c.x <= limit && c.y <= limit))
        throw GraphError("corner feature requested outside the image at (" + std::to_string(c.x) +
                         ", " + std::to_string(c.y) + ")");
    std::vector<Tensor<T>> phi, score;
    for (std::size_t l = 0; l < kFineLevels; ++l) {
      const double s = 1.0 / static_cast<double>(1u << l);
      std::vector<T> pts;
      for (const auto& c : corners) {
        pts.push_back(static_cast<T>(c.x * s));
        pts.push_back(static_cast<T>(c.y * s));
      }
      phi.push_back(bilinear_sample(fine[l], Tensor<T>::from_data({n, 2}, std::move(pts))));
      score.push_back(lin("extractor.score", phi.back()));
    }
    auto weights = softmax(reshape(concat(score, 1), {n, kFineLevels, f}), 1);
    auto stacked = reshape(concat(phi, 1), {n, kFineLevels, f});
    return {sum_axis(mul(weights, stacked), 1), weights};
  }

  // ---- proposal features --------------------------------------------------

  // Per-candidate position embedding from the sinusoid of both endpoints;
  // feature f_v = W_v (f_e1 ; f_e2), or the position embedding alone when
  // corner features are disabled.
  ProposalFeatures<T> build_proposal_features(const CandidateSet& cs, const CornerFeatures<T>* fe) const {
    const std::size_t d = cfg_.d_model;
    std::vector<std::size_t> first, second;
    for (auto [a, b] : cs.pairs) {
      first.push_back(a);
      second.push_back(b);
    }
    std::vector<T> mask(cs.valid.begin(), cs.valid.end());
    std::vector<Point> norm_pts;
    for (const auto& c : cs.corners) norm_pts.push_back(normalized(c));
    if (norm_pts.empty()) norm_pts.push_back({0, 0});  // all slots are padding
    const auto theta = point_encoding<T>(norm_pts, d);
    ProposalFeatures<T> out;
    out.position = mask_rows(lin("proposal.pos", concat<T>({gather_rows(theta, first), gather_rows(theta, second)}, 1)),
                             std::span<const T>(mask));
    if (cfg_.corner_features) {
      if (!fe) throw std::invalid_argument("build_proposal_features: corner features required");
      out.features = mask_rows(
          lin("proposal.feat", concat<T>({gather_rows(fe->features, first), gather_rows(fe->features, second)}, 1)),
          std::span<const T>(mask));
    } else {
      out.features = out.position;
    }
    return out;
  }

  // ---- PFEM ---------------------------------------------------------------

  struct AttentionTrace {
    std::vector<Tensor<T>> rows;  // per layer and head, T x T
  };

  Tensor<T> pfem(const Tensor<T>& features, const Tensor<T>& position,
                 std::span<const unsigned char> valid, AttentionTrace* trace = nullptr) const {
    detail::require_same_shape("pfem", features.shape(), position.shape());
    const std::size_t d = cfg_.d_model, heads = cfg_.heads, dh = d / heads;
    const T scale = static_cast<T>(1.0 / std::sqrt(static_cast<double>(d)));
    auto x = features;
    for (int i = 0; i < cfg_.pfem_layers; ++i) {
      const std::string p = "pfem" + std::to_string(i);
      auto qk_in = add(x, position);
      auto q = lin(p + ".q", qk_in), k = lin(p + ".k", qk_in), v = lin(p + ".v", x);
      std::vector<Tensor<T>> head_out;
      for (std::size_t h = 0; h < heads; ++h) {
        auto qh = slice(q, 1, h * dh, dh), kh = slice(k, 1, h * dh, dh), vh = slice(v, 1, h * dh, dh);
        auto a = masked_softmax_rows(affine(matmul(qh, transpose(kh)), scale), valid);
        if (trace) trace->rows.push_back(a);
        head_out.push_back(matmul(a, vh));
      }
      auto self = lin(p + ".m", concat(head_out, 1));
      x = norm(p + ".ln1", x, self);
      x = norm(p + ".ln2", x, ffn("ffn", x));
    }
    return x;
  }

  // ---- edge decoder -------------------------------------------------------

  Tensor<T> edge_decoder(const Tensor<T>& boosted, const Tensor<T>& position, const CandidateSet& cs,
                         const CoarseMemory<T>& mem, std::vector<DeformSample<T>>* trace = nullptr) const {
    std::vector<Point> mids;
    for (auto [a, b] : cs.pairs) {
      if (cs.corners.empty()) {
        mids.push_back({0.5, 0.5});
        continue;
      }
      const auto& p = cs.corners[a];
      const auto& q = cs.corners[b];
      mids.push_back(normalized({(p.x + q.x) / 2, (p.y + q.y) / 2}));
    }
    auto x = boosted;
    for (int i = 0; i < cfg_.decoder_layers; ++i) {
      const std::string p = "decoder" + std::to_string(i);
      auto maps = value_maps(p + ".value", mem);
      auto s = deform_sample(p, add(x, position), mids, maps, mem);
      if (trace) trace->push_back(s);
      x = norm(p + ".ln1", x, s.output);
      x = norm(p + ".ln2", x, ffn("ffn", x));
    }
    return x;
  }

  // Shared head: linear d -> 1 and sigmoid. Returns a T x 1 tensor.
  Tensor<T> classify(const Tensor<T>& f) const { return sigmoid(lin("head", f)); }

  // lambda1 L_direct + lambda2 L_seg + w_boost L_boost + L_edge.
  LossTerms<T> total_loss(const CornerOutputs<T>& co, const Tensor<T>& boost_prob,
                          const Tensor<T>& edge_prob, const DirectionHeatmap& target,
                          const CandidateSet& cs) const {
    if (!co.confidence.defined() || !co.seg.defined() || !boost_prob.defined() || !edge_prob.defined())
      throw std::invalid_argument("total_loss: every prediction branch is required");
    return combine_losses(co.confidence, co.seg, boost_prob, edge_prob, target, cs, cfg_.lambda_direct,
                          cfg_.lambda_seg, cfg_.boost_weight);
  }

  static LossTerms<T> combine_losses(const Tensor<T>& confidence, const Tensor<T>& seg,
                                     const Tensor<T>& boost_prob, const Tensor<T>& edge_prob,
                                     const DirectionHeatmap& target, const CandidateSet& cs,
                                     double lambda_direct, double lambda_seg, double boost_weight) {
    std::vector<T> conf_t(target.confidence.begin(), target.confidence.end());
    std::vector<T> seg_t(target.seg.begin(), target.seg.end());
    std::vector<T> labels(cs.labels.begin(), cs.labels.end());
    std::vector<T> weights(cs.valid.begin(), cs.valid.end());
    LossTerms<T> l;
    l.direct = bce(confidence, std::span<const T>(conf_t));
    l.seg = bce(seg, std::span<const T>(seg_t));
    l.boost = bce(boost_prob, std::span<const T>(labels), std::span<const T>(weights));
    l.edge = bce(edge_prob, std::span<const T>(labels), std::span<const T>(weights));
    l.total = add(add(affine(l.direct, static_cast<T>(lambda_direct)), affine(l.seg, static_cast<T>(lambda_seg))),
                  add(affine(l.boost, static_cast<T>(boost_weight)), l.edge));
    return l;
  }

  // ---- full passes --------------------------------------------------------

  // Edge stage on a fixed candidate set.
  std::pair<Tensor<T>, Tensor<T>> edge_stage(const CornerOutputs<T>& co, const CoarseMemory<T>& mem,
                                             const CandidateSet& cs) const {
    std::optional<CornerFeatures<T>> fe;
    if (cfg_.corner_features) {
      std::vector<Point> corners = cs.corners;
      if (corners.empty()) corners.push_back({0, 0});
      fe = extract_corner_features(co.fine, corners);
    }
    auto prop = build_proposal_features(cs, fe ? &*fe : nullptr);
    auto boosted = pfem(prop.features, prop.position, cs.valid);
    auto edge = edge_decoder(boosted, prop.position, cs, mem);
    return {classify(boosted), classify(edge)};
  }

  // Training forward for one sample. Candidates come from the current corner
  // predictions bound to the ground truth.
  TrainForward<T> forward_train(const Tensor<T>& image, const PlanarGraph& gt, const DirectionHeatmap& target,
                                std::mt19937_64& rng) const {
    TrainForward<T> out;
    auto pyr = backbone(image);
    auto mem = encode_coarse(pyr);
    out.corners = corner_decoder(pyr, mem);
    DecodeOptions dec{cfg_.corner_threshold, cfg_.cluster_radius, 256};
    auto dets = decode(to_heatmap(out.corners.confidence, out.corners.seg), dec);
    if (dets.size() > static_cast<std::size_t>(cfg_.max_train_corners))
      dets = strongest(std::move(dets), static_cast<std::size_t>(cfg_.max_train_corners));
    out.candidates = build_training_candidates(positions(dets), gt, cfg_.effective_match_radius(),
                                               static_cast<std::size_t>(cfg_.candidates), rng);
    std::tie(out.boost_prob, out.edge_prob) = edge_stage(out.corners, mem, out.candidates);
    out.loss = total_loss(out.corners, out.boost_prob, out.edge_prob, target, out.candidates);
    return out;
  }

  InferenceResult infer(const Tensor<T>& image) const {
    InferenceResult r;
    auto pyr = backbone(image);
    auto mem = encode_coarse(pyr);
    auto co = corner_decoder(pyr, mem);
    r.heatmap = to_heatmap(co.confidence, co.seg);
    r.detections = decode(r.heatmap, {cfg_.corner_threshold, cfg_.cluster_radius, 256});
    if (r.detections.size() > static_cast<std::size_t>(cfg_.max_corners))
      r.detections = strongest(std::move(r.detections), static_cast<std::size_t>(cfg_.max_corners));
    r.graph.width = cfg_.image_size;
    r.graph.height = cfg_.image_size;
    const auto corners = positions(r.detections);
    r.candidates = enumerate_candidates_inference(corners);
    if (r.candidates.pairs.empty()) return r;
    auto [boost_prob, edge_prob] = edge_stage(co, mem, r.candidates);
    r.edge_prob.assign(edge_prob.data().begin(), edge_prob.data().end());
    std::vector<std::size_t> remap(corners.size(), SIZE_MAX);
    for (std::size_t k = 0; k < r.candidates.pairs.size(); ++k) {
      if (r.edge_prob[k] < cfg_.edge_threshold) continue;
      auto [a, b] = r.candidates.pairs[k];
      for (std::size_t c : {a, b})
        if (remap[c] == SIZE_MAX) remap[c] = 0;
    }
    for (std::size_t c = 0; c < corners.size(); ++c)
      if (remap[c] != SIZE_MAX) {
        remap[c] = r.graph.corners.size();
        r.graph.corners.push_back(corners[c]);
      }
    for (std::size_t k = 0; k < r.candidates.pairs.size(); ++k)
      if (r.edge_prob[k] >= cfg_.edge_threshold)
        r.graph.edges.emplace_back(remap[r.candidates.pairs[k].first], remap[r.candidates.pairs[k].second]);
    return r;
  }

  // Per-corner layer weights A (N x 3 x fine_dim) at the given positions.
  Tensor<T> corner_weights(const Tensor<T>& image, const std::vector<Point>& corners) const {
    if (corners.empty()) return Tensor<T>::zeros({0, kFineLevels, static_cast<std::size_t>(cfg_.fine_dim)});
    auto pyr = backbone(image);
    auto co = corner_decoder(pyr, encode_coarse(pyr));
    return extract_corner_features(co.fine, corners).weights;
  }

  // ---- deformable sampling (shared by encoder and both decoders) ----------

  // Each query gets S offsets per coarse level around its reference point
  // (normalized coordinates), bounded to +-offset_scale by tanh, and one
  // joint softmax over all 3 * S samples.
  DeformSample<T> deform_sample(const std::string& p, const Tensor<T>& query, const std::vector<Point>& ref,
                                const std::array<Tensor<T>, kCoarseLevels>& maps, const CoarseMemory<T>& mem) const {
    const std::size_t n = query.dim(0), s = cfg_.points;
    DeformSample<T> r;
    r.offsets = affine(tanh(lin(p + ".offset", query)), static_cast<T>(cfg_.offset_scale));
    r.weights = softmax(lin(p + ".attn", query), 1);
    std::vector<T> rep;
    rep.reserve(n * s * 2);
    for (const auto& pt : ref)
      for (std::size_t k = 0; k < s; ++k) {
        rep.push_back(static_cast<T>(pt.x));
        rep.push_back(static_cast<T>(pt.y));
      }
    const auto ref_t = Tensor<T>::from_data({n * s, 2}, std::move(rep));
    for (std::size_t l = 0; l < kCoarseLevels; ++l) {
      auto off = reshape(slice(r.offsets, 1, l * s * 2, s * 2), {n * s, 2});
      auto pts = affine_cols(add(off, ref_t), {static_cast<T>(mem.cols[l]), static_cast<T>(mem.rows[l])},
                             {T(0), T(0)});
      auto part = weighted_group_sum(bilinear_sample(maps[l], pts), slice(r.weights, 1, l * s, s));
      r.output = l == 0 ? part : add(r.output, part);
    }
    return r;
  }

  std::array<Tensor<T>, kCoarseLevels> value_maps(const std::string& p, const CoarseMemory<T>& mem) const {
    auto v = lin(p, mem.tokens);
    std::array<Tensor<T>, kCoarseLevels> maps;
    for (std::size_t l = 0; l < kCoarseLevels; ++l)
      maps[l] = reshape(slice(v, 0, mem.start[l], mem.rows[l] * mem.cols[l]),
                        {mem.rows[l], mem.cols[l], static_cast<std::size_t>(cfg_.d_model)});
    return maps;
  }

  Point normalized(const Point& p) const {
    return {p.x / cfg_.image_size, p.y / cfg_.image_size};
  }

  // ---- checkpoints --------------------------------------------------------

  // The config travels as its `key = value` text, one character per element,
  // so every value survives exactly.
  std::vector<CheckpointRecord> to_records(bool with_optimizer = true) const {
    std::vector<CheckpointRecord> recs;
    const auto text = config_to_text(cfg_);
    recs.push_back({"config", {text.size()}, std::vector<float>(text.begin(), text.end())});
    for (const auto& e : params_.entries()) {
      auto v = e.value.data();
      recs.push_back({e.name, e.value.shape(), std::vector<float>(v.begin(), v.end())});
      if (with_optimizer && !e.m.empty()) {
        recs.push_back({"adam/m/" + e.name, e.value.shape(), std::vector<float>(e.m.begin(), e.m.end())});
        recs.push_back({"adam/v/" + e.name, e.value.shape(), std::vector<float>(e.v.begin(), e.v.end())});
      }
    }
    if (with_optimizer) recs.push_back({"adam/step", {}, {static_cast<float>(params_.adam_steps)}});
    return recs;
  }

  static Config config_from_records(const std::vector<CheckpointRecord>& recs) {
    for (const auto& r : recs)
      if (r.name == "config") {
        std::string text;
        for (float c : r.data) text.push_back(static_cast<char>(c));
        return parse_config(text);
      }
    throw CheckpointError("checkpoint has no config record");
  }

  void load_records(const std::vector<CheckpointRecord>& recs) {
    std::map<std::string, const CheckpointRecord*> by_name;
    for (const auto& r : recs) by_name[r.name] = &r;
    for (auto& e : params_.entries()) {
      auto it = by_name.find(e.name);
      if (it == by_name.end()) throw CheckpointError("checkpoint lacks parameter '" + e.name + "'");
      if (it->second->shape != e.value.shape())
        throw CheckpointError("parameter '" + e.name + "' has shape " + shape_str(it->second->shape) +
                              " in checkpoint, expected " + shape_str(e.value.shape()));
      auto dst = e.value.mutable_data();
      std::copy(it->second->data.begin(), it->second->data.end(), dst.begin());
      if (auto m = by_name.find("adam/m/" + e.name); m != by_name.end()) {
        e.m.assign(m->second->data.begin(), m->second->data.end());
        e.v.assign(by_name.at("adam/v/" + e.name)->data.begin(), by_name.at("adam/v/" + e.name)->data.end());
      }
    }
    if (auto s = by_name.find("adam/step"); s != by_name.end())
      params_.adam_steps = static_cast<long long>(s->second->data.at(0));
  }

  void save(const std::string& path) const { write_checkpoint(path, to_records()); }

  static CornerFormer load(const std::string& path) {
    const auto recs = read_checkpoint(path);
    CornerFormer m(config_from_records(recs));
    m.load_records(recs);
    return m;
  }

 private:
  const Tensor<T>& P(const std::string& name) const { return params_.get(name); }

  Tensor<T> lin(const std::string& p, const Tensor<T>& x) const { return linear(x, P(p + ".w"), P(p + ".b")); }

  Tensor<T> conv(const std::string& p, const Tensor<T>& x, std::size_t stride = 1) const {
    return conv2d(x, P(p + ".w"), P(p + ".b"), stride);
  }

  Tensor<T> norm(const std::string& p, const Tensor<T>& residual, const Tensor<T>& branch) const {
    return add_norm(residual, branch, P(p + ".g"), P(p + ".b"));
  }

  Tensor<T> ffn(const std::string& p, const Tensor<T>& x) const {
    return lin(p + ".fc2", relu(lin(p + ".fc1", x)));
  }

  static std::vector<CornerDetection> strongest(std::vector<CornerDetection> dets, std::size_t k) {
    std::stable_sort(dets.begin(), dets.end(),
                     [](const CornerDetection& a, const CornerDetection& b) { return a.score > b.score; });
    dets.resize(k);
    return dets;
  }

  void check_config() const {
    if (cfg_.image_size % 32 || cfg_.image_size < 32)
      throw ConfigError("image_size must be a positive multiple of 32");
    if (cfg_.channels.size() != kPyramidLevels) throw ConfigError("channels needs 6 values");
    if (cfg_.d_model % 4) throw ConfigError("d_model must be divisible by 4");
    if (cfg_.heads <= 0 || cfg_.d_model % cfg_.heads)
      throw ConfigError("d_model " + std::to_string(cfg_.d_model) + " is not divisible by heads " +
                        std::to_string(cfg_.heads));
    if (cfg_.mix_kernel != 1 && cfg_.mix_kernel != 3) throw ConfigError("mix_kernel must be 1 or 3");
    if (cfg_.points <= 0) throw ConfigError("points must be positive");
  }

  void init(std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    const std::size_t d = cfg_.d_model, f = cfg_.fine_dim, hid = d * cfg_.ffn_mult, s = cfg_.points;
    const auto& ch = cfg_.channels;
    auto C = [&](std::size_t l) { return static_cast<std::size_t>(ch[l]); };
    auto conv_p = [&](const std::string& p, std::size_t k, std::size_t ci, std::size_t co) {
      params_.kaiming(p + ".w", {k, k, ci, co}, k * k * ci, rng);
      params_.zeros(p + ".b", {co});
    };
    auto lin_p = [&](const std::string& p, std::size_t in, std::size_t out) {
      params_.xavier(p + ".w", {in, out}, in, out, rng);
      params_.zeros(p + ".b", {out});
    };
    auto zero_lin = [&](const std::string& p, std::size_t in, std::size_t out) {
      params_.zeros(p + ".w", {in, out});
      params_.zeros(p + ".b", {out});
    };
    auto ln_p = [&](const std::string& p) {
      params_.constant(p + ".g", {d}, T(1));
      params_.zeros(p + ".b", {d});
    };
    auto ffn_p = [&](const std::string& p) {
      lin_p(p + ".fc1", d, hid);
      lin_p(p + ".fc2", hid, d);
    };
    auto deform_p = [&](const std::string& p) {
      zero_lin(p + ".offset", d, kCoarseLevels * s * 2);
      zero_lin(p + ".attn", d, kCoarseLevels * s);
    };

    conv_p("backbone.l0.stem", 3, 3, C(0));
    for (std::size_t l = 1; l < kPyramidLevels; ++l) {
      const std::string p = "backbone.l" + std::to_string(l);
      conv_p(p + ".down", 3, C(l - 1), C(l));
      conv_p(p + ".conv", 3, C(l), C(l));
    }
    for (std::size_t l = 3; l < kPyramidLevels; ++l) lin_p("coarse.proj" + std::to_string(l), C(l), d);
    params_.xavier("coarse.level_embed", {kCoarseLevels, d}, kCoarseLevels, d, rng);
    for (int i = 0; i < cfg_.encoder_layers; ++i) {
      const std::string p = "encoder" + std::to_string(i);
      lin_p(p + ".value", d, d);
      deform_p(p);
      lin_p(p + ".out", d, d);
      ln_p(p + ".ln1");
      ffn_p(p + ".ffn");
      ln_p(p + ".ln2");
    }

    const std::size_t patches = static_cast<std::size_t>(cfg_.image_size / 4) * (cfg_.image_size / 4);
    params_.xavier("corner.query_pos", {patches, d}, patches, d, rng);
    lin_p("corner.query_proj", C(2), d);
    lin_p("corner.value", d, d);
    deform_p("corner");
    lin_p("corner.out", d, d);
    ln_p("corner.ln1");
    ffn_p("corner.ffn");
    ln_p("corner.ln2");
    const std::size_t mk = cfg_.mix_kernel;
    conv_p("corner.mix2", mk, d + C(2), f);
    conv_p("corner.mix1", mk, f + C(1), f);
    conv_p("corner.mix0", mk, f + C(0), f);
    // Heads start near the sparse-target prior so decoding is quiet at init.
    params_.xavier("corner.head_dir.w", {1, 1, f, kDirections}, f, kDirections, rng);
    params_.constant("corner.head_dir.b", {kDirections}, T(-4));
    params_.xavier("corner.head_seg.w", {1, 1, f, 1}, f, 1, rng);
    params_.constant("corner.head_seg.b", {1}, T(-2));

    if (cfg_.corner_features) {
      lin_p("extractor.score", f, f);
      lin_p("proposal.feat", 2 * f, d);
    }
    lin_p("proposal.pos", 2 * d, d);
    ffn_p("ffn");
    for (int i = 0; i < cfg_.pfem_layers; ++i) {
      const std::string p = "pfem" + std::to_string(i);
      lin_p(p + ".q", d, d);
      lin_p(p + ".k", d, d);
      lin_p(p + ".v", d, d);
      zero_lin(p + ".m", d, d);
      ln_p(p + ".ln1");
      ln_p(p + ".ln2");
    }
    for (int i = 0; i < cfg_.decoder_layers; ++i) {
      const std::string p = "decoder" + std::to_string(i);
      lin_p(p + ".value", d, d);
      deform_p(p);
      ln_p(p + ".ln1");
      ln_p(p + ".ln2");
    }
    lin_p("head", d, 1);
  }

  Config cfg_;
  ParamStore<T> params_;
};

}  // namespace cornerformer
