#pragma once

// Central finite-difference checks of every differentiable primitive and of
// the end-to-end training loss, in 64-bit.

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "cornerformer/model.hpp"

namespace cornerformer {

struct GradCheckResult {
  std::string name;
  double max_rel_error = 0;
  double tolerance = 0;
  bool passed() const { return max_rel_error < tolerance; }
};

inline constexpr double kPrimitiveTolerance = 1e-4;
inline constexpr double kEndToEndTolerance = 1e-3;

// |a - n| / max(|a|, |n|, floor). The floor keeps near-zero derivatives from
// turning round-off into large ratios.
inline double relative_error(double analytic, double numeric, double floor = 1e-3) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), floor});
}

inline double fd_step(double x) { return 1e-6 * std::max(1.0, std::abs(x)); }

namespace detail {

using TD = Tensor<double>;

inline TD random_leaf(std::mt19937_64& rng, Shape shape, double lo = -1, double hi = 1) {
  std::vector<double> v(shape_numel(shape));
  for (auto& x : v) x = lo + (hi - lo) * uniform01(rng);
  return TD::from_data(std::move(shape), std::move(v), true);
}

// Values kept at least `gap` away from integers (kinks of relu / bilinear).
inline TD off_grid_leaf(std::mt19937_64& rng, Shape shape, double lo, double hi, double gap = 1e-3) {
  auto t = random_leaf(rng, std::move(shape), lo, hi);
  for (auto& x : t.mutable_data()) {
    const double f = x - std::floor(x);
    if (f < gap) x += gap;
    if (f > 1 - gap) x -= gap;
  }
  return t;
}

}  // namespace detail

// Checks d/dx of sum(r * f(inputs)) for a fixed random r over every input
// element.
inline GradCheckResult check_gradient(const std::string& name, std::vector<Tensor<double>> inputs,
                                      const std::function<Tensor<double>(const std::vector<Tensor<double>>&)>& f,
                                      std::mt19937_64& rng) {
  const auto y0 = f(inputs);
  std::vector<double> r(y0.numel());
  for (auto& v : r) v = 2 * uniform01(rng) - 1;
  auto objective = [&]() {
    auto y = f(inputs);
    return sum(mul_const(y, std::span<const double>(r)));
  };
  for (auto& in : inputs) in.zero_grad();
  objective().backward();
  GradCheckResult res{name, 0.0, kPrimitiveTolerance};
  for (auto& in : inputs) {
    std::vector<double> analytic(in.grad().begin(), in.grad().end());
    auto x = in.mutable_data();
    for (std::size_t i = 0; i < x.size(); ++i) {
      const double orig = x[i], h = fd_step(orig);
      x[i] = orig + h;
      const double fp = objective().item();
      x[i] = orig - h;
      const double fm = objective().item();
      x[i] = orig;
      res.max_rel_error = std::max(res.max_rel_error, relative_error(analytic[i], (fp - fm) / (2 * h)));
    }
  }
  return res;
}

inline std::vector<GradCheckResult> primitive_gradchecks(std::uint64_t seed) {
  using TD = Tensor<double>;
  using detail::off_grid_leaf;
  using detail::random_leaf;
  using In = std::vector<TD>;
  std::mt19937_64 rng(seed);
  std::vector<GradCheckResult> out;
  auto run = [&](const std::string& name, In in, std::function<TD(const In&)> f) {
    out.push_back(check_gradient(name, std::move(in), f, rng));
  };

  run("add", {random_leaf(rng, {3, 4}), random_leaf(rng, {3, 4})}, [](const In& v) { return add(v[0], v[1]); });
  run("sub", {random_leaf(rng, {3, 4}), random_leaf(rng, {3, 4})}, [](const In& v) { return sub(v[0], v[1]); });
  run("mul", {random_leaf(rng, {3, 4}), random_leaf(rng, {3, 4})}, [](const In& v) { return mul(v[0], v[1]); });
  run("affine", {random_leaf(rng, {2, 5})}, [](const In& v) { return affine(v[0], 1.7, -0.3); });
  run("affine_cols", {random_leaf(rng, {4, 2})},
      [](const In& v) { return affine_cols(v[0], {2.0, -3.0}, {0.5, 1.0}); });
  run("relu", {off_grid_leaf(rng, {4, 5}, -2, 2)}, [](const In& v) { return relu(affine(v[0], 1.0, -0.5)); });
  run("sigmoid", {random_leaf(rng, {3, 5}, -3, 3)}, [](const In& v) { return sigmoid(v[0]); });
  run("tanh", {random_leaf(rng, {3, 5}, -2, 2)}, [](const In& v) { return tanh(v[0]); });
  {
    std::vector<double> c = {0.5, -1.0, 2.0, 0.0, 3.0, 1.5};
    run("mul_const", {random_leaf(rng, {2, 3})},
        [c](const In& v) { return mul_const(v[0], std::span<const double>(c)); });
    std::vector<double> m = {1.0, 0.0, 1.0};
    run("mask_rows", {random_leaf(rng, {3, 2})},
        [m](const In& v) { return mask_rows(v[0], std::span<const double>(m)); });
  }
  run("matmul", {random_leaf(rng, {3, 4}), random_leaf(rng, {4, 2})},
      [](const In& v) { return matmul(v[0], v[1]); });
  run("transpose", {random_leaf(rng, {3, 4})}, [](const In& v) { return transpose(v[0]); });
  run("add_rowvec", {random_leaf(rng, {3, 4}), random_leaf(rng, {1, 4})},
      [](const In& v) { return add_rowvec(v[0], v[1]); });
  run("linear", {random_leaf(rng, {3, 4}), random_leaf(rng, {4, 5}), random_leaf(rng, {5})},
      [](const In& v) { return linear(v[0], v[1], v[2]); });
  run("sum", {random_leaf(rng, {3, 4})}, [](const In& v) { return sum(v[0]); });
  run("mean", {random_leaf(rng, {3, 4})}, [](const In& v) { return mean(v[0]); });
  run("sum_axis", {random_leaf(rng, {2, 3, 4})}, [](const In& v) { return sum_axis(v[0], 1); });
  run("softmax", {random_leaf(rng, {2, 3, 4}, -2, 2)}, [](const In& v) { return softmax(v[0], 1); });
  run("softmax_last", {random_leaf(rng, {3, 5}, -2, 2)}, [](const In& v) { return softmax(v[0], 1); });
  {
    std::vector<unsigned char> valid = {1, 0, 1, 1};
    run("masked_softmax_rows", {random_leaf(rng, {4, 4}, -2, 2)},
        [valid](const In& v) { return masked_softmax_rows(v[0], std::span<const unsigned char>(valid)); });
  }
  run("layer_norm", {random_leaf(rng, {3, 6}), random_leaf(rng, {6}), random_leaf(rng, {6})},
      [](const In& v) { return layer_norm(v[0], v[1], v[2]); });
  run("add_norm",
      {random_leaf(rng, {3, 6}), random_leaf(rng, {3, 6}), random_leaf(rng, {6}), random_leaf(rng, {6})},
      [](const In& v) { return add_norm(v[0], v[1], v[2], v[3]); });
  {
    std::vector<double> t = {1.0, 0.0, 0.3, 0.75, 0.5, 0.0};
    std::vector<double> w = {1.0, 1.0, 0.0, 1.0, 1.0, 1.0};
    run("bce", {random_leaf(rng, {6}, 0.05, 0.95)},
        [t](const In& v) { return bce(v[0], std::span<const double>(t)); });
    run("bce_weighted", {random_leaf(rng, {6}, 0.05, 0.95)},
        [t, w](const In& v) { return bce(v[0], std::span<const double>(t), std::span<const double>(w)); });
  }
  run("reshape", {random_leaf(rng, {2, 6})}, [](const In& v) { return reshape(v[0], {3, 4}); });
  run("concat0", {random_leaf(rng, {2, 3}), random_leaf(rng, {1, 3})},
      [](const In& v) { return concat<double>({v[0], v[1]}, 0); });
  run("concat_last", {random_leaf(rng, {2, 2, 3}), random_leaf(rng, {2, 2, 2})},
      [](const In& v) { return concat<double>({v[0], v[1]}, 2); });
  run("slice", {random_leaf(rng, {3, 5})}, [](const In& v) { return slice(v[0], 1, 1, 3); });
  run("gather_rows", {random_leaf(rng, {4, 3})},
      [](const In& v) { return gather_rows(v[0], {2, 0, 2, 3}); });
  run("conv2d_3x3", {random_leaf(rng, {4, 4, 2}), random_leaf(rng, {3, 3, 2, 3}), random_leaf(rng, {3})},
      [](const In& v) { return conv2d(v[0], v[1], v[2], 1); });
  run("conv2d_3x3_stride2", {random_leaf(rng, {5, 4, 2}), random_leaf(rng, {3, 3, 2, 3}), random_leaf(rng, {3})},
      [](const In& v) { return conv2d(v[0], v[1], v[2], 2); });
  run("conv2d_1x1", {random_leaf(rng, {4, 4, 3}), random_leaf(rng, {1, 1, 3, 2}), random_leaf(rng, {2})},
      [](const In& v) { return conv2d(v[0], v[1], v[2], 1); });
  run("conv2d_1x4x4", {random_leaf(rng, {4, 4, 1}), random_leaf(rng, {3, 3, 1, 1}), random_leaf(rng, {1})},
      [](const In& v) { return conv2d(v[0], v[1], v[2], 1); });
  run("upsample2x_nearest", {random_leaf(rng, {2, 3, 2})}, [](const In& v) { return upsample2x_nearest(v[0]); });
  run("bilinear_sample", {random_leaf(rng, {4, 5, 3}), off_grid_leaf(rng, {6, 2}, -1.5, 5.5)},
      [](const In& v) { return bilinear_sample(v[0], v[1]); });
  run("weighted_group_sum", {random_leaf(rng, {6, 3}), random_leaf(rng, {2, 3})},
      [](const In& v) { return weighted_group_sum(v[0], v[1]); });
  run("shared_subexpression", {random_leaf(rng, {3, 3})}, [](const In& v) {
    auto s = sigmoid(v[0]);
    return add(mul(s, s), matmul(s, v[0]));
  });
  return out;
}

// Tiny model for the end-to-end check.
inline Config gradcheck_config() {
  Config c;
  c.image_size = 32;
  c.channels = {4, 4, 4, 6, 6, 6};
  c.d_model = 16;
  c.fine_dim = 8;
  c.ffn_mult = 2;
  c.heads = 8;
  c.points = 4;
  c.encoder_layers = 1;
  c.pfem_layers = 2;
  c.decoder_layers = 2;
  c.mix_kernel = 3;
  c.candidates = 8;
  return c;
}

// Directional derivative of the total loss along random unit directions in
// parameter space, for a 32x32 image and T = 8 candidates.
inline GradCheckResult end_to_end_gradcheck(std::uint64_t seed, int directions = 20) {
  using TD = Tensor<double>;
  std::mt19937_64 rng(seed);
  CornerFormer<double> model(gradcheck_config(), seed);
  // Leave the zero-initialized projections: nonzero offsets keep samples off
  // texel boundaries, where bilinear interpolation has kinks.
  for (auto& e : model.params().entries())
    for (auto& x : e.value.mutable_data()) x += 0.05 * (2 * uniform01(rng) - 1);

  PlanarGraph g;
  g.width = g.height = 32;
  g.corners = {{6, 7}, {24, 7}, {24, 25}, {6, 25}, {15, 7}};
  g.edges = {{0, 4}, {4, 1}, {1, 2}, {2, 3}, {3, 0}};
  const auto target = encode(g, 32, 32, {});
  std::vector<double> img(32 * 32 * 3);
  for (auto& v : img) v = 2 * uniform01(rng) - 1;
  const auto image = TD::from_data({32, 32, 3}, img);

  auto loss = [&]() {
    std::mt19937_64 cand_rng(seed + 1);
    return model.forward_train(image, g, target, cand_rng).loss.total;
  };
  model.params().zero_grad();
  loss().backward();

  GradCheckResult res{"end_to_end", 0.0, kEndToEndTolerance};
  auto& entries = model.params().entries();
  for (int k = 0; k < directions; ++k) {
    std::vector<std::vector<double>> dir;
    double norm2 = 0;
    for (auto& e : entries) {
      dir.emplace_back(e.value.numel());
      for (auto& v : dir.back()) {
        v = 2 * uniform01(rng) - 1;
        norm2 += v * v;
      }
    }
    const double inv = 1.0 / std::sqrt(norm2);
    double analytic = 0;
    for (std::size_t p = 0; p < entries.size(); ++p) {
      auto gr = entries[p].value.grad();
      for (std::size_t i = 0; i < dir[p].size(); ++i) {
        dir[p][i] *= inv;
        analytic += gr[i] * dir[p][i];
      }
    }
    auto shift = [&](double h) {
      for (std::size_t p = 0; p < entries.size(); ++p) {
        auto w = entries[p].value.mutable_data();
        for (std::size_t i = 0; i < w.size(); ++i) w[i] += h * dir[p][i];
      }
    };
    const double h = 1e-6;
    shift(h);
    const double fp = loss().item();
    shift(-2 * h);
    const double fm = loss().item();
    shift(h);
    res.max_rel_error = std::max(res.max_rel_error, relative_error(analytic, (fp - fm) / (2 * h)));
  }
  return res;
}

inline std::vector<GradCheckResult> run_gradcheck_suite(std::uint64_t seed) {
  auto out = primitive_gradchecks(seed);
  out.push_back(end_to_end_gradcheck(seed));
  return out;
}

}  // namespace cornerformer
