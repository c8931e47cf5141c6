#pragma once

#include <cstdint>
#include <fstream>
#include <functional>
#include <iomanip>
#include <limits>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "cornerformer/metrics.hpp"
#include "cornerformer/model.hpp"
#include "cornerformer/synth.hpp"

namespace cornerformer {

struct StepLosses {
  int step = 0;
  double direct = 0, seg = 0, boost = 0, edge = 0, total = 0;
};

inline std::string csv_header() { return "step,l_direct,l_seg,l_boost,l_edge,total"; }

inline std::string csv_row(const StepLosses& l) {
  std::ostringstream os;
  os << std::setprecision(std::numeric_limits<double>::max_digits10) << l.step << ',' << l.direct << ',' << l.seg
     << ',' << l.boost << ',' << l.edge << ',' << l.total;
  return os.str();
}

struct TrainOptions {
  std::string log_path;         // CSV, empty to skip
  std::string checkpoint_path;  // written every checkpoint_every steps and at the end, empty to skip
  std::function<void(const StepLosses&)> on_step;
};

// Precomputed per-sample inputs.
template <class T>
struct TrainItem {
  Tensor<T> image;
  PlanarGraph graph;
  DirectionHeatmap target;
};

template <class T>
std::vector<TrainItem<T>> prepare_items(const std::vector<Sample>& samples, const Config& cfg) {
  std::vector<TrainItem<T>> items;
  for (const auto& s : samples) {
    if (s.image.width != cfg.image_size || s.image.height != cfg.image_size)
      throw DataError("training sample is " + std::to_string(s.image.width) + "x" + std::to_string(s.image.height) +
                      ", config image_size is " + std::to_string(cfg.image_size));
    items.push_back({image_tensor<T>(s.image), s.graph,
                     encode(s.graph, s.image.height, s.image.width, {cfg.sigma, cfg.seg_width})});
  }
  return items;
}

// The step's random stream depends only on (seed, step), so a resumed run
// draws the same batches and candidates as an uninterrupted one.
inline std::mt19937_64 step_rng(std::uint64_t seed, long long step) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(step), static_cast<std::uint32_t>(static_cast<std::uint64_t>(step) >> 32)};
  return std::mt19937_64(seq);
}

// One optimizer step: mean loss over a batch drawn without replacement.
template <class T>
StepLosses train_step(CornerFormer<T>& model, const std::vector<TrainItem<T>>& items, long long step) {
  const auto& cfg = model.config();
  auto rng = step_rng(cfg.seed, step);
  const std::size_t b = std::min<std::size_t>(static_cast<std::size_t>(cfg.batch), items.size());
  std::vector<std::size_t> order(items.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  for (std::size_t k = 0; k < b; ++k) std::swap(order[k], order[k + uniform_index(rng, order.size() - k)]);

  model.params().zero_grad();
  StepLosses out;
  out.step = static_cast<int>(step + 1);
  const std::vector<T> scale{static_cast<T>(1.0 / static_cast<double>(b))};
  for (std::size_t k = 0; k < b; ++k) {
    const auto& it = items[order[k]];
    auto f = model.forward_train(it.image, it.graph, it.target, rng);
    f.loss.total.backward_with(scale);
    out.direct += f.loss.direct.item() / b;
    out.seg += f.loss.seg.item() / b;
    out.boost += f.loss.boost.item() / b;
    out.edge += f.loss.edge.item() / b;
    out.total += f.loss.total.item() / b;
  }
  adam_step(model.params(), AdamConfig{cfg.lr, cfg.beta1, cfg.beta2, 1e-8});
  return out;
}

// Runs from the model's current optimizer step up to cfg.steps.
template <class T>
std::vector<StepLosses> train(CornerFormer<T>& model, const std::vector<Sample>& samples,
                              const TrainOptions& opt = {}) {
  const auto& cfg = model.config();
  if (samples.empty()) throw DataError("training set is empty");
  const auto items = prepare_items<T>(samples, cfg);
  std::ofstream log;
  const bool resuming = model.params().adam_steps > 0;
  if (!opt.log_path.empty()) {
    log.open(opt.log_path, resuming ? std::ios::app : std::ios::trunc);
    if (!log) throw DataError("cannot write training log " + opt.log_path);
    if (!resuming) log << csv_header() << "\n";
  }
  std::vector<StepLosses> history;
  for (long long step = model.params().adam_steps; step < cfg.steps; ++step) {
    auto l = train_step(model, items, step);
    history.push_back(l);
    if (log) log << csv_row(l) << "\n" << std::flush;
    if (opt.on_step) opt.on_step(l);
    const bool last = step + 1 == cfg.steps;
    if (!opt.checkpoint_path.empty() && (last || (cfg.checkpoint_every > 0 && (step + 1) % cfg.checkpoint_every == 0)))
      model.save(opt.checkpoint_path);
  }
  return history;
}

template <class T>
std::vector<PlanarGraph> predict_all(const CornerFormer<T>& model, const std::vector<Sample>& samples) {
  std::vector<PlanarGraph> out;
  for (const auto& s : samples) out.push_back(model.infer(image_tensor<T>(s.image)).graph);
  return out;
}

template <class T>
EvalReport evaluate_model(const CornerFormer<T>& model, const std::vector<Sample>& samples,
                          const EvalOptions& opt = {}) {
  std::vector<PlanarGraph> gts;
  for (const auto& s : samples) gts.push_back(s.graph);
  return evaluate_dataset(predict_all(model, samples), gts, opt);
}

}  // namespace cornerformer
