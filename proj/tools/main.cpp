#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <string>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "cornerformer/gradcheck.hpp"
#include "cornerformer/metrics.hpp"
#include "cornerformer/model.hpp"
#include "cornerformer/svg.hpp"
#include "cornerformer/synth.hpp"
#include "cornerformer/train.hpp"

namespace cf = cornerformer;
namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitData = 2;
constexpr int kExitCheck = 3;

json config_json(const cf::Config& c) {
  json j = json::object();
  for (const auto& [k, v] : cf::config_items(c)) j[k] = v;
  return j;
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream f(path);
  if (!f) throw cf::DataError("cannot write " + path);
  f << text;
}

cf::Dataset load_or_fail(const std::string& dir) {
  auto ds = cf::load_dataset(dir);
  for (const auto& w : ds.warnings) std::cerr << "warning: " << w << "\n";
  return ds;
}

int cmd_synth(const std::string& out, int n, int size, int difficulty, std::uint64_t seed) {
  const auto samples = cf::generate_dataset(seed, static_cast<std::size_t>(n), size, difficulty);
  cf::save_dataset(out, samples);
  std::size_t corners = 0, edges = 0, regions = 0, tiny = 0, with_tiny = 0;
  for (const auto& s : samples) {
    corners += s.graph.corners.size();
    edges += s.graph.edges.size();
    regions += cf::extract_regions(s.graph).size();
    const auto t = cf::count_tiny_edges(s.graph);
    tiny += t;
    with_tiny += t > 0;
  }
  json summary = {{"samples", n},         {"size", size},          {"difficulty", difficulty}, {"seed", seed},
                  {"corners", corners},   {"edges", edges},        {"regions", regions},       {"tiny_edges", tiny},
                  {"tiny_edge_fraction", edges ? static_cast<double>(tiny) / edges : 0.0},
                  {"samples_with_tiny_edges", with_tiny}};
  write_text((fs::path(out) / "manifest.json").string(), summary.dump(2) + "\n");
  std::cout << "wrote " << n << " samples to " << out << "\n"
            << "corners " << corners << "  edges " << edges << "  regions " << regions << "  tiny edges " << tiny
            << " (" << summary["tiny_edge_fraction"].get<double>() << " of edges)\n";
  return kExitOk;
}

int cmd_train(const std::string& data, const std::string& config_path, const std::string& out,
              const std::string& resume, std::string log_path) {
  auto ds = load_or_fail(data);
  if (ds.samples.empty()) throw cf::DataError("no training samples in " + data);
  if (log_path.empty()) log_path = out + ".csv";
  std::unique_ptr<cf::CornerFormer<float>> model;
  if (!resume.empty()) {
    model = std::make_unique<cf::CornerFormer<float>>(cf::CornerFormer<float>::load(resume));
    if (!config_path.empty()) {
      // Only schedule keys may change on resume; architecture comes from the checkpoint.
      auto cfg = cf::load_config(config_path, model->config());
      auto resumed = cf::CornerFormer<float>(cfg, cfg.seed);
      resumed.load_records(model->to_records());
      model = std::make_unique<cf::CornerFormer<float>>(std::move(resumed));
    }
  } else {
    const auto cfg = config_path.empty() ? cf::Config{} : cf::load_config(config_path);
    model = std::make_unique<cf::CornerFormer<float>>(cfg, cfg.seed);
  }
  write_text(out + ".config.txt", cf::config_to_text(model->config()));
  std::cout << "training " << ds.samples.size() << " samples from step " << model->params().adam_steps << " to "
            << model->config().steps << "\n";
  cf::TrainOptions opt;
  opt.log_path = log_path;
  opt.checkpoint_path = out;
  opt.on_step = [](const cf::StepLosses& l) {
    if (l.step % 50 == 0 || l.step == 1) std::cout << cf::csv_row(l) << "\n" << std::flush;
  };
  cf::train(*model, ds.samples, opt);
  std::cout << "checkpoint " << out << ", log " << log_path << "\n";
  return kExitOk;
}

cf::CornerFormer<float> load_model(const std::string& ckpt, double corner_th, double edge_th) {
  auto model = cf::CornerFormer<float>::load(ckpt);
  if (corner_th >= 0 || edge_th >= 0) {
    auto cfg = model.config();
    if (corner_th >= 0) cfg.corner_threshold = corner_th;
    if (edge_th >= 0) cfg.edge_threshold = edge_th;
    cf::CornerFormer<float> m(cfg, cfg.seed);
    m.load_records(model.to_records(false));
    return m;
  }
  return model;
}

int cmd_infer(const std::string& ckpt, const std::string& image, const std::string& out, const std::string& svg,
              double corner_th, double edge_th) {
  const auto model = load_model(ckpt, corner_th, edge_th);
  const auto img = cf::read_png(image);
  const auto r = model.infer(cf::image_tensor<float>(img));
  auto j = cf::graph_to_json(r.graph);
  json dets = json::array();
  for (const auto& d : r.detections) {
    json dirs = json::array();
    for (auto dir : {cf::Direction::Up, cf::Direction::Down, cf::Direction::Left, cf::Direction::Right})
      if (cf::contains(d.directions, dir)) dirs.push_back(cf::direction_name(dir));
    dets.push_back({{"position", {d.position.x, d.position.y}}, {"score", d.score}, {"directions", dirs}});
  }
  j["detections"] = dets;
  j["config"] = config_json(model.config());
  write_text(out, j.dump(2) + "\n");
  if (!svg.empty()) {
    std::vector<cf::DirectionSet> dirs;
    for (const auto& c : r.graph.corners) {
      cf::DirectionSet s = 0;
      for (const auto& d : r.detections)
        if (d.position == c) s = d.directions;
      dirs.push_back(s);
    }
    write_text(svg, cf::render_overlay_svg(r.graph, dirs, fs::absolute(image).string()));
  }
  std::cout << r.graph.corners.size() << " corners, " << r.graph.edges.size() << " edges -> " << out << "\n";
  return kExitOk;
}

int cmd_eval(const std::string& ckpt, const std::string& data, const std::string& out, const std::string& pred_dir,
             bool macro, double radius, double iou) {
  const auto ds = load_or_fail(data);
  std::vector<cf::PlanarGraph> gts, preds;
  for (const auto& s : ds.samples) gts.push_back(s.graph);
  json config = json::object();
  if (!pred_dir.empty()) {
    for (const auto& stem : ds.stems) preds.push_back(cf::read_graph_json((fs::path(pred_dir) / (stem + ".json")).string()));
    config["predictions"] = pred_dir;
  } else {
    if (ckpt.empty()) throw CLI::ValidationError("eval", "either --ckpt or --pred is required");
    const auto model = cf::CornerFormer<float>::load(ckpt);
    preds = cf::predict_all(model, ds.samples);
    config["model"] = config_json(model.config());
    config["checkpoint"] = ckpt;
  }
  config["data"] = data;
  const auto rep = cf::evaluate_dataset(preds, gts, {radius, iou, macro});
  write_text(out, cf::report_to_json(rep, config).dump(2) + "\n");
  std::cout << cf::report_to_text(rep);
  return kExitOk;
}

int cmd_gradcheck(std::uint64_t seed) {
  bool ok = true;
  for (const auto& r : cf::run_gradcheck_suite(seed)) {
    std::printf("%-22s worst rel. error %.3e  (tol %.0e)  %s\n", r.name.c_str(), r.max_rel_error, r.tolerance,
                r.passed() ? "ok" : "FAIL");
    ok = ok && r.passed();
  }
  return ok ? kExitOk : kExitCheck;
}

int cmd_render_weights(const std::string& ckpt, const std::string& image, const std::string& out) {
  const auto model = cf::CornerFormer<float>::load(ckpt);
  if (!model.config().corner_features) throw cf::DataError(ckpt + ": model was trained without corner features");
  const auto t = cf::image_tensor<float>(cf::read_png(image));
  const auto r = model.infer(t);
  const auto corners = cf::positions(r.detections);
  const auto w = model.corner_weights(t, corners);
  const std::size_t f = static_cast<std::size_t>(model.config().fine_dim);
  // 16 groups when the channel count allows it, otherwise one column per channel
  const std::size_t groups = f % 16 == 0 ? 16 : f;
  const auto merged = cf::merge_channel_groups(std::vector<double>(w.data().begin(), w.data().end()), corners.size(),
                                               cf::kFineLevels, f, groups);
  write_text(out, cf::render_weights_svg(corners, merged));
  std::cout << corners.size() << " corners rendered to " << out << "\n";
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"CornerFormer structured reconstruction"};
  app.require_subcommand(1);

  std::string out, data, config, resume, log, ckpt, image, svg, pred;
  int n = 100, size = 64, difficulty = 1;
  std::uint64_t seed = 0;
  double corner_th = -1, edge_th = -1, radius = -1, iou = 0.7;
  bool macro = false;

  auto* synth = app.add_subcommand("synth", "write a synthetic dataset");
  synth->add_option("--out", out, "output directory")->required();
  synth->add_option("--n", n, "number of samples")->check(CLI::NonNegativeNumber);
  synth->add_option("--size", size, "image size in pixels")->check(CLI::Range(64, 4096));
  synth->add_option("--difficulty", difficulty, "0, 1 or 2")->check(CLI::Range(0, 2));
  synth->add_option("--seed", seed, "random seed");

  auto* train = app.add_subcommand("train", "train a model");
  train->add_option("--data", data, "dataset directory")->required();
  train->add_option("--config", config, "key = value config file");
  train->add_option("--out", out, "checkpoint path")->required();
  train->add_option("--resume", resume, "checkpoint to continue from");
  train->add_option("--log", log, "CSV loss log (default: <out>.csv)");

  auto* infer = app.add_subcommand("infer", "predict a planar graph for one image");
  infer->add_option("--ckpt", ckpt, "checkpoint")->required();
  infer->add_option("--image", image, "PNG image")->required();
  infer->add_option("--out", out, "output JSON")->required();
  infer->add_option("--svg", svg, "optional SVG overlay");
  infer->add_option("--corner-th", corner_th, "corner detection threshold");
  infer->add_option("--edge-th", edge_th, "edge probability threshold");

  auto* eval = app.add_subcommand("eval", "score predictions against a dataset");
  eval->add_option("--ckpt", ckpt, "checkpoint (model mode)");
  eval->add_option("--data", data, "dataset directory")->required();
  eval->add_option("--out", out, "report JSON")->required();
  eval->add_option("--pred", pred, "directory of prediction JSONs named like the dataset");
  eval->add_flag("--macro", macro, "per-sample averaging instead of micro");
  eval->add_option("--corner-radius", radius, "corner match radius in px (default 8 px at 256, scaled)");
  eval->add_option("--iou", iou, "region IoU threshold");

  auto* grad = app.add_subcommand("gradcheck", "finite-difference gradient suite (64-bit)");
  grad->add_option("--seed", seed, "random seed");

  auto* weights = app.add_subcommand("render-weights", "render per-corner layer weights as SVG");
  weights->add_option("--ckpt", ckpt, "checkpoint")->required();
  weights->add_option("--image", image, "PNG image")->required();
  weights->add_option("--out", out, "output SVG")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (*synth) return cmd_synth(out, n, size, difficulty, seed);
    if (*train) return cmd_train(data, config, out, resume, log);
    if (*infer) return cmd_infer(ckpt, image, out, svg, corner_th, edge_th);
    if (*eval) return cmd_eval(ckpt, data, out, pred, macro, radius, iou);
    if (*grad) return cmd_gradcheck(seed);
    if (*weights) return cmd_render_weights(ckpt, image, out);
  } catch (const CLI::ValidationError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const cf::ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitData;
  }
  return kExitUsage;
}
