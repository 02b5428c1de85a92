#include "geosplat/cli.hpp"

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include <cmath>
#include <numbers>
#include <optional>
#include <sstream>

#include "geosplat/error.hpp"
#include "geosplat/formats.hpp"
#include "geosplat/harness.hpp"
#include "geosplat/photometric.hpp"
#include "geosplat/renderer.hpp"

namespace geosplat {

namespace {

using nlohmann::json;

struct Context {
  std::ostream& out;
  std::ostream& err;
  bool as_json = false;
  int threads = 0;

  void report(const json& result, const std::string& text) const {
    if (as_json) out << result.dump() << "\n";
    else out << text;
  }
};

// JSON has no infinity; identical images report PSNR as the string "inf".
json number(double v) {
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  if (std::isnan(v)) return "nan";
  return v;
}

TrainConfig load_config(const std::string& path, const TrainConfig& base, int threads) {
  TrainConfig c = path.empty() ? base : train_config_from_json(read_file(path), base);
  c = apply_seed_override(c);
  if (threads > 0) c.workers = threads;
  c.validate();
  return c;
}

Image read_image(const fs::path& path) {
  if (path.extension() == ".ppm") return read_ppm(path);
  return read_gimg(path);
}

void write_image(const fs::path& path, const Image& image) {
  if (path.extension() == ".ppm") write_ppm(path, image);
  else write_gimg(path, image);
}

json metrics_json(const EvalResult& r) {
  json views = json::array();
  for (const ViewMetrics& m : r.views) {
    json v = {{"view", m.view}, {"psnr", number(m.psnr)}, {"ssim", m.ssim}};
    if (m.rotation_error_deg >= 0) v["rotation_error_deg"] = m.rotation_error_deg;
    views.push_back(v);
  }
  json j = {{"views", views}, {"mean_psnr", number(r.mean_psnr)}, {"mean_ssim", r.mean_ssim}};
  if (r.mean_rotation_error_deg >= 0) j["mean_rotation_error_deg"] = r.mean_rotation_error_deg;
  return j;
}

std::string metrics_text(const EvalResult& r) {
  std::ostringstream s;
  for (const ViewMetrics& m : r.views) {
    s << "view " << m.view << ": psnr " << m.psnr << " ssim " << m.ssim;
    if (m.rotation_error_deg >= 0) s << " rotation error " << m.rotation_error_deg << " deg";
    s << "\n";
  }
  s << "mean: psnr " << r.mean_psnr << " ssim " << r.mean_ssim;
  if (r.mean_rotation_error_deg >= 0) s << " rotation error " << r.mean_rotation_error_deg << " deg";
  s << "\n";
  return s.str();
}

int cmd_synth(const Context& ctx, const std::string& spec_path, const std::string& out_dir) {
  const SyntheticSceneSpec spec =
      spec_path.empty() ? reference_scene_spec() : synthetic_spec_from_json(read_file(spec_path));
  const SceneBundle b = synth_scene(spec);
  write_bundle(b, out_dir);
  ctx.report(json{{"bundle", out_dir},
                  {"cameras", b.cameras.size()},
                  {"points", b.points.size()},
                  {"matches", b.matches.size()},
                  {"flows", b.flows.size()}},
             "wrote " + out_dir + ": " + std::to_string(b.cameras.size()) + " cameras, " +
                 std::to_string(b.points.size()) + " points, " + std::to_string(b.matches.size()) + " matches\n");
  return kExitOk;
}

int cmd_train(const Context& ctx, const std::string& bundle_dir, const std::string& config_path,
              const std::string& out, std::string log_path) {
  const SceneBundle raw = read_bundle(bundle_dir);
  const TrainConfig config = load_config(config_path, raw.config, ctx.threads);
  if (log_path.empty()) log_path = out + ".csv";
  const ImportedScene imported = import_init(raw);
  TrainConfig c = config;
  c.scene_diameter = 1.0;
  const TrainingData data = make_training_data(imported.bundle, c);
  HybridGaussianSet init = initial_model(imported.bundle, c);
  TrainOutputs outputs{log_path, out, imported.normalization};
  const TrainResult r = train(data, std::move(init), c, outputs);
  Checkpoint ck;
  ck.set = r.set;
  ck.cameras = r.cameras;
  ck.normalization = imported.normalization;
  ck.refiner = r.refiner;
  write_checkpoint(out, ck);
  const LossBreakdown last = r.log.empty() ? LossBreakdown{} : r.log.back();
  ctx.report(json{{"checkpoint", out},
                  {"log", log_path},
                  {"iterations", r.log.size()},
                  {"final_total", last.total},
                  {"psnr_train", number(last.psnr)}},
             "trained " + std::to_string(r.log.size()) + " iterations; checkpoint " + out + ", log " + log_path +
                 "\n");
  return kExitOk;
}

int cmd_render(const Context& ctx, const std::string& ckpt_path, int camera, const std::string& out) {
  const Checkpoint ck = read_checkpoint(ckpt_path);
  if (camera < 0 || static_cast<std::size_t>(camera) >= ck.cameras.size())
    throw Error(ErrorCode::InvalidArgument, "camera id out of range");
  RenderOptions opt;
  opt.workers = std::max(ctx.threads, 1);
  const RenderOutput r = rasterize(ck.set, build_ray_table(ck.set, ck.cameras), ck.cameras, camera, opt);
  write_image(out, r.view.color);
  ctx.report(json{{"image", out}, {"camera", camera}}, "wrote " + out + "\n");
  return kExitOk;
}

int cmd_eval(const Context& ctx, const std::string& ckpt_path, const std::string& bundle_dir,
             const std::string& split, const std::string& config_path) {
  const Checkpoint ck = read_checkpoint(ckpt_path);
  const SceneBundle raw = read_bundle(bundle_dir);
  TrainConfig config = load_config(config_path, raw.config, ctx.threads);
  config.scene_diameter = 1.0;
  const SceneBundle b = normalize_bundle(raw, ck.normalization);
  if (ck.cameras.size() != b.cameras.size()) throw Error(ErrorCode::Format, "checkpoint and bundle camera counts differ");
  const std::vector<int>& views = split == "train" ? b.train_views : b.test_views;
  const EvalResult r = evaluate(ck.set, ck.cameras, b, views, config);
  ctx.report(metrics_json(r), metrics_text(r));
  return kExitOk;
}

int cmd_flow_depth(const Context& ctx, const std::string& bundle_dir, int view, const std::string& out) {
  const SceneBundle b = read_bundle(bundle_dir);
  if (view < 0 || static_cast<std::size_t>(view) >= b.cameras.size())
    throw Error(ErrorCode::InvalidArgument, "view out of range");
  std::vector<FlowField> flows;
  for (const FlowField& f : b.flows)
    if (f.view_i == view) flows.push_back(f);
  if (flows.empty()) throw Error(ErrorCode::EmptyInput, "no flows start at view " + std::to_string(view));
  const DepthEstimate d = estimate_depth(view, b.cameras, flows, std::max(ctx.threads, 1));
  write_depth(out, d.depth);
  std::size_t valid = 0;
  for (double x : d.depth.data) valid += x > 0.0;
  ctx.report(json{{"depth", out}, {"view", view}, {"valid_pixels", valid}, {"pixels", d.depth.size()}},
             "wrote " + out + ": " + std::to_string(valid) + " of " + std::to_string(d.depth.size()) +
                 " pixels valid\n");
  return kExitOk;
}

int cmd_refine_pose(const Context& ctx, const std::string& ckpt_path, const std::string& image_path, int camera,
                    const std::string& config_path, const std::string& out) {
  const Checkpoint ck = read_checkpoint(ckpt_path);
  if (camera < 0 || static_cast<std::size_t>(camera) >= ck.cameras.size())
    throw Error(ErrorCode::InvalidArgument, "camera id out of range");
  TrainConfig config = load_config(config_path, TrainConfig{}, ctx.threads);
  const Image image = read_image(image_path);
  const CameraPose pose = refine_test_pose(ck.set, ck.cameras, camera, image, config);
  std::vector<Camera> cams = ck.cameras;
  cams[static_cast<std::size_t>(camera)].pose = pose;
  if (!out.empty()) write_cameras_json(out, cams);
  json R = json::array();
  for (int r = 0; r < 3; ++r) R.push_back({pose.R(r, 0), pose.R(r, 1), pose.R(r, 2)});
  const double moved = rotation_angle(pose.R, ck.cameras[static_cast<std::size_t>(camera)].pose.R) * 180.0 / std::numbers::pi;
  std::ostringstream text;
  text << "camera " << camera << " refined; rotation moved " << moved << " deg, center ("
       << pose.t.x() << ", " << pose.t.y() << ", " << pose.t.z() << ")\n";
  ctx.report(json{{"camera", camera}, {"R", R}, {"t", {pose.t.x(), pose.t.y(), pose.t.z()}}, {"rotation_moved_deg", moved}},
             text.str());
  return kExitOk;
}

int cmd_ablate(const Context& ctx, const std::string& bundle_dir, const std::string& disable,
               const std::string& config_path, const std::string& out) {
  const SceneBundle raw = read_bundle(bundle_dir);
  const TrainConfig config = load_config(config_path, raw.config, ctx.threads);
  const Ablation ablation = parse_ablation(disable);
  TrainOutputs outputs;
  if (!out.empty()) {
    outputs.checkpoint = out;
    outputs.log_csv = out + ".csv";
  }
  const RunResult r = run_experiment(raw, config, ablation, outputs);
  if (!out.empty()) {
    Checkpoint ck;
    ck.set = r.train.set;
    ck.cameras = r.train.cameras;
    ck.normalization = compute_normalization(raw.points);
    ck.refiner = r.train.refiner;
    write_checkpoint(out, ck);
  }
  json j = {{"disabled", to_string(ablation)}, {"initial", metrics_json(r.initial)}, {"final", metrics_json(r.final_eval)}};
  std::ostringstream text;
  text << "disabled: " << to_string(ablation) << "\ninitial held-out psnr " << r.initial.mean_psnr
       << "\nfinal held-out:\n"
       << metrics_text(r.final_eval);
  ctx.report(j, text.str());
  return kExitOk;
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Sparse-view Gaussian splatting with hybrid ray-bound Gaussians", "geosplat"};
  app.require_subcommand(1);
  app.fallthrough();
  Context ctx{out, err};
  app.add_flag("--json", ctx.as_json, "Print a JSON result on stdout");
  app.add_option("--threads", ctx.threads, "Worker threads (overrides the config)")->check(CLI::PositiveNumber);

  std::string spec, dir, bundle, config, ckpt, log, image, split = "test", disable;
  int camera = -1, view = -1;
  std::function<int()> action;

  auto* synth = app.add_subcommand("synth", "Generate a synthetic scene bundle");
  synth->add_option("--spec", spec, "Scene spec JSON (default: reference scene)");
  synth->add_option("--out", dir, "Output bundle directory")->required();
  synth->callback([&] { action = [&] { return cmd_synth(ctx, spec, dir); }; });

  auto* train_cmd = app.add_subcommand("train", "Train on a bundle");
  train_cmd->add_option("--bundle", bundle, "Bundle directory")->required();
  train_cmd->add_option("--config", config, "Training config JSON (default: the bundle's config.json)");
  train_cmd->add_option("--out", ckpt, "Output checkpoint")->required();
  train_cmd->add_option("--log", log, "Loss log CSV (default: <out>.csv)");
  train_cmd->callback([&] { action = [&] { return cmd_train(ctx, bundle, config, ckpt, log); }; });

  auto* render = app.add_subcommand("render", "Render one camera of a checkpoint");
  render->add_option("--ckpt", ckpt, "Checkpoint")->required();
  render->add_option("--camera", camera, "Camera id")->required();
  render->add_option("--out", image, "Output image (.ppm or .gimg)")->required();
  render->callback([&] { action = [&] { return cmd_render(ctx, ckpt, camera, image); }; });

  auto* eval = app.add_subcommand("eval", "PSNR / SSIM on a split");
  eval->add_option("--ckpt", ckpt, "Checkpoint")->required();
  eval->add_option("--bundle", bundle, "Bundle directory")->required();
  eval->add_option("--split", split, "train or test")->check(CLI::IsMember({"train", "test"}));
  eval->add_option("--config", config, "Config JSON for test-pose refinement");
  eval->callback([&] { action = [&] { return cmd_eval(ctx, ckpt, bundle, split, config); }; });

  auto* fd = app.add_subcommand("flow-depth", "Depth of one view from its flows");
  fd->add_option("--bundle", bundle, "Bundle directory")->required();
  fd->add_option("--view", view, "View id")->required();
  fd->add_option("--out", image, "Output depth raster (.gdpt)")->required();
  fd->callback([&] { action = [&] { return cmd_flow_depth(ctx, bundle, view, image); }; });

  std::string cams_out;
  auto* rp = app.add_subcommand("refine-pose", "Photometric pose refinement of one camera");
  rp->add_option("--ckpt", ckpt, "Checkpoint")->required();
  rp->add_option("--image", image, "Observed image (.gimg or .ppm)")->required();
  rp->add_option("--init-camera", camera, "Camera id whose pose starts the refinement")->required();
  rp->add_option("--config", config, "Config JSON");
  rp->add_option("--out", cams_out, "Write the cameras with the refined pose");
  rp->callback([&] { action = [&] { return cmd_refine_pose(ctx, ckpt, image, camera, config, cams_out); }; });

  auto* ablate = app.add_subcommand("ablate", "Train and evaluate with one component disabled");
  ablate->add_option("--bundle", bundle, "Bundle directory")->required();
  ablate->add_option("--disable", disable, "Component to disable")
      ->required()
      ->check(CLI::IsMember({"hybrid", "graph", "depth", "none"}));
  ablate->add_option("--config", config, "Training config JSON");
  ablate->add_option("--out", ckpt, "Optional checkpoint of the ablated model");
  ablate->callback([&] { action = [&] { return cmd_ablate(ctx, bundle, disable, config, ckpt); }; });

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << e.what() << "\n\n" << app.help();
    return kExitUsage;
  }

  try {
    return action();
  } catch (const Error& e) {
    err << e.what() << "\n";
    if (ctx.as_json) out << json{{"error", to_string(e.code())}, {"message", e.what()}}.dump() << "\n";
    return is_numerical(e.code()) ? kExitNumerical : kExitData;
  } catch (const std::exception& e) {
    err << e.what() << "\n";
    if (ctx.as_json) out << json{{"error", "Io"}, {"message", e.what()}}.dump() << "\n";
    return kExitData;
  }
}

}  // namespace geosplat
