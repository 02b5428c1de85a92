#include "geosplat/optimize.hpp"

#include <cmath>
#include <cstdio>
#include <limits>

#include <nlohmann/json.hpp>

#include "geosplat/error.hpp"
#include "geosplat/matching.hpp"
#include "geosplat/photometric.hpp"

namespace geosplat {

namespace {

class Adam {
 public:
  explicit Adam(std::size_t n = 0) : m_(n, 0.0), v_(n, 0.0) {}

  void step(double* x, const double* g, std::size_t n, double lr) {
    if (m_.size() != n) {
      m_.assign(n, 0.0);
      v_.assign(n, 0.0);
    }
    ++t_;
    const double c1 = 1.0 - std::pow(kBeta1, t_), c2 = 1.0 - std::pow(kBeta2, t_);
    for (std::size_t i = 0; i < n; ++i) {
      m_[i] = kBeta1 * m_[i] + (1.0 - kBeta1) * g[i];
      v_[i] = kBeta2 * v_[i] + (1.0 - kBeta2) * g[i] * g[i];
      x[i] -= lr * (m_[i] / c1) / (std::sqrt(v_[i] / c2) + kEps);
    }
  }
  void step(std::vector<double>& x, const std::vector<double>& g, double lr) { step(x.data(), g.data(), x.size(), lr); }

 private:
  static constexpr double kBeta1 = 0.9, kBeta2 = 0.999, kEps = 1e-15;
  std::vector<double> m_, v_;
  int t_ = 0;
};

constexpr double kLogitFloor = 1e-6;

double logit(double a) {
  a = std::clamp(a, kLogitFloor, 1.0 - kLogitFloor);
  return std::log(a / (1.0 - a));
}

double sigmoid(double u) { return 1.0 / (1.0 + std::exp(-u)); }

// Pose parameters and their optimizer state for one camera.
struct PoseParams {
  Vec4 q;
  Vec3 t;
  Adam adam_q{4}, adam_t{3};

  explicit PoseParams(const CameraPose& p) : q(rotation_to_quaternion(p.R)), t(p.t) {}

  void step(const PoseGradient& g, double lr_rot, double lr_trans) {
    const Vec4 gq = quaternion_gradient(q, g.R);
    adam_q.step(q.data(), gq.data(), 4, lr_rot);
    adam_t.step(t.data(), g.t.data(), 3, lr_trans);
    q = normalize_quaternion(q);
  }
  CameraPose pose() const { return CameraPose{quaternion_to_rotation(q), t}; }
};

// Optimizer state of the Gaussian attributes.
struct GaussianOptimizer {
  Adam position, z, log_scale, rotation, color, opacity;

  void step(HybridGaussianSet& set, const SceneGradient& g, const TrainConfig& c, int iter) {
    const std::size_t n = set.size(), no = set.ordinary.size(), nr = set.ray_based.size();
    std::vector<double> x, d;

    auto run = [&](Adam& adam, double lr, std::size_t dims, auto&& get, auto&& get_grad, auto&& put) {
      x.assign(n * dims, 0.0);
      d.assign(n * dims, 0.0);
      for (std::size_t i = 0; i < n; ++i) {
        get(i, &x[i * dims]);
        get_grad(i, &d[i * dims]);
      }
      adam.step(x, d, lr);
      for (std::size_t i = 0; i < n; ++i) put(i, &x[i * dims]);
    };

    run(log_scale, c.scale_lr, 3,
        [&](std::size_t i, double* v) { for (int k = 0; k < 3; ++k) v[k] = set.common(i).log_scale[k]; },
        [&](std::size_t i, double* v) { for (int k = 0; k < 3; ++k) v[k] = g.common[i].log_scale[k]; },
        [&](std::size_t i, const double* v) { for (int k = 0; k < 3; ++k) set.common(i).log_scale[k] = v[k]; });
    run(rotation, c.rotation_lr, 4,
        [&](std::size_t i, double* v) { for (int k = 0; k < 4; ++k) v[k] = set.common(i).rotation[k]; },
        [&](std::size_t i, double* v) { for (int k = 0; k < 4; ++k) v[k] = g.common[i].rotation[k]; },
        [&](std::size_t i, const double* v) { for (int k = 0; k < 4; ++k) set.common(i).rotation[k] = v[k]; });
    run(color, c.color_lr, 3,
        [&](std::size_t i, double* v) { for (int k = 0; k < 3; ++k) v[k] = set.common(i).color[k]; },
        [&](std::size_t i, double* v) { for (int k = 0; k < 3; ++k) v[k] = g.common[i].color[k]; },
        [&](std::size_t i, const double* v) { for (int k = 0; k < 3; ++k) set.common(i).color[k] = v[k]; });
    // opacity steps in the logit domain
    std::vector<double> before(n);
    run(opacity, c.opacity_lr, 1,
        [&](std::size_t i, double* v) { v[0] = before[i] = logit(set.common(i).opacity); },
        [&](std::size_t i, double* v) {
          const double a = std::clamp(set.common(i).opacity, kLogitFloor, 1.0 - kLogitFloor);
          v[0] = g.common[i].opacity * a * (1.0 - a);
        },
        [&](std::size_t i, const double* v) {
          if (v[0] != before[i]) set.common(i).opacity = sigmoid(v[0]);
        });

    if (no > 0) {
      x.assign(3 * no, 0.0);
      d.assign(3 * no, 0.0);
      for (std::size_t i = 0; i < no; ++i)
        for (int k = 0; k < 3; ++k) {
          x[3 * i + k] = set.ordinary[i].position[k];
          d[3 * i + k] = g.position[i][k];
        }
      position.step(x, d, c.position_lr(iter) * c.scene_diameter);
      for (std::size_t i = 0; i < no; ++i)
        for (int k = 0; k < 3; ++k) set.ordinary[i].position[k] = x[3 * i + k];
    }
    if (nr > 0) {
      x.assign(nr, 0.0);
      for (std::size_t i = 0; i < nr; ++i) x[i] = set.ray_based[i].z;
      z.step(x, g.z, c.z_lr(iter));
      for (std::size_t i = 0; i < nr; ++i) set.ray_based[i].z = x[i];
    }
    set.enforce_invariants();
  }
};

// Gradient of the refined attributes pulled back to the base attributes and the offsets.
void pull_back_offsets(const HybridGaussianSet& base, const OffsetBundle& offsets, const OffsetScales& scales,
                       SceneGradient& grad, std::vector<AttributeVector>& d_offsets) {
  const AttributeVector lam = scales.expand();
  const std::size_t no = base.ordinary.size();
  d_offsets.assign(base.size(), AttributeVector::Zero());
  for (std::size_t i = 0; i < base.size(); ++i) {
    const GaussianCommon& g = base.common(i);
    const AttributeVector& delta = offsets.delta[i];
    const AttributeVector step = lam.cwiseProduct(delta);
    CommonGradient& cg = grad.common[i];
    AttributeVector dref = AttributeVector::Zero();

    dref.segment<3>(1) = cg.log_scale;

    const Vec4 r_pre = g.rotation + step.segment<4>(4);
    const double nr = r_pre.norm();
    const Vec4 r_unit = r_pre / nr;
    const Vec4 g_pre = (cg.rotation - r_unit * r_unit.dot(cg.rotation)) / nr;
    cg.rotation = g_pre;
    dref.segment<4>(4) = g_pre;

    for (int k = 0; k < 3; ++k) {
      const double v = g.color[k] + step[8 + k];
      if (v < 0.0 || v > 1.0) cg.color[k] = 0.0;
    }
    dref.segment<3>(8) = cg.color;
    const double a = g.opacity + step[11];
    if (a < 0.0 || a > kMaxOpacity) cg.opacity = 0.0;
    dref[11] = cg.opacity;

    if (i >= no) {
      const RayGaussian& r = base.ray_based[i - no];
      const double z = r.z + step[0];
      double& gz = grad.z[i - no];
      if (z < base.z_near || z > base.z_far) gz = 0.0;
      dref[0] = gz;
    }
    d_offsets[i] = lam.cwiseProduct(dref);
  }
}

Vec3 mean_center(const std::vector<Camera>& cameras, const std::vector<int>& views) {
  Vec3 c = Vec3::Zero();
  for (int v : views) c += cameras[static_cast<std::size_t>(v)].pose.t;
  return c / static_cast<double>(std::max<std::size_t>(views.size(), 1));
}

}  // namespace

void TrainConfig::validate() const {
  auto fail = [](const std::string& m) { throw Error(ErrorCode::InvalidConfig, m); };
  if (total_iters < 1) fail("total_iters must be positive");
  if (phase1_iters < 0 || phase1_iters >= total_iters) fail("phase1_iters must lie in [0, total_iters)");
  for (const LossWeights* w : {&phase1, &phase2})
    if (w->gp < 0 || w->rg < 0 || w->depth < 0) fail("loss weights must be non-negative");
  if (!(z_lr_start > 0 && z_lr_end > 0 && position_lr_start > 0 && position_lr_end > 0)) fail("decay endpoints must be positive");
  if (scale_lr < 0 || rotation_lr < 0 || color_lr < 0 || opacity_lr < 0 || pose_rotation_lr < 0 ||
      pose_translation_lr < 0 || refiner_lr < 0)
    fail("learning rates must be non-negative");
  if (ssim_lambda < 0 || ssim_lambda > 1) fail("ssim_lambda must lie in [0, 1]");
  if (refiner_iters < 0 || refiner_iters > total_iters) fail("refiner_iters must lie in [0, total_iters]");
  if (graph_k < 1) fail("graph_k must be at least 1");
  if (test_pose_iters < 0) fail("test_pose_iters must be non-negative");
  if (!(test_pose_lr_start > 0 && test_pose_lr_end > 0)) fail("test pose learning rates must be positive");
  if (workers < 1) fail("workers must be at least 1");
  if (max_iters < 0) fail("max_iters must be non-negative");
  if (residual_floor_px < 0 || photo_residual_floor < 0) fail("residual floors must be non-negative");
  if (!(scene_diameter > 0)) fail("scene_diameter must be positive");
}

double exp_lr(double start, double end, double t) {
  t = std::clamp(t, 0.0, 1.0);
  if (t == 0.0) return start;
  if (t == 1.0) return end;
  return std::exp(std::log(start) * (1.0 - t) + std::log(end) * t);
}

double TrainConfig::z_lr(int iter) const {
  return exp_lr(z_lr_start, z_lr_end, static_cast<double>(iter) / total_iters);
}

double TrainConfig::position_lr(int iter) const {
  return exp_lr(position_lr_start, position_lr_end, static_cast<double>(iter) / total_iters);
}

namespace {

void weights_from_json(const nlohmann::json& j, LossWeights& w) {
  for (const auto& [k, v] : j.items()) {
    if (k == "gp") w.gp = v.get<double>();
    else if (k == "rg") w.rg = v.get<double>();
    else if (k == "depth") w.depth = v.get<double>();
    else throw Error(ErrorCode::InvalidConfig, "unknown loss weight " + k);
  }
}

}  // namespace

TrainConfig train_config_from_json(const std::string& text, const TrainConfig& base) {
  TrainConfig c = base;
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::InvalidConfig, e.what());
  }
  if (!j.is_object()) throw Error(ErrorCode::InvalidConfig, "config must be a JSON object");
  try {
    for (const auto& [k, v] : j.items()) {
      if (k == "total_iters") c.total_iters = v.get<int>();
      else if (k == "phase1_iters") c.phase1_iters = v.get<int>();
      else if (k == "phase1_weights") weights_from_json(v, c.phase1);
      else if (k == "phase2_weights") weights_from_json(v, c.phase2);
      else if (k == "ssim_lambda") c.ssim_lambda = v.get<double>();
      else if (k == "z_lr_start") c.z_lr_start = v.get<double>();
      else if (k == "z_lr_end") c.z_lr_end = v.get<double>();
      else if (k == "position_lr_start") c.position_lr_start = v.get<double>();
      else if (k == "position_lr_end") c.position_lr_end = v.get<double>();
      else if (k == "scale_lr") c.scale_lr = v.get<double>();
      else if (k == "rotation_lr") c.rotation_lr = v.get<double>();
      else if (k == "color_lr") c.color_lr = v.get<double>();
      else if (k == "opacity_lr") c.opacity_lr = v.get<double>();
      else if (k == "pose_rotation_lr") c.pose_rotation_lr = v.get<double>();
      else if (k == "pose_translation_lr") c.pose_translation_lr = v.get<double>();
      else if (k == "scene_diameter") c.scene_diameter = v.get<double>();
      else if (k == "optimize_poses") c.optimize_poses = v.get<bool>();
      else if (k == "use_refiner") c.use_refiner = v.get<bool>();
      else if (k == "refiner_iters") c.refiner_iters = v.get<int>();
      else if (k == "refiner_lr") c.refiner_lr = v.get<double>();
      else if (k == "graph_k") c.graph_k = v.get<int>();
      else if (k == "graph_radius") c.graph_radius = v.get<double>();
      else if (k == "offset_scales") {
        for (const auto& [ok, ov] : v.items()) {
          if (ok == "z") c.offset_scales.z = ov.get<double>();
          else if (ok == "scale") c.offset_scales.scale = ov.get<double>();
          else if (ok == "rotation") c.offset_scales.rotation = ov.get<double>();
          else if (ok == "color") c.offset_scales.color = ov.get<double>();
          else if (ok == "opacity") c.offset_scales.opacity = ov.get<double>();
          else throw Error(ErrorCode::InvalidConfig, "unknown offset scale " + ok);
        }
      }
      else if (k == "rg_normalize_depth") c.rg_normalize_depth = v.get<bool>();
      else if (k == "depth_loss_normalized") c.depth_loss_normalized = v.get<bool>();
      else if (k == "residual_floor_px") c.residual_floor_px = v.get<double>();
      else if (k == "photo_residual_floor") c.photo_residual_floor = v.get<double>();
      else if (k == "max_iters") c.max_iters = v.get<int>();
      else if (k == "test_pose_iters") c.test_pose_iters = v.get<int>();
      else if (k == "test_pose_lr_start") c.test_pose_lr_start = v.get<double>();
      else if (k == "test_pose_lr_end") c.test_pose_lr_end = v.get<double>();
      else if (k == "seed") c.seed = v.get<std::uint64_t>();
      else if (k == "workers") c.workers = v.get<int>();
      else if (k == "checkpoint_every") c.checkpoint_every = v.get<int>();
      else throw Error(ErrorCode::InvalidConfig, "unknown config key " + k);
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::InvalidConfig, e.what());
  }
  c.validate();
  return c;
}

std::string train_config_to_json(const TrainConfig& c) {
  auto w = [](const LossWeights& x) { return nlohmann::json{{"gp", x.gp}, {"rg", x.rg}, {"depth", x.depth}}; };
  nlohmann::json j = {
      {"total_iters", c.total_iters},
      {"phase1_iters", c.phase1_iters},
      {"phase1_weights", w(c.phase1)},
      {"phase2_weights", w(c.phase2)},
      {"ssim_lambda", c.ssim_lambda},
      {"z_lr_start", c.z_lr_start},
      {"z_lr_end", c.z_lr_end},
      {"position_lr_start", c.position_lr_start},
      {"position_lr_end", c.position_lr_end},
      {"scale_lr", c.scale_lr},
      {"rotation_lr", c.rotation_lr},
      {"color_lr", c.color_lr},
      {"opacity_lr", c.opacity_lr},
      {"pose_rotation_lr", c.pose_rotation_lr},
      {"pose_translation_lr", c.pose_translation_lr},
      {"scene_diameter", c.scene_diameter},
      {"optimize_poses", c.optimize_poses},
      {"use_refiner", c.use_refiner},
      {"refiner_iters", c.refiner_iters},
      {"refiner_lr", c.refiner_lr},
      {"graph_k", c.graph_k},
      {"graph_radius", c.graph_radius},
      {"offset_scales",
       {{"z", c.offset_scales.z},
        {"scale", c.offset_scales.scale},
        {"rotation", c.offset_scales.rotation},
        {"color", c.offset_scales.color},
        {"opacity", c.offset_scales.opacity}}},
      {"rg_normalize_depth", c.rg_normalize_depth},
      {"depth_loss_normalized", c.depth_loss_normalized},
      {"residual_floor_px", c.residual_floor_px},
      {"photo_residual_floor", c.photo_residual_floor},
      {"max_iters", c.max_iters},
      {"test_pose_iters", c.test_pose_iters},
      {"test_pose_lr_start", c.test_pose_lr_start},
      {"test_pose_lr_end", c.test_pose_lr_end},
      {"seed", c.seed},
      {"workers", c.workers},
      {"checkpoint_every", c.checkpoint_every},
  };
  return j.dump(2) + "\n";
}

double combine(const LossBreakdown& l, const LossWeights& w) {
  return l.photo + w.gp * l.gp + w.rg * l.rg + w.depth * l.depth;
}

std::vector<Image> compute_depth_targets(const std::vector<Camera>& cameras, const std::vector<int>& train_views,
                                         const std::vector<FlowField>& flows, int workers) {
  std::vector<Image> targets(cameras.size());
  for (int v : train_views) {
    std::vector<FlowField> mine;
    for (const FlowField& f : flows) {
      if (f.view_i == v && std::find(train_views.begin(), train_views.end(), f.view_j) != train_views.end()) {
        mine.push_back(f);
      }
    }
    if (mine.empty()) continue;
    targets[static_cast<std::size_t>(v)] = estimate_depth(v, cameras, mine, workers).depth;
  }
  return targets;
}

LossBreakdown total_loss(const HybridGaussianSet& set, const std::vector<Camera>& cameras, const TrainingData& data,
                         int view, const LossWeights& weights, const TrainConfig& config, SceneGradient* grad,
                         RenderedView* rendered) {
  RenderOptions ropt;
  ropt.workers = config.workers;
  const RayTable rays = build_ray_table(set, cameras);
  const RenderOutput out = rasterize(set, rays, cameras, view, ropt);
  const Image& target = data.images.at(static_cast<std::size_t>(view));
  const int W = out.cache.width, H = out.cache.height;

  LossBreakdown l;
  PhotometricLoss photo = photometric_loss(out.view.color, target, config.ssim_lambda, grad != nullptr, {},
                                           config.photo_residual_floor);
  l.photo = photo.value;
  l.psnr = psnr(out.view.color, target);

  ViewGradient up;
  if (grad) {
    up.color = std::move(photo.grad);
    up.depth = Image(W, H, 1);
    up.alpha = Image(W, H, 1);
  }

  l.gp = gaussian_position_loss(set, rays, cameras, grad && weights.gp > 0 ? grad : nullptr, weights.gp,
                                config.residual_floor_px)
             .value;

  if (!data.matches.empty()) {
    const DepthMap map{view, &out.view.depth, &out.view.alpha};
    GeometryLossOptions gopt;
    gopt.normalize_by_alpha = config.rg_normalize_depth;
    gopt.residual_floor = config.residual_floor_px;
    GeometryLossGradient gg;
    const bool want = grad && weights.rg > 0;
    if (want) gg.poses = &grad->poses;
    try {
      l.rg = rendering_geometry_loss(std::span<const DepthMap>(&map, 1), data.matches, cameras, gopt,
                                     want ? &gg : nullptr, weights.rg)
                 .value;
      if (want) {
        for (std::size_t i = 0; i < up.depth.size(); ++i) up.depth.data[i] += gg.maps[0].depth.data[i];
        if (!gg.maps[0].alpha.empty())
          for (std::size_t i = 0; i < up.alpha.size(); ++i) up.alpha.data[i] += gg.maps[0].alpha.data[i];
      }
    } catch (const Error& e) {
      if (e.code() != ErrorCode::SkippedAllTerms) throw;
      l.rg = 0.0;
    }
  }

  const std::size_t vi = static_cast<std::size_t>(view);
  if (vi < data.depth_targets.size() && !data.depth_targets[vi].empty()) {
    const bool want = grad && weights.depth > 0;
    try {
      if (config.depth_loss_normalized) {
        Image dn(W, H, 1);
        for (std::size_t i = 0; i < dn.size(); ++i)
          dn.data[i] = out.view.alpha.data[i] > 0.0 ? out.view.depth.data[i] / out.view.alpha.data[i] : 0.0;
        Image gd;
        l.depth = depth_loss(data.depth_targets[vi], dn, out.view.alpha, want ? &gd : nullptr, weights.depth).value;
        if (want) {
          for (std::size_t i = 0; i < dn.size(); ++i) {
            const double a = out.view.alpha.data[i];
            if (a <= 0.0 || gd.data[i] == 0.0) continue;
            up.depth.data[i] += gd.data[i] / a;
            up.alpha.data[i] -= gd.data[i] * out.view.depth.data[i] / (a * a);
          }
        }
      } else {
        l.depth = depth_loss(data.depth_targets[vi], out.view.depth, out.view.alpha, want ? &up.depth : nullptr,
                             weights.depth)
                      .value;
      }
    } catch (const Error& e) {
      if (e.code() != ErrorCode::NoValidPixels) throw;
      l.depth = 0.0;
    }
  }

  l.total = combine(l, weights);
  if (grad) backward(set, rays, cameras, out.cache, up, *grad, ropt);
  if (rendered) *rendered = out.view;
  return l;
}

std::string format_log_row(int iter, const LossBreakdown& l) {
  char buf[256];
  std::snprintf(buf, sizeof buf, "%d,%.9g,%.9g,%.9g,%.9g,%.9g,%.6f", iter, l.photo, l.gp, l.rg, l.depth, l.total,
                l.psnr);
  return buf;
}

TrainResult train(const TrainingData& data, HybridGaussianSet init, const TrainConfig& config,
                  const TrainOutputs& outputs) {
  config.validate();
  if (data.train_views.empty()) throw Error(ErrorCode::EmptySplit, "no training views");
  if (data.images.size() != data.cameras.size()) throw Error(ErrorCode::ShapeMismatch, "one image per camera expected");
  init.validate(data.cameras.size());

  HybridGaussianSet set = std::move(init);
  set.enforce_invariants();
  std::vector<Camera> cameras = data.cameras;
  std::vector<PoseParams> poses;
  for (const Camera& c : cameras) poses.emplace_back(c.pose);

  GaussianOptimizer gopt;
  RefinerNetwork net(config.seed);
  Adam net_adam(net.parameter_count());
  GaussianGraph graph;
  bool graph_ready = false;
  const Vec3 center = mean_center(cameras, data.train_views);

  TrainResult result;
  result.log_csv = std::string(kLogHeader) + "\n";
  result.log.reserve(static_cast<std::size_t>(config.total_iters));

  auto refined = [&](const HybridGaussianSet& base, OffsetBundle* offsets, RefinerNetwork::Cache* cache) {
    const std::vector<AttributeVector> feats = vertex_features(base, center);
    *offsets = net.forward(graph, feats, cache);
    return apply_offsets(base, *offsets, config.offset_scales);
  };

  auto snapshot = [&](const HybridGaussianSet& s) {
    Checkpoint ck;
    ck.set = s;
    ck.cameras = cameras;
    ck.normalization = outputs.normalization;
    if (graph_ready) ck.refiner = net.parameters();
    return ck;
  };

  auto flush_log = [&]() {
    if (!outputs.log_csv.empty()) write_file_atomic(outputs.log_csv, result.log_csv);
  };

  SceneGradient grad;
  const int last = config.max_iters > 0 ? std::min(config.max_iters, config.total_iters) : config.total_iters;
  for (int it = 0; it < last; ++it) {
    const int view = data.train_views[static_cast<std::size_t>(it) % data.train_views.size()];
    const LossWeights w = config.weights_at(it);
    const bool refine_phase = config.use_refiner && it >= config.refiner_start();

    if (refine_phase && !graph_ready) {
      const std::vector<Vec3> pos = gaussian_positions(set, build_ray_table(set, cameras));
      const double radius = config.graph_radius > 0 ? config.graph_radius : 2.0 * median_nearest_distance(pos);
      graph = build_knn_graph(pos, static_cast<std::size_t>(config.graph_k), radius);
      graph_ready = true;
    }

    OffsetBundle offsets;
    RefinerNetwork::Cache cache;
    const HybridGaussianSet eval_set = refine_phase ? refined(set, &offsets, &cache) : set;

    grad.reset(eval_set, cameras.size());
    const LossBreakdown l = total_loss(eval_set, cameras, data, view, w, config, &grad);
    if (!std::isfinite(l.total)) {
      if (!outputs.checkpoint.empty()) write_checkpoint(outputs.checkpoint.string() + ".diag", snapshot(set));
      result.log_csv += format_log_row(it, l) + "\n";
      flush_log();
      throw Error(ErrorCode::NumericalFailure, "non-finite loss at iteration " + std::to_string(it));
    }
    result.log.push_back(l);
    result.log_csv += format_log_row(it, l) + "\n";

    if (refine_phase) {
      std::vector<AttributeVector> d_offsets;
      pull_back_offsets(set, offsets, config.offset_scales, grad, d_offsets);
      std::vector<double> d_params(net.parameter_count(), 0.0);
      net.backward(graph, cache, d_offsets, d_params);
      net_adam.step(net.parameters(), d_params, config.refiner_lr);
    }

    gopt.step(set, grad, config, it);
    if (config.optimize_poses) {
      for (int v : data.train_views) {
        const auto c = static_cast<std::size_t>(v);
        poses[c].step(grad.poses[c], config.pose_rotation_lr, config.pose_translation_lr * config.scene_diameter);
        cameras[c].pose = poses[c].pose();
      }
    }

    if (!outputs.checkpoint.empty() && config.checkpoint_every > 0 && (it + 1) % config.checkpoint_every == 0) {
      write_checkpoint(outputs.checkpoint, snapshot(set));
      flush_log();
    }
  }

  if (graph_ready) {
    OffsetBundle offsets;
    result.set = refined(set, &offsets, nullptr);
    result.refiner = net.parameters();
  } else {
    result.set = set;
  }
  result.cameras = cameras;
  flush_log();
  return result;
}

CameraPose refine_test_pose(const HybridGaussianSet& set, const std::vector<Camera>& cameras, int view,
                            const Image& image, const TrainConfig& config) {
  std::vector<Camera> cams = cameras;
  const auto c = static_cast<std::size_t>(view);
  PoseParams pose(cams.at(c).pose);
  RenderOptions ropt;
  ropt.workers = config.workers;
  const RayTable rays = build_ray_table(set, cams);
  SceneGradient grad;
  const int n = config.test_pose_iters;
  for (int it = 0; it < n; ++it) {
    const RenderOutput out = rasterize(set, rays, cams, view, ropt);
    PhotometricLoss l = photometric_loss(out.view.color, image, config.ssim_lambda, true, {}, config.photo_residual_floor);
    if (!std::isfinite(l.value)) throw Error(ErrorCode::NumericalFailure, "non-finite loss in pose refinement");
    grad.reset(set, cams.size());
    ViewGradient up;
    up.color = std::move(l.grad);
    backward(set, rays, cams, out.cache, up, grad, ropt);
    const double lr = exp_lr(config.test_pose_lr_start, config.test_pose_lr_end,
                             n > 1 ? static_cast<double>(it) / (n - 1) : 1.0);
    pose.step(grad.poses[c], lr, lr * config.scene_diameter);
    cams[c].pose = pose.pose();
  }
  return cams[c].pose;
}

}  // namespace geosplat
