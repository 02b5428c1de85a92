#include "geosplat/harness.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <map>
#include <numbers>
#include <random>
#include <set>

#include <Eigen/SVD>
#include <nlohmann/json.hpp>

#include "geosplat/error.hpp"
#include "geosplat/photometric.hpp"
#include "geosplat/renderer.hpp"

namespace geosplat {

namespace {

constexpr double kDeg = std::numbers::pi / 180.0;

bool contains(const std::vector<int>& v, int x) { return std::find(v.begin(), v.end(), x) != v.end(); }

std::vector<int> complement(int n, const std::vector<int>& excluded) {
  std::vector<int> out;
  for (int v = 0; v < n; ++v)
    if (!contains(excluded, v)) out.push_back(v);
  return out;
}

Vec3 random_unit(std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  for (;;) {
    const Vec3 v(n(rng), n(rng), n(rng));
    if (v.norm() > 1e-6) return v.normalized();
  }
}

Camera look_at(int id, const Vec3& center, const Vec3& target, const SyntheticSceneSpec& spec) {
  Camera c;
  c.id = id;
  c.intrinsics.fx = c.intrinsics.fy = spec.focal;
  c.intrinsics.cx = 0.5 * (spec.width - 1);
  c.intrinsics.cy = 0.5 * (spec.height - 1);
  c.intrinsics.width = spec.width;
  c.intrinsics.height = spec.height;
  const Vec3 z = (target - center).normalized();
  const Vec3 x = Vec3::UnitY().cross(z).normalized();
  const Vec3 y = z.cross(x);
  c.pose.R.col(0) = x;
  c.pose.R.col(1) = y;
  c.pose.R.col(2) = z;
  c.pose.t = center;
  return c;
}

std::vector<Camera> place_cameras(const SyntheticSceneSpec& spec) {
  std::vector<Camera> cams;
  const int n = spec.camera_count;
  for (int k = 0; k < n; ++k) {
    double phi;
    if (spec.placement == "ring") {
      phi = 2.0 * std::numbers::pi * k / n;
    } else {
      phi = (-0.5 * spec.arc_degrees + spec.arc_degrees * k / std::max(n - 1, 1)) * kDeg;
    }
    // slight height variation keeps the centers off a single line
    const Vec3 center(spec.camera_distance * std::sin(phi), 0.05 * spec.camera_distance * std::cos(3.0 * phi),
                      -spec.camera_distance * std::cos(phi));
    cams.push_back(look_at(k, center, Vec3::Zero(), spec));
  }
  return cams;
}

struct Box {
  int x0 = 0, x1 = -1, y0 = 0, y1 = -1;
  bool empty() const { return x1 < x0 || y1 < y0; }
  bool intersects(const Box& o) const {
    return !empty() && !o.empty() && x0 <= o.x1 && o.x0 <= x1 && y0 <= o.y1 && o.y0 <= y1;
  }
};

// Per-view footprints of a candidate Gaussian as the rasterizer sees them.
std::vector<Box> footprints(const GaussianCommon& g, const Vec3& mu, const std::vector<Camera>& cams) {
  std::vector<Box> out(cams.size());
  const Mat3 cov = covariance(g);
  for (std::size_t v = 0; v < cams.size(); ++v) {
    const auto s = project_gaussian(cov, mu, cams[v]);
    if (s) out[v] = Box{s->x0, s->x1, s->y0, s->y1};
  }
  return out;
}

// Pixels read by bilinear sampling at p.
Box taps(const Vec2& p, int W, int H) {
  const int x = static_cast<int>(std::floor(p.x())), y = static_cast<int>(std::floor(p.y()));
  return Box{std::max(x, 0), std::min(x + 1, W - 1), std::max(y, 0), std::min(y + 1, H - 1)};
}

struct Feature {
  Vec3 mu;
  GaussianCommon common;
  int view_i = 0, view_j = 0;
  Vec2 p_i, p_j;
  std::vector<Box> boxes;
};

bool inside(const Vec2& p, int W, int H, double margin) {
  return p.x() >= margin && p.y() >= margin && p.x() <= W - 1 - margin && p.y() <= H - 1 - margin;
}

// Does a footprint set cover the pixels a feature's depth lookups read?
bool covers(const std::vector<Box>& boxes, const Feature& f, int W, int H) {
  return boxes[f.view_i].intersects(taps(f.p_i, W, H)) || boxes[f.view_j].intersects(taps(f.p_j, W, H));
}

double ray_distance_to(const Camera& cam, const Vec3& X) { return (X - cam.pose.t).norm(); }

Image flow_between(const Camera& ci, const Camera& cj, const Image& depth_i, double background_depth) {
  const int W = ci.intrinsics.width, H = ci.intrinsics.height;
  Image flow(W, H, 2);
  const Mat3 Kinv = ci.intrinsics.inverse();
  for (int y = 0; y < H; ++y) {
    for (int x = 0; x < W; ++x) {
      const double d = depth_i(x, y) > 0.0 ? depth_i(x, y) : background_depth;
      const Vec3 X = ci.pose.to_world(d * (Kinv * Vec3(x, y, 1.0)));
      const Vec3 xc = cj.pose.to_camera(X);
      if (xc.z() <= kMinProjectDepth) {
        flow(x, y, 0) = flow(x, y, 1) = 1e6;
        continue;
      }
      const Vec2 p = project_camera_point(xc, cj.intrinsics);
      flow(x, y, 0) = p.x() - x;
      flow(x, y, 1) = p.y() - y;
    }
  }
  return flow;
}

}  // namespace

void SyntheticSceneSpec::validate() const {
  auto fail = [](const std::string& m) { throw Error(ErrorCode::InvalidConfig, m); };
  if (gaussian_count < 1) fail("gaussian_count must be at least 1");
  if (camera_count < 2) fail("camera_count must be at least 2");
  if (!(feature_fraction >= 0.0 && feature_fraction <= 1.0)) fail("feature_fraction must lie in [0, 1]");
  if (placement != "arc" && placement != "ring") fail("placement must be arc or ring");
  if (width < 8 || height < 8) fail("image must be at least 8 x 8");
  if (!(focal > 0.0) || !(camera_distance > 0.0)) fail("focal and camera_distance must be positive");
  if (flow_neighbors < 0) fail("flow_neighbors must be non-negative");
  if (pose_rotation_deg < 0 || pose_translation_frac < 0 || flow_sigma_px < 0 || match_sigma_px < 0 ||
      point_sigma_frac < 0)
    fail("noise levels must be non-negative");
  std::set<int> seen;
  for (int v : test_views) {
    if (v < 0 || v >= camera_count) fail("test view out of range");
    if (!seen.insert(v).second) fail("duplicate test view");
  }
  if (camera_count - static_cast<int>(test_views.size()) < 2) fail("at least two training views are required");
}

SyntheticSceneSpec reference_scene_spec() { return SyntheticSceneSpec{}; }

SyntheticSceneSpec synthetic_spec_from_json(const std::string& text) {
  SyntheticSceneSpec s;
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::InvalidConfig, e.what());
  }
  if (!j.is_object()) throw Error(ErrorCode::InvalidConfig, "scene spec must be a JSON object");
  try {
    for (const auto& [k, v] : j.items()) {
      if (k == "seed") s.seed = v.get<std::uint64_t>();
      else if (k == "gaussian_count") s.gaussian_count = v.get<int>();
      else if (k == "feature_fraction") s.feature_fraction = v.get<double>();
      else if (k == "camera_count") s.camera_count = v.get<int>();
      else if (k == "placement") s.placement = v.get<std::string>();
      else if (k == "arc_degrees") s.arc_degrees = v.get<double>();
      else if (k == "camera_distance") s.camera_distance = v.get<double>();
      else if (k == "width") s.width = v.get<int>();
      else if (k == "height") s.height = v.get<int>();
      else if (k == "focal") s.focal = v.get<double>();
      else if (k == "test_views") s.test_views = v.get<std::vector<int>>();
      else if (k == "flow_neighbors") s.flow_neighbors = v.get<int>();
      else if (k == "pose_rotation_deg") s.pose_rotation_deg = v.get<double>();
      else if (k == "pose_translation_frac") s.pose_translation_frac = v.get<double>();
      else if (k == "flow_sigma_px") s.flow_sigma_px = v.get<double>();
      else if (k == "match_sigma_px") s.match_sigma_px = v.get<double>();
      else if (k == "point_sigma_frac") s.point_sigma_frac = v.get<double>();
      else throw Error(ErrorCode::InvalidConfig, "unknown scene spec key " + k);
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::InvalidConfig, e.what());
  }
  s.validate();
  return s;
}

std::string synthetic_spec_to_json(const SyntheticSceneSpec& s) {
  const nlohmann::json j = {
      {"seed", s.seed},
      {"gaussian_count", s.gaussian_count},
      {"feature_fraction", s.feature_fraction},
      {"camera_count", s.camera_count},
      {"placement", s.placement},
      {"arc_degrees", s.arc_degrees},
      {"camera_distance", s.camera_distance},
      {"width", s.width},
      {"height", s.height},
      {"focal", s.focal},
      {"test_views", s.test_views},
      {"flow_neighbors", s.flow_neighbors},
      {"pose_rotation_deg", s.pose_rotation_deg},
      {"pose_translation_frac", s.pose_translation_frac},
      {"flow_sigma_px", s.flow_sigma_px},
      {"match_sigma_px", s.match_sigma_px},
      {"point_sigma_frac", s.point_sigma_frac},
  };
  return j.dump(2) + "\n";
}

SceneBundle synth_scene(const SyntheticSceneSpec& spec) {
  spec.validate();
  std::mt19937_64 rng(spec.seed);
  std::uniform_real_distribution<double> U(0.0, 1.0);
  auto uni = [&](double a, double b) { return a + (b - a) * U(rng); };
  auto random_common = [&](double opacity_lo) {
    GaussianCommon g;
    for (int k = 0; k < 3; ++k) g.log_scale[k] = std::log(uni(0.04, 0.11));
    const Vec3 axis = random_unit(rng);
    const double angle = uni(0.0, std::numbers::pi);
    const Eigen::Quaterniond q(Eigen::AngleAxisd(angle, axis));
    g.rotation = Vec4(q.w(), q.x(), q.y(), q.z());
    for (int k = 0; k < 3; ++k) g.color[k] = uni(0.1, 0.9);
    g.opacity = uni(opacity_lo, 0.95);
    return g;
  };
  const double extent = spec.camera_distance;
  auto random_center = [&]() {
    return Vec3(uni(-0.4, 0.4) * extent, uni(-0.3, 0.3) * extent, uni(-0.2, 0.2) * extent);
  };

  SceneBundle b;
  const std::vector<Camera> gt_cams = place_cameras(spec);
  b.test_views = spec.test_views;
  std::sort(b.test_views.begin(), b.test_views.end());
  b.train_views = complement(spec.camera_count, b.test_views);
  const std::vector<int>& T = b.train_views;
  const int W = spec.width, H = spec.height;

  const int n_features =
      std::min(spec.gaussian_count, static_cast<int>(std::lround(spec.feature_fraction * spec.gaussian_count)));
  const int n_fillers = spec.gaussian_count - n_features;
  const int attempts_per = 2000;

  std::vector<Feature> features;
  const int n_train = static_cast<int>(T.size());
  for (int k = 0; k < n_features; ++k) {
    const int a = k % (n_train - 1);
    int bview = a + 1;
    if ((k / (n_train - 1)) % 3 == 2 && a + 2 < n_train) bview = a + 2;
    bool placed = false;
    for (int attempt = 0; attempt < attempts_per && !placed; ++attempt) {
      Feature f;
      f.mu = random_center();
      f.common = random_common(0.75);
      f.view_i = T[a];
      f.view_j = T[bview];
      const Camera& ci = gt_cams[f.view_i];
      const Camera& cj = gt_cams[f.view_j];
      if (ci.pose.to_camera(f.mu).z() < 0.5 || cj.pose.to_camera(f.mu).z() < 0.5) continue;
      f.p_i = project(f.mu, ci);
      f.p_j = project(f.mu, cj);
      if (!inside(f.p_i, W, H, 3.0) || !inside(f.p_j, W, H, 3.0)) continue;
      f.boxes = footprints(f.common, f.mu, gt_cams);
      bool ok = true;
      for (const Feature& o : features) {
        if (covers(f.boxes, o, W, H) || covers(o.boxes, f, W, H)) {
          ok = false;
          break;
        }
      }
      if (!ok) continue;
      features.push_back(std::move(f));
      placed = true;
    }
    if (!placed) throw Error(ErrorCode::InvalidConfig, "could not place isolated features; lower feature_fraction");
  }

  std::vector<OrdinaryGaussian> fillers;
  for (int k = 0; k < n_fillers; ++k) {
    bool placed = false;
    for (int attempt = 0; attempt < attempts_per && !placed; ++attempt) {
      OrdinaryGaussian g;
      g.position = random_center();
      g.common = random_common(0.6);
      const std::vector<Box> boxes = footprints(g.common, g.position, gt_cams);
      bool visible = false;
      for (int v : T) visible = visible || !boxes[v].empty();
      if (!visible) continue;
      bool ok = true;
      for (const Feature& f : features) {
        if (covers(boxes, f, W, H)) {
          ok = false;
          break;
        }
      }
      if (!ok) continue;
      fillers.push_back(g);
      placed = true;
    }
    if (!placed) throw Error(ErrorCode::InvalidConfig, "could not place filler Gaussians around the features");
  }

  // ground-truth hybrid set: each feature is bound to its first anchor ray, with
  // a transparent partner on the second so the pair structure matches training
  GroundTruth gt;
  gt.cameras = gt_cams;
  HybridGaussianSet& s = gt.scene;
  s.ordinary = fillers;
  for (const Feature& f : features) {
    const auto first = static_cast<std::uint32_t>(s.ray_based.size());
    for (int end = 0; end < 2; ++end) {
      const int view = end == 0 ? f.view_i : f.view_j;
      RayGaussian r;
      r.common = f.common;
      if (end == 1) r.common.opacity = 0.0;
      r.ray_ref = static_cast<std::uint32_t>(s.anchors.size());
      s.anchors.push_back(RayAnchor{view, end == 0 ? f.p_i : f.p_j});
      r.z = ray_distance_to(gt_cams[view], f.mu);
      s.ray_based.push_back(r);
    }
    s.pairs.emplace_back(first, first + 1);
  }
  double zmin = std::numeric_limits<double>::infinity(), zmax = 0.0;
  for (const Camera& c : gt_cams) {
    for (const auto& g : s.ordinary) {
      zmin = std::min(zmin, ray_distance_to(c, g.position));
      zmax = std::max(zmax, ray_distance_to(c, g.position));
    }
    for (const auto& f : features) {
      zmin = std::min(zmin, ray_distance_to(c, f.mu));
      zmax = std::max(zmax, ray_distance_to(c, f.mu));
    }
  }
  s.z_near = 0.5 * zmin;
  s.z_far = 2.0 * zmax;
  s.validate(gt_cams.size());

  const RayTable rays = build_ray_table(s, gt_cams);
  for (int v = 0; v < spec.camera_count; ++v) {
    const RenderOutput out = rasterize(s, rays, gt_cams, v);
    b.images.push_back(out.view.color);
    Image depth = out.view.depth;
    for (std::size_t i = 0; i < depth.size(); ++i)
      if (!(out.view.alpha.data[i] > 0.5)) depth.data[i] = kInvalidDepth;
    gt.depths.push_back(std::move(depth));
  }

  // noisy observations
  std::normal_distribution<double> N(0.0, 1.0);
  for (const Feature& f : features) {
    MatchPair m;
    m.view_i = f.view_i;
    m.view_j = f.view_j;
    m.p_i = f.p_i;
    m.p_j = f.p_j + spec.match_sigma_px * Vec2(N(rng), N(rng));
    b.matches.push_back(m);
  }

  for (const auto& g : fillers) {
    b.points.positions.push_back(g.position);
    b.points.colors.push_back(g.common.color);
  }
  for (const Feature& f : features) {
    b.points.positions.push_back(f.mu);
    b.points.colors.push_back(f.common.color);
  }
  const double diameter = scene_diameter(b.points);
  for (auto& p : b.points.positions) p += spec.point_sigma_frac * diameter * Vec3(N(rng), N(rng), N(rng));

  b.cameras = gt_cams;
  for (Camera& c : b.cameras) {
    const Vec3 axis = random_unit(rng);
    c.pose.R = c.pose.R * rotation_from_rotvec(spec.pose_rotation_deg * kDeg * axis);
    c.pose.t += spec.pose_translation_frac * diameter * random_unit(rng);
  }

  const double background = 1.6 * spec.camera_distance;
  for (int a = 0; a < n_train; ++a) {
    for (int o = std::max(0, a - spec.flow_neighbors); o <= std::min(n_train - 1, a + spec.flow_neighbors); ++o) {
      if (o == a) continue;
      FlowField f{T[a], T[o], flow_between(gt_cams[T[a]], gt_cams[T[o]], gt.depths[T[a]], background)};
      if (spec.flow_sigma_px > 0.0)
        for (double& x : f.data.data) x += spec.flow_sigma_px * N(rng);
      b.flows.push_back(std::move(f));
    }
  }

  b.config = TrainConfig{};
  b.gt = std::move(gt);
  return b;
}

namespace {

fs::path image_path(const fs::path& dir, int v, const char* ext) {
  return dir / "images" / (std::to_string(v) + ext);
}

std::string pair_name(int i, int j, const char* ext) { return std::to_string(i) + "_" + std::to_string(j) + ext; }

// Sorted (i, j, path) triples of "<i>_<j><ext>" files in a directory.
std::vector<std::tuple<int, int, fs::path>> list_pairs(const fs::path& dir, const std::string& ext) {
  std::vector<std::tuple<int, int, fs::path>> out;
  if (!fs::is_directory(dir)) return out;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (e.path().extension() != ext) continue;
    int i = 0, j = 0;
    char tail = 0;
    if (std::sscanf(e.path().stem().string().c_str(), "%d_%d%c", &i, &j, &tail) != 2) {
      throw Error(ErrorCode::Format, "unexpected file name " + e.path().string());
    }
    out.emplace_back(i, j, e.path());
  }
  std::sort(out.begin(), out.end());
  return out;
}

void check_view(int v, std::size_t n, const std::string& what) {
  if (v < 0 || static_cast<std::size_t>(v) >= n) throw Error(ErrorCode::Format, what + " references unknown view");
}

}  // namespace

void write_bundle(const SceneBundle& b, const fs::path& dir) {
  fs::create_directories(dir / "images");
  fs::create_directories(dir / "matches");
  fs::create_directories(dir / "flow");
  write_cameras_json(dir / "cameras.json", b.cameras);
  write_file_atomic(dir / "split.json",
                    nlohmann::json{{"train", b.train_views}, {"test", b.test_views}}.dump(2) + "\n");
  write_file_atomic(dir / "config.json", train_config_to_json(b.config));
  write_points(dir / "points.gpts", b.points);
  for (std::size_t v = 0; v < b.images.size(); ++v) {
    write_gimg(image_path(dir, static_cast<int>(v), ".gimg"), b.images[v]);
    write_ppm(image_path(dir, static_cast<int>(v), ".ppm"), b.images[v]);
  }
  std::map<std::pair<int, int>, std::vector<MatchPair>> grouped;
  for (const MatchPair& m : b.matches) grouped[{m.view_i, m.view_j}].push_back(m);
  for (const auto& [key, ms] : grouped) write_matches(dir / "matches" / pair_name(key.first, key.second, ".txt"), ms);
  for (const FlowField& f : b.flows) write_flow(dir / "flow" / pair_name(f.view_i, f.view_j, ".gflw"), f.data);
  if (b.gt) {
    fs::create_directories(dir / "gt" / "depth");
    write_cameras_json(dir / "gt" / "cameras.json", b.gt->cameras);
    Checkpoint ck;
    ck.set = b.gt->scene;
    ck.cameras = b.gt->cameras;
    write_checkpoint(dir / "gt" / "scene.gspt", ck);
    for (std::size_t v = 0; v < b.gt->depths.size(); ++v)
      write_depth(dir / "gt" / "depth" / (std::to_string(v) + ".gdpt"), b.gt->depths[v]);
  }
}

SceneBundle read_bundle(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw Error(ErrorCode::Io, "bundle directory not found: " + dir.string());
  SceneBundle b;
  b.cameras = read_cameras_json(dir / "cameras.json");
  const std::size_t n = b.cameras.size();
  for (std::size_t v = 0; v < n; ++v) {
    if (b.cameras[v].id != static_cast<int>(v)) throw Error(ErrorCode::Format, "camera ids must be 0..n-1 in order");
  }
  try {
    const auto split = nlohmann::json::parse(read_file(dir / "split.json"));
    b.train_views = split.at("train").get<std::vector<int>>();
    b.test_views = split.at("test").get<std::vector<int>>();
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::Format, std::string("split.json: ") + e.what());
  }
  for (int v : b.train_views) check_view(v, n, "split.json");
  for (int v : b.test_views) check_view(v, n, "split.json");
  if (fs::exists(dir / "config.json")) b.config = train_config_from_json(read_file(dir / "config.json"));
  b.points = read_points(dir / "points.gpts");
  for (std::size_t v = 0; v < n; ++v) {
    b.images.push_back(read_gimg(image_path(dir, static_cast<int>(v), ".gimg")));
    const auto& K = b.cameras[v].intrinsics;
    if (b.images.back().width != K.width || b.images.back().height != K.height || b.images.back().channels != 3)
      throw Error(ErrorCode::Format, "image size does not match camera " + std::to_string(v));
  }
  for (const auto& [i, j, path] : list_pairs(dir / "matches", ".txt")) {
    check_view(i, n, path.string());
    check_view(j, n, path.string());
    for (MatchPair& m : read_matches(path, i, j)) b.matches.push_back(m);
  }
  for (const auto& [i, j, path] : list_pairs(dir / "flow", ".gflw")) {
    check_view(i, n, path.string());
    check_view(j, n, path.string());
    b.flows.push_back(FlowField{i, j, read_flow(path)});
  }
  if (fs::is_directory(dir / "gt")) {
    GroundTruth gt;
    gt.cameras = read_cameras_json(dir / "gt" / "cameras.json");
    gt.scene = read_checkpoint(dir / "gt" / "scene.gspt").set;
    for (std::size_t v = 0; v < n; ++v) gt.depths.push_back(read_depth(dir / "gt" / "depth" / (std::to_string(v) + ".gdpt")));
    b.gt = std::move(gt);
  }
  return b;
}

double scene_diameter(const PointCloud& points) {
  if (points.size() == 0) throw Error(ErrorCode::EmptyInput, "empty point cloud");
  Vec3 lo = points.positions[0], hi = points.positions[0];
  for (const Vec3& p : points.positions) {
    lo = lo.cwiseMin(p);
    hi = hi.cwiseMax(p);
  }
  return (hi - lo).norm();
}

SceneNormalization compute_normalization(const PointCloud& points) {
  const double d = scene_diameter(points);
  if (!(d > 0.0)) throw Error(ErrorCode::InvalidArgument, "point cloud has zero extent");
  Vec3 lo = points.positions[0], hi = points.positions[0];
  for (const Vec3& p : points.positions) {
    lo = lo.cwiseMin(p);
    hi = hi.cwiseMax(p);
  }
  return SceneNormalization{1.0 / d, 0.5 * (lo + hi)};
}

namespace {

void normalize_cameras(std::vector<Camera>& cams, const SceneNormalization& n) {
  for (Camera& c : cams) c.pose.t = n.scale * (c.pose.t - n.center);
}

void normalize_set(HybridGaussianSet& s, const SceneNormalization& n) {
  const double ls = std::log(n.scale);
  for (auto& g : s.ordinary) {
    g.position = n.scale * (g.position - n.center);
    g.common.log_scale.array() += ls;
  }
  for (auto& g : s.ray_based) {
    g.z *= n.scale;
    g.common.log_scale.array() += ls;
  }
  s.z_near *= n.scale;
  s.z_far *= n.scale;
}

}  // namespace

SceneBundle normalize_bundle(const SceneBundle& in, const SceneNormalization& n) {
  SceneBundle b = in;
  normalize_cameras(b.cameras, n);
  for (auto& p : b.points.positions) p = n.scale * (p - n.center);
  if (b.gt) {
    normalize_cameras(b.gt->cameras, n);
    normalize_set(b.gt->scene, n);
    for (Image& d : b.gt->depths)
      for (double& x : d.data)
        if (x > 0.0) x *= n.scale;
  }
  return b;
}

ImportedScene import_init(const SceneBundle& bundle) {
  if (bundle.cameras.empty()) throw Error(ErrorCode::EmptyInput, "bundle has no cameras");
  if (bundle.points.size() == 0) throw Error(ErrorCode::EmptyInput, "bundle has no points");
  ImportedScene out;
  out.normalization = compute_normalization(bundle.points);
  out.bundle = normalize_bundle(bundle, out.normalization);
  out.bundle.config.scene_diameter = 1.0;
  return out;
}

TrainingData make_training_data(const SceneBundle& b, const TrainConfig& config) {
  TrainingData d;
  d.cameras = b.cameras;
  d.images = b.images;
  d.train_views = b.train_views;
  for (const MatchPair& m : b.matches)
    if (contains(b.train_views, m.view_i) && contains(b.train_views, m.view_j)) d.matches.push_back(m);
  d.depth_targets = compute_depth_targets(b.cameras, b.train_views, b.flows, config.workers);
  return d;
}

HybridGaussianSet initial_model(const SceneBundle& b, const TrainConfig& config) {
  InitOptions opt;
  opt.seed = config.seed;
  opt.depth_views = b.train_views;
  std::vector<Image> images(b.images.size());
  for (int v : b.train_views) images[static_cast<std::size_t>(v)] = b.images[static_cast<std::size_t>(v)];
  std::vector<MatchPair> matches;
  for (const MatchPair& m : b.matches)
    if (contains(b.train_views, m.view_i) && contains(b.train_views, m.view_j)) matches.push_back(m);
  return init_hybrid(b.points, matches, b.cameras, images, opt);
}

HybridGaussianSet to_ordinary(const HybridGaussianSet& set, const std::vector<Camera>& cameras) {
  HybridGaussianSet out;
  out.ordinary = set.ordinary;
  out.z_near = set.z_near;
  out.z_far = set.z_far;
  const RayTable rays = build_ray_table(set, cameras);
  std::vector<Vec3> where(set.ray_based.size());
  for (std::size_t k = 0; k < set.ray_based.size(); ++k) where[k] = ray_gaussian_position(set.ray_based[k], rays);
  for (const auto& [a, b] : set.pairs) {
    const RayAnchor& A = set.anchors[set.ray_based[a].ray_ref];
    const RayAnchor& B = set.anchors[set.ray_based[b].ray_ref];
    const Camera& ca = cameras.at(static_cast<std::size_t>(A.view));
    try {
      const double D = flow_depth(A.pixel, B.pixel, ca, cameras.at(static_cast<std::size_t>(B.view)));
      where[a] = where[b] = ca.pose.to_world(D * (ca.intrinsics.inverse() * Vec3(A.pixel.x(), A.pixel.y(), 1.0)));
    } catch (const Error&) {
      // keep the current ray positions when the pair cannot be triangulated
    }
  }
  for (std::size_t k = 0; k < set.ray_based.size(); ++k)
    out.ordinary.push_back(OrdinaryGaussian{set.ray_based[k].common, where[k]});
  return out;
}

HybridGaussianSet triangulated_ground_truth(const SceneBundle& b) {
  if (!b.gt) throw Error(ErrorCode::InvalidArgument, "bundle carries no ground truth");
  HybridGaussianSet s = b.gt->scene;
  const std::vector<Camera>& cams = b.gt->cameras;
  if (s.pairs.size() != b.matches.size()) throw Error(ErrorCode::Format, "ground truth pairs do not follow the matches");
  for (std::size_t k = 0; k < s.pairs.size(); ++k) {
    const MatchPair& m = b.matches[k];
    const auto [a, c] = s.pairs[k];
    const Camera& ci = cams.at(static_cast<std::size_t>(m.view_i));
    const Camera& cj = cams.at(static_cast<std::size_t>(m.view_j));
    s.anchors[s.ray_based[a].ray_ref] = RayAnchor{m.view_i, m.p_i};
    s.anchors[s.ray_based[c].ray_ref] = RayAnchor{m.view_j, m.p_j};
    const Vec3 di = ci.intrinsics.inverse() * Vec3(m.p_i.x(), m.p_i.y(), 1.0);
    const Vec3 dj = cj.intrinsics.inverse() * Vec3(m.p_j.x(), m.p_j.y(), 1.0);
    s.ray_based[a].z = flow_depth(m.p_i, m.p_j, ci, cj) * di.norm();
    s.ray_based[c].z = flow_depth(m.p_j, m.p_i, cj, ci) * dj.norm();
  }
  return s;
}

Similarity fit_similarity(const std::vector<Camera>& source, const std::vector<Camera>& target,
                          const std::vector<int>& views) {
  Similarity sim;
  if (views.size() < 3) return sim;
  Eigen::Matrix3Xd src(3, static_cast<Eigen::Index>(views.size())), dst(3, static_cast<Eigen::Index>(views.size()));
  for (std::size_t k = 0; k < views.size(); ++k) {
    src.col(static_cast<Eigen::Index>(k)) = source.at(static_cast<std::size_t>(views[k])).pose.t;
    dst.col(static_cast<Eigen::Index>(k)) = target.at(static_cast<std::size_t>(views[k])).pose.t;
  }
  const Eigen::Matrix4d T = Eigen::umeyama(src, dst, true);
  const Mat3 sQ = T.topLeftCorner<3, 3>();
  sim.s = sQ.col(0).norm();
  sim.Q = sQ / sim.s;
  sim.c = T.topRightCorner<3, 1>();
  return sim;
}

Mat3 fit_rotation(const std::vector<Camera>& source, const std::vector<Camera>& target,
                  const std::vector<int>& views) {
  Mat3 M = Mat3::Zero();
  for (int v : views) M += target.at(static_cast<std::size_t>(v)).pose.R * source.at(static_cast<std::size_t>(v)).pose.R.transpose();
  if (views.empty()) return Mat3::Identity();
  Eigen::JacobiSVD<Mat3> svd(M, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Mat3 D = Mat3::Identity();
  D(2, 2) = (svd.matrixU() * svd.matrixV().transpose()).determinant() < 0 ? -1.0 : 1.0;
  return svd.matrixU() * D * svd.matrixV().transpose();
}

EvalResult evaluate(const HybridGaussianSet& model, const std::vector<Camera>& trained_cameras,
                    const SceneBundle& b, const std::vector<int>& views, const TrainConfig& config) {
  if (views.empty()) throw Error(ErrorCode::EmptySplit, "no views to evaluate");
  EvalResult r;
  r.cameras = trained_cameras;
  const Similarity sim = fit_similarity(b.cameras, trained_cameras, b.train_views);
  for (int v : views) {
    const auto c = static_cast<std::size_t>(v);
    if (contains(b.train_views, v)) continue;
    r.cameras.at(c).pose = sim.apply(b.cameras.at(c).pose);
    r.cameras[c].pose = refine_test_pose(model, r.cameras, v, b.images.at(c), config);
  }
  RenderOptions ropt;
  ropt.workers = config.workers;
  const RayTable rays = build_ray_table(model, r.cameras);
  Mat3 align = Mat3::Identity();
  if (b.gt) align = fit_rotation(trained_cameras, b.gt->cameras, b.train_views);
  double rot_sum = 0.0;
  for (int v : views) {
    const auto c = static_cast<std::size_t>(v);
    const RenderOutput out = rasterize(model, rays, r.cameras, v, ropt);
    ViewMetrics m;
    m.view = v;
    m.psnr = psnr(out.view.color, b.images[c]);
    m.ssim = ssim(out.view.color, b.images[c]);
    if (b.gt) {
      m.rotation_error_deg = rotation_angle(align * r.cameras[c].pose.R, b.gt->cameras[c].pose.R) / kDeg;
      rot_sum += m.rotation_error_deg;
    }
    r.mean_psnr += m.psnr;
    r.mean_ssim += m.ssim;
    r.views.push_back(m);
  }
  const double n = static_cast<double>(views.size());
  r.mean_psnr /= n;
  r.mean_ssim /= n;
  if (b.gt) r.mean_rotation_error_deg = rot_sum / n;
  return r;
}

Ablation parse_ablation(const std::string& name) {
  if (name == "none") return Ablation::None;
  if (name == "hybrid") return Ablation::Hybrid;
  if (name == "graph") return Ablation::Graph;
  if (name == "depth") return Ablation::Depth;
  throw Error(ErrorCode::InvalidArgument, "unknown ablation " + name);
}

const char* to_string(Ablation a) {
  switch (a) {
    case Ablation::None: return "none";
    case Ablation::Hybrid: return "hybrid";
    case Ablation::Graph: return "graph";
    case Ablation::Depth: return "depth";
  }
  return "?";
}

RunResult run_experiment(const SceneBundle& raw, TrainConfig config, Ablation ablation, const TrainOutputs& outputs,
                         bool evaluate_initial) {
  const ImportedScene imported = import_init(raw);
  const SceneBundle& b = imported.bundle;
  config.scene_diameter = 1.0;
  if (ablation == Ablation::Graph) config.use_refiner = false;
  if (ablation == Ablation::Depth) config.phase1.depth = config.phase2.depth = 0.0;
  config.validate();

  const TrainingData data = make_training_data(b, config);
  HybridGaussianSet init = initial_model(b, config);
  if (ablation == Ablation::Hybrid) init = to_ordinary(init, b.cameras);

  RunResult r;
  if (evaluate_initial) r.initial = evaluate(init, b.cameras, b, b.test_views, config);
  TrainOutputs out = outputs;
  out.normalization = imported.normalization;
  r.train = train(data, std::move(init), config, out);
  r.final_eval = evaluate(r.train.set, r.train.cameras, b, b.test_views, config);
  return r;
}

TrainConfig apply_seed_override(TrainConfig config) {
  if (const char* s = std::getenv("GESPLAT_SEED"); s != nullptr && *s != '\0') {
    char* end = nullptr;
    const unsigned long long v = std::strtoull(s, &end, 10);
    if (end == nullptr || *end != '\0') throw Error(ErrorCode::InvalidConfig, "GESPLAT_SEED must be an integer");
    config.seed = v;
  }
  return config;
}

}  // namespace geosplat
