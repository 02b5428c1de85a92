#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "geosplat/flow_depth.hpp"
#include "geosplat/formats.hpp"
#include "geosplat/gaussians.hpp"
#include "geosplat/optimize.hpp"

namespace geosplat {

/// Parameters of a generated scene. Pose noise is a rotation of exactly
/// `pose_rotation_deg` about a random axis plus a center offset of exactly
/// `pose_translation_frac` times the scene diameter in a random direction.
struct SyntheticSceneSpec {
  std::uint64_t seed = 7;
  int gaussian_count = 200;
  double feature_fraction = 0.3;  // share of Gaussians that become matched features
  int camera_count = 9;
  std::string placement = "arc";  // "arc" (forward facing) or "ring"
  double arc_degrees = 40.0;
  double camera_distance = 4.0;
  int width = 128;
  int height = 96;
  double focal = 110.0;
  std::vector<int> test_views{1, 4, 7};
  int flow_neighbors = 2;  // flows to this many training views on each side

  double pose_rotation_deg = 2.0;
  double pose_translation_frac = 0.02;
  double flow_sigma_px = 0.0;
  double match_sigma_px = 0.0;
  double point_sigma_frac = 0.005;

  void validate() const;
};

/// The reference "desk-llff" scene: 200 Gaussians, 6 training and 3 test views, 128 x 96.
SyntheticSceneSpec reference_scene_spec();

SyntheticSceneSpec synthetic_spec_from_json(const std::string& text);
std::string synthetic_spec_to_json(const SyntheticSceneSpec& spec);

struct GroundTruth {
  std::vector<Camera> cameras;
  HybridGaussianSet scene;    // features as ray pairs with an invisible partner
  std::vector<Image> depths;  // alpha-blended depth, kInvalidDepth where alpha <= 0.5
};

/// Everything training consumes. Flows are relative to the ground-truth geometry.
struct SceneBundle {
  std::vector<Camera> cameras;  // initial (noisy) poses
  std::vector<Image> images;
  PointCloud points;
  std::vector<MatchPair> matches;
  std::vector<FlowField> flows;
  std::vector<int> train_views;
  std::vector<int> test_views;
  TrainConfig config;
  std::optional<GroundTruth> gt;
};

SceneBundle synth_scene(const SyntheticSceneSpec& spec);

/// Directory layout: cameras.json, split.json, config.json, points.gpts,
/// images/<id>.gimg (+ .ppm preview), matches/<i>_<j>.txt, flow/<i>_<j>.gflw,
/// gt/cameras.json, gt/scene.gspt, gt/depth/<id>.gdpt.
void write_bundle(const SceneBundle& bundle, const std::filesystem::path& dir);
SceneBundle read_bundle(const std::filesystem::path& dir);

/// Center and scale that map the point cloud's bounding box to unit diagonal.
SceneNormalization compute_normalization(const PointCloud& points);

/// Applies x' = scale (x - center) to cameras, points, depths and ground truth.
SceneBundle normalize_bundle(const SceneBundle& bundle, const SceneNormalization& n);

/// Bounding-box diagonal of the points.
double scene_diameter(const PointCloud& points);

struct ImportedScene {
  SceneBundle bundle;  // normalized
  SceneNormalization normalization;
};

/// Normalized copy of the bundle, ready for init_hybrid. Throws EmptyInput on
/// an empty point cloud or camera list.
ImportedScene import_init(const SceneBundle& bundle);

/// Training inputs of a normalized bundle: matches between training views and
/// flow-depth targets from the initial poses.
TrainingData make_training_data(const SceneBundle& bundle, const TrainConfig& config);

/// init_hybrid over the bundle's points, matches and training images.
HybridGaussianSet initial_model(const SceneBundle& bundle, const TrainConfig& config);

/// Every ray pair replaced by two ordinary Gaussians at the pair's triangulated point.
HybridGaussianSet to_ordinary(const HybridGaussianSet& set, const std::vector<Camera>& cameras);

/// Ground-truth scene converted to the same frame as a normalized bundle.
HybridGaussianSet triangulated_ground_truth(const SceneBundle& bundle);

/// Similarity (s, Q, c) with target ~= s Q source + c fitted on camera centers;
/// rotations follow Q.
struct Similarity {
  double s = 1.0;
  Mat3 Q = Mat3::Identity();
  Vec3 c = Vec3::Zero();

  CameraPose apply(const CameraPose& p) const { return CameraPose{Q * p.R, s * Q * p.t + c}; }
};

Similarity fit_similarity(const std::vector<Camera>& source, const std::vector<Camera>& target,
                          const std::vector<int>& views);

/// Rotation best mapping source orientations onto target orientations (chordal mean).
Mat3 fit_rotation(const std::vector<Camera>& source, const std::vector<Camera>& target,
                  const std::vector<int>& views);

struct ViewMetrics {
  int view = 0;
  double psnr = 0.0;
  double ssim = 0.0;
  double rotation_error_deg = -1.0;  // negative when no ground truth is available
};

struct EvalResult {
  std::vector<ViewMetrics> views;
  double mean_psnr = 0.0;
  double mean_ssim = 0.0;
  double mean_rotation_error_deg = -1.0;
  std::vector<Camera> cameras;  // poses used for rendering
};

/// Renders `views` of a normalized bundle with the trained model. Held-out
/// views start from their initial pose carried through the similarity between
/// initial and trained training cameras, then go through refine_test_pose.
/// Throws EmptySplit.
EvalResult evaluate(const HybridGaussianSet& model, const std::vector<Camera>& trained_cameras,
                    const SceneBundle& bundle, const std::vector<int>& views, const TrainConfig& config);

enum class Ablation { None, Hybrid, Graph, Depth };

Ablation parse_ablation(const std::string& name);
const char* to_string(Ablation a);

struct RunResult {
  TrainResult train;
  EvalResult initial;
  EvalResult final_eval;
};

/// Import, train with the given switch and evaluate the held-out split before and after.
RunResult run_experiment(const SceneBundle& raw_bundle, TrainConfig config, Ablation ablation,
                         const TrainOutputs& outputs = {}, bool evaluate_initial = true);

/// Config with the seed taken from GESPLAT_SEED when it is set.
TrainConfig apply_seed_override(TrainConfig config);

}  // namespace geosplat
