#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "geosplat/flow_depth.hpp"
#include "geosplat/formats.hpp"
#include "geosplat/gaussians.hpp"
#include "geosplat/graph_refine.hpp"
#include "geosplat/image.hpp"
#include "geosplat/match.hpp"
#include "geosplat/renderer.hpp"

namespace geosplat {

struct LossWeights {
  double gp = 1.0;
  double rg = 0.0;
  double depth = 0.0;
};

struct TrainConfig {
  int total_iters = 5000;
  int phase1_iters = 2000;
  LossWeights phase1{1.0, 0.0, 0.0};
  LossWeights phase2{1.0, 0.3, 0.1};
  double ssim_lambda = 0.2;

  double z_lr_start = 0.1;
  double z_lr_end = 1.6e-6;
  double position_lr_start = 1.6e-4;
  double position_lr_end = 1.6e-6;
  double scale_lr = 5e-3;
  double rotation_lr = 1e-3;
  double color_lr = 2.5e-3;
  double opacity_lr = 0.05;
  double pose_rotation_lr = 1e-4;
  double pose_translation_lr = 1e-4;  // multiplied by the scene diameter
  double scene_diameter = 1.0;
  bool optimize_poses = true;

  bool use_refiner = true;
  int refiner_iters = 200;  // active for the final refiner_iters iterations
  double refiner_lr = 1e-3;
  int graph_k = 8;
  double graph_radius = 0.0;  // <= 0 selects twice the median nearest-neighbor distance
  OffsetScales offset_scales;

  bool rg_normalize_depth = true;      // geometry loss samples D / alpha_acc
  bool depth_loss_normalized = false;  // depth loss compares D / alpha_acc instead of D
  // Residuals below this many pixels count as converged in the position and geometry losses.
  double residual_floor_px = 1e-9;
  double photo_residual_floor = 1e-6;  // per-channel dead zone of the photometric loss

  int test_pose_iters = 500;
  double test_pose_lr_start = 3e-3;
  double test_pose_lr_end = 1e-5;

  std::uint64_t seed = 42;
  int workers = 1;
  int checkpoint_every = 1000;
  int max_iters = 0;  // > 0 stops after this many iterations of the schedule

  void validate() const;
  int refiner_start() const { return total_iters - refiner_iters; }
  LossWeights weights_at(int iter) const { return iter < phase1_iters ? phase1 : phase2; }
  double z_lr(int iter) const;
  double position_lr(int iter) const;
};

/// Throws InvalidConfig on unknown keys or bad values. Keys mirror the field names.
TrainConfig train_config_from_json(const std::string& text, const TrainConfig& base = {});
std::string train_config_to_json(const TrainConfig& config);

/// exp-interpolation from start (t = 0) to end (t = 1).
double exp_lr(double start, double end, double t);

struct LossBreakdown {
  double photo = 0.0;
  double gp = 0.0;
  double rg = 0.0;
  double depth = 0.0;
  double total = 0.0;
  double psnr = 0.0;
};

double combine(const LossBreakdown& l, const LossWeights& w);

/// Everything training consumes, in the normalized scene frame.
struct TrainingData {
  std::vector<Camera> cameras;     // all views, initial poses
  std::vector<Image> images;       // per view
  std::vector<int> train_views;
  std::vector<MatchPair> matches;  // between training views
  std::vector<Image> depth_targets;  // per view, empty when absent
};

/// Flow-derived depth targets for each training view from its flows to the other training views.
std::vector<Image> compute_depth_targets(const std::vector<Camera>& cameras, const std::vector<int>& train_views,
                                         const std::vector<FlowField>& flows, int workers = 1);

/// Loss of one rendered view and, if `grad` is given, its gradient.
/// The photometric term and the view's geometry/depth terms come from `view`;
/// the position loss covers every pair.
LossBreakdown total_loss(const HybridGaussianSet& set, const std::vector<Camera>& cameras, const TrainingData& data,
                         int view, const LossWeights& weights, const TrainConfig& config,
                         SceneGradient* grad = nullptr, RenderedView* rendered = nullptr);

struct TrainOutputs {
  std::filesystem::path log_csv;     // empty: no log file
  std::filesystem::path checkpoint;  // empty: no periodic checkpoints
  SceneNormalization normalization;  // recorded in checkpoints
};

struct TrainResult {
  HybridGaussianSet set;  // refined attributes baked in
  std::vector<Camera> cameras;
  std::vector<double> refiner;
  std::vector<LossBreakdown> log;
  std::string log_csv;
};

/// Joint optimization of Gaussians, training poses and, at the end, the refiner.
/// Throws NumericalFailure (after writing a diagnostic checkpoint when configured)
/// if the loss becomes non-finite.
TrainResult train(const TrainingData& data, HybridGaussianSet init, const TrainConfig& config,
                  const TrainOutputs& outputs = {});

/// Photometric-only refinement of one camera's pose against `image`; Gaussians are untouched.
CameraPose refine_test_pose(const HybridGaussianSet& set, const std::vector<Camera>& cameras, int view,
                            const Image& image, const TrainConfig& config);

std::string format_log_row(int iter, const LossBreakdown& l);
inline constexpr const char* kLogHeader = "iter,L_photo,L_gp,L_rg,L_depth,total,psnr_train";

}  // namespace geosplat
