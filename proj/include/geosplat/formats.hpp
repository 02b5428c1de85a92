#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "geosplat/gaussians.hpp"
#include "geosplat/geometry.hpp"
#include "geosplat/image.hpp"
#include "geosplat/match.hpp"

namespace geosplat {

namespace fs = std::filesystem;

/// Writes through a temporary file and renames it into place.
void write_file_atomic(const fs::path& path, const std::string& bytes);
std::string read_file(const fs::path& path);

std::uint64_t fnv1a(const std::string& bytes);

std::vector<Camera> read_cameras_json(const fs::path& path);
void write_cameras_json(const fs::path& path, const std::vector<Camera>& cameras);

PointCloud read_points(const fs::path& path);  // "GPTS"
void write_points(const fs::path& path, const PointCloud& points);

Image read_gimg(const fs::path& path);  // "GIMG", float raster
void write_gimg(const fs::path& path, const Image& image);

Image read_ppm(const fs::path& path);  // binary P6, values scaled to [0,1]
void write_ppm(const fs::path& path, const Image& image);

Image read_flow(const fs::path& path);  // "GFLW", H x W x 2
void write_flow(const fs::path& path, const Image& flow);

Image read_depth(const fs::path& path);  // "GDPT", -1 marks invalid
void write_depth(const fs::path& path, const Image& depth);

/// "u_i v_i u_j v_j [weight]" per line, '#' comments.
std::vector<MatchPair> read_matches(const fs::path& path, int view_i, int view_j);
void write_matches(const fs::path& path, const std::vector<MatchPair>& matches);

/// Maps imported world coordinates into the normalized frame: x' = scale * (x - center).
struct SceneNormalization {
  double scale = 1.0;
  Vec3 center = Vec3::Zero();
};

struct Checkpoint {
  HybridGaussianSet set;
  std::vector<Camera> cameras;
  SceneNormalization normalization;
  std::vector<double> refiner;  // empty when no refiner was trained
};

/// GSPT container: Gaussians, pair table, then RAYS, CAMS, NORM and optional GRFN sections.
std::string serialize_checkpoint(const Checkpoint& ckpt);
Checkpoint deserialize_checkpoint(const std::string& bytes);
void write_checkpoint(const fs::path& path, const Checkpoint& ckpt);
Checkpoint read_checkpoint(const fs::path& path);

/// Hash of the Gaussian records alone.
std::uint64_t gaussian_hash(const HybridGaussianSet& set);

}  // namespace geosplat
