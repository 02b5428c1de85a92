#include "geosplat/formats.hpp"

#include <bit>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <sstream>

#include <nlohmann/json.hpp>

#include "geosplat/error.hpp"

namespace geosplat {

namespace {

static_assert(std::endian::native == std::endian::little, "binary formats assume a little-endian host");

class Writer {
 public:
  void magic(const char* m) { bytes_.append(m, 4); }
  template <typename T>
  void put(T v) {
    char buf[sizeof(T)];
    std::memcpy(buf, &v, sizeof(T));
    bytes_.append(buf, sizeof(T));
  }
  void f32(double v) { put(static_cast<float>(v)); }
  void u32(std::size_t v) { put(static_cast<std::uint32_t>(v)); }
  const std::string& bytes() const { return bytes_; }

 private:
  std::string bytes_;
};

class Reader {
 public:
  Reader(const std::string& bytes, std::string what) : bytes_(bytes), what_(std::move(what)) {}
  bool done() const { return pos_ == bytes_.size(); }
  std::string peek_magic() const { return pos_ + 4 <= bytes_.size() ? bytes_.substr(pos_, 4) : std::string(); }
  void magic(const char* m) {
    if (peek_magic() != m) throw Error(ErrorCode::Format, what_ + ": expected " + m + " section");
    pos_ += 4;
  }
  template <typename T>
  T get() {
    if (pos_ + sizeof(T) > bytes_.size()) throw Error(ErrorCode::Format, what_ + ": truncated");
    T v;
    std::memcpy(&v, bytes_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }
  double f32() { return get<float>(); }
  std::uint32_t u32() { return get<std::uint32_t>(); }
  void expect_end() const {
    if (!done()) throw Error(ErrorCode::Format, what_ + ": trailing bytes");
  }
  void need(std::uint64_t n) const {
    if (pos_ + n > bytes_.size()) throw Error(ErrorCode::Format, what_ + ": truncated");
  }

 private:
  const std::string& bytes_;
  std::string what_;
  std::size_t pos_ = 0;
};

std::string raster_bytes(const char* magic, const Image& img, bool with_channels) {
  Writer w;
  w.magic(magic);
  w.u32(static_cast<std::size_t>(img.width));
  w.u32(static_cast<std::size_t>(img.height));
  if (with_channels) w.u32(static_cast<std::size_t>(img.channels));
  for (double v : img.data) w.f32(v);
  return w.bytes();
}

Image raster_read(const fs::path& path, const char* magic, int fixed_channels) {
  const std::string bytes = read_file(path);
  Reader r(bytes, path.string());
  r.magic(magic);
  const int w = static_cast<int>(r.u32()), h = static_cast<int>(r.u32());
  const int c = fixed_channels > 0 ? fixed_channels : static_cast<int>(r.u32());
  if (w < 1 || h < 1 || c < 1) throw Error(ErrorCode::Format, path.string() + ": bad raster size");
  r.need(static_cast<std::uint64_t>(w) * h * c * 4);
  Image img(w, h, c);
  for (double& v : img.data) v = r.f32();
  r.expect_end();
  return img;
}

void common_out(Writer& w, const GaussianCommon& g) {
  for (int k = 0; k < 3; ++k) w.f32(g.log_scale[k]);
  for (int k = 0; k < 4; ++k) w.f32(g.rotation[k]);
  for (int k = 0; k < 3; ++k) w.f32(g.color[k]);
  w.f32(g.opacity);
}

GaussianCommon common_in(Reader& r) {
  GaussianCommon g;
  for (int k = 0; k < 3; ++k) g.log_scale[k] = r.f32();
  for (int k = 0; k < 4; ++k) g.rotation[k] = r.f32();
  for (int k = 0; k < 3; ++k) g.color[k] = r.f32();
  g.opacity = r.f32();
  return g;
}

void gaussians_out(Writer& w, const HybridGaussianSet& set) {
  w.magic("GSPT");
  w.u32(1);
  w.u32(set.ordinary.size());
  w.u32(set.ray_based.size());
  w.u32(set.pairs.size());
  for (const auto& g : set.ordinary) {
    for (int k = 0; k < 3; ++k) w.f32(g.position[k]);
    common_out(w, g.common);
  }
  for (const auto& g : set.ray_based) {
    common_out(w, g.common);
    w.f32(static_cast<double>(g.ray_ref));
    w.f32(g.z);
  }
  for (const auto& [a, b] : set.pairs) {
    w.u32(a);
    w.u32(b);
  }
}

}  // namespace

void write_file_atomic(const fs::path& path, const std::string& bytes) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorCode::Io, "cannot open " + tmp.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw Error(ErrorCode::Io, "write failed: " + tmp.string());
  }
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec) throw Error(ErrorCode::Io, "rename failed: " + path.string() + ": " + ec.message());
}

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::Io, "cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::uint64_t fnv1a(const std::string& bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::vector<Camera> read_cameras_json(const fs::path& path) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(read_file(path));
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::Format, path.string() + ": " + e.what());
  }
  if (!j.is_array()) throw Error(ErrorCode::Format, path.string() + ": expected an array of cameras");
  std::vector<Camera> cams;
  try {
    for (const auto& c : j) {
      Camera cam;
      cam.id = c.at("id").get<int>();
      cam.intrinsics = CameraIntrinsics{c.at("fx").get<double>(), c.at("fy").get<double>(), c.at("cx").get<double>(),
                                        c.at("cy").get<double>(), c.at("width").get<int>(), c.at("height").get<int>()};
      const auto R = c.at("R").get<std::vector<double>>();
      const auto t = c.at("t").get<std::vector<double>>();
      if (R.size() != 9 || t.size() != 3) throw Error(ErrorCode::Format, path.string() + ": R needs 9 and t 3 values");
      for (int r = 0; r < 3; ++r)
        for (int k = 0; k < 3; ++k) cam.pose.R(r, k) = R[static_cast<std::size_t>(3 * r + k)];
      cam.pose.t = Vec3(t[0], t[1], t[2]);
      cams.push_back(cam);
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::Format, path.string() + ": " + e.what());
  }
  return cams;
}

void write_cameras_json(const fs::path& path, const std::vector<Camera>& cameras) {
  nlohmann::json j = nlohmann::json::array();
  for (const Camera& c : cameras) {
    std::vector<double> R(9);
    for (int r = 0; r < 3; ++r)
      for (int k = 0; k < 3; ++k) R[static_cast<std::size_t>(3 * r + k)] = c.pose.R(r, k);
    j.push_back({{"id", c.id},
                 {"fx", c.intrinsics.fx},
                 {"fy", c.intrinsics.fy},
                 {"cx", c.intrinsics.cx},
                 {"cy", c.intrinsics.cy},
                 {"width", c.intrinsics.width},
                 {"height", c.intrinsics.height},
                 {"R", R},
                 {"t", {c.pose.t.x(), c.pose.t.y(), c.pose.t.z()}}});
  }
  write_file_atomic(path, j.dump(2) + "\n");
}

PointCloud read_points(const fs::path& path) {
  const std::string bytes = read_file(path);
  Reader r(bytes, path.string());
  r.magic("GPTS");
  const std::uint32_t n = r.u32();
  r.need(static_cast<std::uint64_t>(n) * 24);
  PointCloud pc;
  pc.positions.resize(n);
  pc.colors.resize(n);
  for (std::uint32_t i = 0; i < n; ++i) {
    for (int k = 0; k < 3; ++k) pc.positions[i][k] = r.f32();
    for (int k = 0; k < 3; ++k) pc.colors[i][k] = r.f32();
  }
  r.expect_end();
  return pc;
}

void write_points(const fs::path& path, const PointCloud& points) {
  Writer w;
  w.magic("GPTS");
  w.u32(points.size());
  for (std::size_t i = 0; i < points.size(); ++i) {
    for (int k = 0; k < 3; ++k) w.f32(points.positions[i][k]);
    const Vec3 c = i < points.colors.size() ? points.colors[i] : Vec3::Constant(0.5);
    for (int k = 0; k < 3; ++k) w.f32(c[k]);
  }
  write_file_atomic(path, w.bytes());
}

Image read_gimg(const fs::path& path) { return raster_read(path, "GIMG", 0); }
void write_gimg(const fs::path& path, const Image& image) { write_file_atomic(path, raster_bytes("GIMG", image, true)); }

Image read_flow(const fs::path& path) { return raster_read(path, "GFLW", 2); }
void write_flow(const fs::path& path, const Image& flow) {
  if (flow.channels != 2) throw Error(ErrorCode::InvalidArgument, "flow rasters have two channels");
  write_file_atomic(path, raster_bytes("GFLW", flow, false));
}

Image read_depth(const fs::path& path) { return raster_read(path, "GDPT", 1); }
void write_depth(const fs::path& path, const Image& depth) {
  if (depth.channels != 1) throw Error(ErrorCode::InvalidArgument, "depth rasters have one channel");
  write_file_atomic(path, raster_bytes("GDPT", depth, false));
}

Image read_ppm(const fs::path& path) {
  const std::string bytes = read_file(path);
  std::istringstream in(bytes);
  std::string tag;
  int w = 0, h = 0, maxval = 0;
  auto token = [&](auto& v) {
    in >> std::ws;
    while (in.peek() == '#') {
      std::string line;
      std::getline(in, line);
      in >> std::ws;
    }
    in >> v;
  };
  token(tag);
  token(w);
  token(h);
  token(maxval);
  if (tag != "P6" || w < 1 || h < 1 || maxval != 255 || !in) throw Error(ErrorCode::Format, path.string() + ": not an 8-bit P6 image");
  in.get();
  const auto offset = static_cast<std::size_t>(in.tellg());
  if (bytes.size() - offset != static_cast<std::size_t>(w) * h * 3) throw Error(ErrorCode::Format, path.string() + ": bad pixel payload");
  Image img(w, h, 3);
  for (std::size_t i = 0; i < img.size(); ++i) img.data[i] = static_cast<unsigned char>(bytes[offset + i]) / 255.0;
  return img;
}

void write_ppm(const fs::path& path, const Image& image) {
  if (image.channels != 3 && image.channels != 1) throw Error(ErrorCode::InvalidArgument, "PPM needs 1 or 3 channels");
  std::string out = "P6\n" + std::to_string(image.width) + " " + std::to_string(image.height) + "\n255\n";
  for (int y = 0; y < image.height; ++y)
    for (int x = 0; x < image.width; ++x)
      for (int c = 0; c < 3; ++c) {
        const double v = image(x, y, image.channels == 3 ? c : 0);
        out.push_back(static_cast<char>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0)));
      }
  write_file_atomic(path, out);
}

std::vector<MatchPair> read_matches(const fs::path& path, int view_i, int view_j) {
  const std::string text = read_file(path);
  std::istringstream in(text);
  std::vector<MatchPair> out;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    std::istringstream ls(line);
    std::vector<double> v;
    double x;
    while (ls >> x) v.push_back(x);
    if (!ls.eof()) throw Error(ErrorCode::Format, path.string() + ":" + std::to_string(lineno) + ": not a number");
    if (v.empty()) continue;
    if (v.size() != 4 && v.size() != 5) throw Error(ErrorCode::Format, path.string() + ":" + std::to_string(lineno) + ": expected 4 or 5 values");
    MatchPair m;
    m.view_i = view_i;
    m.view_j = view_j;
    m.p_i = Vec2(v[0], v[1]);
    m.p_j = Vec2(v[2], v[3]);
    m.weight = v.size() == 5 ? v[4] : 1.0;
    out.push_back(m);
  }
  return out;
}

void write_matches(const fs::path& path, const std::vector<MatchPair>& matches) {
  std::string out = "# u_i v_i u_j v_j weight\n";
  char buf[256];
  for (const MatchPair& m : matches) {
    std::snprintf(buf, sizeof buf, "%.17g %.17g %.17g %.17g %.17g\n", m.p_i.x(), m.p_i.y(), m.p_j.x(), m.p_j.y(),
                  m.weight);
    out += buf;
  }
  write_file_atomic(path, out);
}

std::string serialize_checkpoint(const Checkpoint& ckpt) {
  Writer w;
  gaussians_out(w, ckpt.set);
  w.magic("RAYS");
  w.u32(ckpt.set.anchors.size());
  for (const RayAnchor& a : ckpt.set.anchors) {
    w.u32(static_cast<std::size_t>(a.view));
    w.put(a.pixel.x());
    w.put(a.pixel.y());
  }
  w.put(ckpt.set.z_near);
  w.put(ckpt.set.z_far);
  w.magic("CAMS");
  w.u32(ckpt.cameras.size());
  for (const Camera& c : ckpt.cameras) {
    w.put(static_cast<std::int32_t>(c.id));
    w.u32(static_cast<std::size_t>(c.intrinsics.width));
    w.u32(static_cast<std::size_t>(c.intrinsics.height));
    for (double v : {c.intrinsics.fx, c.intrinsics.fy, c.intrinsics.cx, c.intrinsics.cy}) w.put(v);
    for (int r = 0; r < 3; ++r)
      for (int k = 0; k < 3; ++k) w.put(c.pose.R(r, k));
    for (int k = 0; k < 3; ++k) w.put(c.pose.t[k]);
  }
  w.magic("NORM");
  w.put(ckpt.normalization.scale);
  for (int k = 0; k < 3; ++k) w.put(ckpt.normalization.center[k]);
  if (!ckpt.refiner.empty()) {
    w.magic("GRFN");
    w.u32(ckpt.refiner.size());
    for (double v : ckpt.refiner) w.f32(v);
  }
  return w.bytes();
}

Checkpoint deserialize_checkpoint(const std::string& bytes) {
  Reader r(bytes, "checkpoint");
  Checkpoint ck;
  r.magic("GSPT");
  if (r.u32() != 1) throw Error(ErrorCode::Format, "checkpoint: unsupported version");
  const std::uint32_t n_ord = r.u32(), n_ray = r.u32(), n_pair = r.u32();
  r.need(static_cast<std::uint64_t>(n_ord) * 14 * 4 + static_cast<std::uint64_t>(n_ray) * 13 * 4 +
         static_cast<std::uint64_t>(n_pair) * 8);
  ck.set.ordinary.resize(n_ord);
  for (auto& g : ck.set.ordinary) {
    for (int k = 0; k < 3; ++k) g.position[k] = r.f32();
    g.common = common_in(r);
  }
  ck.set.ray_based.resize(n_ray);
  for (auto& g : ck.set.ray_based) {
    g.common = common_in(r);
    g.ray_ref = static_cast<std::uint32_t>(r.f32());
    g.z = r.f32();
  }
  ck.set.pairs.resize(n_pair);
  for (auto& [a, b] : ck.set.pairs) {
    a = r.u32();
    b = r.u32();
  }
  while (!r.done()) {
    const std::string m = r.peek_magic();
    if (m == "RAYS") {
      r.magic("RAYS");
      const std::uint32_t n = r.u32();
      r.need(static_cast<std::uint64_t>(n) * 20);
      ck.set.anchors.resize(n);
      for (auto& a : ck.set.anchors) {
        a.view = static_cast<int>(r.u32());
        a.pixel.x() = r.get<double>();
        a.pixel.y() = r.get<double>();
      }
      ck.set.z_near = r.get<double>();
      ck.set.z_far = r.get<double>();
    } else if (m == "CAMS") {
      r.magic("CAMS");
      const std::uint32_t n = r.u32();
      r.need(static_cast<std::uint64_t>(n) * (12 + 16 * 8));
      ck.cameras.resize(n);
      for (auto& c : ck.cameras) {
        c.id = r.get<std::int32_t>();
        c.intrinsics.width = static_cast<int>(r.u32());
        c.intrinsics.height = static_cast<int>(r.u32());
        c.intrinsics.fx = r.get<double>();
        c.intrinsics.fy = r.get<double>();
        c.intrinsics.cx = r.get<double>();
        c.intrinsics.cy = r.get<double>();
        for (int i = 0; i < 3; ++i)
          for (int k = 0; k < 3; ++k) c.pose.R(i, k) = r.get<double>();
        for (int k = 0; k < 3; ++k) c.pose.t[k] = r.get<double>();
      }
    } else if (m == "NORM") {
      r.magic("NORM");
      ck.normalization.scale = r.get<double>();
      for (int k = 0; k < 3; ++k) ck.normalization.center[k] = r.get<double>();
    } else if (m == "GRFN") {
      r.magic("GRFN");
      const std::uint32_t n = r.u32();
      r.need(static_cast<std::uint64_t>(n) * 4);
      ck.refiner.resize(n);
      for (double& v : ck.refiner) v = r.f32();
    } else {
      throw Error(ErrorCode::Format, "checkpoint: unknown section");
    }
  }
  try {
    ck.set.validate(ck.cameras.size());
  } catch (const Error& e) {
    throw Error(ErrorCode::Format, std::string("checkpoint: ") + e.what());
  }
  return ck;
}

void write_checkpoint(const fs::path& path, const Checkpoint& ckpt) { write_file_atomic(path, serialize_checkpoint(ckpt)); }

Checkpoint read_checkpoint(const fs::path& path) { return deserialize_checkpoint(read_file(path)); }

std::uint64_t gaussian_hash(const HybridGaussianSet& set) {
  Writer w;
  gaussians_out(w, set);
  return fnv1a(w.bytes());
}

}  // namespace geosplat
