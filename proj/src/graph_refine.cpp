#include "geosplat/graph_refine.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "geosplat/error.hpp"
#include "geosplat/knn.hpp"

namespace geosplat {

namespace {

Eigen::VectorXd relu(const Eigen::VectorXd& x) { return x.cwiseMax(0.0); }

Eigen::VectorXd relu_mask(const Eigen::VectorXd& pre, const Eigen::VectorXd& grad) {
  return (pre.array() > 0.0).select(grad, 0.0);
}

}  // namespace

std::size_t GaussianGraph::edge_count() const {
  std::size_t n = 0;
  for (const auto& nb : neighbors) n += nb.size();
  return n;
}

GaussianGraph build_knn_graph(std::span<const Vec3> positions, std::size_t k, double radius) {
  if (positions.size() < 2) throw Error(ErrorCode::TooFewPoints, "graph needs at least two points");
  if (k < 1) throw Error(ErrorCode::InvalidArgument, "K must be at least 1");
  if (!(radius > 0.0)) throw Error(ErrorCode::InvalidArgument, "radius must be positive");
  GaussianGraph g;
  g.positions.assign(positions.begin(), positions.end());
  g.neighbors.resize(positions.size());
  const KdTree tree(positions);
  const double r2 = radius * radius;
  for (std::uint32_t i = 0; i < positions.size(); ++i) {
    for (const Neighbor& n : tree.nearest(i, k)) {
      if (n.distance2 < r2) g.neighbors[i].push_back(n.index);
    }
  }
  return g;
}

double median_nearest_distance(std::span<const Vec3> positions) {
  if (positions.size() < 2) throw Error(ErrorCode::TooFewPoints, "need at least two points");
  const KdTree tree(positions);
  std::vector<double> d;
  d.reserve(positions.size());
  for (std::uint32_t i = 0; i < positions.size(); ++i) d.push_back(std::sqrt(tree.nearest(i, 1).front().distance2));
  const auto mid = d.begin() + static_cast<std::ptrdiff_t>(d.size() / 2);
  std::nth_element(d.begin(), mid, d.end());
  return *mid;
}

std::vector<AttributeVector> vertex_features(const HybridGaussianSet& set, const Vec3& reference) {
  std::vector<AttributeVector> out;
  out.reserve(set.size());
  auto fill = [](AttributeVector& v, const GaussianCommon& g) {
    v.segment<3>(1) = g.log_scale;
    const Vec4 q = g.rotation[0] < 0.0 ? Vec4(-g.rotation) : g.rotation;
    v.segment<4>(4) = q;
    v.segment<3>(8) = g.color;
    v[11] = g.opacity;
  };
  for (const auto& g : set.ordinary) {
    AttributeVector v;
    v[0] = (g.position - reference).norm();
    fill(v, g.common);
    out.push_back(v);
  }
  for (const auto& g : set.ray_based) {
    AttributeVector v;
    v[0] = g.z;
    fill(v, g.common);
    out.push_back(v);
  }
  return out;
}

AttributeVector OffsetScales::expand() const {
  AttributeVector v;
  v << z, scale, scale, scale, rotation, rotation, rotation, rotation, color, color, color, opacity;
  return v;
}

HybridGaussianSet apply_offsets(const HybridGaussianSet& set, const OffsetBundle& offsets, const OffsetScales& scales) {
  if (offsets.delta.size() != set.size()) throw Error(ErrorCode::ShapeMismatch, "offset count differs from set size");
  HybridGaussianSet out = set;
  const AttributeVector lam = scales.expand();
  for (std::size_t i = 0; i < out.size(); ++i) {
    const AttributeVector& d = offsets.delta[i];
    if ((d.array() == 0.0).all()) continue;
    const AttributeVector step = lam.cwiseProduct(d);
    GaussianCommon& g = out.common(i);
    g.log_scale += step.segment<3>(1);
    g.rotation += step.segment<4>(4);
    g.color += step.segment<3>(8);
    g.opacity += step[11];
    enforce_invariants(g);
    if (i >= out.ordinary.size()) {
      RayGaussian& r = out.ray_based[i - out.ordinary.size()];
      r.z = std::clamp(r.z + step[0], std::nextafter(out.z_near, out.z_far), std::nextafter(out.z_far, out.z_near));
    }
  }
  return out;
}

RefinerNetwork::RefinerNetwork(std::uint64_t seed) {
  std::size_t cursor = 0;
  auto layer = [&](int out, int in) {
    Layer l{cursor, cursor + static_cast<std::size_t>(out) * in, out, in};
    cursor = l.bias + static_cast<std::size_t>(out);
    return l;
  };
  msg1_ = layer(kHidden, kMessageIn);
  msg2_ = layer(kHidden, kHidden);
  upd1_ = layer(kHidden, kUpdateIn);
  upd2_ = layer(kHidden, kHidden);
  head_ = layer(kAttributeDims, kHidden);
  params_.assign(cursor, 0.0);

  std::mt19937_64 rng(seed);
  for (const Layer* l : {&msg1_, &msg2_, &upd1_, &upd2_}) {
    const double bound = std::sqrt(6.0 / l->in);  // He-uniform for ReLU layers
    std::uniform_real_distribution<double> u(-bound, bound);
    for (std::size_t i = l->weight; i < l->bias; ++i) params_[i] = u(rng);
  }
}

Eigen::Map<const Eigen::MatrixXd> RefinerNetwork::weight(const Layer& l) const {
  return {params_.data() + l.weight, l.out, l.in};
}

Eigen::Map<const Eigen::VectorXd> RefinerNetwork::bias(const Layer& l) const { return {params_.data() + l.bias, l.out}; }

Eigen::VectorXd RefinerNetwork::apply(const Layer& l, const Eigen::VectorXd& x) const {
  return weight(l) * x + bias(l);
}

OffsetBundle RefinerNetwork::forward(const GaussianGraph& graph, const std::vector<AttributeVector>& features,
                                     Cache* cache) const {
  if (features.size() != graph.size()) throw Error(ErrorCode::ShapeMismatch, "feature count differs from graph size");
  OffsetBundle out;
  out.delta.resize(graph.size());
  if (cache) *cache = Cache{};
  for (std::size_t i = 0; i < graph.size(); ++i) {
    Eigen::VectorXd mean = Eigen::VectorXd::Zero(kHidden);
    for (std::uint32_t j : graph.neighbors[i]) {
      Eigen::VectorXd in(kMessageIn);
      in << features[i], features[j], graph.positions[i] - graph.positions[j];
      const Eigen::VectorXd h = apply(msg1_, in);
      mean += apply(msg2_, relu(h));
      if (cache) {
        cache->edge_input.push_back(std::move(in));
        cache->edge_hidden.push_back(h);
      }
    }
    if (!graph.neighbors[i].empty()) mean /= static_cast<double>(graph.neighbors[i].size());

    Eigen::VectorXd in(kUpdateIn);
    in << features[i], mean;
    const Eigen::VectorXd h1 = apply(upd1_, in);
    const Eigen::VectorXd h2 = apply(upd2_, relu(h1));
    const AttributeVector o = apply(head_, relu(h2)).array().tanh().matrix();
    out.delta[i] = o;
    if (cache) {
      cache->update_input.push_back(std::move(in));
      cache->update_hidden.push_back(h1);
      cache->update_out.push_back(h2);
      cache->output.push_back(o);
    }
  }
  return out;
}

void RefinerNetwork::backward(const GaussianGraph& graph, const Cache& cache,
                              const std::vector<AttributeVector>& d_offsets, std::vector<double>& d_params) const {
  if (d_params.size() != params_.size()) d_params.assign(params_.size(), 0.0);
  auto dW = [&](const Layer& l) { return Eigen::Map<Eigen::MatrixXd>(d_params.data() + l.weight, l.out, l.in); };
  auto db = [&](const Layer& l) { return Eigen::Map<Eigen::VectorXd>(d_params.data() + l.bias, l.out); };

  std::size_t edge = 0;
  for (std::size_t i = 0; i < graph.size(); ++i) {
    const Eigen::VectorXd d_head =
        (d_offsets[i].array() * (1.0 - cache.output[i].array().square())).matrix();
    const Eigen::VectorXd& h1 = cache.update_hidden[i];
    const Eigen::VectorXd& h2 = cache.update_out[i];
    dW(head_) += d_head * relu(h2).transpose();
    db(head_) += d_head;
    const Eigen::VectorXd d_h2 = relu_mask(h2, weight(head_).transpose() * d_head);
    dW(upd2_) += d_h2 * relu(h1).transpose();
    db(upd2_) += d_h2;
    const Eigen::VectorXd d_h1 = relu_mask(h1, weight(upd2_).transpose() * d_h2);
    dW(upd1_) += d_h1 * cache.update_input[i].transpose();
    db(upd1_) += d_h1;

    const std::size_t deg = graph.neighbors[i].size();
    if (deg == 0) continue;
    const Eigen::VectorXd d_mean =
        (weight(upd1_).transpose() * d_h1).tail(kHidden) / static_cast<double>(deg);
    for (std::size_t e = 0; e < deg; ++e, ++edge) {
      const Eigen::VectorXd& h = cache.edge_hidden[edge];
      dW(msg2_) += d_mean * relu(h).transpose();
      db(msg2_) += d_mean;
      const Eigen::VectorXd d_h = relu_mask(h, weight(msg2_).transpose() * d_mean);
      dW(msg1_) += d_h * cache.edge_input[edge].transpose();
      db(msg1_) += d_h;
    }
  }
}

}  // namespace geosplat
