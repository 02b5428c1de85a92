#include "geosplat/photometric.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

#include "geosplat/error.hpp"

namespace geosplat {

namespace {

std::vector<double> gaussian_kernel(int size, double sigma) {
  std::vector<double> k(static_cast<std::size_t>(size));
  const double mid = 0.5 * (size - 1);
  double sum = 0.0;
  for (int i = 0; i < size; ++i) {
    const double d = i - mid;
    k[static_cast<std::size_t>(i)] = std::exp(-d * d / (2.0 * sigma * sigma));
    sum += k[static_cast<std::size_t>(i)];
  }
  for (double& v : k) v /= sum;
  return k;
}

// Separable "same" filtering of a single-channel W x H plane with zero padding.
// The kernel is symmetric, so this is also its own adjoint.
void blur(const std::vector<double>& in, std::vector<double>& out, int W, int H, const std::vector<double>& k) {
  const int r = static_cast<int>(k.size()) / 2;
  std::vector<double> tmp(in.size(), 0.0);
  for (int y = 0; y < H; ++y) {
    const double* row = in.data() + static_cast<std::size_t>(y) * W;
    double* dst = tmp.data() + static_cast<std::size_t>(y) * W;
    for (int x = 0; x < W; ++x) {
      const int lo = std::max(-r, -x), hi = std::min(r, W - 1 - x);
      double s = 0.0;
      for (int i = lo; i <= hi; ++i) s += k[static_cast<std::size_t>(i + r)] * row[x + i];
      dst[x] = s;
    }
  }
  out.assign(in.size(), 0.0);
  for (int y = 0; y < H; ++y) {
    double* dst = out.data() + static_cast<std::size_t>(y) * W;
    const int lo = std::max(-r, -y), hi = std::min(r, H - 1 - y);
    for (int i = lo; i <= hi; ++i) {
      const double w = k[static_cast<std::size_t>(i + r)];
      const double* src = tmp.data() + static_cast<std::size_t>(y + i) * W;
      for (int x = 0; x < W; ++x) dst[x] += w * src[x];
    }
  }
}

// Mean SSIM and, optionally, d(sum of SSIM map)/dx scaled by `scale`, written into grad.
double ssim_impl(const Image& a, const Image& b, const SsimOptions& o, Image* grad, double scale) {
  const int W = a.width, H = a.height, C = a.channels;
  const std::size_t n = static_cast<std::size_t>(W) * H;
  const auto k = gaussian_kernel(o.window, o.sigma);
  std::vector<double> x(n), y(n), xx(n), yy(n), xy(n);
  std::vector<double> mx, my, exx, eyy, exy;
  double total = 0.0;
  for (int c = 0; c < C; ++c) {
    for (std::size_t p = 0; p < n; ++p) {
      x[p] = a.data[p * C + c];
      y[p] = b.data[p * C + c];
      xx[p] = x[p] * x[p];
      yy[p] = y[p] * y[p];
      xy[p] = x[p] * y[p];
    }
    blur(x, mx, W, H, k);
    blur(y, my, W, H, k);
    blur(xx, exx, W, H, k);
    blur(yy, eyy, W, H, k);
    blur(xy, exy, W, H, k);

    std::vector<double> d_mx, d_exx, d_exy;
    if (grad) {
      d_mx.resize(n);
      d_exx.resize(n);
      d_exy.resize(n);
    }
    for (std::size_t p = 0; p < n; ++p) {
      const double a1 = 2.0 * mx[p] * my[p] + o.c1;
      const double a2 = 2.0 * (exy[p] - mx[p] * my[p]) + o.c2;
      const double b1 = mx[p] * mx[p] + my[p] * my[p] + o.c1;
      const double b2 = (exx[p] - mx[p] * mx[p]) + (eyy[p] - my[p] * my[p]) + o.c2;
      const double s = (a1 * a2) / (b1 * b2);
      total += s;
      if (grad) {
        const double inv = 1.0 / (b1 * b2);
        d_mx[p] = scale * ((2.0 * my[p] * a2 - 2.0 * my[p] * a1) * inv - s * (2.0 * mx[p] / b1 - 2.0 * mx[p] / b2));
        d_exx[p] = scale * (-s / b2);
        d_exy[p] = scale * (2.0 * a1 * inv);
      }
    }
    if (grad) {
      std::vector<double> g_mx, g_exx, g_exy;
      blur(d_mx, g_mx, W, H, k);
      blur(d_exx, g_exx, W, H, k);
      blur(d_exy, g_exy, W, H, k);
      for (std::size_t p = 0; p < n; ++p)
        grad->data[p * C + c] += g_mx[p] + 2.0 * x[p] * g_exx[p] + y[p] * g_exy[p];
    }
  }
  return total / static_cast<double>(n * C);
}

void check_shapes(const Image& a, const Image& b) {
  if (!a.same_shape(b)) throw Error(ErrorCode::ShapeMismatch, "image shapes differ");
  if (a.empty()) throw Error(ErrorCode::EmptyInput, "empty image");
}

}  // namespace

double ssim(const Image& a, const Image& b, const SsimOptions& options) {
  check_shapes(a, b);
  return ssim_impl(a, b, options, nullptr, 0.0);
}

PhotometricLoss photometric_loss(const Image& rendered_in, const Image& target, double lambda, bool with_grad,
                                 const SsimOptions& options, double residual_floor) {
  check_shapes(rendered_in, target);
  Image snapped;
  std::vector<bool> dead;
  if (residual_floor > 0.0) {
    snapped = rendered_in;
    dead.assign(snapped.size(), false);
    for (std::size_t i = 0; i < snapped.size(); ++i) {
      if (std::abs(snapped.data[i] - target.data[i]) <= residual_floor) {
        snapped.data[i] = target.data[i];
        dead[i] = true;
      }
    }
  }
  const Image& rendered = dead.empty() ? rendered_in : snapped;
  PhotometricLoss out;
  const double n = static_cast<double>(rendered.size());
  if (with_grad) out.grad = Image(rendered.width, rendered.height, rendered.channels);
  double l1 = 0.0;
  for (std::size_t i = 0; i < rendered.size(); ++i) {
    const double d = rendered.data[i] - target.data[i];
    l1 += std::abs(d);
    if (with_grad) out.grad.data[i] = (1.0 - lambda) * ((d > 0.0) - (d < 0.0)) / n;
  }
  out.l1 = l1 / n;
  out.ssim = ssim_impl(rendered, target, options, with_grad ? &out.grad : nullptr, -0.5 * lambda / n);
  out.value = (1.0 - lambda) * out.l1 + lambda * 0.5 * (1.0 - out.ssim);
  if (with_grad && !dead.empty()) {
    for (std::size_t i = 0; i < dead.size(); ++i)
      if (dead[i]) out.grad.data[i] = 0.0;
  }
  return out;
}

double mse(const Image& a, const Image& b) {
  check_shapes(a, b);
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a.data[i] - b.data[i];
    s += d * d;
  }
  return s / static_cast<double>(a.size());
}

double psnr(const Image& a, const Image& b) {
  const double m = mse(a, b);
  if (m == 0.0) return std::numeric_limits<double>::infinity();
  return 10.0 * std::log10(1.0 / m);
}

}  // namespace geosplat
