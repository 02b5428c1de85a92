#pragma once

#include "geosplat/image.hpp"

namespace geosplat {

struct SsimOptions {
  int window = 11;
  double sigma = 1.5;
  double c1 = 0.01 * 0.01;
  double c2 = 0.03 * 0.03;
};

/// Mean SSIM over every pixel and channel. Gaussian window, zero padding.
double ssim(const Image& a, const Image& b, const SsimOptions& options = {});

struct PhotometricLoss {
  double value = 0.0;
  double l1 = 0.0;
  double ssim = 0.0;
  Image grad;  // d value / d rendered, empty unless requested
};

/// (1 - lambda) * L1 + lambda * (1 - SSIM) / 2. Throws ShapeMismatch.
/// Rendered values within `residual_floor` of the target are snapped onto it
/// (dead zone: zero loss contribution and zero gradient there).
PhotometricLoss photometric_loss(const Image& rendered, const Image& target, double lambda = 0.2,
                                 bool with_grad = false, const SsimOptions& options = {},
                                 double residual_floor = 0.0);

double mse(const Image& a, const Image& b);

/// 10 log10(1 / MSE) for [0,1] images; +infinity when the images are identical.
double psnr(const Image& a, const Image& b);

}  // namespace geosplat
