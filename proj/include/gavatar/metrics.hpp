#pragma once

#include "gavatar/image.hpp"

namespace gavatar {

// 10*log10(1/MSE) over all channels; identical images report the 99.0 dB cap.
double psnr(const Image& a, const Image& b);

// Standard windowed SSIM: 11x11 Gaussian window (sigma 1.5), C1=0.01^2,
// C2=0.03^2, per channel then averaged. Zero-padded same-size convolutions.
double ssim(const Image& a, const Image& b);

// SSIM plus the gradient of the mean score w.r.t. image a (accumulated).
double ssim_with_grad(const Image& a, const Image& b, Image& grad_a);

} // namespace gavatar
