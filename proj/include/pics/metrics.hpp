#pragma once

#include "pics/image.hpp"
#include "pics/mask_algebra.hpp"

namespace pics {

inline constexpr double kPsnrCap = 99.0;

/// PSNR in dB for images on [0, max_value], capped at kPsnrCap. With a mask
/// the mean squared error runs over masked pixels only (all channels).
double psnr(const Image& a, const Image& b, double max_value = 1.0);
double psnr(const Image& a, const Image& b, const Mask& region, double max_value = 1.0);

/// Mean SSIM over channels with an 11x11 Gaussian window (sigma 1.5); the
/// window is truncated at the frame and renormalized. With a mask the SSIM map
/// is averaged over masked pixels.
double ssim(const Image& a, const Image& b, double max_value = 1.0);
double ssim(const Image& a, const Image& b, const Mask& region, double max_value = 1.0);

/// Per-pixel SSIM map averaged over channels.
Grid ssim_map(const Image& a, const Image& b, double max_value = 1.0);

}  // namespace pics
