#pragma once

#include "duba/image.hpp"

#include <limits>

namespace duba::metrics {

// PSNR in dB over the [0,1] range. Identical inputs give +infinity.
double psnr(const Image& a, const Image& b);

// Mean SSIM with an 11x11 Gaussian window (sigma 1.5), K1 = 0.01,
// K2 = 0.03, dynamic range 1. Only windows fully inside the image count.
// Averaged over channels.
double ssim(const Image& a, const Image& b);

struct FrequencyResidual {
    Plane residual; // |log(1+|F(a)|) - log(1+|F(b)|)|, channel-averaged
    double energy = 0.0; // mean of residual^2
};

FrequencyResidual freq_residual(const Image& a, const Image& b);

// Renders a frequency residual with DC at the center, min-max normalized.
Image render_frequency_residual(const FrequencyResidual& fr);

// Share of non-DC DCT energy in bins with u + v > (H + W) / 2, averaged
// over channels. A stand-in for a learned high-frequency artifact detector.
double hf_artifact_score(const Image& img);

struct StealthReport {
    double psnr = std::numeric_limits<double>::infinity();
    double ssim = 1.0;
    double freq_residual_energy = 0.0;
    double hf_score_clean = 0.0;
    double hf_score_poisoned = 0.0;
};

StealthReport stealth_report(const Image& clean, const Image& poisoned);

} // namespace duba::metrics
