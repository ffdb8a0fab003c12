#pragma once

#include "duba/image.hpp"

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

namespace duba::trigger {

// Parameters for one phase of the attack (training-time poisoning or
// test-time triggering).
struct TriggerProfile {
    double alpha = 0.6;      // retention of the clean level-3 detail bands
    double beta = 0.6;       // retention of the clean level-2 detail bands
    double lambda = 0.7;     // DCT fusing intensity
    double mask_ratio = 0.1; // fraction of pixels whose trigger is dropped at random
    int low_threshold = 5;   // 8-bit; clean pixels below this keep no trigger
    int high_threshold = 245; // 8-bit; clean pixels above this keep no trigger
    std::uint64_t seed = 0;

    // Throws ConfigError on out-of-range fields.
    void validate() const;

    bool operator==(const TriggerProfile&) const = default;
};

struct BuiltinProfiles {
    TriggerProfile train;
    TriggerProfile attack;
};

// train:  alpha = beta = 0.4, lambda 0.7, mask 0.30, thresholds 30/220
// attack: alpha = beta = 0.6, lambda 0.7, mask 0.10, thresholds 5/245
BuiltinProfiles builtin_profiles();
TriggerProfile profile_by_name(std::string_view name);

// Per-pixel keep mask: 1 keeps the trigger, 0 suppresses it on every channel.
struct Mask {
    int height = 0;
    int width = 0;
    std::vector<std::uint8_t> keep;

    std::uint8_t operator()(int y, int x) const { return keep[static_cast<std::size_t>(y) * width + x]; }
    std::size_t zeros() const;
};

// Step 1. Blends the detail bands of the resized trigger into levels 2 and 3
// of a three-level Haar pyramid of the clean image. Not clipped.
Tensor embed_highfreq(const Image& clean, const Image& trigger, double alpha, double beta,
                      Interpolation method = Interpolation::Bilinear);

// Step 2a. Inverse FFT of the clean amplitude spectrum with the phase
// spectrum of `embedded`. The combined spectrum is Hermitian-symmetrized so
// the result is real. Not clipped.
Tensor fft_smooth(const Tensor& embedded, const Image& clean);

// Step 2b. Mixes `smoothed` into `clean` in the twice-DCT domain and then
// the once-DCT domain. Equals lambda^2 * smoothed + (1 - lambda^2) * clean.
Tensor dct_fuse(const Tensor& smoothed, const Image& clean, double lambda);

Mask make_mask(const Image& clean, const TriggerProfile& profile, std::uint64_t image_key);

struct PoisonResult {
    Image poisoned;
    Residual pattern; // P_m - x_c, before masking
    Mask mask;
};

PoisonResult poison_image(const Image& clean, const Image& trigger, const TriggerProfile& profile,
                          std::uint64_t image_key, Interpolation method = Interpolation::Bilinear);

enum class Stage { DwtOnly, DwtFft, Full };

Stage parse_stage(std::string_view name);
std::string stage_name(Stage stage);

// Runs the pipeline up to `stage` and clips. Masking happens only for Full,
// which is identical to poison_image().poisoned.
Image ablation_poison(const Image& clean, const Image& trigger, const TriggerProfile& profile, Stage stage,
                      std::uint64_t image_key, Interpolation method = Interpolation::Bilinear);

} // namespace duba::trigger
