#include "duba/trigger.hpp"

#include "duba/errors.hpp"
#include "duba/rng.hpp"
#include "duba/transforms.hpp"

#include <algorithm>
#include <cmath>
#include <complex>
#include <numeric>

namespace duba::trigger {

namespace tf = duba::transforms;

namespace {

constexpr int kPyramidLevels = 3;

void require_unit(double v, const char* name)
{
    if (!(v >= 0.0 && v <= 1.0))
        throw ConfigError(std::string(name) + " must lie in [0,1], got " + std::to_string(v));
}

void require_same_shape(const Shape& a, const Shape& b, const char* what)
{
    if (a != b)
        throw ShapeError(std::string(what) + ": clean image and input differ in shape");
}

// Brings the trigger to the clean image's channel count.
Tensor match_channels(const Tensor& trigger, int channels)
{
    if (trigger.channels() == channels)
        return trigger;
    Tensor out(Shape{trigger.height(), trigger.width(), channels});
    for (int y = 0; y < trigger.height(); ++y) {
        for (int x = 0; x < trigger.width(); ++x) {
            if (channels == 1) {
                // BT.601 luma
                out.at(y, x, 0) = 0.299 * trigger.at(y, x, 0) + 0.587 * trigger.at(y, x, 1) +
                                  0.114 * trigger.at(y, x, 2);
            } else {
                for (int c = 0; c < channels; ++c)
                    out.at(y, x, c) = trigger.at(y, x, 0);
            }
        }
    }
    return out;
}

void blend_details(std::array<Plane, 3>& clean, const std::array<Plane, 3>& trig, double keep)
{
    for (int j = 0; j < 3; ++j) {
        auto dst = clean[j].values();
        auto src = trig[j].values();
        for (std::size_t i = 0; i < dst.size(); ++i)
            dst[i] = dst[i] * keep + src[i] * (1.0 - keep);
    }
}

Tensor per_channel(const Tensor& a, const Tensor& b, auto&& op)
{
    std::vector<Plane> planes;
    planes.reserve(a.channels());
    for (int c = 0; c < a.channels(); ++c)
        planes.push_back(op(a.channel(c), b.channel(c)));
    return Tensor::from_planes(planes);
}

Plane blend(const Plane& a, const Plane& b, double weight)
{
    Plane out(a.rows(), a.cols());
    for (std::size_t i = 0; i < out.size(); ++i)
        out.values()[i] = a.values()[i] * weight + b.values()[i] * (1.0 - weight);
    return out;
}

} // namespace

void TriggerProfile::validate() const
{
    require_unit(alpha, "alpha");
    require_unit(beta, "beta");
    require_unit(lambda, "lambda");
    require_unit(mask_ratio, "mask_ratio");
    if (low_threshold < 0 || low_threshold > 255 || high_threshold < 0 || high_threshold > 255)
        throw ConfigError("pixel thresholds must be 8-bit values");
    if (low_threshold >= high_threshold)
        throw ConfigError("low threshold must be below high threshold");
}

BuiltinProfiles builtin_profiles()
{
    BuiltinProfiles p;
    p.train = TriggerProfile{.alpha = 0.4,
                             .beta = 0.4,
                             .lambda = 0.7,
                             .mask_ratio = 0.30,
                             .low_threshold = 30,
                             .high_threshold = 220,
                             .seed = 0};
    p.attack = TriggerProfile{.alpha = 0.6,
                              .beta = 0.6,
                              .lambda = 0.7,
                              .mask_ratio = 0.10,
                              .low_threshold = 5,
                              .high_threshold = 245,
                              .seed = 0};
    return p;
}

TriggerProfile profile_by_name(std::string_view name)
{
    if (name == "train")
        return builtin_profiles().train;
    if (name == "attack")
        return builtin_profiles().attack;
    throw ConfigError("unknown profile '" + std::string(name) + "' (expected train or attack)");
}

std::size_t Mask::zeros() const
{
    return static_cast<std::size_t>(std::count(keep.begin(), keep.end(), std::uint8_t{0}));
}

Tensor embed_highfreq(const Image& clean, const Image& trigger, double alpha, double beta, Interpolation method)
{
    require_unit(alpha, "alpha");
    require_unit(beta, "beta");
    const int h = clean.height();
    const int w = clean.width();
    if (h % 8 != 0 || w % 8 != 0)
        throw DimensionError("clean image " + std::to_string(h) + "x" + std::to_string(w) +
                             " is not divisible by 8");

    const Tensor trig = match_channels(trigger.tensor(), clean.channels());
    const Tensor half = resize(trig, h / 2, w / 2, method);
    const Tensor quarter = resize(trig, h / 4, w / 4, method);

    std::vector<Plane> planes;
    planes.reserve(clean.channels());
    for (int c = 0; c < clean.channels(); ++c) {
        tf::WaveletPyramid pyramid = tf::dwt_pyramid(clean.channel(c), kPyramidLevels);
        // Detail bands of the half-size trigger match level 2, the
        // quarter-size trigger matches level 3.
        const tf::WaveletDecomposition fine = tf::dwt2(half.channel(c));
        const tf::WaveletDecomposition coarse = tf::dwt2(quarter.channel(c));
        blend_details(pyramid.levels[2], coarse.high, alpha);
        blend_details(pyramid.levels[1], fine.high, beta);
        planes.push_back(tf::reconstruct_pyramid(pyramid));
    }
    return Tensor::from_planes(planes);
}

Tensor fft_smooth(const Tensor& embedded, const Image& clean)
{
    require_same_shape(clean.shape(), embedded.shape(), "fft_smooth");
    return per_channel(embedded, clean.tensor(), [](const Plane& poisoned, const Plane& reference) {
        const tf::Spectrum ref = tf::fft2_complex(reference);
        tf::Spectrum swapped = tf::fft2_complex(poisoned);
        // Clean amplitude times the poisoned unit phasor; a zero bin has phase 0.
        for (std::size_t i = 0; i < swapped.bins.size(); ++i) {
            const double amplitude = std::sqrt(std::norm(ref.bins[i]));
            const double norm = std::sqrt(std::norm(swapped.bins[i]));
            swapped.bins[i] = norm > 0.0 ? swapped.bins[i] * (amplitude / norm) : std::complex<double>(amplitude, 0.0);
        }
        return tf::ifft2_real(tf::hermitian_symmetrize(swapped));
    });
}

Tensor dct_fuse(const Tensor& smoothed, const Image& clean, double lambda)
{
    require_unit(lambda, "lambda");
    require_same_shape(clean.shape(), smoothed.shape(), "dct_fuse");
    return per_channel(smoothed, clean.tensor(), [lambda](const Plane& poisoned, const Plane& reference) {
        const Plane clean1 = tf::dct2(reference);
        const Plane clean2 = tf::dct2(clean1);
        const Plane poison1 = tf::dct2(poisoned);
        const Plane poison2 = tf::dct2(poison1);
        // Deepest domain first: the twice-transformed mix replaces the
        // once-transformed poisoned coefficients before they are mixed.
        const Plane fused1 = tf::idct2(blend(poison2, clean2, lambda));
        return tf::idct2(blend(fused1, clean1, lambda));
    });
}

Mask make_mask(const Image& clean, const TriggerProfile& profile, std::uint64_t image_key)
{
    profile.validate();
    const int h = clean.height();
    const int w = clean.width();
    const std::size_t n = static_cast<std::size_t>(h) * w;
    Mask mask{h, w, std::vector<std::uint8_t>(n, 1)};

    const double low = profile.low_threshold / 255.0;
    const double high = profile.high_threshold / 255.0;
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            for (int c = 0; c < clean.channels(); ++c) {
                const double v = clean.at(y, x, c);
                if (v < low || v > high) {
                    mask.keep[static_cast<std::size_t>(y) * w + x] = 0;
                    break;
                }
            }
        }
    }

    // The epsilon keeps decimal ratios like 0.29 * 100 from flooring to 28.
    const auto dropped = std::min(
        n, static_cast<std::size_t>(std::floor(profile.mask_ratio * static_cast<double>(n) + 1e-9)));
    std::vector<std::uint32_t> order(n);
    std::iota(order.begin(), order.end(), 0u);
    CounterRng rng(profile.seed, image_key);
    for (std::size_t i = 0; i < dropped; ++i) {
        const std::size_t j = i + static_cast<std::size_t>(rng.below(n - i));
        std::swap(order[i], order[j]);
        mask.keep[order[i]] = 0;
    }
    return mask;
}

PoisonResult poison_image(const Image& clean, const Image& trigger, const TriggerProfile& profile,
                          std::uint64_t image_key, Interpolation method)
{
    profile.validate();
    const Tensor embedded = embed_highfreq(clean, trigger, profile.alpha, profile.beta, method);
    const Tensor smoothed = fft_smooth(embedded, clean);
    const Tensor fused = dct_fuse(smoothed, clean, profile.lambda);
    Residual pattern = subtract(fused, clean.tensor());
    Mask mask = make_mask(clean, profile, image_key);

    Tensor out = clean.tensor();
    const int channels = clean.channels();
    for (std::size_t p = 0; p < mask.keep.size(); ++p) {
        if (!mask.keep[p])
            continue;
        for (int c = 0; c < channels; ++c) {
            const std::size_t i = p * channels + c;
            out.values()[i] += pattern.values()[i];
        }
    }
    return PoisonResult{clip(out), std::move(pattern), std::move(mask)};
}

Stage parse_stage(std::string_view name)
{
    if (name == "dwt-only")
        return Stage::DwtOnly;
    if (name == "dwt+fft")
        return Stage::DwtFft;
    if (name == "full")
        return Stage::Full;
    throw ConfigError("unknown stage '" + std::string(name) + "' (expected dwt-only, dwt+fft or full)");
}

std::string stage_name(Stage stage)
{
    switch (stage) {
    case Stage::DwtOnly:
        return "dwt-only";
    case Stage::DwtFft:
        return "dwt+fft";
    case Stage::Full:
        return "full";
    }
    return "full";
}

Image ablation_poison(const Image& clean, const Image& trigger, const TriggerProfile& profile, Stage stage,
                      std::uint64_t image_key, Interpolation method)
{
    profile.validate();
    if (stage == Stage::Full)
        return poison_image(clean, trigger, profile, image_key, method).poisoned;
    const Tensor embedded = embed_highfreq(clean, trigger, profile.alpha, profile.beta, method);
    if (stage == Stage::DwtOnly)
        return clip(embedded);
    return clip(fft_smooth(embedded, clean));
}

} // namespace duba::trigger
