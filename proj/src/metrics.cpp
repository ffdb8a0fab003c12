#include "duba/metrics.hpp"

#include "duba/errors.hpp"
#include "duba/transforms.hpp"

#include <array>
#include <cmath>

namespace duba::metrics {

namespace tf = duba::transforms;

namespace {

constexpr int kWindow = 11;
constexpr double kSigma = 1.5;
constexpr double kC1 = 0.01 * 0.01;
constexpr double kC2 = 0.03 * 0.03;

void require_same_shape(const Image& a, const Image& b, const char* what)
{
    if (a.shape() != b.shape())
        throw ShapeError(std::string(what) + ": image shapes differ");
}

std::array<double, kWindow> gaussian_taps()
{
    std::array<double, kWindow> taps{};
    double sum = 0.0;
    for (int i = 0; i < kWindow; ++i) {
        const double d = i - kWindow / 2;
        taps[i] = std::exp(-d * d / (2.0 * kSigma * kSigma));
        sum += taps[i];
    }
    for (double& t : taps)
        t /= sum;
    return taps;
}

// Separable Gaussian filter restricted to positions where the window fits.
Plane filter_valid(const Plane& p, const std::array<double, kWindow>& taps)
{
    const int out_h = p.rows() - kWindow + 1;
    const int out_w = p.cols() - kWindow + 1;
    Plane rows(p.rows(), out_w);
    for (int y = 0; y < p.rows(); ++y)
        for (int x = 0; x < out_w; ++x) {
            double s = 0.0;
            for (int k = 0; k < kWindow; ++k)
                s += taps[k] * p(y, x + k);
            rows(y, x) = s;
        }
    Plane out(out_h, out_w);
    for (int y = 0; y < out_h; ++y)
        for (int x = 0; x < out_w; ++x) {
            double s = 0.0;
            for (int k = 0; k < kWindow; ++k)
                s += taps[k] * rows(y + k, x);
            out(y, x) = s;
        }
    return out;
}

Plane product(const Plane& a, const Plane& b)
{
    Plane out(a.rows(), a.cols());
    for (std::size_t i = 0; i < out.size(); ++i)
        out.values()[i] = a.values()[i] * b.values()[i];
    return out;
}

double ssim_plane(const Plane& a, const Plane& b)
{
    static const auto taps = gaussian_taps();
    const Plane mu_a = filter_valid(a, taps);
    const Plane mu_b = filter_valid(b, taps);
    const Plane aa = filter_valid(product(a, a), taps);
    const Plane bb = filter_valid(product(b, b), taps);
    const Plane ab = filter_valid(product(a, b), taps);

    double total = 0.0;
    for (std::size_t i = 0; i < mu_a.size(); ++i) {
        const double ma = mu_a.values()[i];
        const double mb = mu_b.values()[i];
        const double var_a = aa.values()[i] - ma * ma;
        const double var_b = bb.values()[i] - mb * mb;
        const double cov = ab.values()[i] - ma * mb;
        total += ((2.0 * ma * mb + kC1) * (2.0 * cov + kC2)) /
                 ((ma * ma + mb * mb + kC1) * (var_a + var_b + kC2));
    }
    return total / static_cast<double>(mu_a.size());
}

Plane log_amplitude(const Plane& p)
{
    Plane amp = tf::fft2(p).amplitude;
    for (double& v : amp.values())
        v = std::log1p(v);
    return amp;
}

} // namespace

double psnr(const Image& a, const Image& b)
{
    require_same_shape(a, b, "psnr");
    double sum = 0.0;
    for (std::size_t i = 0; i < a.values().size(); ++i) {
        const double d = a.values()[i] - b.values()[i];
        sum += d * d;
    }
    if (sum == 0.0)
        return std::numeric_limits<double>::infinity();
    const double mse = sum / static_cast<double>(a.values().size());
    return 10.0 * std::log10(1.0 / mse);
}

double ssim(const Image& a, const Image& b)
{
    require_same_shape(a, b, "ssim");
    if (a.height() < kWindow || a.width() < kWindow)
        throw DimensionError("ssim needs images of at least 11x11");
    double total = 0.0;
    for (int c = 0; c < a.channels(); ++c)
        total += ssim_plane(a.channel(c), b.channel(c));
    return total / a.channels();
}

FrequencyResidual freq_residual(const Image& a, const Image& b)
{
    require_same_shape(a, b, "freq_residual");
    FrequencyResidual out{Plane(a.height(), a.width()), 0.0};
    for (int c = 0; c < a.channels(); ++c) {
        const Plane la = log_amplitude(a.channel(c));
        const Plane lb = log_amplitude(b.channel(c));
        for (std::size_t i = 0; i < la.size(); ++i)
            out.residual.values()[i] += std::abs(la.values()[i] - lb.values()[i]) / a.channels();
    }
    double sum = 0.0;
    for (double v : out.residual.values())
        sum += v * v;
    out.energy = sum / static_cast<double>(out.residual.size());
    return out;
}

Image render_frequency_residual(const FrequencyResidual& fr)
{
    const Plane& r = fr.residual;
    Plane shifted(r.rows(), r.cols());
    for (int y = 0; y < r.rows(); ++y)
        for (int x = 0; x < r.cols(); ++x)
            shifted((y + r.rows() / 2) % r.rows(), (x + r.cols() / 2) % r.cols()) = r(y, x);
    return render_plane(shifted);
}

double hf_artifact_score(const Image& img)
{
    const int h = img.height();
    const int w = img.width();
    const double cutoff = (h + w) / 2.0;
    double total = 0.0;
    for (int c = 0; c < img.channels(); ++c) {
        const Plane coeffs = tf::dct2(img.channel(c));
        const double dc = coeffs(0, 0) * coeffs(0, 0);
        double energy = 0.0;
        double high = 0.0;
        for (int u = 0; u < h; ++u)
            for (int v = 0; v < w; ++v) {
                if (u == 0 && v == 0)
                    continue;
                const double e = coeffs(u, v) * coeffs(u, v);
                energy += e;
                if (u + v > cutoff)
                    high += e;
            }
        // Rounding noise of a flat image counts as no AC energy at all.
        if (energy > 1e-20 * (energy + dc))
            total += high / energy;
    }
    return total / img.channels();
}

StealthReport stealth_report(const Image& clean, const Image& poisoned)
{
    StealthReport r;
    r.psnr = psnr(clean, poisoned);
    r.ssim = ssim(clean, poisoned);
    r.freq_residual_energy = freq_residual(clean, poisoned).energy;
    r.hf_score_clean = hf_artifact_score(clean);
    r.hf_score_poisoned = hf_artifact_score(poisoned);
    return r;
}

} // namespace duba::metrics
