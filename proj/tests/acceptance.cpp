// Acceptance run: one PASS/FAIL line per criterion, non-zero exit on any failure.

#include "dataset_fixture.hpp"
#include "duba/metrics.hpp"
#include "duba/poisoner.hpp"
#include "duba/transforms.hpp"
#include "duba/trigger.hpp"
#include "oracles.hpp"

#include <chrono>
#include <cstdio>
#include <set>

using namespace duba;
namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

namespace {

// Pinned tolerances.
constexpr double kRoundTripTol = 1e-9;
constexpr double kRoundTripSeconds = 5.0;
constexpr double kFuseTol = 1e-9;
constexpr double kAmplitudeRelTol = 1e-6;
constexpr double kIdentityTol = 1e-6;
constexpr double kMinPsnr = 30.0;
constexpr double kMinSsim = 0.94;
constexpr double kMaxMillisPerImage = 100.0;
constexpr double kMinOrderingShare = 0.9;

int failures = 0;

void report(int id, bool pass, const std::string& what, const std::string& detail)
{
    std::printf("%s [%d] %s: %s\n", pass ? "PASS" : "FAIL", id, what.c_str(), detail.c_str());
    std::fflush(stdout);
    if (!pass)
        ++failures;
}

std::string fmt(const char* f, auto... args)
{
    char buf[256];
    std::snprintf(buf, sizeof buf, f, args...);
    return buf;
}

double seconds_since(Clock::time_point t0)
{
    return std::chrono::duration<double>(Clock::now() - t0).count();
}

fs::path data(const std::string& rel)
{
    return fs::path(DUBA_TEST_DATA_DIR) / rel;
}

std::vector<Image> natural_set()
{
    std::vector<fs::path> files;
    for (const auto& e : fs::directory_iterator(data("natural")))
        if (e.path().extension() == ".png")
            files.push_back(e.path());
    std::sort(files.begin(), files.end());
    std::vector<Image> images;
    for (const auto& f : files)
        images.push_back(load(f));
    return images;
}

// Inverse of oracle::matrix_dct2: D^T X D with the orthonormal matrices.
Plane matrix_idct2(const Plane& coeffs)
{
    const auto dr = oracle::dct_matrix(coeffs.rows());
    const auto dc = oracle::dct_matrix(coeffs.cols());
    Plane tmp(coeffs.rows(), coeffs.cols()), out(coeffs.rows(), coeffs.cols());
    for (int i = 0; i < coeffs.rows(); ++i)
        for (int v = 0; v < coeffs.cols(); ++v) {
            double s = 0.0;
            for (int u = 0; u < coeffs.rows(); ++u)
                s += dr[static_cast<std::size_t>(u) * coeffs.rows() + i] * coeffs(u, v);
            tmp(i, v) = s;
        }
    for (int i = 0; i < coeffs.rows(); ++i)
        for (int j = 0; j < coeffs.cols(); ++j) {
            double s = 0.0;
            for (int v = 0; v < coeffs.cols(); ++v)
                s += tmp(i, v) * dc[static_cast<std::size_t>(v) * coeffs.cols() + j];
            out(i, j) = s;
        }
    return out;
}

// Two fusion passes (k = 2, then k = 1) carried out with the matrix DCT.
Plane matrix_fuse(const Plane& smoothed, const Plane& clean, double lambda)
{
    Plane current = smoothed;
    for (int pass = 0; pass < 2; ++pass) {
        const Plane a = oracle::matrix_dct2(current);
        const Plane b = oracle::matrix_dct2(clean);
        Plane mixed(a.rows(), a.cols());
        for (std::size_t i = 0; i < mixed.size(); ++i)
            mixed.values()[i] = lambda * a.values()[i] + (1.0 - lambda) * b.values()[i];
        current = matrix_idct2(mixed);
    }
    return current;
}

void round_trips()
{
    std::mt19937_64 rng(101);
    std::uniform_int_distribution<int> side(1, 8);
    double worst = 0.0;
    const auto t0 = Clock::now();
    for (int trial = 0; trial < 100; ++trial) {
        const int h = 8 * side(rng), w = 8 * side(rng);
        const Plane p = oracle::random_plane(rng, h, w);
        worst = std::max(worst, oracle::max_abs_diff(transforms::idwt2(transforms::dwt2(p)).values(), p.values()));
        worst = std::max(worst, oracle::max_abs_diff(
                                    transforms::reconstruct_pyramid(transforms::dwt_pyramid(p, 3)).values(),
                                    p.values()));
        worst = std::max(worst, oracle::max_abs_diff(transforms::ifft2(transforms::fft2(p)).values(), p.values()));
        worst = std::max(worst, oracle::max_abs_diff(transforms::idct2(transforms::dct2(p)).values(), p.values()));
    }
    const double elapsed = seconds_since(t0);
    report(1, worst < kRoundTripTol && elapsed < kRoundTripSeconds, "transform round trips",
           fmt("max error %.3g (tol %.0e), %.3f s (limit %.0f s)", worst, kRoundTripTol, elapsed, kRoundTripSeconds));
}

void fusion_oracle()
{
    std::mt19937_64 rng(102);
    double worst_closed = 0.0, worst_matrix = 0.0;
    for (int pair = 0; pair < 20; ++pair) {
        const Image clean = oracle::random_image(rng, 16, 24, 3);
        const Tensor smoothed = oracle::random_image(rng, 16, 24, 3).tensor();
        for (double lambda : {0.0, 0.25, 0.5, 0.7, 1.0}) {
            const Tensor fused = trigger::dct_fuse(smoothed, clean, lambda);
            const double l2 = lambda * lambda;
            for (std::size_t i = 0; i < fused.values().size(); ++i)
                worst_closed = std::max(worst_closed, std::abs(fused.values()[i] - (l2 * smoothed.values()[i] +
                                                                                     (1.0 - l2) * clean.values()[i])));
            for (int c = 0; c < 3; ++c)
                worst_matrix = std::max(worst_matrix,
                                        oracle::max_abs_diff(fused.channel(c).values(),
                                                             matrix_fuse(smoothed.channel(c), clean.tensor().channel(c),
                                                                         lambda)
                                                                 .values()));
        }
    }
    report(2, worst_closed < kFuseTol && worst_matrix < kFuseTol, "DCT fusion equals the lambda^2 blend",
           fmt("closed form %.3g, matrix DCT %.3g (tol %.0e)", worst_closed, worst_matrix, kFuseTol));
}

void amplitude_preservation()
{
    std::mt19937_64 rng(103);
    double worst = 0.0;
    for (int pair = 0; pair < 20; ++pair) {
        const Image clean = oracle::random_image(rng, 32, 32, 3);
        const Tensor embedded = oracle::random_image(rng, 32, 32, 3).tensor();
        const Tensor smoothed = trigger::fft_smooth(embedded, clean);
        for (int c = 0; c < 3; ++c) {
            const auto got = transforms::fft2(smoothed.channel(c)).amplitude;
            const auto want = transforms::fft2(clean.tensor().channel(c)).amplitude;
            for (std::size_t i = 0; i < got.size(); ++i)
                worst = std::max(worst, std::abs(got.values()[i] - want.values()[i]) /
                                            std::max(want.values()[i], std::numeric_limits<double>::min()));
        }
    }
    report(3, worst < kAmplitudeRelTol, "FFT swap keeps the clean amplitude",
           fmt("max per-bin relative error %.3g (tol %.0e)", worst, kAmplitudeRelTol));
}

void identity_and_clean_return()
{
    std::mt19937_64 rng(104);
    const Image trig = oracle::random_image(rng, 40, 40, 3);
    double worst_identity = 0.0, worst_lambda = 0.0;
    for (int i = 0; i < 20; ++i) {
        const Image clean = oracle::smooth_image(rng, 32, 32, 3);
        trigger::TriggerProfile identity = trigger::builtin_profiles().attack;
        identity.alpha = identity.beta = 1.0;
        identity.mask_ratio = 0.0;
        identity.seed = 104;
        worst_identity = std::max(worst_identity, oracle::max_abs_diff(
                                                      trigger::poison_image(clean, trig, identity, i).poisoned.values(),
                                                      clean.values()));
        trigger::TriggerProfile no_fuse = trigger::builtin_profiles().attack;
        no_fuse.lambda = 0.0;
        no_fuse.seed = 104;
        worst_lambda = std::max(worst_lambda, oracle::max_abs_diff(
                                                  trigger::poison_image(clean, trig, no_fuse, i).poisoned.values(),
                                                  clean.values()));
    }
    report(4, worst_identity <= kIdentityTol && worst_lambda <= kIdentityTol, "identity and lambda = 0 return clean",
           fmt("alpha=beta=1 %.3g, lambda=0 %.3g (tol %.0e)", worst_identity, worst_lambda, kIdentityTol));
}

void stealth(const std::vector<Image>& images, const Image& trig)
{
    trigger::TriggerProfile profile = trigger::builtin_profiles().attack;
    profile.seed = 105;
    double min_psnr = std::numeric_limits<double>::infinity(), min_ssim = 1.0, max_ms = 0.0;
    double sum_psnr = 0.0, sum_ssim = 0.0;
    for (std::size_t i = 0; i < images.size(); ++i) {
        const auto t0 = Clock::now();
        const Image poisoned = trigger::poison_image(images[i], trig, profile, i).poisoned;
        max_ms = std::max(max_ms, 1000.0 * seconds_since(t0));
        const double p = metrics::psnr(images[i], poisoned), s = metrics::ssim(images[i], poisoned);
        min_psnr = std::min(min_psnr, p);
        min_ssim = std::min(min_ssim, s);
        sum_psnr += p;
        sum_ssim += s;
    }
    const double n = static_cast<double>(images.size());
    report(5, images.size() >= 10 && min_psnr >= kMinPsnr && min_ssim >= kMinSsim && max_ms < kMaxMillisPerImage,
           "stealthiness on natural photos",
           fmt("%zu images, min PSNR %.2f dB (mean %.2f), min SSIM %.4f (mean %.4f), max %.1f ms/image",
               images.size(), min_psnr, sum_psnr / n, min_ssim, sum_ssim / n, max_ms));
}

void frequency_ordering(const std::vector<Image>& images, const Image& trig)
{
    trigger::TriggerProfile profile = trigger::builtin_profiles().attack;
    profile.seed = 106;
    int ordered = 0;
    for (std::size_t i = 0; i < images.size(); ++i) {
        const Image& clean = images[i];
        const Image full = trigger::ablation_poison(clean, trig, profile, trigger::Stage::Full, i);
        const Image dwt = trigger::ablation_poison(clean, trig, profile, trigger::Stage::DwtOnly, i);
        const double hf_clean = metrics::hf_artifact_score(clean);
        const bool energy = metrics::freq_residual(clean, full).energy < metrics::freq_residual(clean, dwt).energy;
        const bool hf = std::abs(metrics::hf_artifact_score(full) - hf_clean) <
                        std::abs(metrics::hf_artifact_score(dwt) - hf_clean);
        ordered += energy && hf;
    }
    const double share = static_cast<double>(ordered) / static_cast<double>(images.size());
    report(6, share >= kMinOrderingShare, "full pipeline is quieter in frequency than dwt-only",
           fmt("ordering holds on %d of %zu images (need %.0f%%)", ordered, images.size(), 100 * kMinOrderingShare));
}

void dataset_determinism(const fs::path& trigger_path)
{
    const fs::path root = fixture::make_dataset("acceptance_in", 10, 20, 32, 107);
    const poisoner::DatasetIndex index = poisoner::index_dataset(root);
    poisoner::PoisonOptions options;
    options.profile = trigger::builtin_profiles().train;
    options.profile.seed = options.seed = 107;
    options.ratio = 0.1;
    options.label_map = poisoner::LabelMap{poisoner::LabelMode::AllToAll, 0};

    std::vector<std::map<std::string, std::vector<std::uint8_t>>> trees;
    std::size_t mismatches = 0, poisoned = 0;
    for (int jobs : {1, 4, 1, 4}) {
        options.jobs = jobs;
        const fs::path out = fixture::fresh_dir("acceptance_out");
        const poisoner::PoisonManifest m = poisoner::poison_dataset(index, trigger_path, options, out);
        poisoned = m.poisoned_count();
        mismatches += poisoner::verify_manifest(out, std::nullopt, jobs).mismatches.size();
        trees.push_back(fixture::snapshot(out));
    }
    bool identical = true;
    for (const auto& t : trees)
        identical = identical && t == trees.front();

    const int classes = static_cast<int>(index.classes.size());
    std::set<int> images;
    for (int y = 0; y < classes; ++y)
        images.insert(poisoner::remap_label(y, options.label_map, classes));
    const bool bijection = static_cast<int>(images.size()) == classes;

    report(7, identical && mismatches == 0 && poisoned == 20 && bijection, "dataset poisoning is reproducible",
           fmt("%zu images, trees %s across jobs 1/4, %zu verify mismatches, M = %zu, all-to-all %s",
               index.samples.size(), identical ? "identical" : "DIFFER", mismatches, poisoned,
               bijection ? "bijective" : "NOT bijective"));
}

void masking_exactness()
{
    std::mt19937_64 rng(108);
    trigger::TriggerProfile profile = trigger::builtin_profiles().attack;
    profile.seed = 108;
    const Image trig = oracle::random_image(rng, 64, 64, 3);
    std::size_t masked = 0, extreme = 0, violations = 0;
    for (int i = 0; i < 20; ++i) {
        const Image clean = oracle::random_image(rng, 32, 32, 3);
        const trigger::PoisonResult r = trigger::poison_image(clean, trig, profile, i);
        for (int y = 0; y < clean.height(); ++y)
            for (int x = 0; x < clean.width(); ++x) {
                bool out_of_range = false;
                for (int c = 0; c < 3; ++c) {
                    const double v = clean.at(y, x, c);
                    out_of_range = out_of_range || v < profile.low_threshold / 255.0 ||
                                   v > profile.high_threshold / 255.0;
                }
                extreme += out_of_range;
                if (out_of_range && r.mask(y, x))
                    ++violations;
                if (r.mask(y, x))
                    continue;
                ++masked;
                for (int c = 0; c < 3; ++c)
                    violations += r.poisoned.at(y, x, c) != clean.at(y, x, c);
            }
    }
    report(8, violations == 0 && extreme > 0, "masked pixels are untouched",
           fmt("%zu masked pixels (%zu from thresholds), %zu violations", masked, extreme, violations));
}

} // namespace

int main()
{
    const fs::path trigger_path = data("trigger_ear.png");
    const std::vector<Image> images = natural_set();
    const Image trig = load(trigger_path);

    round_trips();
    fusion_oracle();
    amplitude_preservation();
    identity_and_clean_return();
    stealth(images, trig);
    frequency_ordering(images, trig);
    dataset_determinism(trigger_path);
    masking_exactness();

    std::printf("%d of 8 criteria failed\n", failures);
    return failures == 0 ? 0 : 1;
}
