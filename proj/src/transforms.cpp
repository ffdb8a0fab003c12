#include "duba/transforms.hpp"

#include "duba/errors.hpp"

#include <fftw3.h>

#include <cmath>
#include <map>
#include <mutex>
#include <string>
#include <tuple>

namespace duba::transforms {

namespace {

// FFTW planning is not thread-safe, execution with the new-array interface
// is. Plans are built once per (kind, size) under a lock and never freed.
// FFTW_UNALIGNED keeps results independent of buffer alignment, which the
// bit-exact determinism of the pipeline relies on.
enum class PlanKind { Forward, Backward, Dct, Idct };

fftw_plan get_plan(PlanKind kind, int rows, int cols)
{
    static std::mutex mutex;
    static std::map<std::tuple<PlanKind, int, int>, fftw_plan> plans;

    std::lock_guard lock(mutex);
    auto key = std::make_tuple(kind, rows, cols);
    if (auto it = plans.find(key); it != plans.end())
        return it->second;

    const unsigned flags = FFTW_ESTIMATE | FFTW_UNALIGNED;
    const std::size_t n = static_cast<std::size_t>(rows) * cols;
    fftw_plan plan = nullptr;
    if (kind == PlanKind::Forward || kind == PlanKind::Backward) {
        ComplexPlane scratch(n);
        auto* buf = reinterpret_cast<fftw_complex*>(scratch.data());
        plan = fftw_plan_dft_2d(rows, cols, buf, buf, kind == PlanKind::Forward ? FFTW_FORWARD : FFTW_BACKWARD,
                                flags);
    } else {
        std::vector<double> in(n), out(n);
        const fftw_r2r_kind r2r = kind == PlanKind::Dct ? FFTW_REDFT10 : FFTW_REDFT01;
        plan = fftw_plan_r2r_2d(rows, cols, in.data(), out.data(), r2r, r2r, flags);
    }
    if (plan == nullptr)
        throw NumericError("FFTW could not build a plan for " + std::to_string(rows) + "x" + std::to_string(cols));
    plans.emplace(key, plan);
    return plan;
}

void require_even(const Plane& plane)
{
    if (plane.rows() % 2 != 0 || plane.cols() % 2 != 0 || plane.rows() == 0 || plane.cols() == 0)
        throw DimensionError("dwt2 needs even, nonzero dimensions, got " + std::to_string(plane.rows()) + "x" +
                             std::to_string(plane.cols()));
}

void require_transformable(const Plane& plane, const char* what)
{
    if (plane.rows() < 2 || plane.cols() < 2)
        throw DimensionError(std::string(what) + " needs both dimensions >= 2");
}

// Orthonormal per-axis scale factors applied around FFTW's unnormalized
// REDFT10 (forward) and REDFT01 (inverse).
double dct_forward_scale(int k, int n)
{
    return k == 0 ? std::sqrt(1.0 / (4.0 * n)) : std::sqrt(1.0 / (2.0 * n));
}

double dct_inverse_scale(int k, int n)
{
    return k == 0 ? std::sqrt(1.0 / n) : std::sqrt(1.0 / (2.0 * n));
}

} // namespace

WaveletDecomposition dwt2(const Plane& plane)
{
    require_even(plane);
    const int h = plane.rows() / 2;
    const int w = plane.cols() / 2;
    WaveletDecomposition dec{Plane(h, w), {Plane(h, w), Plane(h, w), Plane(h, w)}};
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            const double a = plane(2 * y, 2 * x);
            const double b = plane(2 * y, 2 * x + 1);
            const double c = plane(2 * y + 1, 2 * x);
            const double d = plane(2 * y + 1, 2 * x + 1);
            dec.low(y, x) = (a + b + c + d) / 2.0;
            dec.high[kVertical](y, x) = (a - b + c - d) / 2.0;
            dec.high[kDiagonal](y, x) = (a - b - c + d) / 2.0;
            dec.high[kHorizontal](y, x) = (a + b - c - d) / 2.0;
        }
    }
    return dec;
}

Plane idwt2(const WaveletDecomposition& dec)
{
    for (const Plane& band : dec.high)
        if (!band.same_size(dec.low))
            throw ShapeError("idwt2: subbands differ in size");
    const int h = dec.low.rows();
    const int w = dec.low.cols();
    Plane out(2 * h, 2 * w);
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            const double ll = dec.low(y, x);
            const double v = dec.high[kVertical](y, x);
            const double dg = dec.high[kDiagonal](y, x);
            const double hz = dec.high[kHorizontal](y, x);
            out(2 * y, 2 * x) = (ll + v + hz + dg) / 2.0;
            out(2 * y, 2 * x + 1) = (ll - v + hz - dg) / 2.0;
            out(2 * y + 1, 2 * x) = (ll + v - hz - dg) / 2.0;
            out(2 * y + 1, 2 * x + 1) = (ll - v - hz + dg) / 2.0;
        }
    }
    return out;
}

WaveletPyramid dwt_pyramid(const Plane& plane, int levels)
{
    if (levels < 1)
        throw DimensionError("dwt_pyramid needs at least one level");
    const int divisor = 1 << levels;
    if (plane.rows() % divisor != 0 || plane.cols() % divisor != 0 || plane.rows() == 0 || plane.cols() == 0)
        throw DimensionError("dimensions " + std::to_string(plane.rows()) + "x" + std::to_string(plane.cols()) +
                             " are not divisible by " + std::to_string(divisor));

    WaveletPyramid pyramid;
    Plane current = plane;
    for (int i = 0; i < levels; ++i) {
        WaveletDecomposition dec = dwt2(current);
        pyramid.levels.push_back(std::move(dec.high));
        current = std::move(dec.low);
    }
    pyramid.low = std::move(current);
    return pyramid;
}

std::vector<WaveletPyramid> dwt_pyramid(const Image& img, int levels)
{
    std::vector<WaveletPyramid> out;
    out.reserve(img.channels());
    for (int c = 0; c < img.channels(); ++c)
        out.push_back(dwt_pyramid(img.channel(c), levels));
    return out;
}

Plane reconstruct_pyramid(const WaveletPyramid& pyramid)
{
    if (pyramid.levels.empty())
        throw ShapeError("reconstruct_pyramid: no levels");
    Plane current = pyramid.low;
    for (auto level = pyramid.levels.rbegin(); level != pyramid.levels.rend(); ++level)
        current = idwt2(WaveletDecomposition{std::move(current), *level});
    return current;
}

Tensor reconstruct_pyramid(const std::vector<WaveletPyramid>& pyramids)
{
    std::vector<Plane> planes;
    planes.reserve(pyramids.size());
    for (const WaveletPyramid& p : pyramids)
        planes.push_back(reconstruct_pyramid(p));
    return Tensor::from_planes(planes);
}

Spectrum fft2_complex(const Plane& plane)
{
    require_transformable(plane, "fft2");
    Spectrum spec{plane.rows(), plane.cols(), ComplexPlane(plane.size())};
    for (std::size_t i = 0; i < plane.size(); ++i)
        spec.bins[i] = plane.values()[i];
    auto* buf = reinterpret_cast<fftw_complex*>(spec.bins.data());
    fftw_execute_dft(get_plan(PlanKind::Forward, spec.rows, spec.cols), buf, buf);
    return spec;
}

Spectrum ifft2_complex(const Spectrum& spectrum)
{
    if (spectrum.rows < 2 || spectrum.cols < 2)
        throw DimensionError("ifft2 needs both dimensions >= 2");
    if (spectrum.bins.size() != static_cast<std::size_t>(spectrum.rows) * spectrum.cols)
        throw ShapeError("ifft2: bin count does not match dimensions");
    Spectrum out = spectrum;
    auto* buf = reinterpret_cast<fftw_complex*>(out.bins.data());
    fftw_execute_dft(get_plan(PlanKind::Backward, out.rows, out.cols), buf, buf);
    const double norm = 1.0 / (static_cast<double>(out.rows) * out.cols);
    for (auto& v : out.bins)
        v *= norm;
    return out;
}

SpectrumPair fft2(const Plane& plane)
{
    const Spectrum spec = fft2_complex(plane);
    SpectrumPair pair{Plane(spec.rows, spec.cols), Plane(spec.rows, spec.cols)};
    for (std::size_t i = 0; i < spec.bins.size(); ++i) {
        pair.amplitude.values()[i] = std::abs(spec.bins[i]);
        pair.phase.values()[i] = std::arg(spec.bins[i]);
    }
    return pair;
}

Spectrum combine(const SpectrumPair& spec)
{
    if (!spec.amplitude.same_size(spec.phase))
        throw ShapeError("combine: amplitude and phase differ in size");
    Spectrum out{spec.amplitude.rows(), spec.amplitude.cols(), ComplexPlane(spec.amplitude.size())};
    for (std::size_t i = 0; i < out.bins.size(); ++i)
        out.bins[i] = std::polar(spec.amplitude.values()[i], spec.phase.values()[i]);
    return out;
}

Spectrum hermitian_symmetrize(const Spectrum& spectrum)
{
    Spectrum out{spectrum.rows, spectrum.cols, ComplexPlane(spectrum.bins.size())};
    const int h = spectrum.rows;
    const int w = spectrum.cols;
    for (int u = 0; u < h; ++u) {
        const int mu = (h - u) % h;
        for (int v = 0; v < w; ++v) {
            const int mv = (w - v) % w;
            const auto& here = spectrum.bins[static_cast<std::size_t>(u) * w + v];
            const auto& mirror = spectrum.bins[static_cast<std::size_t>(mu) * w + mv];
            out.bins[static_cast<std::size_t>(u) * w + v] = 0.5 * (here + std::conj(mirror));
        }
    }
    return out;
}

Plane ifft2_real(const Spectrum& spectrum, double max_imag)
{
    const Spectrum inv = ifft2_complex(spectrum);
    Plane out(inv.rows, inv.cols);
    for (std::size_t i = 0; i < inv.bins.size(); ++i) {
        if (std::abs(inv.bins[i].imag()) > max_imag)
            throw NumericError("ifft2: imaginary residue " + std::to_string(std::abs(inv.bins[i].imag())) +
                               " exceeds tolerance");
        out.values()[i] = inv.bins[i].real();
    }
    return out;
}

Plane ifft2(const SpectrumPair& spec, double max_imag)
{
    return ifft2_real(combine(spec), max_imag);
}

Plane dct2(const Plane& plane)
{
    require_transformable(plane, "dct2");
    const int h = plane.rows();
    const int w = plane.cols();
    Plane in = plane;
    Plane out(h, w);
    fftw_execute_r2r(get_plan(PlanKind::Dct, h, w), in.values().data(), out.values().data());
    for (int u = 0; u < h; ++u) {
        const double su = dct_forward_scale(u, h);
        for (int v = 0; v < w; ++v)
            out(u, v) *= su * dct_forward_scale(v, w);
    }
    return out;
}

Plane idct2(const Plane& plane)
{
    require_transformable(plane, "idct2");
    const int h = plane.rows();
    const int w = plane.cols();
    Plane scaled(h, w);
    for (int u = 0; u < h; ++u) {
        const double su = dct_inverse_scale(u, h);
        for (int v = 0; v < w; ++v)
            scaled(u, v) = plane(u, v) * su * dct_inverse_scale(v, w);
    }
    Plane out(h, w);
    fftw_execute_r2r(get_plan(PlanKind::Idct, h, w), scaled.values().data(), out.values().data());
    return out;
}

} // namespace duba::transforms
