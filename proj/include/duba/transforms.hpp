#pragma once

#include "duba/image.hpp"

#include <array>
#include <complex>
#include <vector>

namespace duba::transforms {

// One level of a 2-D Haar decomposition. All four bands are half the input
// size. Detail bands follow the order vertical, diagonal, horizontal.
struct WaveletDecomposition {
    Plane low;
    std::array<Plane, 3> high;
};

enum Detail : int { kVertical = 0, kDiagonal = 1, kHorizontal = 2 };

// Multi-level decomposition of one channel. levels[i] holds the detail bands
// produced by the (i+1)-th transform, so levels[0] is the finest.
struct WaveletPyramid {
    std::vector<std::array<Plane, 3>> levels;
    Plane low;
};

// Orthonormal single-level Haar transform. For each 2x2 block [a b; c d]:
//   low        = (a + b + c + d) / 2
//   vertical   = (a - b + c - d) / 2
//   horizontal = (a + b - c - d) / 2
//   diagonal   = (a - b - c + d) / 2
WaveletDecomposition dwt2(const Plane& plane);
Plane idwt2(const WaveletDecomposition& dec);

WaveletPyramid dwt_pyramid(const Plane& plane, int levels = 3);
std::vector<WaveletPyramid> dwt_pyramid(const Image& img, int levels = 3);
Plane reconstruct_pyramid(const WaveletPyramid& pyramid);
Tensor reconstruct_pyramid(const std::vector<WaveletPyramid>& pyramids);

using ComplexPlane = std::vector<std::complex<double>>;

struct Spectrum {
    int rows = 0;
    int cols = 0;
    ComplexPlane bins;
};

struct SpectrumPair {
    Plane amplitude;
    Plane phase;
};

// Unnormalized forward DFT / 1/(rows*cols)-normalized inverse.
Spectrum fft2_complex(const Plane& plane);
Spectrum ifft2_complex(const Spectrum& spectrum);

SpectrumPair fft2(const Plane& plane);
Spectrum combine(const SpectrumPair& spec);

// Averages every bin with the conjugate of its point-mirrored bin so the
// spectrum is exactly that of a real signal.
Spectrum hermitian_symmetrize(const Spectrum& spectrum);

// Inverse transform to a real plane. Throws NumericError when the imaginary
// residue exceeds `max_imag`.
Plane ifft2_real(const Spectrum& spectrum, double max_imag = 1e-9);
Plane ifft2(const SpectrumPair& spec, double max_imag = 1e-9);

// Orthonormal DCT-II / DCT-III.
Plane dct2(const Plane& plane);
Plane idct2(const Plane& plane);

} // namespace duba::transforms
