#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

namespace duba {

struct Shape {
    int height = 0;
    int width = 0;
    int channels = 0;

    std::size_t pixels() const { return static_cast<std::size_t>(height) * width; }
    std::size_t size() const { return pixels() * channels; }
    bool operator==(const Shape&) const = default;
};

// Single-channel 2-D array of doubles, row-major. This is what the
// frequency transforms operate on.
class Plane {
public:
    Plane() = default;
    Plane(int rows, int cols, double fill = 0.0);
    Plane(int rows, int cols, std::vector<double> values);

    int rows() const { return rows_; }
    int cols() const { return cols_; }
    std::size_t size() const { return values_.size(); }

    double& operator()(int r, int c) { return values_[static_cast<std::size_t>(r) * cols_ + c]; }
    double operator()(int r, int c) const { return values_[static_cast<std::size_t>(r) * cols_ + c]; }

    std::span<double> values() { return values_; }
    std::span<const double> values() const { return values_; }

    bool same_size(const Plane& other) const { return rows_ == other.rows_ && cols_ == other.cols_; }

private:
    int rows_ = 0;
    int cols_ = 0;
    std::vector<double> values_;
};

// Height x width x channels array of doubles, interleaved (HWC). No range
// constraint: intermediate pipeline stages and residuals live here.
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(Shape shape, double fill = 0.0);
    Tensor(Shape shape, std::vector<double> values);

    static Tensor from_planes(std::span<const Plane> planes);

    const Shape& shape() const { return shape_; }
    int height() const { return shape_.height; }
    int width() const { return shape_.width; }
    int channels() const { return shape_.channels; }

    double& at(int y, int x, int c) { return values_[index(y, x, c)]; }
    double at(int y, int x, int c) const { return values_[index(y, x, c)]; }

    std::span<double> values() { return values_; }
    std::span<const double> values() const { return values_; }

    Plane channel(int c) const;

private:
    std::size_t index(int y, int x, int c) const
    {
        return (static_cast<std::size_t>(y) * shape_.width + x) * shape_.channels + c;
    }

    Shape shape_;
    std::vector<double> values_;
};

// Signed difference of two images; values may be negative.
using Residual = Tensor;

// Tensor whose values are finite and in [0,1], at least 8x8, with 1 or 3
// channels. Immutable once built.
class Image {
public:
    // Throws DimensionError / NumericError when the invariants do not hold.
    explicit Image(Tensor tensor);

    static Image constant(Shape shape, double value);

    const Tensor& tensor() const { return tensor_; }
    const Shape& shape() const { return tensor_.shape(); }
    int height() const { return tensor_.height(); }
    int width() const { return tensor_.width(); }
    int channels() const { return tensor_.channels(); }
    double at(int y, int x, int c) const { return tensor_.at(y, x, c); }
    std::span<const double> values() const { return tensor_.values(); }
    Plane channel(int c) const { return tensor_.channel(c); }

private:
    Tensor tensor_;
};

enum class Interpolation { Bilinear, Nearest, Bicubic };

// Clamp every element to [0,1]. Non-finite input raises NumericError.
Image clip(const Tensor& t);

// a - b, element-wise. Shapes must match.
Residual residual(const Image& a, const Image& b);
Tensor subtract(const Tensor& a, const Tensor& b);

// Half-pixel-center resampling. The output is clipped to [0,1].
Tensor resize(const Tensor& t, int new_height, int new_width,
              Interpolation method = Interpolation::Bilinear);
Image resize(const Image& img, int new_height, int new_width,
             Interpolation method = Interpolation::Bilinear);
Plane resize(const Plane& p, int new_height, int new_width,
             Interpolation method = Interpolation::Bilinear);

// Crop to the centered window of the given size.
Image center_crop(const Image& img, int height, int width);

// round(v*255) with ties away from zero, clamped to [0,255].
std::uint8_t quantize(double v);

Image load(const std::filesystem::path& path);
Image decode(std::span<const std::uint8_t> bytes);

// Only PNG is accepted as an output format.
void save(const Image& img, const std::filesystem::path& path);
std::vector<std::uint8_t> encode_png(const Image& img);

// Min-max normalized grayscale rendering of a single plane.
Image render_plane(const Plane& p);
// Min-max normalized rendering of a residual, keeping its channel count.
Image render_residual(const Residual& r);

} // namespace duba
