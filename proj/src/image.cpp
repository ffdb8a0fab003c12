#include "duba/image.hpp"

#include "duba/errors.hpp"

#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <iterator>
#include <string>

namespace duba {

namespace {

constexpr int kMinImageSide = 8;

std::string shape_string(const Shape& s)
{
    return std::to_string(s.height) + "x" + std::to_string(s.width) + "x" + std::to_string(s.channels);
}

void require_same_shape(const Shape& a, const Shape& b, const char* what)
{
    if (a != b)
        throw ShapeError(std::string(what) + ": shape mismatch " + shape_string(a) + " vs " + shape_string(b));
}

double cubic_weight(double x)
{
    constexpr double a = -0.75;
    x = std::abs(x);
    if (x <= 1.0)
        return ((a + 2.0) * x - (a + 3.0)) * x * x + 1.0;
    if (x < 2.0)
        return ((a * x - 5.0 * a) * x + 8.0 * a) * x - 4.0 * a;
    return 0.0;
}

// Resample one strided channel. `read(y, x)` returns the source sample.
template <typename Read, typename Write>
void resample(int in_h, int in_w, int out_h, int out_w, Interpolation method, Read read, Write write)
{
    const double sy = static_cast<double>(in_h) / out_h;
    const double sx = static_cast<double>(in_w) / out_w;
    auto clampi = [](int v, int hi) { return std::clamp(v, 0, hi - 1); };

    for (int y = 0; y < out_h; ++y) {
        const double fy = (y + 0.5) * sy - 0.5;
        for (int x = 0; x < out_w; ++x) {
            const double fx = (x + 0.5) * sx - 0.5;
            double v = 0.0;
            switch (method) {
            case Interpolation::Nearest: {
                const int ny = clampi(static_cast<int>(std::floor((y + 0.5) * sy)), in_h);
                const int nx = clampi(static_cast<int>(std::floor((x + 0.5) * sx)), in_w);
                v = read(ny, nx);
                break;
            }
            case Interpolation::Bilinear: {
                const double cy = std::clamp(fy, 0.0, static_cast<double>(in_h - 1));
                const double cx = std::clamp(fx, 0.0, static_cast<double>(in_w - 1));
                const int y0 = static_cast<int>(std::floor(cy));
                const int x0 = static_cast<int>(std::floor(cx));
                const int y1 = std::min(y0 + 1, in_h - 1);
                const int x1 = std::min(x0 + 1, in_w - 1);
                const double wy = cy - y0;
                const double wx = cx - x0;
                const double top = read(y0, x0) * (1.0 - wx) + read(y0, x1) * wx;
                const double bottom = read(y1, x0) * (1.0 - wx) + read(y1, x1) * wx;
                v = top * (1.0 - wy) + bottom * wy;
                break;
            }
            case Interpolation::Bicubic: {
                const int y0 = static_cast<int>(std::floor(fy));
                const int x0 = static_cast<int>(std::floor(fx));
                std::array<double, 4> wy{}, wx{};
                for (int k = 0; k < 4; ++k) {
                    wy[k] = cubic_weight(fy - (y0 - 1 + k));
                    wx[k] = cubic_weight(fx - (x0 - 1 + k));
                }
                for (int j = 0; j < 4; ++j) {
                    const int yy = clampi(y0 - 1 + j, in_h);
                    double row = 0.0;
                    for (int i = 0; i < 4; ++i)
                        row += wx[i] * read(yy, clampi(x0 - 1 + i, in_w));
                    v += wy[j] * row;
                }
                break;
            }
            }
            write(y, x, std::clamp(v, 0.0, 1.0));
        }
    }
}

Image from_mat(const cv::Mat& decoded, const std::string& origin)
{
    cv::Mat mat = decoded;
    if (mat.channels() == 4)
        cv::cvtColor(mat, mat, cv::COLOR_BGRA2BGR);
    if (mat.channels() != 1 && mat.channels() != 3)
        throw FormatError(origin + ": unsupported channel count " + std::to_string(mat.channels()));
    if (mat.rows < kMinImageSide || mat.cols < kMinImageSide)
        throw DimensionError(origin + ": image is " + std::to_string(mat.rows) + "x" + std::to_string(mat.cols) +
                             ", both sides must be at least 8");

    const int channels = mat.channels();
    Tensor t(Shape{mat.rows, mat.cols, channels});
    for (int y = 0; y < mat.rows; ++y) {
        const std::uint8_t* row = mat.ptr<std::uint8_t>(y);
        for (int x = 0; x < mat.cols; ++x) {
            for (int c = 0; c < channels; ++c) {
                // OpenCV stores BGR; keep RGB internally.
                const int src = channels == 3 ? 2 - c : c;
                t.at(y, x, c) = row[x * channels + src] / 255.0;
            }
        }
    }
    return Image(std::move(t));
}

cv::Mat to_mat(const Image& img)
{
    const int channels = img.channels();
    cv::Mat mat(img.height(), img.width(), channels == 3 ? CV_8UC3 : CV_8UC1);
    for (int y = 0; y < img.height(); ++y) {
        std::uint8_t* row = mat.ptr<std::uint8_t>(y);
        for (int x = 0; x < img.width(); ++x)
            for (int c = 0; c < channels; ++c)
                row[x * channels + (channels == 3 ? 2 - c : c)] = quantize(img.at(y, x, c));
    }
    return mat;
}

bool has_png_extension(const std::filesystem::path& path)
{
    std::string ext = path.extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char ch) { return std::tolower(ch); });
    return ext == ".png";
}

} // namespace

Plane::Plane(int rows, int cols, double fill)
    : rows_(rows), cols_(cols), values_(static_cast<std::size_t>(rows) * cols, fill)
{
    if (rows < 0 || cols < 0)
        throw DimensionError("plane dimensions must be non-negative");
}

Plane::Plane(int rows, int cols, std::vector<double> values) : rows_(rows), cols_(cols), values_(std::move(values))
{
    if (rows < 0 || cols < 0 || values_.size() != static_cast<std::size_t>(rows) * cols)
        throw ShapeError("plane value count does not match " + std::to_string(rows) + "x" + std::to_string(cols));
}

Tensor::Tensor(Shape shape, double fill) : shape_(shape), values_(shape.size(), fill)
{
    if (shape.height <= 0 || shape.width <= 0 || shape.channels <= 0)
        throw DimensionError("tensor dimensions must be positive, got " + shape_string(shape));
}

Tensor::Tensor(Shape shape, std::vector<double> values) : shape_(shape), values_(std::move(values))
{
    if (shape.height <= 0 || shape.width <= 0 || shape.channels <= 0)
        throw DimensionError("tensor dimensions must be positive, got " + shape_string(shape));
    if (values_.size() != shape.size())
        throw ShapeError("tensor value count does not match " + shape_string(shape));
}

Tensor Tensor::from_planes(std::span<const Plane> planes)
{
    if (planes.empty())
        throw ShapeError("from_planes: no planes");
    const Plane& first = planes.front();
    for (const Plane& p : planes)
        if (!p.same_size(first))
            throw ShapeError("from_planes: planes differ in size");

    const int channels = static_cast<int>(planes.size());
    Tensor t(Shape{first.rows(), first.cols(), channels});
    for (int c = 0; c < channels; ++c)
        for (int y = 0; y < first.rows(); ++y)
            for (int x = 0; x < first.cols(); ++x)
                t.at(y, x, c) = planes[c](y, x);
    return t;
}

Plane Tensor::channel(int c) const
{
    if (c < 0 || c >= shape_.channels)
        throw ShapeError("channel index " + std::to_string(c) + " out of range");
    Plane p(shape_.height, shape_.width);
    for (int y = 0; y < shape_.height; ++y)
        for (int x = 0; x < shape_.width; ++x)
            p(y, x) = at(y, x, c);
    return p;
}

Image::Image(Tensor tensor) : tensor_(std::move(tensor))
{
    const Shape& s = tensor_.shape();
    if (s.height < kMinImageSide || s.width < kMinImageSide)
        throw DimensionError("image is " + shape_string(s) + ", both sides must be at least 8");
    if (s.channels != 1 && s.channels != 3)
        throw DimensionError("image must have 1 or 3 channels, got " + std::to_string(s.channels));
    for (double v : tensor_.values())
        if (!std::isfinite(v) || v < 0.0 || v > 1.0)
            throw NumericError("image value outside [0,1]: " + std::to_string(v));
}

Image Image::constant(Shape shape, double value)
{
    return Image(Tensor(shape, value));
}

Image clip(const Tensor& t)
{
    std::vector<double> out(t.values().begin(), t.values().end());
    for (double& v : out) {
        if (!std::isfinite(v))
            throw NumericError("clip: non-finite value");
        v = std::clamp(v, 0.0, 1.0);
    }
    return Image(Tensor(t.shape(), std::move(out)));
}

Tensor subtract(const Tensor& a, const Tensor& b)
{
    require_same_shape(a.shape(), b.shape(), "residual");
    std::vector<double> out(a.values().size());
    std::transform(a.values().begin(), a.values().end(), b.values().begin(), out.begin(), std::minus<>());
    return Tensor(a.shape(), std::move(out));
}

Residual residual(const Image& a, const Image& b)
{
    return subtract(a.tensor(), b.tensor());
}

Tensor resize(const Tensor& t, int new_height, int new_width, Interpolation method)
{
    if (new_height < 2 || new_width < 2)
        throw DimensionError("resize target must be at least 2x2");
    if (new_height == t.height() && new_width == t.width())
        return t;
    Tensor out(Shape{new_height, new_width, t.channels()});
    for (int c = 0; c < t.channels(); ++c) {
        resample(
            t.height(), t.width(), new_height, new_width, method,
            [&](int y, int x) { return t.at(y, x, c); },
            [&](int y, int x, double v) { out.at(y, x, c) = v; });
    }
    return out;
}

Image resize(const Image& img, int new_height, int new_width, Interpolation method)
{
    return Image(resize(img.tensor(), new_height, new_width, method));
}

Plane resize(const Plane& p, int new_height, int new_width, Interpolation method)
{
    if (new_height < 2 || new_width < 2)
        throw DimensionError("resize target must be at least 2x2");
    if (new_height == p.rows() && new_width == p.cols())
        return p;
    Plane out(new_height, new_width);
    resample(
        p.rows(), p.cols(), new_height, new_width, method, [&](int y, int x) { return p(y, x); },
        [&](int y, int x, double v) { out(y, x) = v; });
    return out;
}

Image center_crop(const Image& img, int height, int width)
{
    if (height > img.height() || width > img.width())
        throw DimensionError("center_crop: window larger than image");
    const int top = (img.height() - height) / 2;
    const int left = (img.width() - width) / 2;
    Tensor out(Shape{height, width, img.channels()});
    for (int y = 0; y < height; ++y)
        for (int x = 0; x < width; ++x)
            for (int c = 0; c < img.channels(); ++c)
                out.at(y, x, c) = img.at(top + y, left + x, c);
    return Image(std::move(out));
}

std::uint8_t quantize(double v)
{
    const double scaled = std::floor(v * 255.0 + 0.5);
    return static_cast<std::uint8_t>(std::clamp(scaled, 0.0, 255.0));
}

Image load(const std::filesystem::path& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in)
        throw IoError("cannot read " + path.string());
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    if (in.bad())
        throw IoError("read failed for " + path.string());

    cv::Mat decoded;
    try {
        decoded = cv::imdecode(bytes, cv::IMREAD_ANYCOLOR);
    } catch (const cv::Exception& e) {
        throw FormatError(path.string() + ": " + e.what());
    }
    if (decoded.empty())
        throw FormatError(path.string() + ": not a decodable PNG, BMP or JPEG image");
    return from_mat(decoded, path.string());
}

Image decode(std::span<const std::uint8_t> bytes)
{
    cv::Mat buffer(1, static_cast<int>(bytes.size()), CV_8UC1, const_cast<std::uint8_t*>(bytes.data()));
    cv::Mat decoded;
    try {
        decoded = cv::imdecode(buffer, cv::IMREAD_ANYCOLOR);
    } catch (const cv::Exception& e) {
        throw FormatError(std::string("decode: ") + e.what());
    }
    if (decoded.empty())
        throw FormatError("decode: not a decodable PNG, BMP or JPEG image");
    return from_mat(decoded, "<memory>");
}

std::vector<std::uint8_t> encode_png(const Image& img)
{
    std::vector<std::uint8_t> bytes;
    const std::vector<int> params{cv::IMWRITE_PNG_COMPRESSION, 6};
    if (!cv::imencode(".png", to_mat(img), bytes, params))
        throw FormatError("PNG encoding failed");
    return bytes;
}

void save(const Image& img, const std::filesystem::path& path)
{
    if (!has_png_extension(path))
        throw FormatError("refusing to write " + path.string() + ": output must be lossless PNG");
    const std::vector<std::uint8_t> bytes = encode_png(img);
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out)
        throw IoError("cannot open " + path.string() + " for writing");
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out)
        throw IoError("write failed for " + path.string());
}

Image render_plane(const Plane& p)
{
    const auto [lo, hi] = std::minmax_element(p.values().begin(), p.values().end());
    const double span = *hi - *lo;
    Tensor t(Shape{p.rows(), p.cols(), 1});
    for (int y = 0; y < p.rows(); ++y)
        for (int x = 0; x < p.cols(); ++x)
            t.at(y, x, 0) = span > 0.0 ? (p(y, x) - *lo) / span : 0.0;
    return Image(std::move(t));
}

Image render_residual(const Residual& r)
{
    const auto [lo, hi] = std::minmax_element(r.values().begin(), r.values().end());
    const double span = *hi - *lo;
    std::vector<double> out(r.values().size());
    std::transform(r.values().begin(), r.values().end(), out.begin(),
                   [&](double v) { return span > 0.0 ? (v - *lo) / span : 0.0; });
    return Image(Tensor(r.shape(), std::move(out)));
}

} // namespace duba
