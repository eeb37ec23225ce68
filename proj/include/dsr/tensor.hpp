#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "dsr/common.hpp"

namespace dsr {

/// (batch, channels, height, width)
struct Shape {
    Eigen::Index batch = 0;
    Eigen::Index channels = 0;
    Eigen::Index height = 0;
    Eigen::Index width = 0;

    Eigen::Index size() const { return batch * channels * height * width; }
    Eigen::Index plane() const { return height * width; }
    bool operator==(const Shape&) const = default;

    std::string str() const
    {
        std::ostringstream os;
        os << '(' << batch << ", " << channels << ", " << height << ", " << width << ')';
        return os.str();
    }
};

/// Dense NCHW tensor with contiguous storage.
template <typename Scalar>
class Tensor {
public:
    using PlaneMap = Eigen::Map<Image<Scalar>>;
    using ConstPlaneMap = Eigen::Map<const Image<Scalar>>;
    using MatrixMap = Eigen::Map<Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
    using ConstMatrixMap = Eigen::Map<const Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;

    Tensor() = default;

    explicit Tensor(Shape shape, Scalar fill = Scalar(0))
        : shape_(shape)
        , data_(static_cast<std::size_t>(checked_size(shape)), fill)
    {
    }

    Tensor(Eigen::Index n, Eigen::Index c, Eigen::Index h, Eigen::Index w, Scalar fill = Scalar(0))
        : Tensor(Shape{n, c, h, w}, fill)
    {
    }

    /// Wraps a single image as a (1, 1, H, W) tensor.
    static Tensor from_image(const Image<Scalar>& img)
    {
        Tensor t(1, 1, img.rows(), img.cols());
        t.plane(0, 0) = img;
        return t;
    }

    const Shape& shape() const { return shape_; }
    Eigen::Index batch() const { return shape_.batch; }
    Eigen::Index channels() const { return shape_.channels; }
    Eigen::Index height() const { return shape_.height; }
    Eigen::Index width() const { return shape_.width; }
    Eigen::Index size() const { return static_cast<Eigen::Index>(data_.size()); }
    bool empty() const { return data_.empty(); }

    std::span<Scalar> data() { return data_; }
    std::span<const Scalar> data() const { return data_; }

    Scalar& operator()(Eigen::Index n, Eigen::Index c, Eigen::Index y, Eigen::Index x)
    {
        return data_[static_cast<std::size_t>(offset(n, c) + y * shape_.width + x)];
    }
    Scalar operator()(Eigen::Index n, Eigen::Index c, Eigen::Index y, Eigen::Index x) const
    {
        return data_[static_cast<std::size_t>(offset(n, c) + y * shape_.width + x)];
    }

    PlaneMap plane(Eigen::Index n, Eigen::Index c)
    {
        return PlaneMap(data_.data() + offset(n, c), shape_.height, shape_.width);
    }
    ConstPlaneMap plane(Eigen::Index n, Eigen::Index c) const
    {
        return ConstPlaneMap(data_.data() + offset(n, c), shape_.height, shape_.width);
    }

    /// Item n viewed as a (channels, H*W) matrix.
    MatrixMap item(Eigen::Index n)
    {
        return MatrixMap(data_.data() + offset(n, 0), shape_.channels, shape_.plane());
    }
    ConstMatrixMap item(Eigen::Index n) const
    {
        return ConstMatrixMap(data_.data() + offset(n, 0), shape_.channels, shape_.plane());
    }

    auto flat() { return Eigen::Map<Vector<Scalar>>(data_.data(), size()); }
    auto flat() const { return Eigen::Map<const Vector<Scalar>>(data_.data(), size()); }

    void set_zero() { std::fill(data_.begin(), data_.end(), Scalar(0)); }

    bool all_finite() const
    {
        return std::all_of(data_.begin(), data_.end(), [](Scalar v) { return std::isfinite(v); });
    }

    template <typename Other>
    Tensor<Other> cast() const
    {
        Tensor<Other> out(shape_);
        std::transform(data_.begin(), data_.end(), out.data().begin(),
                       [](Scalar v) { return static_cast<Other>(v); });
        return out;
    }

    bool operator==(const Tensor& other) const { return shape_ == other.shape_ && data_ == other.data_; }

private:
    static Eigen::Index checked_size(const Shape& s)
    {
        require(s.batch >= 0 && s.channels >= 0 && s.height >= 0 && s.width >= 0,
                "tensor dimensions must be non-negative");
        return s.size();
    }

    Eigen::Index offset(Eigen::Index n, Eigen::Index c) const
    {
        return (n * shape_.channels + c) * shape_.plane();
    }

    Shape shape_{};
    std::vector<Scalar> data_;
};

template <typename Scalar>
void require_same_shape(const Tensor<Scalar>& a, const Tensor<Scalar>& b, const char* what)
{
    if (!(a.shape() == b.shape())) {
        throw ContractError(std::string(what) + ": shape mismatch " + a.shape().str() + " vs " + b.shape().str());
    }
}

template <typename Scalar>
void require_finite(const Tensor<Scalar>& t, const char* what)
{
    if (!t.all_finite()) {
        throw NumericalError(std::string(what) + ": non-finite value");
    }
}

} // namespace dsr
