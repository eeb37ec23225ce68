#pragma once

#include <vector>

#include "dsr/common.hpp"

namespace dsr {

/// r*r low-resolution views of one high-resolution map. View (i, j), 1-based,
/// holds the samples hr(r*y + i - 1, r*x + j - 1).
template <typename Scalar>
struct ViewGrid {
    int factor = 0;
    std::vector<Image<Scalar>> views; // row-major over (i, j)

    Image<Scalar>& view(int i, int j) { return views.at(index(i, j)); }
    const Image<Scalar>& view(int i, int j) const { return views.at(index(i, j)); }

    std::size_t index(int i, int j) const
    {
        require(i >= 1 && i <= factor && j >= 1 && j <= factor, "ViewGrid: view index out of range");
        return static_cast<std::size_t>((i - 1) * factor + (j - 1));
    }
};

/// Splits hr into r*r strided sub-images. Dimensions must be divisible by r.
template <typename Derived>
ViewGrid<typename Derived::Scalar> decompose(const Eigen::MatrixBase<Derived>& hr, int r)
{
    using Scalar = typename Derived::Scalar;
    require(r >= 2, "decompose: factor must be at least 2");
    if (hr.rows() % r != 0 || hr.cols() % r != 0) {
        throw ContractError("decompose: " + std::to_string(hr.rows()) + "x" + std::to_string(hr.cols())
                            + " map is not divisible by factor " + std::to_string(r));
    }
    const Eigen::Index h = hr.rows() / r;
    const Eigen::Index w = hr.cols() / r;
    ViewGrid<Scalar> grid{r, {}};
    grid.views.reserve(static_cast<std::size_t>(r * r));
    for (int a = 0; a < r; ++a) {
        for (int b = 0; b < r; ++b) {
            Image<Scalar> v(h, w);
            for (Eigen::Index y = 0; y < h; ++y) {
                for (Eigen::Index x = 0; x < w; ++x) {
                    v(y, x) = hr(r * y + a, r * x + b);
                }
            }
            grid.views.push_back(std::move(v));
        }
    }
    return grid;
}

/// Periodic interleaving of r*r views of size HxW into one rH x rW map.
template <typename Scalar>
Image<Scalar> reorganize(const ViewGrid<Scalar>& grid)
{
    const int r = grid.factor;
    require(r >= 2, "reorganize: factor must be at least 2");
    if (grid.views.size() != static_cast<std::size_t>(r * r)) {
        throw ContractError("reorganize: expected " + std::to_string(r * r) + " views, got "
                            + std::to_string(grid.views.size()));
    }
    const Eigen::Index h = grid.views.front().rows();
    const Eigen::Index w = grid.views.front().cols();
    for (const auto& v : grid.views) {
        if (v.rows() != h || v.cols() != w) {
            throw ContractError("reorganize: views have inconsistent shapes");
        }
    }
    Image<Scalar> hr(r * h, r * w);
    for (int a = 0; a < r; ++a) {
        for (int b = 0; b < r; ++b) {
            const auto& v = grid.views[static_cast<std::size_t>(a * r + b)];
            for (Eigen::Index y = 0; y < h; ++y) {
                for (Eigen::Index x = 0; x < w; ++x) {
                    hr(r * y + a, r * x + b) = v(y, x);
                }
            }
        }
    }
    return hr;
}

/// Nearest-neighbour replication by an integer factor.
template <typename Derived>
Image<typename Derived::Scalar> nearest_upsample(const Eigen::MatrixBase<Derived>& lr, int r)
{
    require(r >= 1, "nearest_upsample: factor must be positive");
    Image<typename Derived::Scalar> hr(lr.rows() * r, lr.cols() * r);
    for (Eigen::Index y = 0; y < hr.rows(); ++y) {
        for (Eigen::Index x = 0; x < hr.cols(); ++x) {
            hr(y, x) = lr(y / r, x / r);
        }
    }
    return hr;
}

} // namespace dsr
