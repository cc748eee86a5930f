#pragma once

#include <array>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace nodule {

/// Shape of a dense 3D array in (axis0, axis1, axis2) = (z, y, x) order.
using Shape3 = std::array<std::int64_t, 3>;

inline std::int64_t voxel_count(const Shape3& s) { return s[0] * s[1] * s[2]; }

inline std::string shape_string(const Shape3& s) {
    return std::to_string(s[0]) + "x" + std::to_string(s[1]) + "x" + std::to_string(s[2]);
}

/// Dense row-major 3D grid. Last axis is contiguous.
template <typename T>
class Grid3 {
public:
    Grid3() = default;
    explicit Grid3(const Shape3& shape, T fill = T{})
        : shape_(shape), data_(static_cast<std::size_t>(voxel_count(shape)), fill) {
        for (auto n : shape) {
            if (n < 0) throw std::invalid_argument("negative grid dimension");
        }
    }
    Grid3(const Shape3& shape, std::vector<T> data) : shape_(shape), data_(std::move(data)) {
        if (static_cast<std::int64_t>(data_.size()) != voxel_count(shape)) {
            throw std::invalid_argument("grid data size does not match shape " + shape_string(shape));
        }
    }

    const Shape3& shape() const { return shape_; }
    std::int64_t dim(int axis) const { return shape_[static_cast<std::size_t>(axis)]; }
    std::size_t size() const { return data_.size(); }
    bool empty() const { return data_.empty(); }

    std::size_t index(std::int64_t z, std::int64_t y, std::int64_t x) const {
        return static_cast<std::size_t>((z * shape_[1] + y) * shape_[2] + x);
    }
    bool contains(std::int64_t z, std::int64_t y, std::int64_t x) const {
        return z >= 0 && y >= 0 && x >= 0 && z < shape_[0] && y < shape_[1] && x < shape_[2];
    }

    T& operator()(std::int64_t z, std::int64_t y, std::int64_t x) { return data_[index(z, y, x)]; }
    const T& operator()(std::int64_t z, std::int64_t y, std::int64_t x) const { return data_[index(z, y, x)]; }
    T& operator[](std::size_t i) { return data_[i]; }
    const T& operator[](std::size_t i) const { return data_[i]; }

    std::vector<T>& values() { return data_; }
    const std::vector<T>& values() const { return data_; }

    bool operator==(const Grid3&) const = default;

private:
    Shape3 shape_{0, 0, 0};
    std::vector<T> data_;
};

/// Binary masks are stored one byte per voxel with values {0,1}.
using Mask3 = Grid3<std::uint8_t>;

}  // namespace nodule
