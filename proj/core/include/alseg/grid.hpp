#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <string>

namespace alseg {

/// Integer voxel coordinate (x, y, z). Also used for extents.
struct Index3 {
    std::int64_t x = 0;
    std::int64_t y = 0;
    std::int64_t z = 0;

    constexpr std::int64_t operator[](int axis) const {
        return axis == 0 ? x : (axis == 1 ? y : z);
    }
    constexpr std::int64_t& operator[](int axis) {
        return axis == 0 ? x : (axis == 1 ? y : z);
    }
    friend constexpr bool operator==(const Index3&, const Index3&) = default;
    friend constexpr auto operator<=>(const Index3&, const Index3&) = default;
};

using Dims3 = Index3;

constexpr std::size_t voxel_count(const Dims3& d) {
    return static_cast<std::size_t>(d.x) * static_cast<std::size_t>(d.y) *
           static_cast<std::size_t>(d.z);
}

constexpr bool inside(const Index3& p, const Dims3& d) {
    return p.x >= 0 && p.y >= 0 && p.z >= 0 && p.x < d.x && p.y < d.y && p.z < d.z;
}

/// Raster order: x fastest, then y, then z.
constexpr std::size_t linear_index(const Index3& p, const Dims3& d) {
    return (static_cast<std::size_t>(p.z) * static_cast<std::size_t>(d.y) +
            static_cast<std::size_t>(p.y)) *
               static_cast<std::size_t>(d.x) +
           static_cast<std::size_t>(p.x);
}

constexpr Index3 from_linear(std::size_t i, const Dims3& d) {
    const auto dx = static_cast<std::size_t>(d.x);
    const auto dy = static_cast<std::size_t>(d.y);
    return Index3{static_cast<std::int64_t>(i % dx), static_cast<std::int64_t>((i / dx) % dy),
                  static_cast<std::int64_t>(i / (dx * dy))};
}

/// Axis-aligned box with inclusive corners.
struct Box3 {
    Index3 lo;
    Index3 hi;

    constexpr bool empty() const { return hi.x < lo.x || hi.y < lo.y || hi.z < lo.z; }
    constexpr Dims3 extent() const {
        return empty() ? Dims3{0, 0, 0}
                       : Dims3{hi.x - lo.x + 1, hi.y - lo.y + 1, hi.z - lo.z + 1};
    }
    constexpr std::size_t count() const { return voxel_count(extent()); }
    constexpr bool contains(const Index3& p) const {
        return p.x >= lo.x && p.y >= lo.y && p.z >= lo.z && p.x <= hi.x && p.y <= hi.y &&
               p.z <= hi.z;
    }
    friend constexpr bool operator==(const Box3&, const Box3&) = default;
};

constexpr Box3 full_box(const Dims3& d) { return Box3{{0, 0, 0}, {d.x - 1, d.y - 1, d.z - 1}}; }

Box3 intersect(const Box3& a, const Box3& b);

std::string to_string(const Index3& p);
std::string to_string(const Box3& b);

} // namespace alseg
