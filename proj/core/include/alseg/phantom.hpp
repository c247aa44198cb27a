#pragma once

#include "alseg/volume.hpp"

#include <array>
#include <cstdint>
#include <string>
#include <vector>

namespace alseg {

using Vec3 = std::array<double, 3>;

enum class PrimitiveKind { Slab, Cylinder, Sphere, Box, Helix };

/// One rasterized shape. Fields not used by a kind are ignored.
///   slab:     center, normal, thickness
///   cylinder: center (segment start), end, radius
///   sphere:   center, radius
///   box:      center (min corner), end (max corner), inclusive
///   helix:    center, radius (coil), pitch, turns, thickness (tube radius); axis along z
struct Primitive {
    PrimitiveKind kind = PrimitiveKind::Sphere;
    Vec3 center{0, 0, 0};
    Vec3 end{0, 0, 0};
    Vec3 normal{0, 0, 1};
    double radius = 1.0;
    double thickness = 1.0;
    double pitch = 1.0;
    double turns = 1.0;
    double value = 255.0;
};

struct PhantomSpec {
    Dims3 dims{32, 32, 32};
    DType dtype = DType::U8;
    double background = 0.0;
    double noise_sigma = 0.0;
    std::uint64_t noise_seed = 1;
    std::vector<Primitive> primitives;

    static PhantomSpec parse(const std::string& text);
    static PhantomSpec read_file(const std::string& path);
    std::string to_string() const;
};

struct Phantom {
    DenseVolume volume;
    /// Per-voxel primitive id (1-based, later primitives overwrite earlier ones), 0 = background.
    DenseVolume labels;
};

/// Deterministic rasterization; throws OutOfRange if a primitive covers no voxel.
Phantom make_phantom(const PhantomSpec& spec);

/// True when voxel center `p` lies inside the primitive.
bool primitive_contains(const Primitive& prim, const Vec3& p);

} // namespace alseg
