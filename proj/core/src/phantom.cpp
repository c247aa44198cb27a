#include "alseg/phantom.hpp"

#include "alseg/error.hpp"
#include "alseg/kv_document.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>

#include <fmt/format.h>

namespace alseg {

namespace {

double dot(const Vec3& a, const Vec3& b) { return a[0] * b[0] + a[1] * b[1] + a[2] * b[2]; }
Vec3 sub(const Vec3& a, const Vec3& b) { return {a[0] - b[0], a[1] - b[1], a[2] - b[2]}; }
double norm(const Vec3& a) { return std::sqrt(dot(a, a)); }

const char* kind_name(PrimitiveKind k) {
    switch (k) {
    case PrimitiveKind::Slab: return "slab";
    case PrimitiveKind::Cylinder: return "cylinder";
    case PrimitiveKind::Sphere: return "sphere";
    case PrimitiveKind::Box: return "box";
    case PrimitiveKind::Helix: return "helix";
    }
    return "?";
}

PrimitiveKind parse_kind(const std::string& s) {
    if (s == "slab") return PrimitiveKind::Slab;
    if (s == "cylinder") return PrimitiveKind::Cylinder;
    if (s == "sphere") return PrimitiveKind::Sphere;
    if (s == "box") return PrimitiveKind::Box;
    if (s == "helix") return PrimitiveKind::Helix;
    fail(ErrorCode::InvalidArgument, "unknown primitive '" + s + "'");
}

Vec3 parse_vec(const std::string& s) {
    const auto t = split_tokens(s, ",");
    if (t.size() != 3) {
        fail(ErrorCode::InvalidArgument, "expected x,y,z but got '" + s + "'");
    }
    return {parse_double(t[0]), parse_double(t[1]), parse_double(t[2])};
}

std::string vec_str(const Vec3& v) {
    return fmt::format("{},{},{}", format_double(v[0]), format_double(v[1]), format_double(v[2]));
}

Primitive parse_primitive(const std::string& line) {
    const auto tokens = split_tokens(line, " \t");
    if (tokens.empty()) {
        fail(ErrorCode::InvalidArgument, "empty primitive");
    }
    Primitive p;
    p.kind = parse_kind(tokens[0]);
    for (std::size_t i = 1; i < tokens.size(); ++i) {
        const auto eq = tokens[i].find('=');
        if (eq == std::string::npos) {
            fail(ErrorCode::InvalidArgument, "expected key=value in '" + tokens[i] + "'");
        }
        const auto key = tokens[i].substr(0, eq);
        const auto val = tokens[i].substr(eq + 1);
        if (key == "center" || key == "from" || key == "min") p.center = parse_vec(val);
        else if (key == "end" || key == "to" || key == "max") p.end = parse_vec(val);
        else if (key == "normal") p.normal = parse_vec(val);
        else if (key == "radius") p.radius = parse_double(val);
        else if (key == "thickness" || key == "tube") p.thickness = parse_double(val);
        else if (key == "pitch") p.pitch = parse_double(val);
        else if (key == "turns") p.turns = parse_double(val);
        else if (key == "value") p.value = parse_double(val);
        else fail(ErrorCode::InvalidArgument, "unknown primitive field '" + key + "'");
    }
    if (p.kind == PrimitiveKind::Slab) {
        const double n = norm(p.normal);
        if (n == 0.0) {
            fail(ErrorCode::InvalidArgument, "slab normal must be nonzero");
        }
        for (auto& c : p.normal) c /= n;
    }
    if (p.radius <= 0.0 || p.thickness <= 0.0 || p.pitch <= 0.0 || p.turns <= 0.0) {
        fail(ErrorCode::InvalidArgument, "primitive sizes must be positive");
    }
    return p;
}

std::string primitive_str(const Primitive& p) {
    std::string s = kind_name(p.kind);
    switch (p.kind) {
    case PrimitiveKind::Slab:
        s += fmt::format(" center={} normal={} thickness={}", vec_str(p.center), vec_str(p.normal),
                         format_double(p.thickness));
        break;
    case PrimitiveKind::Cylinder:
        s += fmt::format(" from={} to={} radius={}", vec_str(p.center), vec_str(p.end),
                         format_double(p.radius));
        break;
    case PrimitiveKind::Sphere:
        s += fmt::format(" center={} radius={}", vec_str(p.center), format_double(p.radius));
        break;
    case PrimitiveKind::Box:
        s += fmt::format(" min={} max={}", vec_str(p.center), vec_str(p.end));
        break;
    case PrimitiveKind::Helix:
        s += fmt::format(" center={} radius={} pitch={} turns={} tube={}", vec_str(p.center),
                         format_double(p.radius), format_double(p.pitch), format_double(p.turns),
                         format_double(p.thickness));
        break;
    }
    s += " value=" + format_double(p.value);
    return s;
}

// Inclusive voxel bounds that may contain the primitive, before clipping.
Box3 primitive_bounds(const Primitive& p, const Dims3& dims) {
    auto lo_hi = [](double lo, double hi) {
        return std::make_pair(static_cast<std::int64_t>(std::floor(lo)),
                              static_cast<std::int64_t>(std::ceil(hi)));
    };
    Vec3 lo{}, hi{};
    switch (p.kind) {
    case PrimitiveKind::Slab:
        return full_box(dims);
    case PrimitiveKind::Cylinder:
        for (int a = 0; a < 3; ++a) {
            lo[a] = std::min(p.center[a], p.end[a]) - p.radius;
            hi[a] = std::max(p.center[a], p.end[a]) + p.radius;
        }
        break;
    case PrimitiveKind::Sphere:
        for (int a = 0; a < 3; ++a) {
            lo[a] = p.center[a] - p.radius;
            hi[a] = p.center[a] + p.radius;
        }
        break;
    case PrimitiveKind::Box:
        for (int a = 0; a < 3; ++a) {
            lo[a] = std::min(p.center[a], p.end[a]);
            hi[a] = std::max(p.center[a], p.end[a]);
        }
        break;
    case PrimitiveKind::Helix:
        for (int a = 0; a < 2; ++a) {
            lo[a] = p.center[a] - p.radius - p.thickness;
            hi[a] = p.center[a] + p.radius + p.thickness;
        }
        lo[2] = p.center[2] - p.thickness;
        hi[2] = p.center[2] + p.pitch * p.turns + p.thickness;
        break;
    }
    Box3 b;
    for (int a = 0; a < 3; ++a) {
        auto [l, h] = lo_hi(lo[a], hi[a]);
        b.lo[a] = l;
        b.hi[a] = h;
    }
    return intersect(b, full_box(dims));
}

double helix_distance(const Primitive& p, const Vec3& q) {
    const double two_pi = 2.0 * std::numbers::pi;
    const double t_max = two_pi * p.turns;
    const double dz = q[2] - p.center[2];
    double t0 = std::max(0.0, two_pi * (dz - p.thickness) / p.pitch);
    double t1 = std::min(t_max, two_pi * (dz + p.thickness) / p.pitch);
    if (t0 > t1) {
        t0 = std::clamp(two_pi * dz / p.pitch, 0.0, t_max);
        t1 = t0;
    }
    const double speed = std::hypot(p.radius, p.pitch / two_pi);
    const double step = std::min(0.05 / speed, 0.05);
    double best = std::numeric_limits<double>::infinity();
    for (double t = t0;; t += step) {
        const double tt = std::min(t, t1);
        const Vec3 c{p.center[0] + p.radius * std::cos(tt), p.center[1] + p.radius * std::sin(tt),
                     p.center[2] + p.pitch * tt / two_pi};
        best = std::min(best, norm(sub(q, c)));
        if (tt >= t1) {
            break;
        }
    }
    return best;
}

// Gaussian via Box-Muller on raw mt19937_64 output, portable across standard libraries.
class PortableNormal {
public:
    explicit PortableNormal(std::uint64_t seed) : rng_(seed) {}
    double operator()() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        const double u1 = (static_cast<double>(rng_() >> 11) + 1.0) * 0x1.0p-53;
        const double u2 = static_cast<double>(rng_() >> 11) * 0x1.0p-53;
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double th = 2.0 * std::numbers::pi * u2;
        spare_ = r * std::sin(th);
        has_spare_ = true;
        return r * std::cos(th);
    }

private:
    std::mt19937_64 rng_;
    double spare_ = 0.0;
    bool has_spare_ = false;
};

} // namespace

bool primitive_contains(const Primitive& p, const Vec3& q) {
    switch (p.kind) {
    case PrimitiveKind::Slab:
        return std::abs(dot(sub(q, p.center), p.normal)) <= 0.5 * p.thickness;
    case PrimitiveKind::Cylinder: {
        const Vec3 axis = sub(p.end, p.center);
        const double len2 = dot(axis, axis);
        double t = len2 > 0.0 ? dot(sub(q, p.center), axis) / len2 : 0.0;
        t = std::clamp(t, 0.0, 1.0);
        const Vec3 c{p.center[0] + t * axis[0], p.center[1] + t * axis[1], p.center[2] + t * axis[2]};
        return norm(sub(q, c)) <= p.radius;
    }
    case PrimitiveKind::Sphere:
        return norm(sub(q, p.center)) <= p.radius;
    case PrimitiveKind::Box:
        for (int a = 0; a < 3; ++a) {
            if (q[a] < std::min(p.center[a], p.end[a]) || q[a] > std::max(p.center[a], p.end[a])) {
                return false;
            }
        }
        return true;
    case PrimitiveKind::Helix:
        return helix_distance(p, q) <= p.thickness;
    }
    return false;
}

PhantomSpec PhantomSpec::parse(const std::string& text) {
    const auto doc = KvDocument::parse(text);
    PhantomSpec spec;
    const auto dims = split_tokens(doc.get("dims"));
    if (dims.size() != 3) {
        fail(ErrorCode::InvalidArgument, "dims needs three values");
    }
    spec.dims = Dims3{parse_int(dims[0]), parse_int(dims[1]), parse_int(dims[2])};
    if (spec.dims.x <= 0 || spec.dims.y <= 0 || spec.dims.z <= 0) {
        fail(ErrorCode::InvalidArgument, "dims must be positive");
    }
    spec.dtype = parse_dtype(doc.get_or("dtype", "u8"));
    spec.background = doc.get_double_or("background", 0.0);
    spec.noise_sigma = doc.get_double_or("noise", 0.0);
    spec.noise_seed = static_cast<std::uint64_t>(doc.get_int_or("seed", 1));
    for (const auto& line : doc.all("primitive")) {
        spec.primitives.push_back(parse_primitive(line));
    }
    if (spec.noise_sigma < 0.0 || spec.background < 0.0) {
        fail(ErrorCode::InvalidArgument, "noise and background must be nonnegative");
    }
    return spec;
}

PhantomSpec PhantomSpec::read_file(const std::string& path) {
    return parse(KvDocument::read_file(path).to_string());
}

std::string PhantomSpec::to_string() const {
    KvDocument doc;
    doc.add("dims", fmt::format("{} {} {}", dims.x, dims.y, dims.z));
    doc.add("dtype", std::string(alseg::to_string(dtype)));
    doc.add("background", format_double(background));
    doc.add("noise", format_double(noise_sigma));
    doc.add("seed", std::to_string(noise_seed));
    for (const auto& p : primitives) {
        doc.add("primitive", primitive_str(p));
    }
    return doc.to_string();
}

Phantom make_phantom(const PhantomSpec& spec) {
    if (spec.primitives.size() > 255) {
        fail(ErrorCode::InvalidArgument, "at most 255 primitives");
    }
    Phantom out{DenseVolume(spec.dims, spec.dtype), DenseVolume(spec.dims, DType::U8)};
    std::vector<double> values(voxel_count(spec.dims), spec.background);

    for (std::size_t id = 0; id < spec.primitives.size(); ++id) {
        const auto& prim = spec.primitives[id];
        const Box3 b = primitive_bounds(prim, spec.dims);
        std::size_t hits = 0;
        if (!b.empty()) {
            for (std::int64_t z = b.lo.z; z <= b.hi.z; ++z) {
                for (std::int64_t y = b.lo.y; y <= b.hi.y; ++y) {
                    for (std::int64_t x = b.lo.x; x <= b.hi.x; ++x) {
                        const Vec3 q{static_cast<double>(x), static_cast<double>(y),
                                     static_cast<double>(z)};
                        if (primitive_contains(prim, q)) {
                            const auto lin = linear_index({x, y, z}, spec.dims);
                            values[lin] = prim.value;
                            out.labels.set(lin, static_cast<double>(id + 1));
                            ++hits;
                        }
                    }
                }
            }
        }
        if (hits == 0) {
            fail(ErrorCode::OutOfRange,
                 fmt::format("primitive {} ({}) lies outside the volume", id, kind_name(prim.kind)));
        }
    }

    if (spec.noise_sigma > 0.0) {
        PortableNormal normal(spec.noise_seed);
        for (auto& v : values) {
            v += spec.noise_sigma * normal();
        }
    }
    for (std::size_t i = 0; i < values.size(); ++i) {
        out.volume.set(i, std::max(values[i], 0.0));
    }
    return out;
}

} // namespace alseg
