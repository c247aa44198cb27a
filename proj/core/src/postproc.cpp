#include "alseg/postproc.hpp"

#include "alseg/error.hpp"

#include <algorithm>
#include <numeric>

#include <fmt/format.h>

namespace alseg {

std::size_t BinaryVolume::count() const {
    return static_cast<std::size_t>(std::count(bits.begin(), bits.end(), std::uint8_t{1}));
}

namespace {

// Visits a source plane by plane so file-backed grids are never fully materialized.
template <typename Fn>
void for_each_plane(const GridSource& source, Fn&& fn) {
    const Dims3 d = source.dims();
    std::vector<double> plane(static_cast<std::size_t>(d.x * d.y));
    for (std::int64_t z = 0; z < d.z; ++z) {
        source.read_box(Box3{{0, 0, z}, {d.x - 1, d.y - 1, z}}, plane);
        fn(z, std::span<const double>(plane));
    }
}

} // namespace

BinaryVolume nonzero_mask(const GridSource& source) {
    BinaryVolume out(source.dims());
    const auto plane_size = static_cast<std::size_t>(out.dims.x * out.dims.y);
    for_each_plane(source, [&](std::int64_t z, std::span<const double> plane) {
        for (std::size_t i = 0; i < plane.size(); ++i) {
            out.bits[static_cast<std::size_t>(z) * plane_size + i] = plane[i] != 0.0 ? 1 : 0;
        }
    });
    return out;
}

DenseVolume to_volume(const BinaryVolume& mask) {
    DenseVolume v(mask.dims, DType::U8);
    std::copy(mask.bits.begin(), mask.bits.end(), v.bytes().begin());
    return v;
}

BinaryVolume threshold(const GridSource& confidence, double t) {
    if (!(t >= 0.0 && t <= 100.0)) {
        fail(ErrorCode::InvalidArgument, fmt::format("threshold {} outside [0, 100]", t));
    }
    BinaryVolume out(confidence.dims());
    const auto plane_size = static_cast<std::size_t>(out.dims.x * out.dims.y);
    for_each_plane(confidence, [&](std::int64_t z, std::span<const double> plane) {
        for (std::size_t i = 0; i < plane.size(); ++i) {
            out.bits[static_cast<std::size_t>(z) * plane_size + i] = plane[i] >= t ? 1 : 0;
        }
    });
    return out;
}

BinaryVolume speckle_removal(const BinaryVolume& mask, int k2, int eta) {
    if (k2 < 1 || k2 % 2 == 0) {
        fail(ErrorCode::InvalidArgument, "K2 must be a positive odd number");
    }
    if (eta < 0 || static_cast<long long>(eta) >= static_cast<long long>(k2) * k2 * k2) {
        fail(ErrorCode::InvalidArgument, "eta must lie in [0, K2^3)");
    }
    const Dims3 d = mask.dims;
    if (eta == 0) {
        return mask;
    }
    // Summed-volume table with a zero border: S(x+1, y+1, z+1) = ones in [0..x]x[0..y]x[0..z].
    const std::size_t sx = static_cast<std::size_t>(d.x) + 1, sy = static_cast<std::size_t>(d.y) + 1;
    std::vector<std::uint32_t> S(sx * sy * (static_cast<std::size_t>(d.z) + 1), 0);
    auto at = [&](std::int64_t x, std::int64_t y, std::int64_t z) -> std::uint32_t& {
        return S[(static_cast<std::size_t>(z) * sy + static_cast<std::size_t>(y)) * sx +
                 static_cast<std::size_t>(x)];
    };
    for (std::int64_t z = 0; z < d.z; ++z) {
        for (std::int64_t y = 0; y < d.y; ++y) {
            for (std::int64_t x = 0; x < d.x; ++x) {
                at(x + 1, y + 1, z + 1) = mask.bits[linear_index({x, y, z}, d)] + at(x, y + 1, z + 1) +
                                          at(x + 1, y, z + 1) + at(x + 1, y + 1, z) - at(x, y, z + 1) -
                                          at(x, y + 1, z) - at(x + 1, y, z) + at(x, y, z);
            }
        }
    }
    const int r = k2 / 2;
    BinaryVolume out(d);
    for (std::int64_t z = 0; z < d.z; ++z) {
        for (std::int64_t y = 0; y < d.y; ++y) {
            for (std::int64_t x = 0; x < d.x; ++x) {
                const std::size_t li = linear_index({x, y, z}, d);
                if (!mask.bits[li]) {
                    continue;
                }
                const auto x0 = std::max<std::int64_t>(0, x - r), x1 = std::min(d.x - 1, x + r) + 1;
                const auto y0 = std::max<std::int64_t>(0, y - r), y1 = std::min(d.y - 1, y + r) + 1;
                const auto z0 = std::max<std::int64_t>(0, z - r), z1 = std::min(d.z - 1, z + r) + 1;
                const std::int64_t ones = static_cast<std::int64_t>(at(x1, y1, z1)) - at(x0, y1, z1) -
                                          at(x1, y0, z1) - at(x1, y1, z0) + at(x0, y0, z1) +
                                          at(x0, y1, z0) + at(x1, y0, z0) - at(x0, y0, z0);
                out.bits[li] = ones >= eta ? 1 : 0;
            }
        }
    }
    return out;
}

LabelVolume connected_components(const BinaryVolume& mask, int connectivity) {
    if (connectivity != 6 && connectivity != 26) {
        fail(ErrorCode::InvalidArgument, "connectivity must be 6 or 26");
    }
    std::vector<Index3> offsets;
    for (int dz = -1; dz <= 1; ++dz) {
        for (int dy = -1; dy <= 1; ++dy) {
            for (int dx = -1; dx <= 1; ++dx) {
                const int manhattan = std::abs(dx) + std::abs(dy) + std::abs(dz);
                if (manhattan == 0 || (connectivity == 6 && manhattan != 1)) {
                    continue;
                }
                offsets.push_back({dx, dy, dz});
            }
        }
    }
    const Dims3 d = mask.dims;
    const std::size_t n = mask.bits.size();
    std::vector<std::uint32_t> provisional(n, 0);
    struct Comp {
        std::size_t size;
        std::size_t first;
        Box3 box;
    };
    std::vector<Comp> comps;
    std::vector<std::size_t> stack;
    for (std::size_t start = 0; start < n; ++start) {
        if (!mask.bits[start] || provisional[start]) {
            continue;
        }
        const auto id = static_cast<std::uint32_t>(comps.size() + 1);
        const Index3 sp = from_linear(start, d);
        Comp c{0, start, Box3{sp, sp}};
        provisional[start] = id;
        stack.push_back(start);
        while (!stack.empty()) {
            const std::size_t cur = stack.back();
            stack.pop_back();
            ++c.size;
            const Index3 p = from_linear(cur, d);
            for (int a = 0; a < 3; ++a) {
                c.box.lo[a] = std::min(c.box.lo[a], p[a]);
                c.box.hi[a] = std::max(c.box.hi[a], p[a]);
            }
            for (const auto& o : offsets) {
                const Index3 q{p.x + o.x, p.y + o.y, p.z + o.z};
                if (!inside(q, d)) {
                    continue;
                }
                const std::size_t qi = linear_index(q, d);
                if (mask.bits[qi] && !provisional[qi]) {
                    provisional[qi] = id;
                    stack.push_back(qi);
                }
            }
        }
        comps.push_back(c);
    }

    std::vector<std::size_t> order(comps.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        if (comps[a].size != comps[b].size) return comps[a].size > comps[b].size;
        return comps[a].first < comps[b].first;
    });
    std::vector<std::uint32_t> relabel(comps.size() + 1, 0);
    LabelVolume out;
    out.dims = d;
    for (std::size_t rank = 0; rank < order.size(); ++rank) {
        relabel[order[rank] + 1] = static_cast<std::uint32_t>(rank + 1);
        out.sizes.push_back(comps[order[rank]].size);
        out.boxes.push_back(comps[order[rank]].box);
    }
    out.labels.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        out.labels[i] = relabel[provisional[i]];
    }
    return out;
}

SelectionRule SelectionRule::parse(const std::string& text) {
    const auto colon = text.find(':');
    if (colon == std::string::npos) {
        fail(ErrorCode::InvalidArgument, "selection rule must look like kind:argument");
    }
    const std::string kind = text.substr(0, colon);
    const std::string arg = text.substr(colon + 1);
    SelectionRule r;
    if (kind == "largest") {
        r.kind = Kind::Largest;
        r.count = static_cast<std::size_t>(parse_int(arg));
    } else if (kind == "size") {
        r.kind = Kind::MinSize;
        r.min_size = static_cast<std::size_t>(parse_int(arg));
    } else if (kind == "contains") {
        r.kind = Kind::Contains;
        for (const auto& item : split_tokens(arg, ";")) {
            const auto c = split_tokens(item, ", \t");
            if (c.size() != 3) {
                fail(ErrorCode::InvalidArgument, "contains positions need three coordinates");
            }
            r.positions.push_back({parse_int(c[0]), parse_int(c[1]), parse_int(c[2])});
        }
    } else {
        fail(ErrorCode::InvalidArgument, "unknown selection rule '" + kind + "'");
    }
    return r;
}

std::string SelectionRule::to_string() const {
    switch (kind) {
    case Kind::Largest: return fmt::format("largest:{}", count);
    case Kind::MinSize: return fmt::format("size:{}", min_size);
    case Kind::Contains: {
        std::string s = "contains:";
        for (std::size_t i = 0; i < positions.size(); ++i) {
            if (i) s += ';';
            s += fmt::format("{},{},{}", positions[i].x, positions[i].y, positions[i].z);
        }
        return s;
    }
    }
    return {};
}

BinaryVolume select_components(const LabelVolume& labels, const SelectionRule& rule) {
    std::vector<std::uint8_t> keep(labels.count() + 1, 0);
    switch (rule.kind) {
    case SelectionRule::Kind::Largest:
        for (std::size_t l = 1; l <= std::min(rule.count, labels.count()); ++l) keep[l] = 1;
        break;
    case SelectionRule::Kind::MinSize:
        for (std::size_t l = 1; l <= labels.count(); ++l) keep[l] = labels.sizes[l - 1] >= rule.min_size;
        break;
    case SelectionRule::Kind::Contains:
        for (const auto& p : rule.positions) {
            if (!inside(p, labels.dims)) {
                fail(ErrorCode::OutOfRange, "selection position " + alseg::to_string(p) + " outside the volume");
            }
            keep[labels.labels[linear_index(p, labels.dims)]] = 1;
        }
        keep[0] = 0;
        break;
    }
    BinaryVolume out(labels.dims);
    for (std::size_t i = 0; i < out.bits.size(); ++i) {
        out.bits[i] = keep[labels.labels[i]];
    }
    return out;
}

MetricsReport metrics(const BinaryVolume& seg, const BinaryVolume& gt) {
    if (seg.dims != gt.dims) {
        fail(ErrorCode::SizeMismatch, "segmentation and ground truth differ in dims");
    }
    MetricsReport m;
    for (std::size_t i = 0; i < seg.bits.size(); ++i) {
        const bool s = seg.bits[i], g = gt.bits[i];
        if (s && g) ++m.tp;
        else if (s) ++m.fp;
        else if (g) ++m.fn;
        else ++m.tn;
    }
    const double tp = static_cast<double>(m.tp), fp = static_cast<double>(m.fp),
                 fn = static_cast<double>(m.fn);
    if (m.tp + m.fp + m.fn == 0) {
        m.iou = m.precision = m.recall = m.f1 = 1.0;
        return m;
    }
    m.iou = tp / (tp + fp + fn);
    m.precision = m.tp + m.fp > 0 ? tp / (tp + fp) : 0.0;
    m.recall = m.tp + m.fn > 0 ? tp / (tp + fn) : 0.0;
    m.f1 = 2.0 * tp / (2.0 * tp + fp + fn);
    return m;
}

KvDocument MetricsReport::to_kv(const std::string& scan) const {
    KvDocument doc;
    if (!scan.empty()) doc.add("scan", scan);
    doc.add("iou", format_double(iou));
    doc.add("precision", format_double(precision));
    doc.add("recall", format_double(recall));
    doc.add("f1", format_double(f1));
    doc.add("tp", std::to_string(tp));
    doc.add("fp", std::to_string(fp));
    doc.add("fn", std::to_string(fn));
    doc.add("tn", std::to_string(tn));
    return doc;
}

MetricsReport MetricsReport::from_kv(const KvDocument& doc) {
    MetricsReport m;
    m.iou = doc.get_double("iou");
    m.precision = doc.get_double("precision");
    m.recall = doc.get_double("recall");
    m.f1 = doc.get_double("f1");
    m.tp = static_cast<std::uint64_t>(doc.get_int_or("tp", 0));
    m.fp = static_cast<std::uint64_t>(doc.get_int_or("fp", 0));
    m.fn = static_cast<std::uint64_t>(doc.get_int_or("fn", 0));
    m.tn = static_cast<std::uint64_t>(doc.get_int_or("tn", 0));
    return m;
}

std::string MetricsReport::csv_header() { return "scan,IoU,precision,recall,F1"; }

std::string MetricsReport::csv_row(const std::string& scan) const {
    return fmt::format("{},{},{},{},{}", scan, format_double(iou), format_double(precision),
                       format_double(recall), format_double(f1));
}

MetricsReport MetricsReport::from_csv_row(const std::string& row, std::string* scan) {
    const auto cells = split_tokens(row, ",");
    if (cells.size() != 5) {
        fail(ErrorCode::InvalidArgument, "metrics row needs five columns");
    }
    MetricsReport m;
    if (scan) *scan = cells[0];
    m.iou = parse_double(cells[1]);
    m.precision = parse_double(cells[2]);
    m.recall = parse_double(cells[3]);
    m.f1 = parse_double(cells[4]);
    return m;
}

} // namespace alseg
