#pragma once

#include "alseg/grid.hpp"
#include "alseg/kv_document.hpp"
#include "alseg/volume.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace alseg {

/// One byte per voxel, 0 or 1, raster order.
struct BinaryVolume {
    Dims3 dims{0, 0, 0};
    std::vector<std::uint8_t> bits;

    BinaryVolume() = default;
    explicit BinaryVolume(Dims3 d) : dims(d), bits(voxel_count(d), 0) {}

    std::size_t count() const;
    bool at(const Index3& p) const { return bits[linear_index(p, dims)] != 0; }
    void set(const Index3& p, bool v) { bits[linear_index(p, dims)] = v ? 1 : 0; }

    friend bool operator==(const BinaryVolume&, const BinaryVolume&) = default;
};

/// Nonzero voxels of any grid.
BinaryVolume nonzero_mask(const GridSource& source);
/// u8 volume holding 0/1.
DenseVolume to_volume(const BinaryVolume& mask);

/// value >= t for t in [0, 100]; throws InvalidArgument otherwise.
BinaryVolume threshold(const GridSource& confidence, double t);

/// Clears foreground voxels with fewer than `eta` foreground voxels in the K2-cube
/// around them (the voxel itself included, out-of-volume positions ignored). One pass.
BinaryVolume speckle_removal(const BinaryVolume& mask, int k2, int eta);

struct LabelVolume {
    Dims3 dims{0, 0, 0};
    std::vector<std::uint32_t> labels; // 0 = background, 1..L by decreasing size
    std::vector<std::size_t> sizes;    // sizes[l - 1] for label l
    std::vector<Box3> boxes;           // bounding box per label

    std::size_t count() const { return sizes.size(); }
};

/// Canonical labeling: larger components first, ties by the smallest linear index.
LabelVolume connected_components(const BinaryVolume& mask, int connectivity = 26);

struct SelectionRule {
    enum class Kind { Largest, MinSize, Contains };
    Kind kind = Kind::Largest;
    std::size_t count = 1;         // Largest
    std::size_t min_size = 1;      // MinSize
    std::vector<Index3> positions; // Contains

    /// `largest:K`, `size:S` or `contains:x,y,z;x,y,z`.
    static SelectionRule parse(const std::string& text);
    std::string to_string() const;
};

/// Union of the selected components. Throws OutOfRange for positions outside the volume.
BinaryVolume select_components(const LabelVolume& labels, const SelectionRule& rule);

struct MetricsReport {
    std::uint64_t tp = 0, fp = 0, fn = 0, tn = 0;
    double iou = 0.0;
    double precision = 0.0;
    double recall = 0.0;
    double f1 = 0.0;

    KvDocument to_kv(const std::string& scan = "") const;
    static MetricsReport from_kv(const KvDocument& doc);

    static std::string csv_header();
    /// scan, IoU, precision, recall, F1.
    std::string csv_row(const std::string& scan) const;
    static MetricsReport from_csv_row(const std::string& row, std::string* scan = nullptr);
};

/// Throws SizeMismatch on differing dims. Two empty masks score 1, one empty side 0.
MetricsReport metrics(const BinaryVolume& seg, const BinaryVolume& gt);

} // namespace alseg
