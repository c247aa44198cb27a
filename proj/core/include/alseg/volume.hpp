#pragma once

#include "alseg/grid.hpp"
#include "alseg/kv_document.hpp"

#include <array>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace alseg {

enum class DType { U8, U16, F32 };
enum class Endian { Little, Big };

std::size_t dtype_size(DType dtype);
std::string_view to_string(DType dtype);
DType parse_dtype(std::string_view name);

/// Sidecar metadata for a raw volume file.
struct VolumeDescriptor {
    Dims3 dims;
    DType dtype = DType::U8;
    Endian endian = Endian::Little;
    std::array<double, 3> spacing{1.0, 1.0, 1.0};
    std::string data_file; // relative to the descriptor's directory

    std::size_t raw_bytes() const { return voxel_count(dims) * dtype_size(dtype); }

    KvDocument to_kv() const;
    static VolumeDescriptor from_kv(const KvDocument& doc);
};

/// Read-only scalar grid. Implementations must tolerate concurrent readers.
class GridSource {
public:
    virtual ~GridSource() = default;

    virtual Dims3 dims() const = 0;

    /// Fills `out` (raster order, x fastest) with the values inside `box`.
    /// The box must be nonempty and lie inside dims().
    virtual void read_box(const Box3& box, std::span<double> out) const = 0;

    /// Bounds-checked single voxel read; throws OutOfRange.
    double at(const Index3& p) const;

protected:
    void check_box(const Box3& box, std::size_t out_size) const;
};

/// Destination for voxel values; concurrent writes to disjoint boxes are safe.
class VolumeSink {
public:
    virtual ~VolumeSink() = default;
    virtual Dims3 dims() const = 0;
    virtual void write_box(const Box3& box, std::span<const double> values) = 0;
};

/// In-memory volume stored in its native dtype.
class DenseVolume final : public GridSource, public VolumeSink {
public:
    DenseVolume() = default;
    DenseVolume(Dims3 dims, DType dtype, std::array<double, 3> spacing = {1.0, 1.0, 1.0});

    Dims3 dims() const override { return dims_; }
    DType dtype() const { return dtype_; }
    const std::array<double, 3>& spacing() const { return spacing_; }

    void read_box(const Box3& box, std::span<double> out) const override;
    void write_box(const Box3& box, std::span<const double> values) override;

    double get(std::size_t linear) const;
    /// Stores `value` converted to the dtype (rounded and clamped for integer types).
    void set(std::size_t linear, double value);
    void set(const Index3& p, double value);
    void fill(double value);

    std::span<const std::uint8_t> bytes() const { return bytes_; }
    std::span<std::uint8_t> bytes() { return bytes_; }

private:
    Dims3 dims_{0, 0, 0};
    DType dtype_ = DType::U8;
    std::array<double, 3> spacing_{1.0, 1.0, 1.0};
    std::vector<std::uint8_t> bytes_;
};

struct LoadOptions {
    /// Volumes whose raw size exceeds this are opened file-backed.
    std::size_t memory_budget_bytes = std::size_t{1} << 30;
    bool force_file_backed = false;
    int block_size = 64;
    std::size_t cache_bytes = std::size_t{256} << 20;
};

/// Shared read-only handle to a loaded volume, either dense or file-backed.
class Volume final : public GridSource {
public:
    Volume() = default;
    explicit Volume(DenseVolume dense);

    Dims3 dims() const override { return descriptor_.dims; }
    DType dtype() const { return descriptor_.dtype; }
    const VolumeDescriptor& descriptor() const { return descriptor_; }
    bool file_backed() const { return file_backed_; }

    void read_box(const Box3& box, std::span<double> out) const override;

    /// Bytes currently held by the block cache (0 for dense volumes).
    std::size_t cached_bytes() const;

    friend Volume load_volume(const std::string&, const VolumeDescriptor&, const LoadOptions&);

private:
    VolumeDescriptor descriptor_;
    bool file_backed_ = false;
    std::shared_ptr<const GridSource> impl_;
    std::function<std::size_t()> cache_probe_;
};

/// Opens `raw_path` using `meta`. Throws SizeMismatch / Io.
Volume load_volume(const std::string& raw_path, const VolumeDescriptor& meta,
                   const LoadOptions& options = {});
/// Opens a volume from its descriptor file; the raw path is resolved relative to it.
Volume load_volume(const std::string& descriptor_path, const LoadOptions& options = {});

VolumeDescriptor read_descriptor(const std::string& descriptor_path);

/// Writes `<stem>.raw` next to the descriptor; both appear atomically (temp + rename).
void save_volume(const GridSource& source, DType dtype, const std::string& descriptor_path,
                 std::array<double, 3> spacing = {1.0, 1.0, 1.0});

/// Streams boxes straight into a little-endian raw file plus descriptor.
/// Call commit() to publish; destroying an uncommitted writer removes the temp file.
class RawFileWriter final : public VolumeSink {
public:
    RawFileWriter(const std::string& descriptor_path, Dims3 dims, DType dtype,
                  std::array<double, 3> spacing = {1.0, 1.0, 1.0});
    ~RawFileWriter() override;
    RawFileWriter(const RawFileWriter&) = delete;
    RawFileWriter& operator=(const RawFileWriter&) = delete;

    Dims3 dims() const override { return descriptor_.dims; }
    void write_box(const Box3& box, std::span<const double> values) override;
    void commit();

private:
    std::string descriptor_path_;
    std::string raw_path_;
    std::string tmp_path_;
    VolumeDescriptor descriptor_;
    int fd_ = -1;
    bool committed_ = false;
};

/// K×K×K neighbourhood around `center`, values in raster order (x fastest).
struct LocalEnvironment {
    Index3 center;
    int size = 0;
    std::vector<double> values;

    double operator()(int x, int y, int z) const {
        return values[(static_cast<std::size_t>(z) * size + y) * size + x];
    }
    int radius() const { return size / 2; }
};

void check_environment_size(int K);

/// Returns nullopt when any part of the cube falls outside the grid.
std::optional<LocalEnvironment> extract_environment(const GridSource& source, const Index3& center,
                                                    int K);

/// Box of all centers with a full K-environment (empty when none fit).
Box3 interior_box(const Dims3& dims, int K);

/// Positions with full environments, restricted to `region` when given, in raster order.
std::vector<Index3> iterate_positions(const Dims3& dims, const std::optional<Box3>& region, int K);

/// Coarse-level view computed on the fly by averaging covered source voxels.
class MultiresView final : public GridSource {
public:
    /// `source_level` is the level of `source`; `level` must lie in [1, source_level].
    MultiresView(std::shared_ptr<const GridSource> source, int level, int source_level);

    Dims3 dims() const override { return dims_; }
    int level() const { return level_; }
    int source_level() const { return source_level_; }
    std::int64_t factor() const { return factor_; }
    const GridSource& source() const { return *source_; }

    void read_box(const Box3& box, std::span<double> out) const override;

private:
    std::shared_ptr<const GridSource> source_;
    int level_;
    int source_level_;
    std::int64_t factor_;
    Dims3 dims_;
};

Dims3 level_dims(const Dims3& fine_dims, int level, int source_level);

/// Fine positions covered by coarse cell `alpha`, clipped to `dims`.
std::vector<Index3> covered_set(const Index3& alpha, int level, int source_level, const Dims3& dims);

/// Mean of the covered source voxels. Throws OutOfRange for positions outside the view.
double downsample_value(const MultiresView& view, const Index3& alpha);

} // namespace alseg
