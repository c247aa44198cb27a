#include "alseg/volume.hpp"

#include "alseg/error.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <limits>
#include <list>
#include <mutex>
#include <unordered_map>

#include <fcntl.h>
#include <sys/stat.h>
#include <unistd.h>

#include <fmt/format.h>

namespace alseg {

namespace fs = std::filesystem;

std::size_t dtype_size(DType dtype) {
    switch (dtype) {
    case DType::U8: return 1;
    case DType::U16: return 2;
    case DType::F32: return 4;
    }
    return 0;
}

std::string_view to_string(DType dtype) {
    switch (dtype) {
    case DType::U8: return "u8";
    case DType::U16: return "u16";
    case DType::F32: return "f32";
    }
    return "?";
}

DType parse_dtype(std::string_view name) {
    if (name == "u8") return DType::U8;
    if (name == "u16") return DType::U16;
    if (name == "f32") return DType::F32;
    fail(ErrorCode::UnknownDType, "unknown dtype '" + std::string(name) + "'");
}

namespace {

bool host_is_little() { return std::endian::native == std::endian::little; }

double decode_one(const std::uint8_t* src, DType dtype, bool swap) {
    switch (dtype) {
    case DType::U8: return src[0];
    case DType::U16: {
        std::uint16_t v;
        std::memcpy(&v, src, 2);
        if (swap) v = static_cast<std::uint16_t>((v >> 8) | (v << 8));
        return v;
    }
    case DType::F32: {
        std::uint32_t bits;
        std::memcpy(&bits, src, 4);
        if (swap) bits = __builtin_bswap32(bits);
        float f;
        std::memcpy(&f, &bits, 4);
        return f;
    }
    }
    return 0.0;
}

void encode_one(double value, DType dtype, std::uint8_t* dst) {
    switch (dtype) {
    case DType::U8: {
        const double c = std::clamp(std::nearbyint(value), 0.0, 255.0);
        dst[0] = static_cast<std::uint8_t>(c);
        return;
    }
    case DType::U16: {
        const double c = std::clamp(std::nearbyint(value), 0.0, 65535.0);
        auto v = static_cast<std::uint16_t>(c);
        if (!host_is_little()) v = static_cast<std::uint16_t>((v >> 8) | (v << 8));
        std::memcpy(dst, &v, 2);
        return;
    }
    case DType::F32: {
        const auto f = static_cast<float>(value);
        std::uint32_t bits;
        std::memcpy(&bits, &f, 4);
        if (!host_is_little()) bits = __builtin_bswap32(bits);
        std::memcpy(dst, &bits, 4);
        return;
    }
    }
}

void check_value(double v) {
    if (!std::isfinite(v) || v < 0.0) {
        fail(ErrorCode::InvalidArgument, fmt::format("voxel value {} is not finite and nonnegative", v));
    }
}

// File-backed volume with an LRU cache of decoded B^3 blocks.
class BlockFileStore final : public GridSource {
public:
    BlockFileStore(const std::string& path, VolumeDescriptor desc, int block_size,
                   std::size_t cache_bytes)
        : desc_(std::move(desc)), block_(block_size), budget_(cache_bytes) {
        fd_ = ::open(path.c_str(), O_RDONLY | O_CLOEXEC);
        if (fd_ < 0) {
            fail(ErrorCode::Io, "cannot open " + path);
        }
        nblocks_ = Dims3{(desc_.dims.x + block_ - 1) / block_, (desc_.dims.y + block_ - 1) / block_,
                         (desc_.dims.z + block_ - 1) / block_};
    }
    ~BlockFileStore() override {
        if (fd_ >= 0) ::close(fd_);
    }
    BlockFileStore(const BlockFileStore&) = delete;
    BlockFileStore& operator=(const BlockFileStore&) = delete;

    Dims3 dims() const override { return desc_.dims; }

    void read_box(const Box3& box, std::span<double> out) const override {
        check_box(box, out.size());
        const Dims3 ext = box.extent();
        for (std::int64_t bz = box.lo.z / block_; bz <= box.hi.z / block_; ++bz) {
            for (std::int64_t by = box.lo.y / block_; by <= box.hi.y / block_; ++by) {
                for (std::int64_t bx = box.lo.x / block_; bx <= box.hi.x / block_; ++bx) {
                    const Index3 bidx{bx, by, bz};
                    const auto blk = block(bidx);
                    const Box3 bbox = block_box(bidx);
                    const Box3 part = intersect(bbox, box);
                    const Dims3 bext = bbox.extent();
                    const auto row_len = static_cast<std::size_t>(part.hi.x - part.lo.x + 1);
                    for (std::int64_t z = part.lo.z; z <= part.hi.z; ++z) {
                        for (std::int64_t y = part.lo.y; y <= part.hi.y; ++y) {
                            const float* src =
                                blk->data() + linear_index({part.lo.x - bbox.lo.x, y - bbox.lo.y,
                                                            z - bbox.lo.z},
                                                           bext);
                            double* dst = out.data() + linear_index({part.lo.x - box.lo.x,
                                                                     y - box.lo.y, z - box.lo.z},
                                                                    ext);
                            std::copy(src, src + row_len, dst);
                        }
                    }
                }
            }
        }
    }

    std::size_t cached_bytes() const {
        std::lock_guard lock(mu_);
        return bytes_;
    }

private:
    using Block = std::vector<float>;

    Box3 block_box(const Index3& b) const {
        return intersect(Box3{{b.x * block_, b.y * block_, b.z * block_},
                              {b.x * block_ + block_ - 1, b.y * block_ + block_ - 1,
                               b.z * block_ + block_ - 1}},
                         full_box(desc_.dims));
    }

    std::shared_ptr<const Block> block(const Index3& b) const {
        const std::size_t key = linear_index(b, nblocks_);
        {
            std::lock_guard lock(mu_);
            auto it = map_.find(key);
            if (it != map_.end()) {
                lru_.splice(lru_.begin(), lru_, it->second.second);
                return it->second.first;
            }
        }
        auto loaded = load(b);
        std::lock_guard lock(mu_);
        auto it = map_.find(key);
        if (it != map_.end()) {
            // Another reader loaded it meanwhile.
            lru_.splice(lru_.begin(), lru_, it->second.second);
            return it->second.first;
        }
        const std::size_t sz = loaded->size() * sizeof(float);
        while (!lru_.empty() && bytes_ + sz > budget_) {
            const std::size_t victim = lru_.back();
            auto vit = map_.find(victim);
            bytes_ -= vit->second.first->size() * sizeof(float);
            map_.erase(vit);
            lru_.pop_back();
        }
        lru_.push_front(key);
        map_.emplace(key, std::make_pair(loaded, lru_.begin()));
        bytes_ += sz;
        return loaded;
    }

    std::shared_ptr<const Block> load(const Index3& b) const {
        const Box3 bbox = block_box(b);
        const Dims3 ext = bbox.extent();
        auto blk = std::make_shared<Block>(voxel_count(ext));
        const std::size_t bs = dtype_size(desc_.dtype);
        const bool swap = (desc_.endian == Endian::Little) != host_is_little();
        std::vector<std::uint8_t> row(static_cast<std::size_t>(ext.x) * bs);
        std::size_t k = 0;
        for (std::int64_t z = bbox.lo.z; z <= bbox.hi.z; ++z) {
            for (std::int64_t y = bbox.lo.y; y <= bbox.hi.y; ++y) {
                const auto offset =
                    static_cast<off_t>(linear_index({bbox.lo.x, y, z}, desc_.dims) * bs);
                std::size_t done = 0;
                while (done < row.size()) {
                    const auto n = ::pread(fd_, row.data() + done, row.size() - done,
                                           offset + static_cast<off_t>(done));
                    if (n <= 0) {
                        fail(ErrorCode::Io, "short read in block file");
                    }
                    done += static_cast<std::size_t>(n);
                }
                for (std::int64_t x = 0; x < ext.x; ++x) {
                    const double v = decode_one(row.data() + x * bs, desc_.dtype, swap);
                    check_value(v);
                    (*blk)[k++] = static_cast<float>(v);
                }
            }
        }
        return blk;
    }

    VolumeDescriptor desc_;
    std::int64_t block_;
    std::size_t budget_;
    Dims3 nblocks_;
    int fd_ = -1;

    mutable std::mutex mu_;
    mutable std::list<std::size_t> lru_;
    mutable std::unordered_map<std::size_t,
                               std::pair<std::shared_ptr<const Block>, std::list<std::size_t>::iterator>>
        map_;
    mutable std::size_t bytes_ = 0;
};

std::string sibling_path(const std::string& descriptor_path, const std::string& file) {
    const fs::path f(file);
    if (f.is_absolute()) {
        return file;
    }
    return (fs::path(descriptor_path).parent_path() / f).string();
}

} // namespace

// ---------------------------------------------------------------------------

KvDocument VolumeDescriptor::to_kv() const {
    KvDocument doc;
    doc.add("dims", fmt::format("{} {} {}", dims.x, dims.y, dims.z));
    doc.add("dtype", std::string(to_string(dtype)));
    doc.add("endianness", endian == Endian::Little ? "little" : "big");
    doc.add("spacing", fmt::format("{} {} {}", format_double(spacing[0]), format_double(spacing[1]),
                                   format_double(spacing[2])));
    doc.add("data", data_file);
    return doc;
}

VolumeDescriptor VolumeDescriptor::from_kv(const KvDocument& doc) {
    VolumeDescriptor d;
    const auto dims = split_tokens(doc.get("dims"));
    if (dims.size() != 3) {
        fail(ErrorCode::InvalidArgument, "dims needs three values");
    }
    d.dims = Dims3{parse_int(dims[0]), parse_int(dims[1]), parse_int(dims[2])};
    if (d.dims.x <= 0 || d.dims.y <= 0 || d.dims.z <= 0) {
        fail(ErrorCode::InvalidArgument, "dims must be positive");
    }
    d.dtype = parse_dtype(doc.get("dtype"));
    const auto endian = doc.get_or("endianness", "little");
    if (endian == "little") {
        d.endian = Endian::Little;
    } else if (endian == "big") {
        d.endian = Endian::Big;
    } else {
        fail(ErrorCode::InvalidArgument, "endianness must be little or big");
    }
    if (auto sp = doc.find("spacing")) {
        const auto t = split_tokens(*sp);
        if (t.size() != 3) {
            fail(ErrorCode::InvalidArgument, "spacing needs three values");
        }
        for (int i = 0; i < 3; ++i) {
            d.spacing[i] = parse_double(t[i]);
            if (!(d.spacing[i] > 0.0)) {
                fail(ErrorCode::InvalidArgument, "spacing must be positive");
            }
        }
    }
    d.data_file = doc.get_or("data", "");
    return d;
}

double GridSource::at(const Index3& p) const {
    if (!inside(p, dims())) {
        fail(ErrorCode::OutOfRange, "position " + to_string(p) + " outside volume");
    }
    double v = 0.0;
    read_box(Box3{p, p}, std::span<double>(&v, 1));
    return v;
}

void GridSource::check_box(const Box3& box, std::size_t out_size) const {
    const Dims3 d = dims();
    if (box.empty() || !inside(box.lo, d) || !inside(box.hi, d)) {
        fail(ErrorCode::OutOfRange, "box " + to_string(box) + " outside volume");
    }
    if (out_size != box.count()) {
        fail(ErrorCode::InvalidArgument, "output buffer size does not match box");
    }
}

// ---------------------------------------------------------------------------

DenseVolume::DenseVolume(Dims3 dims, DType dtype, std::array<double, 3> spacing)
    : dims_(dims), dtype_(dtype), spacing_(spacing), bytes_(voxel_count(dims) * dtype_size(dtype)) {
    if (dims.x <= 0 || dims.y <= 0 || dims.z <= 0) {
        fail(ErrorCode::InvalidArgument, "dims must be positive");
    }
}

double DenseVolume::get(std::size_t linear) const {
    const std::size_t bs = dtype_size(dtype_);
    return decode_one(bytes_.data() + linear * bs, dtype_, !host_is_little());
}

void DenseVolume::set(std::size_t linear, double value) {
    encode_one(value, dtype_, bytes_.data() + linear * dtype_size(dtype_));
}

void DenseVolume::set(const Index3& p, double value) {
    if (!inside(p, dims_)) {
        fail(ErrorCode::OutOfRange, "position " + to_string(p) + " outside volume");
    }
    set(linear_index(p, dims_), value);
}

void DenseVolume::fill(double value) {
    const std::size_t n = voxel_count(dims_);
    for (std::size_t i = 0; i < n; ++i) {
        set(i, value);
    }
}

void DenseVolume::read_box(const Box3& box, std::span<double> out) const {
    check_box(box, out.size());
    std::size_t k = 0;
    for (std::int64_t z = box.lo.z; z <= box.hi.z; ++z) {
        for (std::int64_t y = box.lo.y; y <= box.hi.y; ++y) {
            std::size_t lin = linear_index({box.lo.x, y, z}, dims_);
            for (std::int64_t x = box.lo.x; x <= box.hi.x; ++x) {
                out[k++] = get(lin++);
            }
        }
    }
}

void DenseVolume::write_box(const Box3& box, std::span<const double> values) {
    if (box.empty() || !inside(box.lo, dims_) || !inside(box.hi, dims_) ||
        values.size() != box.count()) {
        fail(ErrorCode::OutOfRange, "write box " + to_string(box) + " invalid");
    }
    std::size_t k = 0;
    for (std::int64_t z = box.lo.z; z <= box.hi.z; ++z) {
        for (std::int64_t y = box.lo.y; y <= box.hi.y; ++y) {
            std::size_t lin = linear_index({box.lo.x, y, z}, dims_);
            for (std::int64_t x = box.lo.x; x <= box.hi.x; ++x) {
                set(lin++, values[k++]);
            }
        }
    }
}

// ---------------------------------------------------------------------------

Volume::Volume(DenseVolume dense) {
    descriptor_.dims = dense.dims();
    descriptor_.dtype = dense.dtype();
    descriptor_.spacing = dense.spacing();
    impl_ = std::make_shared<const DenseVolume>(std::move(dense));
}

void Volume::read_box(const Box3& box, std::span<double> out) const {
    if (!impl_) {
        fail(ErrorCode::InvalidArgument, "empty volume handle");
    }
    impl_->read_box(box, out);
}

std::size_t Volume::cached_bytes() const { return cache_probe_ ? cache_probe_() : 0; }

Volume load_volume(const std::string& raw_path, const VolumeDescriptor& meta,
                   const LoadOptions& options) {
    std::error_code ec;
    const auto size = fs::file_size(raw_path, ec);
    if (ec) {
        fail(ErrorCode::Io, "cannot read " + raw_path);
    }
    if (size != meta.raw_bytes()) {
        fail(ErrorCode::SizeMismatch,
             fmt::format("{}: file has {} bytes, descriptor implies {}", raw_path, size,
                         meta.raw_bytes()));
    }
    if (options.block_size < 1) {
        fail(ErrorCode::InvalidArgument, "block size must be positive");
    }

    Volume vol;
    vol.descriptor_ = meta;
    if (options.force_file_backed || size > options.memory_budget_bytes) {
        auto store = std::make_shared<BlockFileStore>(raw_path, meta, options.block_size,
                                                      options.cache_bytes);
        vol.cache_probe_ = [raw = store.get()] { return raw->cached_bytes(); };
        vol.impl_ = std::move(store);
        vol.file_backed_ = true;
        return vol;
    }

    DenseVolume dense(meta.dims, meta.dtype, meta.spacing);
    {
        const int fd = ::open(raw_path.c_str(), O_RDONLY | O_CLOEXEC);
        if (fd < 0) {
            fail(ErrorCode::Io, "cannot open " + raw_path);
        }
        auto bytes = dense.bytes();
        std::size_t done = 0;
        while (done < bytes.size()) {
            const auto n = ::read(fd, bytes.data() + done, bytes.size() - done);
            if (n <= 0) {
                ::close(fd);
                fail(ErrorCode::Io, "short read: " + raw_path);
            }
            done += static_cast<std::size_t>(n);
        }
        ::close(fd);
    }
    if (meta.endian == Endian::Big && meta.dtype != DType::U8) {
        // Dense storage is always little-endian.
        auto bytes = dense.bytes();
        const std::size_t bs = dtype_size(meta.dtype);
        for (std::size_t i = 0; i < bytes.size(); i += bs) {
            std::reverse(bytes.begin() + static_cast<std::ptrdiff_t>(i),
                         bytes.begin() + static_cast<std::ptrdiff_t>(i + bs));
        }
    }
    if (meta.dtype == DType::F32) {
        const std::size_t n = voxel_count(meta.dims);
        for (std::size_t i = 0; i < n; ++i) {
            check_value(dense.get(i));
        }
    }
    vol.impl_ = std::make_shared<const DenseVolume>(std::move(dense));
    return vol;
}

VolumeDescriptor read_descriptor(const std::string& descriptor_path) {
    auto desc = VolumeDescriptor::from_kv(KvDocument::read_file(descriptor_path));
    if (desc.data_file.empty()) {
        desc.data_file = fs::path(descriptor_path).stem().string() + ".raw";
    }
    return desc;
}

Volume load_volume(const std::string& descriptor_path, const LoadOptions& options) {
    const auto desc = read_descriptor(descriptor_path);
    return load_volume(sibling_path(descriptor_path, desc.data_file), desc, options);
}

void save_volume(const GridSource& source, DType dtype, const std::string& descriptor_path,
                 std::array<double, 3> spacing) {
    const Dims3 d = source.dims();
    RawFileWriter writer(descriptor_path, d, dtype, spacing);
    std::vector<double> plane(static_cast<std::size_t>(d.x * d.y));
    for (std::int64_t z = 0; z < d.z; ++z) {
        const Box3 slab{{0, 0, z}, {d.x - 1, d.y - 1, z}};
        source.read_box(slab, plane);
        writer.write_box(slab, plane);
    }
    writer.commit();
}

// ---------------------------------------------------------------------------

RawFileWriter::RawFileWriter(const std::string& descriptor_path, Dims3 dims, DType dtype,
                             std::array<double, 3> spacing)
    : descriptor_path_(descriptor_path) {
    descriptor_.dims = dims;
    descriptor_.dtype = dtype;
    descriptor_.spacing = spacing;
    descriptor_.data_file = fs::path(descriptor_path).stem().string() + ".raw";
    raw_path_ = sibling_path(descriptor_path, descriptor_.data_file);
    tmp_path_ = raw_path_ + ".tmp";
    fd_ = ::open(tmp_path_.c_str(), O_RDWR | O_CREAT | O_TRUNC | O_CLOEXEC, 0644);
    if (fd_ < 0) {
        fail(ErrorCode::Io, "cannot create " + tmp_path_);
    }
    if (::ftruncate(fd_, static_cast<off_t>(descriptor_.raw_bytes())) != 0) {
        ::close(fd_);
        fail(ErrorCode::Io, "cannot size " + tmp_path_);
    }
}

RawFileWriter::~RawFileWriter() {
    if (fd_ >= 0) {
        ::close(fd_);
    }
    if (!committed_) {
        std::error_code ec;
        fs::remove(tmp_path_, ec);
    }
}

void RawFileWriter::write_box(const Box3& box, std::span<const double> values) {
    const Dims3 d = descriptor_.dims;
    if (box.empty() || !inside(box.lo, d) || !inside(box.hi, d) || values.size() != box.count()) {
        fail(ErrorCode::OutOfRange, "write box " + to_string(box) + " invalid");
    }
    const std::size_t bs = dtype_size(descriptor_.dtype);
    const auto row_len = static_cast<std::size_t>(box.hi.x - box.lo.x + 1);
    std::vector<std::uint8_t> row(row_len * bs);
    std::size_t k = 0;
    for (std::int64_t z = box.lo.z; z <= box.hi.z; ++z) {
        for (std::int64_t y = box.lo.y; y <= box.hi.y; ++y) {
            for (std::size_t x = 0; x < row_len; ++x) {
                encode_one(values[k++], descriptor_.dtype, row.data() + x * bs);
            }
            const auto offset = static_cast<off_t>(linear_index({box.lo.x, y, z}, d) * bs);
            std::size_t done = 0;
            while (done < row.size()) {
                const auto n = ::pwrite(fd_, row.data() + done, row.size() - done,
                                        offset + static_cast<off_t>(done));
                if (n <= 0) {
                    fail(ErrorCode::Io, "write failed: " + tmp_path_);
                }
                done += static_cast<std::size_t>(n);
            }
        }
    }
}

void RawFileWriter::commit() {
    if (committed_) {
        return;
    }
    if (::fsync(fd_) != 0 || ::close(fd_) != 0) {
        fd_ = -1;
        fail(ErrorCode::Io, "cannot flush " + tmp_path_);
    }
    fd_ = -1;
    const std::string desc_tmp = descriptor_path_ + ".tmp";
    descriptor_.to_kv().write_file(desc_tmp);
    fs::rename(tmp_path_, raw_path_);
    fs::rename(desc_tmp, descriptor_path_);
    committed_ = true;
}

// ---------------------------------------------------------------------------

void check_environment_size(int K) {
    if (K <= 1 || K % 2 == 0) {
        fail(ErrorCode::InvalidArgument, fmt::format("environment size {} must be odd and > 1", K));
    }
}

std::optional<LocalEnvironment> extract_environment(const GridSource& source, const Index3& center,
                                                    int K) {
    check_environment_size(K);
    const Box3 interior = interior_box(source.dims(), K);
    if (!interior.contains(center)) {
        return std::nullopt;
    }
    const std::int64_t r = K / 2;
    LocalEnvironment env;
    env.center = center;
    env.size = K;
    env.values.resize(static_cast<std::size_t>(K) * K * K);
    source.read_box(Box3{{center.x - r, center.y - r, center.z - r},
                         {center.x + r, center.y + r, center.z + r}},
                    env.values);
    return env;
}

Box3 interior_box(const Dims3& dims, int K) {
    const std::int64_t r = K / 2;
    return Box3{{r, r, r}, {dims.x - 1 - r, dims.y - 1 - r, dims.z - 1 - r}};
}

std::vector<Index3> iterate_positions(const Dims3& dims, const std::optional<Box3>& region, int K) {
    check_environment_size(K);
    Box3 box = interior_box(dims, K);
    if (region) {
        box = intersect(box, *region);
    }
    std::vector<Index3> out;
    if (box.empty()) {
        return out;
    }
    out.reserve(box.count());
    for (std::int64_t z = box.lo.z; z <= box.hi.z; ++z) {
        for (std::int64_t y = box.lo.y; y <= box.hi.y; ++y) {
            for (std::int64_t x = box.lo.x; x <= box.hi.x; ++x) {
                out.push_back({x, y, z});
            }
        }
    }
    return out;
}

// ---------------------------------------------------------------------------

Dims3 level_dims(const Dims3& fine_dims, int level, int source_level) {
    if (level < 1 || level > source_level) {
        fail(ErrorCode::OutOfRange, fmt::format("level {} outside [1, {}]", level, source_level));
    }
    const std::int64_t f = std::int64_t{1} << (source_level - level);
    return Dims3{(fine_dims.x + f - 1) / f, (fine_dims.y + f - 1) / f, (fine_dims.z + f - 1) / f};
}

MultiresView::MultiresView(std::shared_ptr<const GridSource> source, int level, int source_level)
    : source_(std::move(source)), level_(level), source_level_(source_level),
      factor_(std::int64_t{1} << (source_level - level)),
      dims_(level_dims(source_->dims(), level, source_level)) {}

void MultiresView::read_box(const Box3& box, std::span<double> out) const {
    check_box(box, out.size());
    if (factor_ == 1) {
        source_->read_box(box, out);
        return;
    }
    const Dims3 fine = source_->dims();
    const Dims3 ext = box.extent();
    std::vector<double> buf;
    std::vector<double> sums(static_cast<std::size_t>(ext.x * ext.y));
    std::vector<std::int64_t> counts(sums.size());
    for (std::int64_t cz = box.lo.z; cz <= box.hi.z; ++cz) {
        const Box3 fbox{{box.lo.x * factor_, box.lo.y * factor_, cz * factor_},
                        {std::min((box.hi.x + 1) * factor_, fine.x) - 1,
                         std::min((box.hi.y + 1) * factor_, fine.y) - 1,
                         std::min((cz + 1) * factor_, fine.z) - 1}};
        const Dims3 fext = fbox.extent();
        buf.resize(voxel_count(fext));
        source_->read_box(fbox, buf);
        std::fill(sums.begin(), sums.end(), 0.0);
        std::fill(counts.begin(), counts.end(), 0);
        std::size_t k = 0;
        for (std::int64_t z = 0; z < fext.z; ++z) {
            for (std::int64_t y = 0; y < fext.y; ++y) {
                const std::int64_t cy = y / factor_;
                for (std::int64_t x = 0; x < fext.x; ++x) {
                    const auto c = static_cast<std::size_t>(cy * ext.x + x / factor_);
                    sums[c] += buf[k++];
                    ++counts[c];
                }
            }
        }
        double* dst = out.data() + static_cast<std::size_t>((cz - box.lo.z) * ext.x * ext.y);
        for (std::size_t c = 0; c < sums.size(); ++c) {
            dst[c] = sums[c] / static_cast<double>(counts[c]);
        }
    }
}

std::vector<Index3> covered_set(const Index3& alpha, int level, int source_level, const Dims3& dims) {
    if (level < 1 || level > source_level) {
        fail(ErrorCode::OutOfRange, fmt::format("level {} outside [1, {}]", level, source_level));
    }
    const std::int64_t f = std::int64_t{1} << (source_level - level);
    std::vector<Index3> out;
    for (std::int64_t kz = 0; kz < f; ++kz) {
        for (std::int64_t ky = 0; ky < f; ++ky) {
            for (std::int64_t kx = 0; kx < f; ++kx) {
                const Index3 beta{alpha.x * f + kx, alpha.y * f + ky, alpha.z * f + kz};
                if (inside(beta, dims)) {
                    out.push_back(beta);
                }
            }
        }
    }
    return out;
}

double downsample_value(const MultiresView& view, const Index3& alpha) { return view.at(alpha); }

} // namespace alseg
