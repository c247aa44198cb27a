#include "alseg/svm.hpp"

#include "alseg/error.hpp"

#include <bit>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>

#include <fmt/format.h>

namespace alseg {

namespace {

constexpr std::array<std::uint8_t, 8> kMagic{'A', 'L', 'S', 'G', 'S', 'V', 'M', 0};
constexpr std::uint32_t kVersion = 1;

std::uint64_t fnv1a(std::span<const std::uint8_t> bytes) {
    std::uint64_t h = 0xcbf29ce484222325ull;
    for (auto b : bytes) {
        h ^= b;
        h *= 0x100000001b3ull;
    }
    return h;
}

class Writer {
public:
    void raw(const void* p, std::size_t n) {
        const auto* b = static_cast<const std::uint8_t*>(p);
        out.insert(out.end(), b, b + n);
    }
    template <typename T>
    void le(T v) {
        std::array<std::uint8_t, sizeof(T)> b;
        std::memcpy(b.data(), &v, sizeof(T));
        if constexpr (std::endian::native == std::endian::big) {
            std::reverse(b.begin(), b.end());
        }
        raw(b.data(), b.size());
    }
    void u8(std::uint8_t v) { out.push_back(v); }
    void u32(std::uint32_t v) { le(v); }
    void u64(std::uint64_t v) { le(v); }
    void f64(double v) { le(v); }
    void str(const std::string& s) {
        u64(s.size());
        raw(s.data(), s.size());
    }

    std::vector<std::uint8_t> out;
};

class Reader {
public:
    explicit Reader(std::span<const std::uint8_t> b) : bytes_(b) {}

    void need(std::size_t n) const {
        if (bytes_.size() - pos_ < n) {
            fail(ErrorCode::Corrupt, "model file is truncated");
        }
    }
    template <typename T>
    T le() {
        need(sizeof(T));
        std::array<std::uint8_t, sizeof(T)> b;
        std::memcpy(b.data(), bytes_.data() + pos_, sizeof(T));
        pos_ += sizeof(T);
        if constexpr (std::endian::native == std::endian::big) {
            std::reverse(b.begin(), b.end());
        }
        T v;
        std::memcpy(&v, b.data(), sizeof(T));
        return v;
    }
    std::uint8_t u8() { return le<std::uint8_t>(); }
    std::uint32_t u32() { return le<std::uint32_t>(); }
    std::uint64_t u64() { return le<std::uint64_t>(); }
    double f64() { return le<double>(); }
    // Element counts are checked against the remaining bytes before allocating.
    std::uint64_t count(std::size_t min_element_bytes) {
        const auto n = u64();
        if (min_element_bytes > 0 && n > (bytes_.size() - pos_) / min_element_bytes) {
            fail(ErrorCode::Corrupt, "model file has an implausible element count");
        }
        return n;
    }
    std::string str() {
        const auto n = count(1);
        std::string s(reinterpret_cast<const char*>(bytes_.data() + pos_), n);
        pos_ += n;
        return s;
    }
    std::size_t pos() const { return pos_; }

private:
    std::span<const std::uint8_t> bytes_;
    std::size_t pos_ = 0;
};

} // namespace

std::vector<std::uint8_t> encode_model(const SvmModel& model, const TrainingSet& train) {
    Writer w;
    w.raw(kMagic.data(), kMagic.size());
    w.u32(kVersion);
    w.str(model.config.to_kv().to_string());

    const auto& sc = model.scaler;
    w.u64(sc.size);
    w.u64(sc.groups.size());
    for (std::size_t g = 0; g < sc.groups.size(); ++g) {
        w.u64(sc.groups[g].offset);
        w.u64(sc.groups[g].length);
        w.f64(sc.mean[g]);
        w.f64(sc.stddev[g]);
    }

    w.f64(model.gamma);
    w.f64(model.nu);
    w.f64(model.bias);
    w.f64(model.platt_a);
    w.f64(model.platt_b);
    w.u8(model.calibrated ? 1 : 0);

    const std::size_t dim = sc.size;
    w.u64(model.support_vectors.size());
    for (std::size_t i = 0; i < model.support_vectors.size(); ++i) {
        w.u64(model.support_indices.empty() ? 0 : model.support_indices[i]);
        w.f64(model.coefficients[i]);
        for (double v : model.support_vectors[i]) w.f64(v);
    }

    w.u64(train.size());
    for (std::size_t i = 0; i < train.size(); ++i) {
        if (train.samples[i].values.size() != dim) {
            fail(ErrorCode::SizeMismatch, "training vector does not match the model layout");
        }
        w.u8(train.labels[i] > 0 ? 1 : 0);
        for (double v : train.samples[i].values) w.f64(v);
    }
    w.u64(fnv1a(w.out));
    return std::move(w.out);
}

StoredModel decode_model(std::span<const std::uint8_t> bytes) {
    if (bytes.size() < kMagic.size() + 4 + 8 || !std::equal(kMagic.begin(), kMagic.end(), bytes.begin())) {
        fail(ErrorCode::Corrupt, "not a model file");
    }
    Reader r(bytes);
    for (std::size_t i = 0; i < kMagic.size(); ++i) r.u8();
    const auto version = r.u32();
    if (version != kVersion) {
        fail(ErrorCode::VersionMismatch, fmt::format("model file version {} (expected {})", version, kVersion));
    }
    const auto body = bytes.first(bytes.size() - 8);
    Reader tail(bytes.subspan(bytes.size() - 8));
    if (fnv1a(body) != tail.u64()) {
        fail(ErrorCode::Corrupt, "model file checksum mismatch");
    }
    Reader in(body);
    for (std::size_t i = 0; i < kMagic.size() + 4; ++i) in.u8();

    StoredModel out;
    auto& m = out.model;
    try {
        m.config = FeatureConfig::from_kv(KvDocument::parse(in.str()));
    } catch (const Error& e) {
        fail(ErrorCode::Corrupt, std::string("model file has a bad feature config: ") + e.what());
    }
    const auto layout = make_layout(m.config);

    auto& sc = m.scaler;
    sc.size = in.u64();
    const auto groups = in.count(32);
    for (std::uint64_t g = 0; g < groups; ++g) {
        ScaleGroup grp;
        grp.offset = in.u64();
        grp.length = in.u64();
        sc.groups.push_back(grp);
        sc.mean.push_back(in.f64());
        sc.stddev.push_back(in.f64());
    }
    if (sc.size != layout.size) {
        fail(ErrorCode::Corrupt, "scaler does not match the feature layout");
    }
    for (const auto& g : sc.groups) {
        if (g.offset + g.length > sc.size) {
            fail(ErrorCode::Corrupt, "scaler group out of range");
        }
    }

    m.gamma = in.f64();
    m.nu = in.f64();
    m.bias = in.f64();
    m.platt_a = in.f64();
    m.platt_b = in.f64();
    m.calibrated = in.u8() != 0;

    const std::size_t dim = sc.size;
    const auto nsv = in.count(16 + 8 * dim);
    for (std::uint64_t i = 0; i < nsv; ++i) {
        m.support_indices.push_back(in.u64());
        m.coefficients.push_back(in.f64());
        std::vector<double> sv(dim);
        for (auto& v : sv) v = in.f64();
        m.support_vectors.push_back(std::move(sv));
    }

    const auto n = in.count(1 + 8 * dim);
    for (std::uint64_t i = 0; i < n; ++i) {
        const int label = in.u8() ? 1 : -1;
        FeatureVector v;
        v.values.resize(dim);
        for (auto& x : v.values) x = in.f64();
        out.train.add(std::move(v), label);
    }
    if (in.pos() != body.size()) {
        fail(ErrorCode::Corrupt, "model file has trailing bytes");
    }
    return out;
}

void serialize_model(const SvmModel& model, const TrainingSet& train, const std::string& path) {
    const auto bytes = encode_model(model, train);
    const std::string tmp = path + ".tmp";
    {
        std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
        if (!f) {
            fail(ErrorCode::Io, "cannot write " + tmp);
        }
        f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
        if (!f) {
            fail(ErrorCode::Io, "short write to " + tmp);
        }
    }
    std::error_code ec;
    std::filesystem::rename(tmp, path, ec);
    if (ec) {
        fail(ErrorCode::Io, "cannot rename " + tmp + ": " + ec.message());
    }
}

StoredModel deserialize_model(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) {
        fail(ErrorCode::Io, "cannot open " + path);
    }
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    return decode_model(bytes);
}

} // namespace alseg
