#include "alseg/error.hpp"
#include "alseg/phantom.hpp"
#include "alseg/postproc.hpp"
#include "alseg/server.hpp"
#include "scenario.hpp"
#include "test_support.hpp"

#include <gtest/gtest.h>
#include <httplib.h>

#include <chrono>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <thread>

using namespace alseg;
using namespace testing_support;
namespace fs = std::filesystem;

namespace {

std::string write_phantom(const TempDir& dir, const PhantomSpec& spec, const std::string& name = "vol") {
    const auto ph = make_phantom(spec);
    const auto path = (fs::path(dir.path()) / (name + ".vol")).string();
    save_volume(ph.volume, spec.dtype, path);
    return path;
}

std::string constant_volume(const TempDir& dir, Dims3 d, double v, const std::string& name = "const") {
    DenseVolume vol(d, DType::U8);
    vol.fill(v);
    const auto path = (fs::path(dir.path()) / (name + ".vol")).string();
    save_volume(vol, DType::U8, path);
    return path;
}

KvDocument kv(const httplib::Result& r) { return KvDocument::parse(r->body); }

std::span<const std::uint8_t> as_bytes(const std::string& s) {
    return {reinterpret_cast<const std::uint8_t*>(s.data()), s.size()};
}

class ServerTest : public ::testing::Test {
protected:
    void SetUp() override {
        http = std::make_unique<HttpServer>(store);
        port = http->start("127.0.0.1", 0);
        client = std::make_unique<httplib::Client>("127.0.0.1", port);
        client->set_read_timeout(600, 0);
    }
    void TearDown() override { http->stop(); }

    std::string create(const std::string& body) {
        auto r = client->Post("/sessions", body, "text/plain");
        EXPECT_TRUE(r);
        EXPECT_EQ(r->status, 201) << r->body;
        return kv(r).get("id");
    }

    KvDocument wait_idle(const std::string& id) {
        for (;;) {
            auto r = client->Get("/sessions/" + id + "/status");
            auto doc = kv(r);
            if (doc.get("state") == "idle") return doc;
            std::this_thread::sleep_for(std::chrono::milliseconds(20));
        }
    }

    GrayImage slice(const std::string& id, const std::string& query) {
        auto r = client->Get("/sessions/" + id + "/slice?" + query);
        EXPECT_EQ(r->status, 200) << r->body;
        EXPECT_EQ(r->get_header_value("Content-Type"), "image/png");
        return decode_png(as_bytes(r->body));
    }

    SessionStore store;
    std::unique_ptr<HttpServer> http;
    std::unique_ptr<httplib::Client> client;
    int port = 0;
    TempDir dir;
};

// Most uncertain unlabeled interior voxels, labeled from the truth, half per class.
std::vector<Seed> pick_uncertain(const DenseVolume& unc, const BinaryVolume& truth, const std::vector<Seed>& known, int K,
                                 std::size_t count) {
    const auto d = unc.dims();
    const auto interior = interior_box(d, K);
    std::vector<std::size_t> order;
    for (std::size_t i = 0; i < voxel_count(d); ++i)
        if (interior.contains(from_linear(i, d))) order.push_back(i);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return unc.get(a) > unc.get(b); });
    std::vector<Seed> out;
    std::size_t per[2] = {0, 0};
    for (std::size_t i : order) {
        if (out.size() == count) break;
        const auto p = from_linear(i, d);
        if (std::any_of(known.begin(), known.end(), [&](const Seed& s) { return s.position == p; })) continue;
        const int cls = truth.at(p) ? 0 : 1;
        if (per[cls] == count / 2) continue;
        if (std::any_of(out.begin(), out.end(), [&](const Seed& s) {
                return std::max({std::abs(s.position.x - p.x), std::abs(s.position.y - p.y), std::abs(s.position.z - p.z)}) < 4;
            }))
            continue;
        ++per[cls];
        out.push_back({p, truth.at(p) ? 1 : -1});
    }
    return out;
}

} // namespace

// --- rendering -------------------------------------------------------------------------

TEST(Slice, ConstantVolumeIsUniform) {
    DenseVolume v({6, 5, 4}, DType::U8);
    v.fill(7);
    for (int axis = 0; axis < 3; ++axis) {
        const auto img = render_slice(v, axis, 1, 0, 255);
        for (auto p : img.pixels) EXPECT_EQ(p, 7);
    }
    const auto img = render_slice(v, 2, 0, 0, 14);
    for (auto p : img.pixels) EXPECT_EQ(p, 128);
}

TEST(Slice, OrientationMatchesIndexing) {
    const Dims3 d{5, 6, 7};
    DenseVolume v(d, DType::U16);
    for (std::size_t i = 0; i < voxel_count(d); ++i) {
        const auto p = from_linear(i, d);
        v.set(i, p.x + 10 * p.y + 100 * p.z);
    }
    for (int axis = 0; axis < 3; ++axis) {
        const int u = axis == 0 ? 1 : 0, w = axis == 2 ? 1 : 2;
        const auto img = render_slice(v, axis, 2, 0, 1000);
        ASSERT_EQ(img.width, d[u]);
        ASSERT_EQ(img.height, d[w]);
        for (int r = 0; r < img.height; ++r)
            for (int c = 0; c < img.width; ++c) {
                Index3 p;
                p[axis] = 2;
                p[u] = c;
                p[w] = r;
                const double expect = std::round(v.at(p) * 255.0 / 1000.0);
                EXPECT_EQ(img.pixels[static_cast<std::size_t>(r) * img.width + c], expect);
            }
    }
}

TEST(Slice, WindowClampsAndValidates) {
    DenseVolume v({3, 3, 3}, DType::U8);
    v.set(Index3{0, 0, 0}, 10);
    v.set(Index3{1, 0, 0}, 200);
    const auto img = render_slice(v, 2, 0, 20, 100);
    EXPECT_EQ(img.pixels[0], 0);
    EXPECT_EQ(img.pixels[1], 255);
    EXPECT_THROW(render_slice(v, 2, 3, 0, 1), Error);
    EXPECT_THROW(render_slice(v, 2, -1, 0, 1), Error);
    EXPECT_THROW(render_slice(v, 2, 0, 5, 5), Error);
    EXPECT_THROW(render_slice(v, 3, 0, 0, 1), Error);
}

TEST(Png, RoundTripAndDeterminism) {
    GrayImage img{7, 3, {}};
    for (int i = 0; i < 21; ++i) img.pixels.push_back(static_cast<std::uint8_t>(i * 12));
    const auto a = encode_png(img), b = encode_png(img);
    EXPECT_EQ(a, b);
    const auto back = decode_png(a);
    EXPECT_EQ(back.width, 7);
    EXPECT_EQ(back.height, 3);
    EXPECT_EQ(back.pixels, img.pixels);
    auto broken = a;
    broken.resize(broken.size() / 2);
    EXPECT_THROW(decode_png(broken), Error);
    EXPECT_THROW(decode_png(std::vector<std::uint8_t>{1, 2, 3}), Error);
}

// --- HTTP -------------------------------------------------------------------------------

TEST_F(ServerTest, CreateStatusAndDelete) {
    const auto path = constant_volume(dir, {16, 16, 16}, 7);
    const auto a = create("volume = " + path + "\n");
    const auto b = create("volume = " + path + "\ndelta = 2\nlevels = 2\n");
    EXPECT_NE(a, b);
    auto st = kv(client->Get("/sessions/" + a + "/status"));
    EXPECT_EQ(st.get("iteration"), "0");
    EXPECT_EQ(st.get("state"), "idle");
    EXPECT_EQ(st.get("dims"), "16 16 16");
    EXPECT_EQ(kv(client->Get("/sessions/" + b + "/status")).get("levels"), "2");

    auto r = client->Delete("/sessions/" + a);
    EXPECT_EQ(r->status, 200);
    r = client->Get("/sessions/" + a + "/status");
    EXPECT_EQ(r->status, 404);
    EXPECT_EQ(kv(r).get("code"), "not_found");
}

TEST_F(ServerTest, CreationErrors) {
    auto r = client->Post("/sessions", "volume = " + dir.file("missing.vol") + "\n", "text/plain");
    EXPECT_GE(r->status, 400);
    EXPECT_LT(r->status, 500);
    EXPECT_EQ(kv(r).get("code"), "io_error");
    EXPECT_FALSE(kv(r).get("message").empty());
    r = client->Post("/sessions", "delta = 1\n", "text/plain");
    EXPECT_EQ(r->status, 400);
    const auto path = constant_volume(dir, {16, 16, 16}, 7);
    r = client->Post("/sessions", "volume = " + path + "\nlevels = 0\n", "text/plain");
    EXPECT_EQ(r->status, 400);
    EXPECT_EQ(kv(r).get("code"), "invalid_argument");
}

TEST_F(ServerTest, GraySliceAndMissingLayers) {
    const auto id = create("volume = " + constant_volume(dir, {12, 10, 8}, 7) + "\n");
    const auto img = slice(id, "axis=z&index=3&layer=gray");
    EXPECT_EQ(img.width, 12);
    EXPECT_EQ(img.height, 10);
    for (auto p : img.pixels) EXPECT_EQ(p, 7);
    auto r = client->Get("/sessions/" + id + "/slice?axis=z&index=3&layer=confidence");
    EXPECT_EQ(r->status, 409);
    EXPECT_EQ(kv(r).get("code"), "not_computed");
    r = client->Get("/sessions/" + id + "/slice?axis=z&index=8&layer=gray");
    EXPECT_EQ(r->status, 400);
    EXPECT_EQ(kv(r).get("code"), "out_of_range");
    r = client->Get("/sessions/" + id + "/slice?axis=q&index=1");
    EXPECT_EQ(r->status, 400);
    r = client->Get("/sessions/" + id + "/export?what=confidence");
    EXPECT_EQ(r->status, 409);
    r = client->Get("/sessions/" + id + "/export?what=model");
    EXPECT_EQ(r->status, 409);
}

TEST_F(ServerTest, SeedValidationPerEntry) {
    const auto id = create("volume = " + constant_volume(dir, {16, 16, 16}, 7) + "\nenv_size = 5\n");
    auto r = client->Post("/sessions/" + id + "/seeds", "4 4 4 1\n5 9 4 1\n10 4 4 -1\n11 11 11 -1\n", "text/plain");
    EXPECT_EQ(kv(r).get("accepted"), "4");
    EXPECT_EQ(kv(r).get("rejected"), "0");

    r = client->Post("/sessions/" + id + "/seeds", "0 0 0 1\n6 6 6 1\n6 6 6 -1\nnot a seed\n7 7 7 2\n8 8 8 1\n", "text/plain");
    const auto doc = kv(r);
    EXPECT_EQ(doc.get("accepted"), "2");
    const auto rejected = doc.all("rejected_line");
    ASSERT_EQ(rejected.size(), 4u);
    EXPECT_EQ(rejected[0].substr(0, 2), "1 ");
    EXPECT_EQ(rejected[1].substr(0, 2), "3 ");
    EXPECT_NE(rejected[1].find("conflict"), std::string::npos);
    EXPECT_EQ(rejected[2].substr(0, 2), "4 ");
    EXPECT_EQ(rejected[3].substr(0, 2), "5 ");
    EXPECT_EQ(kv(client->Get("/sessions/" + id + "/status")).get("pending"), "6");
}

TEST_F(ServerTest, IterateLifecycleAndExports) {
    const auto spec = small_slab_spec(32, 9);
    const auto ph = make_phantom(spec);
    const auto truth = truth_of(ph);
    const auto id = create("volume = " + write_phantom(dir, spec) + "\n");

    // One class only.
    auto r = client->Post("/sessions/" + id + "/iterate", "", "text/plain");
    EXPECT_EQ(r->status, 422);
    EXPECT_EQ(kv(r).get("code"), "single_class");

    const auto seeds = initial_seeds(truth, 5, 2);
    ASSERT_EQ(seeds.size(), 4u);
    r = client->Post("/sessions/" + id + "/seeds", format_seeds(seeds), "text/plain");
    EXPECT_EQ(kv(r).get("accepted"), "4");

    r = client->Post("/sessions/" + id + "/iterate", "", "text/plain");
    EXPECT_EQ(r->status, 202);
    EXPECT_NE(kv(r).get("state"), "idle");
    auto busy = client->Post("/sessions/" + id + "/iterate", "", "text/plain");
    EXPECT_EQ(busy->status, 409);
    EXPECT_EQ(kv(busy).get("code"), "busy");
    busy = client->Post("/sessions/" + id + "/seeds", "9 9 9 1\n", "text/plain");
    EXPECT_EQ(busy->status, 409);

    double last_progress = 0;
    for (;;) {
        const auto st = kv(client->Get("/sessions/" + id + "/status"));
        const double p = st.get_double("progress");
        EXPECT_GE(p, 0.0);
        EXPECT_LE(p, 1.0);
        if (st.get("state") == "idle") break;
        if (st.get("state") == "classifying") {
            EXPECT_GE(p, last_progress);
            last_progress = p;
        }
        std::this_thread::sleep_for(std::chrono::milliseconds(5));
    }
    const auto st = wait_idle(id);
    EXPECT_EQ(st.get("iteration"), "1");
    EXPECT_EQ(st.get("confidence"), "available");
    EXPECT_FALSE(st.has("last_error"));

    // Seeds export round-trips.
    r = client->Get("/sessions/" + id + "/export?what=seeds");
    EXPECT_EQ(parse_seeds(r->body), seeds);
    EXPECT_EQ(std::count(r->body.begin(), r->body.end(), '\n'), 4);

    // Confidence export is a loadable volume matching the slices.
    const auto desc = kv(client->Get("/sessions/" + id + "/export?what=confidence&part=descriptor"));
    r = client->Get("/sessions/" + id + "/export?what=confidence");
    const auto conf_dir = fs::path(dir.path()) / "export";
    fs::create_directories(conf_dir);
    desc.write_file((conf_dir / "confidence.vol").string());
    {
        std::ofstream out(conf_dir / VolumeDescriptor::from_kv(desc).data_file, std::ios::binary);
        out.write(r->body.data(), static_cast<std::streamsize>(r->body.size()));
    }
    const auto conf = load_volume((conf_dir / "confidence.vol").string());
    EXPECT_EQ(conf.dims(), spec.dims);
    const auto img = slice(id, "axis=z&index=16&layer=confidence&min=0&max=255");
    for (int y = 0; y < 32; ++y)
        for (int x = 0; x < 32; ++x) EXPECT_EQ(img.pixels[static_cast<std::size_t>(y) * 32 + x], conf.at({x, y, 16}));
    double hi = 0;
    for (std::int64_t z = 0; z < 32; ++z)
        for (std::int64_t y = 0; y < 32; ++y)
            for (std::int64_t x = 0; x < 32; ++x) hi = std::max(hi, conf.at({x, y, z}));
    EXPECT_LE(hi, 100.0);
    EXPECT_GT(hi, 0.0);
    EXPECT_NO_THROW(metrics(threshold(conf, 50), truth));

    // Exported model reproduces the published confidences offline.
    r = client->Get("/sessions/" + id + "/export?what=model");
    const auto stored = decode_model(as_bytes(r->body));
    const FeatureExtractor ex(stored.model.config);
    for (const Index3& p : {Index3{8, 8, 8}, Index3{16, 16, 16}, Index3{20, 12, 9}, Index3{23, 23, 23}}) {
        const auto env = extract_environment(ph.volume, p, ex.config().env_size);
        const double s = predict_confidence(stored.model, ex.assemble(*env));
        EXPECT_EQ(conf.at(p), std::floor(100 * s));
    }
}

TEST_F(ServerTest, UncertaintyOfHalfConfidenceIsMaximal) {
    // Checkpoint whose published confidence is 50 % everywhere.
    const auto path = constant_volume(dir, {16, 16, 16}, 7);
    const auto ckpt = (fs::path(dir.path()) / "ckpt").string();
    {
        auto vol = std::make_shared<Volume>(load_volume(path));
        Session s(vol, {});
        s.save_checkpoint(ckpt);
    }
    DenseVolume half({16, 16, 16}, DType::U8);
    half.fill(50);
    save_volume(half, DType::U8, ckpt + "/confidence.vol");
    save_volume(uncertainty_volume(half, 1.0), DType::F32, ckpt + "/uncertainty.vol");
    const auto id = create("volume = " + path + "\ncheckpoint = " + ckpt + "\n");
    for (int axis = 0; axis < 3; ++axis) {
        const auto img = slice(id, std::string("axis=") + "xyz"[axis] + "&index=5&layer=uncertainty");
        for (auto p : img.pixels) EXPECT_EQ(p, 255);
    }
    EXPECT_NEAR(kv(client->Get("/sessions/" + id + "/status")).get_double("mean_uncertainty"), 1.0, 1e-12);
}

TEST_F(ServerTest, ScriptedIterationsReduceUncertainty) {
    auto spec = slab_spec(40, 7);
    const auto ph = make_phantom(spec);
    const auto truth = truth_of(ph);
    const auto id = create("volume = " + write_phantom(dir, spec) + "\n");
    std::vector<Seed> known = initial_seeds(truth, 5, 5);
    std::vector<Seed> batch = known;
    std::vector<double> mean_u;
    for (int it = 0; it < 4; ++it) {
        auto r = client->Post("/sessions/" + id + "/seeds", format_seeds(batch), "text/plain");
        EXPECT_EQ(kv(r).get_int("accepted"), static_cast<long long>(batch.size()));
        r = client->Post("/sessions/" + id + "/iterate", "", "text/plain");
        ASSERT_EQ(r->status, 202) << r->body;
        const auto st = wait_idle(id);
        ASSERT_FALSE(st.has("last_error")) << st.get("last_error");
        mean_u.push_back(st.get_double("mean_uncertainty"));
        const auto desc = KvDocument::parse(client->Get("/sessions/" + id + "/export?what=uncertainty&part=descriptor")->body);
        const auto raw = client->Get("/sessions/" + id + "/export?what=uncertainty")->body;
        DenseVolume unc(spec.dims, DType::F32);
        ASSERT_EQ(raw.size(), unc.bytes().size());
        std::memcpy(unc.bytes().data(), raw.data(), raw.size());
        batch = pick_uncertain(unc, truth, known, 5, 10);
        known.insert(known.end(), batch.begin(), batch.end());
    }
    EXPECT_LT(mean_u.back(), mean_u.front()) << mean_u[0] << " " << mean_u[1] << " " << mean_u[2] << " " << mean_u[3];
}

TEST_F(ServerTest, ReadersSeeOnlyCompletedLayers) {
    const auto spec = small_slab_spec(32, 9);
    const auto truth = truth_of(make_phantom(spec));
    const auto id = create("volume = " + write_phantom(dir, spec) + "\n");
    auto seeds = initial_seeds(truth, 5, 2);
    client->Post("/sessions/" + id + "/seeds", format_seeds(seeds), "text/plain");
    client->Post("/sessions/" + id + "/iterate", "", "text/plain");
    wait_idle(id);
    const auto before = client->Get("/sessions/" + id + "/slice?axis=z&index=16&layer=confidence")->body;

    const auto more = initial_seeds(truth, 5, 5);
    std::string text;
    for (const auto& s : more)
        if (std::find(seeds.begin(), seeds.end(), s) == seeds.end()) text += format_seeds(std::vector<Seed>{s});
    client->Post("/sessions/" + id + "/seeds", text, "text/plain");
    client->Post("/sessions/" + id + "/iterate", "", "text/plain");
    int observed = 0;
    for (;;) {
        const auto s1 = kv(client->Get("/sessions/" + id + "/status"));
        const auto body = client->Get("/sessions/" + id + "/slice?axis=z&index=16&layer=confidence")->body;
        const auto s2 = kv(client->Get("/sessions/" + id + "/status"));
        if (s1.get("iteration") == "1" && s2.get("iteration") == "1") {
            EXPECT_EQ(body, before);
            ++observed;
        }
        if (s2.get("state") == "idle") break;
    }
    EXPECT_EQ(kv(client->Get("/sessions/" + id + "/status")).get("iteration"), "2");
    EXPECT_GT(observed, 0);
}

TEST_F(ServerTest, CheckpointRestoreReproducesSlices) {
    const auto spec = small_slab_spec(32, 9);
    const auto truth = truth_of(make_phantom(spec));
    const auto path = write_phantom(dir, spec);
    const auto id = create("volume = " + path + "\nlevels = 2\n");
    client->Post("/sessions/" + id + "/seeds", format_seeds(initial_seeds(truth, 5, 3)), "text/plain");
    client->Post("/sessions/" + id + "/iterate", "", "text/plain");
    wait_idle(id);
    const auto ckpt = (fs::path(dir.path()) / "restore").string();
    store.save_checkpoint(id, ckpt);
    std::vector<std::string> before;
    for (const char* q : {"axis=z&index=16&layer=confidence", "axis=x&index=10&layer=uncertainty", "axis=y&index=3&layer=gray"})
        before.push_back(client->Get("/sessions/" + id + "/slice?" + std::string(q))->body);
    const auto seeds_before = client->Get("/sessions/" + id + "/export?what=seeds")->body;

    // Fresh server process state.
    http->stop();
    SessionStore other;
    HttpServer server2(other);
    const int port2 = server2.start("127.0.0.1", 0);
    httplib::Client c2("127.0.0.1", port2);
    auto r = c2.Post("/sessions", "volume = " + path + "\ncheckpoint = " + ckpt + "\n", "text/plain");
    ASSERT_EQ(r->status, 201) << r->body;
    const auto id2 = kv(r).get("id");
    EXPECT_EQ(kv(r).get("iteration"), "1");
    int i = 0;
    for (const char* q : {"axis=z&index=16&layer=confidence", "axis=x&index=10&layer=uncertainty", "axis=y&index=3&layer=gray"})
        EXPECT_EQ(c2.Get("/sessions/" + id2 + "/slice?" + std::string(q))->body, before[static_cast<std::size_t>(i++)]) << q;
    EXPECT_EQ(c2.Get("/sessions/" + id2 + "/export?what=seeds")->body, seeds_before);
    server2.stop();
}

TEST_F(ServerTest, UnknownSessionAndExport) {
    auto r = client->Get("/sessions/nope/status");
    EXPECT_EQ(r->status, 404);
    const auto id = create("volume = " + constant_volume(dir, {16, 16, 16}, 1) + "\n");
    r = client->Get("/sessions/" + id + "/export?what=banana");
    EXPECT_EQ(r->status, 400);
    r = client->Get("/sessions/" + id + "/export");
    EXPECT_EQ(r->status, 400);
    EXPECT_EQ(kv(r).get("code"), "invalid_argument");
}
