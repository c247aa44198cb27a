#include "alseg/error.hpp"
#include "alseg/postproc.hpp"

#include <gtest/gtest.h>

#include <deque>
#include <map>
#include <random>

using namespace alseg;

namespace {

BinaryVolume random_mask(Dims3 d, double p, std::mt19937_64& rng) {
    BinaryVolume m(d);
    std::bernoulli_distribution coin(p);
    for (auto& b : m.bits) b = coin(rng) ? 1 : 0;
    return m;
}

// Plain BFS labeling in raster discovery order; returns component id per voxel (0 = background).
std::vector<int> flood_fill(const BinaryVolume& m, int connectivity, std::vector<std::size_t>* sizes) {
    std::vector<int> id(m.bits.size(), 0);
    int next = 0;
    for (std::size_t i = 0; i < m.bits.size(); ++i) {
        if (!m.bits[i] || id[i]) continue;
        ++next;
        std::size_t size = 0;
        std::deque<std::size_t> q{i};
        id[i] = next;
        while (!q.empty()) {
            const Index3 p = from_linear(q.front(), m.dims);
            q.pop_front();
            ++size;
            for (int dz = -1; dz <= 1; ++dz)
                for (int dy = -1; dy <= 1; ++dy)
                    for (int dx = -1; dx <= 1; ++dx) {
                        const int n = std::abs(dx) + std::abs(dy) + std::abs(dz);
                        if (n == 0 || (connectivity == 6 && n != 1)) continue;
                        const Index3 c{p.x + dx, p.y + dy, p.z + dz};
                        if (!inside(c, m.dims)) continue;
                        const auto j = linear_index(c, m.dims);
                        if (m.bits[j] && !id[j]) {
                            id[j] = next;
                            q.push_back(j);
                        }
                    }
        }
        sizes->push_back(size);
    }
    return id;
}

int brute_cube_count(const BinaryVolume& m, const Index3& p, int k2) {
    const int r = k2 / 2;
    int n = 0;
    for (int dz = -r; dz <= r; ++dz)
        for (int dy = -r; dy <= r; ++dy)
            for (int dx = -r; dx <= r; ++dx) {
                const Index3 c{p.x + dx, p.y + dy, p.z + dz};
                if (inside(c, m.dims) && m.at(c)) ++n;
            }
    return n;
}

} // namespace

TEST(Threshold, ExtremesAndMonotone) {
    DenseVolume v({8, 8, 8}, DType::U8);
    std::mt19937_64 rng(3);
    for (std::size_t i = 0; i < voxel_count(v.dims()); ++i) v.set(i, static_cast<double>(rng() % 101));
    EXPECT_EQ(threshold(v, 0).count(), voxel_count(v.dims()));
    EXPECT_THROW(threshold(v, 101), Error);
    EXPECT_THROW(threshold(v, -1), Error);
    const auto hundred = threshold(v, 100);
    for (std::size_t i = 0; i < hundred.bits.size(); ++i) EXPECT_EQ(hundred.bits[i] != 0, v.get(i) == 100);
    std::size_t prev = voxel_count(v.dims());
    for (int t = 0; t <= 100; ++t) {
        const auto c = threshold(v, t).count();
        EXPECT_LE(c, prev);
        prev = c;
    }
}

TEST(Speckle, Examples) {
    BinaryVolume iso({9, 9, 9});
    iso.set({4, 4, 4}, true);
    EXPECT_EQ(speckle_removal(iso, 5, 15).count(), 0u);

    BinaryVolume solid({5, 5, 5});
    std::fill(solid.bits.begin(), solid.bits.end(), 1);
    EXPECT_TRUE(speckle_removal(solid, 3, 18).at({2, 2, 2}));
    // A face voxel sees 18 voxels of the solid including itself, a corner only 8.
    EXPECT_TRUE(speckle_removal(solid, 3, 18).at({2, 2, 0}));
    EXPECT_FALSE(speckle_removal(solid, 3, 18).at({0, 0, 0}));

    std::mt19937_64 rng(1);
    const auto m = random_mask({10, 11, 12}, 0.4, rng);
    EXPECT_EQ(speckle_removal(m, 3, 0), m);
}

TEST(Speckle, RejectsBadParameters) {
    BinaryVolume m({4, 4, 4});
    EXPECT_THROW(speckle_removal(m, 4, 1), Error);
    EXPECT_THROW(speckle_removal(m, 3, 27), Error);
    EXPECT_THROW(speckle_removal(m, 3, -1), Error);
}

TEST(Speckle, MatchesBruteForceAndIsSubset) {
    std::mt19937_64 rng(11);
    for (int trial = 0; trial < 100; ++trial) {
        const Dims3 d{static_cast<std::int64_t>(1 + rng() % 16), static_cast<std::int64_t>(1 + rng() % 16),
                      static_cast<std::int64_t>(1 + rng() % 16)};
        const auto m = random_mask(d, 0.1 + 0.8 * (rng() % 100) / 100.0, rng);
        const int k2 = (rng() % 2) ? 3 : 5;
        const int eta = static_cast<int>(rng() % static_cast<unsigned>(k2 * k2 * k2));
        const auto out = speckle_removal(m, k2, eta);
        for (std::size_t i = 0; i < m.bits.size(); ++i) {
            ASSERT_LE(out.bits[i], m.bits[i]);
            if (m.bits[i]) {
                ASSERT_EQ(out.bits[i] != 0, brute_cube_count(m, from_linear(i, d), k2) >= eta);
            }
        }
    }
}

TEST(Components, Connectivity) {
    BinaryVolume m({4, 4, 4});
    m.set({0, 0, 0}, true);
    m.set({3, 3, 3}, true);
    EXPECT_EQ(connected_components(m, 26).count(), 2u);

    BinaryVolume face({3, 3, 3});
    face.set({0, 0, 0}, true);
    face.set({1, 0, 0}, true);
    EXPECT_EQ(connected_components(face, 6).count(), 1u);
    EXPECT_EQ(connected_components(face, 26).count(), 1u);

    BinaryVolume corner({3, 3, 3});
    corner.set({0, 0, 0}, true);
    corner.set({1, 1, 1}, true);
    EXPECT_EQ(connected_components(corner, 6).count(), 2u);
    EXPECT_EQ(connected_components(corner, 26).count(), 1u);

    EXPECT_THROW(connected_components(m, 18), Error);
}

TEST(Components, MatchFloodFillOracle) {
    std::mt19937_64 rng(29);
    for (int trial = 0; trial < 100; ++trial) {
        const Dims3 d{static_cast<std::int64_t>(1 + rng() % 32), static_cast<std::int64_t>(1 + rng() % 32),
                      static_cast<std::int64_t>(1 + rng() % 32)};
        const auto m = random_mask(d, 0.05 + 0.5 * (rng() % 100) / 100.0, rng);
        const int conn = trial % 2 ? 6 : 26;
        std::vector<std::size_t> sizes;
        const auto oracle = flood_fill(m, conn, &sizes);
        const auto lab = connected_components(m, conn);
        ASSERT_EQ(lab.count(), sizes.size());

        // Same partition: a bijection between oracle ids and labels.
        std::map<int, std::uint32_t> fwd;
        std::map<std::uint32_t, int> back;
        std::size_t fg = 0;
        for (std::size_t i = 0; i < m.bits.size(); ++i) {
            ASSERT_EQ(oracle[i] == 0, lab.labels[i] == 0);
            if (!oracle[i]) continue;
            ++fg;
            auto [it, fresh] = fwd.emplace(oracle[i], lab.labels[i]);
            ASSERT_EQ(it->second, lab.labels[i]);
            auto [jt, fresh2] = back.emplace(lab.labels[i], oracle[i]);
            ASSERT_EQ(jt->second, oracle[i]);
        }
        // Canonical order: oracle ids are in first-voxel order, so a stable sort by size
        // descending gives the expected labeling.
        std::vector<int> order(sizes.size());
        std::iota(order.begin(), order.end(), 1);
        std::stable_sort(order.begin(), order.end(),
                         [&](int a, int b) { return sizes[static_cast<std::size_t>(a - 1)] > sizes[static_cast<std::size_t>(b - 1)]; });
        std::size_t total = 0;
        for (std::size_t l = 0; l < order.size(); ++l) {
            EXPECT_EQ(fwd.at(order[l]), l + 1);
            EXPECT_EQ(lab.sizes[l], sizes[static_cast<std::size_t>(order[l] - 1)]);
            total += lab.sizes[l];
        }
        EXPECT_EQ(total, fg);
    }
}

TEST(Components, BoundingBoxes) {
    BinaryVolume m({6, 6, 6});
    m.set({1, 2, 3}, true);
    m.set({2, 3, 3}, true);
    m.set({5, 5, 5}, true);
    const auto lab = connected_components(m, 26);
    ASSERT_EQ(lab.count(), 2u);
    EXPECT_EQ(lab.boxes[0], (Box3{{1, 2, 3}, {2, 3, 3}}));
    EXPECT_EQ(lab.boxes[1], (Box3{{5, 5, 5}, {5, 5, 5}}));
}

TEST(Selection, Rules) {
    BinaryVolume m({8, 8, 8});
    m.set({0, 0, 0}, true);
    for (int x = 3; x < 6; ++x) m.set({x, 4, 4}, true);
    const auto lab = connected_components(m, 26);

    const auto largest = select_components(lab, SelectionRule::parse("largest:1"));
    EXPECT_EQ(largest.count(), 3u);
    EXPECT_FALSE(largest.at({0, 0, 0}));

    EXPECT_EQ(select_components(lab, SelectionRule::parse("size:1")), m);
    EXPECT_EQ(select_components(lab, SelectionRule::parse("contains:7,7,7")).count(), 0u);
    const auto c = select_components(lab, SelectionRule::parse("contains:0,0,0;4,4,4"));
    EXPECT_EQ(c, m);
    EXPECT_THROW(select_components(lab, SelectionRule::parse("contains:8,0,0")), Error);
    EXPECT_THROW(SelectionRule::parse("biggest:2"), Error);

    for (const char* text : {"largest:3", "size:17", "contains:1,2,3;4,5,6"}) {
        EXPECT_EQ(SelectionRule::parse(text).to_string(), text);
    }
}

TEST(Metrics, Examples) {
    BinaryVolume gt({4, 4, 4});
    for (int x = 0; x < 2; ++x) gt.set({x, 0, 0}, true);
    auto r = metrics(gt, gt);
    EXPECT_EQ(r.iou, 1.0);
    EXPECT_EQ(r.precision, 1.0);
    EXPECT_EQ(r.recall, 1.0);
    EXPECT_EQ(r.f1, 1.0);

    BinaryVolume disjoint({4, 4, 4});
    disjoint.set({3, 3, 3}, true);
    r = metrics(disjoint, gt);
    EXPECT_EQ(r.iou, 0.0);
    EXPECT_EQ(r.precision, 0.0);
    EXPECT_EQ(r.recall, 0.0);
    EXPECT_EQ(r.f1, 0.0);

    BinaryVolume wider = gt;
    wider.set({0, 1, 0}, true);
    wider.set({1, 1, 0}, true);
    r = metrics(wider, gt);
    EXPECT_DOUBLE_EQ(r.recall, 1.0);
    EXPECT_DOUBLE_EQ(r.precision, 0.5);
    EXPECT_DOUBLE_EQ(r.iou, 0.5);
    EXPECT_DOUBLE_EQ(r.f1, 2.0 / 3.0);

    BinaryVolume empty({4, 4, 4});
    EXPECT_EQ(metrics(empty, empty).iou, 1.0);
    EXPECT_EQ(metrics(empty, empty).f1, 1.0);
    EXPECT_EQ(metrics(empty, gt).iou, 0.0);
    EXPECT_EQ(metrics(gt, empty).f1, 0.0);
    EXPECT_THROW(metrics(gt, BinaryVolume({4, 4, 5})), Error);
}

TEST(Metrics, IdentityAndSymmetry) {
    std::mt19937_64 rng(5);
    for (int trial = 0; trial < 200; ++trial) {
        const Dims3 d{7, 6, 5};
        const auto a = random_mask(d, (rng() % 100) / 100.0, rng);
        const auto b = random_mask(d, (rng() % 100) / 100.0, rng);
        const auto r = metrics(a, b);
        const auto s = metrics(b, a);
        EXPECT_NEAR(r.f1, 2 * r.iou / (1 + r.iou), 1e-12);
        EXPECT_EQ(r.precision, s.recall);
        EXPECT_EQ(r.recall, s.precision);
        EXPECT_EQ(r.iou, s.iou);
        EXPECT_EQ(r.f1, s.f1);
        EXPECT_EQ(r.tp + r.fp + r.fn + r.tn, voxel_count(d));
        if (r.precision + r.recall > 0) {
            EXPECT_NEAR(r.f1, 2 * r.precision * r.recall / (r.precision + r.recall), 1e-12);
        }
    }
}

TEST(Metrics, TextFormats) {
    MetricsReport r;
    r.tp = 10;
    r.fp = 3;
    r.fn = 2;
    r.tn = 100;
    r.iou = 10.0 / 15;
    r.precision = 10.0 / 13;
    r.recall = 10.0 / 12;
    r.f1 = 20.0 / 25;
    const auto back = MetricsReport::from_kv(KvDocument::parse(r.to_kv("piston").to_string()));
    EXPECT_EQ(back.tp, r.tp);
    EXPECT_EQ(back.iou, r.iou);
    EXPECT_EQ(back.f1, r.f1);
    EXPECT_EQ(MetricsReport::csv_header(), "scan,IoU,precision,recall,F1");
    std::string scan;
    const auto row = MetricsReport::from_csv_row(r.csv_row("piston"), &scan);
    EXPECT_EQ(scan, "piston");
    EXPECT_EQ(row.iou, r.iou);
    EXPECT_EQ(row.recall, r.recall);
}

TEST(Conversions, MaskRoundTrip) {
    std::mt19937_64 rng(2);
    const auto m = random_mask({5, 6, 7}, 0.5, rng);
    const auto v = to_volume(m);
    EXPECT_EQ(nonzero_mask(v), m);
}
