#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <random>

#include "crowddiff/groundtruth.hpp"

using namespace crowddiff;

namespace {

// Independent oracle for the 3x3 sigma = 0.5 unit-mass kernel.
std::array<double, 9> oracle_kernel() {
    std::array<double, 9> w{};
    double total = 0.0;
    for (int dy = -1; dy <= 1; ++dy)
        for (int dx = -1; dx <= 1; ++dx) {
            w[(dy + 1) * 3 + (dx + 1)] = std::exp(-(dx * dx + dy * dy) / (2.0 * 0.25));
            total += w[(dy + 1) * 3 + (dx + 1)];
        }
    for (double& v : w) v /= total;
    return w;
}

}  // namespace

TEST_CASE("kernel weights match the oracle evaluation") {
    const auto want = oracle_kernel();
    const auto& got = unit_kernel3x3();
    for (int i = 0; i < 9; ++i) CHECK(got[i] == doctest::Approx(want[i]).epsilon(1e-14));
    CHECK(kernel_center_weight() == doctest::Approx(want[4]).epsilon(1e-14));
    CHECK(kernel_min_weight() == doctest::Approx(want[0]).epsilon(1e-14));
    // frozen oracle values
    CHECK(kernel_center_weight() == doctest::Approx(0.6193470305571772).epsilon(1e-12));
    CHECK(kernel_min_weight() == doctest::Approx(0.011343736558495071).epsilon(1e-12));
}

TEST_CASE("empty point list renders an all-zero map") {
    const DensityMap m = render_density({}, 16, 16);
    CHECK(m.sum() == 0.0);
}

TEST_CASE("one interior point deposits unit mass with the peak at the center") {
    const DensityMap m = render_density({{7.0, 5.0}}, 12, 16);
    CHECK(m.sum() == doctest::Approx(1.0).epsilon(1e-9));
    CHECK(m.at(5, 7) == doctest::Approx(0.6193470305571772).epsilon(1e-12));
    double peak = 0.0;
    for (double v : m.values) peak = std::max(peak, v);
    CHECK(peak == m.at(5, 7));
}

TEST_CASE("two separated points deposit disjoint unit masses") {
    const DensityMap m = render_density({{3.0, 3.0}, {10.0, 3.0}}, 16, 16);
    CHECK(m.sum() == doctest::Approx(2.0).epsilon(1e-9));
    // disjoint supports: a zero column between the kernels
    for (int y = 0; y < 16; ++y) CHECK(m.at(y, 6) == 0.0);
}

TEST_CASE("points round to the nearest pixel") {
    const DensityMap a = render_density({{4.4, 4.4}}, 12, 12);
    const DensityMap b = render_density({{4.0, 4.0}}, 12, 12);
    for (size_t i = 0; i < a.values.size(); ++i) CHECK(a.values[i] == b.values[i]);
}

TEST_CASE("border kernels are truncated without renormalization") {
    const DensityMap m = render_density({{0.0, 0.0}}, 8, 8);
    // only the 2x2 in-bounds quadrant of the kernel lands
    const auto& k = unit_kernel3x3();
    CHECK(m.sum() == doctest::Approx(k[4] + k[5] + k[7] + k[8]).epsilon(1e-12));
}

TEST_CASE("out-of-bounds points are rejected") {
    CHECK_THROWS_AS(render_density({{16.0, 3.0}}, 16, 16), std::out_of_range);
    CHECK_THROWS_AS(render_density({{3.0, -0.5}}, 16, 16), std::out_of_range);
}

TEST_CASE("render is translation-equivariant for interior points") {
    std::mt19937 rng(42);
    std::uniform_real_distribution<double> u(2.0, 9.0);
    std::vector<Point2> pts;
    for (int i = 0; i < 6; ++i) pts.push_back({u(rng), u(rng)});
    const DensityMap base = render_density(pts, 16, 16);
    const int dx = 3, dy = 2;
    std::vector<Point2> shifted;
    for (const Point2& p : pts) shifted.push_back({p.x + dx, p.y + dy});
    const DensityMap moved = render_density(shifted, 16, 16);
    for (int y = 0; y < 16 - dy; ++y)
        for (int x = 0; x < 16 - dx; ++x)
            CHECK(moved.at(y + dy, x + dx) == doctest::Approx(base.at(y, x)).epsilon(1e-12));
}

TEST_CASE("nonzero pixel values of separated layouts equal the kernel weights") {
    // premise behind the narrow-kernel pixel-value distribution argument
    std::vector<Point2> pts = {{4, 4}, {12, 4}, {4, 12}, {12, 12}, {20, 20}};
    const DensityMap m = render_density(pts, 28, 28);
    std::vector<double> nonzero;
    for (double v : m.values)
        if (v != 0.0) nonzero.push_back(v);
    CHECK(nonzero.size() == 9 * pts.size());
    std::sort(nonzero.begin(), nonzero.end());
    auto k = unit_kernel3x3();
    std::array<double, 9> sorted_k{};
    std::copy(k.begin(), k.end(), sorted_k.begin());
    std::sort(sorted_k.begin(), sorted_k.end());
    for (size_t i = 0; i < nonzero.size(); ++i)
        CHECK(nonzero[i] == doctest::Approx(sorted_k[i / pts.size()]).epsilon(1e-12));
}

TEST_CASE("density sum equals planted count for interior non-overlapping points") {
    std::mt19937 rng(7);
    for (int trial = 0; trial < 5; ++trial) {
        std::vector<Point2> pts;
        std::uniform_real_distribution<double> u(2.0, 61.0);
        while (pts.size() < 30) {
            Point2 c{u(rng), u(rng)};
            bool ok = true;
            for (const Point2& p : pts)
                if (std::hypot(p.x - c.x, p.y - c.y) < 4.0) ok = false;
            if (ok) pts.push_back(c);
        }
        const DensityMap m = render_density(pts, 64, 64);
        CHECK(m.sum() == doctest::Approx(30.0).epsilon(1e-6));
    }
}

TEST_CASE("scale maps background to -1 and the peak to +1 at the default scale") {
    const DensityMap zero(8, 8);
    const ScaledDensityMap s = scale_density(zero, default_density_scale());
    for (double v : s.values) CHECK(v == -1.0);

    DensityMap one(8, 8);
    one.at(4, 4) = kernel_center_weight();
    const ScaledDensityMap sp = scale_density(one, 1.0 / kernel_center_weight());
    CHECK(sp.at(4, 4) == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("scale then unscale is the identity on unclipped pixels") {
    const DensityMap m = render_density({{4, 4}, {10, 9}}, 16, 16);
    const double scale = default_density_scale();
    const DensityMap back = unscale_density(scale_density(m, scale), scale);
    for (size_t i = 0; i < m.values.size(); ++i)
        CHECK(back.values[i] == doctest::Approx(m.values[i]).epsilon(1e-9));
}

TEST_CASE("unscale clamps sampler undershoot to zero") {
    ScaledDensityMap s(4, 4);
    for (double& v : s.values) v = -1.0 - 1e-3;
    const DensityMap m = unscale_density(s, default_density_scale());
    for (double v : m.values) CHECK(v == 0.0);
    // exact -1 maps to exactly 0
    ScaledDensityMap z(4, 4);
    const DensityMap mz = unscale_density(z, default_density_scale());
    for (double v : mz.values) CHECK(v == 0.0);
    // +1 with scale 1/w_c maps back to w_c
    ScaledDensityMap p(1, 1);
    p.values[0] = 1.0;
    const DensityMap mp = unscale_density(p, 1.0 / kernel_center_weight());
    CHECK(mp.values[0] == doctest::Approx(kernel_center_weight()).epsilon(1e-12));
}

TEST_CASE("non-positive scales are rejected") {
    const DensityMap m(4, 4);
    CHECK_THROWS_AS(scale_density(m, 0.0), std::invalid_argument);
    CHECK_THROWS_AS(unscale_density(ScaledDensityMap(4, 4), -1.0), std::invalid_argument);
}

TEST_CASE("dmap round trip preserves extents and values to f32 precision") {
    const DensityMap m = render_density({{5, 5}, {11, 7}}, 20, 24);
    const std::string path =
        (std::filesystem::temp_directory_path() / "crowddiff_test.dmap").string();
    write_dmap(path, m);
    const DensityMap r = read_dmap(path);
    REQUIRE(r.height == 20);
    REQUIRE(r.width == 24);
    for (size_t i = 0; i < m.values.size(); ++i)
        CHECK(r.values[i] == doctest::Approx(m.values[i]).epsilon(1e-7));
    std::filesystem::remove(path);
}
