// Copyright 2026 The fpds authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "fpds/random.hpp"
#include "fpds/volume.hpp"
#include "test_util.hpp"

using namespace fpds;
using fpds_test::TempDir;

namespace {

LabelVolume full_mask(const Volume& v) {
    LabelVolume m;
    m.dims = v.dims;
    m.spacing = v.spacing;
    m.labels.assign(v.size(), 1);
    return m;
}

}  // namespace

TEST_CASE("RVOL round-trip", "[volume]") {
    TempDir tmp("rvol");

    SECTION("uniform volume survives write/read") {
        Volume v = Volume::filled({2, 2, 2}, {1.5, 1.5, 1.5}, 1.0);
        write_volume(v, tmp.file("v.rvol"));
        Volume r = read_volume(tmp.file("v.rvol"));
        CHECK(r.dims == v.dims);
        CHECK(r.spacing == v.spacing);
        CHECK(r.data == v.data);
    }

    SECTION("spacing survives bit-exact") {
        Volume v = Volume::filled({3, 2, 1}, {1.5, 0.1, 3.0000000000000004}, 0.5);
        write_volume(v, tmp.file("v.rvol"));
        Volume r = read_volume(tmp.file("v.rvol"));
        CHECK(r.spacing[0] == 1.5);
        CHECK(r.spacing[1] == 0.1);
        CHECK(r.spacing[2] == 3.0000000000000004);
    }

    SECTION("file bytes are stable across write/read/write") {
        Rng rng(7);
        Volume v = Volume::filled({4, 3, 2}, {1.5, 1.5, 1.5}, 0.0);
        for (auto& d : v.data) d = rng.uniform(0.0, 2.0);
        write_volume(v, tmp.file("a.rvol"));
        write_volume(read_volume(tmp.file("a.rvol")), tmp.file("b.rvol"));
        CHECK(read_file_bytes(tmp.file("a.rvol")) == read_file_bytes(tmp.file("b.rvol")));
    }

    SECTION("short payload is rejected") {
        Volume v = Volume::filled({2, 2, 2}, {1, 1, 1}, 1.0);
        write_volume(v, tmp.file("v.rvol"));
        std::string bytes = read_file_bytes(tmp.file("v.rvol"));
        write_file_bytes(tmp.file("short.rvol"), bytes.substr(0, bytes.size() - 4));
        CHECK_THROWS_WITH(read_volume(tmp.file("short.rvol")),
                          Catch::Matchers::ContainsSubstring("payload size mismatch"));
    }

    SECTION("non-finite values are rejected on write") {
        Volume v = Volume::filled({2, 2, 2}, {1, 1, 1}, 1.0);
        v.data[3] = std::nan("");
        CHECK_THROWS_WITH(write_volume(v, tmp.file("bad.rvol")),
                          Catch::Matchers::ContainsSubstring("non-finite"));
    }

    SECTION("malformed headers are rejected") {
        write_file_bytes(tmp.file("nohdr.rvol"), std::string(64, '\0'));
        CHECK_THROWS_AS(read_volume(tmp.file("nohdr.rvol")), DataError);
        write_file_bytes(tmp.file("bad.rvol"), "RVOL1 2 2 x 1 1 1 f32\n");
        CHECK_THROWS_AS(read_volume(tmp.file("bad.rvol")), DataError);
        write_file_bytes(tmp.file("neg.rvol"), "RVOL1 2 2 2 -1 1 1 f32\n");
        CHECK_THROWS_WITH(read_volume(tmp.file("neg.rvol")),
                          Catch::Matchers::ContainsSubstring("spacing"));
    }

    SECTION("label volume round-trip") {
        LabelVolume m;
        m.dims = {3, 3, 3};
        m.spacing = {1, 1, 1};
        m.labels.assign(m.size(), 0);
        m.labels[5] = 42;
        write_label_volume(m, tmp.file("m.rvol"));
        LabelVolume r = read_label_volume(tmp.file("m.rvol"));
        CHECK(r.labels == m.labels);
        CHECK_THROWS(read_volume(tmp.file("m.rvol")));  // dtype mismatch
    }
}

TEST_CASE("foreground-mean normalization", "[volume]") {
    SECTION("uniform volume scales to one") {
        Volume v = Volume::filled({4, 4, 4}, {1, 1, 1}, 4.0);
        Volume n = normalize_foreground_mean(v, full_mask(v));
        for (double d : n.data) CHECK(d == 1.0);
    }

    SECTION("foreground {1,3} with background 100 becomes {0.5,1.5}, background 50") {
        Volume v3 = Volume::filled({3, 1, 1}, {1, 1, 1}, 0.0);
        v3.data = {1.0, 3.0, 100.0};
        LabelVolume mask3;
        mask3.dims = v3.dims;
        mask3.spacing = v3.spacing;
        mask3.labels = {1, 1, 0};
        Volume n = normalize_foreground_mean(v3, mask3);
        CHECK(n.data[0] == 0.5);
        CHECK(n.data[1] == 1.5);
        CHECK(n.data[2] == 50.0);
    }

    SECTION("empty mask errors") {
        Volume v = Volume::filled({2, 2, 2}, {1, 1, 1}, 1.0);
        LabelVolume mask = full_mask(v);
        mask.labels.assign(mask.labels.size(), 0);
        CHECK_THROWS_WITH(normalize_foreground_mean(v, mask),
                          Catch::Matchers::ContainsSubstring("empty foreground"));
    }

    SECTION("foreground mean of the result is 1 within 1e-9") {
        Rng rng(3);
        Volume v = Volume::filled({16, 16, 16}, {1.5, 1.5, 1.5}, 0.0);
        for (auto& d : v.data) d = rng.uniform(0.5, 2.5);
        LabelVolume mask = full_mask(v);
        for (size_t i = 0; i < mask.labels.size(); i += 3) mask.labels[i] = 0;
        Volume n = normalize_foreground_mean(v, mask);
        double sum = 0;
        size_t cnt = 0;
        for (size_t i = 0; i < n.data.size(); ++i)
            if (mask.labels[i]) {
                sum += n.data[i];
                ++cnt;
            }
        CHECK(std::fabs(sum / static_cast<double>(cnt) - 1.0) < 1e-9);
    }

    SECTION("normalization is idempotent within 1e-12") {
        Rng rng(4);
        Volume v = Volume::filled({8, 8, 8}, {1, 1, 1}, 0.0);
        for (auto& d : v.data) d = rng.uniform(0.1, 9.0);
        LabelVolume mask = full_mask(v);
        Volume once = normalize_foreground_mean(v, mask);
        Volume twice = normalize_foreground_mean(once, mask);
        for (size_t i = 0; i < once.data.size(); ++i)
            CHECK(std::fabs(twice.data[i] - once.data[i]) <= 1e-12 * std::fabs(once.data[i]));
    }
}

TEST_CASE("gaussian smoothing", "[volume]") {
    SECTION("sigma in voxels matches fwhm/2.3548/spacing") {
        CHECK_THAT(fwhm_to_sigma(8.0) / 1.5, Catch::Matchers::WithinAbs(8.0 / 2.35482 / 1.5, 1e-4));
        CHECK_THAT(fwhm_to_sigma(8.0) / 1.5, Catch::Matchers::WithinAbs(2.265, 5e-4));
    }

    SECTION("uniform volume is unchanged within 1e-9") {
        Volume v = Volume::filled({10, 9, 8}, {1.5, 1.5, 1.5}, 3.25);
        Volume s = gaussian_smooth(v, 8.0);
        for (double d : s.data) CHECK(std::fabs(d - 3.25) < 1e-9);
    }

    SECTION("impulse response matches the separable Gaussian") {
        const double fwhm = 6.0;
        const std::array<double, 3> spacing{2.0, 1.0, 1.5};
        Volume v = Volume::filled({31, 31, 31}, spacing, 0.0);
        v.at(15, 15, 15) = 1.0;
        Volume s = gaussian_smooth(v, fwhm);

        // Direct evaluation of the normalized Gaussian product along each axis.
        auto taps = [&](int axis) {
            double sig = fwhm_to_sigma(fwhm) / spacing[static_cast<size_t>(axis)];
            int radius = std::max(1, static_cast<int>(std::ceil(4.0 * sig)));
            std::vector<double> w(static_cast<size_t>(2 * radius + 1));
            double sum = 0;
            for (int d = -radius; d <= radius; ++d) {
                w[static_cast<size_t>(d + radius)] = std::exp(-0.5 * (d / sig) * (d / sig));
                sum += w[static_cast<size_t>(d + radius)];
            }
            for (auto& x : w) x /= sum;
            return w;
        };
        auto wx = taps(0), wy = taps(1), wz = taps(2);
        auto tap_at = [](const std::vector<double>& w, int offset) {
            int radius = (static_cast<int>(w.size()) - 1) / 2;
            return std::abs(offset) > radius ? 0.0 : w[static_cast<size_t>(offset + radius)];
        };
        for (int dz : {-3, -1, 0, 2})
            for (int dy : {-2, 0, 1, 4})
                for (int dx : {-1, 0, 1, 3}) {
                    double expected = tap_at(wx, dx) * tap_at(wy, dy) * tap_at(wz, dz);
                    CHECK_THAT(s.at(15 + dx, 15 + dy, 15 + dz),
                               Catch::Matchers::WithinAbs(expected, 1e-12));
                }
    }

    SECTION("interior impulse preserves the global sum within 1e-6 relative") {
        Volume v = Volume::filled({41, 41, 41}, {1.5, 1.5, 1.5}, 0.0);
        v.at(20, 20, 20) = 7.0;
        Volume s = gaussian_smooth(v, 8.0);
        double sum = kahan_sum(s.data);
        CHECK(std::fabs(sum - 7.0) < 1e-6 * 7.0);
    }

    SECTION("smoothing never expands the value range") {
        Rng rng(11);
        Volume v = Volume::filled({12, 10, 11}, {1.0, 2.0, 1.5}, 0.0);
        for (auto& d : v.data) d = rng.uniform(-1.0, 5.0);
        double lo = *std::min_element(v.data.begin(), v.data.end());
        double hi = *std::max_element(v.data.begin(), v.data.end());
        Volume s = gaussian_smooth(v, 7.0);
        for (double d : s.data) {
            CHECK(d >= lo - 1e-12);
            CHECK(d <= hi + 1e-12);
        }
    }

    SECTION("fwhm must be positive") {
        Volume v = Volume::filled({2, 2, 2}, {1, 1, 1}, 1.0);
        CHECK_THROWS_AS(gaussian_smooth(v, 0.0), ConfigError);
    }
}
