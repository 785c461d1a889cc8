#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <set>

#include "lfc/errors.hpp"
#include "lfc/metrics.hpp"
#include "lfc/synth.hpp"
#include "lfc/textio.hpp"
#include "test_support.hpp"

using namespace lfc;
using namespace lfc::test;

namespace {

namespace fs = std::filesystem;

struct TempDir {
    fs::path path;
    explicit TempDir(const char* name) : path(fs::temp_directory_path() / name) {
        fs::remove_all(path);
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
};

DomainSpec clean_spec() {
    DomainSpec s;
    s.name = "clean";
    s.background_level = 0.2;
    s.disc_level = 0.5;
    s.cup_level = 0.8;
    s.contrast_gamma = 1.0;
    s.noise_sigma = 0.0;
    s.blur_radius = 0;
    s.vignette_strength = 0.0;
    return s;
}

}  // namespace

TEST_CASE("generation is deterministic and independent of n") {
    const auto a = generate(default_target_spec(), 5, 7);
    const auto b = generate(default_target_spec(), 5, 7);
    const auto c = generate(default_target_spec(), 3, 7);
    for (int i = 0; i < 3; ++i) {
        CHECK(a[static_cast<std::size_t>(i)].image.max_abs_diff(
                  b[static_cast<std::size_t>(i)].image) == 0.0);
        CHECK(a[static_cast<std::size_t>(i)].image.max_abs_diff(
                  c[static_cast<std::size_t>(i)].image) == 0.0);
        CHECK(a[static_cast<std::size_t>(i)].label.max_abs_diff(
                  c[static_cast<std::size_t>(i)].label) == 0.0);
    }
}

TEST_CASE("a clean render uses at most three intensity levels") {
    const auto samples = generate(clean_spec(), 4, 9);
    for (const Sample& s : samples) {
        std::set<double> levels(s.image.data.begin(), s.image.data.end());
        CHECK(levels.size() <= 3);
    }
}

TEST_CASE("cup geometry nests strictly inside the disc") {
    const auto samples = generate(default_source_spec(), 25, 11);
    for (const Sample& s : samples) {
        int cup = 0, disc = 0;
        for (double v : s.label.data) {
            cup += v == 2.0;
            disc += v == 1.0 || v == 2.0;
            CHECK((v == 0.0 || v == 1.0 || v == 2.0));
        }
        CHECK(cup >= 1);
        CHECK(cup < disc);
        // No cup pixel touches background: the disc ring is at least 1px wide.
        for (int y = 0; y < kImageSize; ++y) {
            for (int x = 0; x < kImageSize; ++x) {
                if (s.label.at(0, 0, y, x) != 2.0) continue;
                for (auto [dy, dx] : {std::pair{-1, 0}, {1, 0}, {0, -1}, {0, 1}}) {
                    const int yy = y + dy, xx = x + dx;
                    REQUIRE(yy >= 0);
                    REQUIRE(yy < kImageSize);
                    REQUIRE(xx >= 0);
                    REQUIRE(xx < kImageSize);
                    CHECK(s.label.at(0, 0, yy, xx) != 0.0);
                }
            }
        }
    }
}

TEST_CASE("pgm round trip preserves quantized values") {
    TempDir dir("lfc_pgm_test");
    const auto samples = generate(default_target_spec(), 2, 13);
    for (const Sample& s : samples) {
        write_sample(s, dir.path);
        const Sample back = read_sample(dir.path, s.sample_id);
        CHECK(back.label.max_abs_diff(s.label) == 0.0);
        for (std::size_t i = 0; i < s.image.data.size(); ++i) {
            const double q = std::round(s.image.data[i] * 65535.0) / 65535.0;
            CHECK(std::abs(back.image.data[i] - q) < 1e-12);
        }
        // Writing the re-read sample again is byte-identical.
        char name[32];
        std::snprintf(name, sizeof(name), "img_%05d.pgm", s.sample_id);
        const std::string first = read_text_file(dir.path / name);
        write_sample(back, dir.path);
        CHECK(read_text_file(dir.path / name) == first);
    }
}

TEST_CASE("image payload is exactly two bytes per pixel") {
    TempDir dir("lfc_pgm_size_test");
    const auto samples = generate(clean_spec(), 1, 15);
    write_sample(samples[0], dir.path);
    char name[32];
    std::snprintf(name, sizeof(name), "img_%05d.pgm", samples[0].sample_id);
    const std::string bytes = read_text_file(dir.path / name);
    const std::string header = "P5\n64 64\n65535\n";
    CHECK(bytes.size() == header.size() + 64 * 64 * 2);
}

TEST_CASE("an all-background label encodes as zero bytes after the header") {
    TempDir dir("lfc_pgm_zero_test");
    Sample s;
    s.sample_id = 3;
    s.image = Tensor4(1, 1, 64, 64, 0.5);
    s.label = Tensor4(1, 1, 64, 64, 0.0);
    write_sample(s, dir.path);
    const std::string bytes = read_text_file(dir.path / "lbl_00003.pgm");
    const std::string header = "P5\n64 64\n255\n";
    REQUIRE(bytes.size() == header.size() + 64 * 64);
    for (std::size_t i = header.size(); i < bytes.size(); ++i) CHECK(bytes[i] == 0);
}

TEST_CASE("malformed pgm files raise distinct errors") {
    TempDir dir("lfc_pgm_err_test");
    write_text_file(dir.path / "img_00000.pgm", "P6\n2 2\n65535\ngarbage!");
    write_text_file(dir.path / "lbl_00000.pgm", std::string("P5\n2 2\n255\n\0\0\0\0", 13));
    CHECK_THROWS_WITH_AS(read_sample(dir.path, 0), doctest::Contains("malformed"), IoError);

    write_text_file(dir.path / "img_00001.pgm",
                    std::string("P5\n2 2\n255\n\0\0\0\0\0\0\0\0", 20));
    write_text_file(dir.path / "lbl_00001.pgm", std::string("P5\n2 2\n255\n\0\0\0\0", 13));
    CHECK_THROWS_WITH_AS(read_sample(dir.path, 1), doctest::Contains("maxval"), IoError);

    write_text_file(dir.path / "img_00002.pgm", std::string("P5\n2 2\n65535\n\0\0\0", 17));
    write_text_file(dir.path / "lbl_00002.pgm", std::string("P5\n2 2\n255\n\0\0\0\0", 13));
    CHECK_THROWS_WITH_AS(read_sample(dir.path, 2), doctest::Contains("size mismatch"), IoError);
}

TEST_CASE("benchmark writes disjoint splits with valid manifests") {
    TempDir dir("lfc_bench_test");
    BenchmarkSizes sizes{6, 4, 3};
    benchmark(default_source_spec(), default_target_spec(), sizes, 17, dir.path, true);

    const Dataset src = load_dataset(dir.path / "source" / "train");
    const Dataset ttr = load_dataset(dir.path / "target" / "train");
    const Dataset tte = load_dataset(dir.path / "target" / "test");
    CHECK(src.images.size() == 6);
    CHECK(ttr.images.size() == 4);
    CHECK(tte.images.size() == 3);

    std::set<int> all_ids;
    for (const auto* ds : {&src, &ttr, &tte}) {
        for (int id : ds->sample_ids) CHECK(all_ids.insert(id).second);
    }
    CHECK(src.manifest.domain == "source");
    CHECK(tte.manifest.split == "test");

    // A second run into the same directory must be refused without force.
    CHECK_THROWS_AS(
        benchmark(default_source_spec(), default_target_spec(), sizes, 17, dir.path, false),
        FsConflictError);

    // Identical photometrics carry no domain shift.
    CHECK_THROWS_AS(
        benchmark(default_source_spec(), default_source_spec(), sizes, 17, dir.path, true),
        ConfigError);
}

TEST_CASE("regeneration from the manifest echo is byte-identical") {
    TempDir dir("lfc_bench_regen_test");
    benchmark(default_source_spec(), default_target_spec(), {3, 2, 2}, 19, dir.path / "a", true);
    const Manifest m = read_manifest(dir.path / "a" / "target" / "test");
    const auto regen = generate(m.spec, static_cast<int>(m.sample_ids.size()), m.seed,
                                m.sample_ids.front());
    TempDir dir2("lfc_bench_regen_test2");
    for (const Sample& s : regen) write_sample(s, dir2.path);
    for (int id : m.sample_ids) {
        char name[32];
        std::snprintf(name, sizeof(name), "img_%05d.pgm", id);
        CHECK(read_text_file(dir.path / "a" / "target" / "test" / name) ==
              read_text_file(dir2.path / name));
    }
}

TEST_CASE("uniformly shifted intensity levels move the mean by the shift") {
    DomainSpec a = clean_spec();
    DomainSpec b = clean_spec();
    const double shift = 0.1;
    b.background_level += shift;
    b.disc_level += shift;
    b.cup_level += shift;
    const auto sa = generate(a, 4, 21);
    const auto sb = generate(b, 4, 21);
    for (std::size_t i = 0; i < sa.size(); ++i) {
        double mean_a = 0.0, mean_b = 0.0;
        for (double v : sa[i].image.data) mean_a += v;
        for (double v : sb[i].image.data) mean_b += v;
        mean_a /= static_cast<double>(sa[i].image.data.size());
        mean_b /= static_cast<double>(sb[i].image.data.size());
        CHECK(mean_b - mean_a == doctest::Approx(shift).epsilon(1e-9));
    }
}

TEST_CASE("dice identities, disjoint masks, and the 2/3 case") {
    SegMask a(4, 4), b(4, 4);
    a.at(0, 0) = 1;
    a.at(0, 1) = 1;
    b.at(0, 0) = 1;
    CHECK(dice(a, a, 1) == 1.0);
    CHECK(dice(a, b, 1) == doctest::Approx(2.0 / 3.0).epsilon(1e-14));
    SegMask c(4, 4);
    c.at(3, 3) = 1;
    CHECK(dice(a, c, 1) == 0.0);
    CHECK(dice(SegMask(4, 4), SegMask(4, 4), 1) == 1.0);  // both empty
    CHECK_THROWS_AS(dice(a, SegMask(3, 3), 1), ConfigError);
}

TEST_CASE("asd identities and the single-pixel distance") {
    SegMask a(5, 8), b(5, 8);
    a.at(2, 2) = 1;
    b.at(2, 5) = 1;
    CHECK(asd(a, a, 1) == 0.0);
    CHECK(asd(a, b, 1) == doctest::Approx(3.0).epsilon(1e-14));
    CHECK_FALSE(asd(a, SegMask(5, 8), 1).has_value());
}

TEST_CASE("asd is symmetric and bounded under one-pixel dilation") {
    Rng rng(23);
    for (int trial = 0; trial < 50; ++trial) {
        const SegMask a = random_blob_mask(12, 12, rng);
        const SegMask b = random_blob_mask(12, 12, rng);
        const auto ab = asd(a, b, 1);
        const auto ba = asd(b, a, 1);
        CHECK(ab.has_value() == ba.has_value());
        if (ab) CHECK(*ab == doctest::Approx(*ba).epsilon(1e-14));

        SegMask dilated = a;
        for (int y = 0; y < a.h; ++y) {
            for (int x = 0; x < a.w; ++x) {
                if (a.at(y, x) != 1) continue;
                if (y > 0) dilated.at(y - 1, x) = 1;
                if (y + 1 < a.h) dilated.at(y + 1, x) = 1;
                if (x > 0) dilated.at(y, x - 1) = 1;
                if (x + 1 < a.w) dilated.at(y, x + 1) = 1;
            }
        }
        const auto d = asd(a, dilated, 1);
        if (d) CHECK(*d <= 1.5);
    }
}

TEST_CASE("dice and asd match their brute-force references exactly") {
    Rng rng(25);
    for (int trial = 0; trial < 200; ++trial) {
        const SegMask a = trial % 2 == 0 ? random_mask(16, 16, 2, rng)
                                         : random_blob_mask(16, 16, rng);
        const SegMask b = trial % 2 == 0 ? random_mask(16, 16, 2, rng)
                                         : random_blob_mask(16, 16, rng);
        CHECK(dice(a, b, 1) == dice_reference(a, b, 1));
        const auto got = asd(a, b, 1);
        const auto want = asd_reference(a, b, 1);
        REQUIRE(got.has_value() == want.has_value());
        if (got) CHECK(*got == *want);
    }
}

TEST_CASE("report aggregates with population statistics") {
    // Three pred/gt pairs engineered to dice 0.5, 0.7, 0.9 for class 1.
    auto strip = [](int from, int to) {
        SegMask m(1, 20);
        for (int x = from; x < to; ++x) m.at(0, x) = 1;
        return m;
    };
    const SegMask gt = strip(0, 10);
    std::vector<std::pair<SegMask, SegMask>> pairs = {
        {strip(5, 15), gt}, {strip(3, 13), gt}, {strip(1, 11), gt}};
    const MetricReport rep = report(pairs, {1});
    REQUIRE(rep.classes.size() == 1);
    CHECK(rep.classes[0].dice_mean == doctest::Approx(0.7).epsilon(1e-14));
    CHECK(rep.classes[0].dice_std == doctest::Approx(0.16329931618554522).epsilon(1e-12));
    CHECK(rep.classes[0].dice_n == 3);

    // A single sample has zero std; duplicating samples keeps mean and std.
    const MetricReport one = report({pairs[0]}, {1});
    CHECK(one.classes[0].dice_std == 0.0);
    std::vector<std::pair<SegMask, SegMask>> doubled = pairs;
    doubled.insert(doubled.end(), pairs.begin(), pairs.end());
    const MetricReport two = report(doubled, {1});
    CHECK(two.classes[0].dice_mean == doctest::Approx(rep.classes[0].dice_mean).epsilon(1e-14));
    CHECK(two.classes[0].dice_std == doctest::Approx(rep.classes[0].dice_std).epsilon(1e-14));
}

TEST_CASE("report csv carries classes x metrics rows and the paper-style format") {
    SegMask a(4, 4);
    a.at(1, 1) = 1;
    a.at(2, 2) = 2;
    const MetricReport rep = report({{a, a}}, {1, 2});
    const std::string csv = rep.to_csv();
    int lines = 0;
    for (char ch : csv) lines += ch == '\n';
    CHECK(lines == 1 + 2 * 2);  // header + classes x metrics
    CHECK(fmt_mean_std(0.8318, 0.0646, 100.0) == "83.18±6.46");
}
