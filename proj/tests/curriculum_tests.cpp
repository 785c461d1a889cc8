#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "lfc/curriculum.hpp"
#include "lfc/errors.hpp"
#include "lfc/segnet.hpp"
#include "lfc/textio.hpp"
#include "test_support.hpp"

using namespace lfc;
using namespace lfc::test;

TEST_CASE("kl divergence of a map with itself is zero") {
    Rng rng(1);
    const Tensor4 p = random_prob_map(3, 4, 4, rng);
    CHECK(kl_divergence(p, p) >= 0.0);
    CHECK(kl_divergence(p, p) <= 1e-12);
}

TEST_CASE("kl divergence closed form for a single binary pixel") {
    Tensor4 p(1, 2, 1, 1), q(1, 2, 1, 1);
    p.data = {0.5, 0.5};
    q.data = {0.25, 0.75};
    const double want = 0.5 * std::log(2.0) + 0.5 * std::log(2.0 / 3.0);
    CHECK(kl_divergence(p, q) == doctest::Approx(want).epsilon(1e-13));
    CHECK(kl_divergence(p, q) == doctest::Approx(0.14384).epsilon(1e-4));
}

TEST_CASE("kl divergence averages per-pixel contributions") {
    Rng rng(2);
    Tensor4 p(1, 2, 1, 2), q(1, 2, 1, 2);
    // Pixel 0: (0.5,0.5) vs (0.25,0.75); pixel 1: identical distributions.
    p.at(0, 0, 0, 0) = 0.5;
    p.at(0, 1, 0, 0) = 0.5;
    q.at(0, 0, 0, 0) = 0.25;
    q.at(0, 1, 0, 0) = 0.75;
    p.at(0, 0, 0, 1) = 0.3;
    p.at(0, 1, 0, 1) = 0.7;
    q.at(0, 0, 0, 1) = 0.3;
    q.at(0, 1, 0, 1) = 0.7;
    const double k0 = 0.5 * std::log(2.0) + 0.5 * std::log(2.0 / 3.0);
    CHECK(kl_divergence(p, q) == doctest::Approx(k0 / 2.0).epsilon(1e-13));
}

TEST_CASE("kl divergence validates inputs") {
    Rng rng(3);
    const Tensor4 p = random_prob_map(2, 2, 2, rng);
    CHECK_THROWS_AS(kl_divergence(p, random_prob_map(2, 3, 3, rng)), ConfigError);
    Tensor4 bad = p;
    bad.data[0] += 0.1;  // breaks the channel sum
    CHECK_THROWS_AS(kl_divergence(bad, p), ValidationError);
}

TEST_CASE("kl divergence is non-negative and discriminates on random maps") {
    Rng rng(4);
    for (int trial = 0; trial < 1000; ++trial) {
        const Tensor4 p = random_prob_map(3, 3, 3, rng);
        const Tensor4 q = random_prob_map(3, 3, 3, rng);
        const double d = kl_divergence(p, q);
        CHECK(d >= 0.0);
        CHECK(kl_divergence(p, p) <= 1e-12);
        if (p.max_abs_diff(q) > 1e-3) CHECK(d > 0.0);
    }
}

TEST_CASE("kl divergence grows as the target drifts from the source") {
    Rng rng(5);
    const Tensor4 p = random_prob_map(3, 4, 4, rng);
    const Tensor4 q = random_prob_map(3, 4, 4, rng);
    double prev = 0.0;
    for (int step = 1; step <= 4; ++step) {
        const double t = 0.2 * step;
        Tensor4 mix = p;
        for (std::size_t i = 0; i < mix.data.size(); ++i) {
            mix.data[i] = (1.0 - t) * p.data[i] + t * q.data[i];
        }
        const double d = kl_divergence(p, mix);
        CHECK(d > prev);
        prev = d;
    }
}

TEST_CASE("alpha schedule endpoints and decay") {
    CHECK(alpha_schedule(0, 5) == 0.5);
    CHECK(alpha_schedule(5, 5) ==
          doctest::Approx(1.0 - 1.0 / (1.0 + std::exp(-1.0))).epsilon(1e-14));
    CHECK(alpha_schedule(5, 5) == doctest::Approx(0.26894).epsilon(1e-4));
    CHECK(alpha_schedule(10, 5) == doctest::Approx(0.11920).epsilon(1e-4));
    double prev = 1.0;
    for (int r = 0; r <= 20; ++r) {
        const double a = alpha_schedule(r, 5);
        CHECK(a > 0.0);
        CHECK(a <= 0.5);
        CHECK(a < prev);
        prev = a;
    }
    CHECK_THROWS_AS(alpha_schedule(-1, 5), ConfigError);
    CHECK_THROWS_AS(alpha_schedule(0, 0), ConfigError);
}

TEST_CASE("batch weights reproduce the worked two-sample case") {
    const auto w = batch_weights({0.3, 0.1}, 0.5, 1.5);
    REQUIRE(w.size() == 2);
    CHECK(w[0] == doctest::Approx(0.875).epsilon(1e-14));
    CHECK(w[1] == doctest::Approx(1.125).epsilon(1e-14));
}

TEST_CASE("batch weights collapse to ones for equal difficulties or alpha zero") {
    for (double a : {0.1, 0.3, 0.5}) {
        const auto w = batch_weights({0.2, 0.2}, a, 1.5);
        CHECK(w[0] == doctest::Approx(1.0).epsilon(1e-14));
        CHECK(w[1] == doctest::Approx(1.0).epsilon(1e-14));
    }
    const auto w = batch_weights({0.9, 0.1, 0.4}, 0.0, 1.5);
    for (double v : w) CHECK(v == 1.0);
}

TEST_CASE("batch weight sum identity and anti-monotone ordering") {
    Rng rng(6);
    const int sizes[] = {1, 2, 4, 8};
    for (int trial = 0; trial < 1000; ++trial) {
        const int B = sizes[rng.index(4)];
        std::vector<double> d(static_cast<std::size_t>(B));
        for (double& v : d) v = rng.uniform(0.0, 2.0);
        const double alpha = rng.uniform(0.0, 0.5);
        const double delta = 1.5;
        const auto w = batch_weights(d, alpha, delta);
        double sum = 0.0;
        for (double v : w) {
            CHECK(v > 0.0);
            sum += v;
        }
        const double want = alpha * (B * delta - 1.0) + (1.0 - alpha) * B;
        CHECK(std::abs(sum - want) < 1e-12);
        for (std::size_t i = 0; i < d.size(); ++i) {
            for (std::size_t j = 0; j < d.size(); ++j) {
                if (d[i] < d[j] && alpha > 0.0) CHECK(w[i] > w[j]);
            }
        }
    }
}

TEST_CASE("batch weight sum equals B exactly for delta 1.5 and B 2") {
    Rng rng(7);
    for (int trial = 0; trial < 200; ++trial) {
        const double alpha = rng.uniform(0.0, 1.0);
        const auto w = batch_weights({rng.uniform(0.0, 3.0), rng.uniform(0.0, 3.0)}, alpha, 1.5);
        CHECK(std::abs(w[0] + w[1] - 2.0) < 1e-12);
    }
}

TEST_CASE("degenerate all-zero difficulties fall back to uniform ratios") {
    const auto w = batch_weights({0.0, 0.0, 0.0, 0.0}, 0.5, 1.5);
    for (double v : w) CHECK(v == doctest::Approx(1.0 + 0.5 * (1.5 - 0.25) - 0.5).epsilon(1e-14));
    // Sum identity still holds through the fallback.
    double sum = 0.0;
    for (double v : w) sum += v;
    CHECK(std::abs(sum - (0.5 * (4 * 1.5 - 1.0) + 0.5 * 4)) < 1e-12);
}

TEST_CASE("rank_dataset orders by difficulty with deterministic ties") {
    SegNetConfig cfg;
    cfg.base_width = 4;
    cfg.depth = 2;
    auto source = build(cfg, 11);
    source.set_role(Role::source);

    Rng rng(12);
    std::vector<Tensor4> images;
    std::vector<int> ids;
    for (int i = 0; i < 6; ++i) {
        images.push_back(random_tensor(1, 1, 16, 16, rng, 0.0, 1.0));
        ids.push_back(i);
    }

    SUBCASE("identical branches yield zero difficulty in id order") {
        auto twin = source;
        twin.set_role(Role::target);
        const auto ranking = rank_dataset(source, twin, images, ids);
        for (std::size_t i = 0; i < ranking.size(); ++i) {
            CHECK(ranking[i].sample_id == static_cast<int>(i));
            CHECK(ranking[i].difficulty <= 1e-12);
        }
    }

    SUBCASE("ranking is deterministic, ascending, and matches recomputation") {
        auto target = build(cfg, 13);
        const auto a = rank_dataset(source, target, images, ids);
        const auto b = rank_dataset(source, target, images, ids);
        REQUIRE(a.size() == b.size());
        for (std::size_t i = 0; i < a.size(); ++i) {
            CHECK(a[i].sample_id == b[i].sample_id);
            CHECK(a[i].difficulty == b[i].difficulty);
            if (i > 0) CHECK(a[i].difficulty >= a[i - 1].difficulty);
        }
        for (const auto& r : a) {
            const auto& img = images[static_cast<std::size_t>(r.sample_id)];
            const Tensor4 ps =
                softmax_channels(constant(forward(source, img, BnMode::eval)))->value;
            const Tensor4 pt =
                softmax_channels(constant(forward(target, img, BnMode::eval)))->value;
            CHECK(r.difficulty == doctest::Approx(kl_divergence(ps, pt)).epsilon(1e-13));
        }
    }

    SUBCASE("empty dataset is rejected") {
        auto target = build(cfg, 13);
        CHECK_THROWS_AS(rank_dataset(source, target, {}, {}), DegenerateInputError);
    }
}

TEST_CASE("ranking csv export lists sample_id,difficulty in rank order") {
    namespace fs = std::filesystem;
    const fs::path dir = fs::temp_directory_path() / "lfc_rank_test";
    fs::create_directories(dir);
    write_ranking_csv({{4, 0.25}, {2, 0.5}}, dir / "r.csv");
    const std::string text = read_text_file(dir / "r.csv");
    CHECK(text == "sample_id,difficulty\n4,0.25\n2,0.5\n");
    fs::remove_all(dir);
}
