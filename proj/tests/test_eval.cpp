#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "iuf/common.hpp"
#include "iuf/eval.hpp"
#include "iuf/image_io.hpp"
#include "iuf/rng.hpp"

using namespace iuf;
namespace fs = std::filesystem;

namespace {

// O(n^2) pairwise oracle, ties counted one half
double auroc_oracle(const std::vector<double>& scores, const std::vector<std::uint8_t>& labels) {
    double wins = 0.0;
    size_t pairs = 0;
    for (size_t i = 0; i < scores.size(); ++i) {
        if (!labels[i]) continue;
        for (size_t j = 0; j < scores.size(); ++j) {
            if (labels[j]) continue;
            ++pairs;
            if (scores[i] > scores[j]) wins += 1.0;
            else if (scores[i] == scores[j]) wins += 0.5;
        }
    }
    return wins / static_cast<double>(pairs);
}

std::vector<char> read_bytes(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace

TEST_SUITE("eval") {
    TEST_CASE("auroc: trivial separations and errors") {
        CHECK(auroc({0.1, 0.2, 0.8, 0.9}, {0, 0, 1, 1}) == 1.0);
        CHECK(auroc({0.9, 0.8, 0.2, 0.1}, {0, 0, 1, 1}) == 0.0);
        CHECK(auroc({0.5, 0.5, 0.5, 0.5}, {0, 1, 0, 1}) == 0.5);
        CHECK_THROWS_AS(auroc({0.1, 0.2}, {1, 1}), NumericError);
        CHECK_THROWS_AS(auroc({0.1, 0.2}, {0, 0}), NumericError);
    }

    TEST_CASE("auroc equals the pairwise oracle on random sets with ties") {
        Rng rng(606);
        for (int trial = 0; trial < 200; ++trial) {
            int n = rng.uniform_int(4, 60);
            std::vector<double> scores(n);
            std::vector<std::uint8_t> labels(n);
            bool has0 = false, has1 = false;
            for (int i = 0; i < n; ++i) {
                // quantized scores force plenty of ties
                scores[i] = rng.uniform_int(0, 8) / 8.0;
                labels[i] = static_cast<std::uint8_t>(rng.uniform() < 0.4 ? 1 : 0);
                (labels[i] ? has1 : has0) = true;
            }
            if (!has0) labels[0] = 0;
            if (!has1) labels[n - 1] = 1;
            CHECK(std::abs(auroc(scores, labels) - auroc_oracle(scores, labels)) < 1e-12);
        }
    }

    TEST_CASE("auroc is invariant under strictly monotone transforms") {
        Rng rng(607);
        std::vector<double> scores(40);
        std::vector<std::uint8_t> labels(40);
        for (int i = 0; i < 40; ++i) {
            scores[i] = rng.uniform(-2.0, 2.0);
            labels[i] = static_cast<std::uint8_t>(i % 3 == 0);
        }
        std::vector<double> transformed = scores;
        for (double& s : transformed) s = std::exp(s);
        CHECK(auroc(scores, labels) == auroc(transformed, labels));
    }

    TEST_CASE("acc: constant row, single entry, hand case") {
        CHECK(acc({0.9, 0.9, 0.9}) == doctest::Approx(0.9).epsilon(1e-15));
        CHECK(acc({0.42}) == 0.42);
        CHECK(acc({0.8, 0.85}) == doctest::Approx(0.825).epsilon(1e-15));
        CHECK_THROWS_AS(acc({0.8, std::nullopt}), ContractError);
        CHECK_THROWS_AS(acc({}), ContractError);
    }

    TEST_CASE("fm: hand case, monotone improvement, negative output is legal") {
        ScoreMatrix two_steps;
        two_steps.pixel = {{0.9, std::nullopt}, {0.8, 0.95}};
        two_steps.image = two_steps.pixel;
        CHECK(fm(two_steps, Level::pixel) == doctest::Approx(0.1).epsilon(1e-15));

        ScoreMatrix improving;
        improving.image = {{0.7, std::nullopt}, {0.9, 0.8}};
        improving.pixel = improving.image;
        CHECK(fm(improving, Level::image) == doctest::Approx(-0.2).epsilon(1e-15));

        ScoreMatrix single;
        single.pixel = {{0.9}};
        single.image = single.pixel;
        CHECK_THROWS_AS(fm(single, Level::pixel), NumericError);

        // multi-object steps: mean over tasks introduced before the final step
        ScoreMatrix multi;
        multi.pixel = {{0.9, 0.7, std::nullopt}, {0.8, 0.9, 0.6}};
        multi.image = multi.pixel;
        CHECK(fm(multi, Level::pixel) == doctest::Approx(((0.9 - 0.8) + (0.7 - 0.9)) / 2.0).epsilon(1e-15));
    }

    TEST_CASE("acc and fm are stable under task permutations") {
        std::vector<std::optional<double>> row = {0.7, 0.9, 0.8};
        std::vector<std::optional<double>> permuted = {0.9, 0.8, 0.7};
        CHECK(acc(row) == doctest::Approx(acc(permuted)).epsilon(1e-15));

        ScoreMatrix a, b;
        a.pixel = {{0.9, 0.7, std::nullopt}, {0.8, 0.9, 0.6}};
        b.pixel = {{0.7, 0.9, std::nullopt}, {0.9, 0.8, 0.6}};  // first two tasks swapped
        a.image = a.pixel;
        b.image = b.pixel;
        CHECK(fm(a, Level::pixel) == doctest::Approx(fm(b, Level::pixel)).epsilon(1e-15));
    }

    TEST_CASE("evaluate_step: perfect maps, absent cells, training isolation") {
        ModelConfig mc;
        mc.image_size = 16;
        mc.patch = 8;
        mc.embed_dim = 8;
        mc.latent_channels = 6;
        mc.n_max = 4;
        mc.mlp_hidden = 12;
        mc.target_dim = 10;
        Model model(mc, 5);

        Rng rng(8);
        auto make_sample = [&](Label label) {
            Sample s;
            s.image = Image(3, 16, 16);
            for (auto& v : s.image.data) v = rng.uniform();
            s.object_id = 0;
            s.label = label;
            s.mask = Mask(16, 16);
            if (label == Label::defective)
                for (int k = 0; k < 12; ++k) s.mask.at(4 + k / 4, 4 + k % 4) = 1;
            return s;
        };

        ObjectDataset ds;
        for (int i = 0; i < 3; ++i) ds.test.push_back(make_sample(Label::normal));
        for (int i = 0; i < 3; ++i) ds.test.push_back(make_sample(Label::defective));
        // poisoned training split: any access would throw a resolution mismatch
        Sample poison;
        poison.image = Image(3, 4, 4);
        poison.label = Label::normal;
        poison.mask = Mask(4, 4);
        ds.train.push_back(poison);

        EvalConfig ecfg;
        auto evals = evaluate_step(model, {0}, {&ds}, ecfg, 2);
        REQUIRE(evals.size() == 1);
        CHECK(evals[0].pixel_auroc.has_value());
        CHECK(evals[0].image_auroc.has_value());

        // row length equals the number of seen objects
        ObjectDataset ds2 = ds;
        auto multi = evaluate_step(model, {0, 1}, {&ds, &ds2}, ecfg, 2);
        CHECK(multi.size() == 2);

        // object without defective test samples comes back absent
        ObjectDataset only_normal;
        only_normal.test.push_back(make_sample(Label::normal));
        auto absent = evaluate_step(model, {0}, {&only_normal}, ecfg, 1);
        CHECK_FALSE(absent[0].pixel_auroc.has_value());
        CHECK_FALSE(absent[0].image_auroc.has_value());
    }

    TEST_CASE("random image scores stay near one half (Monte Carlo)") {
        // null distribution of AUROC on 10 vs 10 random scores; the pairwise
        // U statistic has sd ~0.13, so [0.3, 0.7] holds ~87% of the time
        Rng rng(909);
        int within = 0;
        const int trials = 300;
        for (int t = 0; t < trials; ++t) {
            std::vector<double> scores(20);
            std::vector<std::uint8_t> labels(20);
            for (int i = 0; i < 20; ++i) {
                scores[i] = rng.uniform();
                labels[i] = static_cast<std::uint8_t>(i < 10);
            }
            double a = auroc(scores, labels);
            if (a >= 0.3 && a <= 0.7) ++within;
        }
        CHECK(within >= static_cast<int>(0.78 * trials));
        CHECK(within <= trials);
    }

    TEST_CASE("pixel auroc is 1 when scores equal the mask") {
        std::vector<double> scores;
        std::vector<std::uint8_t> labels;
        Mask mask(8, 8);
        for (int k = 0; k < 5; ++k) mask.at(2, 2 + k) = 1;
        for (int y = 0; y < 8; ++y)
            for (int x = 0; x < 8; ++x) {
                scores.push_back(mask.at(y, x));
                labels.push_back(mask.at(y, x));
            }
        CHECK(auroc(scores, labels) == 1.0);
    }

    TEST_CASE("heatmap export: degenerate map, reddest peak, byte-stable") {
        fs::path dir = fs::temp_directory_path() / "iuf_heatmaps";
        fs::remove_all(dir);

        Mat constant = Mat::Constant(8, 8, 3.5);
        export_heatmap(constant, dir / "constant.png");
        // all pixels identical and equal to the colormap at 0
        std::uint8_t cold[3];
        heatmap_color(0.0, cold);
        CHECK(cold[2] == 255);  // bluest entry
        Image back = read_image(dir / "constant.png");
        for (int y = 0; y < 8; ++y)
            for (int x = 0; x < 8; ++x)
                for (int c = 0; c < 3; ++c)
                    CHECK(back.at(c, y, x) == doctest::Approx(cold[c] / 255.0).epsilon(1e-12));

        Mat map = Mat::Zero(8, 8);
        map(3, 4) = 2.0;
        map(0, 0) = 0.5;
        export_heatmap(map, dir / "peak.png");
        Image peak = read_image(dir / "peak.png");
        std::uint8_t hot[3];
        heatmap_color(1.0, hot);
        CHECK(hot[0] == 255);
        CHECK(hot[1] == 0);
        CHECK(hot[2] == 0);
        CHECK(peak.at(0, 3, 4) == doctest::Approx(1.0).epsilon(1e-12));
        CHECK(peak.at(1, 3, 4) == doctest::Approx(0.0).epsilon(1e-12));
        CHECK(peak.at(2, 3, 4) == doctest::Approx(0.0).epsilon(1e-12));

        export_heatmap(map, dir / "peak2.png");
        CHECK(read_bytes(dir / "peak.png") == read_bytes(dir / "peak2.png"));
    }
}
