// Acceptance suite: one pass/fail line per criterion, nonzero exit on any
// failure. Oracles here are deliberately naive re-implementations.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <string>
#include <vector>

#include "iuf/data_synth.hpp"
#include "iuf/eval.hpp"
#include "iuf/losses.hpp"
#include "iuf/model.hpp"
#include "iuf/optimizer.hpp"
#include "iuf/rng.hpp"
#include "iuf/trainer.hpp"

using namespace iuf;
namespace fs = std::filesystem;

namespace {

// Calibrated once from five seeded single-object runs (seeds 1..5, defaults);
// observed minimum image AUROC was well above this. See README.
constexpr double kDetectionThreshold = 0.85;

int g_failed = 0;

struct Timer {
    std::chrono::steady_clock::time_point start = std::chrono::steady_clock::now();
    double seconds() const {
        return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    }
};

void report(int criterion, bool pass, const std::string& detail) {
    std::printf("[%s] criterion %2d: %s\n", pass ? "PASS" : "FAIL", criterion, detail.c_str());
    std::fflush(stdout);
    if (!pass) ++g_failed;
}

Mat random_mat(Rng& rng, int rows, int cols, double scale = 1.0) {
    Mat m(rows, cols);
    for (int i = 0; i < rows; ++i)
        for (int j = 0; j < cols; ++j) m(i, j) = scale * rng.gaussian();
    return m;
}

// plain softmax(Q K^T / sqrt(d)) V, written without the library path
Mat naive_attention(const Mat& q, const Mat& k, const Mat& v) {
    const auto L = q.rows();
    const auto d = q.cols();
    Mat out(L, v.cols());
    for (Eigen::Index i = 0; i < L; ++i) {
        std::vector<double> s(k.rows());
        double mx = -1e300;
        for (Eigen::Index j = 0; j < k.rows(); ++j) {
            double acc = 0;
            for (Eigen::Index m = 0; m < d; ++m) acc += q(i, m) * k(j, m);
            s[j] = acc / std::sqrt(static_cast<double>(d));
            mx = std::max(mx, s[j]);
        }
        double z = 0;
        for (double& x : s) {
            x = std::exp(x - mx);
            z += x;
        }
        for (Eigen::Index c = 0; c < v.cols(); ++c) {
            double acc = 0;
            for (Eigen::Index j = 0; j < k.rows(); ++j) acc += (s[j] / z) * v(j, c);
            out(i, c) = acc;
        }
    }
    return out;
}

std::string read_text(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

fs::path fresh_dir(const std::string& name) {
    fs::path dir = fs::temp_directory_path() / name;
    fs::remove_all(dir);
    return dir;
}

char buf[256];

void criteria_1_and_2() {
    Timer t;
    Rng rng(1001);
    double worst_diff = 0.0, worst_rowsum = 0.0;
    for (int trial = 0; trial < 100; ++trial) {
        int L = rng.uniform_int(1, 16), d = rng.uniform_int(1, 32);
        Mat q = random_mat(rng, L, d), k = random_mat(rng, L, d), v = random_mat(rng, L, d);
        OasaResult res = oasa_attention(Mat::Ones(1, d), q, k, v);
        worst_diff = std::max(worst_diff, (res.out - naive_attention(q, k, v)).cwiseAbs().maxCoeff());
        for (Eigen::Index i = 0; i < L; ++i)
            worst_rowsum = std::max(worst_rowsum, std::abs(res.attn.row(i).sum() - 1.0));
    }
    double secs = t.seconds();
    std::snprintf(buf, sizeof(buf),
                  "OASA identity reduction: max |diff| = %.2e over 100 instances (%.2fs)", worst_diff,
                  secs);
    report(1, worst_diff < 1e-6 && secs < 1.0, buf);
    std::snprintf(buf, sizeof(buf), "attention rows sum to 1: max |rowsum-1| = %.2e", worst_rowsum);
    report(2, worst_rowsum < 1e-6, buf);
}

void criterion_3() {
    Timer t;
    Rng rng(1003);
    LossWeights w;
    w.lambda0 = 1.0;
    w.lambda1 = 0.5;
    w.lambda2 = 0.2;
    double worst = 0.0;
    for (int trial = 0; trial < 20; ++trial) {
        // build a 4x8 aggregate with singular-value gaps > 1e-2
        SvdResult base = svd_decompose(random_mat(rng, 4, 8));
        Vec s(4);
        for (int i = 0; i < 4; ++i) s[i] = 5.0 - 1.1 * i + 0.4 * rng.uniform();
        Mat sigma = Mat::Zero(4, 8);
        for (int i = 0; i < 4; ++i) sigma(i, i) = s[i];
        Mat rows = base.U * sigma * base.Vt;

        std::vector<Mat> x_hat(4), x_target(4);
        for (int b = 0; b < 4; ++b) {
            x_hat[b] = random_mat(rng, 3, 5);
            x_target[b] = random_mat(rng, 3, 5);
        }
        Mat logits = random_mat(rng, 4, 6);
        std::vector<int> labels = {0, 1, 2, 3};
        auto to_latent = [](const Mat& m) {
            Latent l(static_cast<int>(m.rows()), static_cast<int>(m.cols()), 1, 1);
            for (int b = 0; b < l.batch; ++b)
                for (int c = 0; c < l.channels; ++c) l.at(b, c, 0, 0) = m(b, c);
            return l;
        };

        TotalLossGrads grads;
        total_loss(x_hat, x_target, logits, labels, to_latent(rows), w, &grads);
        const double h = 1e-6;
        for (int b = 0; b < 4; ++b)
            for (int c = 0; c < 8; ++c) {
                Mat plus = rows, minus = rows;
                plus(b, c) += h;
                minus(b, c) -= h;
                double fd = (total_loss(x_hat, x_target, logits, labels, to_latent(plus), w).total -
                             total_loss(x_hat, x_target, logits, labels, to_latent(minus), w).total) /
                            (2 * h);
                double an = grads.d_latent.at(b, c, 0, 0);
                worst = std::max(worst, std::abs(fd - an) / std::max({std::abs(fd), std::abs(an), 1e-8}));
            }
    }
    double secs = t.seconds();
    std::snprintf(buf, sizeof(buf),
                  "SCL/total-loss gradient vs central differences: worst rel err = %.2e (%.2fs)", worst,
                  secs);
    report(3, worst < 1e-3 && secs < 10.0, buf);
}

void criterion_4() {
    Timer t;
    Rng rng(1004);
    double worst_ortho = 0.0, worst_recon = 0.0;
    bool ordered = true;
    for (int trial = 0; trial < 1000; ++trial) {
        int rows = rng.uniform_int(1, 12), cols = rng.uniform_int(1, 12);
        Mat m = random_mat(rng, rows, cols, 2.0);
        SvdResult svd = svd_decompose(m);
        worst_ortho = std::max(
            worst_ortho,
            (svd.U.transpose() * svd.U - Mat::Identity(rows, rows)).cwiseAbs().maxCoeff());
        worst_ortho = std::max(
            worst_ortho,
            (svd.Vt * svd.Vt.transpose() - Mat::Identity(cols, cols)).cwiseAbs().maxCoeff());
        for (Eigen::Index i = 0; i + 1 < svd.S.size(); ++i)
            if (svd.S[i] < svd.S[i + 1]) ordered = false;
        if (svd.S.size() > 0 && svd.S[svd.S.size() - 1] < 0) ordered = false;
        Mat sigma = Mat::Zero(rows, cols);
        for (Eigen::Index i = 0; i < svd.S.size(); ++i) sigma(i, i) = svd.S[i];
        worst_recon =
            std::max(worst_recon, (svd.U * sigma * svd.Vt - m).norm() / std::max(1e-12, m.norm()));
    }
    double secs = t.seconds();
    std::snprintf(buf, sizeof(buf),
                  "SVD properties on 1000 matrices: ortho %.2e, recon %.2e, ordered %s (%.2fs)",
                  worst_ortho, worst_recon, ordered ? "yes" : "NO", secs);
    report(4, worst_ortho < 1e-6 && worst_recon < 1e-6 && ordered && secs < 30.0, buf);
}

void criterion_5() {
    Rng rng(1005);
    double worst_reduction = 0.0, worst_protection = 0.0;
    for (int trial = 0; trial < 100; ++trial) {
        const int c = rng.uniform_int(2, 8), w = rng.uniform_int(1, 6);
        std::vector<double> theta(static_cast<size_t>(c) * w), grad(theta.size());
        for (auto& v : theta) v = rng.gaussian();
        for (auto& v : grad) v = rng.gaussian();

        // reduction: beta = 0, unit multipliers, identity basis
        SemanticBasis identity;
        identity.vt_old = Mat::Identity(c, c);
        identity.s_old = Vec::Ones(c);
        identity.theta_old.assign(theta.size(), 0.0);
        UpdateConfig cfg;
        cfg.alpha = 0.31;
        cfg.beta = 0.0;
        std::vector<double> got = theta, expect = theta;
        reinforced_step(MatMap(got.data(), c, w), ConstMatMap(grad.data(), c, w),
                        ConstMatMap(identity.theta_old.data(), c, w), identity, cfg, Vec::Ones(c), true);
        vanilla_step(MatMap(expect.data(), c, w), ConstMatMap(grad.data(), c, w), cfg.alpha);
        for (size_t i = 0; i < got.size(); ++i)
            worst_reduction = std::max(worst_reduction, std::abs(got[i] - expect[i]));

        // protection: m_1 = 0 with a random orthonormal basis
        SemanticBasis basis;
        basis.vt_old = svd_decompose(random_mat(rng, c, c)).Vt;
        basis.s_old = Vec::Ones(c);
        basis.theta_old.assign(theta.size(), 0.0);
        Vec m = Vec::Ones(c);
        m[0] = 0.0;
        std::vector<double> delta(theta.size(), 0.0);
        reinforced_step(MatMap(delta.data(), c, w), ConstMatMap(grad.data(), c, w),
                        ConstMatMap(basis.theta_old.data(), c, w), basis, cfg, m, true);
        ConstMatMap d(delta.data(), c, w);
        for (int col = 0; col < w; ++col)
            worst_protection = std::max(worst_protection, std::abs(basis.vt_old.row(0).dot(d.col(col))));
    }
    std::snprintf(buf, sizeof(buf),
                  "optimizer reduction %.2e, blocked-channel component %.2e over 100 pairs",
                  worst_reduction, worst_protection);
    report(5, worst_reduction < 1e-7 && worst_protection < 1e-7, buf);
}

void criterion_6() {
    Rng rng(1006);
    double worst = 0.0;
    for (int trial = 0; trial < 200; ++trial) {
        int n = rng.uniform_int(4, 80);
        std::vector<double> scores(n);
        std::vector<std::uint8_t> labels(n);
        bool has0 = false, has1 = false;
        for (int i = 0; i < n; ++i) {
            scores[i] = rng.uniform_int(0, 10) / 10.0;  // many ties
            labels[i] = static_cast<std::uint8_t>(rng.uniform() < 0.5);
            (labels[i] ? has1 : has0) = true;
        }
        if (!has0) labels[0] = 0;
        if (!has1) labels[n - 1] = 1;

        double wins = 0.0;
        size_t pairs = 0;
        for (int i = 0; i < n; ++i) {
            if (!labels[i]) continue;
            for (int j = 0; j < n; ++j) {
                if (labels[j]) continue;
                ++pairs;
                wins += scores[i] > scores[j] ? 1.0 : (scores[i] == scores[j] ? 0.5 : 0.0);
            }
        }
        worst = std::max(worst, std::abs(auroc(scores, labels) - wins / pairs));
    }
    std::snprintf(buf, sizeof(buf), "AUROC vs pairwise oracle: worst |diff| = %.2e over 200 sets", worst);
    report(6, worst < 1e-12, buf);
}

void criterion_7() {
    bool pass = true;
    pass &= std::abs(acc({0.8, 0.85}) - 0.825) < 1e-15;
    ScoreMatrix two;
    two.pixel = {{0.9}, {0.8}};
    two.image = two.pixel;
    pass &= std::abs(fm(two, Level::pixel) - 0.1) < 1e-15;
    ScoreMatrix improving;
    improving.image = {{0.5}, {0.9}};
    improving.pixel = improving.image;
    double neg = fm(improving, Level::image);
    pass &= neg < 0.0 && std::isfinite(neg);  // negative FM is a legal output
    std::snprintf(buf, sizeof(buf), "ACC(0.8,0.85)=0.825, FM(0.9->0.8)=0.1, negative FM legal (%.2f)",
                  neg);
    report(7, pass, buf);
}

void criterion_8() {
    Timer t;
    int wins = 0;
    double px_full = 0.0, px_naive = 0.0;
    const int seeds[5] = {1, 2, 3, 4, 5};
    for (int seed : seeds) {
        RunConfig cfg;
        cfg.protocol = "3-1";
        cfg.objects = 4;
        cfg.seed = static_cast<std::uint64_t>(seed);
        cfg.epochs_per_step = 30;
        cfg.threads = 2;
        // the regression regime: enough plasticity that naive fine-tuning
        // actually forgets, and test splits wide enough to resolve the gap
        cfg.update.alpha = 1e-2;
        cfg.test_normal_per_object = 20;
        cfg.test_defective_per_object = 20;
        RunConfig naive = ablate(ablate(ablate(cfg, "us"), "scl"), "oasa");

        RunResult full = run_incremental(cfg, fresh_dir("iuf_acc8_full_" + std::to_string(seed)));
        RunResult base = run_incremental(naive, fresh_dir("iuf_acc8_naive_" + std::to_string(seed)));

        double fm_full = fm(full.scores, Level::image);
        double fm_naive = fm(base.scores, Level::image);
        if (fm_full < fm_naive) ++wins;
        for (int id = 0; id < 3; ++id) {
            px_full += *full.scores.pixel[1][id] / 15.0;
            px_naive += *base.scores.pixel[1][id] / 15.0;
        }
        std::printf("    seed %d: image FM full=%.4f naive=%.4f\n", seed, fm_full, fm_naive);
        std::fflush(stdout);
    }
    double secs = t.seconds();
    std::snprintf(buf, sizeof(buf),
                  "forgetting regression: full beats naive FM in %d/5 seeds, step-1 pixel %.4f vs %.4f "
                  "(%.0fs)",
                  wins, px_full, px_naive, secs);
    report(8, wins >= 4 && px_full > px_naive && secs < 900.0, buf);
}

void criterion_9() {
    Timer t;
    double min_auroc = 1.0;
    for (int seed = 1; seed <= 5; ++seed) {
        RunConfig cfg;
        cfg.protocol = "1";
        cfg.objects = 1;
        cfg.seed = static_cast<std::uint64_t>(seed);
        cfg.threads = 2;
        RunResult res = run_incremental(cfg, fresh_dir("iuf_acc9_" + std::to_string(seed)));
        min_auroc = std::min(min_auroc, *res.scores.image[0][0]);
    }
    std::snprintf(buf, sizeof(buf),
                  "detection sanity: min image AUROC over 5 seeds = %.3f (threshold %.2f, %.0fs)",
                  min_auroc, kDetectionThreshold, t.seconds());
    report(9, min_auroc >= kDetectionThreshold, buf);
}

void criterion_10() {
    RunConfig cfg;
    cfg.protocol = "2-1";
    cfg.objects = 3;
    cfg.seed = 11;
    cfg.epochs_per_step = 3;
    cfg.train_per_object = 8;
    cfg.test_normal_per_object = 3;
    cfg.test_defective_per_object = 3;
    cfg.threads = 2;
    fs::path a = fresh_dir("iuf_acc10_a"), b = fresh_dir("iuf_acc10_b");
    run_incremental(cfg, a);
    run_incremental(cfg, b);
    bool same = read_text(a / "metrics.csv") == read_text(b / "metrics.csv");
    std::snprintf(buf, sizeof(buf), "determinism: metrics.csv byte-identical across two runs: %s",
                  same ? "yes" : "NO");
    report(10, same, buf);
}

}  // namespace

int main() {
    criteria_1_and_2();
    criterion_3();
    criterion_4();
    criterion_5();
    criterion_6();
    criterion_7();
    criterion_8();
    criterion_9();
    criterion_10();
    if (g_failed == 0) {
        std::printf("all acceptance criteria passed\n");
        return 0;
    }
    std::printf("%d acceptance criteria failed\n", g_failed);
    return 1;
}
