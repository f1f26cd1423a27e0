#ifndef IUF_LOSSES_HPP
#define IUF_LOSSES_HPP

#include <vector>

#include "iuf/linalg.hpp"

namespace iuf {

// Full SVD: U (m×m) * diag-pad(S) * Vt (n×n) reconstructs the input.
// S holds min(m, n) singular values, descending.
struct SvdResult {
    Mat U;
    Vec S;
    Mat Vt;
};

struct LossWeights {
    double lambda0 = 1.0;   // reconstruction
    double lambda1 = 0.5;   // classification
    double lambda2 = 0.01;  // semantic compression
    double scl_keep_ratio = 0.25;
};

// Batch latent, B×C over an H'×W' grid.
struct Latent {
    int batch = 0, channels = 0, h = 0, w = 0;
    std::vector<double> data;

    Latent() = default;
    Latent(int b, int c, int h_, int w_)
        : batch(b), channels(c), h(h_), w(w_), data(static_cast<size_t>(b) * c * h_ * w_, 0.0) {}

    double& at(int b, int c, int y, int x) {
        return data[((static_cast<size_t>(b) * channels + c) * h + y) * w + x];
    }
    double at(int b, int c, int y, int x) const {
        return data[((static_cast<size_t>(b) * channels + c) * h + y) * w + x];
    }
};

double l1_reconstruction(const Mat& x_hat, const Mat& x_target);
double cross_entropy(const Vec& logits, int label);
Vec softmax(const Vec& logits);

// Mean over the spatial grid per (batch, channel).
Mat spatial_aggregate(const Latent& latent);

SvdResult svd_decompose(const Mat& m_hat);

// Tail sum of singular values, 1-indexed from tail_start.
double semantic_compression_loss(const Vec& singular_values, int tail_start);

// tail_start = floor(k * keep_ratio) + 1, clamped to [1, k].
int scl_tail_start(int k, double keep_ratio);

struct TotalLossValue {
    double total = 0.0;
    double l1 = 0.0;
    double ce = 0.0;
    double scl = 0.0;
    bool scl_skipped = false;  // tail boundary gap below 1e-8: subgradient ambiguous
};

struct TotalLossGrads {
    std::vector<Mat> d_x_hat;  // per sample, same shape as x_hat
    Mat d_logits;              // B×N
    Latent d_latent;
};

// Weighted batch loss: lambda0 * mean-abs + lambda1 * mean-CE + lambda2 * SCL of the
// aggregated latent. Pass grads to also get d/dx_hat, d/dlogits and d/dlatent.
TotalLossValue total_loss(const std::vector<Mat>& x_hat, const std::vector<Mat>& x_target,
                          const Mat& logits, const std::vector<int>& labels, const Latent& latent,
                          const LossWeights& weights, TotalLossGrads* grads = nullptr);

}  // namespace iuf

#endif
