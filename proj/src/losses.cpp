#include "iuf/losses.hpp"

#include <algorithm>
#include <cmath>

#include "iuf/common.hpp"

namespace iuf {

double l1_reconstruction(const Mat& x_hat, const Mat& x_target) {
    if (x_hat.rows() != x_target.rows() || x_hat.cols() != x_target.cols())
        throw ContractError("l1_reconstruction: shape mismatch");
    return (x_hat - x_target).cwiseAbs().mean();
}

Vec softmax(const Vec& logits) {
    double m = logits.maxCoeff();
    Vec e = (logits.array() - m).exp();
    return e / e.sum();
}

double cross_entropy(const Vec& logits, int label) {
    if (label < 0 || label >= logits.size())
        throw ContractError("cross_entropy: label out of range");
    double m = logits.maxCoeff();
    double lse = std::log((logits.array() - m).exp().sum()) + m;
    return lse - logits[label];
}

Mat spatial_aggregate(const Latent& latent) {
    if (latent.h * latent.w < 1) throw ContractError("spatial_aggregate: empty grid");
    Mat out(latent.batch, latent.channels);
    const double inv = 1.0 / (latent.h * latent.w);
    for (int b = 0; b < latent.batch; ++b)
        for (int c = 0; c < latent.channels; ++c) {
            double acc = 0.0;
            for (int y = 0; y < latent.h; ++y)
                for (int x = 0; x < latent.w; ++x) acc += latent.at(b, c, y, x);
            out(b, c) = acc * inv;
        }
    return out;
}

SvdResult svd_decompose(const Mat& m_hat) {
    if (!m_hat.allFinite()) throw NumericError("svd_decompose: non-finite input");
    Eigen::JacobiSVD<Mat> svd(m_hat, Eigen::ComputeFullU | Eigen::ComputeFullV);
    SvdResult out;
    out.U = svd.matrixU();
    out.S = svd.singularValues();
    out.Vt = svd.matrixV().transpose();
    return out;
}

double semantic_compression_loss(const Vec& singular_values, int tail_start) {
    const int k = static_cast<int>(singular_values.size());
    if (tail_start < 1 || tail_start > k)
        throw ConfigError("semantic_compression_loss: tail_start out of [1, k]");
    double acc = 0.0;
    for (int i = tail_start - 1; i < k; ++i) acc += singular_values[i];
    return acc;
}

int scl_tail_start(int k, double keep_ratio) {
    int t = static_cast<int>(std::floor(k * keep_ratio)) + 1;
    return std::clamp(t, 1, k);
}

TotalLossValue total_loss(const std::vector<Mat>& x_hat, const std::vector<Mat>& x_target,
                          const Mat& logits, const std::vector<int>& labels, const Latent& latent,
                          const LossWeights& weights, TotalLossGrads* grads) {
    if (x_hat.size() != x_target.size()) throw ContractError("total_loss: batch size mismatch");
    const auto batch = static_cast<int>(x_hat.size());
    if (logits.rows() != batch || static_cast<int>(labels.size()) != batch)
        throw ContractError("total_loss: logits/labels batch mismatch");
    if (latent.batch != batch) throw ContractError("total_loss: latent batch mismatch");

    TotalLossValue value;

    // L1 over every element of the batch
    size_t n_elems = 0;
    double abs_sum = 0.0;
    for (int b = 0; b < batch; ++b) {
        if (x_hat[b].rows() != x_target[b].rows() || x_hat[b].cols() != x_target[b].cols())
            throw ContractError("total_loss: x_hat/x_target shape mismatch");
        abs_sum += (x_hat[b] - x_target[b]).cwiseAbs().sum();
        n_elems += static_cast<size_t>(x_hat[b].size());
    }
    value.l1 = n_elems ? abs_sum / static_cast<double>(n_elems) : 0.0;

    // mean cross-entropy
    double ce_sum = 0.0;
    for (int b = 0; b < batch; ++b) ce_sum += cross_entropy(logits.row(b).transpose(), labels[b]);
    value.ce = ce_sum / batch;

    // semantic compression on the aggregated latent
    Mat m_hat = spatial_aggregate(latent);
    SvdResult svd;
    int tail = 1;
    bool want_scl = weights.lambda2 != 0.0;
    if (want_scl) {
        svd = svd_decompose(m_hat);
        const int k = static_cast<int>(svd.S.size());
        tail = scl_tail_start(k, weights.scl_keep_ratio);
        if (tail >= 2 && svd.S[tail - 2] - svd.S[tail - 1] < 1e-8) {
            value.scl_skipped = true;
        } else {
            value.scl = semantic_compression_loss(svd.S, tail);
        }
    }

    value.total = weights.lambda0 * value.l1 + weights.lambda1 * value.ce + weights.lambda2 * value.scl;

    if (grads) {
        grads->d_x_hat.resize(batch);
        const double l1_scale = weights.lambda0 / static_cast<double>(n_elems ? n_elems : 1);
        for (int b = 0; b < batch; ++b) {
            grads->d_x_hat[b] =
                (x_hat[b] - x_target[b]).unaryExpr([](double v) { return v > 0 ? 1.0 : (v < 0 ? -1.0 : 0.0); }) *
                l1_scale;
        }

        grads->d_logits = Mat::Zero(logits.rows(), logits.cols());
        const double ce_scale = weights.lambda1 / batch;
        for (int b = 0; b < batch; ++b) {
            Vec p = softmax(logits.row(b).transpose());
            for (int j = 0; j < logits.cols(); ++j)
                grads->d_logits(b, j) = ce_scale * (p[j] - (j == labels[b] ? 1.0 : 0.0));
        }

        grads->d_latent = Latent(latent.batch, latent.channels, latent.h, latent.w);
        if (want_scl && !value.scl_skipped) {
            // d(sum of tail sigma)/dM = U_tail * Vt_tail; then spread through the
            // spatial mean.
            const int k = static_cast<int>(svd.S.size());
            Mat g = svd.U.block(0, tail - 1, svd.U.rows(), k - tail + 1) *
                    svd.Vt.block(tail - 1, 0, k - tail + 1, svd.Vt.cols());
            const double spread = weights.lambda2 / (latent.h * latent.w);
            for (int b = 0; b < latent.batch; ++b)
                for (int c = 0; c < latent.channels; ++c) {
                    double v = g(b, c) * spread;
                    for (int y = 0; y < latent.h; ++y)
                        for (int x = 0; x < latent.w; ++x) grads->d_latent.at(b, c, y, x) = v;
                }
        }
    }
    return value;
}

}  // namespace iuf
