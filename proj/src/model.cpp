#include "iuf/model.hpp"

#include <cmath>

#include "iuf/common.hpp"
#include "iuf/rng.hpp"

namespace iuf {

namespace {

constexpr int kDiscChannels[4] = {8, 16, 32, 64};
constexpr double kLnEps = 1e-5;
constexpr double kGateClamp = 12.0;  // keeps 1 + tanh strictly inside (0, 2)

Vec colsum(const Mat& m) { return m.colwise().sum().transpose(); }

void layer_norm_forward(const Mat& x, ConstMatMap gamma, ConstMatMap beta, Mat& x_hat, Vec& rstd,
                        Mat& y) {
    const auto rows = x.rows();
    const auto cols = x.cols();
    x_hat.resize(rows, cols);
    y.resize(rows, cols);
    rstd.resize(rows);
    for (Eigen::Index i = 0; i < rows; ++i) {
        double mu = x.row(i).mean();
        double var = (x.row(i).array() - mu).square().mean();
        double r = 1.0 / std::sqrt(var + kLnEps);
        rstd[i] = r;
        x_hat.row(i) = (x.row(i).array() - mu) * r;
        y.row(i) = x_hat.row(i).cwiseProduct(gamma.col(0).transpose()) + beta.col(0).transpose();
    }
}

Mat layer_norm_backward(const Mat& x_hat, const Vec& rstd, ConstMatMap gamma, const Mat& dy,
                        MatMap d_gamma, MatMap d_beta) {
    const auto rows = dy.rows();
    const auto cols = dy.cols();
    Mat dx(rows, cols);
    d_gamma.col(0) += colsum(dy.cwiseProduct(x_hat));
    d_beta.col(0) += colsum(dy);
    for (Eigen::Index i = 0; i < rows; ++i) {
        Eigen::RowVectorXd dxh = dy.row(i).cwiseProduct(gamma.col(0).transpose());
        double m1 = dxh.mean();
        double m2 = dxh.cwiseProduct(x_hat.row(i)).mean();
        dx.row(i) = (dxh.array() - m1 - x_hat.row(i).array() * m2) * rstd[i];
    }
    return dx;
}

// stride-2 3x3 conv with pad 1, ReLU fused
void conv_s2_forward(const Tensor3& in, ConstMatMap w, ConstMatMap b, Tensor3& out) {
    const int oc = static_cast<int>(w.rows());
    const int oh = (in.h + 2 - 3) / 2 + 1;
    const int ow = (in.w + 2 - 3) / 2 + 1;
    out = Tensor3(oc, oh, ow);
    for (int o = 0; o < oc; ++o) {
        for (int oy = 0; oy < oh; ++oy) {
            for (int ox = 0; ox < ow; ++ox) {
                double acc = b(o, 0);
                for (int ic = 0; ic < in.c; ++ic) {
                    const double* wrow = w.data() + o * w.cols() + ic * 9;
                    for (int ky = 0; ky < 3; ++ky) {
                        int iy = 2 * oy + ky - 1;
                        if (iy < 0 || iy >= in.h) continue;
                        for (int kx = 0; kx < 3; ++kx) {
                            int ix = 2 * ox + kx - 1;
                            if (ix < 0 || ix >= in.w) continue;
                            acc += wrow[ky * 3 + kx] * in.at(ic, iy, ix);
                        }
                    }
                }
                out.at(o, oy, ox) = acc > 0 ? acc : 0.0;
            }
        }
    }
}

// d_out must already be masked by the ReLU (zero where activation was zero)
void conv_s2_backward(const Tensor3& in, ConstMatMap w, const Tensor3& d_out, MatMap d_w, MatMap d_b,
                      Tensor3& d_in) {
    d_in = Tensor3(in.c, in.h, in.w);
    const int oc = d_out.c;
    for (int o = 0; o < oc; ++o) {
        for (int oy = 0; oy < d_out.h; ++oy) {
            for (int ox = 0; ox < d_out.w; ++ox) {
                double g = d_out.at(o, oy, ox);
                if (g == 0.0) continue;
                d_b(o, 0) += g;
                for (int ic = 0; ic < in.c; ++ic) {
                    const double* wrow = w.data() + o * w.cols() + ic * 9;
                    double* dwrow = d_w.data() + o * d_w.cols() + ic * 9;
                    for (int ky = 0; ky < 3; ++ky) {
                        int iy = 2 * oy + ky - 1;
                        if (iy < 0 || iy >= in.h) continue;
                        for (int kx = 0; kx < 3; ++kx) {
                            int ix = 2 * ox + kx - 1;
                            if (ix < 0 || ix >= in.w) continue;
                            dwrow[ky * 3 + kx] += g * in.at(ic, iy, ix);
                            d_in.at(ic, iy, ix) += g * wrow[ky * 3 + kx];
                        }
                    }
                }
            }
        }
    }
}

Vec gap(const Tensor3& t) {
    Vec out(t.c);
    const double inv = 1.0 / (t.h * t.w);
    for (int c = 0; c < t.c; ++c) {
        double acc = 0.0;
        for (int y = 0; y < t.h; ++y)
            for (int x = 0; x < t.w; ++x) acc += t.at(c, y, x);
        out[c] = acc * inv;
    }
    return out;
}

void gap_backward(const Vec& d_pool, Tensor3& d_t) {
    for (int c = 0; c < d_t.c; ++c) {
        double v = d_pool[c] / (d_t.h * d_t.w);
        for (int y = 0; y < d_t.h; ++y)
            for (int x = 0; x < d_t.w; ++x) d_t.at(c, y, x) += v;
    }
}

Mat apply_gate(const Mat& gate, const Mat& q) {
    if (gate.rows() == q.rows()) return gate.cwiseProduct(q);
    Mat out = q;
    out.array().rowwise() *= gate.row(0).array();
    return out;
}

Mat smooth_grid(const Mat& grid, double sigma) {
    if (sigma <= 0.0) return grid;
    const int radius = std::max(1, static_cast<int>(std::ceil(3.0 * sigma)));
    Vec kernel(2 * radius + 1);
    for (int i = -radius; i <= radius; ++i) kernel[i + radius] = std::exp(-0.5 * i * i / (sigma * sigma));
    kernel /= kernel.sum();

    const auto h = grid.rows();
    const auto w = grid.cols();
    Mat tmp(h, w), out(h, w);
    for (Eigen::Index y = 0; y < h; ++y)
        for (Eigen::Index x = 0; x < w; ++x) {
            double acc = 0.0;
            for (int i = -radius; i <= radius; ++i) {
                auto xx = std::clamp<Eigen::Index>(x + i, 0, w - 1);
                acc += kernel[i + radius] * grid(y, xx);
            }
            tmp(y, x) = acc;
        }
    for (Eigen::Index y = 0; y < h; ++y)
        for (Eigen::Index x = 0; x < w; ++x) {
            double acc = 0.0;
            for (int i = -radius; i <= radius; ++i) {
                auto yy = std::clamp<Eigen::Index>(y + i, 0, h - 1);
                acc += kernel[i + radius] * tmp(yy, x);
            }
            out(y, x) = acc;
        }
    return out;
}

Mat upsample_bilinear(const Mat& grid, int out_h, int out_w) {
    const auto h = grid.rows();
    const auto w = grid.cols();
    if (h == out_h && w == out_w) return grid;
    Mat out(out_h, out_w);
    const double sy = static_cast<double>(h) / out_h;
    const double sx = static_cast<double>(w) / out_w;
    for (int y = 0; y < out_h; ++y) {
        double fy = (y + 0.5) * sy - 0.5;
        auto y0 = static_cast<Eigen::Index>(std::floor(fy));
        double wy = fy - y0;
        auto y1 = std::clamp<Eigen::Index>(y0 + 1, 0, h - 1);
        y0 = std::clamp<Eigen::Index>(y0, 0, h - 1);
        for (int x = 0; x < out_w; ++x) {
            double fx = (x + 0.5) * sx - 0.5;
            auto x0 = static_cast<Eigen::Index>(std::floor(fx));
            double wx = fx - x0;
            auto x1 = std::clamp<Eigen::Index>(x0 + 1, 0, w - 1);
            x0 = std::clamp<Eigen::Index>(x0, 0, w - 1);
            double top = grid(y0, x0) * (1 - wx) + grid(y0, x1) * wx;
            double bot = grid(y1, x0) * (1 - wx) + grid(y1, x1) * wx;
            out(y, x) = top * (1 - wy) + bot * wy;
        }
    }
    return out;
}

}  // namespace

// --- OASA -------------------------------------------------------------------

OasaResult oasa_attention(const Mat& gate, const Mat& q, const Mat& k, const Mat& v) {
    const auto d = q.cols();
    if (d == 0) throw ContractError("oasa_attention: d_k must be positive");
    if (k.cols() != d || v.rows() != k.rows()) throw ContractError("oasa_attention: K/V shape mismatch");
    if (gate.cols() != d || (gate.rows() != 1 && gate.rows() != q.rows()))
        throw ContractError("oasa_attention: gate not broadcastable to Q");

    OasaResult res;
    Mat gq = apply_gate(gate, q);
    Mat scores = gq * k.transpose() / std::sqrt(static_cast<double>(d));
    res.attn.resize(scores.rows(), scores.cols());
    for (Eigen::Index i = 0; i < scores.rows(); ++i) {
        double m = scores.row(i).maxCoeff();
        Eigen::RowVectorXd e = (scores.row(i).array() - m).exp();
        res.attn.row(i) = e / e.sum();
    }
    res.out = res.attn * v;
    return res;
}

OasaGrads oasa_attention_backward(const Mat& gate, const Mat& q, const Mat& k, const Mat& v,
                                  const OasaResult& fwd, const Mat& d_out) {
    const double scale = 1.0 / std::sqrt(static_cast<double>(q.cols()));
    Mat gq = apply_gate(gate, q);

    OasaGrads g;
    g.d_v = fwd.attn.transpose() * d_out;
    Mat d_p = d_out * v.transpose();
    Vec rowdot = (d_p.cwiseProduct(fwd.attn)).rowwise().sum();
    Mat d_s = fwd.attn.cwiseProduct(d_p.colwise() - rowdot);
    Mat d_gq = d_s * k * scale;
    g.d_k = d_s.transpose() * gq * scale;
    g.d_q = apply_gate(gate, d_gq);  // gate is symmetric in the product
    Mat d_gate_full = d_gq.cwiseProduct(q);
    g.d_gate = gate.rows() == 1 ? Mat(d_gate_full.colwise().sum()) : d_gate_full;
    return g;
}

// --- anomaly map -------------------------------------------------------------

AnomalyMap anomaly_map(const Mat& x_target, const Mat& x_hat, int grid_h, int grid_w, int out_h,
                       int out_w, double smooth_sigma) {
    if (x_target.rows() != x_hat.rows() || x_target.cols() != x_hat.cols())
        throw ContractError("anomaly_map: shape mismatch");
    if (x_target.rows() != static_cast<Eigen::Index>(grid_h) * grid_w)
        throw ContractError("anomaly_map: token count does not match grid");

    Vec err = (x_hat - x_target).rowwise().squaredNorm();
    Mat grid(grid_h, grid_w);
    for (int y = 0; y < grid_h; ++y)
        for (int x = 0; x < grid_w; ++x) grid(y, x) = err[y * grid_w + x];

    AnomalyMap res;
    res.pixel_scores = upsample_bilinear(smooth_grid(grid, smooth_sigma), out_h, out_w);
    res.image_score = res.pixel_scores.maxCoeff();
    return res;
}

// --- Model ------------------------------------------------------------------

MatMap map_param(std::vector<double>& buf, const ParamInfo& p) {
    return MatMap(buf.data() + p.offset, p.rows, p.cols);
}

ConstMatMap map_param(const std::vector<double>& buf, const ParamInfo& p) {
    return ConstMatMap(buf.data() + p.offset, p.rows, p.cols);
}

int Model::add_param(const std::string& name, int rows, int cols, bool decoder_path) {
    ParamInfo info;
    info.name = name;
    info.rows = rows;
    info.cols = cols;
    info.decoder_path = decoder_path;
    info.offset = params_.size();
    params_.resize(params_.size() + static_cast<size_t>(rows) * cols, 0.0);
    infos_.push_back(info);
    return static_cast<int>(infos_.size()) - 1;
}

void Model::register_params() {
    const int d = cfg_.embed_dim;
    int in_c = cfg_.in_channels;
    for (int i = 0; i < 4; ++i) {
        idx_.conv_w[i] = add_param("disc.conv" + std::to_string(i) + ".w", kDiscChannels[i], in_c * 9, false);
        idx_.conv_b[i] = add_param("disc.conv" + std::to_string(i) + ".b", kDiscChannels[i], 1, false);
        in_c = kDiscChannels[i];
    }
    idx_.head_w = add_param("disc.head.w", cfg_.n_max, kDiscChannels[3], false);
    idx_.head_b = add_param("disc.head.b", cfg_.n_max, 1, false);
    for (int i = 0; i < 4; ++i) {
        idx_.gate_w[i] = add_param("gate" + std::to_string(i) + ".w", d, kDiscChannels[i], false);
        idx_.gate_b[i] = add_param("gate" + std::to_string(i) + ".b", d, 1, false);
    }
    idx_.embed_w = add_param("embed.w", d, cfg_.patch_dim(), false);
    idx_.embed_b = add_param("embed.b", d, 1, false);
    idx_.pos = add_param("embed.pos", cfg_.tokens(), d, false);

    static const char* kBlockNames[4] = {"enc0", "enc1", "dec0", "dec1"};
    for (int i = 0; i < 4; ++i) {
        const bool dec = i >= 2;
        const std::string base = kBlockNames[i];
        BlockIdx& b = idx_.blk[i];
        b.ln1_g = add_param(base + ".ln1.g", d, 1, dec);
        b.ln1_b = add_param(base + ".ln1.b", d, 1, dec);
        b.wq = add_param(base + ".wq", d, d, dec);
        b.bq = add_param(base + ".bq", d, 1, dec);
        b.wk = add_param(base + ".wk", d, d, dec);
        b.bk = add_param(base + ".bk", d, 1, dec);
        b.wv = add_param(base + ".wv", d, d, dec);
        b.bv = add_param(base + ".bv", d, 1, dec);
        b.wo = add_param(base + ".wo", d, d, dec);
        b.bo = add_param(base + ".bo", d, 1, dec);
        b.ln2_g = add_param(base + ".ln2.g", d, 1, dec);
        b.ln2_b = add_param(base + ".ln2.b", d, 1, dec);
        b.w1 = add_param(base + ".mlp.w1", cfg_.mlp_hidden, d, dec);
        b.b1 = add_param(base + ".mlp.b1", cfg_.mlp_hidden, 1, dec);
        b.w2 = add_param(base + ".mlp.w2", d, cfg_.mlp_hidden, dec);
        b.b2 = add_param(base + ".mlp.b2", d, 1, dec);
    }
    idx_.bin_w = add_param("bottleneck.win", cfg_.latent_channels, d, true);
    idx_.bin_b = add_param("bottleneck.bin", cfg_.latent_channels, 1, true);
    idx_.bout_w = add_param("bottleneck.wout", d, cfg_.latent_channels, true);
    idx_.bout_b = add_param("bottleneck.bout", d, 1, true);
    idx_.out_w = add_param("head.w", cfg_.out_dim(), d, true);
    idx_.out_b = add_param("head.b", cfg_.out_dim(), 1, true);
}

void Model::init_params(std::uint64_t seed) {
    Rng rng(derive_seed(seed, "model.init"));
    auto fill_gaussian = [&](int idx, double stddev) {
        MatMap m = map_param(params_, infos_[idx]);
        for (Eigen::Index i = 0; i < m.rows(); ++i)
            for (Eigen::Index j = 0; j < m.cols(); ++j) m(i, j) = stddev * rng.gaussian();
    };
    auto fill_const = [&](int idx, double v) { map_param(params_, infos_[idx]).setConstant(v); };

    int in_c = cfg_.in_channels;
    for (int i = 0; i < 4; ++i) {
        fill_gaussian(idx_.conv_w[i], std::sqrt(2.0 / (in_c * 9)));
        in_c = kDiscChannels[i];
    }
    fill_gaussian(idx_.head_w, std::sqrt(1.0 / kDiscChannels[3]));
    // gate projections start at zero: OASA is exactly plain attention at init
    fill_gaussian(idx_.embed_w, std::sqrt(1.0 / cfg_.patch_dim()));
    fill_gaussian(idx_.pos, 0.02);
    for (int i = 0; i < 4; ++i) {
        const BlockIdx& b = idx_.blk[i];
        fill_const(b.ln1_g, 1.0);
        fill_const(b.ln2_g, 1.0);
        fill_gaussian(b.wq, std::sqrt(1.0 / cfg_.embed_dim));
        fill_gaussian(b.wk, std::sqrt(1.0 / cfg_.embed_dim));
        fill_gaussian(b.wv, std::sqrt(1.0 / cfg_.embed_dim));
        fill_gaussian(b.wo, std::sqrt(1.0 / cfg_.embed_dim));
        fill_gaussian(b.w1, std::sqrt(2.0 / cfg_.embed_dim));
        fill_gaussian(b.w2, std::sqrt(1.0 / cfg_.mlp_hidden));
    }
    fill_gaussian(idx_.bin_w, std::sqrt(1.0 / cfg_.embed_dim));
    fill_gaussian(idx_.bout_w, std::sqrt(1.0 / cfg_.latent_channels));
    fill_gaussian(idx_.out_w, std::sqrt(1.0 / cfg_.embed_dim));

    if (cfg_.target == ModelConfig::Target::features) {
        Rng trng(derive_seed(seed, "model.target_embed"));
        frozen_target_.resize(cfg_.target_dim, cfg_.patch_dim());
        const double s = std::sqrt(1.0 / cfg_.patch_dim());
        for (Eigen::Index i = 0; i < frozen_target_.rows(); ++i)
            for (Eigen::Index j = 0; j < frozen_target_.cols(); ++j) frozen_target_(i, j) = s * trng.gaussian();
    }
}

Model::Model(const ModelConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
    if (cfg_.image_size <= 0 || cfg_.patch <= 0 || cfg_.image_size % cfg_.patch != 0)
        throw ConfigError("model: image_size must be a positive multiple of patch");
    if (cfg_.embed_dim <= 0) throw ConfigError("model: embed_dim must be positive");
    if (cfg_.latent_channels <= 0) throw ConfigError("model: latent_channels must be positive");
    if (cfg_.n_max <= 0) throw ConfigError("model: n_max must be positive");
    register_params();
    init_params(seed);
}

Mat Model::extract_patches(const Image& img) const {
    if (img.height != cfg_.image_size || img.width != cfg_.image_size || img.channels != cfg_.in_channels)
        throw ContractError("model: image does not match run resolution");
    const int g = cfg_.grid();
    const int p = cfg_.patch;
    Mat out(cfg_.tokens(), cfg_.patch_dim());
    for (int gy = 0; gy < g; ++gy)
        for (int gx = 0; gx < g; ++gx) {
            int t = gy * g + gx;
            for (int c = 0; c < img.channels; ++c)
                for (int py = 0; py < p; ++py)
                    for (int px = 0; px < p; ++px)
                        out(t, (c * p + py) * p + px) = img.at(c, gy * p + py, gx * p + px) - 0.5;
        }
    return out;
}

Mat Model::target_tokens(const Image& img) const {
    Mat patches = extract_patches(img);
    if (cfg_.target == ModelConfig::Target::pixels) return patches.array() + 0.5;
    return patches * frozen_target_.transpose();
}

void Model::disc_forward(const Image& img, DiscCache& cache) const {
    cache.input = Tensor3(img.channels, img.height, img.width);
    cache.input.v = img.data;
    const Tensor3* cur = &cache.input;
    for (int i = 0; i < 4; ++i) {
        conv_s2_forward(*cur, cv(idx_.conv_w[i]), cv(idx_.conv_b[i]), cache.act[i]);
        cache.pooled[i] = gap(cache.act[i]);
        cur = &cache.act[i];
    }
    cache.gap = cache.pooled[3];
    cache.logits = cv(idx_.head_w) * cache.gap + cv(idx_.head_b).col(0);
    for (int i = 0; i < 4; ++i) {
        Vec h = cv(idx_.gate_w[i]) * cache.pooled[i] + cv(idx_.gate_b[i]).col(0);
        for (Eigen::Index j = 0; j < h.size(); ++j) h[j] = std::clamp(h[j], -kGateClamp, kGateClamp);
        cache.gate_h[i] = h;
        cache.gate[i] = 1.0 + h.array().tanh();
    }
}

DiscriminateResult Model::discriminate(const Image& img) const {
    DiscCache cache;
    disc_forward(img, cache);
    DiscriminateResult res;
    res.logits = cache.logits;
    for (int i = 0; i < 4; ++i) res.gates.per_layer.push_back(cache.gate[i].transpose());
    return res;
}

void Model::block_forward(int idx, const Mat& x_in, const Mat& gate_row, BlockCache& c) const {
    const BlockIdx& b = idx_.blk[idx];
    c.x_in = x_in;
    c.gate_row = gate_row;
    layer_norm_forward(x_in, cv(b.ln1_g), cv(b.ln1_b), c.a_hat, c.rstd1, c.a);
    c.q = c.a * cv(b.wq).transpose();
    c.q.rowwise() += cv(b.bq).col(0).transpose();
    c.k = c.a * cv(b.wk).transpose();
    c.k.rowwise() += cv(b.bk).col(0).transpose();
    c.v = c.a * cv(b.wv).transpose();
    c.v.rowwise() += cv(b.bv).col(0).transpose();
    c.gq = apply_gate(gate_row, c.q);

    const double scale = 1.0 / std::sqrt(static_cast<double>(cfg_.embed_dim));
    Mat scores = c.gq * c.k.transpose() * scale;
    c.attn.resize(scores.rows(), scores.cols());
    for (Eigen::Index i = 0; i < scores.rows(); ++i) {
        double m = scores.row(i).maxCoeff();
        Eigen::RowVectorXd e = (scores.row(i).array() - m).exp();
        c.attn.row(i) = e / e.sum();
    }
    c.o = c.attn * c.v;
    c.x_mid = x_in + c.o * cv(b.wo).transpose();
    c.x_mid.rowwise() += cv(b.bo).col(0).transpose();

    layer_norm_forward(c.x_mid, cv(b.ln2_g), cv(b.ln2_b), c.b_hat, c.rstd2, c.b2);
    Mat h_pre = c.b2 * cv(b.w1).transpose();
    h_pre.rowwise() += cv(b.b1).col(0).transpose();
    c.h = h_pre.cwiseMax(0.0);
    c.x_out = c.x_mid + c.h * cv(b.w2).transpose();
    c.x_out.rowwise() += cv(b.b2).col(0).transpose();
}

Mat Model::block_backward(int idx, const BlockCache& c, const Mat& d_x_out, std::vector<double>& grad,
                          Mat* d_gate_row) const {
    const BlockIdx& b = idx_.blk[idx];
    auto g = [&](int i) { return map_param(grad, infos_[i]); };

    Mat d_x_mid = d_x_out;

    // MLP
    g(b.w2).noalias() += d_x_out.transpose() * c.h;
    g(b.b2).col(0) += colsum(d_x_out);
    Mat d_h = d_x_out * cv(b.w2);
    Mat d_h_pre = d_h.cwiseProduct((c.h.array() > 0.0).cast<double>().matrix());
    g(b.w1).noalias() += d_h_pre.transpose() * c.b2;
    g(b.b1).col(0) += colsum(d_h_pre);
    Mat d_b2 = d_h_pre * cv(b.w1);
    d_x_mid += layer_norm_backward(c.b_hat, c.rstd2, cv(b.ln2_g), d_b2, g(b.ln2_g), g(b.ln2_b));

    // attention output projection
    g(b.wo).noalias() += d_x_mid.transpose() * c.o;
    g(b.bo).col(0) += colsum(d_x_mid);
    Mat d_o = d_x_mid * cv(b.wo);
    Mat d_x_in = d_x_mid;

    // attention core
    const double scale = 1.0 / std::sqrt(static_cast<double>(cfg_.embed_dim));
    Mat d_v = c.attn.transpose() * d_o;
    Mat d_p = d_o * c.v.transpose();
    Vec rowdot = (d_p.cwiseProduct(c.attn)).rowwise().sum();
    Mat d_s = c.attn.cwiseProduct(d_p.colwise() - rowdot);
    Mat d_gq = d_s * c.k * scale;
    Mat d_k = d_s.transpose() * c.gq * scale;
    Mat d_q = apply_gate(c.gate_row, d_gq);
    Mat d_gate_full = d_gq.cwiseProduct(c.q);
    if (d_gate_row) {
        *d_gate_row = c.gate_row.rows() == 1 ? Mat(d_gate_full.colwise().sum()) : d_gate_full;
    }

    g(b.wq).noalias() += d_q.transpose() * c.a;
    g(b.bq).col(0) += colsum(d_q);
    g(b.wk).noalias() += d_k.transpose() * c.a;
    g(b.bk).col(0) += colsum(d_k);
    g(b.wv).noalias() += d_v.transpose() * c.a;
    g(b.bv).col(0) += colsum(d_v);
    Mat d_a = d_q * cv(b.wq) + d_k * cv(b.wk) + d_v * cv(b.wv);
    d_x_in += layer_norm_backward(c.a_hat, c.rstd1, cv(b.ln1_g), d_a, g(b.ln1_g), g(b.ln1_b));
    return d_x_in;
}

void Model::recon_forward(const Mat& patches, const std::array<Mat, 4>& gate_rows,
                          ForwardCache& cache) const {
    cache.patches = patches;
    cache.x0 = patches * cv(idx_.embed_w).transpose();
    cache.x0.rowwise() += cv(idx_.embed_b).col(0).transpose();
    cache.x0 += cv(idx_.pos);

    block_forward(0, cache.x0, gate_rows[0], cache.blocks[0]);
    block_forward(1, cache.blocks[0].x_out, gate_rows[1], cache.blocks[1]);

    cache.z_latent = cache.blocks[1].x_out * cv(idx_.bin_w).transpose();
    cache.z_latent.rowwise() += cv(idx_.bin_b).col(0).transpose();
    cache.xd0 = cache.z_latent * cv(idx_.bout_w).transpose();
    cache.xd0.rowwise() += cv(idx_.bout_b).col(0).transpose();

    block_forward(2, cache.xd0, gate_rows[2], cache.blocks[2]);
    block_forward(3, cache.blocks[2].x_out, gate_rows[3], cache.blocks[3]);

    cache.x_hat = cache.blocks[3].x_out * cv(idx_.out_w).transpose();
    cache.x_hat.rowwise() += cv(idx_.out_b).col(0).transpose();
}

ReconstructResult Model::reconstruct(const Image& img, const GateFeatures& gates) const {
    if (static_cast<int>(gates.per_layer.size()) != ModelConfig::kGatedLayers)
        throw ContractError("reconstruct: gate layer count does not match T");
    std::array<Mat, 4> rows;
    for (int i = 0; i < 4; ++i) {
        const Mat& gm = gates.per_layer[i];
        if (gm.cols() != cfg_.embed_dim || (gm.rows() != 1 && gm.rows() != cfg_.tokens()))
            throw ContractError("reconstruct: gate not broadcastable to layer queries");
        rows[i] = gm;
    }
    ForwardCache cache;
    recon_forward(extract_patches(img), rows, cache);
    ReconstructResult res;
    res.x_hat.values = cache.x_hat;
    res.x_hat.grid_h = cfg_.grid();
    res.x_hat.grid_w = cfg_.grid();
    res.latent_tokens = cache.z_latent;
    return res;
}

void Model::forward(const Image& img, bool oasa_enabled, ForwardCache& cache) const {
    cache.oasa_enabled = oasa_enabled;
    disc_forward(img, cache.disc);
    std::array<Mat, 4> rows;
    for (int i = 0; i < 4; ++i) {
        if (oasa_enabled) {
            rows[i] = cache.disc.gate[i].transpose();
        } else {
            rows[i] = Mat::Ones(1, cfg_.embed_dim);
        }
    }
    recon_forward(extract_patches(img), rows, cache);
}

void Model::backward(const ForwardCache& cache, const Mat& d_x_hat, const Vec& d_logits,
                     const Mat& d_latent_tokens, std::vector<double>& grad) const {
    auto g = [&](int i) { return map_param(grad, infos_[i]); };

    // output head
    g(idx_.out_w).noalias() += d_x_hat.transpose() * cache.blocks[3].x_out;
    g(idx_.out_b).col(0) += colsum(d_x_hat);
    Mat d_x = d_x_hat * cv(idx_.out_w);

    std::array<Mat, 4> d_gate_rows;
    d_x = block_backward(3, cache.blocks[3], d_x, grad, &d_gate_rows[3]);
    d_x = block_backward(2, cache.blocks[2], d_x, grad, &d_gate_rows[2]);

    // bottleneck out
    g(idx_.bout_w).noalias() += d_x.transpose() * cache.z_latent;
    g(idx_.bout_b).col(0) += colsum(d_x);
    Mat d_z = d_x * cv(idx_.bout_w);
    if (d_latent_tokens.size() > 0) d_z += d_latent_tokens;

    // bottleneck in
    g(idx_.bin_w).noalias() += d_z.transpose() * cache.blocks[1].x_out;
    g(idx_.bin_b).col(0) += colsum(d_z);
    d_x = d_z * cv(idx_.bin_w);

    d_x = block_backward(1, cache.blocks[1], d_x, grad, &d_gate_rows[1]);
    d_x = block_backward(0, cache.blocks[0], d_x, grad, &d_gate_rows[0]);

    // patch embedding
    g(idx_.embed_w).noalias() += d_x.transpose() * cache.patches;
    g(idx_.embed_b).col(0) += colsum(d_x);
    map_param(grad, infos_[idx_.pos]) += d_x;

    // discriminator: gate heads + classification head, then the conv chain
    const DiscCache& dc = cache.disc;
    std::array<Tensor3, 4> d_act;
    for (int i = 0; i < 4; ++i) d_act[i] = Tensor3(dc.act[i].c, dc.act[i].h, dc.act[i].w);

    for (int i = 0; i < 4; ++i) {
        // gates pinned to 1 by ablation are constants: nothing reaches the heads
        if (!cache.oasa_enabled || d_gate_rows[i].size() == 0) continue;
        Vec d_gate = d_gate_rows[i].row(0).transpose();
        Vec tanh_h = dc.gate[i].array() - 1.0;
        Vec d_h = d_gate.array() * (1.0 - tanh_h.array().square());
        for (Eigen::Index j = 0; j < d_h.size(); ++j)
            if (std::abs(dc.gate_h[i][j]) >= kGateClamp) d_h[j] = 0.0;
        g(idx_.gate_w[i]).noalias() += d_h * dc.pooled[i].transpose();
        g(idx_.gate_b[i]).col(0) += d_h;
        Vec d_pool = cv(idx_.gate_w[i]).transpose() * d_h;
        gap_backward(d_pool, d_act[i]);
    }

    if (d_logits.size() > 0) {
        g(idx_.head_w).noalias() += d_logits * dc.gap.transpose();
        g(idx_.head_b).col(0) += d_logits;
        Vec d_gap = cv(idx_.head_w).transpose() * d_logits;
        gap_backward(d_gap, d_act[3]);
    }

    const Tensor3* inputs[4] = {&dc.input, &dc.act[0], &dc.act[1], &dc.act[2]};
    for (int i = 3; i >= 0; --i) {
        // ReLU mask
        for (size_t j = 0; j < d_act[i].v.size(); ++j)
            if (dc.act[i].v[j] <= 0.0) d_act[i].v[j] = 0.0;
        Tensor3 d_in;
        conv_s2_backward(*inputs[i], cv(idx_.conv_w[i]), d_act[i], g(idx_.conv_w[i]), g(idx_.conv_b[i]),
                         d_in);
        if (i > 0) {
            for (size_t j = 0; j < d_in.v.size(); ++j) d_act[i - 1].v[j] += d_in.v[j];
        }
    }
}

void Model::round_params_to_f32() {
    for (double& v : params_) v = static_cast<double>(static_cast<float>(v));
}

}  // namespace iuf
