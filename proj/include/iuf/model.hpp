#ifndef IUF_MODEL_HPP
#define IUF_MODEL_HPP

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "iuf/image.hpp"
#include "iuf/linalg.hpp"
#include "iuf/losses.hpp"

namespace iuf {

struct ModelConfig {
    int image_size = 64;
    int in_channels = 3;
    int patch = 8;
    int embed_dim = 64;        // token width d
    int latent_channels = 64;  // bottleneck channels, the SCL / basis space
    int n_max = 16;            // classification head width, fixed up front
    int mlp_hidden = 128;

    enum class Target { features, pixels };
    Target target = Target::features;
    int target_dim = 128;  // frozen feature embedding width (features mode)

    static constexpr int kGatedLayers = 4;  // T: 2 encoder + 2 decoder blocks

    int grid() const { return image_size / patch; }
    int tokens() const { return grid() * grid(); }
    int patch_dim() const { return in_channels * patch * patch; }
    int out_dim() const { return target == Target::pixels ? patch_dim() : target_dim; }
};

// L spatial tokens of width d over an H'×W' grid.
struct Tokens {
    Mat values;
    int grid_h = 0;
    int grid_w = 0;
};

// Per-layer category gates, each 1×d (broadcast over tokens) or L×d.
struct GateFeatures {
    std::vector<Mat> per_layer;
};

struct ParamInfo {
    std::string name;
    std::size_t offset = 0;
    int rows = 0;
    int cols = 0;
    bool decoder_path = false;  // candidate for channel-eigenspace projection
};

// --- Object-Aware Self-Attention -------------------------------------------

struct OasaResult {
    Mat out;   // L×d
    Mat attn;  // L×L row-stochastic weights
};

// softmax(((gate ⊙ Q) Kᵀ) / sqrt(d_k)) V. gate has 1 or L rows.
OasaResult oasa_attention(const Mat& gate, const Mat& q, const Mat& k, const Mat& v);

struct OasaGrads {
    Mat d_gate;  // matches gate's shape
    Mat d_q, d_k, d_v;
};

OasaGrads oasa_attention_backward(const Mat& gate, const Mat& q, const Mat& k, const Mat& v,
                                  const OasaResult& fwd, const Mat& d_out);

// --- Anomaly map ------------------------------------------------------------

struct AnomalyMap {
    Mat pixel_scores;  // out_h×out_w
    double image_score = 0.0;
};

// Per-token squared reconstruction error summed over channels, gaussian
// smoothed on the token grid, bilinearly upsampled to the output resolution.
// image_score is the max pixel score.
AnomalyMap anomaly_map(const Mat& x_target, const Mat& x_hat, int grid_h, int grid_w, int out_h,
                       int out_w, double smooth_sigma);

// --- Model ------------------------------------------------------------------

struct Tensor3 {
    int c = 0, h = 0, w = 0;
    std::vector<double> v;

    Tensor3() = default;
    Tensor3(int c_, int h_, int w_) : c(c_), h(h_), w(w_), v(static_cast<size_t>(c_) * h_ * w_, 0.0) {}
    double& at(int ci, int y, int x) { return v[(static_cast<size_t>(ci) * h + y) * w + x]; }
    double at(int ci, int y, int x) const { return v[(static_cast<size_t>(ci) * h + y) * w + x]; }
};

struct DiscCache {
    Tensor3 input;
    std::array<Tensor3, 4> act;      // post-ReLU conv activations
    std::array<Vec, 4> pooled;       // spatially averaged taps
    std::array<Vec, 4> gate_h;       // pre-tanh gate projections
    std::array<Vec, 4> gate;         // 1 + tanh(h)
    Vec gap;                         // pooled final activation
    Vec logits;
};

struct BlockCache {
    Mat x_in;
    Mat a_hat;  // LN1 normalized (pre gamma/beta)
    Vec rstd1;
    Mat a;      // post-LN1
    Mat q, k, v, gq;
    Mat attn;
    Mat o;      // attn * v
    Mat x_mid;
    Mat b_hat;  // LN2 normalized
    Vec rstd2;
    Mat b2;     // post-LN2
    Mat h;      // post-ReLU hidden
    Mat x_out;
    Mat gate_row;  // 1×d gate used in this block
};

struct ForwardCache {
    DiscCache disc;
    bool oasa_enabled = true;
    Mat patches;  // L×patch_dim, centered at 0
    Mat x0;
    std::array<BlockCache, ModelConfig::kGatedLayers> blocks;
    Mat z_latent;  // L×C_lat
    Mat xd0;
    Mat x_hat;  // L×out_dim
};

struct DiscriminateResult {
    Vec logits;
    GateFeatures gates;
};

struct ReconstructResult {
    Tokens x_hat;
    Mat latent_tokens;  // L×C_lat
};

// Maps one registered parameter onto a flat buffer (params or gradients).
MatMap map_param(std::vector<double>& buf, const ParamInfo& p);
ConstMatMap map_param(const std::vector<double>& buf, const ParamInfo& p);

class Model {
public:
    Model(const ModelConfig& cfg, std::uint64_t seed);

    const ModelConfig& config() const { return cfg_; }
    std::vector<double>& params() { return params_; }
    const std::vector<double>& params() const { return params_; }
    const std::vector<ParamInfo>& param_infos() const { return infos_; }

    DiscriminateResult discriminate(const Image& img) const;
    ReconstructResult reconstruct(const Image& img, const GateFeatures& gates) const;

    // Reconstruction target: frozen seed-fixed feature embedding of the input
    // patches, or the raw patch pixels.
    Mat target_tokens(const Image& img) const;

    // Joint forward for training. oasa_enabled=false pins every gate to 1.
    void forward(const Image& img, bool oasa_enabled, ForwardCache& cache) const;

    // Accumulates parameter gradients into grad (size == params().size()).
    // d_latent_tokens may be empty when no gradient flows into the latent.
    void backward(const ForwardCache& cache, const Mat& d_x_hat, const Vec& d_logits,
                  const Mat& d_latent_tokens, std::vector<double>& grad) const;

    // Snaps every parameter to its float32 value. Done at step boundaries so
    // evaluation matches what a reloaded checkpoint computes.
    void round_params_to_f32();

private:
    // indices into infos_ for each named tensor
    struct BlockIdx {
        int ln1_g, ln1_b, wq, bq, wk, bk, wv, bv, wo, bo, ln2_g, ln2_b, w1, b1, w2, b2;
    };
    struct ParamIdx {
        int conv_w[4], conv_b[4];
        int head_w, head_b;
        int gate_w[4], gate_b[4];
        int embed_w, embed_b, pos;
        BlockIdx blk[4];
        int bin_w, bin_b, bout_w, bout_b;
        int out_w, out_b;
    };

    int add_param(const std::string& name, int rows, int cols, bool decoder_path);
    void register_params();
    void init_params(std::uint64_t seed);
    ConstMatMap cv(int idx) const { return map_param(params_, infos_[idx]); }

    void disc_forward(const Image& img, DiscCache& cache) const;
    void recon_forward(const Mat& patches, const std::array<Mat, 4>& gate_rows,
                       ForwardCache& cache) const;
    void block_forward(int idx, const Mat& x_in, const Mat& gate_row, BlockCache& cache) const;
    Mat block_backward(int idx, const BlockCache& cache, const Mat& d_x_out,
                       std::vector<double>& grad, Mat* d_gate_row) const;

    Mat extract_patches(const Image& img) const;  // L×patch_dim, centered

    ModelConfig cfg_;
    std::vector<double> params_;
    std::vector<ParamInfo> infos_;
    ParamIdx idx_{};
    Mat frozen_target_;  // out_dim×patch_dim (features mode)
};

}  // namespace iuf

#endif
