#include "iuf/optimizer.hpp"

#include <algorithm>
#include <cmath>

#include "iuf/common.hpp"
#include "iuf/losses.hpp"

namespace iuf {

void vanilla_step(MatMap theta, ConstMatMap grad, double alpha) {
    if (theta.rows() != grad.rows() || theta.cols() != grad.cols())
        throw ContractError("vanilla_step: shape mismatch");
    theta -= alpha * grad;
}

Vec suppression_multipliers(double kappa, int c_lat) {
    if (kappa <= 0) throw ConfigError("suppression gain kappa must be positive");
    Vec m(c_lat);
    for (int r = 1; r <= c_lat; ++r) m[r - 1] = std::clamp(kappa * std::log(static_cast<double>(r)), 0.0, 1.0);
    return m;
}

Mat project_update(const Mat& delta, const Mat& vt_old) {
    if (delta.rows() != vt_old.cols()) throw ContractError("project_update: leading dimension mismatch");
    return vt_old * delta;
}

void reinforced_step(MatMap theta, ConstMatMap grad, ConstMatMap theta_old, const SemanticBasis& basis,
                     const UpdateConfig& cfg, const Vec& multipliers, bool projectable) {
    Mat delta = -cfg.alpha * grad;
    if (projectable) {
        if (basis.vt_old.cols() != theta.rows())
            throw ContractError("reinforced_step: parameter rows do not match basis channels");
        Mat in_channel = basis.vt_old * delta;
        in_channel.array().colwise() *= multipliers.array();
        delta = basis.vt_old.transpose() * in_channel;
    }
    if (cfg.beta != 0.0) {
        // retention uses the pre-update weights
        if (cfg.retain_mode == RetainMode::pull) {
            delta += cfg.beta * (theta_old - theta);
        } else {
            delta += cfg.beta * theta_old;
        }
    }
    theta += delta;
}

SemanticBasis capture_basis(const Mat& latent_rows, const SemanticBasis* prev,
                            const std::vector<double>& current_params, int c_lat) {
    if (latent_rows.cols() != c_lat) throw ContractError("capture_basis: row width != latent channels");
    Mat stacked;
    if (prev && prev->s_old.size() > 0 && prev->s_old.maxCoeff() > 0.0) {
        stacked.resize(c_lat + latent_rows.rows(), c_lat);
        stacked.topRows(c_lat) = prev->s_old.asDiagonal() * prev->vt_old;
        stacked.bottomRows(latent_rows.rows()) = latent_rows;
    } else {
        stacked = latent_rows;
    }
    if (!stacked.allFinite()) throw NumericError("capture_basis: non-finite latent rows");

    Eigen::JacobiSVD<Mat> svd(stacked, Eigen::ComputeFullV);
    SemanticBasis out;
    out.vt_old = svd.matrixV().transpose();
    out.s_old = Vec::Zero(c_lat);
    out.s_old.head(svd.singularValues().size()) = svd.singularValues();
    out.theta_old = current_params;
    return out;
}

void apply_update(Model& model, const std::vector<double>& grad, const SemanticBasis* basis,
                  const UpdateConfig& cfg) {
    auto& params = model.params();
    const int c_lat = model.config().latent_channels;
    Vec multipliers;
    if (basis) multipliers = suppression_multipliers(cfg.kappa, c_lat);
    for (const ParamInfo& info : model.param_infos()) {
        MatMap theta = map_param(params, info);
        ConstMatMap g = map_param(grad, info);
        if (!basis) {
            vanilla_step(theta, g, cfg.alpha);
            continue;
        }
        ConstMatMap theta_old = map_param(basis->theta_old, info);
        const bool projectable = info.decoder_path && info.rows == c_lat;
        reinforced_step(theta, g, theta_old, *basis, cfg, multipliers, projectable);
    }
}

}  // namespace iuf
