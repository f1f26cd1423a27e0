#ifndef IUF_OPTIMIZER_HPP
#define IUF_OPTIMIZER_HPP

#include <cstdint>
#include <vector>

#include "iuf/linalg.hpp"
#include "iuf/model.hpp"

namespace iuf {

// Channel eigenspace of old objects plus the parameter snapshot taken at the
// previous step boundary.
struct SemanticBasis {
    Mat vt_old;                     // C_lat×C_lat, rows ordered by descending singular value
    Vec s_old;                      // length C_lat, zero-padded when rank deficient
    std::vector<double> theta_old;  // full parameter snapshot
};

enum class RetainMode { pull, literal };

struct UpdateConfig {
    double alpha = 1e-3;          // learning rate
    double beta = 0.05;           // retention strength
    double kappa = 0.4;           // suppression gain
    RetainMode retain_mode = RetainMode::pull;
};

// theta' = theta - alpha * grad
void vanilla_step(MatMap theta, ConstMatMap grad, double alpha);

// m_r = clamp(kappa * ln(r), 0, 1) for rank r = 1..c_lat (descending-sigma order).
// m_1 is always 0: the top old channel is fully protected.
Vec suppression_multipliers(double kappa, int c_lat);

// Vt_old * delta: the update expressed in old-object channel coordinates.
Mat project_update(const Mat& delta, const Mat& vt_old);

// Full reinforced update for one parameter. When projectable, the raw descent
// step is rotated into the old channel basis, scaled per rank by m, and
// rotated back; otherwise plain descent. Retention is added either as
// beta*(theta_old - theta) (pull) or beta*theta_old (literal).
void reinforced_step(MatMap theta, ConstMatMap grad, ConstMatMap theta_old, const SemanticBasis& basis,
                     const UpdateConfig& cfg, const Vec& multipliers, bool projectable);

// SVD of the step's aggregated latent rows; with a previous basis, the rows
// are merged with diag(S_old)*Vt_old so old steps keep influence without
// their data. theta_old is snapshotted from current_params.
SemanticBasis capture_basis(const Mat& latent_rows, const SemanticBasis* prev,
                            const std::vector<double>& current_params, int c_lat);

// Applies one update across every registered parameter. Uses the reinforced
// rule when basis != nullptr, plain descent otherwise.
void apply_update(Model& model, const std::vector<double>& grad, const SemanticBasis* basis,
                  const UpdateConfig& cfg);

}  // namespace iuf

#endif
