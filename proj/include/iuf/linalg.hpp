#ifndef IUF_LINALG_HPP
#define IUF_LINALG_HPP

#include <Eigen/Dense>

namespace iuf {

// Row-major throughout: a parameter's leading dimension is its row count,
// which is what the channel-projection predicate inspects.
using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vec = Eigen::VectorXd;
using MatMap = Eigen::Map<Mat>;
using ConstMatMap = Eigen::Map<const Mat>;

}  // namespace iuf

#endif
