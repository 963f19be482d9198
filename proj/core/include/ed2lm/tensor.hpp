#pragma once

#include <Eigen/Core>

#include <cstdint>

namespace ed2lm {

using TokenId = std::uint32_t;
using Index = Eigen::Index;

// Every dense tensor is a row-major matrix; rank-1 tensors are 1 x n.
template <typename Scalar>
using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <typename Scalar>
using MatrixMap = Eigen::Map<const Matrix<Scalar>>;

template <typename Scalar>
using MatrixRef = Eigen::Ref<const Matrix<Scalar>>;

}  // namespace ed2lm
