#pragma once

#include <Eigen/Core>

namespace sscm {

template <typename T>
using MatR = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MapR = Eigen::Map<MatR<T>>;
template <typename T>
using CMapR = Eigen::Map<const MatR<T>>;

using Stride = Eigen::Stride<Eigen::Dynamic, Eigen::Dynamic>;
template <typename T>
using StridedMap = Eigen::Map<MatR<T>, 0, Stride>;
template <typename T>
using CStridedMap = Eigen::Map<const MatR<T>, 0, Stride>;

} // namespace sscm
