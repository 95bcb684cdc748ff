#pragma once

#include <cstdint>
#include <string_view>

#include <Eigen/Dense>

namespace mmtta {

using Index = Eigen::Index;
using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;
/// Batches are stored one sample per row.
using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// The three scored views of a sample.
enum class Perspective : std::uint32_t { M1 = 0, M2 = 1, Fused = 2 };

inline constexpr Perspective kAllPerspectives[] = {Perspective::M1, Perspective::M2,
                                                   Perspective::Fused};

std::string_view to_string(Perspective p);
Perspective perspective_from_string(std::string_view s);

}  // namespace mmtta
