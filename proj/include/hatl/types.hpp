#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <vector>

namespace hatl {

using Scalar = double;
using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
using RowVector = Eigen::Matrix<Scalar, 1, Eigen::Dynamic>;

using TokenId = std::int32_t;
using TokenSeq = std::vector<TokenId>;

// Reserved text ids. Word ids start at kFirstWord.
inline constexpr TokenId kPad = 0;
inline constexpr TokenId kBos = 1;
inline constexpr TokenId kEos = 2;
inline constexpr TokenId kFirstWord = 3;

// CTC blank; gloss ids start at 1.
inline constexpr TokenId kBlank = 0;

}  // namespace hatl
