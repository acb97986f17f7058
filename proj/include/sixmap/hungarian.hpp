#pragma once

#include <vector>

#include <Eigen/Core>

namespace sixmap::roles {

struct Assignment {
  // col_of_row[i] is the column assigned to row i.
  std::vector<int> col_of_row;
  double cost = 0.0;
};

// Minimum-cost perfect assignment of a square cost matrix (shortest
// augmenting paths with dual potentials, O(n^3)).  Among several optimal
// permutations the lexicographically smallest col_of_row is returned.
// Throws kInvalidArgument for non-square or non-finite input.
Assignment hungarian(const Eigen::MatrixXd& cost);

}  // namespace sixmap::roles
