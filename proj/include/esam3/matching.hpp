#pragma once

// Bipartite matching between student and teacher mask sets.

#include <vector>

#include "esam3/losses.hpp"

namespace esam3::match {

using num::Tensor;

/// Dense rows x cols matrix of non-negative finite costs.
class CostMatrix {
 public:
  CostMatrix(std::size_t rows, std::size_t cols, std::vector<double> values);
  CostMatrix(std::size_t rows, std::size_t cols, double fill = 0.0);
  static CostMatrix from_rows(const std::vector<std::vector<double>>& rows);

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  double operator()(std::size_t r, std::size_t c) const { return values_[r * cols_ + c]; }
  double& operator()(std::size_t r, std::size_t c) { return values_[r * cols_ + c]; }
  const std::vector<double>& values() const { return values_; }

  /// Throws unless every entry is finite and >= 0.
  void validate() const;

 private:
  std::size_t rows_, cols_;
  std::vector<double> values_;
};

struct Assignment {
  /// row -> column, or -1 when the row was paired with a padding column.
  std::vector<int> row_to_col;
  /// Sum of cost(i, row_to_col[i]) over matched rows, accumulated in row order.
  double total = 0.0;
};

/// cost[i][j] = dice(s_i, t_j) + focal(logit(s_i), t_j). Probabilities are
/// clamped to [1e-6, 1 - 1e-6] before taking the logit.
CostMatrix mask_cost(const std::vector<Tensor>& student_probs, const std::vector<Tensor>& teacher_masks,
                     const loss::LossWeights& w);
/// Same cost computed from logits directly (the training path).
CostMatrix mask_cost_from_logits(const std::vector<Tensor>& student_logits, const std::vector<Tensor>& teacher_masks,
                                 const loss::LossWeights& w);

/// Minimum-cost assignment (Kuhn-Munkres). Rectangular inputs are padded to
/// square with 10x the maximum entry. Among optimal assignments the
/// lexicographically smallest row_to_col vector is returned.
Assignment hungarian(const CostMatrix& cost);

/// Exhaustive search over permutations; square inputs with n <= 8 only.
/// Same optimum and tie-break as hungarian().
Assignment brute_force_match(const CostMatrix& cost);

}  // namespace esam3::match
