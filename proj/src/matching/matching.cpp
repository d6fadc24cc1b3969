#include "esam3/matching.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <string>

#include "esam3/error.hpp"

namespace esam3::match {

CostMatrix::CostMatrix(std::size_t rows, std::size_t cols, std::vector<double> values)
    : rows_(rows), cols_(cols), values_(std::move(values)) {
  if (values_.size() != rows_ * cols_) fail(ErrorKind::kShape, "CostMatrix: value count does not match dimensions");
}

CostMatrix::CostMatrix(std::size_t rows, std::size_t cols, double fill)
    : rows_(rows), cols_(cols), values_(rows * cols, fill) {}

CostMatrix CostMatrix::from_rows(const std::vector<std::vector<double>>& rows) {
  const std::size_t r = rows.size();
  const std::size_t c = r ? rows[0].size() : 0;
  std::vector<double> v;
  for (const auto& row : rows) {
    if (row.size() != c) fail(ErrorKind::kShape, "CostMatrix: ragged rows");
    v.insert(v.end(), row.begin(), row.end());
  }
  return CostMatrix(r, c, std::move(v));
}

void CostMatrix::validate() const {
  for (double v : values_)
    if (!std::isfinite(v) || v < 0) fail(ErrorKind::kInvalidArgument, "CostMatrix: entries must be finite and >= 0");
}

namespace {

double clamp_logit(double p) {
  p = std::clamp(p, 1e-6, 1.0 - 1e-6);
  return std::log(p / (1.0 - p));
}

// Shortest augmenting path Kuhn-Munkres on a square matrix; returns the
// optimal total (value only).
double solve_square(const std::vector<double>& c, std::size_t n, std::vector<int>* row_to_col) {
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0);
  std::vector<std::size_t> p(n + 1, 0), way(n + 1, 0);
  for (std::size_t i = 1; i <= n; ++i) {
    p[0] = i;
    std::size_t j0 = 0;
    std::vector<double> minv(n + 1, inf);
    std::vector<char> used(n + 1, 0);
    do {
      used[j0] = 1;
      const std::size_t i0 = p[j0];
      double delta = inf;
      std::size_t j1 = 0;
      for (std::size_t j = 1; j <= n; ++j) {
        if (used[j]) continue;
        const double cur = c[(i0 - 1) * n + (j - 1)] - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (std::size_t j = 0; j <= n; ++j) {
        if (used[j]) {
          u[p[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (p[j0] != 0);
    do {
      const std::size_t j1 = way[j0];
      p[j0] = p[j1];
      j0 = j1;
    } while (j0 != 0);
  }
  std::vector<int> assign(n, -1);
  for (std::size_t j = 1; j <= n; ++j)
    if (p[j]) assign[p[j] - 1] = static_cast<int>(j - 1);
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) total += c[i * n + static_cast<std::size_t>(assign[i])];
  if (row_to_col) *row_to_col = std::move(assign);
  return total;
}

double tie_tolerance(const std::vector<double>& c) {
  double mx = 0.0;
  for (double v : c) mx = std::max(mx, v);
  return 1e-9 * std::max(1.0, mx);
}

Assignment finish(const CostMatrix& cost, std::vector<int> square_assign) {
  Assignment a;
  a.row_to_col.assign(cost.rows(), -1);
  for (std::size_t i = 0; i < cost.rows(); ++i) {
    const int j = square_assign[i];
    if (j >= 0 && static_cast<std::size_t>(j) < cost.cols()) {
      a.row_to_col[i] = j;
      a.total += cost(i, static_cast<std::size_t>(j));
    }
  }
  return a;
}

}  // namespace

CostMatrix mask_cost(const std::vector<Tensor>& student_probs, const std::vector<Tensor>& teacher_masks,
                     const loss::LossWeights& w) {
  std::vector<Tensor> logits;
  logits.reserve(student_probs.size());
  for (const auto& p : student_probs) {
    Tensor l = p;
    for (auto& v : l.vec()) v = clamp_logit(v);
    logits.push_back(std::move(l));
  }
  return mask_cost_from_logits(logits, teacher_masks, w);
}

CostMatrix mask_cost_from_logits(const std::vector<Tensor>& student_logits, const std::vector<Tensor>& teacher_masks,
                                 const loss::LossWeights& w) {
  if (student_logits.empty() || teacher_masks.empty()) fail(ErrorKind::kInvalidArgument, "mask_cost: empty mask list");
  CostMatrix cost(student_logits.size(), teacher_masks.size());
  for (std::size_t i = 0; i < student_logits.size(); ++i)
    for (std::size_t j = 0; j < teacher_masks.size(); ++j)
      cost(i, j) = std::max(0.0, loss::mask_loss(student_logits[i], teacher_masks[j], w));
  return cost;
}

Assignment hungarian(const CostMatrix& cost) {
  if (cost.rows() == 0 || cost.cols() == 0) fail(ErrorKind::kInvalidArgument, "hungarian: empty cost matrix");
  cost.validate();
  const std::size_t n = std::max(cost.rows(), cost.cols());
  double mx = 0.0;
  for (double v : cost.values()) mx = std::max(mx, v);
  const double pad = std::max(10.0 * mx, 1.0);
  std::vector<double> sq(n * n, pad);
  for (std::size_t i = 0; i < cost.rows(); ++i)
    for (std::size_t j = 0; j < cost.cols(); ++j) sq[i * n + j] = cost(i, j);

  const double optimum = solve_square(sq, n, nullptr);
  const double tol = tie_tolerance(sq);

  // Lexicographic refinement: fix rows in order to the smallest column that
  // still admits an optimal completion.
  std::vector<int> assign(n, -1);
  std::vector<char> col_used(n, 0);
  double fixed = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t rest = n - i - 1;
    for (std::size_t j = 0; j < n; ++j) {
      if (col_used[j]) continue;
      double completion = 0.0;
      if (rest > 0) {
        std::vector<double> sub;
        sub.reserve(rest * rest);
        for (std::size_t r = i + 1; r < n; ++r)
          for (std::size_t c = 0; c < n; ++c)
            if (!col_used[c] && c != j) sub.push_back(sq[r * n + c]);
        completion = solve_square(sub, rest, nullptr);
      }
      if (fixed + sq[i * n + j] + completion <= optimum + tol) {
        assign[i] = static_cast<int>(j);
        col_used[j] = 1;
        fixed += sq[i * n + j];
        break;
      }
    }
    if (assign[i] < 0) fail(ErrorKind::kNumerical, "hungarian: tie refinement failed");
  }
  return finish(cost, std::move(assign));
}

Assignment brute_force_match(const CostMatrix& cost) {
  if (cost.rows() != cost.cols()) fail(ErrorKind::kInvalidArgument, "brute_force_match: matrix must be square");
  if (cost.rows() == 0) fail(ErrorKind::kInvalidArgument, "brute_force_match: empty cost matrix");
  if (cost.rows() > 8) {
    fail(ErrorKind::kInvalidArgument, "brute_force_match: n = " + std::to_string(cost.rows()) + " exceeds 8");
  }
  cost.validate();
  const std::size_t n = cost.rows();
  std::vector<int> perm(n);
  std::iota(perm.begin(), perm.end(), 0);
  auto total_of = [&](const std::vector<int>& p) {
    double t = 0.0;
    for (std::size_t i = 0; i < n; ++i) t += cost(i, static_cast<std::size_t>(p[i]));
    return t;
  };
  double best = std::numeric_limits<double>::infinity();
  do {
    best = std::min(best, total_of(perm));
  } while (std::next_permutation(perm.begin(), perm.end()));
  const double tol = tie_tolerance(cost.values());
  std::iota(perm.begin(), perm.end(), 0);
  do {
    if (total_of(perm) <= best + tol) break;
  } while (std::next_permutation(perm.begin(), perm.end()));
  return finish(cost, perm);
}

}  // namespace esam3::match
