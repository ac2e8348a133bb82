#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <cstddef>
#include <limits>
#include <numeric>
#include <stdexcept>
#include <vector>

namespace vialign {

// A permutation of d items. map[i] is the column matched to row i, so the
// materialized matrix P has P(i, map[i]) = 1 and left-multiplying by P
// picks out row map[i]: (P A).row(i) == A.row(map[i]).
struct Permutation {
  std::vector<int> map;

  Permutation() = default;
  explicit Permutation(std::vector<int> m) : map(std::move(m)) {}

  static Permutation identity(int d) {
    Permutation p;
    p.map.resize(static_cast<std::size_t>(d));
    std::iota(p.map.begin(), p.map.end(), 0);
    return p;
  }

  int size() const { return static_cast<int>(map.size()); }

  bool is_identity() const {
    for (int i = 0; i < size(); ++i) {
      if (map[static_cast<std::size_t>(i)] != i) return false;
    }
    return true;
  }

  Permutation inverse() const {
    Permutation inv;
    inv.map.assign(map.size(), -1);
    for (int i = 0; i < size(); ++i) {
      inv.map[static_cast<std::size_t>(map[static_cast<std::size_t>(i)])] = i;
    }
    return inv;
  }

  Eigen::MatrixXd matrix() const {
    Eigen::MatrixXd P = Eigen::MatrixXd::Zero(size(), size());
    for (int i = 0; i < size(); ++i) P(i, map[static_cast<std::size_t>(i)]) = 1.0;
    return P;
  }

  bool operator==(const Permutation& o) const { return map == o.map; }
  bool operator!=(const Permutation& o) const { return !(*this == o); }

  void validate() const {
    std::vector<bool> seen(map.size(), false);
    for (int c : map) {
      if (c < 0 || c >= size() || seen[static_cast<std::size_t>(c)]) {
        throw std::invalid_argument("not a permutation");
      }
      seen[static_cast<std::size_t>(c)] = true;
    }
  }
};

// Matrix product semantics: compose(after, before) == after * before as
// permutation matrices, i.e. `before` acts first.
inline Permutation compose(const Permutation& after, const Permutation& before) {
  if (after.size() != before.size()) {
    throw std::invalid_argument("composing permutations of different size");
  }
  Permutation out;
  out.map.resize(after.map.size());
  for (int i = 0; i < after.size(); ++i) {
    out.map[static_cast<std::size_t>(i)] =
        before.map[static_cast<std::size_t>(after.map[static_cast<std::size_t>(i)])];
  }
  return out;
}

// P * A: reorders rows.
inline Eigen::MatrixXd permute_rows(const Permutation& p, const Eigen::MatrixXd& a) {
  if (p.size() != a.rows()) throw std::invalid_argument("permute_rows: size mismatch");
  Eigen::MatrixXd out(a.rows(), a.cols());
  for (int i = 0; i < p.size(); ++i) out.row(i) = a.row(p.map[static_cast<std::size_t>(i)]);
  return out;
}

// A * P^T: reorders columns with the same index convention as permute_rows.
inline Eigen::MatrixXd permute_cols(const Permutation& p, const Eigen::MatrixXd& a) {
  if (p.size() != a.cols()) throw std::invalid_argument("permute_cols: size mismatch");
  Eigen::MatrixXd out(a.rows(), a.cols());
  for (int j = 0; j < p.size(); ++j) out.col(j) = a.col(p.map[static_cast<std::size_t>(j)]);
  return out;
}

// P * v.
inline Eigen::VectorXd permute_vec(const Permutation& p, const Eigen::VectorXd& v) {
  if (p.size() != v.size()) throw std::invalid_argument("permute_vec: size mismatch");
  Eigen::VectorXd out(v.size());
  for (int i = 0; i < p.size(); ++i) out(i) = v(p.map[static_cast<std::size_t>(i)]);
  return out;
}

// <P, S>_F for the matched assignment.
inline double lap_objective(const Permutation& p, const Eigen::MatrixXd& score) {
  double total = 0.0;
  for (int i = 0; i < p.size(); ++i) total += score(i, p.map[static_cast<std::size_t>(i)]);
  return total;
}

// Exact maximum-score assignment on a square matrix via the Hungarian
// algorithm with row/column potentials, O(d^3). Scores may be any finite
// doubles; ties resolve deterministically by scan order.
inline Permutation solve_lap_max(const Eigen::MatrixXd& score) {
  if (score.rows() != score.cols()) {
    throw std::invalid_argument("solve_lap_max: matrix must be square");
  }
  if (!score.allFinite()) {
    throw std::invalid_argument("solve_lap_max: scores must be finite");
  }
  const int n = static_cast<int>(score.rows());
  if (n == 0) return Permutation{};

  const double inf = std::numeric_limits<double>::infinity();
  // Minimizing form on negated scores; index 0 is the sentinel column.
  std::vector<double> u(static_cast<std::size_t>(n) + 1, 0.0);
  std::vector<double> v(static_cast<std::size_t>(n) + 1, 0.0);
  std::vector<int> match(static_cast<std::size_t>(n) + 1, 0);  // column -> row
  std::vector<int> way(static_cast<std::size_t>(n) + 1, 0);

  for (int i = 1; i <= n; ++i) {
    match[0] = i;
    int j0 = 0;
    std::vector<double> minv(static_cast<std::size_t>(n) + 1, inf);
    std::vector<bool> used(static_cast<std::size_t>(n) + 1, false);
    do {
      used[static_cast<std::size_t>(j0)] = true;
      const int i0 = match[static_cast<std::size_t>(j0)];
      int j1 = 0;
      double delta = inf;
      for (int j = 1; j <= n; ++j) {
        if (used[static_cast<std::size_t>(j)]) continue;
        const double cur = -score(i0 - 1, j - 1) - u[static_cast<std::size_t>(i0)] -
                           v[static_cast<std::size_t>(j)];
        if (cur < minv[static_cast<std::size_t>(j)]) {
          minv[static_cast<std::size_t>(j)] = cur;
          way[static_cast<std::size_t>(j)] = j0;
        }
        if (minv[static_cast<std::size_t>(j)] < delta) {
          delta = minv[static_cast<std::size_t>(j)];
          j1 = j;
        }
      }
      for (int j = 0; j <= n; ++j) {
        if (used[static_cast<std::size_t>(j)]) {
          u[static_cast<std::size_t>(match[static_cast<std::size_t>(j)])] += delta;
          v[static_cast<std::size_t>(j)] -= delta;
        } else {
          minv[static_cast<std::size_t>(j)] -= delta;
        }
      }
      j0 = j1;
    } while (match[static_cast<std::size_t>(j0)] != 0);
    do {
      const int j1 = way[static_cast<std::size_t>(j0)];
      match[static_cast<std::size_t>(j0)] = match[static_cast<std::size_t>(j1)];
      j0 = j1;
    } while (j0 != 0);
  }

  Permutation p;
  p.map.assign(static_cast<std::size_t>(n), -1);
  for (int j = 1; j <= n; ++j) {
    p.map[static_cast<std::size_t>(match[static_cast<std::size_t>(j)] - 1)] = j - 1;
  }
  p.validate();
  return p;
}

}  // namespace vialign
