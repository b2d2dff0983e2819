#pragma once

// Linear-algebra and optimization kernels shared by every estimator: OLS with
// rank checking, non-negative least squares via an active-set method (exact
// zeros, KKT certificate, finite termination), truncated principal components
// via SVD, and a leave-one-period-out cross-validation driver. All functions
// are pure and reentrant.

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/SVD>

#include "eventcausal/errors.hpp"

namespace eventcausal {

struct OlsFit {
  double intercept = 0.0;
  Eigen::VectorXd slopes;     // length K
  Eigen::VectorXd residuals;  // length T
  int n_obs = 0;

  double predict(const Eigen::VectorXd& x) const {
    return intercept + slopes.dot(x);
  }
};

// Least squares of y on X (optionally with a prepended constant). Rank is
// checked via singular values: smallest > 1e-10 * largest required. K = 0 with
// an intercept degenerates to the sample mean.
inline OlsFit ols(const Eigen::VectorXd& y, const Eigen::MatrixXd& X,
                  bool with_intercept = true) {
  const int T = static_cast<int>(y.size());
  const int K = static_cast<int>(X.cols());
  if (X.rows() != T && K > 0)
    throw Error(errc::length_mismatch, "ols", "y and X row counts differ");
  if (T <= K + 1)
    throw Error(errc::too_few_observations, "ols",
                "need more than " + std::to_string(K + 1) + " observations, have " +
                    std::to_string(T));

  const int P = K + (with_intercept ? 1 : 0);
  OlsFit fit;
  fit.n_obs = T;
  if (P == 0) {
    fit.slopes.resize(0);
    fit.residuals = y;
    return fit;
  }
  Eigen::MatrixXd Z(T, P);
  int c = 0;
  if (with_intercept) Z.col(c++).setOnes();
  for (int k = 0; k < K; ++k) Z.col(c++) = X.col(k);

  Eigen::JacobiSVD<Eigen::MatrixXd> svd(Z, Eigen::ComputeThinU | Eigen::ComputeThinV);
  const auto& sv = svd.singularValues();
  if (sv(sv.size() - 1) <= 1e-10 * sv(0))
    throw Error(errc::rank_deficient, "ols",
                "design matrix numerically rank deficient");
  Eigen::VectorXd coef = svd.solve(y);

  if (with_intercept) {
    fit.intercept = coef(0);
    fit.slopes = coef.tail(K);
  } else {
    fit.slopes = coef;
  }
  fit.residuals = y - Z * coef;
  return fit;
}

struct NnlsSolution {
  Eigen::VectorXd weights;    // length J, >= 0 with exact zeros off-support
  double objective = 0.0;     // SSE at the solution
  double kkt_residual = 0.0;  // max violation of stationarity/dual feasibility
  int iterations = 0;
};

namespace detail {

// Max KKT violation for min ||b - Aw||^2 s.t. w >= 0, using gradient
// g = 2 A'(Aw - b): positive weights need g ~ 0, zero weights need g >= 0.
inline double nnls_kkt(const Eigen::MatrixXd& A, const Eigen::VectorXd& b,
                       const Eigen::VectorXd& w) {
  Eigen::VectorXd g = 2.0 * A.transpose() * (A * w - b);
  double viol = 0.0;
  for (int j = 0; j < w.size(); ++j) {
    if (w(j) > 0.0)
      viol = std::max(viol, std::abs(g(j)));
    else
      viol = std::max(viol, std::max(0.0, -g(j)));
  }
  return viol;
}

}  // namespace detail

// Active-set non-negative least squares (Lawson–Hanson scheme). Chosen over
// projected gradient so that off-support weights are exactly zero and the
// iteration terminates finitely; a projected-gradient solver exists in the
// test suite as an independent oracle only. Iteration cap: 50 * J.
inline NnlsSolution nnls(const Eigen::VectorXd& target, const Eigen::MatrixXd& columns) {
  const int T = static_cast<int>(columns.rows());
  const int J = static_cast<int>(columns.cols());
  if (T < 1 || J < 1)
    throw Error(errc::length_mismatch, "nnls", "empty problem");
  if (target.size() != T)
    throw Error(errc::length_mismatch, "nnls", "target length != rows");

  const int max_iter = 50 * J;
  // Entry tolerance scaled to the problem: a column enters only if its
  // (negative) gradient is meaningfully positive.
  const double entry_tol =
      1e-12 * std::max(1.0, (columns.transpose() * target).cwiseAbs().maxCoeff());

  Eigen::VectorXd w = Eigen::VectorXd::Zero(J);
  std::vector<int> passive;  // indices with w_j free (> 0)
  std::vector<bool> in_passive(J, false);
  int iters = 0;

  auto solve_passive = [&](void) -> Eigen::VectorXd {
    Eigen::MatrixXd Ap(T, static_cast<int>(passive.size()));
    for (size_t k = 0; k < passive.size(); ++k) Ap.col(static_cast<int>(k)) = columns.col(passive[k]);
    return Ap.colPivHouseholderQr().solve(target);
  };

  while (true) {
    Eigen::VectorXd grad = columns.transpose() * (target - columns * w);
    int enter = -1;
    double best = entry_tol;
    for (int j = 0; j < J; ++j)
      if (!in_passive[j] && grad(j) > best) {
        best = grad(j);
        enter = j;
      }
    if (enter < 0) break;  // dual feasible: done
    passive.push_back(enter);
    in_passive[enter] = true;

    while (true) {
      if (++iters > max_iter)
        throw Error(errc::numerical_failure, "nnls",
                    "iteration cap " + std::to_string(max_iter) + " exceeded");
      Eigen::VectorXd z = solve_passive();
      bool all_pos = true;
      for (int k = 0; k < z.size(); ++k)
        if (z(k) <= 0.0) {
          all_pos = false;
          break;
        }
      if (all_pos) {
        w.setZero();
        for (size_t k = 0; k < passive.size(); ++k) w(passive[k]) = z(static_cast<int>(k));
        break;
      }
      // Step toward z until the first passive weight would cross zero; the
      // crossing indices leave the passive set with weights set exactly 0.
      double alpha = std::numeric_limits<double>::infinity();
      for (size_t k = 0; k < passive.size(); ++k) {
        double zk = z(static_cast<int>(k)), wk = w(passive[k]);
        if (zk <= 0.0)
          alpha = std::min(alpha, (wk - zk > 0.0) ? wk / (wk - zk) : 0.0);
      }
      for (size_t k = 0; k < passive.size(); ++k)
        w(passive[k]) += alpha * (z(static_cast<int>(k)) - w(passive[k]));
      std::vector<int> keep;
      for (size_t k = 0; k < passive.size(); ++k) {
        double zk = z(static_cast<int>(k));
        double wk = w(passive[k]);
        bool leaves = (zk <= 0.0 && wk <= 1e-12 * std::max(1.0, std::abs(zk))) || wk <= 0.0;
        if (leaves) {
          w(passive[k]) = 0.0;
          in_passive[passive[k]] = false;
        } else {
          keep.push_back(passive[k]);
        }
      }
      passive = keep;
    }
  }

  NnlsSolution sol;
  sol.weights = w;
  sol.objective = (target - columns * w).squaredNorm();
  sol.kkt_residual = detail::nnls_kkt(columns, target, w);
  sol.iterations = iters;
  return sol;
}

struct PcaFactors {
  Eigen::MatrixXd factors;     // T x r, normalized so F'F/T = I_r
  Eigen::MatrixXd loadings;    // J x r, Lambda'Lambda diagonal
  Eigen::VectorXd intercepts;  // length J (row means)
  int r = 0;
};

// Truncated principal components of a dense J x T block. Rows are demeaned
// internally; the SVD of the demeaned block yields factors (scaled right
// singular vectors) and loadings (scaled left structure). The rank-r
// reconstruction intercepts + loadings * factors' is Frobenius-optimal.
inline PcaFactors pca_factors(const Eigen::MatrixXd& panel_block, int r) {
  const int J = static_cast<int>(panel_block.rows());
  const int T = static_cast<int>(panel_block.cols());
  if (r < 1 || r > std::min(J, T))
    throw Error(errc::rank_too_large, "pca_factors",
                "r=" + std::to_string(r) + " exceeds min(J,T)=" +
                    std::to_string(std::min(J, T)));

  PcaFactors out;
  out.r = r;
  out.intercepts = panel_block.rowwise().mean();
  Eigen::MatrixXd X = panel_block.colwise() - out.intercepts;

  Eigen::BDCSVD<Eigen::MatrixXd> svd(X, Eigen::ComputeThinU | Eigen::ComputeThinV);
  const double sqrt_t = std::sqrt(static_cast<double>(T));
  out.factors = sqrt_t * svd.matrixV().leftCols(r);
  out.loadings = svd.matrixU().leftCols(r) *
                 (svd.singularValues().head(r) / sqrt_t).asDiagonal();
  return out;
}

// Select the factor count by leave-one-period-out mean squared prediction
// error. evaluate(r, t) returns the summed squared error for held-out period
// index t. Ties break toward smaller r; "tie" covers scores within
// max(1e-18, 1e-9 * best) so that a zero-variance direction's float dust
// cannot promote a larger model.
inline int cross_validate(std::vector<int> candidates,
                          const std::function<double(int, int)>& evaluate,
                          const std::vector<int>& pre_periods) {
  if (candidates.empty())
    throw Error(errc::invalid_config, "cross_validate", "no candidates");
  if (pre_periods.size() <
      2 * static_cast<size_t>(*std::max_element(candidates.begin(), candidates.end())))
    throw Error(errc::window_too_short, "cross_validate",
                "pre-period count must be at least twice the largest candidate");
  std::sort(candidates.begin(), candidates.end());

  std::vector<double> score(candidates.size(), 0.0);
  for (size_t c = 0; c < candidates.size(); ++c) {
    double total = 0.0;
    for (int t : pre_periods) total += evaluate(candidates[c], t);
    score[c] = total / static_cast<double>(pre_periods.size());
  }
  double best = *std::min_element(score.begin(), score.end());
  const double tie = std::max(1e-18, 1e-9 * std::abs(best));
  for (size_t c = 0; c < candidates.size(); ++c)
    if (score[c] <= best + tie) return candidates[c];
  return candidates.back();  // unreachable
}

}  // namespace eventcausal
