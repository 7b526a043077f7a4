#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <numeric>
#include <vector>

#include "foa/error.hpp"
#include "foa/matrix.hpp"

namespace foa {

/// n x n transport cost with entries in [0, 2].
class CostMatrix {
 public:
  CostMatrix() = default;
  explicit CostMatrix(Matrix m) : m_(std::move(m)) {
    require(m_.rows() == m_.cols() && m_.rows() >= 1, ErrorCode::ShapeMismatch,
            "cost matrix must be square and nonempty");
    for (double& c : m_.flat()) {
      require(std::isfinite(c) && c >= -1e-12 && c <= 2.0 + 1e-12, ErrorCode::InvalidDims,
              "cost entries must lie in [0, 2]");
      c = std::clamp(c, 0.0, 2.0);
    }
  }

  std::size_t n() const noexcept { return m_.rows(); }
  double operator()(std::size_t a, std::size_t b) const { return m_(a, b); }
  const Matrix& matrix() const noexcept { return m_; }

 private:
  Matrix m_;
};

struct TransportPlan {
  Matrix plan;  // pi_ab
  Vector u;
  Vector v;
  double cost = 0.0;
  std::size_t iterations = 0;
  std::size_t newton_steps = 0;
  double marginal_residual = 0.0;
};

struct SinkhornOptions {
  double lambda = 0.1;
  std::size_t max_iter = 1000;  // per stage when annealing
  double tol = 1e-9;
  // Subtract row minima then column minima of C before forming the kernel.
  // The plan is unchanged (the shifts fold into u and v) but exp(-C/lambda)
  // keeps an entry of 1 in every row and column, which is what lets small
  // lambda run in the plain (non-log) domain. u and v are then the scalings
  // of the reduced kernel.
  bool reduce_costs = true;
  // Small lambda: solve at anneal_start, anneal_start*anneal_ratio, ... down
  // to lambda, folding each stage's potentials into the cost before the next
  // stage. Off by default. Entries on the optimal support would otherwise
  // underflow exp(-C/lambda) for lambda near 1e-3.
  bool anneal = false;
  double anneal_start = 0.1;
  double anneal_ratio = 0.5;
  // Newton steps on log(u), log(v) when scaling stops above tol. Scaling
  // crawls on kernels close to a permutation matrix.
  bool newton_polish = false;
  std::size_t newton_max_steps = 100;
};

namespace detail {

inline Vector normalized_row(std::span<const double> r) {
  const double nr = norm2(r);
  require(nr > 1e-12, ErrorCode::ZeroNormRow, "cost_matrix row has zero norm");
  Vector out(r.begin(), r.end());
  for (double& x : out) x /= nr;
  return out;
}

inline Matrix normalized_rows(const Matrix& x) {
  Matrix out(x.rows(), x.cols());
  for (std::size_t a = 0; a < x.rows(); ++a) {
    const Vector r = normalized_row(x.row(a));
    std::copy(r.begin(), r.end(), out.row(a).begin());
  }
  return out;
}

inline void reduce_rows_then_columns(Matrix& c) {
  const std::size_t n = c.rows();
  for (std::size_t a = 0; a < n; ++a) {
    auto r = c.row(a);
    const double mn = *std::min_element(r.begin(), r.end());
    for (double& x : r) x -= mn;
  }
  for (std::size_t b = 0; b < n; ++b) {
    double mn = std::numeric_limits<double>::infinity();
    for (std::size_t a = 0; a < n; ++a) mn = std::min(mn, c(a, b));
    for (std::size_t a = 0; a < n; ++a) c(a, b) -= mn;
  }
}

struct Scaling {
  Matrix kernel;
  Vector u, v;
  std::size_t iterations = 0;
};

// Plain alternating scaling on exp(-c/lambda), v starting at ones.
inline Scaling scale_kernel(const Matrix& c, double lambda, std::size_t max_iter, double tol) {
  const std::size_t n = c.rows();
  const double inv_n = 1.0 / static_cast<double>(n);
  Scaling s;
  s.kernel = Matrix(n, n);
  Matrix& k = s.kernel;
  for (std::size_t i = 0; i < k.size(); ++i) k.flat()[i] = std::exp(-c.flat()[i] / lambda);
  for (std::size_t a = 0; a < n; ++a) {
    double rs = 0.0, cs = 0.0;
    for (std::size_t b = 0; b < n; ++b) {
      rs += k(a, b);
      cs += k(b, a);
    }
    require(rs >= 1e-300 && cs >= 1e-300, ErrorCode::NumericalUnderflow,
            "Sinkhorn kernel row/column sum underflows; lambda too small for this cost");
  }
  s.u.assign(n, 1.0);
  s.v.assign(n, 1.0);
  std::size_t it = 0;
  while (it < max_iter) {
    ++it;
    for (std::size_t a = 0; a < n; ++a) s.u[a] = inv_n / dot(k.row(a), s.v);
    for (std::size_t b = 0; b < n; ++b) {
      double q = 0.0;
      for (std::size_t a = 0; a < n; ++a) q += k(a, b) * s.u[a];
      s.v[b] = inv_n / q;
    }
    for (std::size_t a = 0; a < n; ++a)
      require(std::isfinite(s.u[a]) && std::isfinite(s.v[a]) && s.u[a] > 1e-300 && s.v[a] > 1e-300,
              ErrorCode::NumericalUnderflow, "Sinkhorn scaling vectors left the representable range");
    // Column marginals are exact right after the v update; the rows carry the residual.
    double residual = 0.0;
    for (std::size_t a = 0; a < n; ++a)
      residual = std::max(residual, std::abs(s.u[a] * dot(k.row(a), s.v) - inv_n));
    if (residual < tol) break;
  }
  s.iterations = it;
  return s;
}

inline double plan_residual(const Matrix& k, const Vector& u, const Vector& v, Vector* rows = nullptr,
                            Vector* cols = nullptr) {
  const std::size_t n = k.rows();
  const double inv_n = 1.0 / static_cast<double>(n);
  Vector r(n, 0.0), c(n, 0.0);
  for (std::size_t a = 0; a < n; ++a)
    for (std::size_t b = 0; b < n; ++b) {
      const double p = u[a] * k(a, b) * v[b];
      r[a] += p;
      c[b] += p;
    }
  double worst = 0.0;
  for (std::size_t a = 0; a < n; ++a) worst = std::max({worst, std::abs(r[a] - inv_n), std::abs(c[a] - inv_n)});
  if (rows) *rows = std::move(r);
  if (cols) *cols = std::move(c);
  return worst;
}

// Solves A x = b in place, partial pivoting. A is m x m row-major.
inline bool solve_dense(std::vector<double>& a, std::vector<double>& b, std::size_t m) {
  for (std::size_t col = 0; col < m; ++col) {
    std::size_t piv = col;
    for (std::size_t r = col + 1; r < m; ++r)
      if (std::abs(a[r * m + col]) > std::abs(a[piv * m + col])) piv = r;
    if (!(std::abs(a[piv * m + col]) > 0.0)) return false;
    if (piv != col) {
      for (std::size_t k = 0; k < m; ++k) std::swap(a[col * m + k], a[piv * m + k]);
      std::swap(b[col], b[piv]);
    }
    for (std::size_t r = col + 1; r < m; ++r) {
      const double f = a[r * m + col] / a[col * m + col];
      if (f == 0.0) continue;
      for (std::size_t k = col; k < m; ++k) a[r * m + k] -= f * a[col * m + k];
      b[r] -= f * b[col];
    }
  }
  for (std::size_t col = m; col-- > 0;) {
    double acc = b[col];
    for (std::size_t k = col + 1; k < m; ++k) acc -= a[col * m + k] * b[k];
    b[col] = acc / a[col * m + col];
  }
  return true;
}

// Damped Newton on the marginal equations in (log u, log v) with the gauge
// log v_{n-1} fixed. The last column equation is implied by the others.
inline std::size_t newton_polish(const Matrix& k, Vector& u, Vector& v, double tol, std::size_t max_steps) {
  const std::size_t n = k.rows();
  if (n < 2) return 0;
  const double inv_n = 1.0 / static_cast<double>(n);
  const std::size_t m = 2 * n - 1;
  Vector rows, cols;
  double res = plan_residual(k, u, v, &rows, &cols);
  std::size_t steps = 0;
  while (res >= tol && steps < max_steps) {
    ++steps;
    std::vector<double> jac(m * m, 0.0), rhs(m, 0.0);
    for (std::size_t a = 0; a < n; ++a) {
      jac[a * m + a] = rows[a];
      rhs[a] = inv_n - rows[a];
      for (std::size_t b = 0; b + 1 < n; ++b) {
        const double p = u[a] * k(a, b) * v[b];
        jac[a * m + n + b] = p;
        jac[(n + b) * m + a] = p;
      }
    }
    for (std::size_t b = 0; b + 1 < n; ++b) {
      jac[(n + b) * m + n + b] = cols[b];
      rhs[n + b] = inv_n - cols[b];
    }
    if (!solve_dense(jac, rhs, m)) break;
    bool improved = false;
    for (double t = 1.0; t > 1e-6; t *= 0.5) {
      Vector nu = u, nv = v;
      for (std::size_t a = 0; a < n; ++a) nu[a] *= std::exp(t * rhs[a]);
      for (std::size_t b = 0; b + 1 < n; ++b) nv[b] *= std::exp(t * rhs[n + b]);
      Vector nr, nc;
      const double r2 = plan_residual(k, nu, nv, &nr, &nc);
      if (r2 < res) {
        u = std::move(nu);
        v = std::move(nv);
        rows = std::move(nr);
        cols = std::move(nc);
        res = r2;
        improved = true;
        break;
      }
    }
    if (!improved) break;
  }
  for (std::size_t a = 0; a < n; ++a)
    require(std::isfinite(u[a]) && std::isfinite(v[a]) && u[a] > 1e-300 && v[a] > 1e-300,
            ErrorCode::NumericalUnderflow, "Sinkhorn scaling vectors left the representable range");
  return steps;
}

}  // namespace detail

/// C_ab = 1 - <x_a/|x_a|, y_b/|y_b|>.
inline CostMatrix cost_matrix(const Matrix& x_clu, const Matrix& y_clu) {
  require(x_clu.rows() == y_clu.rows() && x_clu.cols() == y_clu.cols() && x_clu.rows() >= 1,
          ErrorCode::ShapeMismatch, "cost_matrix needs matching n x d inputs");
  const Matrix xn = detail::normalized_rows(x_clu);
  const Matrix yn = detail::normalized_rows(y_clu);
  const std::size_t n = x_clu.rows();
  Matrix c(n, n);
  for (std::size_t a = 0; a < n; ++a)
    for (std::size_t b = 0; b < n; ++b) c(a, b) = std::clamp(1.0 - dot(xn.row(a), yn.row(b)), 0.0, 2.0);
  return CostMatrix(std::move(c));
}

/// Entropic OT with uniform 1/n marginals: u updated first from v = 1, then v.
inline TransportPlan sinkhorn(const CostMatrix& cost, const SinkhornOptions& opt = {}) {
  require(opt.lambda > 0.0, ErrorCode::InvalidConfig, "sinkhorn lambda must be > 0");
  require(!opt.anneal || (opt.anneal_ratio > 0.0 && opt.anneal_ratio < 1.0), ErrorCode::InvalidConfig,
          "sinkhorn anneal_ratio must lie in (0, 1)");
  const std::size_t n = cost.n();
  const double inv_n = 1.0 / static_cast<double>(n);

  Matrix work = cost.matrix();
  if (opt.reduce_costs) detail::reduce_rows_then_columns(work);

  TransportPlan tp;
  double lam = opt.anneal ? std::max(opt.lambda, opt.anneal_start) : opt.lambda;
  detail::Scaling s;
  while (true) {
    s = detail::scale_kernel(work, lam, opt.max_iter, opt.tol);
    tp.iterations += s.iterations;
    if (lam <= opt.lambda) break;
    // fold lambda*log(sqrt(n) u_a) + lambda*log(sqrt(n) v_b) into the cost
    const double rn = std::sqrt(static_cast<double>(n));
    for (std::size_t a = 0; a < n; ++a)
      for (std::size_t b = 0; b < n; ++b)
        work(a, b) -= lam * (std::log(rn * s.u[a]) + std::log(rn * s.v[b]));
    lam = std::max(opt.lambda, lam * opt.anneal_ratio);
  }
  if (opt.newton_polish)
    tp.newton_steps = detail::newton_polish(s.kernel, s.u, s.v, opt.tol, opt.newton_max_steps);
  tp.u = s.u;
  tp.v = s.v;

  tp.plan = Matrix(n, n);
  for (std::size_t a = 0; a < n; ++a)
    for (std::size_t b = 0; b < n; ++b) tp.plan(a, b) = tp.u[a] * s.kernel(a, b) * tp.v[b];
  double worst = 0.0;
  for (std::size_t a = 0; a < n; ++a) {
    double rs = 0.0, cs = 0.0;
    for (std::size_t b = 0; b < n; ++b) {
      rs += tp.plan(a, b);
      cs += tp.plan(b, a);
    }
    worst = std::max({worst, std::abs(rs - inv_n), std::abs(cs - inv_n)});
  }
  tp.marginal_residual = worst;
  tp.cost = 0.0;
  for (std::size_t i = 0; i < tp.plan.size(); ++i) tp.cost += cost.matrix().flat()[i] * tp.plan.flat()[i];
  return tp;
}

inline TransportPlan sinkhorn(const CostMatrix& cost, double lambda, std::size_t max_iter = 1000,
                              double tol = 1e-9) {
  SinkhornOptions opt;
  opt.lambda = lambda;
  opt.max_iter = max_iter;
  opt.tol = tol;
  return sinkhorn(cost, opt);
}

struct ExactTransport {
  Matrix plan;
  double cost = 0.0;
  std::vector<std::size_t> permutation;  // plan(a, permutation[a]) = 1/n
};

inline constexpr std::size_t kBruteForceMaxN = 8;

/// Exact OT between uniform 1/n marginals by enumerating permutation couplings.
inline ExactTransport exact_ot_bruteforce(const CostMatrix& cost) {
  const std::size_t n = cost.n();
  require(n <= kBruteForceMaxN, ErrorCode::TooLarge, "brute-force OT supports n <= 8");
  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  ExactTransport best;
  best.cost = std::numeric_limits<double>::infinity();
  do {
    double s = 0.0;
    for (std::size_t a = 0; a < n; ++a) s += cost(a, perm[a]);
    s /= static_cast<double>(n);
    if (s < best.cost) {
      best.cost = s;
      best.permutation = perm;
    }
  } while (std::next_permutation(perm.begin(), perm.end()));
  best.plan = Matrix(n, n);
  for (std::size_t a = 0; a < n; ++a) best.plan(a, best.permutation[a]) = 1.0 / static_cast<double>(n);
  return best;
}

struct SinkhornLossGrad {
  double cost = 0.0;
  Matrix d_x_clu;
  TransportPlan plan;
};

/// d(sum C_ab pi_ab)/dX with pi held at the Sinkhorn solution.
inline Matrix transport_cost_grad(const Matrix& x_clu, const Matrix& y_clu, const Matrix& plan) {
  const std::size_t n = x_clu.rows();
  const std::size_t d = x_clu.cols();
  require(plan.rows() == n && plan.cols() == n && y_clu.rows() == n && y_clu.cols() == d,
          ErrorCode::ShapeMismatch, "transport gradient shapes disagree");
  const Matrix yn = detail::normalized_rows(y_clu);
  Matrix g(n, d);
  Vector dxhat(d);
  for (std::size_t a = 0; a < n; ++a) {
    const auto xa = x_clu.row(a);
    const double nx = norm2(xa);
    require(nx > 1e-12, ErrorCode::ZeroNormRow, "transport gradient row has zero norm");
    std::fill(dxhat.begin(), dxhat.end(), 0.0);
    for (std::size_t b = 0; b < n; ++b) axpy(-plan(a, b), yn.row(b), dxhat);
    // Project out the radial component: (I - x^ x^T) / |x|.
    const double radial = dot(dxhat, xa) / nx;
    auto ga = g.row(a);
    for (std::size_t c = 0; c < d; ++c) ga[c] = (dxhat[c] - radial * xa[c] / nx) / nx;
  }
  return g;
}

inline SinkhornLossGrad sinkhorn_loss_grad(const Matrix& x_clu, const Matrix& y_clu,
                                           const SinkhornOptions& opt = {}) {
  SinkhornLossGrad out;
  out.plan = sinkhorn(cost_matrix(x_clu, y_clu), opt);
  out.cost = out.plan.cost;
  out.d_x_clu = transport_cost_grad(x_clu, y_clu, out.plan.plan);
  return out;
}

}  // namespace foa
