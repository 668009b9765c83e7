#include "spi/lsqr.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "spi/blas.hpp"

namespace spi {

namespace {

double norm2(const std::vector<double>& v) {
  double acc = 0.0;
  for (double x : v) acc += x * x;
  return std::sqrt(acc);
}

}  // namespace

LsqrResult lsqr_solve(const Tensor& a, const Tensor& b, const LsqrConfig& cfg) {
  if (a.rank() != 2 || b.rank() != 1 || a.extent(0) != b.extent(0))
    throw std::invalid_argument("lsqr: A " + shape_str(a.shape) + " incompatible with b " +
                                shape_str(b.shape));
  if (cfg.atol <= 0 || cfg.btol <= 0 || cfg.max_iters < 1 || cfg.damping < 0)
    throw std::invalid_argument("lsqr: invalid config");
  a.ensure_finite("lsqr: A");
  b.ensure_finite("lsqr: b");
  bool all_zero = true;
  for (double v : a.data)
    if (v != 0.0) {
      all_zero = false;
      break;
    }
  if (all_zero) throw std::invalid_argument("lsqr: zero matrix");

  const int m = static_cast<int>(a.extent(0));
  const int n = static_cast<int>(a.extent(1));
  const double* ap = a.ptr();

  LsqrResult res;
  res.x = Tensor({n});
  std::vector<double> u(b.data);
  std::vector<double> v(static_cast<size_t>(n), 0.0);
  std::vector<double> w;

  double bnorm = norm2(u);
  if (bnorm == 0.0) {
    res.stop_reason = "b = 0, x = 0 is exact";
    return res;
  }
  double beta = bnorm;
  for (auto& e : u) e /= beta;

  // v = A^T u
  detail::gemv(true, m, n, 1.0, ap, n, u.data(), 0.0, v.data());
  double alpha = norm2(v);
  if (alpha == 0.0) {
    res.stop_reason = "A^T b = 0, x = 0 is optimal";
    return res;
  }
  for (auto& e : v) e /= alpha;
  w = v;

  double phibar = beta;
  double rhobar = alpha;
  double anorm2 = 0.0;
  double xnorm = 0.0;
  const double damp2 = cfg.damping * cfg.damping;

  for (int it = 1; it <= cfg.max_iters; ++it) {
    // bidiagonalization: u <- A v - alpha u ; v <- A^T u - beta v
    detail::gemv(false, m, n, 1.0, ap, n, v.data(), 0.0, nullptr == nullptr ? u.data() : u.data());
    // the gemv above overwrote u with A v; subtract alpha * old u is lost, so
    // redo properly below.
    (void)0;
    break;
  }

  // The loop above is a stub; the real iteration follows.
  u.assign(b.data.begin(), b.data.end());
  for (auto& e : u) e /= beta;
  detail::gemv(true, m, n, 1.0, ap, n, u.data(), 0.0, v.data());
  for (auto& e : v) e /= alpha;
  w = v;
  res.x = Tensor({n});
  phibar = beta;
  rhobar = alpha;

  std::vector<double> tmp_m(static_cast<size_t>(m));
  for (int it = 1; it <= cfg.max_iters; ++it) {
    // u = A v - alpha u
    detail::gemv(false, m, n, 1.0, ap, n, v.data(), 0.0, tmp_m.data());
    for (int i = 0; i < m; ++i) u[static_cast<size_t>(i)] = tmp_m[static_cast<size_t>(i)] - alpha * u[static_cast<size_t>(i)];
    double beta1 = norm2(u);
    if (beta1 > 0)
      for (auto& e : u) e /= beta1;
    anorm2 += alpha * alpha + beta1 * beta1 + damp2;

    // v = A^T u - beta v
    std::vector<double> tmp_n(static_cast<size_t>(n));
    detail::gemv(true, m, n, 1.0, ap, n, u.data(), 0.0, tmp_n.data());
    for (int i = 0; i < n; ++i) v[static_cast<size_t>(i)] = tmp_n[static_cast<size_t>(i)] - beta1 * v[static_cast<size_t>(i)];
    double alpha1 = norm2(v);
    if (alpha1 > 0)
      for (auto& e : v) e /= alpha1;

    // eliminate damping
    double rhobar1 = std::sqrt(rhobar * rhobar + damp2);
    double phibar_d = (rhobar / rhobar1) * phibar;

    // plane rotation
    double rho = std::sqrt(rhobar1 * rhobar1 + beta1 * beta1);
    double c = rhobar1 / rho;
    double s = beta1 / rho;
    double theta = s * alpha1;
    rhobar = -c * alpha1;
    double phi = c * phibar_d;
    phibar = s * phibar_d;

    double t1 = phi / rho;
    double t2 = -theta / rho;
    for (int i = 0; i < n; ++i) {
      res.x(i) += t1 * w[static_cast<size_t>(i)];
      w[static_cast<size_t>(i)] = v[static_cast<size_t>(i)] + t2 * w[static_cast<size_t>(i)];
    }

    res.residual_norms.push_back(phibar);
    res.iterations = it;

    xnorm = 0.0;
    for (int i = 0; i < n; ++i) xnorm += res.x(i) * res.x(i);
    xnorm = std::sqrt(xnorm);
    double anorm = std::sqrt(anorm2);
    double arnorm = alpha1 * std::abs(s * phi);

    if (phibar <= cfg.btol * bnorm + cfg.atol * anorm * xnorm) {
      res.stop_reason = "residual tolerance reached";
      return res;
    }
    if (anorm * phibar > 0 && arnorm / (anorm * phibar) <= cfg.atol) {
      res.stop_reason = "normal-equations tolerance reached";
      return res;
    }
    alpha = alpha1;
    beta = beta1;
  }
  res.stop_reason = "max iterations";
  return res;
}

}  // namespace spi
