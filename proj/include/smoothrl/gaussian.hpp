#pragma once

#include "smoothrl/common.hpp"

namespace smoothrl {

inline constexpr double kLogTwoPi = 1.8378770664093454836;  // log(2*pi)

/// Log density of a diagonal Gaussian N(mean, diag(exp(log_std)^2)) at `a`.
inline double gaussian_log_prob(const Vec& mean, const Vec& log_std, const Vec& a) {
  if (mean.size() != a.size() || mean.size() != log_std.size()) {
    throw std::invalid_argument("gaussian_log_prob: dimension mismatch");
  }
  double lp = 0.0;
  for (int j = 0; j < mean.size(); ++j) {
    const double sigma = std::exp(log_std[j]);
    const double z = (a[j] - mean[j]) / sigma;
    lp += -0.5 * kLogTwoPi - log_std[j] - 0.5 * z * z;
  }
  return lp;
}

/// KL(p || q) between diagonal Gaussians given as (mean, std) pairs:
/// sum_j [ log(s2/s1) + (s1^2 + (m1-m2)^2) / (2 s2^2) - 1/2 ].
inline double kl_diag_gaussian(const Vec& mu1, const Vec& sigma1, const Vec& mu2, const Vec& sigma2) {
  if (mu1.size() != mu2.size() || mu1.size() != sigma1.size() || mu1.size() != sigma2.size()) {
    throw std::invalid_argument("kl_diag_gaussian: dimension mismatch");
  }
  double kl = 0.0;
  for (int j = 0; j < mu1.size(); ++j) {
    if (!(sigma1[j] > 0.0) || !(sigma2[j] > 0.0)) {
      throw std::invalid_argument("kl_diag_gaussian: std must be positive");
    }
    const double dm = mu1[j] - mu2[j];
    kl += std::log(sigma2[j] / sigma1[j]) + (sigma1[j] * sigma1[j] + dm * dm) / (2.0 * sigma2[j] * sigma2[j]) - 0.5;
  }
  return kl;
}

/// Jeffrey's divergence: (KL(p||q) + KL(q||p)) / 2.
inline double jeffrey_diag_gaussian(const Vec& mu1, const Vec& sigma1, const Vec& mu2, const Vec& sigma2) {
  return 0.5 * kl_diag_gaussian(mu1, sigma1, mu2, sigma2) + 0.5 * kl_diag_gaussian(mu2, sigma2, mu1, sigma1);
}

/// Jeffrey's divergence when both Gaussians share one std vector; reduces to
/// sum_j (m1j - m2j)^2 / (2 sj^2). This is the specialization used by the
/// policy smoothness regularizer, where the std is state-independent.
inline double jeffrey_shared_std(const Vec& mu1, const Vec& mu2, const Vec& sigma) {
  double d = 0.0;
  for (int j = 0; j < mu1.size(); ++j) {
    const double dm = mu1[j] - mu2[j];
    d += dm * dm / (2.0 * sigma[j] * sigma[j]);
  }
  return d;
}

// --- batched (column-per-sample) variants -----------------------------------

/// Log densities for a batch: means/actions are (A x n), log_std is shared.
inline Vec gaussian_log_prob_batch(const Mat& means, const Vec& log_std, const Mat& actions) {
  const Eigen::Index n = means.cols();
  const Eigen::Index adim = means.rows();
  Vec lp(n);
  Vec inv_var(adim);
  double base = 0.0;
  for (Eigen::Index j = 0; j < adim; ++j) {
    inv_var[j] = std::exp(-2.0 * log_std[j]);
    base += -0.5 * kLogTwoPi - log_std[j];
  }
  for (Eigen::Index i = 0; i < n; ++i) {
    double s = base;
    for (Eigen::Index j = 0; j < adim; ++j) {
      const double dm = actions(j, i) - means(j, i);
      s -= 0.5 * dm * dm * inv_var[j];
    }
    lp[i] = s;
  }
  return lp;
}

/// Mean over columns of KL(p_i || q_i) with shared per-distribution stds.
inline double mean_kl_batch(const Mat& mu1, const Vec& log_std1, const Mat& mu2, const Vec& log_std2) {
  const Eigen::Index n = mu1.cols();
  const Eigen::Index adim = mu1.rows();
  double base = 0.0;
  Vec half_inv_var2(adim);
  for (Eigen::Index j = 0; j < adim; ++j) {
    const double s1 = std::exp(log_std1[j]);
    const double s2 = std::exp(log_std2[j]);
    half_inv_var2[j] = 0.5 / (s2 * s2);
    base += (log_std2[j] - log_std1[j]) + s1 * s1 * half_inv_var2[j] - 0.5;
  }
  double total = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    double s = base;
    for (Eigen::Index j = 0; j < adim; ++j) {
      const double dm = mu1(j, i) - mu2(j, i);
      s += dm * dm * half_inv_var2[j];
    }
    total += s;
  }
  return total / static_cast<double>(n);
}

}  // namespace smoothrl
