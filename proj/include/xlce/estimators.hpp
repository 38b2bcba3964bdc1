#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <complex>
#include <limits>
#include <ostream>
#include <stdexcept>
#include <vector>

#include "xlce/channel.hpp"
#include "xlce/io.hpp"

namespace xlce {

// ---------------------------------------------------------------------------
// LMMSE with empirical covariance

struct CovarianceModel {
  Eigen::MatrixXcd r;  // M x M, Hermitian PSD
  std::int64_t sample_count = 0;

  bool low_sample_count() const { return sample_count < r.rows(); }
};

/// R = (1/N) sum h h^H, Hermitian-symmetrized.
inline CovarianceModel fit_covariance(const std::vector<ComplexChannel>& samples) {
  if (samples.empty()) throw std::invalid_argument("covariance: empty sample set");
  Eigen::Index m = samples.front().size();
  Eigen::MatrixXcd acc = Eigen::MatrixXcd::Zero(m, m);
  for (const auto& h : samples) {
    if (h.size() != m) throw std::invalid_argument("covariance: inconsistent dimensions");
    acc.noalias() += h * h.adjoint();
  }
  acc /= static_cast<double>(samples.size());
  CovarianceModel cov;
  cov.r = 0.5 * (acc + acc.adjoint());
  cov.sample_count = static_cast<std::int64_t>(samples.size());
  return cov;
}

/// Covariance checkpoint: magic "XLCV", M u32, then M^2 complex f64 row-major.
inline void save_covariance(const std::string& path, const CovarianceModel& cov) {
  BinaryWriter w(path);
  w.magic("XLCV");
  w.u32(static_cast<std::uint32_t>(cov.r.rows()));
  for (Eigen::Index i = 0; i < cov.r.rows(); ++i)
    for (Eigen::Index j = 0; j < cov.r.cols(); ++j) {
      w.f64(cov.r(i, j).real());
      w.f64(cov.r(i, j).imag());
    }
  w.close();
}

inline CovarianceModel load_covariance(const std::string& path) {
  BinaryReader r(path);
  r.expect_magic("XLCV");
  Eigen::Index m = static_cast<Eigen::Index>(r.u32());
  CovarianceModel cov;
  cov.r.resize(m, m);
  for (Eigen::Index i = 0; i < m; ++i)
    for (Eigen::Index j = 0; j < m; ++j) {
      double re = r.f64();
      double im = r.f64();
      cov.r(i, j) = {re, im};
    }
  cov.sample_count = m;  // unknown; file stores the matrix only
  return cov;
}

/// h_hat = R (R + (sigma^2/P) I)^-1 (y / sqrt(P)). Zero noise collapses to LS
/// exactly; otherwise a Hermitian LDLT solve with a tiny trace ridge.
inline ComplexChannel lmmse_estimate(const ComplexChannel& y, const SignalConfig& sig,
                                     const CovarianceModel& cov) {
  sig.validate();
  ComplexChannel ls = ls_estimate(y, sig);
  if (sig.noise_variance == 0.0) return ls;
  if (cov.r.rows() != y.size())
    throw std::invalid_argument("lmmse: covariance size does not match observation");
  Eigen::Index m = y.size();
  double c = sig.noise_variance / sig.pilot_power;
  double ridge = 1e-10 * cov.r.trace().real() / static_cast<double>(m);
  Eigen::MatrixXcd a = cov.r;
  a.diagonal().array() += std::complex<double>(c + ridge, 0.0);
  Eigen::LDLT<Eigen::MatrixXcd> ldlt(a);
  if (ldlt.info() != Eigen::Success)
    throw std::runtime_error("lmmse: regularized system is still singular");
  return cov.r * ldlt.solve(ls);
}

// ---------------------------------------------------------------------------
// Steering-vector dictionaries

enum class AtomKind { Angular, Polar };

struct AtomMeta {
  AtomKind kind = AtomKind::Angular;
  double phi = 0.0;
  double r_m = std::numeric_limits<double>::quiet_NaN();  // NaN for angular atoms
};

struct Dictionary {
  Eigen::MatrixXcd atoms;  // M x N, unit-norm columns
  std::vector<AtomMeta> meta;

  Eigen::Index size() const { return atoms.cols(); }

  /// CSV: atom_index, kind, phi, r.
  void export_csv(std::ostream& out) const {
    out << "atom_index,kind,phi,r\n";
    out.precision(17);
    for (std::size_t i = 0; i < meta.size(); ++i) {
      out << i << ',' << (meta[i].kind == AtomKind::Angular ? "angular" : "polar") << ','
          << meta[i].phi << ',';
      if (std::isnan(meta[i].r_m))
        out << "";
      else
        out << meta[i].r_m;
      out << '\n';
    }
  }
};

/// The distance rings of the reference scenario (geometric spacing over the
/// 10..80 m sampling range).
inline std::vector<double> default_distance_rings() {
  return {10.0, 14.0, 20.0, 28.0, 40.0, 57.0, 80.0};
}

inline std::vector<double> geometric_rings(double r_min, double r_max, int count) {
  if (count < 1 || !(r_min > 0.0) || !(r_max > r_min))
    throw std::invalid_argument("rings: need count >= 1 and 0 < r_min < r_max");
  std::vector<double> out;
  out.reserve(static_cast<std::size_t>(count));
  if (count == 1) {
    out.push_back(std::sqrt(r_min * r_max));
    return out;
  }
  double ratio = std::pow(r_max / r_min, 1.0 / (count - 1));
  double r = r_min;
  for (int i = 0; i < count; ++i) {
    out.push_back(r);
    r *= ratio;
  }
  return out;
}

/// Angular atoms on a uniform sin-grid over [-1, 1), then one polar atom per
/// (angle, ring) pair, ring-major. n_angles = M on a half-wavelength array
/// yields an orthonormal (DFT-like) angular family.
inline Dictionary build_dictionary(const ArrayConfig& array, int n_angles,
                                   const std::vector<double>& distance_rings) {
  array.validate();
  if (n_angles < 1) throw std::invalid_argument("dictionary: n_angles must be >= 1");
  Dictionary d;
  Eigen::Index cols = n_angles + static_cast<Eigen::Index>(distance_rings.size()) * n_angles;
  d.atoms.resize(array.m, cols);
  d.meta.reserve(static_cast<std::size_t>(cols));
  Eigen::Index col = 0;
  std::vector<double> phis(static_cast<std::size_t>(n_angles));
  for (int k = 0; k < n_angles; ++k) {
    double s = -1.0 + 2.0 * k / n_angles;
    phis[static_cast<std::size_t>(k)] = std::asin(s);
  }
  for (int k = 0; k < n_angles; ++k) {
    d.atoms.col(col++) = far_field_steering(array, phis[static_cast<std::size_t>(k)]);
    d.meta.push_back({AtomKind::Angular, phis[static_cast<std::size_t>(k)],
                      std::numeric_limits<double>::quiet_NaN()});
  }
  for (double r : distance_rings) {
    if (!(r > 0.0)) throw std::invalid_argument("dictionary: ring distance must be > 0");
    for (int k = 0; k < n_angles; ++k) {
      d.atoms.col(col++) = near_field_steering(array, phis[static_cast<std::size_t>(k)], r);
      d.meta.push_back({AtomKind::Polar, phis[static_cast<std::size_t>(k)], r});
    }
  }
  return d;
}

// ---------------------------------------------------------------------------
// Orthogonal matching pursuit

struct OmpStage {
  bool restrict_kind = false;
  AtomKind kind = AtomKind::Angular;
  int count = 0;
};

struct OmpResult {
  ComplexChannel estimate;
  std::vector<Eigen::Index> support;
  std::vector<double> residual_norms;  // before iteration 1, then after each selection
};

/// Greedy OMP on an explicit target vector. Per selection: pick the unused
/// (stage-allowed) atom with the largest |correlation| against the residual
/// (ties break to the lowest index), re-solve least squares on the selected
/// set via column-pivoted QR, update the residual. A selection that makes the
/// set rank-deficient is dropped and excluded, and the search continues.
inline OmpResult omp_core(const ComplexChannel& target, const Dictionary& dict,
                          const std::vector<OmpStage>& stages) {
  Eigen::Index m = target.size();
  if (dict.atoms.rows() != m)
    throw std::invalid_argument("omp: dictionary row count does not match target");
  int total = 0;
  for (const auto& st : stages) {
    if (st.count < 0) throw std::invalid_argument("omp: negative sparsity");
    total += st.count;
  }
  if (total > dict.size())
    throw std::invalid_argument("omp: sparsity " + std::to_string(total) +
                                " exceeds atom count " + std::to_string(dict.size()));
  OmpResult res;
  res.estimate = ComplexChannel::Zero(m);
  ComplexChannel residual = target;
  res.residual_norms.push_back(residual.norm());
  std::vector<char> used(static_cast<std::size_t>(dict.size()), 0);
  Eigen::MatrixXcd selected(m, 0);
  Eigen::VectorXcd coeffs;

  for (const auto& st : stages) {
    int picked = 0;
    while (picked < st.count) {
      Eigen::Index best = -1;
      double best_corr = -1.0;
      for (Eigen::Index j = 0; j < dict.size(); ++j) {
        if (used[static_cast<std::size_t>(j)]) continue;
        if (st.restrict_kind && dict.meta[static_cast<std::size_t>(j)].kind != st.kind)
          continue;
        double corr = std::abs(dict.atoms.col(j).dot(residual));
        if (corr > best_corr) {
          best_corr = corr;
          best = j;
        }
      }
      if (best < 0) break;  // no candidates left in this stage
      used[static_cast<std::size_t>(best)] = 1;
      selected.conservativeResize(Eigen::NoChange, selected.cols() + 1);
      selected.col(selected.cols() - 1) = dict.atoms.col(best);
      Eigen::ColPivHouseholderQR<Eigen::MatrixXcd> qr(selected);
      if (qr.rank() < selected.cols()) {
        selected.conservativeResize(Eigen::NoChange, selected.cols() - 1);
        continue;  // atom stays excluded, keep searching
      }
      res.support.push_back(best);
      coeffs = qr.solve(target);
      residual = target - selected * coeffs;
      res.residual_norms.push_back(residual.norm());
      ++picked;
    }
  }
  if (!res.support.empty()) res.estimate = selected * coeffs;
  return res;
}

/// OMP on the LS estimate y/sqrt(P), any atom kind.
inline ComplexChannel omp_estimate(const ComplexChannel& y, const SignalConfig& sig,
                                   const Dictionary& dict, int sparsity) {
  return omp_core(ls_estimate(y, sig), dict, {{false, AtomKind::Angular, sparsity}})
      .estimate;
}

/// Hybrid OMP: k_far selections restricted to angular atoms, then k_near
/// restricted to polar atoms, mirroring the far/near path split.
inline ComplexChannel hybrid_omp_estimate(const ComplexChannel& y, const SignalConfig& sig,
                                          const Dictionary& dict, int k_far, int k_near) {
  return omp_core(ls_estimate(y, sig), dict,
                  {{true, AtomKind::Angular, k_far}, {true, AtomKind::Polar, k_near}})
      .estimate;
}

}  // namespace xlce
