#pragma once

// Image-quality metric suite: pixel fidelity (MSE/PSNR), structural
// fidelity (SSIM with the canonical 11x11 sigma=1.5 Gaussian window on
// luma), and distributional realism as the Frechet distance between
// Gaussians fitted to pluggable feature sets. The shipped extractor is a
// deterministic handcrafted descriptor, so corpus-level numbers are
// self-consistent but not comparable to pretrained-network scores.

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "tactsynth/common.hpp"
#include "tactsynth/dataset.hpp"
#include "tactsynth/image.hpp"
#include "tactsynth/png_io.hpp"

namespace tactsynth {
namespace metrics {

inline void require_same_dims(const ImageRGB& a, const ImageRGB& b) {
  if (a.width != b.width || a.height != b.height)
    fail(ErrorCode::DimensionMismatch, "image dimensions differ");
}

inline double mse(const ImageRGB& a, const ImageRGB& b) {
  require_same_dims(a, b);
  double acc = 0.0;
  for (size_t i = 0; i < a.v.size(); ++i) {
    const double d = double(a.v[i]) - double(b.v[i]);
    acc += d * d;
  }
  return acc / static_cast<double>(a.v.size());
}

// +infinity sentinel when the images are identical.
inline double psnr(const ImageRGB& a, const ImageRGB& b,
                   double max_val = 1.0) {
  const double m = mse(a, b);
  if (m == 0.0) return std::numeric_limits<double>::infinity();
  return 10.0 * std::log10(max_val * max_val / m);
}

namespace detail {

inline std::vector<double> gaussian_window(int size, double sigma) {
  std::vector<double> w(size);
  const int half = size / 2;
  double sum = 0.0;
  for (int i = 0; i < size; ++i) {
    const double d = i - half;
    w[i] = std::exp(-d * d / (2.0 * sigma * sigma));
    sum += w[i];
  }
  for (double& v : w) v /= sum;
  return w;
}

// Separable valid-mode convolution.
inline std::vector<double> convolve_valid(const std::vector<double>& img,
                                          int w, int h,
                                          const std::vector<double>& k) {
  const int ks = static_cast<int>(k.size());
  const int ow = w - ks + 1;
  std::vector<double> tmp(static_cast<size_t>(ow) * h, 0.0);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < ow; ++x) {
      double acc = 0.0;
      for (int i = 0; i < ks; ++i) acc += k[i] * img[y * w + x + i];
      tmp[y * static_cast<size_t>(ow) + x] = acc;
    }
  const int oh = h - ks + 1;
  std::vector<double> out(static_cast<size_t>(ow) * oh, 0.0);
  for (int y = 0; y < oh; ++y)
    for (int x = 0; x < ow; ++x) {
      double acc = 0.0;
      for (int i = 0; i < ks; ++i) acc += k[i] * tmp[(y + i) * ow + x];
      out[y * static_cast<size_t>(ow) + x] = acc;
    }
  return out;
}

}  // namespace detail

struct SsimParams {
  int window = 11;
  double sigma = 1.5;
  double k1 = 0.01;
  double k2 = 0.03;
  double max_val = 1.0;
};

// Mean SSIM over all valid window positions, computed on luma.
inline double ssim(const ImageRGB& a, const ImageRGB& b,
                   const SsimParams& p = {}) {
  require_same_dims(a, b);
  if (a.width < p.window || a.height < p.window)
    fail(ErrorCode::ImageTooSmall, "image smaller than the SSIM window");
  const ImageF la = to_luma(a), lb = to_luma(b);
  const int w = a.width, h = a.height;
  std::vector<double> xa(la.v.begin(), la.v.end());
  std::vector<double> xb(lb.v.begin(), lb.v.end());
  std::vector<double> xaa(xa.size()), xbb(xa.size()), xab(xa.size());
  for (size_t i = 0; i < xa.size(); ++i) {
    xaa[i] = xa[i] * xa[i];
    xbb[i] = xb[i] * xb[i];
    xab[i] = xa[i] * xb[i];
  }
  const auto k = detail::gaussian_window(p.window, p.sigma);
  const auto mu_a = detail::convolve_valid(xa, w, h, k);
  const auto mu_b = detail::convolve_valid(xb, w, h, k);
  const auto m_aa = detail::convolve_valid(xaa, w, h, k);
  const auto m_bb = detail::convolve_valid(xbb, w, h, k);
  const auto m_ab = detail::convolve_valid(xab, w, h, k);
  const double c1 = (p.k1 * p.max_val) * (p.k1 * p.max_val);
  const double c2 = (p.k2 * p.max_val) * (p.k2 * p.max_val);
  double total = 0.0;
  for (size_t i = 0; i < mu_a.size(); ++i) {
    const double va = m_aa[i] - mu_a[i] * mu_a[i];
    const double vb = m_bb[i] - mu_b[i] * mu_b[i];
    const double cov = m_ab[i] - mu_a[i] * mu_b[i];
    const double num = (2.0 * mu_a[i] * mu_b[i] + c1) * (2.0 * cov + c2);
    const double den =
        (mu_a[i] * mu_a[i] + mu_b[i] * mu_b[i] + c1) * (va + vb + c2);
    total += num / den;
  }
  return total / static_cast<double>(mu_a.size());
}

// ---------------------------------------------------------------------------
// Feature extraction (handcrafted-v1, d = 64)
//
// Layout: 8 gradient-orientation bins (octants, magnitude-weighted) at two
// pool levels (whole image + 2x2 grid) = 40; intensity moments (mean,
// variance, skewness, kurtosis) at the same two levels = 20; channel means
// and mean gradient magnitude = 4. Orientation bins come from sign/compare
// logic so exact 90-degree rotations permute bins exactly.

constexpr int kFeatureDim = 64;

namespace detail {

inline int octant(double gx, double gy) {
  const double ax = std::abs(gx), ay = std::abs(gy);
  if (gx >= 0 && gy >= 0) return ay <= ax ? 0 : 1;
  if (gx < 0 && gy >= 0) return ay > ax ? 2 : 3;
  if (gx < 0 && gy < 0) return ay <= ax ? 4 : 5;
  return ay > ax ? 6 : 7;
}

struct Moments {
  double mean = 0, var = 0, skew = 0, kurt = 0;
};

inline Moments moments_of(const std::vector<double>& xs) {
  Moments m;
  if (xs.empty()) return m;
  for (double x : xs) m.mean += x;
  m.mean /= static_cast<double>(xs.size());
  double m2 = 0, m3 = 0, m4 = 0;
  for (double x : xs) {
    const double d = x - m.mean;
    m2 += d * d;
    m3 += d * d * d;
    m4 += d * d * d * d;
  }
  m2 /= static_cast<double>(xs.size());
  m3 /= static_cast<double>(xs.size());
  m4 /= static_cast<double>(xs.size());
  m.var = m2;
  if (m2 > 1e-12) {
    m.skew = m3 / std::pow(m2, 1.5);
    m.kurt = m4 / (m2 * m2) - 3.0;
  }
  return m;
}

}  // namespace detail

inline std::vector<double> extract_features(const ImageRGB& img) {
  const ImageF luma_img = to_luma(img);
  const int w = img.width, h = img.height;
  std::vector<double> feat(kFeatureDim, 0.0);

  // gradient histograms: interior central differences
  auto cell_of = [&](int x, int y) {
    const int cx = x < w / 2 ? 0 : 1;
    const int cy = y < h / 2 ? 0 : 1;
    return cy * 2 + cx;
  };
  double grad_mag_sum = 0.0;
  size_t grad_count = 0;
  for (int y = 1; y < h - 1; ++y) {
    for (int x = 1; x < w - 1; ++x) {
      const double gx =
          (luma_img.at(x + 1, y) - luma_img.at(x - 1, y)) * 0.5;
      const double gy =
          (luma_img.at(x, y + 1) - luma_img.at(x, y - 1)) * 0.5;
      const double mag = std::sqrt(gx * gx + gy * gy);
      grad_mag_sum += mag;
      ++grad_count;
      if (mag <= 0.0) continue;
      const int bin = detail::octant(gx, gy);
      feat[bin] += mag;
      feat[8 + cell_of(x, y) * 8 + bin] += mag;
    }
  }
  // normalize histogram blocks by pixel count for scale stability
  const double inv_n = grad_count ? 1.0 / static_cast<double>(grad_count) : 0;
  for (int i = 0; i < 40; ++i) feat[i] *= inv_n;

  // intensity moments, whole image then 2x2 cells
  std::vector<double> whole(luma_img.v.begin(), luma_img.v.end());
  const auto mw = detail::moments_of(whole);
  feat[40] = mw.mean;
  feat[41] = mw.var;
  feat[42] = mw.skew;
  feat[43] = mw.kurt;
  for (int cell = 0; cell < 4; ++cell) {
    std::vector<double> xs;
    const int x0 = (cell % 2) * (w / 2), y0 = (cell / 2) * (h / 2);
    for (int y = y0; y < std::min(h, y0 + h / 2); ++y)
      for (int x = x0; x < std::min(w, x0 + w / 2); ++x)
        xs.push_back(luma_img.at(x, y));
    const auto mc = detail::moments_of(xs);
    feat[44 + cell * 4 + 0] = mc.mean;
    feat[44 + cell * 4 + 1] = mc.var;
    feat[44 + cell * 4 + 2] = mc.skew;
    feat[44 + cell * 4 + 3] = mc.kurt;
  }

  // channel means + mean gradient magnitude
  double r = 0, g = 0, b = 0;
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      r += img.at(x, y, 0);
      g += img.at(x, y, 1);
      b += img.at(x, y, 2);
    }
  const double npx = static_cast<double>(w) * h;
  feat[60] = r / npx;
  feat[61] = g / npx;
  feat[62] = b / npx;
  feat[63] = grad_mag_sum * inv_n;
  return feat;
}

// Squared distance between feature vectors; stands in for a perceptual
// metric under the pluggable extractor (not canonical LPIPS).
inline double perceptual_proxy(const ImageRGB& a, const ImageRGB& b) {
  const auto fa = extract_features(a);
  const auto fb = extract_features(b);
  double acc = 0.0;
  for (size_t i = 0; i < fa.size(); ++i) {
    const double d = fa[i] - fb[i];
    acc += d * d;
  }
  return acc / static_cast<double>(fa.size());
}

// ---------------------------------------------------------------------------
// Frechet distance between Gaussian fits

struct FeatureSet {
  std::vector<std::vector<double>> rows;
  std::string extractor = "handcrafted-v1";

  size_t n() const { return rows.size(); }
  size_t d() const { return rows.empty() ? 0 : rows[0].size(); }
};

namespace detail {

// Cyclic Jacobi eigensolver for symmetric matrices; returns eigenvalues and
// orthonormal eigenvectors (columns of V).
inline void jacobi_eigen(std::vector<double>& a, int n,
                         std::vector<double>& eigvals,
                         std::vector<double>& v) {
  v.assign(static_cast<size_t>(n) * n, 0.0);
  for (int i = 0; i < n; ++i) v[i * static_cast<size_t>(n) + i] = 1.0;
  auto A = [&](int i, int j) -> double& { return a[i * static_cast<size_t>(n) + j]; };
  auto V = [&](int i, int j) -> double& { return v[i * static_cast<size_t>(n) + j]; };
  for (int sweep = 0; sweep < 64; ++sweep) {
    double off = 0.0;
    for (int i = 0; i < n; ++i)
      for (int j = i + 1; j < n; ++j) off += A(i, j) * A(i, j);
    if (off < 1e-24) break;
    for (int p = 0; p < n - 1; ++p) {
      for (int q = p + 1; q < n; ++q) {
        if (std::abs(A(p, q)) < 1e-30) continue;
        const double theta = (A(q, q) - A(p, p)) / (2.0 * A(p, q));
        const double t = (theta >= 0 ? 1.0 : -1.0) /
                         (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0);
        const double s = t * c;
        for (int i = 0; i < n; ++i) {
          const double aip = A(i, p), aiq = A(i, q);
          A(i, p) = c * aip - s * aiq;
          A(i, q) = s * aip + c * aiq;
        }
        for (int i = 0; i < n; ++i) {
          const double api = A(p, i), aqi = A(q, i);
          A(p, i) = c * api - s * aqi;
          A(q, i) = s * api + c * aqi;
        }
        for (int i = 0; i < n; ++i) {
          const double vip = V(i, p), viq = V(i, q);
          V(i, p) = c * vip - s * viq;
          V(i, q) = s * vip + c * viq;
        }
      }
    }
  }
  eigvals.resize(n);
  for (int i = 0; i < n; ++i) eigvals[i] = A(i, i);
}

struct GaussianFit {
  std::vector<double> mean;
  std::vector<double> cov;  // d x d row-major
  bool shrinkage_applied = false;
};

inline GaussianFit fit_gaussian(const FeatureSet& fs, double ridge = 1e-6) {
  const size_t n = fs.n(), d = fs.d();
  if (n == 0) fail(ErrorCode::BadConfig, "empty feature set");
  GaussianFit fit;
  fit.mean.assign(d, 0.0);
  for (const auto& row : fs.rows)
    for (size_t j = 0; j < d; ++j) fit.mean[j] += row[j];
  for (double& m : fit.mean) m /= static_cast<double>(n);
  fit.cov.assign(d * d, 0.0);
  for (const auto& row : fs.rows)
    for (size_t i = 0; i < d; ++i) {
      const double di = row[i] - fit.mean[i];
      for (size_t j = i; j < d; ++j)
        fit.cov[i * d + j] += di * (row[j] - fit.mean[j]);
    }
  const double denom = n > 1 ? static_cast<double>(n - 1) : 1.0;
  for (size_t i = 0; i < d; ++i)
    for (size_t j = i; j < d; ++j) {
      fit.cov[i * d + j] /= denom;
      fit.cov[j * d + i] = fit.cov[i * d + j];
    }
  // full-rank sample covariance needs n >= d + 1
  if (n < d + 1) {
    for (size_t i = 0; i < d; ++i) fit.cov[i * d + i] += ridge;
    fit.shrinkage_applied = true;
  }
  return fit;
}

// symmetric matrix product C = A * B
inline std::vector<double> matmul(const std::vector<double>& a,
                                  const std::vector<double>& b, size_t d) {
  std::vector<double> c(d * d, 0.0);
  for (size_t i = 0; i < d; ++i)
    for (size_t k = 0; k < d; ++k) {
      const double aik = a[i * d + k];
      if (aik == 0.0) continue;
      for (size_t j = 0; j < d; ++j) c[i * d + j] += aik * b[k * d + j];
    }
  return c;
}

}  // namespace detail

struct FrechetResult {
  double distance2 = 0.0;
  bool shrinkage_applied = false;
};

// d^2 = |mu_a - mu_b|^2 + Tr(Sa + Sb - 2 (Sa Sb)^{1/2}); the matrix root
// comes from the symmetric eigendecomposition of Sa^{1/2} Sb Sa^{1/2}.
// Slightly negative eigenvalues (> -1e-8 relative) clamp to zero; anything
// beyond that reports an indefinite covariance.
inline FrechetResult frechet_distance_full(const FeatureSet& a,
                                           const FeatureSet& b) {
  if (a.d() != b.d() || a.d() == 0)
    fail(ErrorCode::DimensionMismatch, "feature dimensionality differs");
  const size_t d = a.d();
  auto fa = detail::fit_gaussian(a);
  auto fb = detail::fit_gaussian(b);

  double mean_term = 0.0;
  for (size_t i = 0; i < d; ++i) {
    const double diff = fa.mean[i] - fb.mean[i];
    mean_term += diff * diff;
  }
  double tr_a = 0.0, tr_b = 0.0;
  for (size_t i = 0; i < d; ++i) {
    tr_a += fa.cov[i * d + i];
    tr_b += fb.cov[i * d + i];
  }

  // Sa^{1/2} via eigendecomposition
  std::vector<double> acopy = fa.cov, avals, avecs;
  detail::jacobi_eigen(acopy, static_cast<int>(d), avals, avecs);
  const double scale =
      std::max({std::abs(tr_a), std::abs(tr_b), 1.0});
  std::vector<double> sqrt_a(d * d, 0.0);
  for (size_t k = 0; k < d; ++k) {
    double lambda = avals[k];
    if (lambda < 0.0) {
      if (lambda < -1e-8 * scale)
        fail(ErrorCode::IndefiniteCovariance,
             "covariance eigenvalue " + std::to_string(lambda));
      lambda = 0.0;
    }
    const double root = std::sqrt(lambda);
    for (size_t i = 0; i < d; ++i)
      for (size_t j = 0; j < d; ++j)
        sqrt_a[i * d + j] += root * avecs[i * d + k] * avecs[j * d + k];
  }

  // M = Sa^{1/2} Sb Sa^{1/2}, symmetric PSD up to rounding
  std::vector<double> m =
      detail::matmul(detail::matmul(sqrt_a, fb.cov, d), sqrt_a, d);
  for (size_t i = 0; i < d; ++i)
    for (size_t j = i + 1; j < d; ++j) {
      const double sym = 0.5 * (m[i * d + j] + m[j * d + i]);
      m[i * d + j] = m[j * d + i] = sym;
    }
  std::vector<double> mvals, mvecs;
  detail::jacobi_eigen(m, static_cast<int>(d), mvals, mvecs);
  double tr_root = 0.0;
  for (size_t k = 0; k < d; ++k) {
    double lambda = mvals[k];
    if (lambda < 0.0) {
      if (lambda < -1e-8 * scale * scale)
        fail(ErrorCode::IndefiniteCovariance,
             "product eigenvalue " + std::to_string(lambda));
      lambda = 0.0;
    }
    tr_root += std::sqrt(lambda);
  }

  FrechetResult out;
  out.distance2 = std::max(0.0, mean_term + tr_a + tr_b - 2.0 * tr_root);
  out.shrinkage_applied = fa.shrinkage_applied || fb.shrinkage_applied;
  return out;
}

inline double frechet_distance(const FeatureSet& a, const FeatureSet& b) {
  return frechet_distance_full(a, b).distance2;
}

// ---------------------------------------------------------------------------
// Manifest evaluation

struct Stat {
  double mean = 0.0;
  double stddev = 0.0;  // population
  size_t count = 0;
};

inline Stat stat_of(const std::vector<double>& xs) {
  Stat s;
  s.count = xs.size();
  if (xs.empty()) return s;
  for (double x : xs) s.mean += x;
  s.mean /= static_cast<double>(xs.size());
  if (std::isinf(s.mean)) {
    s.stddev = 0.0;
    return s;
  }
  double var = 0.0;
  for (double x : xs) {
    const double d = x - s.mean;
    var += d * d;
  }
  s.stddev = std::sqrt(var / static_cast<double>(xs.size()));
  return s;
}

struct ModalityReport {
  size_t count = 0;
  Stat mse, psnr, ssim, pproxy;
  double frechet = 0.0;
  bool shrinkage_applied = false;
};

struct MetricReport {
  std::map<std::string, ModalityReport> modalities;
  std::vector<std::string> missing;  // generated files not found
  bool partial = false;
};

inline std::string generated_file_name(const SampleRecord& rec) {
  return target_file_name(rec.object_id, rec.frame, rec.modality);
}

// Evaluates every test-partition record against its generated counterpart
// in generated_dir (named {object}_{frame:05}_{modality}.png). Missing
// files are listed and the rest still evaluate.
inline MetricReport evaluate_manifest(
    const Manifest& manifest, const std::filesystem::path& manifest_dir,
    const std::filesystem::path& generated_dir,
    Partition partition = Partition::Test) {
  MetricReport report;
  std::map<std::string, std::vector<double>> mses, psnrs, ssims, pproxies;
  std::map<std::string, FeatureSet> ref_feats, gen_feats;

  for (const auto& rec : manifest.records) {
    if (rec.partition != partition) continue;
    const std::string mod = modality_name(rec.modality);
    const auto gen_path = generated_dir / generated_file_name(rec);
    if (!std::filesystem::exists(gen_path)) {
      report.missing.push_back(generated_file_name(rec));
      report.partial = true;
      continue;
    }
    const ImageRGB ref = png::load_rgb8(manifest_dir / rec.target);
    const ImageRGB gen = png::load_rgb8(gen_path);
    mses[mod].push_back(mse(ref, gen));
    psnrs[mod].push_back(psnr(ref, gen));
    ssims[mod].push_back(ssim(ref, gen));
    pproxies[mod].push_back(perceptual_proxy(ref, gen));
    ref_feats[mod].rows.push_back(extract_features(ref));
    gen_feats[mod].rows.push_back(extract_features(gen));
  }

  for (const auto& [mod, xs] : mses) {
    ModalityReport mr;
    mr.count = xs.size();
    mr.mse = stat_of(xs);
    mr.psnr = stat_of(psnrs[mod]);
    mr.ssim = stat_of(ssims[mod]);
    mr.pproxy = stat_of(pproxies[mod]);
    const FrechetResult fr =
        frechet_distance_full(ref_feats[mod], gen_feats[mod]);
    mr.frechet = fr.distance2;
    mr.shrinkage_applied = fr.shrinkage_applied;
    report.modalities[mod] = mr;
  }
  return report;
}

namespace detail {

inline nlohmann::ordered_json stat_json(const Stat& s) {
  nlohmann::ordered_json j;
  j["mean"] = std::isinf(s.mean) ? nlohmann::ordered_json("inf")
                                 : nlohmann::ordered_json(s.mean);
  j["std"] = s.stddev;
  return j;
}

}  // namespace detail

inline nlohmann::ordered_json report_to_json(const MetricReport& r) {
  nlohmann::ordered_json j;
  j["schema_version"] = 1;
  nlohmann::ordered_json mods;
  for (const auto& [mod, mr] : r.modalities) {
    nlohmann::ordered_json m;
    m["count"] = mr.count;
    m["mse"] = detail::stat_json(mr.mse);
    m["psnr"] = detail::stat_json(mr.psnr);
    m["ssim"] = detail::stat_json(mr.ssim);
    m["perceptual_proxy"] = detail::stat_json(mr.pproxy);
    m["frechet"] = mr.frechet;
    m["shrinkage_applied"] = mr.shrinkage_applied;
    mods[mod] = m;
  }
  j["modalities"] = mods;
  j["partial"] = r.partial;
  j["missing"] = r.missing;
  return j;
}

// Fixed-width text table, metrics as rows and modalities as columns.
inline std::string report_to_table(const MetricReport& r) {
  std::vector<std::string> mods;
  for (const auto& [mod, mr] : r.modalities) mods.push_back(mod);
  std::string out;
  char line[256];
  std::snprintf(line, sizeof(line), "%-18s", "metric");
  out += line;
  for (const auto& mod : mods) {
    std::snprintf(line, sizeof(line), " %20s", mod.c_str());
    out += line;
  }
  out += "\n";
  auto emit = [&](const char* name, auto getter) {
    std::snprintf(line, sizeof(line), "%-18s", name);
    out += line;
    for (const auto& mod : mods) {
      const ModalityReport& mr = r.modalities.at(mod);
      out += getter(mr);
    }
    out += "\n";
  };
  auto fmt_stat = [&](const Stat& s) {
    char buf[64];
    if (std::isinf(s.mean))
      std::snprintf(buf, sizeof(buf), " %20s", "inf");
    else
      std::snprintf(buf, sizeof(buf), "  %9.4f ± %7.4f", s.mean, s.stddev);
    return std::string(buf);
  };
  emit("MSE", [&](const ModalityReport& m) { return fmt_stat(m.mse); });
  emit("PSNR (dB)", [&](const ModalityReport& m) { return fmt_stat(m.psnr); });
  emit("SSIM", [&](const ModalityReport& m) { return fmt_stat(m.ssim); });
  emit("perceptual proxy",
       [&](const ModalityReport& m) { return fmt_stat(m.pproxy); });
  emit("Frechet", [&](const ModalityReport& m) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "  %9.4f%s", m.frechet,
                  m.shrinkage_applied ? " (shrunk)" : "         ");
    return std::string(buf);
  });
  if (r.partial) {
    out += "partial report: " + std::to_string(r.missing.size()) +
           " generated image(s) missing\n";
  }
  return out;
}

}  // namespace metrics
}  // namespace tactsynth
