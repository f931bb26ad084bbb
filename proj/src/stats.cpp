#include "copreg/stats.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>

#include <boost/math/special_functions/erf.hpp>

#include "copreg/error.hpp"

namespace copreg::stats {

double normal_cdf(double z) { return 0.5 * std::erfc(-z * std::numbers::sqrt2 / 2.0); }

double normal_log_cdf(double z) {
  if (z > -30.0) return std::log(normal_cdf(z));
  // Asymptotic Mills-ratio expansion for the deep lower tail.
  const double z2 = z * z;
  const double series = 1.0 - 1.0 / z2 + 3.0 / (z2 * z2) - 15.0 / (z2 * z2 * z2);
  return normal_log_pdf(z) - std::log(-z) + std::log(series);
}

double normal_quantile(double q) {
  if (!(q > 0.0 && q < 1.0)) {
    if (q == 0.0) return -HUGE_VAL;
    if (q == 1.0) return HUGE_VAL;
    throw DomainError("normal_quantile: probability outside [0, 1]");
  }
  return -std::numbers::sqrt2 * boost::math::erfc_inv(2.0 * q);
}

double normal_log_pdf(double z) { return -0.5 * z * z - kLogSqrt2Pi; }

namespace {

// Half Gauss-Legendre rules of order 6, 12 and 20 as tabulated by Genz.
constexpr double kGlW[3][10] = {
    {0.1713244923791705, 0.3607615730481384, 0.4679139345726904},
    {0.04717533638651177, 0.1069393259953183, 0.1600783285433464, 0.2031674267230659,
     0.2334925365383547, 0.2491470458134029},
    {0.01761400713915212, 0.04060142980038694, 0.06267204833410906, 0.08327674157670475,
     0.1019301198172404, 0.1181945319615184, 0.1316886384491766, 0.1420961093183821,
     0.1491729864726037, 0.1527533871307259}};
constexpr double kGlX[3][10] = {
    {-0.9324695142031522, -0.6612093864662647, -0.2386191860831970},
    {-0.9815606342467191, -0.9041172563704750, -0.7699026741943050, -0.5873179542866171,
     -0.3678314989981802, -0.1252334085114692},
    {-0.9931285991850949, -0.9639719272779138, -0.9122344282513259, -0.8391169718222188,
     -0.7463319064601508, -0.6360536807265150, -0.5108670019508271, -0.3737060887154196,
     -0.2277858511416451, -0.07652652113349733}};

// P(X > dh, Y > dk).
double bvn_upper(double dh, double dk, double r) {
  constexpr double two_pi = 2.0 * std::numbers::pi;
  int ng = 0;
  int lg = 3;
  if (std::abs(r) >= 0.3) {
    ng = 1;
    lg = 6;
  }
  if (std::abs(r) >= 0.75) {
    ng = 2;
    lg = 10;
  }
  double h = dh;
  double k = dk;
  double hk = h * k;
  double bvn = 0.0;
  if (std::abs(r) < 0.925) {
    const double hs = (h * h + k * k) / 2.0;
    const double asr = std::asin(r);
    for (int i = 0; i < lg; ++i) {
      double sn = std::sin(asr * (kGlX[ng][i] + 1.0) / 2.0);
      bvn += kGlW[ng][i] * std::exp((sn * hk - hs) / (1.0 - sn * sn));
      sn = std::sin(asr * (-kGlX[ng][i] + 1.0) / 2.0);
      bvn += kGlW[ng][i] * std::exp((sn * hk - hs) / (1.0 - sn * sn));
    }
    return bvn * asr / (2.0 * two_pi) + normal_cdf(-h) * normal_cdf(-k);
  }
  if (r < 0.0) {
    k = -k;
    hk = -hk;
  }
  if (std::abs(r) < 1.0) {
    const double as = (1.0 - r) * (1.0 + r);
    double a = std::sqrt(as);
    const double bs = (h - k) * (h - k);
    const double c = (4.0 - hk) / 8.0;
    const double d = (12.0 - hk) / 16.0;
    bvn = a * std::exp(-(bs / as + hk) / 2.0) *
          (1.0 - c * (bs - as) * (1.0 - d * bs / 5.0) / 3.0 + c * d * as * as / 5.0);
    if (hk > -160.0) {
      const double b = std::sqrt(bs);
      bvn -= std::exp(-hk / 2.0) * std::sqrt(two_pi) * normal_cdf(-b / a) * b *
             (1.0 - c * bs * (1.0 - d * bs / 5.0) / 3.0);
    }
    a /= 2.0;
    for (int i = 0; i < lg; ++i) {
      double xs = (a * (kGlX[ng][i] + 1.0)) * (a * (kGlX[ng][i] + 1.0));
      double rs = std::sqrt(1.0 - xs);
      bvn += a * kGlW[ng][i] *
             (std::exp(-bs / (2.0 * xs) - hk / (1.0 + rs)) / rs -
              std::exp(-(bs / xs + hk) / 2.0) * (1.0 + c * xs * (1.0 + d * xs)));
      xs = as * (-kGlX[ng][i] + 1.0) * (-kGlX[ng][i] + 1.0) / 4.0;
      rs = std::sqrt(1.0 - xs);
      bvn += a * kGlW[ng][i] * std::exp(-(bs / xs + hk) / 2.0) *
             (std::exp(-hk * (1.0 - rs) / (2.0 * (1.0 + rs))) / rs -
              (1.0 + c * xs * (1.0 + d * xs)));
    }
    bvn = -bvn / two_pi;
  }
  if (r > 0.0) return bvn + normal_cdf(-std::max(h, k));
  bvn = -bvn;
  if (k > h) {
    if (h < 0.0) {
      bvn += normal_cdf(k) - normal_cdf(h);
    } else {
      bvn += normal_cdf(-h) - normal_cdf(-k);
    }
  }
  return bvn;
}

}  // namespace

double bivariate_normal_cdf(double x, double y, double r) {
  if (!(r >= -1.0 && r <= 1.0)) throw DomainError("bivariate_normal_cdf: |r| > 1");
  if (std::isinf(x) || std::isinf(y)) {
    if (x == -HUGE_VAL || y == -HUGE_VAL) return 0.0;
    if (x == HUGE_VAL) return normal_cdf(y);
    return normal_cdf(x);
  }
  const double p = bvn_upper(-x, -y, r);
  return std::clamp(p, 0.0, 1.0);
}

double mean(std::span<const double> x) {
  if (x.empty()) throw StructuralError("mean of empty sample");
  return std::accumulate(x.begin(), x.end(), 0.0) / static_cast<double>(x.size());
}

double variance(std::span<const double> x) {
  if (x.size() < 2) throw StructuralError("variance needs at least two values");
  const double m = mean(x);
  double ss = 0.0;
  for (double v : x) ss += (v - m) * (v - m);
  return ss / static_cast<double>(x.size() - 1);
}

double quantile_sorted(std::span<const double> sorted, double q) {
  if (sorted.empty()) throw StructuralError("quantile of empty sample");
  if (!(q >= 0.0 && q <= 1.0)) throw DomainError("quantile level outside [0, 1]");
  const double h = (static_cast<double>(sorted.size()) - 1.0) * q;
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
  return sorted[lo] + (h - static_cast<double>(lo)) * (sorted[hi] - sorted[lo]);
}

double quantile(std::span<const double> x, double q) {
  std::vector<double> s(x.begin(), x.end());
  std::sort(s.begin(), s.end());
  return quantile_sorted(s, q);
}

std::vector<double> ranks(std::span<const double> x) {
  const std::size_t n = x.size();
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return x[a] < x[b]; });
  std::vector<double> r(n);
  std::size_t i = 0;
  while (i < n) {
    std::size_t j = i;
    while (j + 1 < n && x[idx[j + 1]] == x[idx[i]]) ++j;
    const double avg = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t t = i; t <= j; ++t) r[idx[t]] = avg;
    i = j + 1;
  }
  return r;
}

double pearson(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size() || x.size() < 2) throw StructuralError("pearson: size mismatch");
  const double mx = mean(x);
  const double my = mean(y);
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
    syy += (y[i] - my) * (y[i] - my);
  }
  if (sxx == 0.0 || syy == 0.0) return 0.0;
  return sxy / std::sqrt(sxx * syy);
}

double spearman(std::span<const double> x, std::span<const double> y) {
  const auto rx = ranks(x);
  const auto ry = ranks(y);
  return pearson(rx, ry);
}

namespace {

// Counts inversions while merge-sorting v.
std::uint64_t merge_count(std::vector<double>& v, std::vector<double>& buf, std::size_t lo,
                          std::size_t hi) {
  if (hi - lo < 2) return 0;
  const std::size_t mid = lo + (hi - lo) / 2;
  std::uint64_t swaps = merge_count(v, buf, lo, mid) + merge_count(v, buf, mid, hi);
  std::size_t i = lo, j = mid, k = lo;
  while (i < mid && j < hi) {
    if (v[j] < v[i]) {
      buf[k++] = v[j++];
      swaps += mid - i;
    } else {
      buf[k++] = v[i++];
    }
  }
  while (i < mid) buf[k++] = v[i++];
  while (j < hi) buf[k++] = v[j++];
  std::copy(buf.begin() + static_cast<std::ptrdiff_t>(lo), buf.begin() + static_cast<std::ptrdiff_t>(hi),
            v.begin() + static_cast<std::ptrdiff_t>(lo));
  return swaps;
}

std::uint64_t tied_pairs(std::span<const double> sorted) {
  std::uint64_t t = 0;
  std::size_t i = 0;
  while (i < sorted.size()) {
    std::size_t j = i;
    while (j + 1 < sorted.size() && sorted[j + 1] == sorted[i]) ++j;
    const std::uint64_t c = j - i + 1;
    t += c * (c - 1) / 2;
    i = j + 1;
  }
  return t;
}

}  // namespace

double kendall_tau(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size() || x.size() < 2) throw StructuralError("kendall_tau: size mismatch");
  const std::size_t n = x.size();
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
    return x[a] < x[b] || (x[a] == x[b] && y[a] < y[b]);
  });
  std::vector<double> xs(n), ys(n);
  for (std::size_t i = 0; i < n; ++i) {
    xs[i] = x[idx[i]];
    ys[i] = y[idx[i]];
  }
  const std::uint64_t tx = tied_pairs(xs);
  std::uint64_t txy = 0;
  std::size_t i = 0;
  while (i < n) {
    std::size_t j = i;
    while (j + 1 < n && xs[j + 1] == xs[i] && ys[j + 1] == ys[i]) ++j;
    const std::uint64_t c = j - i + 1;
    txy += c * (c - 1) / 2;
    i = j + 1;
  }
  std::vector<double> buf(n);
  const std::uint64_t swaps = merge_count(ys, buf, 0, n);
  const std::uint64_t ty = tied_pairs(ys);
  const double n0 = static_cast<double>(n) * static_cast<double>(n - 1) / 2.0;
  const double num = n0 - static_cast<double>(tx) - static_cast<double>(ty) +
                     static_cast<double>(txy) - 2.0 * static_cast<double>(swaps);
  const double den = std::sqrt((n0 - static_cast<double>(tx)) * (n0 - static_cast<double>(ty)));
  return den > 0.0 ? num / den : 0.0;
}

double kolmogorov_sf(double t) {
  if (t <= 0.0) return 1.0;
  if (t < 1.0) {
    // Jacobi-theta form converges quickly for small t.
    const double w = std::numbers::pi * std::numbers::pi / (8.0 * t * t);
    double s = 0.0;
    for (int k = 1; k < 200; k += 2) s += std::exp(-static_cast<double>(k * k) * w);
    return 1.0 - std::sqrt(2.0 * std::numbers::pi) / t * s;
  }
  double s = 0.0;
  for (int k = 1; k < 200; ++k) {
    const double term = std::exp(-2.0 * k * k * t * t);
    s += (k % 2 == 1 ? term : -term);
    if (term < 1e-18) break;
  }
  return std::clamp(2.0 * s, 0.0, 1.0);
}

KsResult ks_test(std::span<const double> x, const std::function<double(double)>& cdf) {
  if (x.empty()) throw StructuralError("ks_test: empty sample");
  std::vector<double> s(x.begin(), x.end());
  std::sort(s.begin(), s.end());
  const double n = static_cast<double>(s.size());
  double d = 0.0;
  for (std::size_t i = 0; i < s.size(); ++i) {
    const double f = cdf(s[i]);
    d = std::max({d, static_cast<double>(i + 1) / n - f, f - static_cast<double>(i) / n});
  }
  const double sn = std::sqrt(n);
  return {d, kolmogorov_sf((sn + 0.12 + 0.11 / sn) * d)};
}

}  // namespace copreg::stats
