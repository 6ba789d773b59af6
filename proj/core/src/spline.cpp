#include "scabi/spline.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <vector>

namespace scabi::spline {

namespace {

// Forward-mode dual number for the local partials of one spline evaluation.
template <int N>
struct Dual {
  double v = 0.0;
  std::array<double, N> d{};

  static Dual seed(double value, int i) {
    Dual out;
    out.v = value;
    out.d[static_cast<std::size_t>(i)] = 1.0;
    return out;
  }
  static Dual constant(double value) {
    Dual out;
    out.v = value;
    return out;
  }
};

template <int N>
Dual<N> operator+(const Dual<N>& a, const Dual<N>& b) {
  Dual<N> r;
  r.v = a.v + b.v;
  for (int i = 0; i < N; ++i) r.d[i] = a.d[i] + b.d[i];
  return r;
}
template <int N>
Dual<N> operator-(const Dual<N>& a, const Dual<N>& b) {
  Dual<N> r;
  r.v = a.v - b.v;
  for (int i = 0; i < N; ++i) r.d[i] = a.d[i] - b.d[i];
  return r;
}
template <int N>
Dual<N> operator*(const Dual<N>& a, const Dual<N>& b) {
  Dual<N> r;
  r.v = a.v * b.v;
  for (int i = 0; i < N; ++i) r.d[i] = a.d[i] * b.v + a.v * b.d[i];
  return r;
}
template <int N>
Dual<N> operator/(const Dual<N>& a, const Dual<N>& b) {
  Dual<N> r;
  r.v = a.v / b.v;
  const double inv = 1.0 / b.v;
  for (int i = 0; i < N; ++i) r.d[i] = (a.d[i] - r.v * b.d[i]) * inv;
  return r;
}
template <int N>
Dual<N> operator*(double s, const Dual<N>& a) {
  Dual<N> r;
  r.v = s * a.v;
  for (int i = 0; i < N; ++i) r.d[i] = s * a.d[i];
  return r;
}
template <int N>
Dual<N> operator-(double s, const Dual<N>& a) {
  Dual<N> r;
  r.v = s - a.v;
  for (int i = 0; i < N; ++i) r.d[i] = -a.d[i];
  return r;
}
template <int N>
Dual<N> log(const Dual<N>& a) {
  Dual<N> r;
  r.v = std::log(a.v);
  const double inv = 1.0 / a.v;
  for (int i = 0; i < N; ++i) r.d[i] = a.d[i] * inv;
  return r;
}

inline double log_(double v) { return std::log(v); }
template <int N>
Dual<N> log_(const Dual<N>& v) {
  return log(v);
}

// Rational-quadratic segment: bin starting at (xk, yk) with width wk, height
// hk and end-point derivatives dk, dk1.
template <class T>
void segment(const T& x, const T& xk, const T& wk, const T& yk, const T& hk, const T& dk,
             const T& dk1, T& y, T& logdet) {
  const T s = hk / wk;
  const T xi = (x - xk) / wk;
  const T one_minus = 1.0 - xi;
  const T t = xi * one_minus;
  const T num = hk * (s * xi * xi + dk * t);
  const T den = s + (dk1 + dk - 2.0 * s) * t;
  y = yk + num / den;
  const T dnum = s * s * (dk1 * xi * xi + 2.0 * s * t + dk * one_minus * one_minus);
  logdet = log_(dnum) - 2.0 * log_(den);
}

double softplus(double v) { return v > 30.0 ? v : std::log1p(std::exp(v)); }
double sigmoid(double v) { return 1.0 / (1.0 + std::exp(-v)); }

// Knot positions and derivatives for one coordinate.
struct Knots {
  std::vector<double> cw;      // bins + 1 cumulative widths
  std::vector<double> ch;      // bins + 1 cumulative heights
  std::vector<double> deriv;   // bins + 1 derivatives
  std::vector<double> sw;      // softmax of width logits
  std::vector<double> sh;      // softmax of height logits
  std::vector<double> dlogit;  // shifted derivative logits
};

class KnotBuilder {
 public:
  explicit KnotBuilder(const SplineConfig& c)
      : c_(c), deriv_shift_(std::log(std::expm1(1.0 - c.min_derivative))) {
    k_.cw.resize(static_cast<std::size_t>(c.bins + 1));
    k_.ch.resize(static_cast<std::size_t>(c.bins + 1));
    k_.deriv.resize(static_cast<std::size_t>(c.bins + 1));
    k_.sw.resize(static_cast<std::size_t>(c.bins));
    k_.sh.resize(static_cast<std::size_t>(c.bins));
    k_.dlogit.resize(static_cast<std::size_t>(c.bins - 1));
  }

  const Knots& build(const double* raw) {
    const int b = c_.bins;
    softmax(raw, k_.sw);
    softmax(raw + b, k_.sh);
    cumulate(k_.sw, c_.min_width, k_.cw);
    cumulate(k_.sh, c_.min_height, k_.ch);
    k_.deriv.front() = 1.0;
    k_.deriv.back() = 1.0;
    for (int i = 0; i < b - 1; ++i) {
      const double z = raw[2 * b + i] + deriv_shift_;
      k_.dlogit[static_cast<std::size_t>(i)] = z;
      k_.deriv[static_cast<std::size_t>(i + 1)] = c_.min_derivative + softplus(z);
    }
    return k_;
  }

  // Chain rule from knot-level gradients to raw parameter gradients.
  void backprop(const std::vector<double>& g_cw, const std::vector<double>& g_ch,
                const std::vector<double>& g_deriv, double* g_raw) const {
    const int b = c_.bins;
    backprop_widths(k_.sw, g_cw, c_.min_width, g_raw);
    backprop_widths(k_.sh, g_ch, c_.min_height, g_raw + b);
    for (int i = 0; i < b - 1; ++i) {
      g_raw[2 * b + i] += g_deriv[static_cast<std::size_t>(i + 1)] *
                          sigmoid(k_.dlogit[static_cast<std::size_t>(i)]);
    }
  }

 private:
  void softmax(const double* logits, std::vector<double>& out) const {
    const int b = c_.bins;
    double mx = logits[0];
    for (int i = 1; i < b; ++i) mx = std::max(mx, logits[i]);
    double total = 0.0;
    for (int i = 0; i < b; ++i) {
      out[static_cast<std::size_t>(i)] = std::exp(logits[i] - mx);
      total += out[static_cast<std::size_t>(i)];
    }
    for (auto& v : out) v /= total;
  }

  void cumulate(const std::vector<double>& s, double min_size, std::vector<double>& cum) const {
    const int b = c_.bins;
    const double span = 2.0 * c_.bound;
    const double free = 1.0 - min_size * b;
    double acc = 0.0;
    cum[0] = -c_.bound;
    for (int i = 0; i < b - 1; ++i) {
      acc += min_size + free * s[static_cast<std::size_t>(i)];
      cum[static_cast<std::size_t>(i + 1)] = -c_.bound + span * acc;
    }
    cum[static_cast<std::size_t>(b)] = c_.bound;
  }

  void backprop_widths(const std::vector<double>& s, const std::vector<double>& g_cum,
                       double min_size, double* g_logits) const {
    const int b = c_.bins;
    const double span = 2.0 * c_.bound;
    const double free = 1.0 - min_size * b;
    // cum[i] depends on s[j] for j < i, 0 < i < b.
    std::array<double, 256> g_s{};
    double suffix = 0.0;
    for (int j = b - 2; j >= 0; --j) {
      suffix += g_cum[static_cast<std::size_t>(j + 1)];
      g_s[static_cast<std::size_t>(j)] = span * free * suffix;
    }
    g_s[static_cast<std::size_t>(b - 1)] = 0.0;
    double dot = 0.0;
    for (int j = 0; j < b; ++j) dot += s[static_cast<std::size_t>(j)] * g_s[static_cast<std::size_t>(j)];
    for (int j = 0; j < b; ++j) {
      g_logits[j] += s[static_cast<std::size_t>(j)] * (g_s[static_cast<std::size_t>(j)] - dot);
    }
  }

  SplineConfig c_;
  double deriv_shift_;
  Knots k_;
};

int find_bin(const std::vector<double>& knots, double v) {
  const auto it = std::upper_bound(knots.begin(), knots.end(), v);
  int k = static_cast<int>(it - knots.begin()) - 1;
  return std::clamp(k, 0, static_cast<int>(knots.size()) - 2);
}

void check_shapes(const Matrix& x, const Matrix& raw, const SplineConfig& config) {
  require(raw.rows() == x.rows() && raw.cols() == x.cols() * config.params_per_dim(),
          "spline: parameter matrix has wrong shape");
}

}  // namespace

void SplineConfig::validate() const {
  require(bins >= 2 && bins <= 256, "spline: bins must be in [2, 256]");
  require(bound > 0.0, "spline: bound must be positive");
  require(min_width > 0.0 && min_width * bins < 1.0, "spline: invalid min_width");
  require(min_height > 0.0 && min_height * bins < 1.0, "spline: invalid min_height");
  require(min_derivative > 0.0 && min_derivative < 1.0, "spline: invalid min_derivative");
}

Transformed forward(const Matrix& x, const Matrix& raw, const SplineConfig& config) {
  check_shapes(x, raw, config);
  const int p = config.params_per_dim();
  KnotBuilder builder(config);
  // Row-major copy so each coordinate's raw block is contiguous.
  const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> r = raw;
  Transformed out{x, Vector::Zero(x.rows())};
  for (Index i = 0; i < x.rows(); ++i) {
    for (Index j = 0; j < x.cols(); ++j) {
      const double v = x(i, j);
      if (!(v >= -config.bound && v <= config.bound)) continue;
      const Knots& k = builder.build(r.data() + i * r.cols() + j * p);
      const int b = find_bin(k.cw, v);
      const auto bi = static_cast<std::size_t>(b);
      double y = 0.0;
      double ld = 0.0;
      segment(v, k.cw[bi], k.cw[bi + 1] - k.cw[bi], k.ch[bi], k.ch[bi + 1] - k.ch[bi], k.deriv[bi],
              k.deriv[bi + 1], y, ld);
      out.y(i, j) = y;
      out.logdet(i) += ld;
    }
  }
  return out;
}

Transformed inverse(const Matrix& y, const Matrix& raw, const SplineConfig& config) {
  check_shapes(y, raw, config);
  const int p = config.params_per_dim();
  KnotBuilder builder(config);
  const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> r = raw;
  Transformed out{y, Vector::Zero(y.rows())};
  for (Index i = 0; i < y.rows(); ++i) {
    for (Index j = 0; j < y.cols(); ++j) {
      const double v = y(i, j);
      if (!(v >= -config.bound && v <= config.bound)) continue;
      const Knots& k = builder.build(r.data() + i * r.cols() + j * p);
      const auto bi = static_cast<std::size_t>(find_bin(k.ch, v));
      const double xk = k.cw[bi];
      const double wk = k.cw[bi + 1] - xk;
      const double yk = k.ch[bi];
      const double hk = k.ch[bi + 1] - yk;
      const double dk = k.deriv[bi];
      const double dk1 = k.deriv[bi + 1];
      const double s = hk / wk;
      const double dy = v - yk;
      const double a = hk * (s - dk) + dy * (dk1 + dk - 2.0 * s);
      const double bq = hk * dk - dy * (dk1 + dk - 2.0 * s);
      const double c = -s * dy;
      const double disc = std::max(0.0, bq * bq - 4.0 * a * c);
      const double xi = std::clamp((2.0 * c) / (-bq - std::sqrt(disc)), 0.0, 1.0);
      const double xv = xi * wk + xk;
      out.y(i, j) = xv;
      double y_check = 0.0;
      double ld = 0.0;
      segment(xv, xk, wk, yk, hk, dk, dk1, y_check, ld);
      out.logdet(i) -= ld;
    }
  }
  return out;
}

ad::Var transform(ad::Var x, ad::Var raw, const SplineConfig& config) {
  const Matrix& xv = x.value();
  const Matrix& rv = raw.value();
  check_shapes(xv, rv, config);
  const Transformed fwd = forward(xv, rv, config);
  Matrix out(xv.rows(), xv.cols() + 1);
  out.leftCols(xv.cols()) = fwd.y;
  out.col(xv.cols()) = fwd.logdet;
  return x.tape()->record(std::move(out), {x, raw}, [x, raw, config](ad::Tape& t, const Matrix& g) {
    using D7 = Dual<7>;
    const Matrix& xs = t.value(x);
    const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> r = t.value(raw);
    const int p = config.params_per_dim();
    const int bins = config.bins;
    const Index m = xs.cols();
    Matrix gx = g.leftCols(m);  // identity tails pass gradients through
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> graw =
        Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>::Zero(r.rows(), r.cols());
    KnotBuilder builder(config);
    std::vector<double> g_cw(static_cast<std::size_t>(bins + 1));
    std::vector<double> g_ch(static_cast<std::size_t>(bins + 1));
    std::vector<double> g_deriv(static_cast<std::size_t>(bins + 1));
    for (Index i = 0; i < xs.rows(); ++i) {
      const double gl = g(i, m);
      for (Index j = 0; j < m; ++j) {
        const double v = xs(i, j);
        if (!(v >= -config.bound && v <= config.bound)) continue;
        const double gy = g(i, j);
        const Knots& k = builder.build(r.data() + i * r.cols() + j * p);
        const auto bi = static_cast<std::size_t>(find_bin(k.cw, v));
        D7 y;
        D7 ld;
        segment(D7::seed(v, 0), D7::seed(k.cw[bi], 1), D7::seed(k.cw[bi + 1] - k.cw[bi], 2),
                D7::seed(k.ch[bi], 3), D7::seed(k.ch[bi + 1] - k.ch[bi], 4), D7::seed(k.deriv[bi], 5),
                D7::seed(k.deriv[bi + 1], 6), y, ld);
        std::array<double, 7> gl7{};
        for (std::size_t q = 0; q < 7; ++q) gl7[q] = gy * y.d[q] + gl * ld.d[q];
        gx(i, j) = gl7[0];
        std::fill(g_cw.begin(), g_cw.end(), 0.0);
        std::fill(g_ch.begin(), g_ch.end(), 0.0);
        std::fill(g_deriv.begin(), g_deriv.end(), 0.0);
        // x_k = cw[k], w_k = cw[k+1] - cw[k]; same for heights.
        g_cw[bi] += gl7[1] - gl7[2];
        g_cw[bi + 1] += gl7[2];
        g_ch[bi] += gl7[3] - gl7[4];
        g_ch[bi + 1] += gl7[4];
        g_deriv[bi] += gl7[5];
        g_deriv[bi + 1] += gl7[6];
        builder.backprop(g_cw, g_ch, g_deriv, graw.data() + i * graw.cols() + j * p);
      }
    }
    if (t.requires_grad(x)) t.accumulate(x, gx);
    if (t.requires_grad(raw)) t.accumulate(raw, Matrix(graw));
  });
}

}  // namespace scabi::spline
