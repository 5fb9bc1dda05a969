#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "eena/errors.hpp"

namespace eena {

// Dense 4-D array in (batch, height, width, channels) order, row-major.
template <class Real>
struct Tensor {
  std::array<int, 4> shape{0, 0, 0, 0};
  std::vector<Real> data;

  Tensor() = default;
  Tensor(int n, int h, int w, int c) : shape{n, h, w, c} {
    if (n < 0 || h < 0 || w < 0 || c < 0)
      throw shape_error("tensor extents must be non-negative");
    data.assign(static_cast<std::size_t>(n) * h * w * c, Real(0));
  }

  static Tensor zeros(int n, int h, int w, int c) { return Tensor(n, h, w, c); }

  int n() const { return shape[0]; }
  int h() const { return shape[1]; }
  int w() const { return shape[2]; }
  int c() const { return shape[3]; }

  std::size_t size() const { return data.size(); }

  std::size_t index(int in, int ih, int iw, int ic) const {
    return ((static_cast<std::size_t>(in) * shape[1] + ih) * shape[2] + iw) *
               shape[3] +
           ic;
  }

  Real& at(int in, int ih, int iw, int ic) { return data[index(in, ih, iw, ic)]; }
  const Real& at(int in, int ih, int iw, int ic) const {
    return data[index(in, ih, iw, ic)];
  }

  bool same_shape(const Tensor& o) const { return shape == o.shape; }

  std::string shape_str() const {
    std::ostringstream os;
    os << "(" << shape[0] << "," << shape[1] << "," << shape[2] << ","
       << shape[3] << ")";
    return os.str();
  }

  // NaN/Inf audit; used when the engine runs with finite checks enabled.
  void assert_finite(const char* what) const {
    for (const Real v : data) {
      if (!std::isfinite(static_cast<double>(v)))
        throw error(std::string("non-finite value in ") + what);
    }
  }
};

inline std::string shape_str(const std::array<int, 4>& s) {
  std::ostringstream os;
  os << "(" << s[0] << "," << s[1] << "," << s[2] << "," << s[3] << ")";
  return os.str();
}

// Deterministic RNG used throughout the engine.
using Rng = std::mt19937_64;

inline int uniform_int(Rng& rng, int lo, int hi) {  // inclusive bounds
  return std::uniform_int_distribution<int>(lo, hi)(rng);
}

inline double uniform_real(Rng& rng, double lo, double hi) {
  return std::uniform_real_distribution<double>(lo, hi)(rng);
}

template <class Real>
void fill_normal(std::vector<Real>& v, Rng& rng, double mean, double stddev) {
  std::normal_distribution<double> dist(mean, stddev);
  for (Real& x : v) x = static_cast<Real>(dist(rng));
}

template <class Real>
void fill_uniform(Tensor<Real>& t, Rng& rng, double lo, double hi) {
  for (Real& x : t.data) x = static_cast<Real>(uniform_real(rng, lo, hi));
}

}  // namespace eena
