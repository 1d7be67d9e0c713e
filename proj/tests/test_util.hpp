#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <functional>
#include <string>

#include <unistd.h>

#include "meal/autograd.hpp"
#include "meal/rng.hpp"

namespace meal::testing {

inline Tensor<double> random_tensor(Shape s, std::uint64_t seed, double lo = -1.0, double hi = 1.0) {
  RngStream rng(seed, 0);
  Tensor<double> t(std::move(s));
  for (auto& v : t.vec()) v = rng.uniform(lo, hi);
  return t;
}

inline double rel_error(double a, double n) {
  return std::abs(a - n) / std::max({std::abs(a), std::abs(n), 1e-6});
}

/// Max relative error between the autograd gradient of `f` with respect to
/// `wrt` and central differences with step eps. At most `max_probes` entries
/// are probed, evenly spaced.
inline double grad_check(const std::function<Var<double>()>& f, Var<double> wrt, double eps = 1e-4,
                         std::size_t max_probes = 200) {
  wrt.zero_grad();
  Var<double> y = f();
  backward(y);
  const Tensor<double> analytic = wrt.grad().empty() ? Tensor<double>::zeros_like(wrt.value())
                                                     : wrt.grad();
  const std::size_t n = wrt.value().size();
  const std::size_t stride = std::max<std::size_t>(1, n / max_probes);
  double worst = 0.0;
  NoGradGuard ng;
  for (std::size_t i = 0; i < n; i += stride) {
    double& x = wrt.mutable_value()[i];
    const double x0 = x;
    x = x0 + eps;
    const double fp = f().value()[0];
    x = x0 - eps;
    const double fm = f().value()[0];
    x = x0;
    worst = std::max(worst, rel_error(analytic[i], (fp - fm) / (2 * eps)));
  }
  return worst;
}

/// Scratch directory removed on destruction.
struct TempDir {
  std::filesystem::path path;
  explicit TempDir(const std::string& tag) {
    path = std::filesystem::temp_directory_path() /
           (tag + "_" + std::to_string(::getpid()) + "_" +
            std::to_string(reinterpret_cast<std::uintptr_t>(this)));
    std::filesystem::remove_all(path);
    std::filesystem::create_directories(path);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path, ec);
  }
  std::string operator/(const std::string& f) const { return (path / f).string(); }
};

}  // namespace meal::testing
