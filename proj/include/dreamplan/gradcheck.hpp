#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

namespace dreamplan {

inline constexpr double kGradcheckTolerance = 1e-6;
inline constexpr double kGradcheckStep = 1e-6;

struct GradcheckSuite {
  std::string name;
  int instances = 0;
  std::size_t coordinates = 0;
  double max_rel_error = 0.0;

  bool passed() const { return instances > 0 && max_rel_error < kGradcheckTolerance; }
};

/// Central differences of `loss` at the listed coordinates of `params` (restored afterwards);
/// returns the largest relative_error against `analytic`.
double max_fd_error(std::span<double> params, std::span<const double> analytic, std::span<const std::size_t> coords,
                    const std::function<double()>& loss, double h = kGradcheckStep);

GradcheckSuite gradcheck_mlp(int instances, std::uint64_t seed);
GradcheckSuite gradcheck_log_prob(int instances, std::uint64_t seed);
GradcheckSuite gradcheck_diffusion(int instances, std::uint64_t seed);
GradcheckSuite gradcheck_orpo(int instances, std::uint64_t seed);

/// All four suites, `instances` draws each.
std::vector<GradcheckSuite> run_gradchecks(std::uint64_t seed, int instances = 20);

}  // namespace dreamplan
