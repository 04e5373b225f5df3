#pragma once

#include <functional>
#include <string>
#include <vector>

#include "hetmeta/tensor.hpp"

namespace hetmeta::gradcheck {

/// Differentiable scalar objective built from the given tensors.
using LossFn = std::function<Tensor(const std::vector<Tensor>&)>;

/// |a - b| / max(|a|, |b|, floor). The floor turns the comparison into an
/// absolute tolerance where both values are tiny, where central
/// differences are dominated by rounding noise.
double relative_error(double a, double b, double floor = 1e-3);

/// Central finite differences of fn around `at`, one coordinate at a time.
std::vector<Tensor> finite_diff_grads(const LossFn& fn, const std::vector<Tensor>& at,
                                      double step);

/// Max relative error between reverse-mode and finite-difference gradients
/// of fn with respect to every tensor in `at`.
double max_grad_discrepancy(const LossFn& fn, const std::vector<Tensor>& at, double step);

struct CheckResult {
    std::string name;
    double max_rel_err = 0.0;
    double tolerance = 0.0;
    std::size_t seeds = 0;
    double seconds = 0.0;
    bool pass = false;
};

struct CheckSpec {
    std::string name;
    double tolerance;
    double step;
    /// Runs the check for one seed, returning the max relative error.
    std::function<double(std::uint64_t seed)> run;
};

/// The standard per-layer and meta-gradient suite at tiny dimensions
/// (M=3, F1=4, F2=4, F3=3, N=2).
std::vector<CheckSpec> standard_checks();

/// Runs every check whose name contains `filter` (empty = all) over the
/// given number of seeds.
std::vector<CheckResult> run_checks(const std::string& filter, std::size_t seeds);

} // namespace hetmeta::gradcheck
