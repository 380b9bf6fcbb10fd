#pragma once

// Self-checks shared by the `verify` subcommand and the test suites.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "remix/autograd.hpp"
#include "remix/config.hpp"

namespace remix {

struct CheckResult {
    std::string name;
    bool passed = false;
    std::string detail;
};

struct GradCheck {
    double rel_error = 0.0;    // ||analytic - numeric|| / max(||analytic||, ||numeric||)
    double max_abs_diff = 0.0;
    std::size_t checked = 0;
};

// Central differences of the scalar f() with respect to every entry of the
// given leaves (or at most max_entries per leaf, spread evenly).
GradCheck gradient_check(const std::function<ag::Var()>& f, const std::vector<ag::Var>& leaves, double h = 1e-6,
                         std::size_t max_entries = 64);

// Full pipeline with fresh adapters vs backbone-only forward on random inputs.
std::vector<CheckResult> verify_noop(const RunConfig& cfg, int trials, std::uint64_t seed);
// equ_loss, id_loss, connector_loss and backbone forward against finite differences.
std::vector<CheckResult> verify_gradients(std::uint64_t seed, double tolerance = 1e-4);
// Loss identities; curve files (step,l_equ,l_id,l_total) are checked row by row.
std::vector<CheckResult> verify_loss_identities(const std::vector<std::filesystem::path>& curves, double lambda,
                                                double tolerance = 1e-6);

}  // namespace remix
