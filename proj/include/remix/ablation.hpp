#pragma once

// Variant sweeps over training switches, benchmarked on the held-out split.

#include <filesystem>
#include <string>
#include <vector>

#include "remix/config.hpp"
#include "remix/eval.hpp"
#include "remix/training.hpp"

namespace remix {

struct AblationVariant {
    std::string name;
    RunConfig cfg;
    double skip_t = 0.0;
};

// Axes: equivariant, dve, sve, global, id_loss. No axes gives the single
// configured model under the name "remix".
std::vector<AblationVariant> ablation_variants(const RunConfig& base, const std::vector<std::string>& axes);

struct AblationOutput {
    MetricsTable table;
    std::filesystem::path csv;
    std::filesystem::path plot;
};

// Trains missing variants when train_missing is set; otherwise they are
// reported as missing rows. Outputs go under run_dir/<tag>/.
AblationOutput run_ablation(const RunConfig& base, const RunLayout& layout, const std::vector<std::string>& axes,
                            bool train_missing, const ProgressFn& progress = {});

}  // namespace remix
