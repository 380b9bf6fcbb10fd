#pragma once

// Desk-scale metrics and the seeded benchmark harness.

#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "remix/connector.hpp"
#include "remix/data_synth.hpp"
#include "remix/identity.hpp"
#include "remix/image.hpp"
#include "remix/models.hpp"

namespace remix {

// Cosine of identity embeddings.
double identity_similarity(const IdentityEncoder& enc, const Image& a, const Image& b);
// Cosine of pooled semantic features.
double image_similarity(const SemanticEncoder& enc, const Image& a, const Image& b);
// Fraction of caption attribute claims recovered by the probe; unknown tokens
// count as unsatisfied and are appended to warnings when given.
double instruction_alignment(const Image& img, std::span<const std::string> caption,
                             std::vector<std::string>* warnings = nullptr);

struct MetricsRow {
    std::string variant;
    double id_sim = 0.0;
    double img_sim = 0.0;
    double instr_sim = 0.0;
    int n_samples = 0;
    std::string seed_set;
    double id_sim_std = 0.0;  // across seeds
    double img_sim_std = 0.0;
    double instr_sim_std = 0.0;
    bool missing = false;
};

struct MetricsTable {
    std::vector<MetricsRow> rows;
    const MetricsRow* find(const std::string& variant) const;
};

// One benchmark prompt: references of a held-out identity and a target scene.
struct BenchmarkCase {
    int identity = 0;
    std::vector<Image> refs;
    Image pose;
    std::vector<std::string> prompt;   // scene symbols given to the model
    std::vector<std::string> caption;  // full ground-truth caption of the target scene
};

// refs scenes 0..refs-1 and prompts from the following scenes of the first
// `identities` test identities.
std::vector<BenchmarkCase> benchmark_cases(const synth::Manifest& one_to_many, int identities, int prompts,
                                           int refs);

struct Variant {
    std::string name;
    const Models* models = nullptr;  // null: checkpoints missing
    double skip_t = 0.5;
    bool use_dve = true;
    bool use_sve = true;
    bool use_global = true;
};

// Metrics are computed with the judge's identity and semantic encoders.
MetricsTable run_benchmark(const std::vector<Variant>& variants, const std::vector<BenchmarkCase>& cases,
                           const std::vector<int>& seeds, int steps, const Models& judge,
                           const std::filesystem::path& sample_dir = {});

void write_metrics_csv(const MetricsTable& table, const std::filesystem::path& path);
MetricsTable read_metrics_csv(const std::filesystem::path& path);

}  // namespace remix
