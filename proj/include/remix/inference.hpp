#pragma once

// Euler sampling over a [references | target] canvas with skip-ahead noising
// of the references.

#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "remix/image.hpp"
#include "remix/latent_codec.hpp"
#include "remix/models.hpp"

namespace remix {

struct ConditionBundle {
    std::vector<Image> dense_refs;
    std::optional<Image> sparse_map;
    std::vector<std::string> instruction;  // prompt symbols
    double alpha = 1.0;
    double beta = 1.0;
    double skip_t = 0.5;
    std::uint64_t seed = 0;
    bool use_connector = true;  // refined semantic values of each reference in the text stream
    bool use_dve = true;
    bool use_sve = true;
    bool use_global = true;

    void validate() const;
};

struct SampleResult {
    Image generated;
    std::vector<Image> reconstructed_refs;
    CanvasLayout layout;
    int steps = 0;
    std::uint64_t seed = 0;
    std::string schedule;
};

// t*eps + (1-t)*x_r. Rejects t outside [0,1] and mismatched shapes.
Latent skip_ahead_noise(const Latent& x_r, double t, std::span<const double> eps);

// Uniform tau grid from 1 down to 0 with steps+1 entries.
std::vector<double> tau_schedule(int steps);

SampleResult sample(const Models& models, const ConditionBundle& bundle, int steps);

// generated.png, recon_<i>.png and meta.txt (key=value lines).
void write_sample(const SampleResult& result, const ConditionBundle& bundle, const std::string& config_hash,
                  const std::filesystem::path& out_dir);

}  // namespace remix
