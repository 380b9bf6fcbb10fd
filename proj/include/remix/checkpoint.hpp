#pragma once

// Versioned little-endian checkpoint container: stage tag, step, config block,
// named f64 arrays and optional optimizer state.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "remix/nn.hpp"

namespace remix {

struct NamedArray {
    std::string name;
    int rows = 0;
    int cols = 0;
    std::vector<double> values;
    bool operator==(const NamedArray&) const = default;
};

struct OptimizerState {
    long long t = 0;
    std::vector<NamedArray> arrays;
    bool operator==(const OptimizerState&) const = default;
};

struct Checkpoint {
    static constexpr std::uint32_t kVersion = 1;

    std::string stage;
    std::uint64_t step = 0;
    std::vector<std::pair<std::string, std::string>> config;
    std::vector<NamedArray> arrays;
    std::optional<OptimizerState> optimizer;

    bool operator==(const Checkpoint&) const = default;

    const NamedArray* find(const std::string& name) const;
    std::optional<std::string> config_value(const std::string& key) const;
};

void save_checkpoint(const Checkpoint& ck, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

// Parameter store <-> arrays.
void append_params(Checkpoint& ck, const nn::ParamStore& ps);
// Copies every parameter of ps from the checkpoint; missing names throw.
void restore_params(const Checkpoint& ck, nn::ParamStore& ps);
OptimizerState optimizer_state(const nn::Adam& opt);

}  // namespace remix
