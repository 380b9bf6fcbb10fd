#pragma once

#include <filesystem>
#include <string>

#include "remix/config.hpp"
#include "remix/image.hpp"
#include "remix/rng.hpp"

namespace remix::testing {

// Pixels on the 8-bit grid, so PNG and codec round trips are exact.
inline Image random_levels(Rng& rng, int h, int w) {
    Image img(h, w);
    for (auto& v : img.pixels) v = static_cast<float>(rng.uniform_int(256)) / 255.0f;
    return img;
}

// Smallest configuration that exercises every stage in seconds.
inline RunConfig tiny_config() {
    RunConfig c;
    const char* kv[][2] = {{"image_size", "32"},     {"patch", "8"},          {"depth", "2"},
                           {"model_dim", "32"},      {"heads", "2"},          {"text_dim", "32"},
                           {"max_rows", "16"},       {"max_cols", "32"},      {"connector_d", "1"},
                           {"connector_l", "1"},     {"control_n", "1"},      {"max_refs", "2"},
                           {"batch", "2"},           {"dve_hidden", "8"},     {"train_identities", "6"},
                           {"test_identities", "3"}, {"scenes", "3"},         {"iters_identity", "4"},
                           {"iters_pretrain", "4"},  {"iters_connector", "4"}, {"iters_warmup", "3"},
                           {"iters_main", "3"},      {"iters_equivariant", "3"}, {"checkpoint_every", "2"},
                           {"probe_every", "2"},     {"probe_identities", "2"}, {"probe_steps", "2"},
                           {"eval_identities", "2"}, {"eval_prompts", "1"},    {"eval_seeds", "0,1"},
                           {"steps", "2"}};
    for (const auto& p : kv) c.set(p[0], p[1]);
    return c;
}

inline std::filesystem::path scratch_dir(const std::string& name) {
    const auto p = std::filesystem::temp_directory_path() / ("remix_test_" + name);
    std::filesystem::remove_all(p);
    std::filesystem::create_directories(p);
    return p;
}

}  // namespace remix::testing
