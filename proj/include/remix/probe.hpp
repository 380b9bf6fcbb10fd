#pragma once

// Rule-based attribute recovery from glyph renders: nearest-color pixel
// classes, torso moments and limb geometry.

#include <span>
#include <string>
#include <vector>

#include "remix/image.hpp"

namespace remix::synth {

struct ProbeResult {
    int shape = -1;
    int primary = -1;
    int secondary = -1;
    int accessory = -1;
    int texture = -1;
    int pose = -1;
    int background = -1;
};

ProbeResult probe(const Image& img);

struct Agreement {
    int satisfied = 0;
    int total = 0;
    std::vector<std::string> unknown;  // tokens that could not be interpreted
    double score() const { return total == 0 ? 1.0 : static_cast<double>(satisfied) / total; }
};

// Each "role value" pair of the caption counts as one claim.
Agreement caption_agreement(const ProbeResult& p, std::span<const std::string> caption);

}  // namespace remix::synth
