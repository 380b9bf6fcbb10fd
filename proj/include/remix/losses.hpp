#pragma once

// Flow-matching noising and the training objectives.

#include <span>
#include <vector>

#include "remix/autograd.hpp"
#include "remix/latent_codec.hpp"

namespace remix {

// One noise draw shared by every canvas segment.
struct DiffusionStep {
    double tau = 0.0;
    std::vector<double> eps;
};

// x_tau = (1 - tau) x0 + tau eps.
LatentCanvas noise_canvas(const LatentCanvas& clean, const DiffusionStep& step);
std::vector<double> noise_values(std::span<const double> clean, const DiffusionStep& step);

// Mean squared error against the velocity (eps - x0) over the whole canvas.
ag::Var equ_loss(const ag::Var& pred, const DiffusionStep& step, const LatentCanvas& clean);
// Same target restricted to the given canvas token rows.
ag::Var region_loss(const ag::Var& pred, const DiffusionStep& step, const LatentCanvas& clean,
                    std::span<const int> rows);

// 1 - cos(z_gen, z_ref); both are [1, n]. Rejects zero-norm vectors.
ag::Var id_loss(const ag::Var& z_gen, const ag::Var& z_ref);
double id_loss(std::span<const double> z_gen, std::span<const double> z_ref);

// l_equ + lambda * l_id; rejects non-finite inputs.
double total_loss(double l_equ, double l_id, double lambda);
ag::Var total_loss(const ag::Var& l_equ, const ag::Var& l_id, double lambda);

struct LossReport {
    double l_equ = 0.0;
    double l_id = 0.0;
    double l_total = 0.0;
};

}  // namespace remix
