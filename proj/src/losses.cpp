#include "remix/losses.hpp"

#include <fmt/format.h>

#include <cmath>

#include "remix/error.hpp"

namespace remix {

std::vector<double> noise_values(std::span<const double> clean, const DiffusionStep& step) {
    if (clean.size() != step.eps.size()) {
        throw InvalidInput(fmt::format("noise has {} values, canvas has {}", step.eps.size(), clean.size()));
    }
    if (!(step.tau >= 0.0 && step.tau <= 1.0)) throw InvalidInput("tau outside [0,1]");
    std::vector<double> out(clean.size());
    for (std::size_t i = 0; i < clean.size(); ++i) out[i] = (1.0 - step.tau) * clean[i] + step.tau * step.eps[i];
    return out;
}

LatentCanvas noise_canvas(const LatentCanvas& clean, const DiffusionStep& step) {
    LatentCanvas out;
    out.layout = clean.layout;
    out.values = noise_values(clean.values, step);
    return out;
}

namespace {

ag::Var velocity_target(const DiffusionStep& step, const LatentCanvas& clean) {
    if (clean.values.size() != step.eps.size()) throw InvalidInput("noise does not match canvas");
    std::vector<double> v(clean.values.size());
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = step.eps[i] - clean.values[i];
    return ag::constant(clean.layout.tokens(), clean.layout.channels, std::move(v));
}

void check_pred(const ag::Var& pred, const LatentCanvas& clean) {
    if (pred.rows() != clean.layout.tokens() || pred.cols() != clean.layout.channels) {
        throw InvalidInput(fmt::format("prediction [{},{}] does not match canvas [{},{}]", pred.rows(), pred.cols(),
                                       clean.layout.tokens(), clean.layout.channels));
    }
}

}  // namespace

ag::Var equ_loss(const ag::Var& pred, const DiffusionStep& step, const LatentCanvas& clean) {
    check_pred(pred, clean);
    return ag::mse(pred, velocity_target(step, clean));
}

ag::Var region_loss(const ag::Var& pred, const DiffusionStep& step, const LatentCanvas& clean,
                    std::span<const int> rows) {
    check_pred(pred, clean);
    if (rows.empty()) throw InvalidInput("region_loss: empty region");
    return ag::mse(gather_rows(pred, rows), gather_rows(velocity_target(step, clean), rows));
}

namespace {

double norm(std::span<const double> v) {
    double s = 0.0;
    for (double x : v) s += x * x;
    return std::sqrt(s);
}

}  // namespace

ag::Var id_loss(const ag::Var& z_gen, const ag::Var& z_ref) {
    if (z_gen.rows() != 1 || z_ref.rows() != 1 || z_gen.cols() != z_ref.cols()) {
        throw InvalidInput("id_loss expects two [1,n] embeddings of equal length");
    }
    if (norm(z_gen.data()) == 0.0 || norm(z_ref.data()) == 0.0) {
        throw InvalidInput("id_loss: zero-norm embedding has no direction");
    }
    const ag::Var cos = ag::row_dot(ag::l2_normalize_rows(z_gen), ag::l2_normalize_rows(z_ref));
    return ag::add_scalar(ag::scale(cos, -1.0), 1.0);
}

double id_loss(std::span<const double> z_gen, std::span<const double> z_ref) {
    if (z_gen.size() != z_ref.size()) throw InvalidInput("id_loss: length mismatch");
    const double a = norm(z_gen), b = norm(z_ref);
    if (a == 0.0 || b == 0.0) throw InvalidInput("id_loss: zero-norm embedding has no direction");
    double dot = 0.0;
    for (std::size_t i = 0; i < z_gen.size(); ++i) dot += z_gen[i] * z_ref[i];
    return 1.0 - dot / (a * b);
}

double total_loss(double l_equ, double l_id, double lambda) {
    if (!std::isfinite(l_equ) || !std::isfinite(l_id) || !std::isfinite(lambda)) {
        throw InvalidInput("total_loss: non-finite input");
    }
    return l_equ + lambda * l_id;
}

ag::Var total_loss(const ag::Var& l_equ, const ag::Var& l_id, double lambda) {
    total_loss(l_equ.item(), l_id.defined() ? l_id.item() : 0.0, lambda);
    if (!l_id.defined() || lambda == 0.0) return l_equ;
    return ag::add(l_equ, ag::scale(l_id, lambda));
}

}  // namespace remix
