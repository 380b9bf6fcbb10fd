#include "remix/inference.hpp"

#include <fmt/format.h>

#include <cmath>
#include <fstream>

#include "remix/connector.hpp"
#include "remix/error.hpp"

namespace remix {

void ConditionBundle::validate() const {
    if (dense_refs.empty() && !sparse_map && instruction.empty()) {
        throw InvalidInput("condition bundle needs references, a sparse map or an instruction");
    }
    if (!(skip_t >= 0.0 && skip_t <= 1.0)) throw InvalidInput(fmt::format("skip_t {} outside [0,1]", skip_t));
    if (!std::isfinite(alpha) || !std::isfinite(beta)) throw InvalidInput("alpha and beta must be finite");
    for (const auto& r : dense_refs) validate_image(r);
    if (sparse_map) validate_image(*sparse_map);
}

Latent skip_ahead_noise(const Latent& x_r, double t, std::span<const double> eps) {
    if (!(t >= 0.0 && t <= 1.0)) throw InvalidInput(fmt::format("intensity coefficient {} outside [0,1]", t));
    if (eps.size() != x_r.values.size()) {
        throw InvalidInput(fmt::format("noise has {} values, latent has {}", eps.size(), x_r.values.size()));
    }
    Latent out = x_r;
    for (std::size_t i = 0; i < out.values.size(); ++i) out.values[i] = t * eps[i] + (1.0 - t) * x_r.values[i];
    return out;
}

std::vector<double> tau_schedule(int steps) {
    if (steps < 1) throw InvalidInput("sampling needs at least one step");
    std::vector<double> taus(steps + 1);
    for (int k = 0; k <= steps; ++k) taus[k] = 1.0 - static_cast<double>(k) / steps;
    return taus;
}

SampleResult sample(const Models& models, const ConditionBundle& bundle, int steps) {
    bundle.validate();
    const auto taus = tau_schedule(steps);
    const int p = models.patch();
    const int side = models.latent_side();
    const int c = 3 * p * p;

    std::vector<Latent> refs;
    for (const auto& img : bundle.dense_refs) {
        if (img.height != models.image_size() || img.width != models.image_size()) {
            throw InvalidInput(fmt::format("reference must be {0}x{0}, got {1}x{2}", models.image_size(), img.height,
                                           img.width));
        }
        refs.push_back(encode_image(img, p));
    }
    const LatentCanvas clean = concat_canvas(refs, Latent(side, side, c));
    const CanvasLayout& layout = clean.layout;
    const auto& cfgb = models.backbone.config();
    const PositionGrid positions = assign_positions(layout, cfgb.max_rows, cfgb.max_cols);

    ag::NoGradGuard guard;
    Rng rng(bundle.seed);
    const std::vector<double> eps = rng.normal_vector(clean.values.size());

    // Target starts at pure noise; references at the skip point with the same draw.
    std::vector<double> x(clean.values.size());
    const auto target = *layout.target_segment();
    std::vector<bool> is_ref_row(layout.tokens(), false);
    for (int s = 0; s < layout.segment_count(); ++s) {
        if (s == target) continue;
        for (int t : layout.segment_tokens(s)) is_ref_row[t] = true;
    }
    for (int t = 0; t < layout.tokens(); ++t) {
        for (int j = 0; j < c; ++j) {
            const std::size_t i = static_cast<std::size_t>(t) * c + j;
            x[i] = is_ref_row[t] ? bundle.skip_t * eps[i] + (1.0 - bundle.skip_t) * clean.values[i] : eps[i];
        }
    }

    std::vector<std::string> prompt = bundle.instruction;
    if (prompt.empty()) prompt.emplace_back(Vocabulary::kUnk);
    std::vector<ag::Var> values;
    if (bundle.use_connector) {
        for (const auto& img : bundle.dense_refs) values.push_back(models.connect(prompt, img));
    }

    Conditioning cond;
    cond.text = models.text_condition(prompt, values);
    cond.alpha = bundle.alpha;
    cond.beta = bundle.beta;
    cond.use_control = !refs.empty() || bundle.sparse_map.has_value();
    if (!refs.empty() && bundle.use_dve) cond.control.dense = to_var(concat_canvas(refs, std::nullopt));
    if (bundle.sparse_map && bundle.use_sve) cond.control.sparse = *bundle.sparse_map;
    if (!refs.empty() && bundle.use_global) cond.control.global = models.global_visual(bundle.dense_refs);

    constexpr double kTol = 1e-12;
    for (int k = 0; k < steps; ++k) {
        const double tau = taus[k];
        const double dt = taus[k] - taus[k + 1];
        const ag::Var v = models.velocity(ag::constant(layout.tokens(), c, x), layout, positions, cond, tau);
        const bool refs_live = tau <= bundle.skip_t + kTol;
        const auto vd = v.data();
        for (int t = 0; t < layout.tokens(); ++t) {
            if (is_ref_row[t] && !refs_live) continue;
            for (int j = 0; j < c; ++j) {
                const std::size_t i = static_cast<std::size_t>(t) * c + j;
                x[i] -= dt * vd[i];
            }
        }
    }

    LatentCanvas out{layout, std::move(x)};
    auto [ref_latents, gen] = split_canvas(out);
    SampleResult r;
    r.generated = decode_latent(*gen, p);
    for (const auto& z : ref_latents) r.reconstructed_refs.push_back(decode_latent(z, p));
    r.layout = layout;
    r.steps = steps;
    r.seed = bundle.seed;
    r.schedule = "euler-uniform";
    return r;
}

void write_sample(const SampleResult& result, const ConditionBundle& bundle, const std::string& config_hash,
                  const std::filesystem::path& out_dir) {
    std::filesystem::create_directories(out_dir);
    save_png(result.generated, out_dir / "generated.png");
    for (std::size_t i = 0; i < result.reconstructed_refs.size(); ++i) {
        save_png(result.reconstructed_refs[i], out_dir / fmt::format("recon_{}.png", i));
    }
    std::ofstream f(out_dir / "meta.txt");
    f << "# remix sample metadata v1\n";
    f << "config_hash=" << config_hash << '\n';
    f << "seed=" << result.seed << '\n';
    f << "steps=" << result.steps << '\n';
    f << "schedule=" << result.schedule << '\n';
    f << "skip_t=" << bundle.skip_t << '\n';
    f << "alpha=" << bundle.alpha << '\n';
    f << "beta=" << bundle.beta << '\n';
    f << "refs=" << bundle.dense_refs.size() << '\n';
    f << "pose=" << (bundle.sparse_map ? "yes" : "no") << '\n';
    f << "prompt=" << join_tokens(bundle.instruction) << '\n';
    f << "connector=" << (bundle.use_connector ? "on" : "off") << '\n';
    f << "segments=" << result.layout.segment_count() << '\n';
    std::string widths;
    for (int w : result.layout.segment_widths) widths += (widths.empty() ? "" : ",") + std::to_string(w);
    f << "segment_widths=" << widths << '\n';
    f << "target_segment=" << result.layout.segment_count() - 1 << '\n';
}

}  // namespace remix
