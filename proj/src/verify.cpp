#include "remix/verify.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <cstring>

#include "remix/backbone.hpp"
#include "remix/connector.hpp"
#include "remix/error.hpp"
#include "remix/identity.hpp"
#include "remix/losses.hpp"
#include "remix/models.hpp"
#include "remix/training.hpp"

namespace remix {

GradCheck gradient_check(const std::function<ag::Var()>& f, const std::vector<ag::Var>& leaves, double h,
                         std::size_t max_entries) {
    for (auto leaf : leaves) {
        leaf.set_requires_grad(true);
        leaf.zero_grad();
    }
    const ag::Var y = f();
    if (y.size() != 1) throw InvalidInput("gradient check needs a scalar function");
    y.backward();

    GradCheck out;
    double diff2 = 0.0, a2 = 0.0, n2 = 0.0;
    for (auto leaf : leaves) {
        const std::vector<double> analytic(leaf.grad().begin(), leaf.grad().end());
        const std::size_t n = leaf.size();
        const std::size_t stride = std::max<std::size_t>(1, n / std::max<std::size_t>(1, max_entries));
        auto data = leaf.data();
        for (std::size_t i = 0; i < n; i += stride) {
            const double saved = data[i];
            double plus = 0.0, minus = 0.0;
            {
                ag::NoGradGuard guard;
                data[i] = saved + h;
                plus = f().item();
                data[i] = saved - h;
                minus = f().item();
            }
            data[i] = saved;
            const double numeric = (plus - minus) / (2.0 * h);
            const double d = analytic[i] - numeric;
            diff2 += d * d;
            a2 += analytic[i] * analytic[i];
            n2 += numeric * numeric;
            out.max_abs_diff = std::max(out.max_abs_diff, std::abs(d));
            ++out.checked;
        }
    }
    const double denom = std::max({std::sqrt(a2), std::sqrt(n2), 1e-12});
    out.rel_error = std::sqrt(diff2) / denom;
    return out;
}

namespace {

ag::Var random_var(Rng& rng, int rows, int cols, double stddev = 1.0) {
    return ag::constant(rows, cols, rng.normal_vector(static_cast<std::size_t>(rows) * cols, stddev));
}

Image random_image(Rng& rng, int size) {
    Image img(size, size);
    for (auto& v : img.pixels) v = static_cast<float>(rng.uniform());
    return img;
}

CanvasLayout random_layout(Rng& rng, int side, int channels, int refs) {
    CanvasLayout l;
    l.height = side;
    l.channels = channels;
    for (int i = 0; i < refs; ++i) {
        l.segment_widths.push_back(side);
        l.segment_roles.push_back(SegmentRole::Reference);
    }
    l.segment_widths.push_back(side);
    l.segment_roles.push_back(SegmentRole::Target);
    (void)rng;
    return l;
}

CheckResult grad_result(const std::string& name, const GradCheck& g, double tol) {
    return {name, g.rel_error <= tol,
            fmt::format("rel_error={:.3e} max_abs_diff={:.3e} entries={}", g.rel_error, g.max_abs_diff, g.checked)};
}

}  // namespace

std::vector<CheckResult> verify_noop(const RunConfig& cfg, int trials, std::uint64_t seed) {
    Models m(cfg);
    m.ipcn.init_from_backbone(m.backbone);
    Rng rng(seed);
    // The final layer is zero-initialised; give it values so outputs differ from zero.
    for (const char* name : {"backbone.final_mod.weight", "backbone.final_mod.bias", "backbone.final_out.weight",
                             "backbone.final_out.bias"}) {
        auto v = m.backbone.params().get(name);
        for (auto& x : v.data()) x = 0.05 * rng.normal();
    }
    const int side = m.latent_side();
    const int c = m.backbone.config().channels;
    const int max_refs = cfg.get_i("max_refs");
    const auto& bc = m.backbone.config();
    const auto& symbols = m.vocab();

    int failures = 0;
    double worst = 0.0;
    bool nonzero = false;
    ag::NoGradGuard guard;
    for (int t = 0; t < trials; ++t) {
        const int refs = 1 + rng.uniform_int(max_refs);
        const CanvasLayout layout = random_layout(rng, side, c, refs);
        const PositionGrid positions = assign_positions(layout, bc.max_rows, bc.max_cols);
        const ag::Var tokens = random_var(rng, layout.tokens(), c);
        const double tau = rng.uniform();
        std::vector<std::string> prompt;
        const int len = 1 + rng.uniform_int(6);
        for (int i = 0; i < len; ++i) prompt.push_back(symbols.symbols()[1 + rng.uniform_int(symbols.size() - 1)]);

        Conditioning cond;
        cond.text = m.text_condition(prompt);
        cond.alpha = rng.uniform(0.0, 2.0);
        cond.beta = rng.uniform(0.0, 2.0);
        const int mask = rng.uniform_int(8);
        if (mask & 1) cond.control.dense = random_var(rng, side * side * refs, c);
        if (mask & 2) cond.control.sparse = random_image(rng, m.image_size());
        if (mask & 4) cond.control.global = random_var(rng, 1, bc.text_dim);

        const ag::Var base = m.velocity(tokens, layout, positions, cond, tau);
        cond.use_control = true;
        const ag::Var full = m.velocity(tokens, layout, positions, cond, tau);
        const auto a = base.data();
        const auto b = full.data();
        if (a.size() != b.size() || std::memcmp(a.data(), b.data(), a.size() * sizeof(double)) != 0) ++failures;
        for (std::size_t i = 0; i < a.size() && i < b.size(); ++i) {
            worst = std::max(worst, std::abs(a[i] - b[i]));
            nonzero = nonzero || a[i] != 0.0;
        }
    }
    return {{"noop_exact", failures == 0 && nonzero,
             fmt::format("trials={} mismatches={} max_abs_diff={:.3e} nonzero_output={}", trials, failures, worst,
                         nonzero)}};
}

std::vector<CheckResult> verify_gradients(std::uint64_t seed, double tolerance) {
    std::vector<CheckResult> out;
    Rng rng(seed);

    // Tiny backbone on a 2x(2+2) canvas of 3-channel tokens.
    BackboneConfig bc;
    bc.channels = 3;
    bc.depth = 2;
    bc.model_dim = 8;
    bc.heads = 2;
    bc.mlp_ratio = 2;
    bc.text_dim = 8;
    bc.max_rows = 8;
    bc.max_cols = 8;
    Backbone bb(bc, derive_seed(seed, 1));
    for (const char* name : {"backbone.final_mod.weight", "backbone.final_out.weight"}) {
        auto v = bb.params().get(name);
        for (auto& x : v.data()) x = 0.3 * rng.normal();
    }
    CanvasLayout layout;
    layout.height = 2;
    layout.channels = 3;
    layout.segment_widths = {2, 2};
    layout.segment_roles = {SegmentRole::Reference, SegmentRole::Target};
    const PositionGrid pos = assign_positions(layout, bc.max_rows, bc.max_cols);
    LatentCanvas clean{layout, rng.normal_vector(static_cast<std::size_t>(layout.tokens()) * 3)};
    DiffusionStep step{0.37, rng.normal_vector(clean.values.size())};
    ag::Var text = random_var(rng, 3, bc.text_dim);
    ag::Var tokens = ag::constant(layout.tokens(), 3, noise_values(clean.values, step));

    {
        ag::Var pred = random_var(rng, layout.tokens(), 3);
        out.push_back(grad_result("grad_equ_loss",
                                  gradient_check([&] { return equ_loss(pred, step, clean); }, {pred}), tolerance));
    }
    {
        std::vector<ag::Var> leaves{tokens, text};
        for (const auto& [name, v] : bb.params().items()) leaves.push_back(v);
        const auto g = gradient_check(
            [&] {
                const ag::Var p = bb.forward(tokens, pos, text, ag::mean_rows(text), step.tau);
                return equ_loss(p, step, clean);
            },
            leaves, 1e-6, 16);
        out.push_back(grad_result("grad_backbone_forward", g, tolerance));
    }
    {
        ag::Var zg = random_var(rng, 1, 6);
        const ag::Var zr = random_var(rng, 1, 6);
        out.push_back(grad_result("grad_id_loss", gradient_check([&] { return id_loss(zg, zr); }, {zg}), tolerance));
    }
    {
        // Identity term through x0 = x_tau - tau * v, decode and the identity encoder.
        IdentityEncoder enc(32, {3, 2}, derive_seed(seed, 2));
        ag::Var x_t = random_var(rng, 16, 192, 0.5);
        ag::Var v = random_var(rng, 16, 192, 0.5);
        const ag::Var z_ref = random_var(rng, 1, enc.embed(ag::constant(32 * 32, 3, 0.5)).cols());
        const double tau = 0.6;
        const auto g = gradient_check(
            [&] {
                const ag::Var x0 = ag::sub(x_t, ag::scale(v, tau));
                return id_loss(enc.embed(decode_tokens(x0, 4, 4, 8)), z_ref);
            },
            {v}, 1e-6, 48);
        out.push_back(grad_result("grad_id_loss_decoded", g, tolerance));
    }
    {
        nn::ParamStore ps;
        ConnectorConfig cc;
        cc.blocks = 1;
        cc.layers = 1;
        cc.dim = 8;
        cc.heads = 2;
        cc.mlp_ratio = 2;
        Rng crng(derive_seed(seed, 3));
        Connector conn(ps, "connector", cc, crng);
        InstructionEmbedding q;
        q.tokens = random_var(rng, 3, 8);
        q.pooled = ag::mean_rows(q.tokens);
        ag::Var key = random_var(rng, 4, 8);
        const ag::Var target = random_var(rng, 4, 8);
        std::vector<ag::Var> leaves{key};
        for (const auto& [name, v] : ps.items()) leaves.push_back(v);
        const auto g = gradient_check([&] { return connector_loss(conn(q, key), target); }, leaves, 1e-6, 16);
        out.push_back(grad_result("grad_connector_loss", g, tolerance));
    }
    {
        ag::Var le = random_var(rng, 1, 1);
        ag::Var li = random_var(rng, 1, 1);
        out.push_back(grad_result("grad_total_loss",
                                  gradient_check([&] { return total_loss(le, li, 0.2); }, {le, li}), tolerance));
    }
    return out;
}

std::vector<CheckResult> verify_loss_identities(const std::vector<std::filesystem::path>& curves, double lambda,
                                                double tolerance) {
    std::vector<CheckResult> out;
    Rng rng(7);

    // Predicting the exact velocity gives zero flow-matching loss.
    CanvasLayout layout;
    layout.height = 2;
    layout.channels = 3;
    layout.segment_widths = {2, 2};
    layout.segment_roles = {SegmentRole::Reference, SegmentRole::Target};
    LatentCanvas clean{layout, rng.normal_vector(24)};
    DiffusionStep step{0.4, rng.normal_vector(24)};
    std::vector<double> v(24);
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = step.eps[i] - clean.values[i];
    const double l0 = equ_loss(ag::constant(8, 3, v), step, clean).item();
    out.push_back({"equ_loss_exact_velocity", std::abs(l0) <= tolerance, fmt::format("l_equ={:.3e}", l0)});

    // Noising endpoints.
    DiffusionStep s0{0.0, step.eps}, s1{1.0, step.eps};
    const auto n0 = noise_values(clean.values, s0);
    const auto n1 = noise_values(clean.values, s1);
    double e0 = 0.0, e1 = 0.0;
    for (std::size_t i = 0; i < n0.size(); ++i) {
        e0 = std::max(e0, std::abs(n0[i] - clean.values[i]));
        e1 = std::max(e1, std::abs(n1[i] - step.eps[i]));
    }
    out.push_back({"noise_endpoints", e0 <= tolerance && e1 <= tolerance,
                   fmt::format("|x_0 - x0|={:.3e} |x_1 - eps|={:.3e}", e0, e1)});

    // Cosine identity loss endpoints: equal 0, orthogonal 1, antipodal 2.
    const auto z = rng.normal_vector(16);
    std::vector<double> anti(16);
    double zz = 0.0;
    for (double x : z) zz += x * x;
    std::vector<double> orth = rng.normal_vector(16);
    double oz = 0.0;
    for (int i = 0; i < 16; ++i) oz += orth[i] * z[i];
    for (int i = 0; i < 16; ++i) orth[i] -= oz / zz * z[i];
    for (int i = 0; i < 16; ++i) anti[i] = -2.5 * z[i];
    const double l_eq = id_loss(z, z), l_or = id_loss(z, orth), l_an = id_loss(z, anti);
    out.push_back({"id_loss_endpoints",
                   std::abs(l_eq) <= tolerance && std::abs(l_or - 1.0) <= tolerance && std::abs(l_an - 2.0) <= tolerance,
                   fmt::format("equal={:.3e} orthogonal={:.9f} antipodal={:.9f}", l_eq, l_or, l_an)});

    for (const auto& path : curves) {
        const auto rows = read_curve_csv(path);
        std::size_t bad = 0;
        double worst = 0.0;
        for (const auto& r : rows) {
            const double d = std::abs(r.l_total - (r.l_equ + lambda * r.l_id));
            worst = std::max(worst, d);
            if (d > tolerance * std::max(1.0, std::abs(r.l_total))) ++bad;
        }
        out.push_back({"curve_total " + path.string(), bad == 0 && !rows.empty(),
                       fmt::format("rows={} violations={} max_abs_diff={:.3e}", rows.size(), bad, worst)});
    }
    return out;
}

}  // namespace remix
