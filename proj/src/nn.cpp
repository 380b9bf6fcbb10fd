#include "remix/nn.hpp"

#include <cmath>
#include <cstring>

#include "remix/error.hpp"

namespace remix::nn {

Var ParamStore::add(const std::string& name, int rows, int cols, Rng& rng, Init init, double stddev) {
    std::vector<double> values(static_cast<std::size_t>(rows) * cols, 0.0);
    if (init == Init::Normal) {
        for (auto& v : values) v = stddev * rng.normal();
    }
    return add_values(name, rows, cols, std::move(values));
}

Var ParamStore::add_values(const std::string& name, int rows, int cols, std::vector<double> values) {
    if (contains(name)) throw InvalidInput("duplicate parameter name: " + name);
    Var v = ag::parameter(rows, cols, std::move(values));
    index_[name] = items_.size();
    items_.emplace_back(name, v);
    return v;
}

Var ParamStore::get(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw InvalidInput("unknown parameter: " + name);
    return items_[it->second].second;
}

std::size_t ParamStore::parameter_count() const {
    std::size_t n = 0;
    for (const auto& [name, v] : items_) n += v.size();
    return n;
}

void ParamStore::set_trainable(bool on) {
    for (auto& [name, v] : items_) v.set_requires_grad(on);
}

void ParamStore::zero_grad() {
    for (auto& [name, v] : items_) v.zero_grad();
}

std::uint64_t ParamStore::checksum() const {
    std::uint64_t h = 1469598103934665603ULL;
    auto feed = [&h](const void* data, std::size_t len) {
        const auto* p = static_cast<const unsigned char*>(data);
        for (std::size_t i = 0; i < len; ++i) {
            h ^= p[i];
            h *= 1099511628211ULL;
        }
    };
    for (const auto& [name, v] : items_) {
        feed(name.data(), name.size());
        feed(v.data().data(), v.size() * sizeof(double));
    }
    return h;
}

void ParamStore::copy_matching(const ParamStore& other, const std::string& other_prefix,
                               const std::string& this_prefix) {
    for (auto& [name, v] : items_) {
        if (name.rfind(this_prefix, 0) != 0) continue;
        const std::string key = other_prefix + name.substr(this_prefix.size());
        if (!other.contains(key)) continue;
        Var src = other.get(key);
        if (src.rows() != v.rows() || src.cols() != v.cols()) {
            throw InvalidInput("copy_matching: shape mismatch for " + name);
        }
        std::copy(src.data().begin(), src.data().end(), v.data().begin());
    }
}

Linear::Linear(ParamStore& ps, const std::string& name, int in, int out, Rng& rng, Init init, double gain) {
    weight = ps.add(name + ".weight", in, out, rng, init, gain / std::sqrt(static_cast<double>(in)));
    bias = ps.add(name + ".bias", 1, out, rng, Init::Zero, 0.0);
}

Conv2d::Conv2d(ParamStore& ps, const std::string& name, int in, int out, int kernel_, int stride_, Rng& rng,
               Init init)
    : in_channels(in), out_channels(out), kernel(kernel_), stride(stride_) {
    const int fan_in = kernel * kernel * in;
    weight = ps.add(name + ".weight", fan_in, out, rng, init, 1.0 / std::sqrt(static_cast<double>(fan_in)));
    bias = ps.add(name + ".bias", 1, out, rng, Init::Zero, 0.0);
}

Var Conv2d::operator()(const Var& x, int height, int width) const {
    ag::ConvGeometry g{height, width, kernel, stride, kernel / 2};
    return ag::conv2d(x, weight, bias, g);
}

Mlp::Mlp(ParamStore& ps, const std::string& name, int in, int hidden, int out, Rng& rng, Init out_init)
    : fc1(ps, name + ".fc1", in, hidden, rng), fc2(ps, name + ".fc2", hidden, out, rng, out_init) {}

std::vector<double> sinusoid(double position, int dim, double max_period) {
    if (dim % 2 != 0) throw InvalidInput("sinusoid: dim must be even");
    const int half = dim / 2;
    std::vector<double> out(dim);
    for (int i = 0; i < half; ++i) {
        const double freq = std::exp(-std::log(max_period) * i / half);
        out[i] = std::cos(position * freq);
        out[half + i] = std::sin(position * freq);
    }
    return out;
}

Var positional_table_1d(int count, int dim) {
    std::vector<double> values;
    values.reserve(static_cast<std::size_t>(count) * dim);
    for (int i = 0; i < count; ++i) {
        auto row = sinusoid(i, dim);
        values.insert(values.end(), row.begin(), row.end());
    }
    return ag::constant(count, dim, std::move(values));
}

MMDiTBlock::MMDiTBlock(ParamStore& ps, const std::string& name, int dim_, int heads_, int mlp_ratio, Rng& rng)
    : dim(dim_), heads(heads_) {
    if (dim % heads != 0) throw InvalidInput("MMDiTBlock: dim not divisible by heads");
    img_mod = Linear(ps, name + ".img_mod", dim, 6 * dim, rng, Init::Zero);
    txt_mod = Linear(ps, name + ".txt_mod", dim, 6 * dim, rng, Init::Zero);
    img_qkv = Linear(ps, name + ".img_qkv", dim, 3 * dim, rng);
    txt_qkv = Linear(ps, name + ".txt_qkv", dim, 3 * dim, rng);
    img_out = Linear(ps, name + ".img_out", dim, dim, rng);
    txt_out = Linear(ps, name + ".txt_out", dim, dim, rng);
    img_fc1 = Linear(ps, name + ".img_fc1", dim, mlp_ratio * dim, rng);
    img_fc2 = Linear(ps, name + ".img_fc2", mlp_ratio * dim, dim, rng);
    txt_fc1 = Linear(ps, name + ".txt_fc1", dim, mlp_ratio * dim, rng);
    txt_fc2 = Linear(ps, name + ".txt_fc2", mlp_ratio * dim, dim, rng);
}

std::pair<Var, Var> MMDiTBlock::operator()(const Var& img, const Var& txt, const Var& cond) const {
    using namespace ag;
    const Var c = silu(cond);
    const Var im = img_mod(c);
    const Var tm = txt_mod(c);
    auto chunk = [this](const Var& m, int i) { return slice_cols(m, i * dim, dim); };

    const Var img_h = modulate(layer_norm(img), chunk(im, 0), chunk(im, 1));
    const Var txt_h = modulate(layer_norm(txt), chunk(tm, 0), chunk(tm, 1));
    const Var iq = img_qkv(img_h);
    const Var tq = txt_qkv(txt_h);
    const Var q_parts[] = {slice_cols(tq, 0, dim), slice_cols(iq, 0, dim)};
    const Var k_parts[] = {slice_cols(tq, dim, dim), slice_cols(iq, dim, dim)};
    const Var v_parts[] = {slice_cols(tq, 2 * dim, dim), slice_cols(iq, 2 * dim, dim)};
    const Var joint = attention(concat_rows(q_parts), concat_rows(k_parts), concat_rows(v_parts), heads);
    const int nt = txt.rows();
    const Var txt_attn = slice_rows(joint, 0, nt);
    const Var img_attn = slice_rows(joint, nt, img.rows());

    Var img_x = add(img, gate(img_out(img_attn), chunk(im, 2)));
    Var txt_x = add(txt, gate(txt_out(txt_attn), chunk(tm, 2)));
    const Var img_m = modulate(layer_norm(img_x), chunk(im, 3), chunk(im, 4));
    const Var txt_m = modulate(layer_norm(txt_x), chunk(tm, 3), chunk(tm, 4));
    img_x = add(img_x, gate(img_fc2(gelu(img_fc1(img_m))), chunk(im, 5)));
    txt_x = add(txt_x, gate(txt_fc2(gelu(txt_fc1(txt_m))), chunk(tm, 5)));
    return {img_x, txt_x};
}

SelfAttentionLayer::SelfAttentionLayer(ParamStore& ps, const std::string& name, int dim, int heads_,
                                       int mlp_ratio, Rng& rng)
    : heads(heads_),
      qkv(ps, name + ".qkv", dim, 3 * dim, rng),
      out(ps, name + ".out", dim, dim, rng),
      fc1(ps, name + ".fc1", dim, mlp_ratio * dim, rng),
      fc2(ps, name + ".fc2", mlp_ratio * dim, dim, rng) {}

Var SelfAttentionLayer::operator()(const Var& x) const {
    using namespace ag;
    const int d = x.cols();
    const Var h = qkv(layer_norm(x));
    Var y = add(x, out(attention(slice_cols(h, 0, d), slice_cols(h, d, d), slice_cols(h, 2 * d, d), heads)));
    return add(y, fc2(gelu(fc1(layer_norm(y)))));
}

CrossAttentionLayer::CrossAttentionLayer(ParamStore& ps, const std::string& name, int dim, int heads_,
                                         int mlp_ratio, Rng& rng, double out_gain)
    : heads(heads_),
      q(ps, name + ".q", dim, dim, rng),
      kv(ps, name + ".kv", dim, 2 * dim, rng),
      out(ps, name + ".out", dim, dim, rng, Init::Normal, out_gain),
      fc1(ps, name + ".fc1", dim, mlp_ratio * dim, rng),
      fc2(ps, name + ".fc2", mlp_ratio * dim, dim, rng, Init::Normal, out_gain) {}

Var CrossAttentionLayer::operator()(const Var& x, const Var& context) const {
    using namespace ag;
    const int d = x.cols();
    const Var ctx = kv(layer_norm(context));
    Var y = add(x, out(attention(q(layer_norm(x)), slice_cols(ctx, 0, d), slice_cols(ctx, d, d), heads)));
    return add(y, fc2(gelu(fc1(layer_norm(y)))));
}

Adam::Adam(std::vector<ParamStore*> stores, double lr, double beta1, double beta2, double eps, double clip_norm)
    : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps), clip_norm_(clip_norm) {
    for (ParamStore* s : stores) {
        for (const auto& [name, v] : s->items()) {
            if (!v.requires_grad()) continue;
            slots_.push_back({name, v, std::vector<double>(v.size(), 0.0), std::vector<double>(v.size(), 0.0)});
        }
    }
}

double Adam::step() {
    ++t_;
    double sq = 0.0;
    for (auto& s : slots_) {
        for (double g : s.param.grad()) sq += g * g;
    }
    const double norm = std::sqrt(sq);
    const double clip = (clip_norm_ > 0.0 && norm > clip_norm_) ? clip_norm_ / norm : 1.0;
    const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    for (auto& s : slots_) {
        auto p = s.param.data();
        auto g = s.param.grad();
        for (std::size_t i = 0; i < p.size(); ++i) {
            const double gi = g[i] * clip;
            s.m[i] = beta1_ * s.m[i] + (1.0 - beta1_) * gi;
            s.v[i] = beta2_ * s.v[i] + (1.0 - beta2_) * gi * gi;
            p[i] -= lr_ * (s.m[i] / bc1) / (std::sqrt(s.v[i] / bc2) + eps_);
            g[i] = 0.0;
        }
    }
    return norm;
}

std::vector<std::pair<std::string, std::vector<double>>> Adam::state() const {
    std::vector<std::pair<std::string, std::vector<double>>> out;
    for (const auto& s : slots_) {
        out.emplace_back("adam.m." + s.name, s.m);
        out.emplace_back("adam.v." + s.name, s.v);
    }
    return out;
}

void Adam::load_state(const std::vector<std::pair<std::string, std::vector<double>>>& state, long long t) {
    std::map<std::string, const std::vector<double>*> lookup;
    for (const auto& [k, v] : state) lookup[k] = &v;
    for (auto& s : slots_) {
        auto m = lookup.find("adam.m." + s.name);
        auto v = lookup.find("adam.v." + s.name);
        if (m == lookup.end() || v == lookup.end()) throw FormatError("optimizer state missing for " + s.name);
        if (m->second->size() != s.m.size() || v->second->size() != s.v.size()) {
            throw FormatError("optimizer state shape mismatch for " + s.name);
        }
        s.m = *m->second;
        s.v = *v->second;
    }
    t_ = t;
}

}  // namespace remix::nn
