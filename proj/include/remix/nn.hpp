#pragma once

// Parameter registry and the layers shared by every network in the stack.

#include <cstdint>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "remix/autograd.hpp"
#include "remix/rng.hpp"

namespace remix::nn {

using ag::Var;

enum class Init { Normal, Zero };

// Ordered name -> parameter map. Names are stable and become checkpoint keys.
class ParamStore {
public:
    Var add(const std::string& name, int rows, int cols, Rng& rng, Init init, double stddev);
    Var add_values(const std::string& name, int rows, int cols, std::vector<double> values);

    bool contains(const std::string& name) const { return index_.count(name) != 0; }
    Var get(const std::string& name) const;
    const std::vector<std::pair<std::string, Var>>& items() const { return items_; }
    std::size_t parameter_count() const;

    void set_trainable(bool on);
    void zero_grad();
    // FNV-1a over names and raw value bytes.
    std::uint64_t checksum() const;
    // Copies values for every name present in both stores (shapes must agree).
    void copy_matching(const ParamStore& other, const std::string& other_prefix = "",
                       const std::string& this_prefix = "");

private:
    std::vector<std::pair<std::string, Var>> items_;
    std::map<std::string, std::size_t> index_;
};

struct Linear {
    Var weight;  // [in, out]
    Var bias;    // [1, out]
    Linear() = default;
    Linear(ParamStore& ps, const std::string& name, int in, int out, Rng& rng, Init init = Init::Normal,
           double gain = 1.0);
    Var operator()(const Var& x) const { return ag::linear(x, weight, bias); }
    int in() const { return weight.rows(); }
    int out() const { return weight.cols(); }
};

struct Conv2d {
    Var weight;  // [k*k*in, out]
    Var bias;
    int in_channels = 0;
    int out_channels = 0;
    int kernel = 3;
    int stride = 1;
    Conv2d() = default;
    Conv2d(ParamStore& ps, const std::string& name, int in, int out, int kernel, int stride, Rng& rng,
           Init init = Init::Normal);
    // x is [height*width, in]; returns [out_h*out_w, out].
    Var operator()(const Var& x, int height, int width) const;
};

// Linear -> SiLU -> Linear.
struct Mlp {
    Linear fc1, fc2;
    Mlp() = default;
    Mlp(ParamStore& ps, const std::string& name, int in, int hidden, int out, Rng& rng,
        Init out_init = Init::Normal);
    Var operator()(const Var& x) const { return fc2(ag::silu(fc1(x))); }
};

// Sinusoidal features [cos(p*f_0..), sin(p*f_0..)] with geometric frequencies.
std::vector<double> sinusoid(double position, int dim, double max_period = 10000.0);
// [count, dim] table of 1D positional encodings for indices 0..count-1.
Var positional_table_1d(int count, int dim);

// One transformer block with separate parameters for an image-like stream and
// a text-like stream that attend jointly, modulated by a global vector.
struct MMDiTBlock {
    int dim = 0;
    int heads = 1;
    Linear img_mod, txt_mod;  // cond -> 6*dim (adaLN-zero)
    Linear img_qkv, txt_qkv;
    Linear img_out, txt_out;
    Linear img_fc1, img_fc2, txt_fc1, txt_fc2;

    MMDiTBlock() = default;
    MMDiTBlock(ParamStore& ps, const std::string& name, int dim, int heads, int mlp_ratio, Rng& rng);
    // img [Ti,dim], txt [Tt,dim], cond [1,dim]
    std::pair<Var, Var> operator()(const Var& img, const Var& txt, const Var& cond) const;
};

// Pre-norm self-attention transformer layer.
struct SelfAttentionLayer {
    int heads = 1;
    Linear qkv, out, fc1, fc2;
    SelfAttentionLayer() = default;
    SelfAttentionLayer(ParamStore& ps, const std::string& name, int dim, int heads, int mlp_ratio, Rng& rng);
    Var operator()(const Var& x) const;
};

// Pre-norm cross-attention layer: x attends to context; residual output
// passes through out and fc2 (the output projections).
struct CrossAttentionLayer {
    int heads = 1;
    Linear q, kv, out, fc1, fc2;
    CrossAttentionLayer() = default;
    CrossAttentionLayer(ParamStore& ps, const std::string& name, int dim, int heads, int mlp_ratio, Rng& rng,
                        double out_gain);
    Var operator()(const Var& x, const Var& context) const;
};

// Adam with bias correction over every trainable parameter in the given stores.
class Adam {
public:
    Adam(std::vector<ParamStore*> stores, double lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8,
         double clip_norm = 1.0);
    // Applies one update from accumulated gradients, then clears them.
    // Returns the pre-clip global gradient norm.
    double step();
    long long steps_taken() const { return t_; }
    double lr() const { return lr_; }
    void set_lr(double lr) { lr_ = lr; }

    // Moment buffers keyed by parameter name, for checkpoint resume.
    std::vector<std::pair<std::string, std::vector<double>>> state() const;
    void load_state(const std::vector<std::pair<std::string, std::vector<double>>>& state, long long t);

private:
    struct Slot {
        std::string name;
        Var param;
        std::vector<double> m, v;
    };
    std::vector<Slot> slots_;
    double lr_, beta1_, beta2_, eps_, clip_norm_;
    long long t_ = 0;
};

}  // namespace remix::nn
