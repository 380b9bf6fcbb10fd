#pragma once

// Minimal reverse-mode automatic differentiation over dense row-major
// matrices. Every value is a 2D matrix; images and latent grids are carried
// as [H*W, C] with their spatial extent passed explicitly to the ops that
// need it (conv2d, pooling).

#include <cstddef>
#include <functional>
#include <memory>
#include <new>
#include <span>
#include <string>
#include <vector>

namespace remix::ag {

// 64-byte aligned storage. Vectorised reductions peel a different number of
// leading elements depending on buffer alignment, so mixed alignments would
// make identical computations round differently.
template <class T>
struct AlignedAllocator {
    using value_type = T;
    static constexpr std::align_val_t kAlign{64};
    AlignedAllocator() = default;
    template <class U>
    AlignedAllocator(const AlignedAllocator<U>&) {}
    T* allocate(std::size_t n) { return static_cast<T*>(::operator new(n * sizeof(T), kAlign)); }
    void deallocate(T* p, std::size_t) { ::operator delete(p, kAlign); }
    template <class U>
    bool operator==(const AlignedAllocator<U>&) const {
        return true;
    }
};

using Buffer = std::vector<double, AlignedAllocator<double>>;

struct Node {
    int rows = 0;
    int cols = 0;
    Buffer value;
    Buffer grad;  // allocated lazily on backward
    bool requires_grad = false;
    std::vector<std::shared_ptr<Node>> parents;
    std::function<void(Node&)> backward_fn;

    std::size_t size() const { return value.size(); }
    void ensure_grad() {
        if (grad.size() != value.size()) grad.assign(value.size(), 0.0);
    }
};

class Var {
public:
    Var() = default;
    explicit Var(std::shared_ptr<Node> n) : node_(std::move(n)) {}

    int rows() const { return node_->rows; }
    int cols() const { return node_->cols; }
    std::size_t size() const { return node_->value.size(); }
    bool defined() const { return static_cast<bool>(node_); }
    bool requires_grad() const { return node_->requires_grad; }
    void set_requires_grad(bool on) { node_->requires_grad = on; }

    std::span<double> data() { return node_->value; }
    std::span<const double> data() const { return node_->value; }
    std::span<double> grad() {
        node_->ensure_grad();
        return node_->grad;
    }
    double item() const;
    double at(int r, int c) const { return node_->value[static_cast<std::size_t>(r) * cols() + c]; }

    void zero_grad() { node_->grad.assign(node_->value.size(), 0.0); }

    // Runs reverse accumulation from this (scalar) node; seed defaults to 1.
    void backward(double seed = 1.0) const;

    Node* node() const { return node_.get(); }
    const std::shared_ptr<Node>& ptr() const { return node_; }

private:
    std::shared_ptr<Node> node_;
};

// Disables graph recording within a scope; ops still compute values.
class NoGradGuard {
public:
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool previous_;
};

bool grad_enabled();

// Leaf constructors.
Var constant(int rows, int cols, std::vector<double> values);
Var constant(int rows, int cols, double fill = 0.0);
Var parameter(int rows, int cols, std::vector<double> values);

// Linear algebra.
Var matmul(const Var& a, const Var& b);             // [n,k] x [k,m]
Var matmul_nt(const Var& a, const Var& b);          // [n,k] x [m,k]^T
Var linear(const Var& x, const Var& w, const Var& b);  // x[n,in] w[in,out] + b[1,out]; b may be undefined
Var transpose(const Var& a);

// Elementwise.
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var scale(const Var& a, double s);
Var add_scalar(const Var& a, double s);
Var add_row(const Var& a, const Var& row);  // row [1,m] broadcast over rows
Var mul_row(const Var& a, const Var& row);
Var silu(const Var& a);
Var gelu(const Var& a);  // tanh approximation
Var tanh(const Var& a);
Var sigmoid(const Var& a);

// Normalisation and modulation.
Var layer_norm(const Var& x, double eps = 1e-6);  // per row, no affine
Var modulate(const Var& x, const Var& shift, const Var& scale);  // x*(1+scale)+shift
Var gate(const Var& x, const Var& g);  // x * g, g is [1,m]
Var l2_normalize_rows(const Var& x, double eps = 1e-12);

// Shape manipulation.
Var concat_rows(std::span<const Var> parts);
Var concat_cols(std::span<const Var> parts);
Var slice_rows(const Var& a, int start, int count);
Var slice_cols(const Var& a, int start, int count);
Var reshape(const Var& a, int rows, int cols);
// out[i] = a[index[i]]; gradient is scatter-added. Used for space<->depth moves.
Var gather(const Var& a, int rows, int cols, std::vector<int> index);

// Reductions.
Var sum(const Var& a);
Var mean(const Var& a);
Var mean_rows(const Var& a);  // [n,m] -> [1,m]
Var mse(const Var& a, const Var& b);
Var row_dot(const Var& a, const Var& b);  // [1,m] . [1,m] -> [1,1]
Var cross_entropy(const Var& logits, std::span<const int> labels);  // mean over rows

// Multi-head scaled dot-product attention. q [Tq,d], k,v [Tk,d].
Var attention(const Var& q, const Var& k, const Var& v, int heads);

// Convolution over an [H*W, Cin] grid with a [k*k*Cin, Cout] kernel.
struct ConvGeometry {
    int height = 0;
    int width = 0;
    int kernel = 3;
    int stride = 1;
    int pad = 1;
    int out_height() const { return (height + 2 * pad - kernel) / stride + 1; }
    int out_width() const { return (width + 2 * pad - kernel) / stride + 1; }
};
Var conv2d(const Var& x, const Var& weight, const Var& bias, const ConvGeometry& g);
Var avg_pool(const Var& x, int height, int width, int factor);

}  // namespace remix::ag
