#include "remix/autograd.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <unordered_set>

#include "remix/error.hpp"

namespace remix::ag {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using CMapMat = Eigen::Map<const RowMat>;

thread_local bool g_grad_enabled = true;

MapMat mat(Buffer& v, int r, int c) { return MapMat(v.data(), r, c); }
CMapMat cmat(const Buffer& v, int r, int c) { return CMapMat(v.data(), r, c); }

std::shared_ptr<Node> make_node(int rows, int cols, std::initializer_list<const Var*> parents) {
    auto n = std::make_shared<Node>();
    n->rows = rows;
    n->cols = cols;
    n->value.assign(static_cast<std::size_t>(rows) * cols, 0.0);
    if (g_grad_enabled) {
        for (const Var* p : parents) {
            if (p && p->defined() && p->requires_grad()) {
                n->requires_grad = true;
                break;
            }
        }
        if (n->requires_grad) {
            for (const Var* p : parents) {
                if (p && p->defined()) n->parents.push_back(p->ptr());
            }
        }
    }
    return n;
}

// Parent gradient buffer, or nullptr when that parent does not need one.
double* pgrad(Node& n, std::size_t i) {
    Node& p = *n.parents[i];
    if (!p.requires_grad) return nullptr;
    p.ensure_grad();
    return p.grad.data();
}

void check_same_shape(const Var& a, const Var& b, const char* op) {
    if (a.rows() != b.rows() || a.cols() != b.cols()) {
        throw InvalidInput(std::string(op) + ": shape mismatch [" + std::to_string(a.rows()) + "," +
                           std::to_string(a.cols()) + "] vs [" + std::to_string(b.rows()) + "," +
                           std::to_string(b.cols()) + "]");
    }
}

void check_row(const Var& a, const Var& row, const char* op) {
    if (row.rows() != 1 || row.cols() != a.cols()) {
        throw InvalidInput(std::string(op) + ": expected [1," + std::to_string(a.cols()) + "] row vector");
    }
}

template <class F, class D>
Var unary(const Var& a, F f, D df) {
    auto n = make_node(a.rows(), a.cols(), {&a});
    const auto& x = a.node()->value;
    for (std::size_t i = 0; i < x.size(); ++i) n->value[i] = f(x[i]);
    if (n->requires_grad) {
        n->backward_fn = [df](Node& self) {
            double* ga = pgrad(self, 0);
            if (!ga) return;
            const auto& x = self.parents[0]->value;
            for (std::size_t i = 0; i < x.size(); ++i) ga[i] += self.grad[i] * df(x[i], self.value[i]);
        };
    }
    return Var(n);
}

}  // namespace

double Var::item() const {
    if (size() != 1) throw InvalidInput("item() on non-scalar");
    return node_->value[0];
}

void Var::backward(double seed) const {
    if (!node_->requires_grad) return;
    // Iterative post-order DFS for a topological order.
    std::vector<Node*> order;
    std::unordered_set<Node*> seen;
    std::vector<std::pair<Node*, std::size_t>> stack;
    stack.emplace_back(node_.get(), 0);
    seen.insert(node_.get());
    while (!stack.empty()) {
        auto& [n, idx] = stack.back();
        if (idx < n->parents.size()) {
            Node* p = n->parents[idx++].get();
            if (p->requires_grad && !seen.count(p)) {
                seen.insert(p);
                stack.emplace_back(p, 0);
            }
        } else {
            order.push_back(n);
            stack.pop_back();
        }
    }
    node_->ensure_grad();
    for (auto& g : node_->grad) g += seed;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node* n = *it;
        if (n->backward_fn && !n->grad.empty()) n->backward_fn(*n);
    }
}

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }
bool grad_enabled() { return g_grad_enabled; }

Var constant(int rows, int cols, std::vector<double> values) {
    if (values.size() != static_cast<std::size_t>(rows) * cols) throw InvalidInput("constant: size mismatch");
    auto n = std::make_shared<Node>();
    n->rows = rows;
    n->cols = cols;
    n->value.assign(values.begin(), values.end());
    return Var(n);
}

Var constant(int rows, int cols, double fill) {
    return constant(rows, cols, std::vector<double>(static_cast<std::size_t>(rows) * cols, fill));
}

Var parameter(int rows, int cols, std::vector<double> values) {
    Var v = constant(rows, cols, std::move(values));
    v.set_requires_grad(true);
    return v;
}

Var matmul(const Var& a, const Var& b) {
    if (a.cols() != b.rows()) throw InvalidInput("matmul: inner dimension mismatch");
    const int n_ = a.rows(), k = a.cols(), m = b.cols();
    auto n = make_node(n_, m, {&a, &b});
    mat(n->value, n_, m).noalias() = cmat(a.node()->value, n_, k) * cmat(b.node()->value, k, m);
    if (n->requires_grad) {
        n->backward_fn = [n_, k, m](Node& self) {
            auto G = cmat(self.grad, n_, m);
            if (double* ga = pgrad(self, 0)) {
                MapMat(ga, n_, k).noalias() += G * cmat(self.parents[1]->value, k, m).transpose();
            }
            if (double* gb = pgrad(self, 1)) {
                MapMat(gb, k, m).noalias() += cmat(self.parents[0]->value, n_, k).transpose() * G;
            }
        };
    }
    return Var(n);
}

Var matmul_nt(const Var& a, const Var& b) {
    if (a.cols() != b.cols()) throw InvalidInput("matmul_nt: inner dimension mismatch");
    const int n_ = a.rows(), k = a.cols(), m = b.rows();
    auto n = make_node(n_, m, {&a, &b});
    mat(n->value, n_, m).noalias() = cmat(a.node()->value, n_, k) * cmat(b.node()->value, m, k).transpose();
    if (n->requires_grad) {
        n->backward_fn = [n_, k, m](Node& self) {
            auto G = cmat(self.grad, n_, m);
            if (double* ga = pgrad(self, 0)) {
                MapMat(ga, n_, k).noalias() += G * cmat(self.parents[1]->value, m, k);
            }
            if (double* gb = pgrad(self, 1)) {
                MapMat(gb, m, k).noalias() += G.transpose() * cmat(self.parents[0]->value, n_, k);
            }
        };
    }
    return Var(n);
}

Var linear(const Var& x, const Var& w, const Var& b) {
    if (x.cols() != w.rows()) {
        throw InvalidInput("linear: input width " + std::to_string(x.cols()) + " != weight rows " +
                           std::to_string(w.rows()));
    }
    const int n_ = x.rows(), k = x.cols(), m = w.cols();
    const bool has_bias = b.defined();
    if (has_bias && (b.rows() != 1 || b.cols() != m)) throw InvalidInput("linear: bias shape");
    auto n = make_node(n_, m, {&x, &w, has_bias ? &b : nullptr});
    auto Y = mat(n->value, n_, m);
    Y.noalias() = cmat(x.node()->value, n_, k) * cmat(w.node()->value, k, m);
    if (has_bias) Y.rowwise() += cmat(b.node()->value, 1, m).row(0);
    if (n->requires_grad) {
        n->backward_fn = [n_, k, m, has_bias](Node& self) {
            auto G = cmat(self.grad, n_, m);
            if (double* gx = pgrad(self, 0)) {
                MapMat(gx, n_, k).noalias() += G * cmat(self.parents[1]->value, k, m).transpose();
            }
            if (double* gw = pgrad(self, 1)) {
                MapMat(gw, k, m).noalias() += cmat(self.parents[0]->value, n_, k).transpose() * G;
            }
            if (has_bias) {
                if (double* gb = pgrad(self, 2)) MapMat(gb, 1, m) += G.colwise().sum();
            }
        };
    }
    return Var(n);
}

Var transpose(const Var& a) {
    const int r = a.rows(), c = a.cols();
    auto n = make_node(c, r, {&a});
    mat(n->value, c, r) = cmat(a.node()->value, r, c).transpose();
    if (n->requires_grad) {
        n->backward_fn = [r, c](Node& self) {
            if (double* ga = pgrad(self, 0)) MapMat(ga, r, c) += cmat(self.grad, c, r).transpose();
        };
    }
    return Var(n);
}

Var add(const Var& a, const Var& b) {
    check_same_shape(a, b, "add");
    auto n = make_node(a.rows(), a.cols(), {&a, &b});
    const auto& x = a.node()->value;
    const auto& y = b.node()->value;
    for (std::size_t i = 0; i < x.size(); ++i) n->value[i] = x[i] + y[i];
    if (n->requires_grad) {
        n->backward_fn = [](Node& self) {
            for (std::size_t p = 0; p < 2; ++p) {
                if (double* g = pgrad(self, p)) {
                    for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
                }
            }
        };
    }
    return Var(n);
}

Var sub(const Var& a, const Var& b) {
    check_same_shape(a, b, "sub");
    auto n = make_node(a.rows(), a.cols(), {&a, &b});
    const auto& x = a.node()->value;
    const auto& y = b.node()->value;
    for (std::size_t i = 0; i < x.size(); ++i) n->value[i] = x[i] - y[i];
    if (n->requires_grad) {
        n->backward_fn = [](Node& self) {
            if (double* g = pgrad(self, 0)) {
                for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
            }
            if (double* g = pgrad(self, 1)) {
                for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] -= self.grad[i];
            }
        };
    }
    return Var(n);
}

Var mul(const Var& a, const Var& b) {
    check_same_shape(a, b, "mul");
    auto n = make_node(a.rows(), a.cols(), {&a, &b});
    const auto& x = a.node()->value;
    const auto& y = b.node()->value;
    for (std::size_t i = 0; i < x.size(); ++i) n->value[i] = x[i] * y[i];
    if (n->requires_grad) {
        n->backward_fn = [](Node& self) {
            const auto& x = self.parents[0]->value;
            const auto& y = self.parents[1]->value;
            if (double* g = pgrad(self, 0)) {
                for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i] * y[i];
            }
            if (double* g = pgrad(self, 1)) {
                for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i] * x[i];
            }
        };
    }
    return Var(n);
}

Var scale(const Var& a, double s) {
    return unary(a, [s](double x) { return x * s; }, [s](double, double) { return s; });
}

Var add_scalar(const Var& a, double s) {
    return unary(a, [s](double x) { return x + s; }, [](double, double) { return 1.0; });
}

Var add_row(const Var& a, const Var& row) {
    check_row(a, row, "add_row");
    const int r = a.rows(), c = a.cols();
    auto n = make_node(r, c, {&a, &row});
    mat(n->value, r, c) = cmat(a.node()->value, r, c);
    mat(n->value, r, c).rowwise() += cmat(row.node()->value, 1, c).row(0);
    if (n->requires_grad) {
        n->backward_fn = [r, c](Node& self) {
            auto G = cmat(self.grad, r, c);
            if (double* ga = pgrad(self, 0)) MapMat(ga, r, c) += G;
            if (double* gb = pgrad(self, 1)) MapMat(gb, 1, c) += G.colwise().sum();
        };
    }
    return Var(n);
}

Var mul_row(const Var& a, const Var& row) {
    check_row(a, row, "mul_row");
    const int r = a.rows(), c = a.cols();
    auto n = make_node(r, c, {&a, &row});
    const double* x = a.node()->value.data();
    const double* v = row.node()->value.data();
    for (int i = 0; i < r; ++i)
        for (int j = 0; j < c; ++j) n->value[i * c + j] = x[i * c + j] * v[j];
    if (n->requires_grad) {
        n->backward_fn = [r, c](Node& self) {
            const double* x = self.parents[0]->value.data();
            const double* v = self.parents[1]->value.data();
            if (double* ga = pgrad(self, 0)) {
                for (int i = 0; i < r; ++i)
                    for (int j = 0; j < c; ++j) ga[i * c + j] += self.grad[i * c + j] * v[j];
            }
            if (double* gv = pgrad(self, 1)) {
                for (int i = 0; i < r; ++i)
                    for (int j = 0; j < c; ++j) gv[j] += self.grad[i * c + j] * x[i * c + j];
            }
        };
    }
    return Var(n);
}

Var silu(const Var& a) {
    return unary(
        a, [](double x) { return x / (1.0 + std::exp(-x)); },
        [](double x, double) {
            const double s = 1.0 / (1.0 + std::exp(-x));
            return s * (1.0 + x * (1.0 - s));
        });
}

Var gelu(const Var& a) {
    constexpr double k = 0.7978845608028654;  // sqrt(2/pi)
    constexpr double c3 = 0.044715;
    return unary(
        a, [](double x) { return 0.5 * x * (1.0 + std::tanh(k * (x + c3 * x * x * x))); },
        [](double x, double) {
            const double u = k * (x + c3 * x * x * x);
            const double t = std::tanh(u);
            const double du = k * (1.0 + 3.0 * c3 * x * x);
            return 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du;
        });
}

Var tanh(const Var& a) {
    return unary(a, [](double x) { return std::tanh(x); }, [](double, double y) { return 1.0 - y * y; });
}

Var sigmoid(const Var& a) {
    return unary(
        a, [](double x) { return 1.0 / (1.0 + std::exp(-x)); }, [](double, double y) { return y * (1.0 - y); });
}

Var layer_norm(const Var& x, double eps) {
    const int r = x.rows(), c = x.cols();
    auto n = make_node(r, c, {&x});
    std::vector<double> inv_std(r);
    const double* in = x.node()->value.data();
    for (int i = 0; i < r; ++i) {
        double m = 0.0;
        for (int j = 0; j < c; ++j) m += in[i * c + j];
        m /= c;
        double v = 0.0;
        for (int j = 0; j < c; ++j) {
            const double d = in[i * c + j] - m;
            v += d * d;
        }
        v /= c;
        const double is = 1.0 / std::sqrt(v + eps);
        inv_std[i] = is;
        for (int j = 0; j < c; ++j) n->value[i * c + j] = (in[i * c + j] - m) * is;
    }
    if (n->requires_grad) {
        n->backward_fn = [r, c, inv_std = std::move(inv_std)](Node& self) {
            double* gx = pgrad(self, 0);
            if (!gx) return;
            const double* y = self.value.data();
            const double* g = self.grad.data();
            for (int i = 0; i < r; ++i) {
                double mg = 0.0, mgy = 0.0;
                for (int j = 0; j < c; ++j) {
                    mg += g[i * c + j];
                    mgy += g[i * c + j] * y[i * c + j];
                }
                mg /= c;
                mgy /= c;
                for (int j = 0; j < c; ++j) {
                    gx[i * c + j] += inv_std[i] * (g[i * c + j] - mg - y[i * c + j] * mgy);
                }
            }
        };
    }
    return Var(n);
}

Var modulate(const Var& x, const Var& shift, const Var& scale_row) {
    check_row(x, shift, "modulate");
    check_row(x, scale_row, "modulate");
    const int r = x.rows(), c = x.cols();
    auto n = make_node(r, c, {&x, &shift, &scale_row});
    const double* in = x.node()->value.data();
    const double* sh = shift.node()->value.data();
    const double* sc = scale_row.node()->value.data();
    for (int i = 0; i < r; ++i)
        for (int j = 0; j < c; ++j) n->value[i * c + j] = in[i * c + j] * (1.0 + sc[j]) + sh[j];
    if (n->requires_grad) {
        n->backward_fn = [r, c](Node& self) {
            const double* in = self.parents[0]->value.data();
            const double* sc = self.parents[2]->value.data();
            const double* g = self.grad.data();
            if (double* gx = pgrad(self, 0)) {
                for (int i = 0; i < r; ++i)
                    for (int j = 0; j < c; ++j) gx[i * c + j] += g[i * c + j] * (1.0 + sc[j]);
            }
            if (double* gs = pgrad(self, 1)) {
                for (int i = 0; i < r; ++i)
                    for (int j = 0; j < c; ++j) gs[j] += g[i * c + j];
            }
            if (double* gc = pgrad(self, 2)) {
                for (int i = 0; i < r; ++i)
                    for (int j = 0; j < c; ++j) gc[j] += g[i * c + j] * in[i * c + j];
            }
        };
    }
    return Var(n);
}

Var gate(const Var& x, const Var& g) { return mul_row(x, g); }

Var l2_normalize_rows(const Var& x, double eps) {
    const int r = x.rows(), c = x.cols();
    auto n = make_node(r, c, {&x});
    std::vector<double> norms(r);
    const double* in = x.node()->value.data();
    for (int i = 0; i < r; ++i) {
        double s = 0.0;
        for (int j = 0; j < c; ++j) s += in[i * c + j] * in[i * c + j];
        norms[i] = std::sqrt(s + eps);
        for (int j = 0; j < c; ++j) n->value[i * c + j] = in[i * c + j] / norms[i];
    }
    if (n->requires_grad) {
        n->backward_fn = [r, c, norms = std::move(norms)](Node& self) {
            double* gx = pgrad(self, 0);
            if (!gx) return;
            const double* y = self.value.data();
            const double* g = self.grad.data();
            for (int i = 0; i < r; ++i) {
                double dot = 0.0;
                for (int j = 0; j < c; ++j) dot += g[i * c + j] * y[i * c + j];
                for (int j = 0; j < c; ++j) gx[i * c + j] += (g[i * c + j] - y[i * c + j] * dot) / norms[i];
            }
        };
    }
    return Var(n);
}

Var concat_rows(std::span<const Var> parts) {
    if (parts.empty()) throw InvalidInput("concat_rows: no inputs");
    const int c = parts[0].cols();
    int r = 0;
    for (const auto& p : parts) {
        if (p.cols() != c) throw InvalidInput("concat_rows: column mismatch");
        r += p.rows();
    }
    auto n = std::make_shared<Node>();
    n->rows = r;
    n->cols = c;
    n->value.reserve(static_cast<std::size_t>(r) * c);
    for (const auto& p : parts) n->value.insert(n->value.end(), p.data().begin(), p.data().end());
    if (g_grad_enabled) {
        for (const auto& p : parts) n->requires_grad = n->requires_grad || p.requires_grad();
        if (n->requires_grad) {
            for (const auto& p : parts) n->parents.push_back(p.ptr());
            n->backward_fn = [](Node& self) {
                std::size_t off = 0;
                for (std::size_t i = 0; i < self.parents.size(); ++i) {
                    const std::size_t len = self.parents[i]->value.size();
                    if (double* g = pgrad(self, i)) {
                        for (std::size_t j = 0; j < len; ++j) g[j] += self.grad[off + j];
                    }
                    off += len;
                }
            };
        }
    }
    return Var(n);
}

Var concat_cols(std::span<const Var> parts) {
    if (parts.empty()) throw InvalidInput("concat_cols: no inputs");
    const int r = parts[0].rows();
    int c = 0;
    for (const auto& p : parts) {
        if (p.rows() != r) throw InvalidInput("concat_cols: row mismatch");
        c += p.cols();
    }
    auto n = std::make_shared<Node>();
    n->rows = r;
    n->cols = c;
    n->value.assign(static_cast<std::size_t>(r) * c, 0.0);
    int off = 0;
    for (const auto& p : parts) {
        const int pc = p.cols();
        for (int i = 0; i < r; ++i)
            for (int j = 0; j < pc; ++j) n->value[i * c + off + j] = p.data()[i * pc + j];
        off += pc;
    }
    if (g_grad_enabled) {
        for (const auto& p : parts) n->requires_grad = n->requires_grad || p.requires_grad();
        if (n->requires_grad) {
            for (const auto& p : parts) n->parents.push_back(p.ptr());
            n->backward_fn = [r, c](Node& self) {
                int off = 0;
                for (std::size_t k = 0; k < self.parents.size(); ++k) {
                    const int pc = self.parents[k]->cols;
                    if (double* g = pgrad(self, k)) {
                        for (int i = 0; i < r; ++i)
                            for (int j = 0; j < pc; ++j) g[i * pc + j] += self.grad[i * c + off + j];
                    }
                    off += pc;
                }
            };
        }
    }
    return Var(n);
}

Var slice_rows(const Var& a, int start, int count) {
    if (start < 0 || count < 0 || start + count > a.rows()) throw InvalidInput("slice_rows: out of range");
    const int c = a.cols();
    auto n = make_node(count, c, {&a});
    std::copy_n(a.data().begin() + static_cast<std::ptrdiff_t>(start) * c, static_cast<std::size_t>(count) * c,
                n->value.begin());
    if (n->requires_grad) {
        n->backward_fn = [start, c](Node& self) {
            if (double* g = pgrad(self, 0)) {
                double* dst = g + static_cast<std::ptrdiff_t>(start) * c;
                for (std::size_t i = 0; i < self.grad.size(); ++i) dst[i] += self.grad[i];
            }
        };
    }
    return Var(n);
}

Var slice_cols(const Var& a, int start, int count) {
    if (start < 0 || count < 0 || start + count > a.cols()) throw InvalidInput("slice_cols: out of range");
    const int r = a.rows(), c = a.cols();
    auto n = make_node(r, count, {&a});
    for (int i = 0; i < r; ++i)
        for (int j = 0; j < count; ++j) n->value[i * count + j] = a.data()[i * c + start + j];
    if (n->requires_grad) {
        n->backward_fn = [r, c, start, count](Node& self) {
            if (double* g = pgrad(self, 0)) {
                for (int i = 0; i < r; ++i)
                    for (int j = 0; j < count; ++j) g[i * c + start + j] += self.grad[i * count + j];
            }
        };
    }
    return Var(n);
}

Var reshape(const Var& a, int rows, int cols) {
    if (static_cast<std::size_t>(rows) * cols != a.size()) throw InvalidInput("reshape: size mismatch");
    auto n = make_node(rows, cols, {&a});
    n->value = a.node()->value;
    if (n->requires_grad) {
        n->backward_fn = [](Node& self) {
            if (double* g = pgrad(self, 0)) {
                for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
            }
        };
    }
    return Var(n);
}

Var gather(const Var& a, int rows, int cols, std::vector<int> index) {
    if (index.size() != static_cast<std::size_t>(rows) * cols) throw InvalidInput("gather: index size");
    auto n = make_node(rows, cols, {&a});
    const auto& src = a.node()->value;
    for (std::size_t i = 0; i < index.size(); ++i) {
        if (index[i] < 0 || static_cast<std::size_t>(index[i]) >= src.size()) {
            throw InvalidInput("gather: index out of range");
        }
        n->value[i] = src[index[i]];
    }
    if (n->requires_grad) {
        n->backward_fn = [index = std::move(index)](Node& self) {
            if (double* g = pgrad(self, 0)) {
                for (std::size_t i = 0; i < index.size(); ++i) g[index[i]] += self.grad[i];
            }
        };
    }
    return Var(n);
}

Var sum(const Var& a) {
    auto n = make_node(1, 1, {&a});
    double s = 0.0;
    for (double x : a.data()) s += x;
    n->value[0] = s;
    if (n->requires_grad) {
        n->backward_fn = [](Node& self) {
            if (double* g = pgrad(self, 0)) {
                const std::size_t len = self.parents[0]->value.size();
                for (std::size_t i = 0; i < len; ++i) g[i] += self.grad[0];
            }
        };
    }
    return Var(n);
}

Var mean(const Var& a) { return scale(sum(a), 1.0 / static_cast<double>(a.size())); }

Var mean_rows(const Var& a) {
    const int r = a.rows(), c = a.cols();
    auto n = make_node(1, c, {&a});
    mat(n->value, 1, c) = cmat(a.node()->value, r, c).colwise().mean();
    if (n->requires_grad) {
        n->backward_fn = [r, c](Node& self) {
            if (double* g = pgrad(self, 0)) {
                MapMat(g, r, c).rowwise() += cmat(self.grad, 1, c).row(0) / static_cast<double>(r);
            }
        };
    }
    return Var(n);
}

Var mse(const Var& a, const Var& b) {
    check_same_shape(a, b, "mse");
    auto n = make_node(1, 1, {&a, &b});
    const auto& x = a.node()->value;
    const auto& y = b.node()->value;
    double s = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double d = x[i] - y[i];
        s += d * d;
    }
    n->value[0] = s / static_cast<double>(x.size());
    if (n->requires_grad) {
        n->backward_fn = [](Node& self) {
            const auto& x = self.parents[0]->value;
            const auto& y = self.parents[1]->value;
            const double k = 2.0 * self.grad[0] / static_cast<double>(x.size());
            double* ga = pgrad(self, 0);
            double* gb = pgrad(self, 1);
            for (std::size_t i = 0; i < x.size(); ++i) {
                const double d = k * (x[i] - y[i]);
                if (ga) ga[i] += d;
                if (gb) gb[i] -= d;
            }
        };
    }
    return Var(n);
}

Var row_dot(const Var& a, const Var& b) {
    check_same_shape(a, b, "row_dot");
    if (a.rows() != 1) throw InvalidInput("row_dot: expected row vectors");
    auto n = make_node(1, 1, {&a, &b});
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a.data()[i] * b.data()[i];
    n->value[0] = s;
    if (n->requires_grad) {
        n->backward_fn = [](Node& self) {
            const auto& x = self.parents[0]->value;
            const auto& y = self.parents[1]->value;
            if (double* ga = pgrad(self, 0)) {
                for (std::size_t i = 0; i < x.size(); ++i) ga[i] += self.grad[0] * y[i];
            }
            if (double* gb = pgrad(self, 1)) {
                for (std::size_t i = 0; i < x.size(); ++i) gb[i] += self.grad[0] * x[i];
            }
        };
    }
    return Var(n);
}

Var cross_entropy(const Var& logits, std::span<const int> labels) {
    const int r = logits.rows(), c = logits.cols();
    if (static_cast<int>(labels.size()) != r) throw InvalidInput("cross_entropy: label count");
    auto n = make_node(1, 1, {&logits});
    std::vector<double> probs(static_cast<std::size_t>(r) * c);
    std::vector<int> lab(labels.begin(), labels.end());
    const double* z = logits.node()->value.data();
    double loss = 0.0;
    for (int i = 0; i < r; ++i) {
        if (lab[i] < 0 || lab[i] >= c) throw InvalidInput("cross_entropy: label out of range");
        double mx = z[i * c];
        for (int j = 1; j < c; ++j) mx = std::max(mx, z[i * c + j]);
        double s = 0.0;
        for (int j = 0; j < c; ++j) {
            probs[i * c + j] = std::exp(z[i * c + j] - mx);
            s += probs[i * c + j];
        }
        for (int j = 0; j < c; ++j) probs[i * c + j] /= s;
        loss -= std::log(std::max(probs[i * c + lab[i]], 1e-300));
    }
    n->value[0] = loss / r;
    if (n->requires_grad) {
        n->backward_fn = [r, c, probs = std::move(probs), lab = std::move(lab)](Node& self) {
            double* g = pgrad(self, 0);
            if (!g) return;
            const double k = self.grad[0] / r;
            for (int i = 0; i < r; ++i) {
                for (int j = 0; j < c; ++j) g[i * c + j] += k * (probs[i * c + j] - (j == lab[i] ? 1.0 : 0.0));
            }
        };
    }
    return Var(n);
}

Var attention(const Var& q, const Var& k, const Var& v, int heads) {
    const int tq = q.rows(), tk = k.rows(), d = q.cols();
    if (k.cols() != d || v.cols() != d || v.rows() != tk) throw InvalidInput("attention: shape mismatch");
    if (heads <= 0 || d % heads != 0) throw InvalidInput("attention: width not divisible by heads");
    const int dh = d / heads;
    const double inv = 1.0 / std::sqrt(static_cast<double>(dh));
    auto n = make_node(tq, d, {&q, &k, &v});
    auto Q = cmat(q.node()->value, tq, d);
    auto K = cmat(k.node()->value, tk, d);
    auto V = cmat(v.node()->value, tk, d);
    auto O = mat(n->value, tq, d);
    std::vector<RowMat> probs;
    const bool keep = n->requires_grad;
    if (keep) probs.resize(heads);
    for (int h = 0; h < heads; ++h) {
        RowMat S = (Q.middleCols(h * dh, dh) * K.middleCols(h * dh, dh).transpose()) * inv;
        for (int i = 0; i < tq; ++i) {
            const double mx = S.row(i).maxCoeff();
            S.row(i) = (S.row(i).array() - mx).exp();
            S.row(i) /= S.row(i).sum();
        }
        O.middleCols(h * dh, dh).noalias() = S * V.middleCols(h * dh, dh);
        if (keep) probs[h] = std::move(S);
    }
    if (keep) {
        n->backward_fn = [tq, tk, d, heads, dh, inv, probs = std::move(probs)](Node& self) {
            auto G = cmat(self.grad, tq, d);
            auto Q = cmat(self.parents[0]->value, tq, d);
            auto K = cmat(self.parents[1]->value, tk, d);
            auto V = cmat(self.parents[2]->value, tk, d);
            double* gq = pgrad(self, 0);
            double* gk = pgrad(self, 1);
            double* gv = pgrad(self, 2);
            for (int h = 0; h < heads; ++h) {
                const RowMat& P = probs[h];
                auto Gh = G.middleCols(h * dh, dh);
                if (gv) MapMat(gv, tk, d).middleCols(h * dh, dh).noalias() += P.transpose() * Gh;
                if (!gq && !gk) continue;
                RowMat dP = Gh * V.middleCols(h * dh, dh).transpose();
                Eigen::VectorXd rs = (dP.array() * P.array()).rowwise().sum();
                RowMat dS = (P.array() * (dP.array().colwise() - rs.array())).matrix() * inv;
                if (gq) MapMat(gq, tq, d).middleCols(h * dh, dh).noalias() += dS * K.middleCols(h * dh, dh);
                if (gk) MapMat(gk, tk, d).middleCols(h * dh, dh).noalias() += dS.transpose() * Q.middleCols(h * dh, dh);
            }
        };
    }
    return Var(n);
}

Var conv2d(const Var& x, const Var& weight, const Var& bias, const ConvGeometry& g) {
    const int cin = x.cols();
    if (x.rows() != g.height * g.width) throw InvalidInput("conv2d: input rows != height*width");
    if (weight.rows() != g.kernel * g.kernel * cin) throw InvalidInput("conv2d: kernel/input channel mismatch");
    const int oh = g.out_height(), ow = g.out_width();
    if (oh <= 0 || ow <= 0) throw InvalidInput("conv2d: empty output");
    // im2col; padding taps carry index -1.
    const int taps = g.kernel * g.kernel * cin;
    std::vector<int> index(static_cast<std::size_t>(oh) * ow * taps);
    for (int oy = 0; oy < oh; ++oy) {
        for (int ox = 0; ox < ow; ++ox) {
            int* row = &index[(static_cast<std::size_t>(oy) * ow + ox) * taps];
            int t = 0;
            for (int ky = 0; ky < g.kernel; ++ky) {
                for (int kx = 0; kx < g.kernel; ++kx) {
                    const int iy = oy * g.stride + ky - g.pad;
                    const int ix = ox * g.stride + kx - g.pad;
                    const bool inside = iy >= 0 && iy < g.height && ix >= 0 && ix < g.width;
                    for (int c = 0; c < cin; ++c) row[t++] = inside ? (iy * g.width + ix) * cin + c : -1;
                }
            }
        }
    }
    auto cols = make_node(oh * ow, taps, {&x});
    const auto& src = x.node()->value;
    for (std::size_t i = 0; i < index.size(); ++i) cols->value[i] = index[i] >= 0 ? src[index[i]] : 0.0;
    if (cols->requires_grad) {
        cols->backward_fn = [index = std::move(index)](Node& self) {
            if (double* gx = pgrad(self, 0)) {
                for (std::size_t i = 0; i < index.size(); ++i) {
                    if (index[i] >= 0) gx[index[i]] += self.grad[i];
                }
            }
        };
    }
    return linear(Var(cols), weight, bias);
}

Var avg_pool(const Var& x, int height, int width, int factor) {
    if (x.rows() != height * width || height % factor != 0 || width % factor != 0) {
        throw InvalidInput("avg_pool: indivisible grid");
    }
    const int c = x.cols(), oh = height / factor, ow = width / factor;
    auto n = make_node(oh * ow, c, {&x});
    const double k = 1.0 / (factor * factor);
    const auto& in = x.node()->value;
    for (int y = 0; y < height; ++y)
        for (int xx = 0; xx < width; ++xx) {
            const int o = (y / factor) * ow + xx / factor;
            for (int ch = 0; ch < c; ++ch) n->value[o * c + ch] += k * in[(y * width + xx) * c + ch];
        }
    if (n->requires_grad) {
        n->backward_fn = [height, width, factor, c, ow, k](Node& self) {
            if (double* g = pgrad(self, 0)) {
                for (int y = 0; y < height; ++y)
                    for (int xx = 0; xx < width; ++xx) {
                        const int o = (y / factor) * ow + xx / factor;
                        for (int ch = 0; ch < c; ++ch) g[(y * width + xx) * c + ch] += k * self.grad[o * c + ch];
                    }
            }
        };
    }
    return Var(n);
}

}  // namespace remix::ag
