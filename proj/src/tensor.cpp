#include "pcseg/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <limits>
#include <numbers>
#include <sstream>

namespace pcseg {

std::size_t shape_size(const Shape& s) {
    std::size_t n = 1;
    for (std::size_t d : s) n *= d;
    return n;
}

std::string shape_str(const Shape& s) {
    std::string out = "[";
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (i) out += "x";
        out += std::to_string(s[i]);
    }
    return out + "]";
}

// ---- Tensor --------------------------------------------------------------

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
    return full(std::move(shape), 0.0, requires_grad);
}

Tensor Tensor::full(Shape shape, double v, bool requires_grad) {
    auto d = std::make_shared<TensorData>();
    d->shape = std::move(shape);
    d->values.assign(shape_size(d->shape), v);
    d->requires_grad = requires_grad;
    return Tensor(std::move(d));
}

Tensor Tensor::from(Shape shape, std::vector<double> values, bool requires_grad) {
    if (shape_size(shape) != values.size()) {
        throw ShapeError("tensor value count " + std::to_string(values.size()) +
                         " does not match shape " + shape_str(shape));
    }
    auto d = std::make_shared<TensorData>();
    d->shape = std::move(shape);
    d->values = std::move(values);
    d->requires_grad = requires_grad;
    return Tensor(std::move(d));
}

Tensor Tensor::scalar(double v) { return from({}, {v}); }

std::size_t Tensor::rows() const {
    if (rank() != 2) throw ShapeError("rows() on non-matrix " + shape_str(shape()));
    return d_->shape[0];
}

std::size_t Tensor::cols() const {
    if (rank() != 2) throw ShapeError("cols() on non-matrix " + shape_str(shape()));
    return d_->shape[1];
}

double Tensor::value() const {
    if (size() != 1) throw ConfigError("value() on non-scalar tensor " + shape_str(shape()));
    return d_->values[0];
}

double Tensor::at(std::size_t i, std::size_t j) const { return d_->values[i * cols() + j]; }
double& Tensor::at(std::size_t i, std::size_t j) { return d_->values[i * cols() + j]; }

std::vector<double>& Tensor::grad() {
    if (d_->grad.empty()) d_->grad.assign(d_->values.size(), 0.0);
    return d_->grad;
}

void Tensor::zero_grad() {
    if (d_ && !d_->grad.empty()) std::fill(d_->grad.begin(), d_->grad.end(), 0.0);
}

// ---- GradTape ------------------------------------------------------------

namespace {
thread_local GradTape* g_active_tape = nullptr;
}

GradTape::GradTape() {
    prev_ = g_active_tape;
    g_active_tape = this;
}

GradTape::~GradTape() { g_active_tape = prev_; }

GradTape* GradTape::active() { return g_active_tape; }

void GradTape::record(std::function<void()> step) { steps_.push_back(std::move(step)); }

void GradTape::backward(const Tensor& loss) {
    if (!loss.defined() || loss.size() != 1) {
        throw ConfigError("backward requires a scalar loss tensor");
    }
    Tensor seed = loss;
    seed.grad()[0] += 1.0;
    for (auto it = steps_.rbegin(); it != steps_.rend(); ++it) (*it)();
    steps_.clear();
}

void backward(const Tensor& loss) {
    GradTape* tape = GradTape::active();
    if (!tape) throw ConfigError("backward called with no active GradTape");
    tape->backward(loss);
}

// ---- op plumbing ----------------------------------------------------------

namespace {

bool tracking(std::initializer_list<const Tensor*> inputs) {
    if (!GradTape::active()) return false;
    for (const Tensor* t : inputs) {
        if (t->requires_grad()) return true;
    }
    return false;
}

Tensor make_output(Shape shape, std::vector<double> values, bool requires_grad) {
    return Tensor::from(std::move(shape), std::move(values), requires_grad);
}

void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (a.shape() != b.shape()) {
        throw ShapeError(std::string(op) + ": shapes " + shape_str(a.shape()) + " and " +
                         shape_str(b.shape()) + " differ");
    }
}

// outer/len/inner decomposition of an axis for slice-wise ops.
struct AxisSplit {
    std::size_t outer, len, inner;
};

AxisSplit split_axis(const Shape& shape, std::size_t axis) {
    if (axis >= shape.size()) {
        throw ShapeError("axis " + std::to_string(axis) + " out of range for " + shape_str(shape));
    }
    AxisSplit s{1, shape[axis], 1};
    for (std::size_t i = 0; i < axis; ++i) s.outer *= shape[i];
    for (std::size_t i = axis + 1; i < shape.size(); ++i) s.inner *= shape[i];
    return s;
}

void check_finite(const Tensor& x, const char* op) {
    for (double v : x.values()) {
        if (!std::isfinite(v)) throw NumericError(std::string(op) + ": non-finite input value");
    }
}

}  // namespace

// ---- ops -------------------------------------------------------------------

Tensor matmul(Tensor a, Tensor b) {
    if (a.rank() != 2 || b.rank() != 2 || a.shape()[1] != b.shape()[0]) {
        throw ShapeError("matmul: incompatible shapes " + shape_str(a.shape()) + " and " +
                         shape_str(b.shape()));
    }
    const std::size_t m = a.shape()[0], k = a.shape()[1], n = b.shape()[1];
    std::vector<double> y(m * n, 0.0);
    const double* pa = a.values().data();
    const double* pb = b.values().data();
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t p = 0; p < k; ++p) {
            const double aip = pa[i * k + p];
            if (aip == 0.0) continue;
            double* yrow = y.data() + i * n;
            const double* brow = pb + p * n;
            for (std::size_t j = 0; j < n; ++j) yrow[j] += aip * brow[j];
        }
    }
    Tensor out = make_output({m, n}, std::move(y), tracking({&a, &b}));
    if (out.requires_grad()) {
        GradTape::active()->record([a, b, out]() mutable {
            if (!out.grad_allocated()) return;
            const std::size_t m = a.shape()[0], k = a.shape()[1], n = b.shape()[1];
            const double* gy = out.grad().data();
            if (a.requires_grad()) {
                double* ga = a.grad().data();
                const double* pb = b.values().data();
                for (std::size_t i = 0; i < m; ++i) {
                    for (std::size_t p = 0; p < k; ++p) {
                        double s = 0.0;
                        const double* gyrow = gy + i * n;
                        const double* brow = pb + p * n;
                        for (std::size_t j = 0; j < n; ++j) s += gyrow[j] * brow[j];
                        ga[i * k + p] += s;
                    }
                }
            }
            if (b.requires_grad()) {
                double* gb = b.grad().data();
                const double* pa = a.values().data();
                for (std::size_t i = 0; i < m; ++i) {
                    for (std::size_t p = 0; p < k; ++p) {
                        const double aip = pa[i * k + p];
                        if (aip == 0.0) continue;
                        double* gbrow = gb + p * n;
                        const double* gyrow = gy + i * n;
                        for (std::size_t j = 0; j < n; ++j) gbrow[j] += aip * gyrow[j];
                    }
                }
            }
        });
    }
    return out;
}

Tensor transpose(Tensor x) {
    const std::size_t r = x.rows(), c = x.cols();
    std::vector<double> y(r * c);
    for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) y[j * r + i] = x.values()[i * c + j];
    Tensor out = make_output({c, r}, std::move(y), tracking({&x}));
    if (out.requires_grad()) {
        GradTape::active()->record([x, out]() mutable {
            if (!out.grad_allocated()) return;
            const std::size_t r = x.rows(), c = x.cols();
            double* gx = x.grad().data();
            const double* gy = out.grad().data();
            for (std::size_t i = 0; i < r; ++i)
                for (std::size_t j = 0; j < c; ++j) gx[i * c + j] += gy[j * r + i];
        });
    }
    return out;
}

namespace {

template <typename Fwd, typename Bwd>
Tensor elementwise_binary(Tensor a, Tensor b, const char* name, Fwd f, Bwd df) {
    check_same_shape(a, b, name);
    std::vector<double> y(a.size());
    for (std::size_t i = 0; i < y.size(); ++i) y[i] = f(a.values()[i], b.values()[i]);
    Tensor out = make_output(a.shape(), std::move(y), tracking({&a, &b}));
    if (out.requires_grad()) {
        GradTape::active()->record([a, b, out, df]() mutable {
            if (!out.grad_allocated()) return;
            const double* gy = out.grad().data();
            for (std::size_t i = 0; i < out.size(); ++i) {
                auto [da, db] = df(a.values()[i], b.values()[i]);
                if (a.requires_grad()) a.grad()[i] += gy[i] * da;
                if (b.requires_grad()) b.grad()[i] += gy[i] * db;
            }
        });
    }
    return out;
}

template <typename Fwd, typename Bwd>
Tensor elementwise_unary(Tensor x, Fwd f, Bwd df) {
    std::vector<double> y(x.size());
    for (std::size_t i = 0; i < y.size(); ++i) y[i] = f(x.values()[i]);
    Tensor out = make_output(x.shape(), std::move(y), tracking({&x}));
    if (out.requires_grad()) {
        GradTape::active()->record([x, out, df]() mutable {
            if (!out.grad_allocated()) return;
            const double* gy = out.grad().data();
            double* gx = x.grad().data();
            for (std::size_t i = 0; i < out.size(); ++i) gx[i] += gy[i] * df(x.values()[i], out.values()[i]);
        });
    }
    return out;
}

}  // namespace

Tensor add(Tensor a, Tensor b) {
    return elementwise_binary(a, b, "add", [](double x, double y) { return x + y; },
                              [](double, double) { return std::pair<double, double>{1.0, 1.0}; });
}

Tensor sub(Tensor a, Tensor b) {
    return elementwise_binary(a, b, "sub", [](double x, double y) { return x - y; },
                              [](double, double) { return std::pair<double, double>{1.0, -1.0}; });
}

Tensor mul(Tensor a, Tensor b) {
    return elementwise_binary(a, b, "mul", [](double x, double y) { return x * y; },
                              [](double x, double y) { return std::pair<double, double>{y, x}; });
}

Tensor scale(Tensor x, double c) {
    return elementwise_unary(x, [c](double v) { return c * v; },
                             [c](double, double) { return c; });
}

Tensor add_bias(Tensor x, Tensor bias) {
    if (x.rank() != 2 || bias.rank() != 1 || bias.shape()[0] != x.rows()) {
        throw ShapeError("add_bias: shapes " + shape_str(x.shape()) + " and " +
                         shape_str(bias.shape()) + " incompatible");
    }
    const std::size_t r = x.rows(), c = x.cols();
    std::vector<double> y(x.values());
    for (std::size_t i = 0; i < r; ++i) {
        const double b = bias.values()[i];
        for (std::size_t j = 0; j < c; ++j) y[i * c + j] += b;
    }
    Tensor out = make_output(x.shape(), std::move(y), tracking({&x, &bias}));
    if (out.requires_grad()) {
        GradTape::active()->record([x, bias, out]() mutable {
            if (!out.grad_allocated()) return;
            const std::size_t r = x.rows(), c = x.cols();
            const double* gy = out.grad().data();
            if (x.requires_grad()) {
                double* gx = x.grad().data();
                for (std::size_t i = 0; i < r * c; ++i) gx[i] += gy[i];
            }
            if (bias.requires_grad()) {
                double* gb = bias.grad().data();
                for (std::size_t i = 0; i < r; ++i) {
                    double s = 0.0;
                    for (std::size_t j = 0; j < c; ++j) s += gy[i * c + j];
                    gb[i] += s;
                }
            }
        });
    }
    return out;
}

Tensor softmax(Tensor x, std::size_t axis) {
    check_finite(x, "softmax");
    const AxisSplit ax = split_axis(x.shape(), axis);
    std::vector<double> y(x.size());
    const double* px = x.values().data();
    for (std::size_t o = 0; o < ax.outer; ++o) {
        for (std::size_t i = 0; i < ax.inner; ++i) {
            const std::size_t base = o * ax.len * ax.inner + i;
            double mx = -std::numeric_limits<double>::infinity();
            for (std::size_t k = 0; k < ax.len; ++k) mx = std::max(mx, px[base + k * ax.inner]);
            double denom = 0.0;
            for (std::size_t k = 0; k < ax.len; ++k) {
                const double e = std::exp(px[base + k * ax.inner] - mx);
                y[base + k * ax.inner] = e;
                denom += e;
            }
            for (std::size_t k = 0; k < ax.len; ++k) y[base + k * ax.inner] /= denom;
        }
    }
    Tensor out = make_output(x.shape(), std::move(y), tracking({&x}));
    if (out.requires_grad()) {
        GradTape::active()->record([x, out, ax]() mutable {
            if (!out.grad_allocated()) return;
            const double* gy = out.grad().data();
            const double* py = out.values().data();
            double* gx = x.grad().data();
            for (std::size_t o = 0; o < ax.outer; ++o) {
                for (std::size_t i = 0; i < ax.inner; ++i) {
                    const std::size_t base = o * ax.len * ax.inner + i;
                    double dot = 0.0;
                    for (std::size_t k = 0; k < ax.len; ++k) {
                        const std::size_t p = base + k * ax.inner;
                        dot += gy[p] * py[p];
                    }
                    for (std::size_t k = 0; k < ax.len; ++k) {
                        const std::size_t p = base + k * ax.inner;
                        gx[p] += py[p] * (gy[p] - dot);
                    }
                }
            }
        });
    }
    return out;
}

Tensor log_softmax(Tensor x, std::size_t axis) {
    check_finite(x, "log_softmax");
    const AxisSplit ax = split_axis(x.shape(), axis);
    std::vector<double> y(x.size());
    const double* px = x.values().data();
    for (std::size_t o = 0; o < ax.outer; ++o) {
        for (std::size_t i = 0; i < ax.inner; ++i) {
            const std::size_t base = o * ax.len * ax.inner + i;
            double mx = -std::numeric_limits<double>::infinity();
            for (std::size_t k = 0; k < ax.len; ++k) mx = std::max(mx, px[base + k * ax.inner]);
            double denom = 0.0;
            for (std::size_t k = 0; k < ax.len; ++k) denom += std::exp(px[base + k * ax.inner] - mx);
            const double lse = mx + std::log(denom);
            for (std::size_t k = 0; k < ax.len; ++k) {
                const std::size_t p = base + k * ax.inner;
                y[p] = px[p] - lse;
            }
        }
    }
    Tensor out = make_output(x.shape(), std::move(y), tracking({&x}));
    if (out.requires_grad()) {
        GradTape::active()->record([x, out, ax]() mutable {
            if (!out.grad_allocated()) return;
            const double* gy = out.grad().data();
            const double* py = out.values().data();  // log-probs
            double* gx = x.grad().data();
            for (std::size_t o = 0; o < ax.outer; ++o) {
                for (std::size_t i = 0; i < ax.inner; ++i) {
                    const std::size_t base = o * ax.len * ax.inner + i;
                    double gsum = 0.0;
                    for (std::size_t k = 0; k < ax.len; ++k) gsum += gy[base + k * ax.inner];
                    for (std::size_t k = 0; k < ax.len; ++k) {
                        const std::size_t p = base + k * ax.inner;
                        gx[p] += gy[p] - std::exp(py[p]) * gsum;
                    }
                }
            }
        });
    }
    return out;
}

Tensor sigmoid(Tensor x) {
    return elementwise_unary(
        x,
        [](double v) { return v >= 0.0 ? 1.0 / (1.0 + std::exp(-v)) : std::exp(v) / (1.0 + std::exp(v)); },
        [](double, double y) { return y * (1.0 - y); });
}

Tensor log(Tensor x) {
    return elementwise_unary(x, [](double v) { return std::log(v); },
                             [](double v, double) { return 1.0 / v; });
}

Tensor gelu(Tensor x) {
    constexpr double inv_sqrt2 = std::numbers::sqrt2 / 2.0;
    constexpr double inv_sqrt2pi = 0.3989422804014326779;
    return elementwise_unary(
        x,
        [](double v) { return 0.5 * v * (1.0 + std::erf(v * inv_sqrt2)); },
        [](double v, double) {
            const double cdf = 0.5 * (1.0 + std::erf(v * inv_sqrt2));
            const double pdf = inv_sqrt2pi * std::exp(-0.5 * v * v);
            return cdf + v * pdf;
        });
}

Tensor clamp(Tensor x, double lo, double hi) {
    return elementwise_unary(x, [lo, hi](double v) { return std::min(std::max(v, lo), hi); },
                             [lo, hi](double v, double) { return (v >= lo && v <= hi) ? 1.0 : 0.0; });
}

Tensor sum(Tensor x) {
    double s = 0.0;
    for (double v : x.values()) s += v;
    Tensor out = make_output({}, {s}, tracking({&x}));
    if (out.requires_grad()) {
        GradTape::active()->record([x, out]() mutable {
            if (!out.grad_allocated()) return;
            const double g = out.grad()[0];
            double* gx = x.grad().data();
            for (std::size_t i = 0; i < x.size(); ++i) gx[i] += g;
        });
    }
    return out;
}

Tensor concat_rows(Tensor a, Tensor b) {
    if (a.rank() != 2 || b.rank() != 2 || a.cols() != b.cols()) {
        throw ShapeError("concat_rows: shapes " + shape_str(a.shape()) + " and " +
                         shape_str(b.shape()) + " incompatible");
    }
    const std::size_t c = a.cols();
    std::vector<double> y;
    y.reserve(a.size() + b.size());
    y.insert(y.end(), a.values().begin(), a.values().end());
    y.insert(y.end(), b.values().begin(), b.values().end());
    Tensor out = make_output({a.rows() + b.rows(), c}, std::move(y), tracking({&a, &b}));
    if (out.requires_grad()) {
        GradTape::active()->record([a, b, out]() mutable {
            if (!out.grad_allocated()) return;
            const double* gy = out.grad().data();
            if (a.requires_grad()) {
                double* ga = a.grad().data();
                for (std::size_t i = 0; i < a.size(); ++i) ga[i] += gy[i];
            }
            if (b.requires_grad()) {
                double* gb = b.grad().data();
                const double* gtail = gy + a.size();
                for (std::size_t i = 0; i < b.size(); ++i) gb[i] += gtail[i];
            }
        });
    }
    return out;
}

Tensor concat_cols(const std::vector<Tensor>& parts) {
    if (parts.empty()) throw ShapeError("concat_cols: no inputs");
    const std::size_t r = parts[0].rows();
    std::size_t total = 0;
    bool track = false;
    for (const Tensor& p : parts) {
        if (p.rows() != r) {
            throw ShapeError("concat_cols: row mismatch " + shape_str(p.shape()) + " vs " +
                             std::to_string(r) + " rows");
        }
        total += p.cols();
        track = track || (GradTape::active() && p.requires_grad());
    }
    std::vector<double> y(r * total);
    std::size_t col0 = 0;
    for (const Tensor& p : parts) {
        const std::size_t c = p.cols();
        for (std::size_t i = 0; i < r; ++i)
            for (std::size_t j = 0; j < c; ++j) y[i * total + col0 + j] = p.values()[i * c + j];
        col0 += c;
    }
    Tensor out = make_output({r, total}, std::move(y), track);
    if (out.requires_grad()) {
        GradTape::active()->record([parts, out]() mutable {
            if (!out.grad_allocated()) return;
            const std::size_t r = out.rows(), total = out.cols();
            const double* gy = out.grad().data();
            std::size_t col0 = 0;
            for (Tensor p : parts) {
                const std::size_t c = p.cols();
                if (p.requires_grad()) {
                    double* gp = p.grad().data();
                    for (std::size_t i = 0; i < r; ++i)
                        for (std::size_t j = 0; j < c; ++j) gp[i * c + j] += gy[i * total + col0 + j];
                }
                col0 += c;
            }
        });
    }
    return out;
}

Tensor slice_rows(Tensor x, std::size_t r0, std::size_t r1) {
    const std::size_t r = x.rows(), c = x.cols();
    if (r0 >= r1 || r1 > r) {
        throw ShapeError("slice_rows: range [" + std::to_string(r0) + "," + std::to_string(r1) +
                         ") invalid for " + shape_str(x.shape()));
    }
    std::vector<double> y(x.values().begin() + r0 * c, x.values().begin() + r1 * c);
    Tensor out = make_output({r1 - r0, c}, std::move(y), tracking({&x}));
    if (out.requires_grad()) {
        GradTape::active()->record([x, out, r0]() mutable {
            if (!out.grad_allocated()) return;
            const std::size_t c = x.cols();
            double* gx = x.grad().data() + r0 * c;
            const double* gy = out.grad().data();
            for (std::size_t i = 0; i < out.size(); ++i) gx[i] += gy[i];
        });
    }
    return out;
}

Tensor select_cols(Tensor x, const std::vector<std::size_t>& idx) {
    const std::size_t r = x.rows(), c = x.cols(), n = idx.size();
    for (std::size_t j : idx) {
        if (j >= c) throw ShapeError("select_cols: index " + std::to_string(j) + " out of range");
    }
    std::vector<double> y(r * n);
    for (std::size_t i = 0; i < r; ++i)
        for (std::size_t k = 0; k < n; ++k) y[i * n + k] = x.values()[i * c + idx[k]];
    Tensor out = make_output({r, n}, std::move(y), tracking({&x}));
    if (out.requires_grad()) {
        GradTape::active()->record([x, out, idx]() mutable {
            if (!out.grad_allocated()) return;
            const std::size_t r = x.rows(), c = x.cols(), n = idx.size();
            double* gx = x.grad().data();
            const double* gy = out.grad().data();
            for (std::size_t i = 0; i < r; ++i)
                for (std::size_t k = 0; k < n; ++k) gx[i * c + idx[k]] += gy[i * n + k];
        });
    }
    return out;
}

Tensor col_segment_sum(Tensor x, const std::vector<std::size_t>& seg, std::size_t n_seg) {
    const std::size_t r = x.rows(), c = x.cols();
    if (seg.size() != c) throw ShapeError("col_segment_sum: segment list length != column count");
    for (std::size_t s : seg) {
        if (s >= n_seg) throw ShapeError("col_segment_sum: segment id out of range");
    }
    std::vector<double> y(r * n_seg, 0.0);
    for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) y[i * n_seg + seg[j]] += x.values()[i * c + j];
    Tensor out = make_output({r, n_seg}, std::move(y), tracking({&x}));
    if (out.requires_grad()) {
        GradTape::active()->record([x, out, seg, n_seg]() mutable {
            if (!out.grad_allocated()) return;
            const std::size_t r = x.rows(), c = x.cols();
            double* gx = x.grad().data();
            const double* gy = out.grad().data();
            for (std::size_t i = 0; i < r; ++i)
                for (std::size_t j = 0; j < c; ++j) gx[i * c + j] += gy[i * n_seg + seg[j]];
        });
    }
    return out;
}

Tensor col_segment_max(Tensor x, const std::vector<std::size_t>& seg, std::size_t n_seg) {
    const std::size_t r = x.rows(), c = x.cols();
    if (seg.size() != c) throw ShapeError("col_segment_max: segment list length != column count");
    std::vector<char> seen(n_seg, 0);
    for (std::size_t s : seg) {
        if (s >= n_seg) throw ShapeError("col_segment_max: segment id out of range");
        seen[s] = 1;
    }
    for (std::size_t s = 0; s < n_seg; ++s) {
        if (!seen[s]) throw ShapeError("col_segment_max: empty segment " + std::to_string(s));
    }
    std::vector<double> y(r * n_seg, -std::numeric_limits<double>::infinity());
    // argmax column per (row, segment); first maximum wins so backward is deterministic
    auto argmax = std::make_shared<std::vector<std::size_t>>(r * n_seg, 0);
    for (std::size_t i = 0; i < r; ++i) {
        for (std::size_t j = 0; j < c; ++j) {
            const double v = x.values()[i * c + j];
            const std::size_t p = i * n_seg + seg[j];
            if (v > y[p]) {
                y[p] = v;
                (*argmax)[p] = j;
            }
        }
    }
    Tensor out = make_output({r, n_seg}, std::move(y), tracking({&x}));
    if (out.requires_grad()) {
        GradTape::active()->record([x, out, argmax, n_seg]() mutable {
            if (!out.grad_allocated()) return;
            const std::size_t r = x.rows(), c = x.cols();
            double* gx = x.grad().data();
            const double* gy = out.grad().data();
            for (std::size_t i = 0; i < r; ++i)
                for (std::size_t s = 0; s < n_seg; ++s)
                    gx[i * c + (*argmax)[i * n_seg + s]] += gy[i * n_seg + s];
        });
    }
    return out;
}

Tensor reshape(Tensor x, Shape shape) {
    if (shape_size(shape) != x.size()) {
        throw ShapeError("reshape: " + shape_str(x.shape()) + " to " + shape_str(shape) +
                         " changes element count");
    }
    Tensor out = make_output(std::move(shape), x.values(), tracking({&x}));
    if (out.requires_grad()) {
        GradTape::active()->record([x, out]() mutable {
            if (!out.grad_allocated()) return;
            double* gx = x.grad().data();
            const double* gy = out.grad().data();
            for (std::size_t i = 0; i < x.size(); ++i) gx[i] += gy[i];
        });
    }
    return out;
}

Tensor layer_norm(Tensor x, Tensor gain, Tensor bias, double eps) {
    const std::size_t r = x.rows(), c = x.cols();
    if (gain.rank() != 1 || gain.shape()[0] != r || bias.rank() != 1 || bias.shape()[0] != r) {
        throw ShapeError("layer_norm: gain/bias must be rank-1 of length " + std::to_string(r));
    }
    std::vector<double> y(r * c);
    auto mean = std::make_shared<std::vector<double>>(c);
    auto inv_std = std::make_shared<std::vector<double>>(c);
    for (std::size_t j = 0; j < c; ++j) {
        double m = 0.0;
        for (std::size_t i = 0; i < r; ++i) m += x.values()[i * c + j];
        m /= static_cast<double>(r);
        double var = 0.0;
        for (std::size_t i = 0; i < r; ++i) {
            const double d = x.values()[i * c + j] - m;
            var += d * d;
        }
        var /= static_cast<double>(r);
        const double is = 1.0 / std::sqrt(var + eps);
        (*mean)[j] = m;
        (*inv_std)[j] = is;
        for (std::size_t i = 0; i < r; ++i) {
            y[i * c + j] = gain.values()[i] * (x.values()[i * c + j] - m) * is + bias.values()[i];
        }
    }
    Tensor out = make_output(x.shape(), std::move(y), tracking({&x, &gain, &bias}));
    if (out.requires_grad()) {
        GradTape::active()->record([x, gain, bias, out, mean, inv_std]() mutable {
            if (!out.grad_allocated()) return;
            const std::size_t r = x.rows(), c = x.cols();
            const double* gy = out.grad().data();
            const double* px = x.values().data();
            for (std::size_t j = 0; j < c; ++j) {
                const double m = (*mean)[j];
                const double is = (*inv_std)[j];
                // per-column sums for the normalization backward
                double sum_gxh = 0.0, sum_gxh_xh = 0.0;
                for (std::size_t i = 0; i < r; ++i) {
                    const double xh = (px[i * c + j] - m) * is;
                    const double gxh = gy[i * c + j] * gain.values()[i];
                    sum_gxh += gxh;
                    sum_gxh_xh += gxh * xh;
                }
                const double n = static_cast<double>(r);
                if (x.requires_grad()) {
                    double* gx = x.grad().data();
                    for (std::size_t i = 0; i < r; ++i) {
                        const double xh = (px[i * c + j] - m) * is;
                        const double gxh = gy[i * c + j] * gain.values()[i];
                        gx[i * c + j] += is * (gxh - sum_gxh / n - xh * sum_gxh_xh / n);
                    }
                }
                if (gain.requires_grad()) {
                    double* gg = gain.grad().data();
                    for (std::size_t i = 0; i < r; ++i) {
                        const double xh = (px[i * c + j] - m) * is;
                        gg[i] += gy[i * c + j] * xh;
                    }
                }
                if (bias.requires_grad()) {
                    double* gb = bias.grad().data();
                    for (std::size_t i = 0; i < r; ++i) gb[i] += gy[i * c + j];
                }
            }
        });
    }
    return out;
}

// ---- linear layer ----------------------------------------------------------

LinearLayer LinearLayer::init(std::size_t out_dim, std::size_t in_dim, Rng& rng) {
    const double s = std::sqrt(1.0 / static_cast<double>(in_dim));
    std::vector<double> w(out_dim * in_dim);
    for (double& v : w) v = rng.uniform(-s, s);
    std::vector<double> b(out_dim);
    for (double& v : b) v = rng.uniform(-s, s);
    LinearLayer layer;
    layer.weight = Tensor::from({out_dim, in_dim}, std::move(w), true);
    layer.bias = Tensor::from({out_dim}, std::move(b), true);
    return layer;
}

Tensor linear_apply(const LinearLayer& layer, Tensor x) {
    const std::size_t in = layer.in_dim();
    if (x.rank() == 1) {
        if (x.shape()[0] != in) {
            throw ShapeError("linear_apply: input " + shape_str(x.shape()) + " vs weight " +
                             shape_str(layer.weight.shape()));
        }
        Tensor col = reshape(x, {in, 1});
        Tensor y = add_bias(matmul(layer.weight, col), layer.bias);
        return reshape(y, {layer.out_dim()});
    }
    if (x.rank() != 2 || x.rows() != in) {
        throw ShapeError("linear_apply: input " + shape_str(x.shape()) + " vs weight " +
                         shape_str(layer.weight.shape()));
    }
    return add_bias(matmul(layer.weight, x), layer.bias);
}

// ---- parameter store --------------------------------------------------------

Tensor ParamStore::add(const std::string& name, Tensor t) {
    if (name.find_first_of(" \t\n") != std::string::npos) {
        throw ConfigError("parameter name contains whitespace: '" + name + "'");
    }
    if (find(name).defined()) throw ConfigError("duplicate parameter name: " + name);
    entries_.emplace_back(name, t);
    return t;
}

LinearLayer ParamStore::add_linear(const std::string& name, std::size_t out_dim, std::size_t in_dim,
                                   Rng& rng) {
    LinearLayer layer = LinearLayer::init(out_dim, in_dim, rng);
    add(name + ".weight", layer.weight);
    add(name + ".bias", layer.bias);
    return layer;
}

Tensor ParamStore::find(const std::string& name) const {
    for (const auto& [n, t] : entries_) {
        if (n == name) return t;
    }
    return Tensor();
}

std::size_t ParamStore::total_values() const {
    std::size_t n = 0;
    for (const auto& [name, t] : entries_) n += t.size();
    return n;
}

void ParamStore::zero_grads() {
    for (auto& [name, t] : entries_) t.zero_grad();
}

// ---- checkpoints ---------------------------------------------------------

namespace {
constexpr const char* kCheckpointMagic = "pcseg-checkpoint v1";
}

void save_checkpoint(const std::string& path, const ParamStore& params, const std::string& meta) {
    std::ofstream os(path);
    if (!os) throw IoError("cannot open checkpoint for writing: " + path);
    os << kCheckpointMagic << "\n";
    std::string meta_line = meta.empty() ? std::string("{}") : meta;
    if (meta_line.find('\n') != std::string::npos) {
        throw ConfigError("checkpoint meta must be a single line");
    }
    os << "meta " << meta_line << "\n";
    char buf[64];
    for (const auto& [name, t] : params.entries()) {
        os << "tensor " << name << " " << t.rank();
        for (std::size_t d : t.shape()) os << " " << d;
        os << "\n";
        for (std::size_t i = 0; i < t.size(); ++i) {
            // hex float round-trips bit-exactly through strtod
            std::snprintf(buf, sizeof(buf), "%a", t.values()[i]);
            os << buf << (i + 1 == t.size() ? "" : " ");
        }
        os << "\n";
    }
    os << "end\n";
    if (!os) throw IoError("write failed for checkpoint: " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw IoError("cannot open checkpoint: " + path);
    std::string line;
    if (!std::getline(is, line) || line != kCheckpointMagic) {
        throw DataError("bad checkpoint header in " + path);
    }
    Checkpoint ckpt;
    if (!std::getline(is, line) || line.rfind("meta ", 0) != 0) {
        throw DataError("missing meta line in " + path);
    }
    ckpt.meta = line.substr(5);
    while (std::getline(is, line)) {
        if (line == "end") return ckpt;
        std::istringstream header(line);
        std::string tag, name;
        std::size_t rank = 0;
        header >> tag >> name >> rank;
        if (tag != "tensor" || header.fail()) throw DataError("bad tensor header in " + path + ": " + line);
        Shape shape(rank);
        for (std::size_t i = 0; i < rank; ++i) {
            header >> shape[i];
            if (header.fail()) throw DataError("bad shape in " + path + " for " + name);
        }
        if (!std::getline(is, line)) throw DataError("missing values for " + name + " in " + path);
        std::vector<double> values;
        values.reserve(shape_size(shape));
        const char* p = line.c_str();
        char* next = nullptr;
        while (*p) {
            const double v = std::strtod(p, &next);
            if (next == p) break;
            values.push_back(v);
            p = next;
        }
        if (values.size() != shape_size(shape)) {
            throw DataError("value count mismatch for " + name + " in " + path);
        }
        ckpt.tensors.emplace_back(name, Tensor::from(std::move(shape), std::move(values)));
    }
    throw DataError("truncated checkpoint (no end marker): " + path);
}

void restore_params(ParamStore& params, const Checkpoint& ckpt) {
    for (const auto& [name, t] : params.entries()) {
        Tensor target = t;  // handle shares the underlying storage
        bool found = false;
        for (const auto& [cname, ct] : ckpt.tensors) {
            if (cname != name) continue;
            if (ct.shape() != target.shape()) {
                throw DataError("checkpoint shape mismatch for " + name + ": " +
                                shape_str(ct.shape()) + " vs " + shape_str(target.shape()));
            }
            target.values() = ct.values();
            found = true;
            break;
        }
        if (!found) throw DataError("checkpoint missing parameter: " + name);
    }
}

}  // namespace pcseg
