#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "pcseg/errors.hpp"
#include "pcseg/rng.hpp"

namespace pcseg {

using Shape = std::vector<std::size_t>;

std::size_t shape_size(const Shape& s);
std::string shape_str(const Shape& s);

struct TensorData {
    Shape shape;
    std::vector<double> values;
    std::vector<double> grad;  // allocated on first use, same length as values
    bool requires_grad = false;
};

// Shared handle to dense row-major storage. Copies alias the same data.
// Values are treated as immutable once an op has consumed them; only leaf
// tensors (parameters, test inputs) are mutated in place, between graphs.
class Tensor {
public:
    Tensor() = default;

    static Tensor zeros(Shape shape, bool requires_grad = false);
    static Tensor full(Shape shape, double v, bool requires_grad = false);
    static Tensor from(Shape shape, std::vector<double> values, bool requires_grad = false);
    static Tensor scalar(double v);

    bool defined() const { return static_cast<bool>(d_); }
    const Shape& shape() const { return d_->shape; }
    std::size_t rank() const { return d_->shape.size(); }
    std::size_t size() const { return d_->values.size(); }
    std::size_t rows() const;
    std::size_t cols() const;

    bool requires_grad() const { return d_ && d_->requires_grad; }

    const std::vector<double>& values() const { return d_->values; }
    std::vector<double>& values() { return d_->values; }

    double value() const;  // scalar tensors only
    double at(std::size_t i, std::size_t j) const;
    double& at(std::size_t i, std::size_t j);

    // Grad accumulator; allocates zeros on first access.
    std::vector<double>& grad();
    bool grad_allocated() const { return d_ && !d_->grad.empty(); }
    void zero_grad();

    std::shared_ptr<TensorData> data_ptr() const { return d_; }

private:
    explicit Tensor(std::shared_ptr<TensorData> d) : d_(std::move(d)) {}
    std::shared_ptr<TensorData> d_;
};

// Reverse-mode tape. Constructing one makes it the active tape for the
// current thread; ops record backward steps onto it while any input
// requires grad. One tape per forward pass; backward() consumes it.
class GradTape {
public:
    GradTape();
    ~GradTape();
    GradTape(const GradTape&) = delete;
    GradTape& operator=(const GradTape&) = delete;

    static GradTape* active();

    void record(std::function<void()> step);
    std::size_t step_count() const { return steps_.size(); }

    // Seeds d(loss)/d(loss) = 1 and runs recorded steps in reverse.
    // The tape is empty afterwards.
    void backward(const Tensor& loss);

private:
    std::vector<std::function<void()>> steps_;
    GradTape* prev_ = nullptr;
};

// Runs backward on the active tape. Usage error if none is active.
void backward(const Tensor& loss);

// ---- differentiable ops ------------------------------------------------

Tensor matmul(Tensor a, Tensor b);
Tensor transpose(Tensor x);
Tensor add(Tensor a, Tensor b);
Tensor sub(Tensor a, Tensor b);
Tensor mul(Tensor a, Tensor b);
Tensor scale(Tensor x, double c);

// x: [r x c], bias: [r]; adds bias to every column.
Tensor add_bias(Tensor x, Tensor bias);

// Slices along `axis` are normalized to sum to 1 (max-subtracted).
Tensor softmax(Tensor x, std::size_t axis);
Tensor log_softmax(Tensor x, std::size_t axis);

Tensor sigmoid(Tensor x);
Tensor log(Tensor x);
Tensor gelu(Tensor x);

// Pass-through gradient inside [lo, hi], zero where clamped.
Tensor clamp(Tensor x, double lo, double hi);

Tensor sum(Tensor x);  // scalar

// [r1 x c] over [r2 x c] -> [(r1+r2) x c]
Tensor concat_rows(Tensor a, Tensor b);
// [r x c1], [r x c2], ... side by side -> [r x (c1+c2+...)]
Tensor concat_cols(const std::vector<Tensor>& parts);
// Rows [r0, r1) of a rank-2 tensor.
Tensor slice_rows(Tensor x, std::size_t r0, std::size_t r1);
// y[:, k] = x[:, idx[k]]. Indices may repeat (broadcast/gather).
Tensor select_cols(Tensor x, const std::vector<std::size_t>& idx);
// y[:, s] = sum of columns j with seg[j] == s. Segments in [0, n_seg).
Tensor col_segment_sum(Tensor x, const std::vector<std::size_t>& seg, std::size_t n_seg);
// y[r, s] = max over columns j with seg[j] == s. Every segment must be nonempty.
Tensor col_segment_max(Tensor x, const std::vector<std::size_t>& seg, std::size_t n_seg);

Tensor reshape(Tensor x, Shape shape);

// Per-column normalization over the channel (row) axis, learned gain/bias [r].
Tensor layer_norm(Tensor x, Tensor gain, Tensor bias, double eps = 1e-5);

// ---- linear layer ------------------------------------------------------

struct LinearLayer {
    Tensor weight;  // [out_dim x in_dim]
    Tensor bias;    // [out_dim]

    std::size_t in_dim() const { return weight.shape()[1]; }
    std::size_t out_dim() const { return weight.shape()[0]; }

    // Uniform init in [-s, s], s = sqrt(1/in_dim).
    static LinearLayer init(std::size_t out_dim, std::size_t in_dim, Rng& rng);
};

// weight.x + bias. x is [in] -> [out], or [in x n] -> [out x n] with the
// bias broadcast over columns (columns are points/tokens throughout).
Tensor linear_apply(const LinearLayer& layer, Tensor x);

// ---- parameter store & checkpoints --------------------------------------

class ParamStore {
public:
    Tensor add(const std::string& name, Tensor t);
    LinearLayer add_linear(const std::string& name, std::size_t out_dim, std::size_t in_dim, Rng& rng);

    const std::vector<std::pair<std::string, Tensor>>& entries() const { return entries_; }
    Tensor find(const std::string& name) const;  // undefined Tensor if absent
    std::size_t total_values() const;
    void zero_grads();

private:
    std::vector<std::pair<std::string, Tensor>> entries_;
};

// Versioned text checkpoint. Values are written as hex floats, so the
// round-trip is bit-exact.
struct Checkpoint {
    std::string meta;  // single-line payload, typically JSON
    std::vector<std::pair<std::string, Tensor>> tensors;
};

void save_checkpoint(const std::string& path, const ParamStore& params, const std::string& meta);
Checkpoint load_checkpoint(const std::string& path);
// Copies values into matching names; shape mismatch or missing name throws.
void restore_params(ParamStore& params, const Checkpoint& ckpt);

}  // namespace pcseg
