#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace diwa {

class Rng;

struct TensorImpl {
    std::vector<int> shape;
    std::vector<double> data;
    std::vector<double> grad;  // empty until backward touches it
    bool requires_grad = false;
};

/// Dense double-precision tensor with value semantics over a shared buffer.
/// Row-major layout; image tensors use (batch, channels, height, width).
class Tensor {
public:
    Tensor() = default;

    static Tensor zeros(std::vector<int> shape, bool requires_grad = false);
    static Tensor full(std::vector<int> shape, double value, bool requires_grad = false);
    static Tensor from(std::vector<int> shape, std::vector<double> data,
                       bool requires_grad = false);
    static Tensor randn(std::vector<int> shape, Rng& rng, bool requires_grad = false);
    static Tensor scalar(double v);

    bool defined() const { return impl_ != nullptr; }
    const std::vector<int>& shape() const { return impl_->shape; }
    int dim(int i) const { return impl_->shape[static_cast<size_t>(i)]; }
    int ndim() const { return static_cast<int>(impl_->shape.size()); }
    int64_t numel() const { return static_cast<int64_t>(impl_->data.size()); }

    std::span<double> values() { return impl_->data; }
    std::span<const double> values() const { return impl_->data; }
    double value() const;  // numel()==1 only

    bool requires_grad() const { return impl_->requires_grad; }
    void set_requires_grad(bool v) { impl_->requires_grad = v; }

    /// Gradient buffer; empty span until a backward pass has reached this
    /// tensor. Same shape as data when present.
    std::span<const double> grad() const { return impl_->grad; }
    std::span<double> grad_mut() { return impl_->grad; }
    void zero_grad();

    /// Detached deep copy (fresh buffer, no grad, requires_grad off).
    Tensor clone_detached() const;

    TensorImpl* impl() const { return impl_.get(); }
    const std::shared_ptr<TensorImpl>& handle() const { return impl_; }

    static int64_t numel_of(const std::vector<int>& shape);

private:
    explicit Tensor(std::shared_ptr<TensorImpl> impl) : impl_(std::move(impl)) {}
    std::shared_ptr<TensorImpl> impl_;
};

/// Ordered record of executed ops. Backward replays the record in exact
/// reverse execution order, accumulating into the grad buffer of every
/// tensor that requires grad. Not shareable across threads.
class Tape {
public:
    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    /// RAII activation: ops executed while a scope is alive are recorded
    /// on its tape. Scopes nest; the innermost wins.
    class Scope {
    public:
        explicit Scope(Tape* t);
        ~Scope();
        Scope(const Scope&) = delete;
        Scope& operator=(const Scope&) = delete;

    private:
        Tape* prev_;
    };

    static Tape* active();

    void record(const Tensor& out, std::function<void()> backward_fn);
    size_t size() const { return ops_.size(); }
    void clear();

    /// Seeds d(loss)/d(loss)=1 and replays recorded ops in reverse. Grads of
    /// intermediate results (op outputs on this tape) are reset first, so a
    /// second call adds exactly one more gradient to each leaf.
    void backward(const Tensor& loss);

private:
    std::vector<std::function<void()>> ops_;
    std::vector<std::shared_ptr<TensorImpl>> outputs_;
};

// ---- differentiable ops -------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double c);

/// x * sigmoid(x), elementwise.
Tensor silu(const Tensor& x);

/// Cross-correlation (no kernel flip), stride 1.
/// input [B,Cin,H,W], weight [Cout,Cin,k,k], bias [Cout].
/// Output spatial size H' = H + 2*padding - k + 1.
Tensor conv2d(const Tensor& input, const Tensor& weight, const Tensor& bias, int padding);

/// input [B,F] * weight[G,F]^T + bias[G] -> [B,G].
Tensor linear(const Tensor& input, const Tensor& weight, const Tensor& bias);

enum class Resample { Down, Up };

/// Down: 2x2 mean pooling (requires even H,W). Up: nearest-neighbor
/// duplication. Up after Down is the identity on constant images.
Tensor resample2x(const Tensor& x, Resample direction);

/// Per-(sample, group) normalization over C/groups channels and all spatial
/// positions, then per-channel affine. gamma,beta have shape [C].
Tensor group_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, int groups);

/// Inverted dropout: keep with probability 1-rate and scale kept values by
/// 1/(1-rate). Identity in eval mode or at rate 0 (no draws consumed).
Tensor dropout(const Tensor& x, double rate, bool training, Rng& rng);

/// Concatenate along `axis`; all other dims must match.
Tensor concat(std::span<const Tensor> parts, int axis);

/// x [B,C,H,W] + bias [B,C] broadcast over the spatial dims.
Tensor add_channel_bias(const Tensor& x, const Tensor& bias);

Tensor sum(const Tensor& x);

/// Mean absolute error over all elements (scalar).
Tensor l1_loss(const Tensor& a, const Tensor& b);

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }
inline Tensor operator*(const Tensor& a, double c) { return scale(a, c); }
inline Tensor operator*(double c, const Tensor& a) { return scale(a, c); }

// ---- gradient verification ----------------------------------------------

/// Compares the backward() gradient of fn at `point` against central finite
/// differences, coordinate by coordinate. fn must be deterministic; it is
/// re-evaluated with point's buffer perturbed in place. Returns the max of
/// |analytic - numeric| / max(|analytic|, |numeric|, 1) over coordinates;
/// +inf if any evaluation is non-finite. Never throws on divergence.
double finite_diff_check(const std::function<Tensor(const Tensor&)>& fn, const Tensor& point,
                         double eps);

}  // namespace diwa
