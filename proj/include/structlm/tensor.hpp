#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#ifndef STRUCTLM_REAL
#define STRUCTLM_REAL double
#endif

namespace structlm {

using real = STRUCTLM_REAL;
using Shape = std::vector<std::size_t>;

std::string shape_str(const Shape& shape);

// Raised on inconsistent tensor shapes; the message names every shape involved.
class shape_error : public std::invalid_argument {
  public:
    using std::invalid_argument::invalid_argument;
};

// Raised on an out-of-range index (embedding id, class target, row).
class index_error : public std::out_of_range {
  public:
    using std::out_of_range::out_of_range;
};

// Raised when an operation is called outside its contract.
class contract_error : public std::logic_error {
  public:
    using std::logic_error::logic_error;
};

namespace detail {

struct Node {
    Shape shape;
    std::vector<real> data;
    std::vector<real> grad;  // empty until needed
    bool requires_grad = false;
    std::vector<std::shared_ptr<Node>> inputs;
    // Propagates this node's grad into its inputs' grads.
    std::function<void(Node&)> backward;

    void ensure_grad() {
        if (grad.size() != data.size()) grad.assign(data.size(), real{0});
    }
};

}  // namespace detail

// A dense row-major tensor of rank 0..2 that records the operations applied
// to it so that `backward` can compute gradients. Copies share storage.
class Tensor {
  public:
    Tensor() = default;

    static Tensor zeros(Shape shape, bool requires_grad = false);
    static Tensor full(Shape shape, real value, bool requires_grad = false);
    static Tensor from(Shape shape, std::vector<real> values, bool requires_grad = false);
    static Tensor scalar(real value, bool requires_grad = false);

    bool defined() const { return node_ != nullptr; }
    const Shape& shape() const { return node_->shape; }
    std::size_t size() const { return node_->data.size(); }
    std::size_t rank() const { return node_->shape.size(); }
    // Leading dimension for rank 2, 1 for rank <= 1.
    std::size_t rows() const;
    // Trailing dimension, 1 for rank 0.
    std::size_t cols() const;

    std::span<real> data() { return node_->data; }
    std::span<const real> data() const { return node_->data; }
    real& at(std::size_t i) { return node_->data[i]; }
    real at(std::size_t i) const { return node_->data[i]; }
    real& at(std::size_t r, std::size_t c) { return node_->data[r * cols() + c]; }
    real at(std::size_t r, std::size_t c) const { return node_->data[r * cols() + c]; }
    real item() const;

    bool requires_grad() const { return node_->requires_grad; }
    void set_requires_grad(bool value) { node_->requires_grad = value; }
    bool has_grad() const { return node_->grad.size() == node_->data.size() && !node_->data.empty(); }
    // Gradient storage; allocated (zeroed) on first access.
    std::span<real> grad();
    std::span<const real> grad() const;
    void zero_grad();

    // Deep copy of data (and grad when present) with no graph history.
    Tensor clone() const;
    // Copy of the data without grad or graph history: gradients stop here.
    Tensor detach() const;

    bool same_node(const Tensor& other) const { return node_ == other.node_; }

    // Internal: used by operation implementations.
    explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}
    const std::shared_ptr<detail::Node>& node() const { return node_; }

  private:
    std::shared_ptr<detail::Node> node_;
};

// ---------------------------------------------------------------------------
// Differentiable operations. Rank-2 tensors are [rows x cols]; a rank-1
// tensor of length n is accepted wherever a [1 x n] row is.

// [m x k] x [k x n] -> [m x n]
Tensor matmul(const Tensor& a, const Tensor& b);
// [m x k] x [n x k]^T -> [m x n]
Tensor matmul_nt(const Tensor& a, const Tensor& b);
// Elementwise sum of equal shapes.
Tensor add(const Tensor& a, const Tensor& b);
// x [m x n] + bias [n] broadcast over rows.
Tensor add_bias(const Tensor& x, const Tensor& bias);
// x W + b
Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias);
Tensor scale(const Tensor& x, real factor);
// [m x n] -> [n x m]
Tensor transpose(const Tensor& x);
// Elementwise product of equal shapes.
Tensor mul(const Tensor& a, const Tensor& b);
Tensor sum(const Tensor& x);
Tensor dot(const Tensor& a, const Tensor& b);

// Rows `ids` of `table` [V x d] -> [T x d]. Backward sums into repeated rows.
Tensor embedding_gather(const Tensor& table, std::span<const std::int64_t> ids);
// Row-wise standardization over the last axis followed by gamma * x + beta.
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, real eps);
// GELU, tanh approximation: 0.5 x (1 + tanh(sqrt(2/pi) (x + 0.044715 x^3))).
Tensor gelu(const Tensor& x);
// Negative-control hook for gradient checks: the GELU backward rule multiplies
// the gradient it passes on by `s`. 1 is the correct rule.
void set_gelu_backward_scale(real s);
// Inverted dropout. p == 0 returns x unchanged.
Tensor dropout(const Tensor& x, real p, std::mt19937_64& rng);

// Multi-head scaled dot-product self-attention over already-projected
// q, k, v [T x d]. Keys with key_valid[j] == 0 receive no attention weight.
Tensor multi_head_attention(const Tensor& q, const Tensor& k, const Tensor& v, std::size_t num_heads,
                            std::span<const std::uint8_t> key_valid);

// Mean of -log softmax(logits[t])[targets[t]] over t with targets[t] != ignore_label.
// Returns 0 (no gradient contribution) when every target is ignored.
Tensor softmax_cross_entropy(const Tensor& logits, std::span<const std::int64_t> targets,
                             std::int64_t ignore_label);

// Reverse-mode sweep from a scalar. Leaf gradients accumulate across calls;
// call zero_grad on parameters before each optimizer step.
void backward(const Tensor& loss);

// ---------------------------------------------------------------------------
// Raw kernels, exposed for tests and for the inference-only paths.
namespace kernels {
// c[m x n] += a[m x k] * b[k x n]
void gemm_nn(const real* a, const real* b, real* c, std::size_t m, std::size_t k, std::size_t n);
// c[m x n] += a[m x k] * b[n x k]^T
void gemm_nt(const real* a, const real* b, real* c, std::size_t m, std::size_t k, std::size_t n);
// c[k x n] += a[m x k]^T * b[m x n]
void gemm_tn(const real* a, const real* b, real* c, std::size_t m, std::size_t k, std::size_t n);
}  // namespace kernels

}  // namespace structlm
