#include "structlm/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>
#include <unordered_set>

namespace structlm {

std::string shape_str(const Shape& shape) {
    std::ostringstream out;
    out << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) out << " x ";
        out << shape[i];
    }
    out << ']';
    return out.str();
}

namespace {

using detail::Node;
using NodePtr = std::shared_ptr<Node>;

std::size_t product(const Shape& shape) {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

void check_shape(const Shape& shape) {
    if (shape.size() > 2) throw shape_error("tensors are limited to rank 2, got " + shape_str(shape));
    for (std::size_t d : shape) {
        if (d == 0) throw shape_error("zero-sized dimension in " + shape_str(shape));
    }
}

NodePtr make_node(Shape shape) {
    auto node = std::make_shared<Node>();
    node->data.assign(product(shape), real{0});
    node->shape = std::move(shape);
    return node;
}

// Creates an op result wired to `inputs`; the backward rule is attached only
// when some input participates in differentiation.
NodePtr make_result(Shape shape, std::vector<NodePtr> inputs) {
    auto node = make_node(std::move(shape));
    node->requires_grad = std::any_of(inputs.begin(), inputs.end(), [](const NodePtr& n) { return n->requires_grad; });
    if (node->requires_grad) node->inputs = std::move(inputs);
    return node;
}

std::size_t rows_of(const Node& n) { return n.shape.size() == 2 ? n.shape[0] : 1; }
std::size_t cols_of(const Node& n) { return n.shape.empty() ? 1 : n.shape.back(); }

void add_into(std::vector<real>& dst, const real* src) {
    const std::size_t n = dst.size();
    real* d = dst.data();
    for (std::size_t i = 0; i < n; ++i) d[i] += src[i];
}

std::vector<real>& scratch(std::size_t n) {
    thread_local std::vector<real> buf;
    if (buf.size() < n) buf.resize(n);
    return buf;
}

// b [rows x cols] -> out [cols x rows]
void transpose(const real* b, real* out, std::size_t rows, std::size_t cols) {
    for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t c = 0; c < cols; ++c) out[c * rows + r] = b[r * cols + c];
    }
}

}  // namespace

// ---------------------------------------------------------------------------
// Kernels

namespace kernels {

void gemm_nn(const real* a, const real* b, real* c, std::size_t m, std::size_t k, std::size_t n) {
    std::size_t i = 0;
    for (; i + 4 <= m; i += 4) {
        real* __restrict c0 = c + i * n;
        real* __restrict c1 = c0 + n;
        real* __restrict c2 = c1 + n;
        real* __restrict c3 = c2 + n;
        const real* a0 = a + i * k;
        for (std::size_t p = 0; p < k; ++p) {
            const real* __restrict bp = b + p * n;
            const real x0 = a0[p], x1 = a0[k + p], x2 = a0[2 * k + p], x3 = a0[3 * k + p];
            for (std::size_t j = 0; j < n; ++j) {
                const real bj = bp[j];
                c0[j] += x0 * bj;
                c1[j] += x1 * bj;
                c2[j] += x2 * bj;
                c3[j] += x3 * bj;
            }
        }
    }
    for (; i < m; ++i) {
        real* __restrict ci = c + i * n;
        const real* ai = a + i * k;
        for (std::size_t p = 0; p < k; ++p) {
            const real* __restrict bp = b + p * n;
            const real x = ai[p];
            for (std::size_t j = 0; j < n; ++j) ci[j] += x * bp[j];
        }
    }
}

void gemm_nt(const real* a, const real* b, real* c, std::size_t m, std::size_t k, std::size_t n) {
    auto& bt = scratch(k * n);
    transpose(b, bt.data(), n, k);
    gemm_nn(a, bt.data(), c, m, k, n);
}

void gemm_tn(const real* a, const real* b, real* c, std::size_t m, std::size_t k, std::size_t n) {
    for (std::size_t i = 0; i < m; ++i) {
        const real* ai = a + i * k;
        const real* __restrict bi = b + i * n;
        for (std::size_t p = 0; p < k; ++p) {
            const real x = ai[p];
            if (x == real{0}) continue;
            real* __restrict cp = c + p * n;
            for (std::size_t j = 0; j < n; ++j) cp[j] += x * bi[j];
        }
    }
}

}  // namespace kernels

// ---------------------------------------------------------------------------
// Tensor

Tensor Tensor::zeros(Shape shape, bool requires_grad) { return full(std::move(shape), real{0}, requires_grad); }

Tensor Tensor::full(Shape shape, real value, bool requires_grad) {
    check_shape(shape);
    auto node = make_node(std::move(shape));
    std::fill(node->data.begin(), node->data.end(), value);
    node->requires_grad = requires_grad;
    return Tensor(node);
}

Tensor Tensor::from(Shape shape, std::vector<real> values, bool requires_grad) {
    check_shape(shape);
    if (product(shape) != values.size()) {
        throw shape_error("shape " + shape_str(shape) + " needs " + std::to_string(product(shape)) +
                          " values, got " + std::to_string(values.size()));
    }
    auto node = std::make_shared<Node>();
    node->shape = std::move(shape);
    node->data = std::move(values);
    node->requires_grad = requires_grad;
    return Tensor(node);
}

Tensor Tensor::scalar(real value, bool requires_grad) { return full({}, value, requires_grad); }

std::size_t Tensor::rows() const { return rows_of(*node_); }
std::size_t Tensor::cols() const { return cols_of(*node_); }

real Tensor::item() const {
    if (size() != 1) throw contract_error("item() on tensor of shape " + shape_str(shape()));
    return node_->data[0];
}

std::span<real> Tensor::grad() {
    node_->ensure_grad();
    return node_->grad;
}

std::span<const real> Tensor::grad() const {
    node_->ensure_grad();
    return node_->grad;
}

void Tensor::zero_grad() {
    if (!node_->grad.empty()) std::fill(node_->grad.begin(), node_->grad.end(), real{0});
}

Tensor Tensor::clone() const {
    auto node = std::make_shared<Node>();
    node->shape = node_->shape;
    node->data = node_->data;
    node->grad = node_->grad;
    node->requires_grad = node_->requires_grad;
    return Tensor(node);
}

Tensor Tensor::detach() const {
    auto node = std::make_shared<Node>();
    node->shape = node_->shape;
    node->data = node_->data;
    return Tensor(node);
}

// ---------------------------------------------------------------------------
// Operations

namespace {

void require_rank2(const Tensor& t, const char* what) {
    if (t.rank() == 0) throw shape_error(std::string(what) + ": expected a matrix, got scalar");
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
    require_rank2(a, "matmul");
    require_rank2(b, "matmul");
    const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
    if (b.rows() != k || (b.rank() == 1 && k != 1)) {
        throw shape_error("matmul: inner dimensions differ: " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
    }
    auto out = make_result({m, n}, {a.node(), b.node()});
    kernels::gemm_nn(a.data().data(), b.data().data(), out->data.data(), m, k, n);
    if (out->requires_grad) {
        out->backward = [m, k, n](Node& self) {
            Node& an = *self.inputs[0];
            Node& bn = *self.inputs[1];
            if (an.requires_grad) {
                an.ensure_grad();
                kernels::gemm_nt(self.grad.data(), bn.data.data(), an.grad.data(), m, n, k);
            }
            if (bn.requires_grad) {
                bn.ensure_grad();
                kernels::gemm_tn(an.data.data(), self.grad.data(), bn.grad.data(), m, k, n);
            }
        };
    }
    return Tensor(out);
}

Tensor matmul_nt(const Tensor& a, const Tensor& b) {
    require_rank2(a, "matmul_nt");
    require_rank2(b, "matmul_nt");
    const std::size_t m = a.rows(), k = a.cols(), n = b.rows();
    if (b.cols() != k) {
        throw shape_error("matmul_nt: inner dimensions differ: " + shape_str(a.shape()) + " x " +
                          shape_str(b.shape()) + "^T");
    }
    auto out = make_result({m, n}, {a.node(), b.node()});
    kernels::gemm_nt(a.data().data(), b.data().data(), out->data.data(), m, k, n);
    if (out->requires_grad) {
        out->backward = [m, k, n](Node& self) {
            Node& an = *self.inputs[0];
            Node& bn = *self.inputs[1];
            // dA = dC B, dB = dC^T A
            if (an.requires_grad) {
                an.ensure_grad();
                kernels::gemm_nn(self.grad.data(), bn.data.data(), an.grad.data(), m, n, k);
            }
            if (bn.requires_grad) {
                bn.ensure_grad();
                kernels::gemm_tn(self.grad.data(), an.data.data(), bn.grad.data(), m, n, k);
            }
        };
    }
    return Tensor(out);
}

Tensor add(const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape()) {
        throw shape_error("add: shapes differ: " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    }
    auto out = make_result(a.shape(), {a.node(), b.node()});
    const auto ad = a.data();
    const auto bd = b.data();
    for (std::size_t i = 0; i < ad.size(); ++i) out->data[i] = ad[i] + bd[i];
    if (out->requires_grad) {
        out->backward = [](Node& self) {
            for (auto& in : self.inputs) {
                if (!in->requires_grad) continue;
                in->ensure_grad();
                add_into(in->grad, self.grad.data());
            }
        };
    }
    return Tensor(out);
}

Tensor add_bias(const Tensor& x, const Tensor& bias) {
    const std::size_t m = x.rows(), n = x.cols();
    if (bias.size() != n || bias.rows() != 1) {
        throw shape_error("add_bias: bias " + shape_str(bias.shape()) + " does not match " + shape_str(x.shape()));
    }
    auto out = make_result(x.shape(), {x.node(), bias.node()});
    const real* xd = x.data().data();
    const real* bd = bias.data().data();
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < n; ++j) out->data[i * n + j] = xd[i * n + j] + bd[j];
    }
    if (out->requires_grad) {
        out->backward = [m, n](Node& self) {
            Node& xn = *self.inputs[0];
            Node& bn = *self.inputs[1];
            if (xn.requires_grad) {
                xn.ensure_grad();
                add_into(xn.grad, self.grad.data());
            }
            if (bn.requires_grad) {
                bn.ensure_grad();
                for (std::size_t i = 0; i < m; ++i) {
                    for (std::size_t j = 0; j < n; ++j) bn.grad[j] += self.grad[i * n + j];
                }
            }
        };
    }
    return Tensor(out);
}

Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias) { return add_bias(matmul(x, weight), bias); }

Tensor scale(const Tensor& x, real factor) {
    auto out = make_result(x.shape(), {x.node()});
    const auto xd = x.data();
    for (std::size_t i = 0; i < xd.size(); ++i) out->data[i] = xd[i] * factor;
    if (out->requires_grad) {
        out->backward = [factor](Node& self) {
            Node& xn = *self.inputs[0];
            xn.ensure_grad();
            for (std::size_t i = 0; i < self.grad.size(); ++i) xn.grad[i] += self.grad[i] * factor;
        };
    }
    return Tensor(out);
}

Tensor transpose(const Tensor& x) {
    const std::size_t m = x.rows(), n = x.cols();
    auto out = make_result({n, m}, {x.node()});
    const auto xd = x.data();
    for (std::size_t r = 0; r < m; ++r) {
        for (std::size_t c = 0; c < n; ++c) out->data[c * m + r] = xd[r * n + c];
    }
    if (out->requires_grad) {
        out->backward = [m, n](Node& self) {
            Node& xn = *self.inputs[0];
            xn.ensure_grad();
            for (std::size_t r = 0; r < m; ++r) {
                for (std::size_t c = 0; c < n; ++c) xn.grad[r * n + c] += self.grad[c * m + r];
            }
        };
    }
    return Tensor(out);
}

Tensor mul(const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape()) {
        throw shape_error("mul: shapes differ: " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    }
    auto out = make_result(a.shape(), {a.node(), b.node()});
    for (std::size_t i = 0; i < a.size(); ++i) out->data[i] = a.at(i) * b.at(i);
    if (out->requires_grad) {
        out->backward = [](Node& self) {
            Node& an = *self.inputs[0];
            Node& bn = *self.inputs[1];
            if (an.requires_grad) {
                an.ensure_grad();
                for (std::size_t i = 0; i < self.grad.size(); ++i) an.grad[i] += self.grad[i] * bn.data[i];
            }
            if (bn.requires_grad) {
                bn.ensure_grad();
                for (std::size_t i = 0; i < self.grad.size(); ++i) bn.grad[i] += self.grad[i] * an.data[i];
            }
        };
    }
    return Tensor(out);
}

Tensor sum(const Tensor& x) {
    auto out = make_result({}, {x.node()});
    real total = 0;
    for (real v : x.data()) total += v;
    out->data[0] = total;
    if (out->requires_grad) {
        out->backward = [](Node& self) {
            Node& xn = *self.inputs[0];
            xn.ensure_grad();
            const real g = self.grad[0];
            for (real& v : xn.grad) v += g;
        };
    }
    return Tensor(out);
}

Tensor dot(const Tensor& a, const Tensor& b) { return sum(mul(a, b)); }

Tensor embedding_gather(const Tensor& table, std::span<const std::int64_t> ids) {
    require_rank2(table, "embedding_gather");
    const std::size_t vocab = table.rows(), d = table.cols();
    if (ids.empty()) throw shape_error("embedding_gather: empty id list");
    for (std::int64_t id : ids) {
        if (id < 0 || static_cast<std::size_t>(id) >= vocab) {
            throw index_error("embedding_gather: id " + std::to_string(id) + " outside [0, " +
                              std::to_string(vocab) + ")");
        }
    }
    auto out = make_result({ids.size(), d}, {table.node()});
    const real* td = table.data().data();
    for (std::size_t t = 0; t < ids.size(); ++t) {
        std::copy_n(td + static_cast<std::size_t>(ids[t]) * d, d, out->data.data() + t * d);
    }
    if (out->requires_grad) {
        out->backward = [rows = std::vector<std::int64_t>(ids.begin(), ids.end()), d](Node& self) {
            Node& tn = *self.inputs[0];
            tn.ensure_grad();
            for (std::size_t t = 0; t < rows.size(); ++t) {
                real* dst = tn.grad.data() + static_cast<std::size_t>(rows[t]) * d;
                const real* src = self.grad.data() + t * d;
                for (std::size_t j = 0; j < d; ++j) dst[j] += src[j];
            }
        };
    }
    return Tensor(out);
}

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, real eps) {
    const std::size_t m = x.rows(), d = x.cols();
    if (gamma.size() != d || beta.size() != d) {
        throw shape_error("layer_norm: gamma " + shape_str(gamma.shape()) + " / beta " + shape_str(beta.shape()) +
                          " do not match " + shape_str(x.shape()));
    }
    if (!(eps > 0)) throw contract_error("layer_norm: eps must be positive");
    auto out = make_result(x.shape(), {x.node(), gamma.node(), beta.node()});
    std::vector<real> xhat(m * d);
    std::vector<real> inv_std(m);
    const real* xd = x.data().data();
    const real* g = gamma.data().data();
    const real* b = beta.data().data();
    for (std::size_t i = 0; i < m; ++i) {
        const real* row = xd + i * d;
        real mean = 0;
        for (std::size_t j = 0; j < d; ++j) mean += row[j];
        mean /= static_cast<real>(d);
        real var = 0;
        for (std::size_t j = 0; j < d; ++j) var += (row[j] - mean) * (row[j] - mean);
        var /= static_cast<real>(d);
        const real is = real{1} / std::sqrt(var + eps);
        inv_std[i] = is;
        for (std::size_t j = 0; j < d; ++j) {
            const real h = (row[j] - mean) * is;
            xhat[i * d + j] = h;
            out->data[i * d + j] = h * g[j] + b[j];
        }
    }
    if (out->requires_grad) {
        out->backward = [m, d, xhat = std::move(xhat), inv_std = std::move(inv_std)](Node& self) {
            Node& xn = *self.inputs[0];
            Node& gn = *self.inputs[1];
            Node& bn = *self.inputs[2];
            if (gn.requires_grad) gn.ensure_grad();
            if (bn.requires_grad) bn.ensure_grad();
            if (xn.requires_grad) xn.ensure_grad();
            std::vector<real> dh(d);
            for (std::size_t i = 0; i < m; ++i) {
                const real* dy = self.grad.data() + i * d;
                const real* h = xhat.data() + i * d;
                if (gn.requires_grad) {
                    for (std::size_t j = 0; j < d; ++j) gn.grad[j] += dy[j] * h[j];
                }
                if (bn.requires_grad) {
                    for (std::size_t j = 0; j < d; ++j) bn.grad[j] += dy[j];
                }
                if (!xn.requires_grad) continue;
                real mean_dh = 0, mean_dh_h = 0;
                for (std::size_t j = 0; j < d; ++j) {
                    dh[j] = dy[j] * gn.data[j];
                    mean_dh += dh[j];
                    mean_dh_h += dh[j] * h[j];
                }
                mean_dh /= static_cast<real>(d);
                mean_dh_h /= static_cast<real>(d);
                real* dx = xn.grad.data() + i * d;
                for (std::size_t j = 0; j < d; ++j) dx[j] += inv_std[i] * (dh[j] - mean_dh - h[j] * mean_dh_h);
            }
        };
    }
    return Tensor(out);
}

namespace {
constexpr real kGeluC = static_cast<real>(0.7978845608028654);  // sqrt(2 / pi)
constexpr real kGeluA = static_cast<real>(0.044715);
}  // namespace

namespace {
real gelu_backward_scale = 1;
}

void set_gelu_backward_scale(real s) { gelu_backward_scale = s; }

Tensor gelu(const Tensor& x) {
    auto out = make_result(x.shape(), {x.node()});
    const auto xd = x.data();
    for (std::size_t i = 0; i < xd.size(); ++i) {
        const real v = xd[i];
        out->data[i] = real{0.5} * v * (real{1} + std::tanh(kGeluC * (v + kGeluA * v * v * v)));
    }
    if (out->requires_grad) {
        out->backward = [](Node& self) {
            Node& xn = *self.inputs[0];
            xn.ensure_grad();
            const real k = gelu_backward_scale;
            for (std::size_t i = 0; i < self.grad.size(); ++i) {
                const real v = xn.data[i];
                const real t = std::tanh(kGeluC * (v + kGeluA * v * v * v));
                const real dt = (real{1} - t * t) * kGeluC * (real{1} + real{3} * kGeluA * v * v);
                xn.grad[i] += k * self.grad[i] * (real{0.5} * (real{1} + t) + real{0.5} * v * dt);
            }
        };
    }
    return Tensor(out);
}

Tensor dropout(const Tensor& x, real p, std::mt19937_64& rng) {
    if (p <= real{0}) return x;
    if (p >= real{1}) throw contract_error("dropout: p must be < 1");
    auto out = make_result(x.shape(), {x.node()});
    std::vector<real> mask(x.size());
    const real keep_scale = real{1} / (real{1} - p);
    for (std::size_t i = 0; i < mask.size(); ++i) {
        const double u = static_cast<double>(rng() >> 11) * 0x1.0p-53;
        mask[i] = u < static_cast<double>(p) ? real{0} : keep_scale;
        out->data[i] = x.at(i) * mask[i];
    }
    if (out->requires_grad) {
        out->backward = [mask = std::move(mask)](Node& self) {
            Node& xn = *self.inputs[0];
            xn.ensure_grad();
            for (std::size_t i = 0; i < mask.size(); ++i) xn.grad[i] += self.grad[i] * mask[i];
        };
    }
    return Tensor(out);
}

Tensor multi_head_attention(const Tensor& q, const Tensor& k, const Tensor& v, std::size_t num_heads,
                            std::span<const std::uint8_t> key_valid) {
    const std::size_t t_len = q.rows(), d = q.cols();
    if (k.shape() != q.shape() || v.shape() != q.shape()) {
        throw shape_error("attention: q " + shape_str(q.shape()) + ", k " + shape_str(k.shape()) + ", v " +
                          shape_str(v.shape()) + " must match");
    }
    if (num_heads == 0 || d % num_heads != 0) {
        throw shape_error("attention: width " + std::to_string(d) + " not divisible by " + std::to_string(num_heads) +
                          " heads");
    }
    if (key_valid.size() != t_len) throw shape_error("attention: key mask length differs from sequence length");
    if (std::none_of(key_valid.begin(), key_valid.end(), [](std::uint8_t b) { return b != 0; })) {
        throw contract_error("attention: every key is masked");
    }
    const std::size_t dh = d / num_heads;
    const real inv_sqrt = real{1} / std::sqrt(static_cast<real>(dh));
    auto out = make_result({t_len, d}, {q.node(), k.node(), v.node()});

    // probs[h][i][j]
    std::vector<real> probs(num_heads * t_len * t_len, real{0});
    std::vector<real> qh(t_len * dh), kh(t_len * dh), vh(t_len * dh), oh(t_len * dh);
    auto extract = [&](const real* src, std::vector<real>& dst, std::size_t h) {
        for (std::size_t i = 0; i < t_len; ++i) std::copy_n(src + i * d + h * dh, dh, dst.data() + i * dh);
    };
    const std::vector<std::uint8_t> valid(key_valid.begin(), key_valid.end());
    for (std::size_t h = 0; h < num_heads; ++h) {
        extract(q.data().data(), qh, h);
        extract(k.data().data(), kh, h);
        extract(v.data().data(), vh, h);
        real* ph = probs.data() + h * t_len * t_len;
        kernels::gemm_nt(qh.data(), kh.data(), ph, t_len, dh, t_len);
        for (std::size_t i = 0; i < t_len; ++i) {
            real* row = ph + i * t_len;
            real mx = -std::numeric_limits<real>::infinity();
            for (std::size_t j = 0; j < t_len; ++j) {
                if (valid[j]) mx = std::max(mx, row[j] * inv_sqrt);
            }
            real denom = 0;
            for (std::size_t j = 0; j < t_len; ++j) {
                if (valid[j]) {
                    row[j] = std::exp(row[j] * inv_sqrt - mx);
                    denom += row[j];
                } else {
                    row[j] = 0;
                }
            }
            const real inv = real{1} / denom;
            for (std::size_t j = 0; j < t_len; ++j) row[j] *= inv;
        }
        std::fill(oh.begin(), oh.end(), real{0});
        kernels::gemm_nn(ph, vh.data(), oh.data(), t_len, t_len, dh);
        for (std::size_t i = 0; i < t_len; ++i) std::copy_n(oh.data() + i * dh, dh, out->data.data() + i * d + h * dh);
    }

    if (out->requires_grad) {
        out->backward = [t_len, d, dh, num_heads, inv_sqrt, probs = std::move(probs)](Node& self) {
            Node& qn = *self.inputs[0];
            Node& kn = *self.inputs[1];
            Node& vn = *self.inputs[2];
            qn.ensure_grad();
            kn.ensure_grad();
            vn.ensure_grad();
            std::vector<real> qh(t_len * dh), kh(t_len * dh), vh(t_len * dh), doh(t_len * dh);
            std::vector<real> dp(t_len * t_len), dq(t_len * dh), dk(t_len * dh), dv(t_len * dh);
            auto extract = [&](const std::vector<real>& src, std::vector<real>& dst, std::size_t h) {
                for (std::size_t i = 0; i < t_len; ++i) std::copy_n(src.data() + i * d + h * dh, dh, dst.data() + i * dh);
            };
            auto scatter = [&](const std::vector<real>& src, std::vector<real>& dst, std::size_t h) {
                for (std::size_t i = 0; i < t_len; ++i) {
                    real* o = dst.data() + i * d + h * dh;
                    const real* s = src.data() + i * dh;
                    for (std::size_t j = 0; j < dh; ++j) o[j] += s[j];
                }
            };
            for (std::size_t h = 0; h < num_heads; ++h) {
                extract(qn.data, qh, h);
                extract(kn.data, kh, h);
                extract(vn.data, vh, h);
                extract(self.grad, doh, h);
                const real* ph = probs.data() + h * t_len * t_len;
                // dV = P^T dO ; dP = dO V^T
                std::fill(dv.begin(), dv.end(), real{0});
                kernels::gemm_tn(ph, doh.data(), dv.data(), t_len, t_len, dh);
                std::fill(dp.begin(), dp.end(), real{0});
                kernels::gemm_nt(doh.data(), vh.data(), dp.data(), t_len, dh, t_len);
                // dS = P * (dP - rowsum(P * dP)), folded with the 1/sqrt(dh) scale
                for (std::size_t i = 0; i < t_len; ++i) {
                    const real* prow = ph + i * t_len;
                    real* drow = dp.data() + i * t_len;
                    real acc = 0;
                    for (std::size_t j = 0; j < t_len; ++j) acc += prow[j] * drow[j];
                    for (std::size_t j = 0; j < t_len; ++j) drow[j] = prow[j] * (drow[j] - acc) * inv_sqrt;
                }
                std::fill(dq.begin(), dq.end(), real{0});
                kernels::gemm_nn(dp.data(), kh.data(), dq.data(), t_len, t_len, dh);
                std::fill(dk.begin(), dk.end(), real{0});
                kernels::gemm_tn(dp.data(), qh.data(), dk.data(), t_len, t_len, dh);
                if (qn.requires_grad) scatter(dq, qn.grad, h);
                if (kn.requires_grad) scatter(dk, kn.grad, h);
                if (vn.requires_grad) scatter(dv, vn.grad, h);
            }
        };
    }
    return Tensor(out);
}

Tensor softmax_cross_entropy(const Tensor& logits, std::span<const std::int64_t> targets, std::int64_t ignore_label) {
    require_rank2(logits, "softmax_cross_entropy");
    const std::size_t t_len = logits.rows(), classes = logits.cols();
    if (targets.size() != t_len) {
        throw shape_error("softmax_cross_entropy: " + std::to_string(targets.size()) + " targets for logits " +
                          shape_str(logits.shape()));
    }
    std::size_t count = 0;
    for (std::int64_t t : targets) {
        if (t == ignore_label) continue;
        if (t < 0 || static_cast<std::size_t>(t) >= classes) {
            throw index_error("softmax_cross_entropy: target " + std::to_string(t) + " outside [0, " +
                              std::to_string(classes) + ")");
        }
        ++count;
    }
    auto out = make_result({}, {logits.node()});
    if (count == 0) {
        out->backward = [](Node&) {};
        return Tensor(out);
    }
    std::vector<real> probs(t_len * classes, real{0});
    const real* ld = logits.data().data();
    real total = 0;
    for (std::size_t i = 0; i < t_len; ++i) {
        if (targets[i] == ignore_label) continue;
        const real* row = ld + i * classes;
        real mx = row[0];
        for (std::size_t c = 1; c < classes; ++c) mx = std::max(mx, row[c]);
        real denom = 0;
        real* prow = probs.data() + i * classes;
        for (std::size_t c = 0; c < classes; ++c) {
            prow[c] = std::exp(row[c] - mx);
            denom += prow[c];
        }
        const real lse = mx + std::log(denom);
        total += lse - row[targets[i]];
        for (std::size_t c = 0; c < classes; ++c) prow[c] /= denom;
    }
    const real inv_count = real{1} / static_cast<real>(count);
    out->data[0] = total * inv_count;
    if (out->requires_grad) {
        out->backward = [probs = std::move(probs), tg = std::vector<std::int64_t>(targets.begin(), targets.end()),
                         classes, ignore_label, inv_count](Node& self) {
            Node& ln = *self.inputs[0];
            ln.ensure_grad();
            const real g = self.grad[0] * inv_count;
            for (std::size_t i = 0; i < tg.size(); ++i) {
                if (tg[i] == ignore_label) continue;
                const real* prow = probs.data() + i * classes;
                real* grow = ln.grad.data() + i * classes;
                for (std::size_t c = 0; c < classes; ++c) grow[c] += g * prow[c];
                grow[tg[i]] -= g;
            }
        };
    }
    return Tensor(out);
}

void backward(const Tensor& loss) {
    if (!loss.defined() || loss.size() != 1) {
        throw contract_error("backward: loss must be a scalar, got " +
                             (loss.defined() ? shape_str(loss.shape()) : std::string("undefined tensor")));
    }
    const NodePtr& root = loss.node();
    if (!root->requires_grad) return;

    // Iterative post-order DFS; `order` ends with the root.
    std::vector<Node*> order;
    std::unordered_set<Node*> seen;
    std::vector<std::pair<Node*, std::size_t>> stack;
    stack.emplace_back(root.get(), 0);
    seen.insert(root.get());
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->inputs.size()) {
            Node* child = node->inputs[next++].get();
            if (child->requires_grad && seen.insert(child).second) stack.emplace_back(child, 0);
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }
    for (Node* n : order) {
        if (n->backward) n->grad.assign(n->data.size(), real{0});
    }
    root->ensure_grad();
    root->grad[0] += real{1};
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node* n = *it;
        if (n->backward) n->backward(*n);
    }
}

}  // namespace structlm
