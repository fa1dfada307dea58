// SPDX-License-Identifier: Apache-2.0
#pragma once

// Tape-based reverse-mode differentiation over dense tensors. Each op builds
// a node whose closure scatters the output gradient into its parents; the op
// set is exactly what the teacher/student networks and losses compose.

#include <functional>
#include <memory>
#include <unordered_set>
#include <utility>
#include <vector>

#include "stip/tensor.hpp"

namespace stip::nn {

template <typename T>
struct Node {
    Tensor<T> value;
    Tensor<T> grad;
    bool grad_alloc = false;
    bool requires_grad = false;
    std::vector<std::shared_ptr<Node<T>>> parents;
    std::function<void(Node<T>&)> backward_fn;

    void ensure_grad() {
        if (!grad_alloc) {
            grad = Tensor<T>::zeros(value.shape);
            grad_alloc = true;
        }
    }
};

template <typename T>
using Var = std::shared_ptr<Node<T>>;

template <typename T>
Var<T> make_var(Tensor<T> value, bool requires_grad) {
    auto n = std::make_shared<Node<T>>();
    n->value = std::move(value);
    n->requires_grad = requires_grad;
    return n;
}

template <typename T>
Var<T> constant(Tensor<T> value) {
    return make_var(std::move(value), false);
}

template <typename T>
Var<T> input(Tensor<T> value, bool requires_grad = false) {
    return make_var(std::move(value), requires_grad);
}

namespace detail {

template <typename T>
Var<T> unary(const Var<T>& a, Tensor<T> out, const char* name,
             std::function<void(Node<T>&, Node<T>&)> pull) {
    check_finite(out, name);
    auto n = make_var(std::move(out), a->requires_grad);
    n->parents = {a};
    if (n->requires_grad) {
        Node<T>* ap = a.get();
        n->backward_fn = [ap, pull](Node<T>& self) {
            ap->ensure_grad();
            pull(self, *ap);
        };
    }
    return n;
}

template <typename T>
Var<T> binary(const Var<T>& a, const Var<T>& b, Tensor<T> out, const char* name,
              std::function<void(Node<T>&, Node<T>&, Node<T>&)> pull) {
    check_finite(out, name);
    auto n = make_var(std::move(out), a->requires_grad || b->requires_grad);
    n->parents = {a, b};
    if (n->requires_grad) {
        Node<T>* ap = a.get();
        Node<T>* bp = b.get();
        n->backward_fn = [ap, bp, pull](Node<T>& self) {
            if (ap->requires_grad) ap->ensure_grad();
            if (bp->requires_grad) bp->ensure_grad();
            pull(self, *ap, *bp);
        };
    }
    return n;
}

inline void require(bool cond, const std::string& msg) {
    if (!cond) throw ShapeError(msg);
}

}  // namespace detail

// ---- elementwise -----------------------------------------------------------

template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
    detail::require(a->value.same_shape(b->value),
                    "add: " + shape_str(a->value.shape) + " vs " + shape_str(b->value.shape));
    Tensor<T> out = a->value;
    for (std::int64_t i = 0; i < out.numel(); ++i) out.data[i] += b->value.data[i];
    return detail::binary<T>(a, b, std::move(out), "add", [](Node<T>& s, Node<T>& pa, Node<T>& pb) {
        for (std::int64_t i = 0; i < s.value.numel(); ++i) {
            if (pa.requires_grad) pa.grad.data[i] += s.grad.data[i];
            if (pb.requires_grad) pb.grad.data[i] += s.grad.data[i];
        }
    });
}

template <typename T>
Var<T> sub(const Var<T>& a, const Var<T>& b) {
    detail::require(a->value.same_shape(b->value),
                    "sub: " + shape_str(a->value.shape) + " vs " + shape_str(b->value.shape));
    Tensor<T> out = a->value;
    for (std::int64_t i = 0; i < out.numel(); ++i) out.data[i] -= b->value.data[i];
    return detail::binary<T>(a, b, std::move(out), "sub", [](Node<T>& s, Node<T>& pa, Node<T>& pb) {
        for (std::int64_t i = 0; i < s.value.numel(); ++i) {
            if (pa.requires_grad) pa.grad.data[i] += s.grad.data[i];
            if (pb.requires_grad) pb.grad.data[i] -= s.grad.data[i];
        }
    });
}

template <typename T>
Var<T> mul(const Var<T>& a, const Var<T>& b) {
    detail::require(a->value.same_shape(b->value),
                    "mul: " + shape_str(a->value.shape) + " vs " + shape_str(b->value.shape));
    Tensor<T> out = a->value;
    for (std::int64_t i = 0; i < out.numel(); ++i) out.data[i] *= b->value.data[i];
    return detail::binary<T>(a, b, std::move(out), "mul", [](Node<T>& s, Node<T>& pa, Node<T>& pb) {
        for (std::int64_t i = 0; i < s.value.numel(); ++i) {
            if (pa.requires_grad) pa.grad.data[i] += s.grad.data[i] * pb.value.data[i];
            if (pb.requires_grad) pb.grad.data[i] += s.grad.data[i] * pa.value.data[i];
        }
    });
}

template <typename T>
Var<T> scale(const Var<T>& a, double c) {
    Tensor<T> out = a->value;
    for (auto& v : out.data) v = static_cast<T>(v * static_cast<T>(c));
    return detail::unary<T>(a, std::move(out), "scale", [c](Node<T>& s, Node<T>& pa) {
        for (std::int64_t i = 0; i < s.value.numel(); ++i)
            pa.grad.data[i] += s.grad.data[i] * static_cast<T>(c);
    });
}

template <typename T>
Var<T> add_scalar(const Var<T>& a, double c) {
    Tensor<T> out = a->value;
    for (auto& v : out.data) v = static_cast<T>(v + static_cast<T>(c));
    return detail::unary<T>(a, std::move(out), "add_scalar", [](Node<T>& s, Node<T>& pa) {
        for (std::int64_t i = 0; i < s.value.numel(); ++i) pa.grad.data[i] += s.grad.data[i];
    });
}

template <typename T>
Var<T> relu(const Var<T>& a) {
    Tensor<T> out = a->value;
    for (auto& v : out.data) v = v > T(0) ? v : T(0);
    return detail::unary<T>(a, std::move(out), "relu", [](Node<T>& s, Node<T>& pa) {
        for (std::int64_t i = 0; i < s.value.numel(); ++i)
            if (pa.value.data[i] > T(0)) pa.grad.data[i] += s.grad.data[i];
    });
}

template <typename T>
Var<T> sigmoid(const Var<T>& a) {
    Tensor<T> out = a->value;
    for (auto& v : out.data) v = static_cast<T>(1.0 / (1.0 + std::exp(-static_cast<double>(v))));
    return detail::unary<T>(a, std::move(out), "sigmoid", [](Node<T>& s, Node<T>& pa) {
        for (std::int64_t i = 0; i < s.value.numel(); ++i) {
            const T y = s.value.data[i];
            pa.grad.data[i] += s.grad.data[i] * y * (T(1) - y);
        }
    });
}

// log with a floor at 1e-30 so that vanishing probabilities fail loudly in
// the finite-check rather than silently producing -inf.
template <typename T>
Var<T> vlog(const Var<T>& a) {
    static constexpr double kFloor = 1e-30;
    Tensor<T> out = a->value;
    for (auto& v : out.data)
        v = static_cast<T>(std::log(std::max(static_cast<double>(v), kFloor)));
    return detail::unary<T>(a, std::move(out), "log", [](Node<T>& s, Node<T>& pa) {
        for (std::int64_t i = 0; i < s.value.numel(); ++i) {
            const double x = std::max(static_cast<double>(pa.value.data[i]), kFloor);
            pa.grad.data[i] += static_cast<T>(static_cast<double>(s.grad.data[i]) / x);
        }
    });
}

template <typename T>
Var<T> rsqrt(const Var<T>& a) {
    Tensor<T> out = a->value;
    for (auto& v : out.data) v = static_cast<T>(1.0 / std::sqrt(static_cast<double>(v)));
    return detail::unary<T>(a, std::move(out), "rsqrt", [](Node<T>& s, Node<T>& pa) {
        for (std::int64_t i = 0; i < s.value.numel(); ++i) {
            const T y = s.value.data[i];
            pa.grad.data[i] += s.grad.data[i] * static_cast<T>(-0.5) * y * y * y;
        }
    });
}

// ---- reductions -------------------------------------------------------------

template <typename T>
Var<T> sum_all(const Var<T>& a) {
    double acc = 0.0;
    for (const auto& v : a->value.data) acc += static_cast<double>(v);
    Tensor<T> out({1}, {static_cast<T>(acc)});
    return detail::unary<T>(a, std::move(out), "sum_all", [](Node<T>& s, Node<T>& pa) {
        const T g = s.grad.data[0];
        for (auto& gv : pa.grad.data) gv += g;
    });
}

template <typename T>
Var<T> mean_all(const Var<T>& a) {
    return scale(sum_all(a), 1.0 / static_cast<double>(a->value.numel()));
}

// Per-channel mean over all leading axes: [B,L,C] -> [C] or [B,C] -> [C].
template <typename T>
Var<T> mean_channels(const Var<T>& a) {
    const auto& sh = a->value.shape;
    detail::require(sh.size() >= 2, "mean_channels: rank >= 2 required");
    const std::int64_t C = sh.back();
    const std::int64_t rows = a->value.numel() / C;
    Tensor<T> out({C});
    for (std::int64_t r = 0; r < rows; ++r)
        for (std::int64_t c = 0; c < C; ++c)
            out.data[c] += a->value.data[r * C + c];
    for (auto& v : out.data) v = static_cast<T>(static_cast<double>(v) / rows);
    return detail::unary<T>(a, std::move(out), "mean_channels", [C, rows](Node<T>& s, Node<T>& pa) {
        for (std::int64_t r = 0; r < rows; ++r)
            for (std::int64_t c = 0; c < C; ++c)
                pa.grad.data[r * C + c] += s.grad.data[c] / static_cast<T>(rows);
    });
}

// Broadcast a channel vector [C] to the shape of `like` (last dim == C).
template <typename T>
Var<T> broadcast_channels(const Var<T>& v, const Shape& like) {
    const std::int64_t C = v->value.numel();
    detail::require(!like.empty() && like.back() == C,
                    "broadcast_channels: last dim of " + shape_str(like) + " != " + std::to_string(C));
    Tensor<T> out(like);
    const std::int64_t rows = out.numel() / C;
    for (std::int64_t r = 0; r < rows; ++r)
        for (std::int64_t c = 0; c < C; ++c) out.data[r * C + c] = v->value.data[c];
    return detail::unary<T>(v, std::move(out), "broadcast_channels",
                            [C, rows](Node<T>& s, Node<T>& pa) {
                                for (std::int64_t r = 0; r < rows; ++r)
                                    for (std::int64_t c = 0; c < C; ++c)
                                        pa.grad.data[c] += s.grad.data[r * C + c];
                            });
}

// Mean over the sequence axis: [B,L,C] -> [B,C].
template <typename T>
Var<T> seq_mean(const Var<T>& a) {
    const auto& sh = a->value.shape;
    detail::require(sh.size() == 3, "seq_mean expects [B,L,C], got " + shape_str(sh));
    const std::int64_t B = sh[0], L = sh[1], C = sh[2];
    Tensor<T> out({B, C});
    for (std::int64_t b = 0; b < B; ++b)
        for (std::int64_t l = 0; l < L; ++l)
            for (std::int64_t c = 0; c < C; ++c) out.at(b, c) += a->value.at(b, l, c);
    for (auto& v : out.data) v = static_cast<T>(static_cast<double>(v) / L);
    return detail::unary<T>(a, std::move(out), "seq_mean", [B, L, C](Node<T>& s, Node<T>& pa) {
        for (std::int64_t b = 0; b < B; ++b)
            for (std::int64_t l = 0; l < L; ++l)
                for (std::int64_t c = 0; c < C; ++c)
                    pa.grad.data[(b * L + l) * C + c] += s.grad.data[b * C + c] / static_cast<T>(L);
    });
}

// ---- channel broadcasting arithmetic ---------------------------------------

template <typename T>
Var<T> add_channels(const Var<T>& x, const Var<T>& v) {
    const std::int64_t C = v->value.numel();
    detail::require(v->value.rank() == 1 && x->value.shape.back() == C,
                    "add_channels: bias [" + std::to_string(C) + "] vs " + shape_str(x->value.shape));
    Tensor<T> out = x->value;
    const std::int64_t rows = out.numel() / C;
    for (std::int64_t r = 0; r < rows; ++r)
        for (std::int64_t c = 0; c < C; ++c) out.data[r * C + c] += v->value.data[c];
    return detail::binary<T>(x, v, std::move(out), "add_channels",
                             [C, rows](Node<T>& s, Node<T>& px, Node<T>& pv) {
                                 for (std::int64_t r = 0; r < rows; ++r)
                                     for (std::int64_t c = 0; c < C; ++c) {
                                         const T g = s.grad.data[r * C + c];
                                         if (px.requires_grad) px.grad.data[r * C + c] += g;
                                         if (pv.requires_grad) pv.grad.data[c] += g;
                                     }
                             });
}

template <typename T>
Var<T> mul_channels(const Var<T>& x, const Var<T>& v) {
    const std::int64_t C = v->value.numel();
    detail::require(v->value.rank() == 1 && x->value.shape.back() == C,
                    "mul_channels: scale [" + std::to_string(C) + "] vs " + shape_str(x->value.shape));
    Tensor<T> out = x->value;
    const std::int64_t rows = out.numel() / C;
    for (std::int64_t r = 0; r < rows; ++r)
        for (std::int64_t c = 0; c < C; ++c) out.data[r * C + c] *= v->value.data[c];
    return detail::binary<T>(x, v, std::move(out), "mul_channels",
                             [C, rows](Node<T>& s, Node<T>& px, Node<T>& pv) {
                                 for (std::int64_t r = 0; r < rows; ++r)
                                     for (std::int64_t c = 0; c < C; ++c) {
                                         const T g = s.grad.data[r * C + c];
                                         if (px.requires_grad)
                                             px.grad.data[r * C + c] += g * pv.value.data[c];
                                         if (pv.requires_grad)
                                             pv.grad.data[c] += g * px.value.data[r * C + c];
                                     }
                             });
}

// x[B,L,C] * s[B,C], broadcasting over the sequence axis.
template <typename T>
Var<T> mul_rows(const Var<T>& x, const Var<T>& s) {
    const auto& sh = x->value.shape;
    detail::require(sh.size() == 3 && s->value.rank() == 2 && s->value.dim(0) == sh[0] &&
                        s->value.dim(1) == sh[2],
                    "mul_rows: " + shape_str(sh) + " vs " + shape_str(s->value.shape));
    const std::int64_t B = sh[0], L = sh[1], C = sh[2];
    Tensor<T> out = x->value;
    for (std::int64_t b = 0; b < B; ++b)
        for (std::int64_t l = 0; l < L; ++l)
            for (std::int64_t c = 0; c < C; ++c) out.at(b, l, c) *= s->value.at(b, c);
    return detail::binary<T>(x, s, std::move(out), "mul_rows",
                             [B, L, C](Node<T>& self, Node<T>& px, Node<T>& ps) {
                                 for (std::int64_t b = 0; b < B; ++b)
                                     for (std::int64_t l = 0; l < L; ++l)
                                         for (std::int64_t c = 0; c < C; ++c) {
                                             const T g = self.grad.data[(b * L + l) * C + c];
                                             if (px.requires_grad)
                                                 px.grad.data[(b * L + l) * C + c] +=
                                                     g * ps.value.data[b * C + c];
                                             if (ps.requires_grad)
                                                 ps.grad.data[b * C + c] +=
                                                     g * px.value.data[(b * L + l) * C + c];
                                         }
                             });
}

// ---- shape ops ---------------------------------------------------------------

template <typename T>
Var<T> reshape(const Var<T>& a, Shape shape) {
    detail::require(shape_numel(shape) == a->value.numel(),
                    "reshape: " + shape_str(a->value.shape) + " -> " + shape_str(shape));
    Tensor<T> out(std::move(shape), a->value.data);
    return detail::unary<T>(a, std::move(out), "reshape", [](Node<T>& s, Node<T>& pa) {
        for (std::int64_t i = 0; i < s.value.numel(); ++i) pa.grad.data[i] += s.grad.data[i];
    });
}

// Transpose of the trailing two axes (rank 2 or 3).
template <typename T>
Var<T> transpose_last(const Var<T>& a) {
    const auto& sh = a->value.shape;
    detail::require(sh.size() == 2 || sh.size() == 3, "transpose_last: rank 2 or 3 required");
    const std::int64_t B = sh.size() == 3 ? sh[0] : 1;
    const std::int64_t M = sh[sh.size() - 2], N = sh.back();
    Shape osh = sh;
    osh[osh.size() - 2] = N;
    osh.back() = M;
    Tensor<T> out(osh);
    for (std::int64_t b = 0; b < B; ++b)
        for (std::int64_t i = 0; i < M; ++i)
            for (std::int64_t j = 0; j < N; ++j)
                out.data[(b * N + j) * M + i] = a->value.data[(b * M + i) * N + j];
    return detail::unary<T>(a, std::move(out), "transpose_last", [B, M, N](Node<T>& s, Node<T>& pa) {
        for (std::int64_t b = 0; b < B; ++b)
            for (std::int64_t i = 0; i < M; ++i)
                for (std::int64_t j = 0; j < N; ++j)
                    pa.grad.data[(b * M + i) * N + j] += s.grad.data[(b * N + j) * M + i];
    });
}

template <typename T>
Var<T> slice_last(const Var<T>& a, std::int64_t start, std::int64_t len) {
    const auto& sh = a->value.shape;
    const std::int64_t C = sh.back();
    detail::require(start >= 0 && len >= 1 && start + len <= C,
                    "slice_last: [" + std::to_string(start) + "," + std::to_string(start + len) +
                        ") out of " + std::to_string(C));
    Shape osh = sh;
    osh.back() = len;
    Tensor<T> out(osh);
    const std::int64_t rows = a->value.numel() / C;
    for (std::int64_t r = 0; r < rows; ++r)
        for (std::int64_t c = 0; c < len; ++c) out.data[r * len + c] = a->value.data[r * C + start + c];
    return detail::unary<T>(a, std::move(out), "slice_last",
                            [rows, C, start, len](Node<T>& s, Node<T>& pa) {
                                for (std::int64_t r = 0; r < rows; ++r)
                                    for (std::int64_t c = 0; c < len; ++c)
                                        pa.grad.data[r * C + start + c] += s.grad.data[r * len + c];
                            });
}

template <typename T>
Var<T> concat_last(const std::vector<Var<T>>& parts) {
    detail::require(!parts.empty(), "concat_last: no inputs");
    const auto& sh0 = parts[0]->value.shape;
    std::int64_t total = 0;
    bool any_grad = false;
    for (const auto& p : parts) {
        const auto& sh = p->value.shape;
        detail::require(sh.size() == sh0.size(), "concat_last: rank mismatch");
        for (std::size_t i = 0; i + 1 < sh.size(); ++i)
            detail::require(sh[i] == sh0[i], "concat_last: leading dims mismatch");
        total += sh.back();
        any_grad = any_grad || p->requires_grad;
    }
    Shape osh = sh0;
    osh.back() = total;
    Tensor<T> out(osh);
    const std::int64_t rows = out.numel() / total;
    std::int64_t off = 0;
    for (const auto& p : parts) {
        const std::int64_t c = p->value.shape.back();
        for (std::int64_t r = 0; r < rows; ++r)
            for (std::int64_t j = 0; j < c; ++j)
                out.data[r * total + off + j] = p->value.data[r * c + j];
        off += c;
    }
    check_finite(out, "concat_last");
    auto n = make_var(std::move(out), any_grad);
    n->parents.assign(parts.begin(), parts.end());
    if (any_grad) {
        std::vector<Node<T>*> raw;
        raw.reserve(parts.size());
        for (const auto& p : parts) raw.push_back(p.get());
        n->backward_fn = [raw, rows, total](Node<T>& self) {
            std::int64_t o = 0;
            for (Node<T>* p : raw) {
                const std::int64_t c = p->value.shape.back();
                if (p->requires_grad) {
                    p->ensure_grad();
                    for (std::int64_t r = 0; r < rows; ++r)
                        for (std::int64_t j = 0; j < c; ++j)
                            p->grad.data[r * c + j] += self.grad.data[r * total + o + j];
                }
                o += c;
            }
        };
    }
    return n;
}

// ---- matrix products ---------------------------------------------------------

template <typename T>
Var<T> matmul(const Var<T>& a, const Var<T>& b) {
    detail::require(a->value.rank() == 2 && b->value.rank() == 2 &&
                        a->value.dim(1) == b->value.dim(0),
                    "matmul: " + shape_str(a->value.shape) + " x " + shape_str(b->value.shape));
    const std::int64_t M = a->value.dim(0), K = a->value.dim(1), N = b->value.dim(1);
    Tensor<T> out({M, N});
    for (std::int64_t i = 0; i < M; ++i)
        for (std::int64_t k = 0; k < K; ++k) {
            const T av = a->value.data[i * K + k];
            if (av == T(0)) continue;
            const T* brow = &b->value.data[k * N];
            T* orow = &out.data[i * N];
            for (std::int64_t j = 0; j < N; ++j) orow[j] += av * brow[j];
        }
    return detail::binary<T>(a, b, std::move(out), "matmul",
                             [M, K, N](Node<T>& s, Node<T>& pa, Node<T>& pb) {
                                 if (pa.requires_grad) {
                                     // dA = dC * B^T
                                     for (std::int64_t i = 0; i < M; ++i)
                                         for (std::int64_t k = 0; k < K; ++k) {
                                             double acc = 0.0;
                                             const T* grow = &s.grad.data[i * N];
                                             const T* brow = &pb.value.data[k * N];
                                             for (std::int64_t j = 0; j < N; ++j)
                                                 acc += static_cast<double>(grow[j]) * brow[j];
                                             pa.grad.data[i * K + k] += static_cast<T>(acc);
                                         }
                                 }
                                 if (pb.requires_grad) {
                                     // dB = A^T * dC
                                     for (std::int64_t i = 0; i < M; ++i)
                                         for (std::int64_t k = 0; k < K; ++k) {
                                             const T av = pa.value.data[i * K + k];
                                             if (av == T(0)) continue;
                                             const T* grow = &s.grad.data[i * N];
                                             T* brow = &pb.grad.data[k * N];
                                             for (std::int64_t j = 0; j < N; ++j) brow[j] += av * grow[j];
                                         }
                                 }
                             });
}

template <typename T>
Var<T> bmm(const Var<T>& a, const Var<T>& b) {
    detail::require(a->value.rank() == 3 && b->value.rank() == 3 &&
                        a->value.dim(0) == b->value.dim(0) && a->value.dim(2) == b->value.dim(1),
                    "bmm: " + shape_str(a->value.shape) + " x " + shape_str(b->value.shape));
    const std::int64_t B = a->value.dim(0), M = a->value.dim(1), K = a->value.dim(2),
                       N = b->value.dim(2);
    Tensor<T> out({B, M, N});
    for (std::int64_t bb = 0; bb < B; ++bb)
        for (std::int64_t i = 0; i < M; ++i)
            for (std::int64_t k = 0; k < K; ++k) {
                const T av = a->value.data[(bb * M + i) * K + k];
                if (av == T(0)) continue;
                const T* brow = &b->value.data[(bb * K + k) * N];
                T* orow = &out.data[(bb * M + i) * N];
                for (std::int64_t j = 0; j < N; ++j) orow[j] += av * brow[j];
            }
    return detail::binary<T>(
        a, b, std::move(out), "bmm", [B, M, K, N](Node<T>& s, Node<T>& pa, Node<T>& pb) {
            for (std::int64_t bb = 0; bb < B; ++bb) {
                if (pa.requires_grad) {
                    for (std::int64_t i = 0; i < M; ++i)
                        for (std::int64_t k = 0; k < K; ++k) {
                            double acc = 0.0;
                            const T* grow = &s.grad.data[(bb * M + i) * N];
                            const T* brow = &pb.value.data[(bb * K + k) * N];
                            for (std::int64_t j = 0; j < N; ++j)
                                acc += static_cast<double>(grow[j]) * brow[j];
                            pa.grad.data[(bb * M + i) * K + k] += static_cast<T>(acc);
                        }
                }
                if (pb.requires_grad) {
                    for (std::int64_t i = 0; i < M; ++i)
                        for (std::int64_t k = 0; k < K; ++k) {
                            const T av = pa.value.data[(bb * M + i) * K + k];
                            if (av == T(0)) continue;
                            const T* grow = &s.grad.data[(bb * M + i) * N];
                            T* brow = &pb.grad.data[(bb * K + k) * N];
                            for (std::int64_t j = 0; j < N; ++j) brow[j] += av * grow[j];
                        }
                }
            }
        });
}

// ---- softmax -----------------------------------------------------------------

// Row softmax over the last axis, computed with max subtraction.
template <typename T>
Var<T> softmax_last(const Var<T>& a) {
    const std::int64_t C = a->value.shape.back();
    const std::int64_t rows = a->value.numel() / C;
    Tensor<T> out = a->value;
    for (std::int64_t r = 0; r < rows; ++r) {
        T* row = &out.data[r * C];
        T mx = row[0];
        for (std::int64_t c = 1; c < C; ++c) mx = std::max(mx, row[c]);
        double sum = 0.0;
        for (std::int64_t c = 0; c < C; ++c) {
            const double e = std::exp(static_cast<double>(row[c] - mx));
            row[c] = static_cast<T>(e);
            sum += e;
        }
        for (std::int64_t c = 0; c < C; ++c)
            row[c] = static_cast<T>(static_cast<double>(row[c]) / sum);
    }
    return detail::unary<T>(a, std::move(out), "softmax", [rows, C](Node<T>& s, Node<T>& pa) {
        for (std::int64_t r = 0; r < rows; ++r) {
            const T* y = &s.value.data[r * C];
            const T* g = &s.grad.data[r * C];
            double dot = 0.0;
            for (std::int64_t c = 0; c < C; ++c) dot += static_cast<double>(g[c]) * y[c];
            for (std::int64_t c = 0; c < C; ++c)
                pa.grad.data[r * C + c] += static_cast<T>((static_cast<double>(g[c]) - dot) * y[c]);
        }
    });
}

// ---- convolution & pooling ---------------------------------------------------

enum class Padding { Same, Valid };

// x[B,L,Cin] * w[k,Cin,Cout] + bias[Cout]; 'same' zero-pads by (k-1)/2.
template <typename T>
Var<T> conv1d(const Var<T>& x, const Var<T>& w, const Var<T>& bias, Padding padding,
              std::int64_t stride = 1) {
    const auto& xs = x->value.shape;
    const auto& ws = w->value.shape;
    detail::require(xs.size() == 3, "conv1d: input must be [B,L,Cin], got " + shape_str(xs));
    detail::require(ws.size() == 3, "conv1d: weights must be [k,Cin,Cout], got " + shape_str(ws));
    detail::require(ws[1] == xs[2], "conv1d: input channels " + std::to_string(xs[2]) +
                                        " != weight channels " + std::to_string(ws[1]));
    detail::require(bias->value.rank() == 1 && bias->value.numel() == ws[2],
                    "conv1d: bias shape " + shape_str(bias->value.shape));
    detail::require(stride >= 1, "conv1d: stride must be positive");
    check_finite(x->value, "conv1d input");
    const std::int64_t B = xs[0], L = xs[1], Cin = xs[2], k = ws[0], Cout = ws[2];
    // Zero padding; 'same' splits k-1 asymmetrically so odd kernels get the
    // symmetric (k-1)/2 and stride 1 always preserves length.
    const std::int64_t pad = padding == Padding::Same ? (k - 1) / 2 : 0;
    const std::int64_t pad_right = padding == Padding::Same ? (k - 1) - pad : 0;
    detail::require(k <= L + pad + pad_right,
                    "conv1d: kernel " + std::to_string(k) + " exceeds padded length " +
                        std::to_string(L + pad + pad_right));
    const std::int64_t Lout = (L + pad + pad_right - k) / stride + 1;

    Tensor<T> out({B, Lout, Cout});
    for (std::int64_t b = 0; b < B; ++b)
        for (std::int64_t lo = 0; lo < Lout; ++lo) {
            T* orow = &out.data[(b * Lout + lo) * Cout];
            for (std::int64_t c = 0; c < Cout; ++c) orow[c] = bias->value.data[c];
            for (std::int64_t kk = 0; kk < k; ++kk) {
                const std::int64_t li = lo * stride + kk - pad;
                if (li < 0 || li >= L) continue;
                const T* xrow = &x->value.data[(b * L + li) * Cin];
                for (std::int64_t ci = 0; ci < Cin; ++ci) {
                    const T xv = xrow[ci];
                    if (xv == T(0)) continue;
                    const T* wrow = &w->value.data[(kk * Cin + ci) * Cout];
                    for (std::int64_t c = 0; c < Cout; ++c) orow[c] += xv * wrow[c];
                }
            }
        }
    check_finite(out, "conv1d");
    auto n = make_var(std::move(out), x->requires_grad || w->requires_grad || bias->requires_grad);
    n->parents = {x, w, bias};
    if (n->requires_grad) {
        Node<T>* xp = x.get();
        Node<T>* wp = w.get();
        Node<T>* bp = bias.get();
        n->backward_fn = [xp, wp, bp, B, L, Cin, k, Cout, pad, stride, Lout](Node<T>& s) {
            if (xp->requires_grad) xp->ensure_grad();
            if (wp->requires_grad) wp->ensure_grad();
            if (bp->requires_grad) bp->ensure_grad();
            for (std::int64_t b = 0; b < B; ++b)
                for (std::int64_t lo = 0; lo < Lout; ++lo) {
                    const T* grow = &s.grad.data[(b * Lout + lo) * Cout];
                    if (bp->requires_grad)
                        for (std::int64_t c = 0; c < Cout; ++c) bp->grad.data[c] += grow[c];
                    for (std::int64_t kk = 0; kk < k; ++kk) {
                        const std::int64_t li = lo * stride + kk - pad;
                        if (li < 0 || li >= L) continue;
                        const T* xrow = &xp->value.data[(b * L + li) * Cin];
                        for (std::int64_t ci = 0; ci < Cin; ++ci) {
                            const T* wrow = &wp->value.data[(kk * Cin + ci) * Cout];
                            if (wp->requires_grad) {
                                const T xv = xrow[ci];
                                T* wg = &wp->grad.data[(kk * Cin + ci) * Cout];
                                for (std::int64_t c = 0; c < Cout; ++c) wg[c] += xv * grow[c];
                            }
                            if (xp->requires_grad) {
                                double acc = 0.0;
                                for (std::int64_t c = 0; c < Cout; ++c)
                                    acc += static_cast<double>(grow[c]) * wrow[c];
                                xp->grad.data[(b * L + li) * Cin + ci] += static_cast<T>(acc);
                            }
                        }
                    }
                }
        };
    }
    return n;
}

// Depthwise conv: x[B,L,C] * w[k,C] + bias[C], same padding, stride 1.
template <typename T>
Var<T> dwconv1d(const Var<T>& x, const Var<T>& w, const Var<T>& bias) {
    const auto& xs = x->value.shape;
    const auto& ws = w->value.shape;
    detail::require(xs.size() == 3 && ws.size() == 2 && ws[1] == xs[2],
                    "dwconv1d: " + shape_str(xs) + " with " + shape_str(ws));
    detail::require(bias->value.numel() == xs[2], "dwconv1d: bias shape");
    const std::int64_t B = xs[0], L = xs[1], C = xs[2], k = ws[0];
    const std::int64_t pad = (k - 1) / 2;
    Tensor<T> out({B, L, C});
    for (std::int64_t b = 0; b < B; ++b)
        for (std::int64_t lo = 0; lo < L; ++lo) {
            T* orow = &out.data[(b * L + lo) * C];
            for (std::int64_t c = 0; c < C; ++c) orow[c] = bias->value.data[c];
            for (std::int64_t kk = 0; kk < k; ++kk) {
                const std::int64_t li = lo + kk - pad;
                if (li < 0 || li >= L) continue;
                const T* xrow = &x->value.data[(b * L + li) * C];
                const T* wrow = &w->value.data[kk * C];
                for (std::int64_t c = 0; c < C; ++c) orow[c] += xrow[c] * wrow[c];
            }
        }
    check_finite(out, "dwconv1d");
    auto n = make_var(std::move(out), x->requires_grad || w->requires_grad || bias->requires_grad);
    n->parents = {x, w, bias};
    if (n->requires_grad) {
        Node<T>* xp = x.get();
        Node<T>* wp = w.get();
        Node<T>* bp = bias.get();
        n->backward_fn = [xp, wp, bp, B, L, C, k, pad](Node<T>& s) {
            if (xp->requires_grad) xp->ensure_grad();
            if (wp->requires_grad) wp->ensure_grad();
            if (bp->requires_grad) bp->ensure_grad();
            for (std::int64_t b = 0; b < B; ++b)
                for (std::int64_t lo = 0; lo < L; ++lo) {
                    const T* grow = &s.grad.data[(b * L + lo) * C];
                    if (bp->requires_grad)
                        for (std::int64_t c = 0; c < C; ++c) bp->grad.data[c] += grow[c];
                    for (std::int64_t kk = 0; kk < k; ++kk) {
                        const std::int64_t li = lo + kk - pad;
                        if (li < 0 || li >= L) continue;
                        for (std::int64_t c = 0; c < C; ++c) {
                            if (wp->requires_grad)
                                wp->grad.data[kk * C + c] +=
                                    xp->value.data[(b * L + li) * C + c] * grow[c];
                            if (xp->requires_grad)
                                xp->grad.data[(b * L + li) * C + c] +=
                                    wp->value.data[kk * C + c] * grow[c];
                        }
                    }
                }
        };
    }
    return n;
}

template <typename T>
Var<T> maxpool1d(const Var<T>& x, std::int64_t pool, std::int64_t stride) {
    const auto& xs = x->value.shape;
    detail::require(xs.size() == 3, "maxpool1d: input must be [B,L,C], got " + shape_str(xs));
    detail::require(pool >= 1 && stride >= 1, "maxpool1d: pool and stride must be positive");
    const std::int64_t B = xs[0], L = xs[1], C = xs[2];
    detail::require(pool <= L, "maxpool1d: pool " + std::to_string(pool) + " exceeds length " +
                                   std::to_string(L));
    const std::int64_t Lout = (L - pool) / stride + 1;
    Tensor<T> out({B, Lout, C});
    std::vector<std::int64_t> arg(static_cast<std::size_t>(B * Lout * C));
    for (std::int64_t b = 0; b < B; ++b)
        for (std::int64_t lo = 0; lo < Lout; ++lo)
            for (std::int64_t c = 0; c < C; ++c) {
                const std::int64_t l0 = lo * stride;
                T best = x->value.at(b, l0, c);
                std::int64_t bi = l0;
                for (std::int64_t p = 1; p < pool; ++p) {
                    const T v = x->value.at(b, l0 + p, c);
                    if (v > best) {
                        best = v;
                        bi = l0 + p;
                    }
                }
                out.at(b, lo, c) = best;
                arg[static_cast<std::size_t>((b * Lout + lo) * C + c)] = bi;
            }
    return detail::unary<T>(x, std::move(out), "maxpool1d",
                            [B, Lout, C, L, arg](Node<T>& s, Node<T>& pa) {
                                for (std::int64_t b = 0; b < B; ++b)
                                    for (std::int64_t lo = 0; lo < Lout; ++lo)
                                        for (std::int64_t c = 0; c < C; ++c) {
                                            const std::int64_t li =
                                                arg[static_cast<std::size_t>((b * Lout + lo) * C + c)];
                                            pa.grad.data[(b * L + li) * C + c] +=
                                                s.grad.data[(b * Lout + lo) * C + c];
                                        }
                            });
}

// ---- backward ----------------------------------------------------------------

// Reverse-mode sweep from a scalar loss.
template <typename T>
void backward(const Var<T>& loss) {
    if (loss->value.numel() != 1)
        throw ShapeError("backward: loss must be scalar, got " + shape_str(loss->value.shape));
    // Iterative post-order topological sort.
    std::vector<Node<T>*> order;
    std::unordered_set<Node<T>*> visited;
    std::vector<std::pair<Node<T>*, std::size_t>> stack;
    stack.emplace_back(loss.get(), 0);
    visited.insert(loss.get());
    while (!stack.empty()) {
        auto& [node, idx] = stack.back();
        if (idx < node->parents.size()) {
            Node<T>* p = node->parents[idx++].get();
            if (p->requires_grad && visited.insert(p).second) stack.emplace_back(p, 0);
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }
    loss->ensure_grad();
    loss->grad.data[0] = T(1);
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node<T>* n = *it;
        if (n->backward_fn && n->grad_alloc) n->backward_fn(*n);
    }
}

}  // namespace stip::nn
