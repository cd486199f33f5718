#include "benet/autograd.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <limits>
#include <unordered_set>

namespace benet::ag {

namespace {

std::atomic<int64_t> g_seq{0};
thread_local bool g_grad_enabled = true;

Var make_node(Tensor out, std::vector<Var> parents, std::function<void(Node&)> bw) {
    auto n = std::make_shared<Node>();
    n->val = std::move(out);
    n->seq = g_seq.fetch_add(1, std::memory_order_relaxed);
    bool needs = false;
    if (g_grad_enabled) {
        for (const auto& p : parents)
            if (p->requires_grad) { needs = true; break; }
    }
    if (needs) {
        n->requires_grad = true;
        n->parents = std::move(parents);
        n->backward_op = std::move(bw);
    }
    return n;
}

void ensure_grad(Node& n) {
    if (n.grad.empty()) n.grad = Tensor::zeros(n.val.shape());
}

void check_same_shape(const Var& a, const Var& b, const char* op) {
    if (!a->val.same_shape(b->val))
        throw InvalidInputError(std::string(op) + ": shape mismatch " + a->val.shape_str() +
                                " vs " + b->val.shape_str());
}

}  // namespace

bool grad_enabled() { return g_grad_enabled; }
NoGradGuard::NoGradGuard() : prev(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = prev; }

Var leaf(Tensor value, bool requires_grad) {
    auto n = std::make_shared<Node>();
    n->val = std::move(value);
    n->requires_grad = requires_grad;
    n->seq = g_seq.fetch_add(1, std::memory_order_relaxed);
    return n;
}

Var constant(Tensor value) { return leaf(std::move(value), false); }

void backward(const Var& root) {
    if (root->val.numel() != 1)
        throw InvalidInputError("backward() expects a scalar root");
    // Collect reachable grad-requiring nodes, iteratively.
    std::vector<Node*> nodes;
    std::unordered_set<Node*> seen;
    std::vector<Node*> stack{root.get()};
    while (!stack.empty()) {
        Node* n = stack.back();
        stack.pop_back();
        if (!n->requires_grad || !seen.insert(n).second) continue;
        nodes.push_back(n);
        for (const auto& p : n->parents) stack.push_back(p.get());
    }
    if (nodes.empty()) return;  // nothing requires grad
    for (Node* n : nodes) {
        n->grad = Tensor::zeros(n->val.shape());
    }
    std::sort(nodes.begin(), nodes.end(),
              [](const Node* a, const Node* b) { return a->seq > b->seq; });
    root->grad[0] = 1.0;
    for (Node* n : nodes) {
        if (n->backward_op) n->backward_op(*n);
    }
}

// ---------------------------------------------------------------------------
// elementwise
// ---------------------------------------------------------------------------

Var add(const Var& a, const Var& b) {
    check_same_shape(a, b, "add");
    Tensor out(a->val.shape());
    const int64_t n = out.numel();
    for (int64_t i = 0; i < n; ++i) out[i] = a->val[i] + b->val[i];
    return make_node(std::move(out), {a, b}, [](Node& nd) {
        const int64_t m = nd.val.numel();
        for (int k = 0; k < 2; ++k) {
            Node& p = *nd.parents[static_cast<size_t>(k)];
            if (!p.requires_grad) continue;
            ensure_grad(p);
            for (int64_t i = 0; i < m; ++i) p.grad[i] += nd.grad[i];
        }
    });
}

Var sub(const Var& a, const Var& b) {
    check_same_shape(a, b, "sub");
    Tensor out(a->val.shape());
    const int64_t n = out.numel();
    for (int64_t i = 0; i < n; ++i) out[i] = a->val[i] - b->val[i];
    return make_node(std::move(out), {a, b}, [](Node& nd) {
        const int64_t m = nd.val.numel();
        Node& pa = *nd.parents[0];
        Node& pb = *nd.parents[1];
        if (pa.requires_grad) {
            ensure_grad(pa);
            for (int64_t i = 0; i < m; ++i) pa.grad[i] += nd.grad[i];
        }
        if (pb.requires_grad) {
            ensure_grad(pb);
            for (int64_t i = 0; i < m; ++i) pb.grad[i] -= nd.grad[i];
        }
    });
}

Var mul(const Var& a, const Var& b) {
    check_same_shape(a, b, "mul");
    Tensor out(a->val.shape());
    const int64_t n = out.numel();
    for (int64_t i = 0; i < n; ++i) out[i] = a->val[i] * b->val[i];
    return make_node(std::move(out), {a, b}, [](Node& nd) {
        const int64_t m = nd.val.numel();
        Node& pa = *nd.parents[0];
        Node& pb = *nd.parents[1];
        if (pa.requires_grad) {
            ensure_grad(pa);
            for (int64_t i = 0; i < m; ++i) pa.grad[i] += nd.grad[i] * pb.val[i];
        }
        if (pb.requires_grad) {
            ensure_grad(pb);
            for (int64_t i = 0; i < m; ++i) pb.grad[i] += nd.grad[i] * pa.val[i];
        }
    });
}

namespace {

// Shared scaffolding for unary elementwise ops: dval(x, y) given input and output.
template <typename Fwd, typename Bwd>
Var unary(const Var& a, Fwd fwd, Bwd dval) {
    Tensor out(a->val.shape());
    const int64_t n = out.numel();
    for (int64_t i = 0; i < n; ++i) out[i] = fwd(a->val[i]);
    return make_node(std::move(out), {a}, [dval](Node& nd) {
        Node& p = *nd.parents[0];
        if (!p.requires_grad) return;
        ensure_grad(p);
        const int64_t m = nd.val.numel();
        for (int64_t i = 0; i < m; ++i) p.grad[i] += nd.grad[i] * dval(p.val[i], nd.val[i]);
    });
}

}  // namespace

Var add_scalar(const Var& a, double c) {
    return unary(a, [c](double x) { return x + c; }, [](double, double) { return 1.0; });
}

Var mul_scalar(const Var& a, double c) {
    return unary(a, [c](double x) { return x * c; }, [c](double, double) { return c; });
}

Var abs(const Var& a) {
    return unary(a, [](double x) { return std::fabs(x); },
                 [](double x, double) { return x > 0 ? 1.0 : (x < 0 ? -1.0 : 0.0); });
}

Var relu(const Var& a) {
    return unary(a, [](double x) { return x > 0 ? x : 0.0; },
                 [](double x, double) { return x > 0 ? 1.0 : 0.0; });
}

Var sigmoid(const Var& a) {
    auto sg = [](double x) {
        if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
        double e = std::exp(x);
        return e / (1.0 + e);
    };
    return unary(a, sg, [](double, double y) { return y * (1.0 - y); });
}

Var log(const Var& a) {
    return unary(a, [](double x) { return std::log(x); },
                 [](double x, double) { return 1.0 / x; });
}

Var exp(const Var& a) {
    return unary(a, [](double x) { return std::exp(x); },
                 [](double, double y) { return y; });
}

Var clamp(const Var& a, double lo, double hi) {
    return unary(a, [lo, hi](double x) { return std::min(hi, std::max(lo, x)); },
                 [lo, hi](double x, double) { return (x > lo && x < hi) ? 1.0 : 0.0; });
}

// ---------------------------------------------------------------------------
// shape
// ---------------------------------------------------------------------------

Var reshape(const Var& a, std::vector<int64_t> shape) {
    Tensor out = a->val.reshaped(std::move(shape));
    return make_node(std::move(out), {a}, [](Node& nd) {
        Node& p = *nd.parents[0];
        if (!p.requires_grad) return;
        ensure_grad(p);
        const int64_t m = nd.val.numel();
        for (int64_t i = 0; i < m; ++i) p.grad[i] += nd.grad[i];
    });
}

Var flatten2(const Var& a) {
    const int64_t n = a->val.dim(0);
    return reshape(a, {n, a->val.numel() / n});
}

// ---------------------------------------------------------------------------
// convolution
// ---------------------------------------------------------------------------

Var conv2d(const Var& x, const Var& w, const Var& b, int stride, int pad) {
    const Tensor& X = x->val;
    const Tensor& W = w->val;
    if (X.ndim() != 4 || W.ndim() != 4 || X.dim(1) != W.dim(1))
        throw InvalidInputError("conv2d: bad shapes " + X.shape_str() + " w " + W.shape_str());
    const int64_t N = X.dim(0), Ci = X.dim(1), H = X.dim(2), Wd = X.dim(3);
    const int64_t Co = W.dim(0), kh = W.dim(2), kw = W.dim(3);
    const int64_t OH = (H + 2 * pad - kh) / stride + 1;
    const int64_t OW = (Wd + 2 * pad - kw) / stride + 1;
    Tensor out({N, Co, OH, OW});
    for (int64_t n = 0; n < N; ++n)
        for (int64_t co = 0; co < Co; ++co)
            for (int64_t oh = 0; oh < OH; ++oh)
                for (int64_t ow = 0; ow < OW; ++ow) {
                    double acc = b->val[co];
                    for (int64_t ci = 0; ci < Ci; ++ci)
                        for (int64_t ky = 0; ky < kh; ++ky) {
                            const int64_t ih = oh * stride - pad + ky;
                            if (ih < 0 || ih >= H) continue;
                            for (int64_t kx = 0; kx < kw; ++kx) {
                                const int64_t iw = ow * stride - pad + kx;
                                if (iw < 0 || iw >= Wd) continue;
                                acc += X.at4(n, ci, ih, iw) * W.at4(co, ci, ky, kx);
                            }
                        }
                    out.at4(n, co, oh, ow) = acc;
                }
    return make_node(std::move(out), {x, w, b}, [stride, pad](Node& nd) {
        Node& px = *nd.parents[0];
        Node& pw = *nd.parents[1];
        Node& pb = *nd.parents[2];
        const Tensor& X = px.val;
        const Tensor& W = pw.val;
        const int64_t N = X.dim(0), Ci = X.dim(1), H = X.dim(2), Wd = X.dim(3);
        const int64_t Co = W.dim(0), kh = W.dim(2), kw = W.dim(3);
        const int64_t OH = nd.val.dim(2), OW = nd.val.dim(3);
        const bool gx = px.requires_grad, gw = pw.requires_grad, gb = pb.requires_grad;
        if (gx) ensure_grad(px);
        if (gw) ensure_grad(pw);
        if (gb) ensure_grad(pb);
        for (int64_t n = 0; n < N; ++n)
            for (int64_t co = 0; co < Co; ++co)
                for (int64_t oh = 0; oh < OH; ++oh)
                    for (int64_t ow = 0; ow < OW; ++ow) {
                        const double g = nd.grad.at4(n, co, oh, ow);
                        if (gb) pb.grad[co] += g;
                        for (int64_t ci = 0; ci < Ci; ++ci)
                            for (int64_t ky = 0; ky < kh; ++ky) {
                                const int64_t ih = oh * stride - pad + ky;
                                if (ih < 0 || ih >= H) continue;
                                for (int64_t kx = 0; kx < kw; ++kx) {
                                    const int64_t iw = ow * stride - pad + kx;
                                    if (iw < 0 || iw >= Wd) continue;
                                    if (gx) px.grad.at4(n, ci, ih, iw) += g * W.at4(co, ci, ky, kx);
                                    if (gw) pw.grad.at4(co, ci, ky, kx) += g * X.at4(n, ci, ih, iw);
                                }
                            }
                    }
    });
}

Var conv_transpose2d(const Var& x, const Var& w, const Var& b, int stride, int pad) {
    const Tensor& X = x->val;
    const Tensor& W = w->val;
    if (X.ndim() != 4 || W.ndim() != 4 || X.dim(1) != W.dim(0))
        throw InvalidInputError("conv_transpose2d: bad shapes " + X.shape_str() + " w " +
                                W.shape_str());
    const int64_t N = X.dim(0), Ci = X.dim(1), H = X.dim(2), Wd = X.dim(3);
    const int64_t Co = W.dim(1), kh = W.dim(2), kw = W.dim(3);
    const int64_t OH = (H - 1) * stride - 2 * pad + kh;
    const int64_t OW = (Wd - 1) * stride - 2 * pad + kw;
    Tensor out({N, Co, OH, OW});
    for (int64_t n = 0; n < N; ++n) {
        for (int64_t co = 0; co < Co; ++co) {
            const double bias = b->val[co];
            for (int64_t i = 0; i < OH * OW; ++i)
                out[((n * Co + co) * OH * OW) + i] = bias;
        }
        for (int64_t ci = 0; ci < Ci; ++ci)
            for (int64_t ih = 0; ih < H; ++ih)
                for (int64_t iw = 0; iw < Wd; ++iw) {
                    const double v = X.at4(n, ci, ih, iw);
                    for (int64_t co = 0; co < Co; ++co)
                        for (int64_t ky = 0; ky < kh; ++ky) {
                            const int64_t oh = ih * stride - pad + ky;
                            if (oh < 0 || oh >= OH) continue;
                            for (int64_t kx = 0; kx < kw; ++kx) {
                                const int64_t ow = iw * stride - pad + kx;
                                if (ow < 0 || ow >= OW) continue;
                                out.at4(n, co, oh, ow) += v * W.at4(ci, co, ky, kx);
                            }
                        }
                }
    }
    return make_node(std::move(out), {x, w, b}, [stride, pad](Node& nd) {
        Node& px = *nd.parents[0];
        Node& pw = *nd.parents[1];
        Node& pb = *nd.parents[2];
        const Tensor& X = px.val;
        const Tensor& W = pw.val;
        const int64_t N = X.dim(0), Ci = X.dim(1), H = X.dim(2), Wd = X.dim(3);
        const int64_t Co = W.dim(1), kh = W.dim(2), kw = W.dim(3);
        const int64_t OH = nd.val.dim(2), OW = nd.val.dim(3);
        const bool gx = px.requires_grad, gw = pw.requires_grad, gb = pb.requires_grad;
        if (gx) ensure_grad(px);
        if (gw) ensure_grad(pw);
        if (gb) ensure_grad(pb);
        if (gb) {
            for (int64_t n = 0; n < N; ++n)
                for (int64_t co = 0; co < Co; ++co)
                    for (int64_t oh = 0; oh < OH; ++oh)
                        for (int64_t ow = 0; ow < OW; ++ow)
                            pb.grad[co] += nd.grad.at4(n, co, oh, ow);
        }
        for (int64_t n = 0; n < N; ++n)
            for (int64_t ci = 0; ci < Ci; ++ci)
                for (int64_t ih = 0; ih < H; ++ih)
                    for (int64_t iw = 0; iw < Wd; ++iw) {
                        const double xv = X.at4(n, ci, ih, iw);
                        double dx = 0.0;
                        for (int64_t co = 0; co < Co; ++co)
                            for (int64_t ky = 0; ky < kh; ++ky) {
                                const int64_t oh = ih * stride - pad + ky;
                                if (oh < 0 || oh >= OH) continue;
                                for (int64_t kx = 0; kx < kw; ++kx) {
                                    const int64_t ow = iw * stride - pad + kx;
                                    if (ow < 0 || ow >= OW) continue;
                                    const double g = nd.grad.at4(n, co, oh, ow);
                                    dx += g * W.at4(ci, co, ky, kx);
                                    if (gw) pw.grad.at4(ci, co, ky, kx) += g * xv;
                                }
                            }
                        if (gx) px.grad.at4(n, ci, ih, iw) += dx;
                    }
    });
}

Var linear(const Var& x, const Var& w, const Var& b) {
    const Tensor& X = x->val;
    const Tensor& W = w->val;
    if (X.ndim() != 2 || W.ndim() != 2 || X.dim(1) != W.dim(1))
        throw InvalidInputError("linear: bad shapes " + X.shape_str() + " w " + W.shape_str());
    const int64_t N = X.dim(0), D = X.dim(1), O = W.dim(0);
    Tensor out({N, O});
    for (int64_t n = 0; n < N; ++n)
        for (int64_t o = 0; o < O; ++o) {
            double acc = b->val[o];
            const double* xr = X.ptr() + n * D;
            const double* wr = W.ptr() + o * D;
            for (int64_t d = 0; d < D; ++d) acc += xr[d] * wr[d];
            out.at2(n, o) = acc;
        }
    return make_node(std::move(out), {x, w, b}, [](Node& nd) {
        Node& px = *nd.parents[0];
        Node& pw = *nd.parents[1];
        Node& pb = *nd.parents[2];
        const int64_t N = px.val.dim(0), D = px.val.dim(1), O = pw.val.dim(0);
        const bool gx = px.requires_grad, gw = pw.requires_grad, gb = pb.requires_grad;
        if (gx) ensure_grad(px);
        if (gw) ensure_grad(pw);
        if (gb) ensure_grad(pb);
        for (int64_t n = 0; n < N; ++n)
            for (int64_t o = 0; o < O; ++o) {
                const double g = nd.grad.at2(n, o);
                if (gb) pb.grad[o] += g;
                const double* xr = px.val.ptr() + n * D;
                const double* wr = pw.val.ptr() + o * D;
                double* dxr = gx ? px.grad.ptr() + n * D : nullptr;
                double* dwr = gw ? pw.grad.ptr() + o * D : nullptr;
                for (int64_t d = 0; d < D; ++d) {
                    if (dxr) dxr[d] += g * wr[d];
                    if (dwr) dwr[d] += g * xr[d];
                }
            }
    });
}

// ---------------------------------------------------------------------------
// pooling / resampling
// ---------------------------------------------------------------------------

Var avg_pool_to(const Var& x, int64_t out_side) {
    const Tensor& X = x->val;
    const int64_t N = X.dim(0), C = X.dim(1), H = X.dim(2), W = X.dim(3);
    if (H != W || H % out_side != 0)
        throw InvalidInputError("avg_pool_to: side " + std::to_string(H) +
                                " not divisible by " + std::to_string(out_side));
    const int64_t k = H / out_side;
    Tensor out({N, C, out_side, out_side});
    const double inv = 1.0 / static_cast<double>(k * k);
    for (int64_t n = 0; n < N; ++n)
        for (int64_t c = 0; c < C; ++c)
            for (int64_t oh = 0; oh < out_side; ++oh)
                for (int64_t ow = 0; ow < out_side; ++ow) {
                    double acc = 0.0;
                    for (int64_t dy = 0; dy < k; ++dy)
                        for (int64_t dx = 0; dx < k; ++dx)
                            acc += X.at4(n, c, oh * k + dy, ow * k + dx);
                    out.at4(n, c, oh, ow) = acc * inv;
                }
    return make_node(std::move(out), {x}, [k, inv](Node& nd) {
        Node& p = *nd.parents[0];
        if (!p.requires_grad) return;
        ensure_grad(p);
        const int64_t N = nd.val.dim(0), C = nd.val.dim(1), S = nd.val.dim(2);
        for (int64_t n = 0; n < N; ++n)
            for (int64_t c = 0; c < C; ++c)
                for (int64_t oh = 0; oh < S; ++oh)
                    for (int64_t ow = 0; ow < S; ++ow) {
                        const double g = nd.grad.at4(n, c, oh, ow) * inv;
                        for (int64_t dy = 0; dy < k; ++dy)
                            for (int64_t dx = 0; dx < k; ++dx)
                                p.grad.at4(n, c, oh * k + dy, ow * k + dx) += g;
                    }
    });
}

namespace {

struct LerpIdx {
    int64_t i0, i1;
    double w1;  // weight of i1; i0 gets (1 - w1)
};

// align_corners=false source coordinate for a destination index.
LerpIdx lerp_index(int64_t dst, int64_t dst_size, int64_t src_size) {
    const double scale = static_cast<double>(src_size) / static_cast<double>(dst_size);
    double s = (static_cast<double>(dst) + 0.5) * scale - 0.5;
    if (s < 0) s = 0;
    const double f = std::floor(s);
    int64_t i0 = static_cast<int64_t>(f);
    double w1 = s - f;
    if (i0 >= src_size - 1) {
        i0 = src_size - 1;
        w1 = 0.0;
    }
    return {i0, std::min(i0 + 1, src_size - 1), w1};
}

}  // namespace

Var upsample_bilinear(const Var& x, int64_t out_h, int64_t out_w) {
    const Tensor& X = x->val;
    const int64_t N = X.dim(0), C = X.dim(1), H = X.dim(2), W = X.dim(3);
    Tensor out({N, C, out_h, out_w});
    std::vector<LerpIdx> ys(static_cast<size_t>(out_h)), xs(static_cast<size_t>(out_w));
    for (int64_t i = 0; i < out_h; ++i) ys[static_cast<size_t>(i)] = lerp_index(i, out_h, H);
    for (int64_t i = 0; i < out_w; ++i) xs[static_cast<size_t>(i)] = lerp_index(i, out_w, W);
    for (int64_t n = 0; n < N; ++n)
        for (int64_t c = 0; c < C; ++c)
            for (int64_t oh = 0; oh < out_h; ++oh) {
                const LerpIdx& ly = ys[static_cast<size_t>(oh)];
                for (int64_t ow = 0; ow < out_w; ++ow) {
                    const LerpIdx& lx = xs[static_cast<size_t>(ow)];
                    const double v00 = X.at4(n, c, ly.i0, lx.i0);
                    const double v01 = X.at4(n, c, ly.i0, lx.i1);
                    const double v10 = X.at4(n, c, ly.i1, lx.i0);
                    const double v11 = X.at4(n, c, ly.i1, lx.i1);
                    out.at4(n, c, oh, ow) = (1 - ly.w1) * ((1 - lx.w1) * v00 + lx.w1 * v01) +
                                            ly.w1 * ((1 - lx.w1) * v10 + lx.w1 * v11);
                }
            }
    return make_node(std::move(out), {x}, [ys, xs](Node& nd) {
        Node& p = *nd.parents[0];
        if (!p.requires_grad) return;
        ensure_grad(p);
        const int64_t N = nd.val.dim(0), C = nd.val.dim(1);
        const int64_t OH = nd.val.dim(2), OW = nd.val.dim(3);
        for (int64_t n = 0; n < N; ++n)
            for (int64_t c = 0; c < C; ++c)
                for (int64_t oh = 0; oh < OH; ++oh) {
                    const LerpIdx& ly = ys[static_cast<size_t>(oh)];
                    for (int64_t ow = 0; ow < OW; ++ow) {
                        const LerpIdx& lx = xs[static_cast<size_t>(ow)];
                        const double g = nd.grad.at4(n, c, oh, ow);
                        p.grad.at4(n, c, ly.i0, lx.i0) += g * (1 - ly.w1) * (1 - lx.w1);
                        p.grad.at4(n, c, ly.i0, lx.i1) += g * (1 - ly.w1) * lx.w1;
                        p.grad.at4(n, c, ly.i1, lx.i0) += g * ly.w1 * (1 - lx.w1);
                        p.grad.at4(n, c, ly.i1, lx.i1) += g * ly.w1 * lx.w1;
                    }
                }
    });
}

Var channel_mean(const Var& x) {
    const Tensor& X = x->val;
    const int64_t N = X.dim(0), C = X.dim(1), H = X.dim(2), W = X.dim(3);
    Tensor out({N, 1, H, W});
    const double inv = 1.0 / static_cast<double>(C);
    for (int64_t n = 0; n < N; ++n)
        for (int64_t h = 0; h < H; ++h)
            for (int64_t w = 0; w < W; ++w) {
                double acc = 0.0;
                for (int64_t c = 0; c < C; ++c) acc += X.at4(n, c, h, w);
                out.at4(n, 0, h, w) = acc * inv;
            }
    return make_node(std::move(out), {x}, [inv](Node& nd) {
        Node& p = *nd.parents[0];
        if (!p.requires_grad) return;
        ensure_grad(p);
        const int64_t N = p.val.dim(0), C = p.val.dim(1), H = p.val.dim(2), W = p.val.dim(3);
        for (int64_t n = 0; n < N; ++n)
            for (int64_t h = 0; h < H; ++h)
                for (int64_t w = 0; w < W; ++w) {
                    const double g = nd.grad.at4(n, 0, h, w) * inv;
                    for (int64_t c = 0; c < C; ++c) p.grad.at4(n, c, h, w) += g;
                }
    });
}

Var broadcast_mul(const Var& mask, const Var& x) {
    const Tensor& M = mask->val;
    const Tensor& X = x->val;
    if (M.dim(1) != 1 || M.dim(0) != X.dim(0) || M.dim(2) != X.dim(2) || M.dim(3) != X.dim(3))
        throw InvalidInputError("broadcast_mul: mask " + M.shape_str() + " vs x " + X.shape_str());
    const int64_t N = X.dim(0), C = X.dim(1), H = X.dim(2), W = X.dim(3);
    Tensor out(X.shape());
    for (int64_t n = 0; n < N; ++n)
        for (int64_t c = 0; c < C; ++c)
            for (int64_t h = 0; h < H; ++h)
                for (int64_t w = 0; w < W; ++w)
                    out.at4(n, c, h, w) = M.at4(n, 0, h, w) * X.at4(n, c, h, w);
    return make_node(std::move(out), {mask, x}, [](Node& nd) {
        Node& pm = *nd.parents[0];
        Node& px = *nd.parents[1];
        const int64_t N = px.val.dim(0), C = px.val.dim(1), H = px.val.dim(2), W = px.val.dim(3);
        const bool gm = pm.requires_grad, gx = px.requires_grad;
        if (gm) ensure_grad(pm);
        if (gx) ensure_grad(px);
        for (int64_t n = 0; n < N; ++n)
            for (int64_t c = 0; c < C; ++c)
                for (int64_t h = 0; h < H; ++h)
                    for (int64_t w = 0; w < W; ++w) {
                        const double g = nd.grad.at4(n, c, h, w);
                        if (gm) pm.grad.at4(n, 0, h, w) += g * px.val.at4(n, c, h, w);
                        if (gx) px.grad.at4(n, c, h, w) += g * pm.val.at4(n, 0, h, w);
                    }
    });
}

// ---------------------------------------------------------------------------
// patch attention
// ---------------------------------------------------------------------------

namespace {

// Softmax of alpha * z over a patch, shared by forward and backward.
void patch_softmax(double alpha, const double* z, int64_t m, std::vector<double>& w) {
    w.resize(static_cast<size_t>(m));
    double mx = -std::numeric_limits<double>::infinity();
    for (int64_t j = 0; j < m; ++j) mx = std::max(mx, alpha * z[j]);
    double sum = 0.0;
    for (int64_t j = 0; j < m; ++j) {
        w[static_cast<size_t>(j)] = std::exp(alpha * z[j] - mx);
        sum += w[static_cast<size_t>(j)];
    }
    for (int64_t j = 0; j < m; ++j) w[static_cast<size_t>(j)] /= sum;
}

}  // namespace

Var patch_attention(const Var& query, const Var& kv, int patch) {
    check_same_shape(query, kv, "patch_attention");
    const Tensor& Q = query->val;
    const int64_t S = Q.dim(2);
    if (Q.ndim() != 4 || Q.dim(2) != Q.dim(3))
        throw InvalidInputError("patch_attention: expects square (N,C,S,S) maps");
    if (patch <= 0 || S % patch != 0)
        throw ConfigError("patch_attention: patch " + std::to_string(patch) +
                          " does not divide side " + std::to_string(S));
    const int64_t N = Q.dim(0), C = Q.dim(1);
    const int64_t P = patch, m = P * P;
    Tensor out(Q.shape());
    std::vector<double> z(static_cast<size_t>(m)), w;
    for (int64_t n = 0; n < N; ++n)
        for (int64_t c = 0; c < C; ++c)
            for (int64_t py = 0; py < S; py += P)
                for (int64_t px = 0; px < S; px += P) {
                    for (int64_t j = 0; j < m; ++j)
                        z[static_cast<size_t>(j)] =
                            kv->val.at4(n, c, py + j / P, px + j % P);
                    for (int64_t qy = 0; qy < P; ++qy)
                        for (int64_t qx = 0; qx < P; ++qx) {
                            const double alpha = Q.at4(n, c, py + qy, px + qx);
                            patch_softmax(alpha, z.data(), m, w);
                            double beta = 0.0;
                            for (int64_t j = 0; j < m; ++j)
                                beta += w[static_cast<size_t>(j)] * z[static_cast<size_t>(j)];
                            out.at4(n, c, py + qy, px + qx) = beta;
                        }
                }
    return make_node(std::move(out), {query, kv}, [P, m](Node& nd) {
        Node& pq = *nd.parents[0];
        Node& pk = *nd.parents[1];
        const bool gq = pq.requires_grad, gk = pk.requires_grad;
        if (!gq && !gk) return;
        if (gq) ensure_grad(pq);
        if (gk) ensure_grad(pk);
        const int64_t N = nd.val.dim(0), C = nd.val.dim(1), S = nd.val.dim(2);
        std::vector<double> z(static_cast<size_t>(m)), w;
        for (int64_t n = 0; n < N; ++n)
            for (int64_t c = 0; c < C; ++c)
                for (int64_t py = 0; py < S; py += P)
                    for (int64_t px = 0; px < S; px += P) {
                        for (int64_t j = 0; j < m; ++j)
                            z[static_cast<size_t>(j)] =
                                pk.val.at4(n, c, py + j / P, px + j % P);
                        for (int64_t qy = 0; qy < P; ++qy)
                            for (int64_t qx = 0; qx < P; ++qx) {
                                const double g = nd.grad.at4(n, c, py + qy, px + qx);
                                if (g == 0.0) continue;
                                const double alpha = pq.val.at4(n, c, py + qy, px + qx);
                                const double beta = nd.val.at4(n, c, py + qy, px + qx);
                                patch_softmax(alpha, z.data(), m, w);
                                if (gq) {
                                    // d beta / d alpha = sum_j w_j z_j (z_j - beta)
                                    double da = 0.0;
                                    for (int64_t j = 0; j < m; ++j) {
                                        const double zj = z[static_cast<size_t>(j)];
                                        da += w[static_cast<size_t>(j)] * zj * (zj - beta);
                                    }
                                    pq.grad.at4(n, c, py + qy, px + qx) += g * da;
                                }
                                if (gk) {
                                    // d beta / d z_j = w_j (1 + alpha (z_j - beta))
                                    for (int64_t j = 0; j < m; ++j) {
                                        const double zj = z[static_cast<size_t>(j)];
                                        pk.grad.at4(n, c, py + j / P, px + j % P) +=
                                            g * w[static_cast<size_t>(j)] *
                                            (1.0 + alpha * (zj - beta));
                                    }
                                }
                            }
                    }
    });
}

// ---------------------------------------------------------------------------
// reductions
// ---------------------------------------------------------------------------

Var sum_all(const Var& a) {
    double acc = 0.0;
    const int64_t n = a->val.numel();
    for (int64_t i = 0; i < n; ++i) acc += a->val[i];
    return make_node(Tensor::scalar(acc), {a}, [](Node& nd) {
        Node& p = *nd.parents[0];
        if (!p.requires_grad) return;
        ensure_grad(p);
        const double g = nd.grad[0];
        const int64_t m = p.val.numel();
        for (int64_t i = 0; i < m; ++i) p.grad[i] += g;
    });
}

Var row_sumsq(const Var& a) {
    const Tensor& X = a->val;
    if (X.ndim() != 2) throw InvalidInputError("row_sumsq expects (N,D)");
    const int64_t N = X.dim(0), D = X.dim(1);
    Tensor out({N});
    for (int64_t n = 0; n < N; ++n) {
        double acc = 0.0;
        const double* r = X.ptr() + n * D;
        for (int64_t d = 0; d < D; ++d) acc += r[d] * r[d];
        out[n] = acc;
    }
    return make_node(std::move(out), {a}, [](Node& nd) {
        Node& p = *nd.parents[0];
        if (!p.requires_grad) return;
        ensure_grad(p);
        const int64_t N = p.val.dim(0), D = p.val.dim(1);
        for (int64_t n = 0; n < N; ++n) {
            const double g = 2.0 * nd.grad[n];
            const double* r = p.val.ptr() + n * D;
            double* dr = p.grad.ptr() + n * D;
            for (int64_t d = 0; d < D; ++d) dr[d] += g * r[d];
        }
    });
}

Var row_l2norm(const Var& a) {
    const Tensor& X = a->val;
    if (X.ndim() != 2) throw InvalidInputError("row_l2norm expects (N,D)");
    const int64_t N = X.dim(0), D = X.dim(1);
    Tensor out({N});
    for (int64_t n = 0; n < N; ++n) {
        double acc = 0.0;
        const double* r = X.ptr() + n * D;
        for (int64_t d = 0; d < D; ++d) acc += r[d] * r[d];
        out[n] = std::sqrt(acc);
    }
    return make_node(std::move(out), {a}, [](Node& nd) {
        Node& p = *nd.parents[0];
        if (!p.requires_grad) return;
        ensure_grad(p);
        const int64_t N = p.val.dim(0), D = p.val.dim(1);
        for (int64_t n = 0; n < N; ++n) {
            const double norm = nd.val[n];
            if (norm <= 0.0) continue;  // zero row: subgradient 0
            const double g = nd.grad[n] / norm;
            const double* r = p.val.ptr() + n * D;
            double* dr = p.grad.ptr() + n * D;
            for (int64_t d = 0; d < D; ++d) dr[d] += g * r[d];
        }
    });
}

Var row_l2_normalize(const Var& a, bool* had_zero_row) {
    const Tensor& X = a->val;
    if (X.ndim() != 2) throw InvalidInputError("row_l2_normalize expects (N,D)");
    const int64_t N = X.dim(0), D = X.dim(1);
    Tensor out({N, D});
    Tensor norms({N});
    for (int64_t n = 0; n < N; ++n) {
        double acc = 0.0;
        const double* r = X.ptr() + n * D;
        for (int64_t d = 0; d < D; ++d) acc += r[d] * r[d];
        const double norm = std::sqrt(acc);
        norms[n] = norm;
        double* o = out.ptr() + n * D;
        if (norm > 0.0) {
            for (int64_t d = 0; d < D; ++d) o[d] = r[d] / norm;
        } else {
            if (had_zero_row) *had_zero_row = true;
            for (int64_t d = 0; d < D; ++d) o[d] = 0.0;  // zero row maps to zero vector
        }
    }
    return make_node(std::move(out), {a}, [norms](Node& nd) {
        Node& p = *nd.parents[0];
        if (!p.requires_grad) return;
        ensure_grad(p);
        const int64_t N = p.val.dim(0), D = p.val.dim(1);
        for (int64_t n = 0; n < N; ++n) {
            const double norm = norms[n];
            if (norm <= 0.0) continue;
            const double* u = nd.val.ptr() + n * D;
            const double* g = nd.grad.ptr() + n * D;
            double dot = 0.0;
            for (int64_t d = 0; d < D; ++d) dot += u[d] * g[d];
            double* dr = p.grad.ptr() + n * D;
            for (int64_t d = 0; d < D; ++d) dr[d] += (g[d] - u[d] * dot) / norm;
        }
    });
}

Var gram(const Var& u) {
    const Tensor& U = u->val;
    if (U.ndim() != 2) throw InvalidInputError("gram expects (N,D)");
    const int64_t N = U.dim(0), D = U.dim(1);
    Tensor out({N, N});
    for (int64_t i = 0; i < N; ++i)
        for (int64_t j = 0; j < N; ++j) {
            double acc = 0.0;
            const double* a = U.ptr() + i * D;
            const double* b = U.ptr() + j * D;
            for (int64_t d = 0; d < D; ++d) acc += a[d] * b[d];
            out.at2(i, j) = acc;
        }
    return make_node(std::move(out), {u}, [](Node& nd) {
        Node& p = *nd.parents[0];
        if (!p.requires_grad) return;
        ensure_grad(p);
        const int64_t N = p.val.dim(0), D = p.val.dim(1);
        // dU = (dG + dG^T) U
        for (int64_t i = 0; i < N; ++i) {
            double* dui = p.grad.ptr() + i * D;
            for (int64_t j = 0; j < N; ++j) {
                const double g = nd.grad.at2(i, j) + nd.grad.at2(j, i);
                if (g == 0.0) continue;
                const double* uj = p.val.ptr() + j * D;
                for (int64_t d = 0; d < D; ++d) dui[d] += g * uj[d];
            }
        }
    });
}

Var row_logsumexp_offdiag(const Var& g) {
    const Tensor& G = g->val;
    if (G.ndim() != 2 || G.dim(0) != G.dim(1) || G.dim(0) < 2)
        throw InvalidInputError("row_logsumexp_offdiag expects square (N,N), N >= 2");
    const int64_t N = G.dim(0);
    Tensor out({N});
    for (int64_t i = 0; i < N; ++i) {
        double mx = -std::numeric_limits<double>::infinity();
        for (int64_t k = 0; k < N; ++k)
            if (k != i) mx = std::max(mx, G.at2(i, k));
        double sum = 0.0;
        for (int64_t k = 0; k < N; ++k)
            if (k != i) sum += std::exp(G.at2(i, k) - mx);
        out[i] = mx + std::log(sum);
    }
    return make_node(std::move(out), {g}, [](Node& nd) {
        Node& p = *nd.parents[0];
        if (!p.requires_grad) return;
        ensure_grad(p);
        const int64_t N = p.val.dim(0);
        for (int64_t i = 0; i < N; ++i) {
            const double gi = nd.grad[i];
            if (gi == 0.0) continue;
            const double lse = nd.val[i];
            for (int64_t k = 0; k < N; ++k)
                if (k != i) p.grad.at2(i, k) += gi * std::exp(p.val.at2(i, k) - lse);
        }
    });
}

Var weighted_sum(const Var& a, Tensor weights) {
    if (!a->val.same_shape(weights))
        throw InvalidInputError("weighted_sum: weight shape mismatch");
    double acc = 0.0;
    const int64_t n = a->val.numel();
    for (int64_t i = 0; i < n; ++i) acc += a->val[i] * weights[i];
    return make_node(Tensor::scalar(acc), {a}, [weights](Node& nd) {
        Node& p = *nd.parents[0];
        if (!p.requires_grad) return;
        ensure_grad(p);
        const double g = nd.grad[0];
        const int64_t m = p.val.numel();
        for (int64_t i = 0; i < m; ++i) p.grad[i] += g * weights[i];
    });
}

}  // namespace benet::ag
