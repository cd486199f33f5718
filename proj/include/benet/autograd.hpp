#pragma once

#include <functional>
#include <memory>
#include <vector>

#include "benet/tensor.hpp"

namespace benet::ag {

// Reverse-mode autodiff over a dynamically built DAG. Every op records its
// parents and a pull-style backward closure; backward() walks the graph in
// reverse creation order, so fan-out (a tensor consumed by several ops)
// accumulates correctly. Graphs are rebuilt per forward pass; parameter
// nodes are long-lived leaves owned by the model.
struct Node;
using Var = std::shared_ptr<Node>;

struct Node {
    Tensor val;
    Tensor grad;  // allocated lazily by backward(); empty when untouched
    std::vector<Var> parents;
    std::function<void(Node&)> backward_op;
    bool requires_grad = false;
    int64_t seq = 0;

    const Tensor& v() const { return val; }
    bool has_grad() const { return !grad.empty(); }
};

// When grad mode is off (inference), ops skip recording parents/closures.
bool grad_enabled();
struct NoGradGuard {
    NoGradGuard();
    ~NoGradGuard();
    bool prev;
};

Var leaf(Tensor value, bool requires_grad = false);
Var constant(Tensor value);

// Runs backprop from a scalar root. Zeroes the grads of every reachable node
// first, then accumulates; leaf grads are read by the optimizer afterwards.
void backward(const Var& root);

// ---- elementwise ----
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var add_scalar(const Var& a, double c);
Var mul_scalar(const Var& a, double c);
Var abs(const Var& a);       // subgradient 0 at 0
Var relu(const Var& a);      // subgradient 0 at 0
Var sigmoid(const Var& a);
Var log(const Var& a);
Var exp(const Var& a);
Var clamp(const Var& a, double lo, double hi);  // zero gradient outside [lo, hi]

// ---- shape ----
Var reshape(const Var& a, std::vector<int64_t> shape);
Var flatten2(const Var& a);  // (N, ...) -> (N, rest)

// ---- neural-net ops, all NCHW ----
// x (N,Ci,H,W), w (Co,Ci,kh,kw), b (Co)
Var conv2d(const Var& x, const Var& w, const Var& b, int stride, int pad);
// x (N,Ci,H,W), w (Ci,Co,kh,kw), b (Co); out side = (in-1)*stride - 2*pad + k
Var conv_transpose2d(const Var& x, const Var& w, const Var& b, int stride, int pad);
// x (N,D), w (O,D), b (O) -> (N,O)
Var linear(const Var& x, const Var& w, const Var& b);
// Block average pooling to a square side that divides the input side.
Var avg_pool_to(const Var& x, int64_t out_side);
Var upsample_bilinear(const Var& x, int64_t out_h, int64_t out_w);  // align_corners=false
Var channel_mean(const Var& x);                                     // (N,C,H,W) -> (N,1,H,W)
Var broadcast_mul(const Var& mask, const Var& x);                   // (N,1,H,W) * (N,C,H,W)

// Patch attention: for each position of the query map, alpha = query value,
// Z = the P x P tile of kv (same channel) containing that position, and the
// output is softmax(alpha * Z) . Z. Both maps are (N,C,S,S) with P | S.
Var patch_attention(const Var& query, const Var& kv, int patch);

// ---- reductions ----
Var sum_all(const Var& a);                     // -> (1)
Var row_sumsq(const Var& a);                   // (N,D) -> (N)
Var row_l2norm(const Var& a);                  // (N,D) -> (N); zero rows get zero grad
Var row_l2_normalize(const Var& a, bool* had_zero_row = nullptr);  // zero rows stay zero
Var gram(const Var& u);                        // (N,D) -> U U^T (N,N)
Var row_logsumexp_offdiag(const Var& g);       // (N,N) -> (N), diagonal excluded
Var weighted_sum(const Var& a, Tensor weights);  // sum(w .* a) -> (1); w is constant

}  // namespace benet::ag
