#include "g2d/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <numeric>
#include <unordered_set>

namespace g2d {

namespace {

// fixed-order dot product with four partial sums; the serial FMA chain is
// latency-bound and the compiler may not reassociate it
inline double dot4(const double* a, const double* b, int n) {
    double s0 = 0.0, s1 = 0.0, s2 = 0.0, s3 = 0.0;
    int i = 0;
    for (; i + 4 <= n; i += 4) {
        s0 += a[i] * b[i];
        s1 += a[i + 1] * b[i + 1];
        s2 += a[i + 2] * b[i + 2];
        s3 += a[i + 3] * b[i + 3];
    }
    for (; i < n; ++i) s0 += a[i] * b[i];
    return (s0 + s1) + (s2 + s3);
}

std::size_t shape_numel(const std::vector<int>& shape) {
    std::size_t n = 1;
    for (int e : shape) {
        if (e <= 0) throw TensorError("tensor extents must be positive");
        n *= static_cast<std::size_t>(e);
    }
    return n;
}

std::string shape_str(const std::vector<int>& s) {
    std::string out = "[";
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (i) out += ",";
        out += std::to_string(s[i]);
    }
    return out + "]";
}

void check_finite(const TensorNode& n, const char* op) {
    for (double v : n.data) {
        if (!std::isfinite(v)) {
            throw TensorError(std::string("non-finite value in output of ") + op);
        }
    }
}

std::shared_ptr<TensorNode> make_node(std::vector<int> shape, const char* op) {
    auto n = std::make_shared<TensorNode>();
    n->shape = std::move(shape);
    n->data.resize(shape_numel(n->shape));
    n->op = op;
    return n;
}

void accum(TensorNode& dst, std::span<const double> g) {
    dst.ensure_grad();
    const std::size_t n = dst.grad.size();
    for (std::size_t i = 0; i < n; ++i) dst.grad[i] += g[i];
}

bool is_scalar(const TensorNode& n) { return n.data.size() == 1; }

}  // namespace

// ---- Tensor handle ----

TensorNode& Tensor::node() const {
    if (!node_) throw TensorError("use of undefined tensor");
    return *node_;
}

Tensor Tensor::zeros(std::vector<int> shape, bool requires_grad) {
    auto n = make_node(std::move(shape), "leaf");
    n->requires_grad = requires_grad;
    return wrap(std::move(n));
}

Tensor Tensor::full(std::vector<int> shape, double value, bool requires_grad) {
    auto n = make_node(std::move(shape), "leaf");
    std::fill(n->data.begin(), n->data.end(), value);
    n->requires_grad = requires_grad;
    check_finite(*n, "full");
    return wrap(std::move(n));
}

Tensor Tensor::from_data(std::vector<int> shape, std::vector<double> data, bool requires_grad) {
    auto n = std::make_shared<TensorNode>();
    n->shape = std::move(shape);
    if (shape_numel(n->shape) != data.size()) {
        throw TensorError("data length does not match shape " + shape_str(n->shape));
    }
    n->data = std::move(data);
    n->requires_grad = requires_grad;
    check_finite(*n, "from_data");
    return wrap(std::move(n));
}

Tensor Tensor::scalar(double value, bool requires_grad) {
    return from_data({1}, {value}, requires_grad);
}

Tensor Tensor::uniform(std::vector<int> shape, double lo, double hi, Rng& rng,
                       bool requires_grad) {
    auto n = make_node(std::move(shape), "leaf");
    for (double& v : n->data) v = rng.uniform(lo, hi);
    n->requires_grad = requires_grad;
    return wrap(std::move(n));
}

std::span<double> Tensor::mutable_data() { return node().data; }

std::span<const double> Tensor::grad() const {
    const TensorNode& n = node();
    if (n.grad.empty()) throw TensorError("tensor has no gradient");
    return n.grad;
}

void Tensor::zero_grad() { node().grad.assign(node().data.size(), 0.0); }

double Tensor::item() const {
    if (numel() != 1) throw TensorError("item() on non-scalar tensor " + shape_str(shape()));
    return node().data[0];
}

double Tensor::at(std::initializer_list<int> idx) const {
    const TensorNode& n = node();
    if (idx.size() != n.shape.size()) throw TensorError("at(): rank mismatch");
    std::size_t flat = 0;
    std::size_t d = 0;
    for (int i : idx) {
        if (i < 0 || i >= n.shape[d]) throw TensorError("at(): index out of bounds");
        flat = flat * static_cast<std::size_t>(n.shape[d]) + static_cast<std::size_t>(i);
        ++d;
    }
    return n.data[flat];
}

Tensor Tensor::detach() const {
    auto n = std::make_shared<TensorNode>();
    n->shape = node().shape;
    n->data = node().data;
    return wrap(std::move(n));
}

// ---- graph ----

GradGraph GradGraph::build(const Tensor& root) {
    GradGraph g;
    std::unordered_set<TensorNode*> seen;
    // iterative post-order DFS: children (inputs) are emitted before the
    // node that consumes them
    std::vector<std::pair<TensorNode*, std::size_t>> st;
    st.emplace_back(&root.node(), 0);
    seen.insert(&root.node());
    while (!st.empty()) {
        auto& [n, i] = st.back();
        if (i < n->parents.size()) {
            TensorNode* p = n->parents[i++].get();
            if (seen.insert(p).second) st.emplace_back(p, 0);
        } else {
            g.order.push_back(n);
            st.pop_back();
        }
    }
    return g;
}

void backward(const Tensor& loss) {
    if (loss.numel() != 1) {
        throw TensorError("backward() requires a scalar loss, got " + shape_str(loss.shape()));
    }
    GradGraph g = GradGraph::build(loss);
    TensorNode& root = loss.node();
    root.ensure_grad();
    root.grad[0] += 1.0;
    for (auto it = g.order.rbegin(); it != g.order.rend(); ++it) {
        TensorNode* n = *it;
        if (n->backprop && !n->grad.empty()) n->backprop();
    }
    // consume the tape: recorded closures are single-use
    for (TensorNode* n : g.order) {
        if (n->backprop) {
            n->backprop = nullptr;
            n->parents.clear();
        }
    }
}

// ---- op helpers ----

namespace {

Tensor finish(std::shared_ptr<TensorNode> out, std::vector<std::shared_ptr<TensorNode>> parents,
              std::function<void()> backprop) {
    check_finite(*out, out->op);
    bool need = false;
    for (const auto& p : parents) need = need || p->requires_grad;
    if (need) {
        out->requires_grad = true;
        out->parents = std::move(parents);
        out->backprop = std::move(backprop);
    }
    return Tensor::wrap(std::move(out));
}

// binary elementwise with scalar-vs-tensor or identical-shape broadcasting
template <typename Fwd, typename Bwd>
Tensor binary_op(const Tensor& a, const Tensor& b, const char* opname, Fwd fwd, Bwd bwd) {
    auto an = a.node_ptr();
    auto bn = b.node_ptr();
    const bool as = is_scalar(*an);
    const bool bs = is_scalar(*bn);
    if (!as && !bs && an->shape != bn->shape) {
        throw TensorError(std::string(opname) + ": shape mismatch " + shape_str(an->shape) +
                          " vs " + shape_str(bn->shape));
    }
    const TensorNode& big = bs ? *an : *bn;
    auto out = make_node(big.shape, opname);
    const std::size_t n = out->data.size();
    const double* ap = an->data.data();
    const double* bp = bn->data.data();
    for (std::size_t i = 0; i < n; ++i) {
        fwd(out->data[i], ap[as ? 0 : i], bp[bs ? 0 : i]);
    }
    TensorNode* outp = out.get();
    return finish(
        out, {an, bn}, [an, bn, outp, as, bs, n, bwd]() {
            const double* g = outp->grad.data();
            const double* ap = an->data.data();
            const double* bp = bn->data.data();
            const double* yp = outp->data.data();
            double* ga = nullptr;
            double* gb = nullptr;
            if (an->requires_grad) {
                an->ensure_grad();
                ga = an->grad.data();
            }
            if (bn->requires_grad) {
                bn->ensure_grad();
                gb = bn->grad.data();
            }
            for (std::size_t i = 0; i < n; ++i) {
                double da = 0, db = 0;
                bwd(da, db, ap[as ? 0 : i], bp[bs ? 0 : i], yp[i], g[i]);
                if (ga) ga[as ? 0 : i] += da;
                if (gb) gb[bs ? 0 : i] += db;
            }
        });
}

template <typename Fwd, typename Bwd>
Tensor unary_op(const Tensor& a, const char* opname, Fwd fwd, Bwd bwd) {
    auto an = a.node_ptr();
    auto out = make_node(an->shape, opname);
    const std::size_t n = out->data.size();
    for (std::size_t i = 0; i < n; ++i) out->data[i] = fwd(an->data[i]);
    TensorNode* outp = out.get();
    return finish(out, {an}, [an, outp, n, bwd]() {
        an->ensure_grad();
        const double* g = outp->grad.data();
        const double* xp = an->data.data();
        const double* yp = outp->data.data();
        double* ga = an->grad.data();
        for (std::size_t i = 0; i < n; ++i) ga[i] += bwd(xp[i], yp[i]) * g[i];
    });
}

}  // namespace

// ---- elementwise ----

Tensor add(const Tensor& a, const Tensor& b) {
    return binary_op(
        a, b, "add", [](double& y, double x, double z) { y = x + z; },
        [](double& da, double& db, double, double, double, double g) {
            da = g;
            db = g;
        });
}

Tensor sub(const Tensor& a, const Tensor& b) {
    return binary_op(
        a, b, "sub", [](double& y, double x, double z) { y = x - z; },
        [](double& da, double& db, double, double, double, double g) {
            da = g;
            db = -g;
        });
}

Tensor mul(const Tensor& a, const Tensor& b) {
    return binary_op(
        a, b, "mul", [](double& y, double x, double z) { y = x * z; },
        [](double& da, double& db, double x, double z, double, double g) {
            da = g * z;
            db = g * x;
        });
}

Tensor div(const Tensor& a, const Tensor& b) {
    return binary_op(
        a, b, "div", [](double& y, double x, double z) { y = x / z; },
        [](double& da, double& db, double x, double z, double, double g) {
            da = g / z;
            db = -g * x / (z * z);
        });
}

Tensor neg(const Tensor& a) {
    return unary_op(
        a, "negate", [](double x) { return -x; }, [](double, double) { return -1.0; });
}

Tensor exp(const Tensor& a) {
    return unary_op(
        a, "exp", [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

Tensor log(const Tensor& a) {
    return unary_op(
        a, "log", [](double x) { return std::log(x); }, [](double x, double) { return 1.0 / x; });
}

Tensor sqrt(const Tensor& a) {
    return unary_op(
        a, "sqrt", [](double x) { return std::sqrt(x); },
        [](double, double y) { return 0.5 / y; });
}

Tensor sigmoid(const Tensor& a) {
    return unary_op(
        a, "sigmoid", [](double x) { return 1.0 / (1.0 + std::exp(-x)); },
        [](double, double y) { return y * (1.0 - y); });
}

Tensor relu(const Tensor& a) {
    return unary_op(
        a, "relu", [](double x) { return x > 0.0 ? x : 0.0; },
        [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

Tensor clamp(const Tensor& a, double lo, double hi) {
    if (!(lo <= hi)) throw TensorError("clamp: lo > hi");
    return unary_op(
        a, "clamp", [lo, hi](double x) { return x < lo ? lo : (x > hi ? hi : x); },
        [lo, hi](double x, double) { return (x >= lo && x <= hi) ? 1.0 : 0.0; });
}

// ---- linear algebra / structure ----

Tensor matmul(const Tensor& a, const Tensor& b) {
    auto an = a.node_ptr();
    auto bn = b.node_ptr();
    if (an->shape.size() != 2 || bn->shape.size() != 2) {
        throw TensorError("matmul: rank-2 tensors required");
    }
    const int m = an->shape[0], k = an->shape[1];
    const int k2 = bn->shape[0], n = bn->shape[1];
    if (k != k2) {
        throw TensorError("matmul: inner extents differ, " + shape_str(an->shape) + " vs " +
                          shape_str(bn->shape));
    }
    auto out = make_node({m, n}, "matmul");
    const double* A = an->data.data();
    const double* B = bn->data.data();
    double* C = out->data.data();
    for (int i = 0; i < m; ++i) {
        double* crow = C + static_cast<std::size_t>(i) * n;
        const double* arow = A + static_cast<std::size_t>(i) * k;
        for (int kk = 0; kk < k; ++kk) {
            const double av = arow[kk];
            const double* brow = B + static_cast<std::size_t>(kk) * n;
            for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
    TensorNode* outp = out.get();
    return finish(out, {an, bn}, [an, bn, outp, m, k, n]() {
        const double* G = outp->grad.data();
        if (an->requires_grad) {
            an->ensure_grad();
            double* dA = an->grad.data();
            const double* B = bn->data.data();
            // dA = G * B^T
            for (int i = 0; i < m; ++i) {
                double* darow = dA + static_cast<std::size_t>(i) * k;
                const double* grow = G + static_cast<std::size_t>(i) * n;
                for (int kk = 0; kk < k; ++kk) {
                    darow[kk] += dot4(grow, B + static_cast<std::size_t>(kk) * n, n);
                }
            }
        }
        if (bn->requires_grad) {
            bn->ensure_grad();
            double* dB = bn->grad.data();
            const double* A = an->data.data();
            // dB = A^T * G
            for (int kk = 0; kk < k; ++kk) {
                double* dbrow = dB + static_cast<std::size_t>(kk) * n;
                for (int i = 0; i < m; ++i) {
                    const double av = A[static_cast<std::size_t>(i) * k + kk];
                    const double* grow = G + static_cast<std::size_t>(i) * n;
                    for (int j = 0; j < n; ++j) dbrow[j] += av * grow[j];
                }
            }
        }
    });
}

Tensor transpose(const Tensor& a) {
    auto an = a.node_ptr();
    if (an->shape.size() != 2) throw TensorError("transpose: rank-2 tensor required");
    const int m = an->shape[0], n = an->shape[1];
    auto out = make_node({n, m}, "transpose");
    const double* X = an->data.data();
    double* Y = out->data.data();
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j)
            Y[static_cast<std::size_t>(j) * m + i] = X[static_cast<std::size_t>(i) * n + j];
    TensorNode* outp = out.get();
    return finish(out, {an}, [an, outp, m, n]() {
        an->ensure_grad();
        const double* G = outp->grad.data();
        double* dX = an->grad.data();
        for (int i = 0; i < m; ++i)
            for (int j = 0; j < n; ++j)
                dX[static_cast<std::size_t>(i) * n + j] += G[static_cast<std::size_t>(j) * m + i];
    });
}

Tensor reshape(const Tensor& a, std::vector<int> shape) {
    auto an = a.node_ptr();
    if (shape_numel(shape) != an->data.size()) {
        throw TensorError("reshape: element count mismatch " + shape_str(an->shape) + " -> " +
                          shape_str(shape));
    }
    auto out = std::make_shared<TensorNode>();
    out->shape = std::move(shape);
    out->data = an->data;
    out->op = "reshape";
    TensorNode* outp = out.get();
    return finish(out, {an}, [an, outp]() { accum(*an, outp->grad); });
}

Tensor stack(const std::vector<Tensor>& parts) {
    if (parts.empty()) throw TensorError("stack: empty input");
    const auto& s0 = parts[0].shape();
    std::vector<int> shape;
    shape.push_back(static_cast<int>(parts.size()));
    shape.insert(shape.end(), s0.begin(), s0.end());
    auto out = make_node(shape, "stack");
    const std::size_t step = parts[0].numel();
    std::vector<std::shared_ptr<TensorNode>> ps;
    ps.reserve(parts.size());
    for (std::size_t i = 0; i < parts.size(); ++i) {
        const auto& p = parts[i];
        if (p.shape() != s0) throw TensorError("stack: mismatched part shapes");
        std::copy(p.data().begin(), p.data().end(), out->data.begin() + i * step);
        ps.push_back(p.node_ptr());
    }
    TensorNode* outp = out.get();
    return finish(out, ps, [ps, outp, step]() {
        for (std::size_t i = 0; i < ps.size(); ++i) {
            TensorNode& p = *ps[i];
            if (!p.requires_grad && !p.backprop) continue;
            p.ensure_grad();
            const double* g = outp->grad.data() + i * step;
            for (std::size_t j = 0; j < step; ++j) p.grad[j] += g[j];
        }
    });
}

Tensor concat_ch(const Tensor& a, const Tensor& b) {
    auto an = a.node_ptr();
    auto bn = b.node_ptr();
    if (an->shape.size() != 3 || bn->shape.size() != 3 || an->shape[1] != bn->shape[1] ||
        an->shape[2] != bn->shape[2]) {
        throw TensorError("concat_ch: incompatible shapes " + shape_str(an->shape) + " vs " +
                          shape_str(bn->shape));
    }
    auto out = make_node({an->shape[0] + bn->shape[0], an->shape[1], an->shape[2]}, "concat_ch");
    std::copy(an->data.begin(), an->data.end(), out->data.begin());
    std::copy(bn->data.begin(), bn->data.end(), out->data.begin() + an->data.size());
    TensorNode* outp = out.get();
    const std::size_t na = an->data.size();
    return finish(out, {an, bn}, [an, bn, outp, na]() {
        if (an->requires_grad || an->backprop) {
            accum(*an, std::span<const double>(outp->grad.data(), na));
        }
        if (bn->requires_grad || bn->backprop) {
            accum(*bn, std::span<const double>(outp->grad.data() + na, bn->data.size()));
        }
    });
}

Tensor gather_rows(const Tensor& table, const std::vector<int>& ids) {
    auto tn = table.node_ptr();
    if (tn->shape.size() != 2) throw TensorError("gather_rows: rank-2 table required");
    const int v = tn->shape[0], e = tn->shape[1];
    if (ids.empty()) throw TensorError("gather_rows: empty id list");
    for (int id : ids) {
        if (id < 0 || id >= v) {
            throw TensorError("gather_rows: id " + std::to_string(id) + " out of range [0," +
                              std::to_string(v) + ")");
        }
    }
    auto out = make_node({static_cast<int>(ids.size()), e}, "gather_rows");
    for (std::size_t i = 0; i < ids.size(); ++i) {
        const double* src = tn->data.data() + static_cast<std::size_t>(ids[i]) * e;
        std::copy(src, src + e, out->data.begin() + i * e);
    }
    TensorNode* outp = out.get();
    auto idv = ids;
    return finish(out, {tn}, [tn, outp, idv, e]() {
        tn->ensure_grad();
        for (std::size_t i = 0; i < idv.size(); ++i) {
            const double* g = outp->grad.data() + i * static_cast<std::size_t>(e);
            double* dst = tn->grad.data() + static_cast<std::size_t>(idv[i]) * e;
            for (int j = 0; j < e; ++j) dst[j] += g[j];
        }
    });
}

// ---- reductions ----

Tensor sum(const Tensor& a) {
    auto an = a.node_ptr();
    auto out = make_node({1}, "sum");
    double acc = 0.0;
    for (double v : an->data) acc += v;
    out->data[0] = acc;
    TensorNode* outp = out.get();
    return finish(out, {an}, [an, outp]() {
        an->ensure_grad();
        const double g = outp->grad[0];
        for (double& v : an->grad) v += g;
    });
}

Tensor mean(const Tensor& a) {
    auto an = a.node_ptr();
    auto out = make_node({1}, "mean");
    double acc = 0.0;
    for (double v : an->data) acc += v;
    const double inv = 1.0 / static_cast<double>(an->data.size());
    out->data[0] = acc * inv;
    TensorNode* outp = out.get();
    return finish(out, {an}, [an, outp, inv]() {
        an->ensure_grad();
        const double g = outp->grad[0] * inv;
        for (double& v : an->grad) v += g;
    });
}

// ---- conv2d ----

namespace {

// valid output range along one axis for a fixed kernel offset:
// indices o with 0 <= o*stride + koff - pad < extent
inline void conv_bounds(int koff, int pad, int stride, int extent, int out_extent, int& lo,
                        int& hi) {
    int shift = koff - pad;  // i = o*stride + shift
    lo = 0;
    if (shift < 0) lo = (-shift + stride - 1) / stride;
    hi = out_extent;
    // o*stride + shift <= extent-1  =>  o <= (extent-1-shift)/stride
    const int m = extent - 1 - shift;
    if (m < 0)
        hi = 0;
    else
        hi = std::min(hi, m / stride + 1);
}

}  // namespace

Tensor conv2d(const Tensor& x, const Tensor& w, int stride, int pad) {
    return conv2d(x, w, Tensor(), stride, pad);
}

Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& b, int stride, int pad) {
    auto xn = x.node_ptr();
    auto wn = w.node_ptr();
    if (xn->shape.size() != 3 || wn->shape.size() != 4) {
        throw TensorError("conv2d: expected x[Ci,H,W], w[Co,Ci,k,k]");
    }
    const int ci = xn->shape[0], h = xn->shape[1], wdt = xn->shape[2];
    const int co = wn->shape[0], k = wn->shape[2];
    if (wn->shape[1] != ci) throw TensorError("conv2d: channel mismatch");
    if (wn->shape[3] != k) throw TensorError("conv2d: kernel must be square");
    if (stride < 1 || pad < 0 || k < 1) throw TensorError("conv2d: bad stride/pad/kernel");
    const int hn = h + 2 * pad - k;
    const int wv = wdt + 2 * pad - k;
    if (hn < 0 || wv < 0 || hn % stride != 0 || wv % stride != 0) {
        throw TensorError("conv2d: non-integral output extent");
    }
    const int ho = hn / stride + 1;
    const int wo = wv / stride + 1;
    const bool has_bias = b.defined();
    std::shared_ptr<TensorNode> bn;
    if (has_bias) {
        bn = b.node_ptr();
        if (bn->shape != std::vector<int>{co}) throw TensorError("conv2d: bias shape must be [Co]");
    }

    auto out = make_node({co, ho, wo}, "conv2d");
    const double* X = xn->data.data();
    const double* W = wn->data.data();
    double* O = out->data.data();
    for (int c = 0; c < co; ++c) {
        double* oc = O + static_cast<std::size_t>(c) * ho * wo;
        if (has_bias) {
            const double bias = bn->data[c];
            std::fill(oc, oc + static_cast<std::size_t>(ho) * wo, bias);
        }
        for (int ic = 0; ic < ci; ++ic) {
            const double* xc = X + static_cast<std::size_t>(ic) * h * wdt;
            const double* wrow = W + ((static_cast<std::size_t>(c) * ci + ic) * k) * k;
            for (int ky = 0; ky < k; ++ky) {
                for (int kx = 0; kx < k; ++kx) {
                    const double wval = wrow[static_cast<std::size_t>(ky) * k + kx];
                    int xlo, xhi, ylo, yhi;
                    conv_bounds(kx, pad, stride, wdt, wo, xlo, xhi);
                    conv_bounds(ky, pad, stride, h, ho, ylo, yhi);
                    for (int oy = ylo; oy < yhi; ++oy) {
                        const int iy = oy * stride + ky - pad;
                        const double* xr = xc + static_cast<std::size_t>(iy) * wdt + (kx - pad);
                        double* orow = oc + static_cast<std::size_t>(oy) * wo;
                        if (stride == 1) {
                            for (int ox = xlo; ox < xhi; ++ox) orow[ox] += wval * xr[ox];
                        } else {
                            for (int ox = xlo; ox < xhi; ++ox) orow[ox] += wval * xr[ox * stride];
                        }
                    }
                }
            }
        }
    }

    TensorNode* outp = out.get();
    std::vector<std::shared_ptr<TensorNode>> parents{xn, wn};
    if (has_bias) parents.push_back(bn);
    return finish(out, parents, [xn, wn, bn, outp, ci, h, wdt, co, k, ho, wo, stride, pad]() {
        const double* G = outp->grad.data();
        if (bn && bn->requires_grad) {
            bn->ensure_grad();
            for (int c = 0; c < co; ++c) {
                const double* gc = G + static_cast<std::size_t>(c) * ho * wo;
                double acc = 0.0;
                for (int i = 0; i < ho * wo; ++i) acc += gc[i];
                bn->grad[c] += acc;
            }
        }
        if (wn->requires_grad) {
            wn->ensure_grad();
            const double* X = xn->data.data();
            double* dW = wn->grad.data();
            for (int c = 0; c < co; ++c) {
                const double* gc = G + static_cast<std::size_t>(c) * ho * wo;
                for (int ic = 0; ic < ci; ++ic) {
                    const double* xc = X + static_cast<std::size_t>(ic) * h * wdt;
                    for (int ky = 0; ky < k; ++ky) {
                        for (int kx = 0; kx < k; ++kx) {
                            int xlo, xhi, ylo, yhi;
                            conv_bounds(kx, pad, stride, wdt, wo, xlo, xhi);
                            conv_bounds(ky, pad, stride, h, ho, ylo, yhi);
                            double acc = 0.0;
                            for (int oy = ylo; oy < yhi; ++oy) {
                                const int iy = oy * stride + ky - pad;
                                const double* xr =
                                    xc + static_cast<std::size_t>(iy) * wdt + (kx - pad);
                                const double* grow = gc + static_cast<std::size_t>(oy) * wo;
                                if (stride == 1) {
                                    acc += dot4(grow + xlo, xr + xlo, xhi - xlo);
                                } else {
                                    double s0 = 0.0, s1 = 0.0;
                                    int ox = xlo;
                                    for (; ox + 2 <= xhi; ox += 2) {
                                        s0 += grow[ox] * xr[ox * stride];
                                        s1 += grow[ox + 1] * xr[(ox + 1) * stride];
                                    }
                                    for (; ox < xhi; ++ox) s0 += grow[ox] * xr[ox * stride];
                                    acc += s0 + s1;
                                }
                            }
                            dW[((static_cast<std::size_t>(c) * ci + ic) * k + ky) * k + kx] += acc;
                        }
                    }
                }
            }
        }
        if (xn->requires_grad || xn->backprop) {
            xn->ensure_grad();
            const double* W = wn->data.data();
            double* dX = xn->grad.data();
            for (int ic = 0; ic < ci; ++ic) {
                double* dxc = dX + static_cast<std::size_t>(ic) * h * wdt;
                for (int c = 0; c < co; ++c) {
                    const double* gc = G + static_cast<std::size_t>(c) * ho * wo;
                    const double* wrow = W + ((static_cast<std::size_t>(c) * ci + ic) * k) * k;
                    for (int ky = 0; ky < k; ++ky) {
                        for (int kx = 0; kx < k; ++kx) {
                            const double wval = wrow[static_cast<std::size_t>(ky) * k + kx];
                            int xlo, xhi, ylo, yhi;
                            conv_bounds(kx, pad, stride, wdt, wo, xlo, xhi);
                            conv_bounds(ky, pad, stride, h, ho, ylo, yhi);
                            for (int oy = ylo; oy < yhi; ++oy) {
                                const int iy = oy * stride + ky - pad;
                                double* dxr =
                                    dxc + static_cast<std::size_t>(iy) * wdt + (kx - pad);
                                const double* grow = gc + static_cast<std::size_t>(oy) * wo;
                                if (stride == 1) {
                                    for (int ox = xlo; ox < xhi; ++ox) dxr[ox] += wval * grow[ox];
                                } else {
                                    for (int ox = xlo; ox < xhi; ++ox)
                                        dxr[ox * stride] += wval * grow[ox];
                                }
                            }
                        }
                    }
                }
            }
        }
    });
}

// ---- softmax ----

Tensor softmax(const Tensor& x, int axis) {
    auto xn = x.node_ptr();
    const int rank = static_cast<int>(xn->shape.size());
    if (axis < 0 || axis >= rank) throw TensorError("softmax: axis out of range");
    const int extent = xn->shape[axis];
    std::size_t inner = 1, outer = 1;
    for (int d = axis + 1; d < rank; ++d) inner *= static_cast<std::size_t>(xn->shape[d]);
    for (int d = 0; d < axis; ++d) outer *= static_cast<std::size_t>(xn->shape[d]);

    auto out = make_node(xn->shape, "softmax");
    const double* X = xn->data.data();
    double* Y = out->data.data();
    const std::size_t stride = inner;
    for (std::size_t o = 0; o < outer; ++o) {
        for (std::size_t in = 0; in < inner; ++in) {
            const std::size_t base = o * extent * inner + in;
            double mx = X[base];
            for (int e = 1; e < extent; ++e) mx = std::max(mx, X[base + e * stride]);
            double denom = 0.0;
            for (int e = 0; e < extent; ++e) {
                const double v = std::exp(X[base + e * stride] - mx);
                Y[base + e * stride] = v;
                denom += v;
            }
            const double inv = 1.0 / denom;
            for (int e = 0; e < extent; ++e) Y[base + e * stride] *= inv;
        }
    }
    TensorNode* outp = out.get();
    return finish(out, {xn}, [xn, outp, outer, inner, extent, stride]() {
        xn->ensure_grad();
        const double* Y = outp->data.data();
        const double* G = outp->grad.data();
        double* dX = xn->grad.data();
        for (std::size_t o = 0; o < outer; ++o) {
            for (std::size_t in = 0; in < inner; ++in) {
                const std::size_t base = o * extent * inner + in;
                double dot = 0.0;
                for (int e = 0; e < extent; ++e)
                    dot += G[base + e * stride] * Y[base + e * stride];
                for (int e = 0; e < extent; ++e) {
                    const std::size_t i = base + e * stride;
                    dX[i] += Y[i] * (G[i] - dot);
                }
            }
        }
    });
}

// ---- bilinear upsample ----

Tensor upsample_bilinear(const Tensor& x, int h2, int w2) {
    auto xn = x.node_ptr();
    if (xn->shape.size() != 3) throw TensorError("upsample_bilinear: expected [C,H,W]");
    const int c = xn->shape[0], h = xn->shape[1], w = xn->shape[2];
    if (h2 < h || w2 < w) throw TensorError("upsample_bilinear: downsampling not supported");

    // align-corners-false sampling grid; precompute per-axis neighbor
    // indices and weights
    struct Lerp {
        int i0, i1;
        double w0, w1;
    };
    auto make_axis = [](int src, int dst) {
        std::vector<Lerp> v(dst);
        const double scale = static_cast<double>(src) / dst;
        for (int o = 0; o < dst; ++o) {
            double s = (o + 0.5) * scale - 0.5;
            if (s < 0.0) s = 0.0;
            int i0 = static_cast<int>(s);
            if (i0 > src - 1) i0 = src - 1;
            int i1 = std::min(i0 + 1, src - 1);
            const double f = s - i0;
            v[o] = {i0, i1, 1.0 - f, f};
        }
        return v;
    };
    const auto ay = make_axis(h, h2);
    const auto ax = make_axis(w, w2);

    auto out = make_node({c, h2, w2}, "upsample_bilinear");
    const double* X = xn->data.data();
    double* Y = out->data.data();
    for (int ch = 0; ch < c; ++ch) {
        const double* xc = X + static_cast<std::size_t>(ch) * h * w;
        double* yc = Y + static_cast<std::size_t>(ch) * h2 * w2;
        for (int oy = 0; oy < h2; ++oy) {
            const Lerp& ly = ay[oy];
            const double* r0 = xc + static_cast<std::size_t>(ly.i0) * w;
            const double* r1 = xc + static_cast<std::size_t>(ly.i1) * w;
            double* yrow = yc + static_cast<std::size_t>(oy) * w2;
            for (int ox = 0; ox < w2; ++ox) {
                const Lerp& lx = ax[ox];
                yrow[ox] = ly.w0 * (lx.w0 * r0[lx.i0] + lx.w1 * r0[lx.i1]) +
                           ly.w1 * (lx.w0 * r1[lx.i0] + lx.w1 * r1[lx.i1]);
            }
        }
    }
    TensorNode* outp = out.get();
    return finish(out, {xn}, [xn, outp, c, h, w, h2, w2, ay, ax]() {
        xn->ensure_grad();
        const double* G = outp->grad.data();
        double* dX = xn->grad.data();
        for (int ch = 0; ch < c; ++ch) {
            double* dxc = dX + static_cast<std::size_t>(ch) * h * w;
            const double* gc = G + static_cast<std::size_t>(ch) * h2 * w2;
            for (int oy = 0; oy < h2; ++oy) {
                const Lerp& ly = ay[oy];
                const double* grow = gc + static_cast<std::size_t>(oy) * w2;
                for (int ox = 0; ox < w2; ++ox) {
                    const Lerp& lx = ax[ox];
                    const double g = grow[ox];
                    dxc[static_cast<std::size_t>(ly.i0) * w + lx.i0] += ly.w0 * lx.w0 * g;
                    dxc[static_cast<std::size_t>(ly.i0) * w + lx.i1] += ly.w0 * lx.w1 * g;
                    dxc[static_cast<std::size_t>(ly.i1) * w + lx.i0] += ly.w1 * lx.w0 * g;
                    dxc[static_cast<std::size_t>(ly.i1) * w + lx.i1] += ly.w1 * lx.w1 * g;
                }
            }
        }
    });
}

}  // namespace g2d
