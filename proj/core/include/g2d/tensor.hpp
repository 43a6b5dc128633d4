#pragma once

#include <functional>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "g2d/rng.hpp"

namespace g2d {

// Thrown on shape mismatches, non-finite forward outputs, and misuse of
// the gradient tape.
class TensorError : public std::runtime_error {
public:
    explicit TensorError(const std::string& msg) : std::runtime_error(msg) {}
};

struct TensorNode {
    std::vector<int> shape;
    std::vector<double> data;
    std::vector<double> grad;  // empty until first accumulation
    bool requires_grad = false;

    // tape: parents + a closure that scatters this node's grad into them.
    // Only populated when the output requires grad; detached/eval-only
    // computations record nothing.
    std::vector<std::shared_ptr<TensorNode>> parents;
    std::function<void()> backprop;
    const char* op = "leaf";

    std::size_t numel() const { return data.size(); }
    void ensure_grad() {
        if (grad.size() != data.size()) grad.assign(data.size(), 0.0);
    }
};

// Value-semantic handle onto a node of the dynamic gradient tape.
// 64-bit floats, row-major, immutable after creation except for leaf
// updates performed by the optimizer through mutable_data().
class Tensor {
public:
    Tensor() = default;

    static Tensor zeros(std::vector<int> shape, bool requires_grad = false);
    static Tensor full(std::vector<int> shape, double value, bool requires_grad = false);
    static Tensor from_data(std::vector<int> shape, std::vector<double> data,
                            bool requires_grad = false);
    static Tensor scalar(double value, bool requires_grad = false);
    // entries uniform in [lo, hi)
    static Tensor uniform(std::vector<int> shape, double lo, double hi, Rng& rng,
                          bool requires_grad = false);

    bool defined() const { return node_ != nullptr; }
    const std::vector<int>& shape() const { return node().shape; }
    std::size_t numel() const { return node().data.size(); }
    int rank() const { return static_cast<int>(node().shape.size()); }
    bool requires_grad() const { return node().requires_grad; }

    std::span<const double> data() const { return node().data; }
    // leaf mutation only (optimizer updates, test setup); using this on an
    // interior node would silently desynchronize the tape
    std::span<double> mutable_data();
    bool has_grad() const { return !node().grad.empty(); }
    std::span<const double> grad() const;
    void zero_grad();

    double item() const;
    double at(std::initializer_list<int> idx) const;

    // same data, no gradient history
    Tensor detach() const;

    std::shared_ptr<TensorNode> node_ptr() const { return node_; }
    TensorNode& node() const;

    static Tensor wrap(std::shared_ptr<TensorNode> n) {
        Tensor t;
        t.node_ = std::move(n);
        return t;
    }

private:
    std::shared_ptr<TensorNode> node_;
};

// Reverse-mode pass over the recorded operations reachable from a root.
// Nodes are ordered so that every node's inputs precede it; backward walks
// the order once, in reverse.
struct GradGraph {
    std::vector<TensorNode*> order;
    static GradGraph build(const Tensor& root);
};

// Populates .grad on every requires_grad leaf reachable from `loss`
// (accumulating into existing grads) and consumes the recorded graph.
void backward(const Tensor& loss);

// ---- elementwise ----
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);
Tensor neg(const Tensor& a);
Tensor exp(const Tensor& a);
Tensor log(const Tensor& a);
Tensor sqrt(const Tensor& a);
Tensor sigmoid(const Tensor& a);
Tensor relu(const Tensor& a);
Tensor clamp(const Tensor& a, double lo, double hi);

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }
inline Tensor operator/(const Tensor& a, const Tensor& b) { return div(a, b); }
inline Tensor operator+(const Tensor& a, double s) { return add(a, Tensor::scalar(s)); }
inline Tensor operator-(const Tensor& a, double s) { return sub(a, Tensor::scalar(s)); }
inline Tensor operator*(const Tensor& a, double s) { return mul(a, Tensor::scalar(s)); }
inline Tensor operator/(const Tensor& a, double s) { return div(a, Tensor::scalar(s)); }
inline Tensor operator+(double s, const Tensor& a) { return add(Tensor::scalar(s), a); }
inline Tensor operator-(double s, const Tensor& a) { return sub(Tensor::scalar(s), a); }
inline Tensor operator*(double s, const Tensor& a) { return mul(Tensor::scalar(s), a); }
inline Tensor operator-(const Tensor& a) { return neg(a); }

// ---- linear algebra / structure ----
Tensor matmul(const Tensor& a, const Tensor& b);  // [m,k]x[k,n] -> [m,n]
Tensor transpose(const Tensor& a);                // [m,n] -> [n,m]
Tensor reshape(const Tensor& a, std::vector<int> shape);
Tensor stack(const std::vector<Tensor>& parts);   // N x [s...] -> [N, s...]
Tensor concat_ch(const Tensor& a, const Tensor& b);  // [Ca,H,W]+[Cb,H,W] -> [Ca+Cb,H,W]
Tensor gather_rows(const Tensor& table, const std::vector<int>& ids);  // [V,E] -> [n,E]

// ---- reductions ----
Tensor sum(const Tensor& a);   // -> [1]
Tensor mean(const Tensor& a);  // -> [1]

// ---- nn kernels ----
// cross-correlation, square kernel, optional per-output-channel bias;
// (H + 2*pad - k) must be divisible by stride
Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& b, int stride, int pad);
Tensor conv2d(const Tensor& x, const Tensor& w, int stride, int pad);
Tensor softmax(const Tensor& x, int axis);
// align-corners-false, upsampling only (h2 >= H, w2 >= W)
Tensor upsample_bilinear(const Tensor& x, int h2, int w2);

}  // namespace g2d
