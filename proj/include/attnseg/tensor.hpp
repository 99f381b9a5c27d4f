#ifndef ATTNSEG_TENSOR_HPP
#define ATTNSEG_TENSOR_HPP

#include <cstdint>
#include <functional>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

namespace attnseg {

// Dense float64 tensor with reverse-mode autodiff. Shapes are small
// (attention maps, toy UNet activations), so everything is eager and
// single-threaded. A Tensor is a shared handle to a graph node; backward()
// walks the graph in reverse topological order.
struct TensorNode;
using NodePtr = std::shared_ptr<TensorNode>;

struct TensorNode {
    std::vector<int> shape;
    std::vector<double> val;
    std::vector<double> grad;   // lazily sized in backward()
    bool requires_grad = false;
    std::vector<NodePtr> parents;
    std::function<void(TensorNode&)> backward_fn;  // accumulate into parents
    int topo_mark = 0;
};

class Tensor {
public:
    Tensor() = default;
    explicit Tensor(NodePtr n) : node_(std::move(n)) {}

    static Tensor zeros(std::vector<int> shape);
    static Tensor full(std::vector<int> shape, double v);
    static Tensor from(std::vector<int> shape, std::vector<double> data,
                       bool requires_grad = false);
    static Tensor scalar(double v);

    bool defined() const { return node_ != nullptr; }
    const std::vector<int>& shape() const { return node_->shape; }
    int64_t numel() const { return static_cast<int64_t>(node_->val.size()); }
    int dim(int i) const { return node_->shape[static_cast<size_t>(i)]; }
    int ndim() const { return static_cast<int>(node_->shape.size()); }

    const std::vector<double>& values() const { return node_->val; }
    std::vector<double>& mutable_values() { return node_->val; }
    const std::vector<double>& grad() const { return node_->grad; }
    double item() const;
    double max_value() const;
    bool all_finite() const;

    void set_requires_grad(bool b) { node_->requires_grad = b; }
    bool requires_grad() const { return node_->requires_grad; }
    void zero_grad() { node_->grad.assign(node_->val.size(), 0.0); }

    // Backward from a scalar tensor; seeds d(out)/d(out) = 1.
    void backward() const;

    NodePtr node() const { return node_; }

private:
    NodePtr node_;
};

int64_t shape_numel(const std::vector<int>& shape);

// --- ops -----------------------------------------------------------------
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double s);
Tensor add_scalar(const Tensor& a, double s);
Tensor tanh_t(const Tensor& a);
// (n,c) + broadcast row (c)
Tensor add_rowvec(const Tensor& a, const Tensor& r);
Tensor reshape(const Tensor& a, std::vector<int> shape);

// (m,k) x (k,n) -> (m,n)
Tensor matmul(const Tensor& a, const Tensor& b);
// (m,k) x (n,k)^T -> (m,n)
Tensor matmul_nt(const Tensor& a, const Tensor& b);
// softmax over the last axis of a 2-D tensor
Tensor softmax_rows(const Tensor& a);
// Scales every row to unit L2 norm (plus a small epsilon for stability).
Tensor normalize_rows_l2(const Tensor& a);

Tensor sum_all(const Tensor& a);
Tensor mean_all(const Tensor& a);

// spatial ops on (H, W, C) layout
Tensor resize_bilinear_hwc(const Tensor& a, int out_h, int out_w);
Tensor pool_avg2_hwc(const Tensor& a);
Tensor upsample_nearest2_hwc(const Tensor& a);
Tensor slice_channel_hwc(const Tensor& a, int c);

// Per-pixel weighted cross-entropy over the first K channels of an
// (H, W, C) map against integer labels (row-major, H*W entries).
// Channels are clamped at eps and renormalized to a distribution;
// weight_c = total_pixels / count_c (0 for absent classes); mean over pixels.
Tensor weighted_ce_hwc(const Tensor& a, const std::vector<int>& labels,
                       int num_classes, double eps = 1e-8);

}  // namespace attnseg

#endif
