#include "attnseg/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace attnseg {

int64_t shape_numel(const std::vector<int>& shape) {
    int64_t n = 1;
    for (int d : shape) {
        if (d <= 0) throw std::invalid_argument("tensor dims must be positive");
        n *= d;
    }
    return n;
}

static NodePtr make_node(std::vector<int> shape) {
    auto n = std::make_shared<TensorNode>();
    n->shape = std::move(shape);
    n->val.assign(static_cast<size_t>(shape_numel(n->shape)), 0.0);
    return n;
}

Tensor Tensor::zeros(std::vector<int> shape) { return Tensor(make_node(std::move(shape))); }

Tensor Tensor::full(std::vector<int> shape, double v) {
    auto n = make_node(std::move(shape));
    std::fill(n->val.begin(), n->val.end(), v);
    return Tensor(n);
}

Tensor Tensor::from(std::vector<int> shape, std::vector<double> data, bool requires_grad) {
    if (static_cast<int64_t>(data.size()) != shape_numel(shape))
        throw std::invalid_argument("data size does not match shape");
    auto n = std::make_shared<TensorNode>();
    n->shape = std::move(shape);
    n->val = std::move(data);
    n->requires_grad = requires_grad;
    return Tensor(n);
}

Tensor Tensor::scalar(double v) { return from({1}, {v}); }

double Tensor::item() const {
    if (node_->val.size() != 1) throw std::logic_error("item() on non-scalar tensor");
    return node_->val[0];
}

double Tensor::max_value() const {
    return *std::max_element(node_->val.begin(), node_->val.end());
}

bool Tensor::all_finite() const {
    for (double v : node_->val)
        if (!std::isfinite(v)) return false;
    return true;
}

void Tensor::backward() const {
    if (node_->val.size() != 1) throw std::logic_error("backward() needs a scalar");
    // iterative post-order topological sort
    std::vector<TensorNode*> order;
    std::vector<std::pair<TensorNode*, size_t>> stack;
    stack.emplace_back(node_.get(), 0);
    node_->topo_mark = 1;
    while (!stack.empty()) {
        auto& [n, i] = stack.back();
        if (i < n->parents.size()) {
            TensorNode* p = n->parents[i++].get();
            if (p->topo_mark == 0) {
                p->topo_mark = 1;
                stack.emplace_back(p, 0);
            }
        } else {
            order.push_back(n);
            stack.pop_back();
        }
    }
    for (TensorNode* n : order) {
        n->topo_mark = 0;
        n->grad.assign(n->val.size(), 0.0);
    }
    node_->grad[0] = 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        TensorNode* n = *it;
        if (n->backward_fn) n->backward_fn(*n);
    }
}

// Helper: result node wiring. grad buffers of parents are guaranteed sized by
// backward()'s pre-pass.
static Tensor make_op(std::vector<int> shape, std::vector<NodePtr> parents,
                      std::function<void(TensorNode&)> bwd) {
    auto n = make_node(std::move(shape));
    bool any = false;
    for (const auto& p : parents) any = any || p->requires_grad;
    if (any) {
        n->requires_grad = true;
        n->parents = std::move(parents);
        n->backward_fn = std::move(bwd);
    }
    return Tensor(n);
}

static void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (a.shape() != b.shape())
        throw std::invalid_argument(std::string(op) + ": shape mismatch");
}

Tensor add(const Tensor& a, const Tensor& b) {
    check_same_shape(a, b, "add");
    Tensor out = make_op(a.shape(), {a.node(), b.node()}, [](TensorNode& n) {
        for (size_t i = 0; i < n.val.size(); ++i) {
            n.parents[0]->grad[i] += n.grad[i];
            n.parents[1]->grad[i] += n.grad[i];
        }
    });
    for (size_t i = 0; i < out.mutable_values().size(); ++i)
        out.mutable_values()[i] = a.values()[i] + b.values()[i];
    return out;
}

Tensor sub(const Tensor& a, const Tensor& b) {
    check_same_shape(a, b, "sub");
    Tensor out = make_op(a.shape(), {a.node(), b.node()}, [](TensorNode& n) {
        for (size_t i = 0; i < n.val.size(); ++i) {
            n.parents[0]->grad[i] += n.grad[i];
            n.parents[1]->grad[i] -= n.grad[i];
        }
    });
    for (size_t i = 0; i < out.mutable_values().size(); ++i)
        out.mutable_values()[i] = a.values()[i] - b.values()[i];
    return out;
}

Tensor mul(const Tensor& a, const Tensor& b) {
    check_same_shape(a, b, "mul");
    Tensor out = make_op(a.shape(), {a.node(), b.node()}, [](TensorNode& n) {
        for (size_t i = 0; i < n.val.size(); ++i) {
            n.parents[0]->grad[i] += n.grad[i] * n.parents[1]->val[i];
            n.parents[1]->grad[i] += n.grad[i] * n.parents[0]->val[i];
        }
    });
    for (size_t i = 0; i < out.mutable_values().size(); ++i)
        out.mutable_values()[i] = a.values()[i] * b.values()[i];
    return out;
}

Tensor scale(const Tensor& a, double s) {
    Tensor out = make_op(a.shape(), {a.node()}, [s](TensorNode& n) {
        for (size_t i = 0; i < n.val.size(); ++i) n.parents[0]->grad[i] += n.grad[i] * s;
    });
    for (size_t i = 0; i < out.mutable_values().size(); ++i)
        out.mutable_values()[i] = a.values()[i] * s;
    return out;
}

Tensor add_scalar(const Tensor& a, double s) {
    Tensor out = make_op(a.shape(), {a.node()}, [](TensorNode& n) {
        for (size_t i = 0; i < n.val.size(); ++i) n.parents[0]->grad[i] += n.grad[i];
    });
    for (size_t i = 0; i < out.mutable_values().size(); ++i)
        out.mutable_values()[i] = a.values()[i] + s;
    return out;
}

Tensor tanh_t(const Tensor& a) {
    Tensor out = make_op(a.shape(), {a.node()}, [](TensorNode& n) {
        for (size_t i = 0; i < n.val.size(); ++i)
            n.parents[0]->grad[i] += n.grad[i] * (1.0 - n.val[i] * n.val[i]);
    });
    for (size_t i = 0; i < out.mutable_values().size(); ++i)
        out.mutable_values()[i] = std::tanh(a.values()[i]);
    return out;
}

Tensor add_rowvec(const Tensor& a, const Tensor& r) {
    if (a.ndim() != 2 || r.ndim() != 1 || r.dim(0) != a.dim(1))
        throw std::invalid_argument("add_rowvec: bad shapes");
    const int n2 = a.dim(0), c = a.dim(1);
    Tensor out = make_op(a.shape(), {a.node(), r.node()}, [n2, c](TensorNode& n) {
        for (int i = 0; i < n2; ++i)
            for (int j = 0; j < c; ++j) {
                double g = n.grad[static_cast<size_t>(i) * c + j];
                n.parents[0]->grad[static_cast<size_t>(i) * c + j] += g;
                n.parents[1]->grad[static_cast<size_t>(j)] += g;
            }
    });
    auto& ov = out.mutable_values();
    for (int i = 0; i < n2; ++i)
        for (int j = 0; j < c; ++j)
            ov[static_cast<size_t>(i) * c + j] =
                a.values()[static_cast<size_t>(i) * c + j] + r.values()[static_cast<size_t>(j)];
    return out;
}

Tensor reshape(const Tensor& a, std::vector<int> shape) {
    if (shape_numel(shape) != a.numel())
        throw std::invalid_argument("reshape: element count mismatch");
    Tensor out = make_op(std::move(shape), {a.node()}, [](TensorNode& n) {
        for (size_t i = 0; i < n.val.size(); ++i) n.parents[0]->grad[i] += n.grad[i];
    });
    out.mutable_values() = a.values();
    return out;
}

Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.ndim() != 2 || b.ndim() != 2 || a.dim(1) != b.dim(0))
        throw std::invalid_argument("matmul: bad shapes");
    const int m = a.dim(0), k = a.dim(1), n2 = b.dim(1);
    Tensor out = make_op({m, n2}, {a.node(), b.node()}, [m, k, n2](TensorNode& n) {
        const auto& av = n.parents[0]->val;
        const auto& bv = n.parents[1]->val;
        for (int i = 0; i < m; ++i)
            for (int j = 0; j < n2; ++j) {
                double g = n.grad[static_cast<size_t>(i) * n2 + j];
                if (g == 0.0) continue;
                for (int t = 0; t < k; ++t) {
                    n.parents[0]->grad[static_cast<size_t>(i) * k + t] += g * bv[static_cast<size_t>(t) * n2 + j];
                    n.parents[1]->grad[static_cast<size_t>(t) * n2 + j] += g * av[static_cast<size_t>(i) * k + t];
                }
            }
    });
    auto& ov = out.mutable_values();
    const auto& av = a.values();
    const auto& bv = b.values();
    for (int i = 0; i < m; ++i)
        for (int t = 0; t < k; ++t) {
            double x = av[static_cast<size_t>(i) * k + t];
            if (x == 0.0) continue;
            for (int j = 0; j < n2; ++j)
                ov[static_cast<size_t>(i) * n2 + j] += x * bv[static_cast<size_t>(t) * n2 + j];
        }
    return out;
}

Tensor matmul_nt(const Tensor& a, const Tensor& b) {
    if (a.ndim() != 2 || b.ndim() != 2 || a.dim(1) != b.dim(1))
        throw std::invalid_argument("matmul_nt: bad shapes");
    const int m = a.dim(0), k = a.dim(1), n2 = b.dim(0);
    Tensor out = make_op({m, n2}, {a.node(), b.node()}, [m, k, n2](TensorNode& n) {
        const auto& av = n.parents[0]->val;
        const auto& bv = n.parents[1]->val;
        for (int i = 0; i < m; ++i)
            for (int j = 0; j < n2; ++j) {
                double g = n.grad[static_cast<size_t>(i) * n2 + j];
                if (g == 0.0) continue;
                for (int t = 0; t < k; ++t) {
                    n.parents[0]->grad[static_cast<size_t>(i) * k + t] += g * bv[static_cast<size_t>(j) * k + t];
                    n.parents[1]->grad[static_cast<size_t>(j) * k + t] += g * av[static_cast<size_t>(i) * k + t];
                }
            }
    });
    auto& ov = out.mutable_values();
    const auto& av = a.values();
    const auto& bv = b.values();
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < n2; ++j) {
            double s = 0.0;
            for (int t = 0; t < k; ++t)
                s += av[static_cast<size_t>(i) * k + t] * bv[static_cast<size_t>(j) * k + t];
            ov[static_cast<size_t>(i) * n2 + j] = s;
        }
    return out;
}

Tensor softmax_rows(const Tensor& a) {
    if (a.ndim() != 2) throw std::invalid_argument("softmax_rows: 2-D only");
    const int m = a.dim(0), n2 = a.dim(1);
    Tensor out = make_op({m, n2}, {a.node()}, [m, n2](TensorNode& n) {
        for (int i = 0; i < m; ++i) {
            const double* y = n.val.data() + static_cast<size_t>(i) * n2;
            const double* gy = n.grad.data() + static_cast<size_t>(i) * n2;
            double dot = 0.0;
            for (int j = 0; j < n2; ++j) dot += y[j] * gy[j];
            double* gx = n.parents[0]->grad.data() + static_cast<size_t>(i) * n2;
            for (int j = 0; j < n2; ++j) gx[j] += y[j] * (gy[j] - dot);
        }
    });
    auto& ov = out.mutable_values();
    const auto& av = a.values();
    for (int i = 0; i < m; ++i) {
        const double* x = av.data() + static_cast<size_t>(i) * n2;
        double mx = x[0];
        for (int j = 1; j < n2; ++j) mx = std::max(mx, x[j]);
        double sum = 0.0;
        double* y = ov.data() + static_cast<size_t>(i) * n2;
        for (int j = 0; j < n2; ++j) {
            y[j] = std::exp(x[j] - mx);
            sum += y[j];
        }
        for (int j = 0; j < n2; ++j) y[j] /= sum;
    }
    return out;
}

Tensor normalize_rows_l2(const Tensor& a) {
    if (a.ndim() != 2) throw std::invalid_argument("normalize_rows_l2: 2-D only");
    const int m = a.dim(0), n2 = a.dim(1);
    Tensor out = make_op({m, n2}, {a.node()}, [m, n2](TensorNode& n) {
        for (int i = 0; i < m; ++i) {
            const double* x = n.parents[0]->val.data() + static_cast<size_t>(i) * n2;
            const double* y = n.val.data() + static_cast<size_t>(i) * n2;
            const double* gy = n.grad.data() + static_cast<size_t>(i) * n2;
            double r = 1e-12, dot = 0.0;
            for (int j = 0; j < n2; ++j) r += x[j] * x[j];
            r = std::sqrt(r);
            for (int j = 0; j < n2; ++j) dot += y[j] * gy[j];
            double* gx = n.parents[0]->grad.data() + static_cast<size_t>(i) * n2;
            for (int j = 0; j < n2; ++j) gx[j] += (gy[j] - y[j] * dot) / r;
        }
    });
    auto& ov = out.mutable_values();
    const auto& av = a.values();
    for (int i = 0; i < m; ++i) {
        const double* x = av.data() + static_cast<size_t>(i) * n2;
        double r = 1e-12;
        for (int j = 0; j < n2; ++j) r += x[j] * x[j];
        r = std::sqrt(r);
        double* y = ov.data() + static_cast<size_t>(i) * n2;
        for (int j = 0; j < n2; ++j) y[j] = x[j] / r;
    }
    return out;
}

Tensor sum_all(const Tensor& a) {
    Tensor out = make_op({1}, {a.node()}, [](TensorNode& n) {
        for (size_t i = 0; i < n.parents[0]->grad.size(); ++i) n.parents[0]->grad[i] += n.grad[0];
    });
    out.mutable_values()[0] = std::accumulate(a.values().begin(), a.values().end(), 0.0);
    return out;
}

Tensor mean_all(const Tensor& a) {
    const double inv = 1.0 / static_cast<double>(a.numel());
    Tensor out = make_op({1}, {a.node()}, [inv](TensorNode& n) {
        for (size_t i = 0; i < n.parents[0]->grad.size(); ++i)
            n.parents[0]->grad[i] += n.grad[0] * inv;
    });
    out.mutable_values()[0] =
        std::accumulate(a.values().begin(), a.values().end(), 0.0) * inv;
    return out;
}

// align_corners = false: src = (dst + 0.5) * scale - 0.5, clamped to the grid.
struct BilinearTap {
    int i0, i1;
    double w0, w1;
};

static std::vector<BilinearTap> bilinear_taps(int in, int out) {
    std::vector<BilinearTap> taps(static_cast<size_t>(out));
    const double s = static_cast<double>(in) / out;
    for (int d = 0; d < out; ++d) {
        double src = (d + 0.5) * s - 0.5;
        src = std::clamp(src, 0.0, static_cast<double>(in - 1));
        int i0 = static_cast<int>(std::floor(src));
        int i1 = std::min(i0 + 1, in - 1);
        double f = src - i0;
        taps[static_cast<size_t>(d)] = {i0, i1, 1.0 - f, f};
    }
    return taps;
}

Tensor resize_bilinear_hwc(const Tensor& a, int out_h, int out_w) {
    if (a.ndim() != 3 && a.ndim() != 2)
        throw std::invalid_argument("resize_bilinear_hwc: expects (H,W,C) or (H,W)");
    const int h = a.dim(0), w = a.dim(1);
    const int c = a.ndim() == 3 ? a.dim(2) : 1;
    auto ry = bilinear_taps(h, out_h);
    auto rx = bilinear_taps(w, out_w);
    std::vector<int> out_shape = a.ndim() == 3 ? std::vector<int>{out_h, out_w, c}
                                               : std::vector<int>{out_h, out_w};
    Tensor out = make_op(out_shape, {a.node()}, [=](TensorNode& n) {
        for (int y = 0; y < out_h; ++y)
            for (int x = 0; x < out_w; ++x) {
                const auto& ty = ry[static_cast<size_t>(y)];
                const auto& tx = rx[static_cast<size_t>(x)];
                const double* g = n.grad.data() + (static_cast<size_t>(y) * out_w + x) * c;
                auto acc = [&](int yy, int xx, double wgt) {
                    double* dst = n.parents[0]->grad.data() + (static_cast<size_t>(yy) * w + xx) * c;
                    for (int ch = 0; ch < c; ++ch) dst[ch] += g[ch] * wgt;
                };
                acc(ty.i0, tx.i0, ty.w0 * tx.w0);
                acc(ty.i0, tx.i1, ty.w0 * tx.w1);
                acc(ty.i1, tx.i0, ty.w1 * tx.w0);
                acc(ty.i1, tx.i1, ty.w1 * tx.w1);
            }
    });
    auto& ov = out.mutable_values();
    const auto& av = a.values();
    for (int y = 0; y < out_h; ++y)
        for (int x = 0; x < out_w; ++x) {
            const auto& ty = ry[static_cast<size_t>(y)];
            const auto& tx = rx[static_cast<size_t>(x)];
            double* dst = ov.data() + (static_cast<size_t>(y) * out_w + x) * c;
            auto src = [&](int yy, int xx) {
                return av.data() + (static_cast<size_t>(yy) * w + xx) * c;
            };
            const double* p00 = src(ty.i0, tx.i0);
            const double* p01 = src(ty.i0, tx.i1);
            const double* p10 = src(ty.i1, tx.i0);
            const double* p11 = src(ty.i1, tx.i1);
            for (int ch = 0; ch < c; ++ch)
                dst[ch] = ty.w0 * (tx.w0 * p00[ch] + tx.w1 * p01[ch]) +
                          ty.w1 * (tx.w0 * p10[ch] + tx.w1 * p11[ch]);
        }
    return out;
}

Tensor pool_avg2_hwc(const Tensor& a) {
    if (a.ndim() != 3 || a.dim(0) % 2 || a.dim(1) % 2)
        throw std::invalid_argument("pool_avg2_hwc: (H,W,C) with even H,W");
    const int h = a.dim(0), w = a.dim(1), c = a.dim(2);
    const int oh = h / 2, ow = w / 2;
    Tensor out = make_op({oh, ow, c}, {a.node()}, [=](TensorNode& n) {
        for (int y = 0; y < oh; ++y)
            for (int x = 0; x < ow; ++x)
                for (int ch = 0; ch < c; ++ch) {
                    double g = 0.25 * n.grad[(static_cast<size_t>(y) * ow + x) * c + ch];
                    for (int dy = 0; dy < 2; ++dy)
                        for (int dx = 0; dx < 2; ++dx)
                            n.parents[0]->grad[(static_cast<size_t>(2 * y + dy) * w + 2 * x + dx) * c + ch] += g;
                }
    });
    auto& ov = out.mutable_values();
    const auto& av = a.values();
    for (int y = 0; y < oh; ++y)
        for (int x = 0; x < ow; ++x)
            for (int ch = 0; ch < c; ++ch) {
                double s = 0.0;
                for (int dy = 0; dy < 2; ++dy)
                    for (int dx = 0; dx < 2; ++dx)
                        s += av[(static_cast<size_t>(2 * y + dy) * w + 2 * x + dx) * c + ch];
                ov[(static_cast<size_t>(y) * ow + x) * c + ch] = 0.25 * s;
            }
    return out;
}

Tensor upsample_nearest2_hwc(const Tensor& a) {
    if (a.ndim() != 3) throw std::invalid_argument("upsample_nearest2_hwc: (H,W,C)");
    const int h = a.dim(0), w = a.dim(1), c = a.dim(2);
    const int oh = h * 2, ow = w * 2;
    Tensor out = make_op({oh, ow, c}, {a.node()}, [=](TensorNode& n) {
        for (int y = 0; y < oh; ++y)
            for (int x = 0; x < ow; ++x)
                for (int ch = 0; ch < c; ++ch)
                    n.parents[0]->grad[(static_cast<size_t>(y / 2) * w + x / 2) * c + ch] +=
                        n.grad[(static_cast<size_t>(y) * ow + x) * c + ch];
    });
    auto& ov = out.mutable_values();
    const auto& av = a.values();
    for (int y = 0; y < oh; ++y)
        for (int x = 0; x < ow; ++x)
            for (int ch = 0; ch < c; ++ch)
                ov[(static_cast<size_t>(y) * ow + x) * c + ch] =
                    av[(static_cast<size_t>(y / 2) * w + x / 2) * c + ch];
    return out;
}

Tensor slice_channel_hwc(const Tensor& a, int c) {
    if (a.ndim() != 3 || c < 0 || c >= a.dim(2))
        throw std::invalid_argument("slice_channel_hwc: bad channel");
    const int h = a.dim(0), w = a.dim(1), nc = a.dim(2);
    Tensor out = make_op({h, w}, {a.node()}, [=](TensorNode& n) {
        for (int i = 0; i < h * w; ++i)
            n.parents[0]->grad[static_cast<size_t>(i) * nc + c] += n.grad[static_cast<size_t>(i)];
    });
    auto& ov = out.mutable_values();
    const auto& av = a.values();
    for (int i = 0; i < h * w; ++i) ov[static_cast<size_t>(i)] = av[static_cast<size_t>(i) * nc + c];
    return out;
}

Tensor weighted_ce_hwc(const Tensor& a, const std::vector<int>& labels,
                       int num_classes, double eps) {
    if (a.ndim() != 3) throw std::invalid_argument("weighted_ce_hwc: (H,W,C)");
    const int h = a.dim(0), w = a.dim(1), nc = a.dim(2);
    const int npix = h * w;
    if (static_cast<int>(labels.size()) != npix)
        throw std::invalid_argument("weighted_ce_hwc: label count mismatch");
    if (num_classes > nc) throw std::invalid_argument("weighted_ce_hwc: K exceeds channels");
    std::vector<double> weight(static_cast<size_t>(num_classes), 0.0);
    for (int l : labels) {
        if (l < 0 || l >= num_classes)
            throw std::invalid_argument("weighted_ce_hwc: label out of range");
        weight[static_cast<size_t>(l)] += 1.0;
    }
    for (auto& cw : weight) cw = cw > 0.0 ? static_cast<double>(npix) / cw : 0.0;

    const int K = num_classes;
    Tensor out = make_op({1}, {a.node()}, [=](TensorNode& n) {
        const auto& av = n.parents[0]->val;
        auto& ag = n.parents[0]->grad;
        const double g0 = n.grad[0] / npix;
        for (int i = 0; i < npix; ++i) {
            const int l = labels[static_cast<size_t>(i)];
            const double wl = weight[static_cast<size_t>(l)];
            const double* p = av.data() + static_cast<size_t>(i) * nc;
            double s = 0.0;
            for (int k = 0; k < K; ++k) s += std::max(p[k], eps);
            double* gp = ag.data() + static_cast<size_t>(i) * nc;
            // loss_i = wl * (log s - log c_l); dc_k only flows where p_k > eps
            for (int k = 0; k < K; ++k) {
                if (p[k] <= eps) continue;
                double d = wl / s;
                if (k == l) d -= wl / std::max(p[k], eps);
                gp[k] += g0 * d;
            }
        }
    });
    const auto& av = a.values();
    double loss = 0.0;
    for (int i = 0; i < npix; ++i) {
        const int l = labels[static_cast<size_t>(i)];
        const double* p = av.data() + static_cast<size_t>(i) * nc;
        double s = 0.0;
        for (int k = 0; k < K; ++k) s += std::max(p[k], eps);
        loss += weight[static_cast<size_t>(l)] * (std::log(s) - std::log(std::max(p[l], eps)));
    }
    out.mutable_values()[0] = loss / npix;
    return out;
}

}  // namespace attnseg
