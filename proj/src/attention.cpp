#include "attnseg/attention.hpp"

#include "attnseg/errors.hpp"
#include "attnseg/image.hpp"

namespace attnseg {

Tensor aggregate_cross(const AttentionProbeSet& probes, int target_h, int target_w) {
    if (probes.cross.empty()) throw AggregationError("no cross-attention probes to aggregate");
    Tensor acc;
    for (const auto& [id, probe] : probes.cross) {
        Tensor r = (probe.dim(0) == target_h && probe.dim(1) == target_w)
                       ? probe
                       : resize_bilinear_hwc(probe, target_h, target_w);
        acc = acc.defined() ? add(acc, r) : r;
    }
    return scale(acc, 1.0 / static_cast<double>(probes.cross.size()));
}

Tensor aggregate_self(const AttentionProbeSet& probes) {
    if (probes.self_attn.empty()) throw AggregationError("no self-attention probes to aggregate");
    Tensor acc;
    for (const auto& [id, probe] : probes.self_attn) {
        if (acc.defined() && probe.shape() != acc.shape())
            throw AggregationError("self-attention probes disagree on shape");
        acc = acc.defined() ? add(acc, probe) : probe;
    }
    return scale(acc, 1.0 / static_cast<double>(probes.self_attn.size()));
}

std::pair<Tensor, bool> compose_was(const Tensor& a_ca_k, const Tensor& a_sa, double gate) {
    if (a_ca_k.ndim() != 2 || a_sa.ndim() != 4)
        throw ShapeError("compose_was expects (H,W) cross map and (h,w,h,w) self map");
    const int h = a_sa.dim(0), w = a_sa.dim(1);
    if (a_sa.dim(2) != h || a_sa.dim(3) != w)
        throw ShapeError("self-attention map is not square over locations");
    // Gate on the pre-resize cross map; bilinear resize cannot raise the max.
    if (a_ca_k.max_value() <= gate) return {Tensor::zeros({h, w}), false};
    const int n = h * w;
    Tensor r = (a_ca_k.dim(0) == h && a_ca_k.dim(1) == w) ? a_ca_k
                                                          : resize_bilinear_hwc(a_ca_k, h, w);
    Tensor was = matmul(reshape(r, {1, n}), reshape(a_sa, {n, n}));
    return {reshape(was, {h, w}), true};
}

WasMapStack stack_was(const Tensor& a_ca, const Tensor& a_sa, int num_classes, double gate) {
    if (a_ca.ndim() != 3) throw ShapeError("stack_was expects (H,W,T) aggregated cross map");
    if (num_classes > a_ca.dim(2))
        throw ClassCountError("num_classes exceeds the token axis length");
    WasMapStack out;
    out.h = a_sa.dim(0);
    out.w = a_sa.dim(1);
    for (int k = 0; k < num_classes; ++k) {
        auto [map, passed] = compose_was(slice_channel_hwc(a_ca, k), a_sa, gate);
        out.maps.push_back(std::move(map));
        out.gate_passed.push_back(passed);
    }
    return out;
}

void emit_attention_map(const Tensor& map2d, const std::string& path) {
    if (map2d.ndim() != 2) throw ShapeError("emit_attention_map expects a 2-D map");
    write_gray_map(map2d.values(), map2d.dim(0), map2d.dim(1), path);
}

}  // namespace attnseg
