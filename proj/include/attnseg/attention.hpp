#ifndef ATTNSEG_ATTENTION_HPP
#define ATTNSEG_ATTENTION_HPP

#include <string>
#include <utility>
#include <vector>

#include "attnseg/backbone.hpp"
#include "attnseg/tensor.hpp"

namespace attnseg {

struct AggregatedAttention {
    Tensor a_ca;  // (H'', W'', T_tok)
    Tensor a_sa;  // (h, w, h, w)
};

struct WasMapStack {
    std::vector<Tensor> maps;  // K maps of shape (h, w)
    std::vector<bool> gate_passed;
    int h = 0, w = 0;
};

// Bilinear-resize every cross probe per token channel to (target_h, target_w),
// then average over layers. Probes arrive head-averaged from the backbone.
Tensor aggregate_cross(const AttentionProbeSet& probes, int target_h, int target_w);

// Elementwise mean of the self probes; all layers must share one shape.
Tensor aggregate_self(const AttentionProbeSet& probes);

// Weighted accumulated self-attention for one class channel. The cross map is
// resized up to the self-attention grid first, then used to weight-sum the
// self-attention channels: out(x) = sum_p R(p) * A_sa(p, x). Channels whose
// pre-resize max does not exceed `gate` are zeroed and flagged.
std::pair<Tensor, bool> compose_was(const Tensor& a_ca_k, const Tensor& a_sa,
                                    double gate = 0.2);

WasMapStack stack_was(const Tensor& a_ca, const Tensor& a_sa, int num_classes,
                      double gate = 0.2);

// Debug emitter: min-max normalized grayscale PNG of a 2-D map.
void emit_attention_map(const Tensor& map2d, const std::string& path);

}  // namespace attnseg

#endif
