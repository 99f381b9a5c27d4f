#ifndef ATTNSEG_INFERENCE_HPP
#define ATTNSEG_INFERENCE_HPP

#include <array>
#include <string>
#include <vector>

#include "attnseg/attention.hpp"
#include "attnseg/backbone.hpp"

namespace attnseg {

struct InferenceConfig {
    int t_test = 100;
    double gate = 0.2;
    bool use_was = true;
    uint64_t seed = 0;     // inference noise is seeded, not fresh per call
    int target_h = 64, target_w = 64;  // H'' x W'' for the aggregated cross map
};

struct SegmentationResult {
    LabelMask labels;
    std::vector<std::vector<double>> scores;  // per class, H*W row-major
    std::vector<bool> gate_passed;
    int num_classes = 0;
    std::string provenance_json;
};

// Full inference path: encode, noise at t_test, probe, aggregate, WAS stack
// (or raw cross channels when use_was is off), per-class bilinear upscale to
// image size, argmax with lowest-index tie-break.
SegmentationResult segment(const ImageU8& image, const PromptEmbeddings& emb,
                           const Backbone& backbone, const InferenceConfig& cfg = {});

// Corner-anchored square patches (offsets {0, H-patch} x {0, W-patch});
// per-patch class scores are pasted into a full-size accumulator and averaged
// by per-pixel coverage before the argmax. patch >= image size degenerates to
// plain segment().
SegmentationResult segment_patched(const ImageU8& image, const PromptEmbeddings& emb,
                                   const Backbone& backbone, const InferenceConfig& cfg = {},
                                   int patch = 400);

// Per-pixel patch coverage counts for the layout above (geometry only).
std::vector<int> patch_coverage(int h, int w, int patch);

using Palette = std::vector<std::array<uint8_t, 3>>;
Palette default_palette(int num_classes);

ImageU8 render_overlay(const ImageU8& image, const SegmentationResult& result,
                       const Palette& palette, double alpha = 0.5,
                       bool background_transparent = true);

}  // namespace attnseg

#endif
