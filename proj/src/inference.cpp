#include "attnseg/inference.hpp"

#include <cmath>

#include "json.hpp"

namespace attnseg {

static LabelMask argmax_labels(const std::vector<std::vector<double>>& scores, int h, int w) {
    LabelMask labels = LabelMask::filled(h, w, 0);
    for (int i = 0; i < h * w; ++i) {
        int best = 0;
        double best_v = scores[0][static_cast<size_t>(i)];
        for (size_t k = 1; k < scores.size(); ++k)
            if (scores[k][static_cast<size_t>(i)] > best_v) {  // ties keep the lower index
                best_v = scores[k][static_cast<size_t>(i)];
                best = static_cast<int>(k);
            }
        labels.data[static_cast<size_t>(i)] = static_cast<uint8_t>(best);
    }
    return labels;
}

SegmentationResult segment(const ImageU8& image, const PromptEmbeddings& emb,
                           const Backbone& backbone, const InferenceConfig& cfg) {
    const auto& d = backbone.descriptor();
    ImageU8 in = (image.h == d.input_h && image.w == d.input_w)
                     ? image
                     : resize_image(image, d.input_h, d.input_w);
    LatentImage latent = backbone.encode_image(in);
    NoisySample sample = backbone.add_noise(latent, cfg.t_test, nullptr, cfg.seed);
    AttentionProbeSet probes = backbone.denoise_with_probes(sample, emb);
    Tensor a_ca = aggregate_cross(probes, cfg.target_h, cfg.target_w);

    std::vector<Tensor> class_maps;
    std::vector<bool> gates;
    if (cfg.use_was) {
        Tensor a_sa = aggregate_self(probes);
        WasMapStack stack = stack_was(a_ca, a_sa, emb.num_classes, cfg.gate);
        class_maps = std::move(stack.maps);
        gates = std::move(stack.gate_passed);
    } else {
        for (int k = 0; k < emb.num_classes; ++k)
            class_maps.push_back(slice_channel_hwc(a_ca, k));
        gates.assign(static_cast<size_t>(emb.num_classes), true);
    }

    // shared downstream path for both arms: per-class upscale, then argmax
    SegmentationResult out;
    out.num_classes = emb.num_classes;
    out.gate_passed = std::move(gates);
    for (const Tensor& m : class_maps)
        out.scores.push_back(resize_bilinear_hwc(m, image.h, image.w).values());
    out.labels = argmax_labels(out.scores, image.h, image.w);

    nlohmann::json prov;
    prov["t_test"] = cfg.t_test;
    prov["gate"] = cfg.gate;
    prov["use_was"] = cfg.use_was;
    prov["seed"] = cfg.seed;
    prov["backbone_digest"] = d.param_digest;
    prov["patch"] = nullptr;
    out.provenance_json = prov.dump();
    return out;
}

std::vector<int> patch_coverage(int h, int w, int patch) {
    std::vector<int> cov(static_cast<size_t>(h) * w, 0);
    std::vector<int> oys = {0}, oxs = {0};
    if (patch < h) oys.push_back(h - patch);
    if (patch < w) oxs.push_back(w - patch);
    const int ph = std::min(patch, h), pw = std::min(patch, w);
    for (int oy : oys)
        for (int ox : oxs)
            for (int y = 0; y < ph; ++y)
                for (int x = 0; x < pw; ++x)
                    ++cov[static_cast<size_t>(oy + y) * w + ox + x];
    return cov;
}

SegmentationResult segment_patched(const ImageU8& image, const PromptEmbeddings& emb,
                                   const Backbone& backbone, const InferenceConfig& cfg,
                                   int patch) {
    if (patch <= 0) throw ShapeError("patch size must be positive");
    if (patch >= image.h && patch >= image.w) return segment(image, emb, backbone, cfg);

    std::vector<int> oys = {0}, oxs = {0};
    if (patch < image.h) oys.push_back(image.h - patch);
    if (patch < image.w) oxs.push_back(image.w - patch);
    const int ph = std::min(patch, image.h), pw = std::min(patch, image.w);

    SegmentationResult out;
    out.num_classes = emb.num_classes;
    out.gate_passed.assign(static_cast<size_t>(emb.num_classes), false);
    out.scores.assign(static_cast<size_t>(emb.num_classes),
                      std::vector<double>(static_cast<size_t>(image.h) * image.w, 0.0));
    std::vector<int> cov = patch_coverage(image.h, image.w, patch);

    for (int oy : oys)
        for (int ox : oxs) {
            ImageU8 crop;
            crop.h = ph;
            crop.w = pw;
            crop.data.resize(static_cast<size_t>(ph) * pw * 3);
            for (int y = 0; y < ph; ++y)
                for (int x = 0; x < pw; ++x) {
                    const uint8_t* src = image.px(oy + y, ox + x);
                    uint8_t* dst = crop.px(y, x);
                    dst[0] = src[0];
                    dst[1] = src[1];
                    dst[2] = src[2];
                }
            SegmentationResult pr = segment(crop, emb, backbone, cfg);
            for (int k = 0; k < emb.num_classes; ++k) {
                if (pr.gate_passed[static_cast<size_t>(k)])
                    out.gate_passed[static_cast<size_t>(k)] = true;
                for (int y = 0; y < ph; ++y)
                    for (int x = 0; x < pw; ++x)
                        out.scores[static_cast<size_t>(k)]
                                  [static_cast<size_t>(oy + y) * image.w + ox + x] +=
                            pr.scores[static_cast<size_t>(k)][static_cast<size_t>(y) * pw + x];
            }
        }
    for (auto& s : out.scores)
        for (size_t i = 0; i < s.size(); ++i) s[i] /= cov[i];
    out.labels = argmax_labels(out.scores, image.h, image.w);

    nlohmann::json prov;
    prov["t_test"] = cfg.t_test;
    prov["gate"] = cfg.gate;
    prov["use_was"] = cfg.use_was;
    prov["seed"] = cfg.seed;
    prov["backbone_digest"] = backbone.descriptor().param_digest;
    prov["patch"] = {{"size", patch}, {"count", oys.size() * oxs.size()}};
    out.provenance_json = prov.dump();
    return out;
}

Palette default_palette(int num_classes) {
    static const Palette base = {{0, 0, 0},     {230, 25, 75},  {60, 180, 75},
                                 {255, 225, 25}, {0, 130, 200}, {245, 130, 48},
                                 {145, 30, 180}, {70, 240, 240}, {240, 50, 230},
                                 {210, 245, 60}};
    Palette p;
    for (int k = 0; k < num_classes; ++k) p.push_back(base[static_cast<size_t>(k) % base.size()]);
    return p;
}

ImageU8 render_overlay(const ImageU8& image, const SegmentationResult& result,
                       const Palette& palette, double alpha, bool background_transparent) {
    if (static_cast<int>(palette.size()) < result.num_classes)
        throw ShapeError("palette smaller than class count");
    ImageU8 out = image;
    for (int y = 0; y < image.h; ++y)
        for (int x = 0; x < image.w; ++x) {
            const int k = result.labels.at(y, x);
            if (k == 0 && background_transparent) continue;
            const auto& c = palette[static_cast<size_t>(k)];
            uint8_t* p = out.px(y, x);
            for (int ch = 0; ch < 3; ++ch)
                p[ch] = static_cast<uint8_t>(
                    std::lround(alpha * c[static_cast<size_t>(ch)] + (1.0 - alpha) * p[ch]));
        }
    return out;
}

}  // namespace attnseg
