#ifndef ATTNSEG_OPTIMIZER_HPP
#define ATTNSEG_OPTIMIZER_HPP

#include <optional>
#include <string>
#include <vector>

#include "attnseg/attention.hpp"
#include "attnseg/backbone.hpp"
#include "attnseg/data.hpp"

namespace attnseg {

struct ResizedMask {
    int h = 0, w = 0;
    int num_classes = 0;
    std::vector<int> labels;                  // h*w, values 0..K-1
    std::vector<std::vector<double>> planes;  // K binary planes, h*w each
    std::vector<int> counts;                  // per-class pixel counts
};

// Nearest-neighbor label resize; label images are never interpolated.
ResizedMask resize_mask(const LabelMask& mask, int num_classes, int target_h, int target_w);

// Weighted cross-entropy between the first K channels of the aggregated cross
// map (renormalized per pixel) and the resized mask; weight_c = total/count_c.
Tensor ce_loss(const Tensor& a_ca, const ResizedMask& mask);

// Per class: bilinear resize of the WAS map to the mask grid, squared L2
// against the binary plane. Default reduction is the sum over classes and
// pixels; `mean_reduction` divides by the element count instead.
Tensor mse_loss(const WasMapStack& was, const ResizedMask& mask, bool mean_reduction = false);

// Noise-prediction loss; mean over elements by default.
Tensor ldm_loss(const AttentionProbeSet& probes, const NoisySample& sample,
                bool mean_reduction = true);

struct LossBreakdown {
    double l_ce = 0, l_mse = 0, l_ldm = 0, total = 0;
    double alpha = 0, beta = 0;
};

struct OptimizationConfig {
    int epochs = 200;
    double lr = 0.1;
    double alpha = 1.0;
    double beta = 0.005;
    int t_opt_min = 5, t_opt_max = 100;
    int target_h = 64, target_w = 64;
    double gate = 0.2;
    uint64_t seed = 0;
    bool use_was = true;
    bool mse_mean_reduction = false;  // Eq-as-written: sum
    bool ldm_mean_reduction = true;
    bool augment_enabled = false;
    AugmentationSpec augment_spec = AugmentationSpec::disabled();
    // repeated-"part" prompt; "" for the empty prompt; RANDOM for random init
    std::string prompt_word = "part";
    int t_test = 100;  // used for validation-sample selection

    std::string to_json_string() const;
    uint64_t hash() const;
};

struct OptimizeResult {
    PromptEmbeddings embeddings;
    std::vector<LossBreakdown> history;  // one entry per gradient step
    double best_val_miou = -1.0;         // -1 when no validation sample
    std::string manifest_json;
};

// One-shot / few-shot embedding optimization. Only indices 1..K-1 receive
// Adam updates; index 0 and everything at K and beyond stay frozen. With a
// validation sample the best-validation-mIoU embeddings are returned,
// otherwise the final-epoch ones.
OptimizeResult optimize(const std::vector<AnnotatedSample>& train,
                        const AnnotatedSample* validation, const Backbone& backbone,
                        const OptimizationConfig& config);

// Checkpoint container: magic, JSON metadata record, then a little-endian
// float32 blob of shape (token_capacity, d_txt).
void save_embeddings(const PromptEmbeddings& emb, const BackboneDescriptor& desc,
                     uint64_t config_hash, const std::string& path);
PromptEmbeddings load_embeddings(const std::string& path,
                                 const Backbone* expected_backbone = nullptr);

}  // namespace attnseg

#endif
