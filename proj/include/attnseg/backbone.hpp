#ifndef ATTNSEG_BACKBONE_HPP
#define ATTNSEG_BACKBONE_HPP

#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "attnseg/errors.hpp"
#include "attnseg/image.hpp"
#include "attnseg/scheduler.hpp"
#include "attnseg/tensor.hpp"

namespace attnseg {

// Encoded image in the model's latent space, stored (H_lat, W_lat, C_lat).
struct LatentImage {
    Tensor data;
    double latent_to_image_scale = 1.0;
};

struct NoisySample {
    Tensor noisy;   // same layout as LatentImage.data
    Tensor noise;   // the standard-normal draw that was mixed in
    int timestep = 0;
};

struct PromptEmbeddings {
    Tensor embeddings;  // (token_capacity, d_txt)
    int num_classes = 0;
    std::vector<int> optimizable_indices;  // 1..K-1; index 0 never optimized
    std::vector<std::string> class_names;
};

struct AttentionProbeSet {
    std::map<int, Tensor> cross;        // layer id -> (H'_l, W'_l, T_tok), head-averaged
    std::map<int, Tensor> self_attn;    // layer id -> (h, w, h, w), head-averaged
    Tensor predicted_noise;             // latent layout
};

struct BackboneDescriptor {
    std::string name;
    std::vector<int> cross_layer_ids;
    std::vector<int> self_layer_ids;
    int latent_channels = 0;
    int latent_h = 0;
    int latent_w = 0;
    int input_h = 0;
    int input_w = 0;
    int token_capacity = 0;
    int d_txt = 0;
    int t_max = 0;
    uint64_t param_digest = 0;

    std::string to_json_string() const;
};

// Sentinel for encode_prompt requesting random initialization instead of the
// text encoder.
inline constexpr const char* kRandomPromptSentinel = "RANDOM";

// Frozen text-conditioned latent diffusion backbone. Implementations are
// immutable after construction; forward passes own their graph state.
class Backbone {
public:
    virtual ~Backbone() = default;

    virtual const BackboneDescriptor& descriptor() const = 0;
    virtual const DdpmScheduler& scheduler() const = 0;

    virtual LatentImage encode_image(const ImageU8& image) const = 0;

    // noise, when given, must match the latent shape; otherwise a draw seeded
    // by `seed` is used.
    NoisySample add_noise(const LatentImage& latent, int t,
                          const Tensor* noise = nullptr, uint64_t seed = 0) const;

    virtual AttentionProbeSet denoise_with_probes(const NoisySample& sample,
                                                  const PromptEmbeddings& prompt) const = 0;

    virtual PromptEmbeddings encode_prompt(const std::string& prompt_text, int num_classes,
                                           uint64_t seed = 0) const = 0;

    // Digest over all frozen parameters; recomputed on demand so mutation is
    // detectable.
    virtual uint64_t param_digest() const = 0;
};

std::unique_ptr<Backbone> make_backbone(const std::string& name,
                                        const std::string& weights_path = "");

// Seeded standard-normal tensor; the shared draw primitive for noise and
// random prompt init.
Tensor standard_normal(std::vector<int> shape, uint64_t seed);

uint64_t fnv1a64(const void* data, size_t len, uint64_t seed = 1469598103934665603ULL);

}  // namespace attnseg

#endif
