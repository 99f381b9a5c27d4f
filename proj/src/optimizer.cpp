#include "attnseg/optimizer.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <random>

#include "attnseg/eval.hpp"
#include "attnseg/inference.hpp"
#include "json.hpp"

using nlohmann::json;

namespace attnseg {

ResizedMask resize_mask(const LabelMask& mask, int num_classes, int target_h, int target_w) {
    ResizedMask out;
    out.h = target_h;
    out.w = target_w;
    out.num_classes = num_classes;
    out.labels.resize(static_cast<size_t>(target_h) * target_w);
    const double sy = static_cast<double>(mask.h) / target_h;
    const double sx = static_cast<double>(mask.w) / target_w;
    for (int y = 0; y < target_h; ++y)
        for (int x = 0; x < target_w; ++x) {
            const int yy = std::min(static_cast<int>((y + 0.5) * sy), mask.h - 1);
            const int xx = std::min(static_cast<int>((x + 0.5) * sx), mask.w - 1);
            const int label = mask.at(yy, xx);
            if (label >= num_classes)
                throw LabelRangeError("mask label " + std::to_string(label) +
                                      " >= num_classes " + std::to_string(num_classes));
            out.labels[static_cast<size_t>(y) * target_w + x] = label;
        }
    out.planes.assign(static_cast<size_t>(num_classes),
                      std::vector<double>(out.labels.size(), 0.0));
    out.counts.assign(static_cast<size_t>(num_classes), 0);
    for (size_t i = 0; i < out.labels.size(); ++i) {
        out.planes[static_cast<size_t>(out.labels[i])][i] = 1.0;
        ++out.counts[static_cast<size_t>(out.labels[i])];
    }
    return out;
}

Tensor ce_loss(const Tensor& a_ca, const ResizedMask& mask) {
    if (a_ca.dim(0) != mask.h || a_ca.dim(1) != mask.w)
        throw ShapeError("ce_loss: aggregated map does not match mask grid");
    return weighted_ce_hwc(a_ca, mask.labels, mask.num_classes);
}

Tensor mse_loss(const WasMapStack& was, const ResizedMask& mask, bool mean_reduction) {
    if (static_cast<int>(was.maps.size()) != mask.num_classes)
        throw ShapeError("mse_loss: stack size differs from class count");
    Tensor total;
    for (int k = 0; k < mask.num_classes; ++k) {
        Tensor r = resize_bilinear_hwc(was.maps[static_cast<size_t>(k)], mask.h, mask.w);
        Tensor plane = Tensor::from({mask.h, mask.w}, mask.planes[static_cast<size_t>(k)]);
        Tensor d = sub(r, plane);
        Tensor sq = sum_all(mul(d, d));
        total = total.defined() ? add(total, sq) : sq;
    }
    if (mean_reduction)
        total = scale(total, 1.0 / (static_cast<double>(mask.num_classes) * mask.h * mask.w));
    return total;
}

Tensor ldm_loss(const AttentionProbeSet& probes, const NoisySample& sample,
                bool mean_reduction) {
    if (probes.predicted_noise.shape() != sample.noise.shape())
        throw ShapeError("ldm_loss: predicted noise shape mismatch");
    Tensor d = sub(probes.predicted_noise, sample.noise);
    Tensor sq = mul(d, d);
    return mean_reduction ? mean_all(sq) : sum_all(sq);
}

std::string OptimizationConfig::to_json_string() const {
    json j;
    j["epochs"] = epochs;
    j["lr"] = lr;
    j["alpha"] = alpha;
    j["beta"] = beta;
    j["t_opt"] = {t_opt_min, t_opt_max};
    j["target"] = {target_h, target_w};
    j["gate"] = gate;
    j["seed"] = seed;
    j["use_was"] = use_was;
    j["mse_reduction"] = mse_mean_reduction ? "mean" : "sum";
    j["ldm_reduction"] = ldm_mean_reduction ? "mean" : "sum";
    j["augment"] = {{"enabled", augment_enabled},
                    {"horizontal_flip", augment_spec.horizontal_flip},
                    {"gaussian_blur", augment_spec.gaussian_blur},
                    {"crop", {augment_spec.crop_lo, augment_spec.crop_hi}},
                    {"rotation_deg", augment_spec.rotation_deg}};
    j["prompt_word"] = prompt_word;
    j["t_test"] = t_test;
    return j.dump();
}

uint64_t OptimizationConfig::hash() const {
    const std::string s = to_json_string();
    return fnv1a64(s.data(), s.size());
}

namespace {

struct AdamState {
    std::vector<double> m, v;
    int step = 0;
    double lr, beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
};

// Update only the optimizable rows; the state vectors span the whole table so
// coordinates keep stable indices.
void adam_step(AdamState& st, Tensor& emb, const std::vector<int>& rows, int d_txt) {
    ++st.step;
    const double bc1 = 1.0 - std::pow(st.beta1, st.step);
    const double bc2 = 1.0 - std::pow(st.beta2, st.step);
    auto& val = emb.mutable_values();
    const auto& g = emb.grad();
    for (int r : rows)
        for (int c = 0; c < d_txt; ++c) {
            const size_t i = static_cast<size_t>(r) * d_txt + c;
            st.m[i] = st.beta1 * st.m[i] + (1.0 - st.beta1) * g[i];
            st.v[i] = st.beta2 * st.v[i] + (1.0 - st.beta2) * g[i] * g[i];
            val[i] -= st.lr * (st.m[i] / bc1) / (std::sqrt(st.v[i] / bc2) + st.eps);
        }
}

double validation_miou(const AnnotatedSample& val, const PromptEmbeddings& emb,
                       const Backbone& backbone, const OptimizationConfig& cfg) {
    InferenceConfig ic;
    ic.t_test = cfg.t_test;
    ic.gate = cfg.gate;
    ic.use_was = cfg.use_was;
    ic.target_h = cfg.target_h;
    ic.target_w = cfg.target_w;
    SegmentationResult r = segment(val.image, emb, backbone, ic);
    return mean_iou(iou_per_class(r.labels, val.mask, emb.num_classes));
}

void snap_to_f32(Tensor& t) {
    for (auto& v : t.mutable_values()) v = static_cast<double>(static_cast<float>(v));
}

}  // namespace

OptimizeResult optimize(const std::vector<AnnotatedSample>& train,
                        const AnnotatedSample* validation, const Backbone& backbone,
                        const OptimizationConfig& config) {
    if (train.empty()) throw ConfigError("optimize: no training samples");
    const int k = static_cast<int>(train.front().class_names.size());
    for (const auto& s : train)
        if (static_cast<int>(s.class_names.size()) != k)
            throw ConfigError("optimize: training samples disagree on class count");
    const auto& sched = backbone.scheduler();
    if (config.t_opt_min < 0 || config.t_opt_max > sched.t_max() ||
        config.t_opt_min > config.t_opt_max)
        throw TimestepError("t_opt range outside scheduler range");
    if (config.epochs < 0 || config.lr < 0) throw ConfigError("negative epochs or lr");

    std::string prompt_text;
    if (config.prompt_word == kRandomPromptSentinel) {
        prompt_text = kRandomPromptSentinel;
    } else if (!config.prompt_word.empty()) {
        for (int i = 0; i < k; ++i)
            prompt_text += (i ? " " : "") + config.prompt_word;
    }
    PromptEmbeddings emb = backbone.encode_prompt(prompt_text, k, config.seed);
    emb.class_names = train.front().class_names;

    const int d_txt = backbone.descriptor().d_txt;
    AdamState adam;
    adam.lr = config.lr;
    adam.m.assign(emb.embeddings.values().size(), 0.0);
    adam.v.assign(emb.embeddings.values().size(), 0.0);

    std::mt19937_64 rng(config.seed);
    OptimizeResult result;
    double best_val = -1.0;
    std::vector<double> best_emb;

    for (int epoch = 0; epoch < config.epochs; ++epoch) {
        for (size_t si = 0; si < train.size(); ++si) {
            const uint64_t aug_seed = rng();
            const int t =
                std::uniform_int_distribution<int>(config.t_opt_min, config.t_opt_max)(rng);
            const uint64_t noise_seed = rng();

            AnnotatedSample sample = config.augment_enabled
                                         ? augment(train[si], config.augment_spec, aug_seed)
                                         : train[si];
            LatentImage latent = backbone.encode_image(sample.image);
            ResizedMask mask = resize_mask(sample.mask, k, config.target_h, config.target_w);
            NoisySample noisy = backbone.add_noise(latent, t, nullptr, noise_seed);

            emb.embeddings.set_requires_grad(true);
            AttentionProbeSet probes = backbone.denoise_with_probes(noisy, emb);
            Tensor a_ca = aggregate_cross(probes, config.target_h, config.target_w);
            Tensor l_ce = ce_loss(a_ca, mask);
            Tensor l_mse;
            if (config.use_was) {
                Tensor a_sa = aggregate_self(probes);
                WasMapStack was = stack_was(a_ca, a_sa, k, config.gate);
                l_mse = mse_loss(was, mask, config.mse_mean_reduction);
            } else {
                l_mse = Tensor::scalar(0.0);
            }
            Tensor l_ldm = ldm_loss(probes, noisy, config.ldm_mean_reduction);
            Tensor total = add(l_ce, add(scale(l_mse, config.alpha), scale(l_ldm, config.beta)));

            LossBreakdown lb;
            lb.l_ce = l_ce.item();
            lb.l_mse = l_mse.item();
            lb.l_ldm = l_ldm.item();
            lb.alpha = config.alpha;
            lb.beta = config.beta;
            lb.total = lb.l_ce + lb.alpha * lb.l_mse + lb.beta * lb.l_ldm;
            if (!std::isfinite(lb.total))
                throw DivergenceError("non-finite loss at epoch " + std::to_string(epoch) +
                                      " (ce=" + std::to_string(lb.l_ce) +
                                      " mse=" + std::to_string(lb.l_mse) +
                                      " ldm=" + std::to_string(lb.l_ldm) + ")");
            result.history.push_back(lb);

            total.backward();
            adam_step(adam, emb.embeddings, emb.optimizable_indices, d_txt);
            emb.embeddings.set_requires_grad(false);
        }
        if (validation) {
            const double v = validation_miou(*validation, emb, backbone, config);
            if (v > best_val) {
                best_val = v;
                best_emb = emb.embeddings.values();
            }
        }
    }

    if (validation && !best_emb.empty()) {
        emb.embeddings.mutable_values() = best_emb;
        result.best_val_miou = best_val;
    }
    // checkpoints store float32; snap so save/load round-trips are exact
    snap_to_f32(emb.embeddings);
    result.embeddings = std::move(emb);

    json man;
    man["config"] = json::parse(config.to_json_string());
    man["config_hash"] = config.hash();
    man["backbone"] = json::parse(backbone.descriptor().to_json_string());
    man["num_classes"] = k;
    man["train_ids"] = json::array();
    for (const auto& s : train) man["train_ids"].push_back(s.id);
    man["steps"] = result.history.size();
    if (!result.history.empty()) man["final_total_loss"] = result.history.back().total;
    if (validation) man["best_val_miou"] = result.best_val_miou;
    result.manifest_json = man.dump(2);
    return result;
}

// --- checkpoint ------------------------------------------------------------

static constexpr char kMagic[] = "ATTNSEGCKPT1\n";

void save_embeddings(const PromptEmbeddings& emb, const BackboneDescriptor& desc,
                     uint64_t config_hash, const std::string& path) {
    json meta;
    meta["version"] = 1;
    meta["num_classes"] = emb.num_classes;
    meta["class_names"] = emb.class_names;
    meta["token_capacity"] = emb.embeddings.dim(0);
    meta["d_txt"] = emb.embeddings.dim(1);
    meta["backbone_name"] = desc.name;
    meta["backbone_digest"] = desc.param_digest;
    meta["config_hash"] = config_hash;
    const std::string js = meta.dump();

    std::ofstream f(path, std::ios::binary);
    if (!f) throw FormatError("cannot open checkpoint for writing: " + path);
    f.write(kMagic, sizeof(kMagic) - 1);
    const uint64_t len = js.size();
    f.write(reinterpret_cast<const char*>(&len), sizeof(len));
    f.write(js.data(), static_cast<std::streamsize>(js.size()));
    std::vector<float> blob(emb.embeddings.values().size());
    for (size_t i = 0; i < blob.size(); ++i)
        blob[i] = static_cast<float>(emb.embeddings.values()[i]);
    f.write(reinterpret_cast<const char*>(blob.data()),
            static_cast<std::streamsize>(blob.size() * sizeof(float)));
    if (!f) throw FormatError("checkpoint write failed: " + path);
}

PromptEmbeddings load_embeddings(const std::string& path, const Backbone* expected_backbone) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw FormatError("cannot open checkpoint: " + path);
    std::string bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());

    const size_t magic_len = sizeof(kMagic) - 1;
    if (bytes.size() < magic_len + sizeof(uint64_t) ||
        std::memcmp(bytes.data(), kMagic, magic_len) != 0)
        throw FormatError("not a checkpoint file: " + path);
    uint64_t len = 0;
    std::memcpy(&len, bytes.data() + magic_len, sizeof(len));
    const size_t json_off = magic_len + sizeof(uint64_t);
    if (bytes.size() < json_off + len) throw FormatError("truncated checkpoint: " + path);
    json meta;
    try {
        meta = json::parse(bytes.substr(json_off, len));
    } catch (const json::exception& e) {
        throw FormatError("corrupt checkpoint metadata: " + std::string(e.what()));
    }
    const int tok = meta.at("token_capacity");
    const int d_txt = meta.at("d_txt");
    const size_t blob_off = json_off + len;
    const size_t blob_len = static_cast<size_t>(tok) * d_txt * sizeof(float);
    if (bytes.size() != blob_off + blob_len)
        throw FormatError("truncated or oversized checkpoint blob: " + path);

    if (expected_backbone) {
        const auto& d = expected_backbone->descriptor();
        if (meta.at("backbone_digest").get<uint64_t>() != d.param_digest ||
            meta.at("backbone_name").get<std::string>() != d.name)
            throw CompatibilityError("checkpoint was produced by backbone '" +
                                     meta.at("backbone_name").get<std::string>() +
                                     "' and does not match '" + d.name + "'");
    }

    std::vector<double> vals(static_cast<size_t>(tok) * d_txt);
    const auto* fp = reinterpret_cast<const float*>(bytes.data() + blob_off);
    for (size_t i = 0; i < vals.size(); ++i) vals[i] = static_cast<double>(fp[i]);

    PromptEmbeddings emb;
    emb.embeddings = Tensor::from({tok, d_txt}, std::move(vals));
    emb.num_classes = meta.at("num_classes");
    emb.class_names = meta.at("class_names").get<std::vector<std::string>>();
    for (int i = 1; i < emb.num_classes; ++i) emb.optimizable_indices.push_back(i);
    return emb;
}

}  // namespace attnseg
