#ifndef ATTNSEG_EVAL_HPP
#define ATTNSEG_EVAL_HPP

#include <cstdint>
#include <string>
#include <vector>

#include "attnseg/data.hpp"
#include "attnseg/inference.hpp"

namespace attnseg {

// Per-class IoU for one mask pair; classes absent from both sides come back
// as NaN and are excluded from averages.
std::vector<double> iou_per_class(const LabelMask& pred, const LabelMask& gt, int num_classes);

// Dataset-level accumulation: intersections and unions are summed over all
// images before the division.
struct IoUAccumulator {
    explicit IoUAccumulator(int num_classes)
        : inter(static_cast<size_t>(num_classes), 0), uni(static_cast<size_t>(num_classes), 0) {}
    void add(const LabelMask& pred, const LabelMask& gt);
    std::vector<double> result() const;

    std::vector<int64_t> inter, uni;
};

double mean_iou(const std::vector<double>& per_class);  // NaN entries excluded

struct EvalReport {
    std::string label;
    std::vector<std::string> class_names;
    std::vector<uint64_t> seeds;
    std::vector<std::vector<double>> per_seed_class;  // [seed][class]
    std::vector<double> per_seed_average;
    std::vector<double> per_class_mean, per_class_std;
    double average_mean = 0, average_std = 0;
    std::string manifest_json;
};

// Segments every test image once per seed (the seed drives the inference
// noise) and reports mean +- std across seeds.
EvalReport evaluate(const PromptEmbeddings& emb, const std::vector<AnnotatedSample>& test,
                    const Backbone& backbone, const InferenceConfig& cfg,
                    const std::vector<uint64_t>& seeds, bool per_image = false,
                    int patch = 0);

// Paper-style table: one row per report; columns are the part classes, then
// the background class, then Average. format is "csv" or "markdown".
std::string emit_table(const std::vector<EvalReport>& reports, const std::string& format);

}  // namespace attnseg

#endif
