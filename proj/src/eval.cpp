#include "attnseg/eval.hpp"

#include <cmath>
#include <limits>
#include <sstream>

#include "json.hpp"

namespace attnseg {

static constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

void IoUAccumulator::add(const LabelMask& pred, const LabelMask& gt) {
    if (pred.h != gt.h || pred.w != gt.w) throw EvalError("prediction/gt shape mismatch");
    const int k = static_cast<int>(inter.size());
    for (size_t i = 0; i < pred.data.size(); ++i) {
        const int p = pred.data[i], g = gt.data[i];
        if (p >= k || g >= k) throw EvalError("label outside class range");
        if (p == g) {
            ++inter[static_cast<size_t>(p)];
            ++uni[static_cast<size_t>(p)];
        } else {
            ++uni[static_cast<size_t>(p)];
            ++uni[static_cast<size_t>(g)];
        }
    }
}

std::vector<double> IoUAccumulator::result() const {
    std::vector<double> out(inter.size(), kNaN);
    for (size_t c = 0; c < inter.size(); ++c)
        if (uni[c] > 0) out[c] = static_cast<double>(inter[c]) / static_cast<double>(uni[c]);
    return out;
}

std::vector<double> iou_per_class(const LabelMask& pred, const LabelMask& gt, int num_classes) {
    IoUAccumulator acc(num_classes);
    acc.add(pred, gt);
    return acc.result();
}

double mean_iou(const std::vector<double>& per_class) {
    double s = 0;
    int n = 0;
    for (double v : per_class)
        if (!std::isnan(v)) {
            s += v;
            ++n;
        }
    return n > 0 ? s / n : kNaN;
}

EvalReport evaluate(const PromptEmbeddings& emb, const std::vector<AnnotatedSample>& test,
                    const Backbone& backbone, const InferenceConfig& cfg,
                    const std::vector<uint64_t>& seeds, bool per_image, int patch) {
    if (test.empty()) throw EvalError("empty test set");
    if (seeds.empty()) throw EvalError("at least one seed required");
    const int k = emb.num_classes;

    EvalReport rep;
    rep.class_names = emb.class_names;
    rep.seeds = seeds;
    for (uint64_t seed : seeds) {
        InferenceConfig c = cfg;
        c.seed = seed;
        std::vector<double> per_class;
        if (per_image) {
            std::vector<double> sums(static_cast<size_t>(k), 0.0);
            std::vector<int> counts(static_cast<size_t>(k), 0);
            for (const auto& s : test) {
                SegmentationResult r = patch > 0 ? segment_patched(s.image, emb, backbone, c, patch)
                                                 : segment(s.image, emb, backbone, c);
                auto iou = iou_per_class(r.labels, s.mask, k);
                for (int cl = 0; cl < k; ++cl)
                    if (!std::isnan(iou[static_cast<size_t>(cl)])) {
                        sums[static_cast<size_t>(cl)] += iou[static_cast<size_t>(cl)];
                        ++counts[static_cast<size_t>(cl)];
                    }
            }
            per_class.assign(static_cast<size_t>(k), kNaN);
            for (int cl = 0; cl < k; ++cl)
                if (counts[static_cast<size_t>(cl)] > 0)
                    per_class[static_cast<size_t>(cl)] =
                        sums[static_cast<size_t>(cl)] / counts[static_cast<size_t>(cl)];
        } else {
            IoUAccumulator acc(k);
            for (const auto& s : test) {
                SegmentationResult r = patch > 0 ? segment_patched(s.image, emb, backbone, c, patch)
                                                 : segment(s.image, emb, backbone, c);
                acc.add(r.labels, s.mask);
            }
            per_class = acc.result();
        }
        rep.per_seed_class.push_back(per_class);
        rep.per_seed_average.push_back(mean_iou(per_class));
    }

    const size_t ns = seeds.size();
    rep.per_class_mean.assign(static_cast<size_t>(k), kNaN);
    rep.per_class_std.assign(static_cast<size_t>(k), 0.0);
    for (int cl = 0; cl < k; ++cl) {
        double s = 0;
        int n = 0;
        for (const auto& pc : rep.per_seed_class)
            if (!std::isnan(pc[static_cast<size_t>(cl)])) {
                s += pc[static_cast<size_t>(cl)];
                ++n;
            }
        if (n == 0) continue;
        const double m = s / n;
        rep.per_class_mean[static_cast<size_t>(cl)] = m;
        if (n >= 2) {
            double v = 0;
            for (const auto& pc : rep.per_seed_class)
                if (!std::isnan(pc[static_cast<size_t>(cl)]))
                    v += (pc[static_cast<size_t>(cl)] - m) * (pc[static_cast<size_t>(cl)] - m);
            rep.per_class_std[static_cast<size_t>(cl)] = std::sqrt(v / n);
        }
    }
    {
        double s = 0;
        for (double v : rep.per_seed_average) s += v;
        rep.average_mean = s / static_cast<double>(ns);
        double v = 0;
        for (double a : rep.per_seed_average)
            v += (a - rep.average_mean) * (a - rep.average_mean);
        rep.average_std = ns >= 2 ? std::sqrt(v / static_cast<double>(ns)) : 0.0;
    }

    nlohmann::json man;
    man["seeds"] = seeds;
    man["test_images"] = test.size();
    man["per_image_accumulation"] = per_image;
    man["patch"] = patch;
    man["t_test"] = cfg.t_test;
    man["use_was"] = cfg.use_was;
    man["gate"] = cfg.gate;
    rep.manifest_json = man.dump();
    return rep;
}

static std::string fmt(double v, int prec) {
    if (std::isnan(v)) return "n/a";
    std::ostringstream os;
    os.precision(prec);
    os << std::fixed << v;
    return os.str();
}

std::string emit_table(const std::vector<EvalReport>& reports, const std::string& format) {
    if (reports.empty()) throw EvalError("no reports to tabulate");
    const auto& names = reports.front().class_names;
    for (const auto& r : reports)
        if (r.class_names != names) throw EvalError("reports disagree on class schema");

    // column order: parts, then background, then the average
    std::vector<size_t> order;
    for (size_t c = 1; c < names.size(); ++c) order.push_back(c);
    order.push_back(0);

    std::ostringstream os;
    if (format == "csv") {
        os << "method";
        for (size_t c : order) os << "," << names[c] << "_mean," << names[c] << "_std";
        os << ",Average_mean,Average_std\n";
        os.precision(17);
        for (const auto& r : reports) {
            os << r.label;
            for (size_t c : order)
                os << "," << r.per_class_mean[c] << "," << r.per_class_std[c];
            os << "," << r.average_mean << "," << r.average_std << "\n";
        }
    } else if (format == "markdown") {
        os << "| method |";
        for (size_t c : order) os << " " << names[c] << " |";
        os << " Average |\n|---|";
        for (size_t c = 0; c <= order.size(); ++c) os << "---|";
        os << "\n";
        for (const auto& r : reports) {
            const bool with_std = r.seeds.size() >= 2;
            os << "| " << r.label << " |";
            for (size_t c : order) {
                os << " " << fmt(r.per_class_mean[c], 4);
                if (with_std && !std::isnan(r.per_class_mean[c]))
                    os << " ± " << fmt(r.per_class_std[c], 4);
                os << " |";
            }
            os << " " << fmt(r.average_mean, 4);
            if (with_std) os << " ± " << fmt(r.average_std, 4);
            os << " |\n";
        }
    } else {
        throw EvalError("unknown table format: " + format);
    }
    return os.str();
}

}  // namespace attnseg
