#include "attnseg/data.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <random>

#include <opencv2/imgproc.hpp>

#include "json.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace attnseg {

static cv::Mat to_cv_rgb(const ImageU8& img) {
    return cv::Mat(img.h, img.w, CV_8UC3, const_cast<uint8_t*>(img.data.data())).clone();
}
static cv::Mat to_cv_mask(const LabelMask& m) {
    return cv::Mat(m.h, m.w, CV_8UC1, const_cast<uint8_t*>(m.data.data())).clone();
}
static ImageU8 from_cv_rgb(const cv::Mat& m) {
    ImageU8 img;
    img.h = m.rows;
    img.w = m.cols;
    img.data.assign(m.data, m.data + static_cast<size_t>(m.rows) * m.cols * 3);
    return img;
}
static LabelMask from_cv_mask(const cv::Mat& m) {
    LabelMask mask;
    mask.h = m.rows;
    mask.w = m.cols;
    mask.data.assign(m.data, m.data + static_cast<size_t>(m.rows) * m.cols);
    return mask;
}

AnnotatedSample flip_horizontal(const AnnotatedSample& sample) {
    AnnotatedSample out = sample;
    for (int y = 0; y < sample.image.h; ++y)
        for (int x = 0; x < sample.image.w; ++x) {
            const uint8_t* src = sample.image.px(y, sample.image.w - 1 - x);
            uint8_t* dst = out.image.px(y, x);
            dst[0] = src[0];
            dst[1] = src[1];
            dst[2] = src[2];
            out.mask.at(y, x) = sample.mask.at(y, sample.mask.w - 1 - x);
        }
    return out;
}

AnnotatedSample augment(const AnnotatedSample& sample, const AugmentationSpec& spec,
                        uint64_t seed) {
    std::mt19937_64 rng(seed);
    AnnotatedSample out = sample;

    if (spec.horizontal_flip && std::uniform_real_distribution<double>(0, 1)(rng) < 0.5)
        out = flip_horizontal(out);

    if (spec.crop_lo < 1.0 || spec.crop_hi < 1.0) {
        const double ratio =
            std::uniform_real_distribution<double>(spec.crop_lo, spec.crop_hi)(rng);
        const int ch = std::max(1, static_cast<int>(std::lround(out.image.h * ratio)));
        const int cw = std::max(1, static_cast<int>(std::lround(out.image.w * ratio)));
        const int y0 = std::uniform_int_distribution<int>(0, out.image.h - ch)(rng);
        const int x0 = std::uniform_int_distribution<int>(0, out.image.w - cw)(rng);
        cv::Rect roi(x0, y0, cw, ch);
        cv::Mat img = to_cv_rgb(out.image)(roi), msk = to_cv_mask(out.mask)(roi);
        cv::Mat imgr, mskr;
        cv::resize(img, imgr, cv::Size(out.image.w, out.image.h), 0, 0, cv::INTER_LINEAR);
        cv::resize(msk, mskr, cv::Size(out.mask.w, out.mask.h), 0, 0, cv::INTER_NEAREST);
        out.image = from_cv_rgb(imgr);
        out.mask = from_cv_mask(mskr);
    }

    if (spec.rotation_deg > 0.0) {
        const double deg = std::uniform_real_distribution<double>(-spec.rotation_deg,
                                                                  spec.rotation_deg)(rng);
        cv::Mat rot = cv::getRotationMatrix2D(
            cv::Point2f(out.image.w / 2.0f, out.image.h / 2.0f), deg, 1.0);
        cv::Mat img = to_cv_rgb(out.image), msk = to_cv_mask(out.mask), imgr, mskr;
        cv::warpAffine(img, imgr, rot, img.size(), cv::INTER_LINEAR, cv::BORDER_CONSTANT,
                       cv::Scalar(0, 0, 0));
        cv::warpAffine(msk, mskr, rot, msk.size(), cv::INTER_NEAREST, cv::BORDER_CONSTANT,
                       cv::Scalar(0));
        out.image = from_cv_rgb(imgr);
        out.mask = from_cv_mask(mskr);
    }

    if (spec.gaussian_blur && std::uniform_real_distribution<double>(0, 1)(rng) < 0.5) {
        const double sigma = std::uniform_real_distribution<double>(0.1, 2.0)(rng);
        cv::Mat img = to_cv_rgb(out.image), imgb;
        cv::GaussianBlur(img, imgb, cv::Size(5, 5), sigma);
        out.image = from_cv_rgb(imgb);
    }
    return out;
}

SplitResult sample_split(int sample_count, int n, uint64_t seed) {
    const int need = n + (n > 1 ? 1 : 0);
    if (sample_count < need)
        throw SplitError("need at least " + std::to_string(need) + " samples, have " +
                         std::to_string(sample_count));
    std::vector<int> idx(static_cast<size_t>(sample_count));
    std::iota(idx.begin(), idx.end(), 0);
    std::mt19937_64 rng(seed);
    std::shuffle(idx.begin(), idx.end(), rng);
    SplitResult out;
    out.train.assign(idx.begin(), idx.begin() + n);
    if (n > 1) out.validation.push_back(idx[static_cast<size_t>(n)]);
    out.test.assign(idx.begin() + need, idx.end());
    return out;
}

bool overlap_exceeds(const BBox& own, const BBox& other, double frac,
                     bool denominator_other) {
    const int ix0 = std::max(own[0], other[0]);
    const int iy0 = std::max(own[1], other[1]);
    const int ix1 = std::min(own[2], other[2]);
    const int iy1 = std::min(own[3], other[3]);
    const double inter =
        static_cast<double>(std::max(0, ix1 - ix0)) * std::max(0, iy1 - iy0);
    const BBox& den = denominator_other ? other : own;
    const double area = static_cast<double>(den[2] - den[0]) * (den[3] - den[1]);
    return area > 0 && inter > frac * area;
}

std::vector<AnnotatedSample> prepare_pascal_part(const std::string& raw_root,
                                                 const std::string& category,
                                                 const std::string& mapping_path,
                                                 PrepStats* stats,
                                                 bool overlap_denominator_other) {
    int min_side;
    if (category == "car")
        min_side = 50;
    else if (category == "horse")
        min_side = 32;
    else
        throw ConfigError("unknown pascal-part category: " + category);

    std::ifstream mf(mapping_path);
    if (!mf) throw ConfigError("cannot open part mapping: " + mapping_path);
    json mapping = json::parse(mf);
    std::vector<std::string> class_names = mapping.at("classes");
    std::vector<int> raw_to_class(256, 0);
    for (auto& [raw, cls] : mapping.at("raw_to_class").items())
        raw_to_class[static_cast<size_t>(std::stoi(raw))] = cls.get<int>();

    PrepStats st;
    std::vector<AnnotatedSample> out;
    const fs::path ann_dir = fs::path(raw_root) / "annotations";
    if (!fs::exists(ann_dir)) throw IngestError("missing annotations dir: " + ann_dir.string());
    std::vector<fs::path> ann_files;
    for (const auto& e : fs::directory_iterator(ann_dir))
        if (e.path().extension() == ".json") ann_files.push_back(e.path());
    std::sort(ann_files.begin(), ann_files.end());

    for (const auto& ap : ann_files) {
        std::ifstream af(ap);
        json ann = json::parse(af);
        const std::string id = ap.stem().string();
        ImageU8 image = read_image((fs::path(raw_root) / "images" / (id + ".png")).string());

        std::vector<BBox> boxes;
        for (const auto& inst : ann.at("instances"))
            boxes.push_back({inst.at("bbox")[0], inst.at("bbox")[1], inst.at("bbox")[2],
                             inst.at("bbox")[3]});

        for (size_t i = 0; i < boxes.size(); ++i) {
            ++st.total;
            bool overlapped = false;
            for (size_t j = 0; j < boxes.size() && !overlapped; ++j)
                if (j != i)
                    overlapped = overlap_exceeds(boxes[i], boxes[j], 0.05,
                                                 overlap_denominator_other);
            if (overlapped) {
                ++st.removed_overlap;
                continue;
            }
            const BBox& b = boxes[i];
            const int bw = b[2] - b[0], bh = b[3] - b[1];
            // strict "smaller than": a crop of exactly min_side is kept
            if (bw < min_side || bh < min_side) {
                ++st.removed_size;
                continue;
            }
            LabelMask raw_mask =
                read_mask((fs::path(raw_root) /
                           ann.at("instances")[i].at("parts").get<std::string>())
                              .string());
            AnnotatedSample s;
            s.id = id + "_" + std::to_string(i);
            s.class_names = class_names;
            s.image.h = bh;
            s.image.w = bw;
            s.image.data.resize(static_cast<size_t>(bh) * bw * 3);
            s.mask = LabelMask::filled(bh, bw, 0);
            for (int y = 0; y < bh; ++y)
                for (int x = 0; x < bw; ++x) {
                    const uint8_t* src = image.px(b[1] + y, b[0] + x);
                    uint8_t* dst = s.image.px(y, x);
                    dst[0] = src[0];
                    dst[1] = src[1];
                    dst[2] = src[2];
                    s.mask.at(y, x) = static_cast<uint8_t>(
                        raw_to_class[raw_mask.at(b[1] + y, b[0] + x)]);
                }
            out.push_back(std::move(s));
            ++st.kept;
        }
    }
    if (stats) *stats = st;
    return out;
}

const std::vector<std::string>& celeba_class_names() {
    static const std::vector<std::string> names = {"Background", "Cloth", "Ear",   "Eye",
                                                   "Eyebrow",    "Face",  "Hair",  "Mouth",
                                                   "Neck",       "Nose"};
    return names;
}

std::vector<AnnotatedSample> prepare_celeba(const std::string& raw_root) {
    // paint order: coarse parts first so finer parts overwrite them
    static const std::vector<std::pair<std::string, int>> part_to_class = {
        {"skin", 5},  {"neck", 8},  {"cloth", 1}, {"hair", 6},  {"l_ear", 2},
        {"r_ear", 2}, {"l_brow", 4}, {"r_brow", 4}, {"mouth", 7}, {"u_lip", 7},
        {"l_lip", 7}, {"l_eye", 3}, {"r_eye", 3},  {"nose", 9}};
    const fs::path img_dir = fs::path(raw_root) / "images";
    const fs::path mask_dir = fs::path(raw_root) / "masks";
    if (!fs::exists(img_dir)) throw IngestError("missing images dir: " + img_dir.string());

    std::vector<fs::path> img_files;
    for (const auto& e : fs::directory_iterator(img_dir))
        if (e.path().extension() == ".png") img_files.push_back(e.path());
    std::sort(img_files.begin(), img_files.end());

    std::vector<AnnotatedSample> out;
    for (const auto& ip : img_files) {
        const std::string id = ip.stem().string();
        ImageU8 image = read_image(ip.string());
        if (image.h != 512 || image.w != 512) {
            cv::Mat m = to_cv_rgb(image), r;
            cv::resize(m, r, cv::Size(512, 512), 0, 0, cv::INTER_LINEAR);
            image = from_cv_rgb(r);
        }
        AnnotatedSample s;
        s.id = id;
        s.image = std::move(image);
        s.mask = LabelMask::filled(512, 512, 0);
        s.class_names = celeba_class_names();
        int parts_found = 0;
        for (const auto& [part, cls] : part_to_class) {
            const fs::path mp = mask_dir / (id + "_" + part + ".png");
            if (!fs::exists(mp)) continue;
            LabelMask pm = read_mask(mp.string());
            if (pm.h != 512 || pm.w != 512) {
                cv::Mat m = to_cv_mask(pm), r;
                cv::resize(m, r, cv::Size(512, 512), 0, 0, cv::INTER_NEAREST);
                pm = from_cv_mask(r);
            }
            for (size_t i = 0; i < pm.data.size(); ++i)
                if (pm.data[i]) s.mask.data[i] = static_cast<uint8_t>(cls);
            ++parts_found;
        }
        if (parts_found == 0)
            throw IngestError("no part masks found for image '" + id + "' under " +
                              mask_dir.string());
        out.push_back(std::move(s));
    }
    return out;
}

void save_samples(const std::vector<AnnotatedSample>& samples, const std::string& dir,
                  const std::string& extra_manifest_json) {
    fs::create_directories(dir);
    json manifest = json::parse(extra_manifest_json);
    manifest["count"] = samples.size();
    if (!samples.empty()) manifest["class_names"] = samples.front().class_names;
    std::vector<std::string> ids;
    for (const auto& s : samples) {
        write_image(s.image, (fs::path(dir) / (s.id + ".img.png")).string());
        write_mask(s.mask, (fs::path(dir) / (s.id + ".mask.png")).string());
        ids.push_back(s.id);
    }
    manifest["ids"] = ids;
    std::ofstream f(fs::path(dir) / "manifest.json");
    f << manifest.dump(2) << "\n";
}

std::vector<AnnotatedSample> load_samples(const std::string& dir) {
    std::ifstream f(fs::path(dir) / "manifest.json");
    std::vector<std::string> class_names;
    std::vector<std::string> ids;
    if (f) {
        json manifest = json::parse(f);
        if (manifest.contains("class_names"))
            class_names = manifest["class_names"].get<std::vector<std::string>>();
        if (manifest.contains("ids")) ids = manifest["ids"].get<std::vector<std::string>>();
    }
    if (ids.empty()) {
        for (const auto& e : fs::directory_iterator(dir)) {
            const std::string name = e.path().filename().string();
            const auto pos = name.find(".img.png");
            if (pos != std::string::npos) ids.push_back(name.substr(0, pos));
        }
        std::sort(ids.begin(), ids.end());
    }
    std::vector<AnnotatedSample> out;
    for (const auto& id : ids) {
        AnnotatedSample s;
        s.id = id;
        s.image = read_image((fs::path(dir) / (id + ".img.png")).string());
        s.mask = read_mask((fs::path(dir) / (id + ".mask.png")).string());
        s.class_names = class_names;
        out.push_back(std::move(s));
    }
    return out;
}

}  // namespace attnseg
