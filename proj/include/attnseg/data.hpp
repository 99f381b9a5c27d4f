#ifndef ATTNSEG_DATA_HPP
#define ATTNSEG_DATA_HPP

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "attnseg/errors.hpp"
#include "attnseg/image.hpp"

namespace attnseg {

struct AnnotatedSample {
    ImageU8 image;
    LabelMask mask;
    std::vector<std::string> class_names;
    std::string id;
};

struct AugmentationSpec {
    bool horizontal_flip = true;
    bool gaussian_blur = true;
    double crop_lo = 0.5, crop_hi = 1.0;  // side-ratio range of the random crop
    double rotation_deg = 30.0;           // rotation drawn from [-r, r]

    static AugmentationSpec disabled() {
        return {false, false, 1.0, 1.0, 0.0};
    }
    static AugmentationSpec pascal_car() { return {true, true, 0.5, 1.0, 30.0}; }
    static AugmentationSpec pascal_horse() { return {true, true, 0.8, 1.0, 30.0}; }
    static AugmentationSpec celeba() { return {true, true, 0.6, 1.0, 10.0}; }
};

// Seeded joint image/mask augmentation. The mask follows every geometric
// transform with nearest-neighbor resampling and is never blurred; pixels
// exposed by rotation get background label 0 (black in the image).
AnnotatedSample augment(const AnnotatedSample& sample, const AugmentationSpec& spec,
                        uint64_t seed);
AnnotatedSample flip_horizontal(const AnnotatedSample& sample);

// Index split: n training samples, one validation sample when n > 1, the
// remainder is the test set.
struct SplitResult {
    std::vector<int> train, validation, test;
};
SplitResult sample_split(int sample_count, int n, uint64_t seed);

// bbox as [x0, y0, x1, y1), half-open
using BBox = std::array<int, 4>;
// True when intersect(own, other) exceeds `frac` of own's area (or of other's
// area when denominator_other is set).
bool overlap_exceeds(const BBox& own, const BBox& other, double frac = 0.05,
                     bool denominator_other = false);

struct PrepStats {
    int total = 0;
    int removed_overlap = 0;
    int removed_size = 0;
    int kept = 0;
};

// Raw layout: {root}/images/{id}.png and {root}/annotations/{id}.json listing
// instances with a bbox and a raw part-label mask path. The raw-label to
// class-index mapping ships as an editable JSON config (see configs/).
std::vector<AnnotatedSample> prepare_pascal_part(const std::string& raw_root,
                                                 const std::string& category,
                                                 const std::string& mapping_path,
                                                 PrepStats* stats = nullptr,
                                                 bool overlap_denominator_other = false);

// Raw layout: {root}/images/{id}.png plus {root}/masks/{id}_{part}.png binary
// part masks (CelebAMask-HQ naming); left/right variants merge into one class.
std::vector<AnnotatedSample> prepare_celeba(const std::string& raw_root);

const std::vector<std::string>& celeba_class_names();

// Prepared-dataset directory: {dir}/{id}.img.png + {id}.mask.png + manifest.json
void save_samples(const std::vector<AnnotatedSample>& samples, const std::string& dir,
                  const std::string& extra_manifest_json = "{}");
std::vector<AnnotatedSample> load_samples(const std::string& dir);

}  // namespace attnseg

#endif
