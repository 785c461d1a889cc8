#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "lfc/segnet.hpp"
#include "lfc/tensor.hpp"

namespace lfc {

// Class-index map for evaluation.
struct SegMask {
    int h = 0, w = 0;
    std::vector<std::uint8_t> v;

    SegMask() = default;
    SegMask(int h_, int w_, std::uint8_t fill = 0)
        : h(h_), w(w_), v(static_cast<std::size_t>(h_) * w_, fill) {}

    std::uint8_t& at(int y, int x) { return v[static_cast<std::size_t>(y) * w + x]; }
    std::uint8_t at(int y, int x) const { return v[static_cast<std::size_t>(y) * w + x]; }
    bool same_shape(const SegMask& o) const { return h == o.h && w == o.w; }
};

// 2|P∩G| / (|P|+|G|) over the binary masks of class cls; 1.0 when both empty.
double dice(const SegMask& pred, const SegMask& gt, int cls);

// Average symmetric surface distance over boundary pixel sets with Euclidean
// distances. Boundary: class pixel with at least one non-class 4-neighbor, the
// image border counting as non-class. Empty boundary on either side makes the
// value undefined (nullopt) and the sample is excluded from aggregates.
std::optional<double> asd(const SegMask& pred, const SegMask& gt, int cls);

std::vector<std::pair<int, int>> boundary_pixels(const SegMask& m, int cls);

struct ClassStats {
    int cls = 0;
    double dice_mean = 0.0, dice_std = 0.0;
    int dice_n = 0;
    double asd_mean = 0.0, asd_std = 0.0;
    int asd_n = 0;
    int asd_excluded = 0;
};

struct MetricReport {
    std::vector<ClassStats> classes;

    // Rows: class,metric,mean,std,n,excluded
    std::string to_csv() const;
    // "83.18±6.46"-style lines for the console (Dice in percent).
    std::string pretty() const;
};

// Per-class mean and population standard deviation across samples.
MetricReport report(const std::vector<std::pair<SegMask, SegMask>>& pred_gt_pairs,
                    const std::vector<int>& class_ids);

// Argmax prediction for a single (1,c,h,w) image.
SegMask predict_mask(ModelBranch& branch, const Tensor4& image);

// Converts one sample of a (n,1,h,w) class map.
SegMask mask_from_class_map(const Tensor4& labels, int sample);

// Mean Dice over the given classes and samples (evaluation summary value).
double mean_dice(const std::vector<std::pair<SegMask, SegMask>>& pred_gt_pairs,
                 const std::vector<int>& class_ids);

}  // namespace lfc
