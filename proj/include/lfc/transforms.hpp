#pragma once

#include <string>
#include <utility>

#include "lfc/rng.hpp"
#include "lfc/tensor.hpp"

namespace lfc {

// Invertible spatial augmentations. apply() transforms an image, invert()
// restores the original frame exactly on the returned validity mask. Flips
// cover the full frame; a crop extracts a subwindow (no resize) and its
// inverse pastes it back, marking only the pasted region valid.

enum class TransformKind : int { identity = 0, hflip = 1, vflip = 2, crop = 3 };

struct TransformOp {
    TransformKind kind = TransformKind::identity;
    int top = 0, left = 0, crop_h = 0, crop_w = 0;  // crop only

    std::string describe() const;
};

// Uniform draw over {hflip, vflip, crop}. Crop size is 75% of each dimension
// rounded down to a multiple of `multiple`; top/left drawn uniformly.
TransformOp sample_transform(Rng& rng, int h, int w, int multiple);

Tensor4 apply_transform(const TransformOp& op, const Tensor4& x);

// Returns the back-transformed tensor and its validity mask (n=1 channel).
std::pair<Tensor4, Tensor4> invert_transform(const TransformOp& op, const Tensor4& y, int full_h,
                                             int full_w);

}  // namespace lfc
