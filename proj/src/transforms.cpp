#include "lfc/transforms.hpp"

#include <algorithm>

#include "lfc/errors.hpp"

namespace lfc {

namespace {

Tensor4 flip_h(const Tensor4& x) {
    Tensor4 out(x.n, x.c, x.h, x.w);
    for (int s = 0; s < x.n; ++s) {
        for (int ci = 0; ci < x.c; ++ci) {
            const double* src = x.plane(s, ci);
            double* dst = out.plane(s, ci);
            for (int y = 0; y < x.h; ++y) {
                for (int ix = 0; ix < x.w; ++ix) {
                    dst[static_cast<std::size_t>(y) * x.w + ix] =
                        src[static_cast<std::size_t>(y) * x.w + (x.w - 1 - ix)];
                }
            }
        }
    }
    return out;
}

Tensor4 flip_v(const Tensor4& x) {
    Tensor4 out(x.n, x.c, x.h, x.w);
    for (int s = 0; s < x.n; ++s) {
        for (int ci = 0; ci < x.c; ++ci) {
            const double* src = x.plane(s, ci);
            double* dst = out.plane(s, ci);
            for (int y = 0; y < x.h; ++y) {
                std::copy(src + static_cast<std::size_t>(x.h - 1 - y) * x.w,
                          src + static_cast<std::size_t>(x.h - y) * x.w,
                          dst + static_cast<std::size_t>(y) * x.w);
            }
        }
    }
    return out;
}

void check_crop(const TransformOp& op, int h, int w) {
    if (op.crop_h < 1 || op.crop_w < 1 || op.top < 0 || op.left < 0 ||
        op.top + op.crop_h > h || op.left + op.crop_w > w) {
        throw ConfigError("crop out of bounds: top=" + std::to_string(op.top) +
                          " left=" + std::to_string(op.left) + " size=" +
                          std::to_string(op.crop_h) + "x" + std::to_string(op.crop_w) +
                          " image=" + std::to_string(h) + "x" + std::to_string(w));
    }
}

}  // namespace

std::string TransformOp::describe() const {
    switch (kind) {
        case TransformKind::identity: return "identity";
        case TransformKind::hflip: return "hflip";
        case TransformKind::vflip: return "vflip";
        case TransformKind::crop:
            return "crop(top=" + std::to_string(top) + ",left=" + std::to_string(left) + "," +
                   std::to_string(crop_h) + "x" + std::to_string(crop_w) + ")";
    }
    return "?";
}

TransformOp sample_transform(Rng& rng, int h, int w, int multiple) {
    if (multiple < 1 || h < multiple || w < multiple) {
        throw ConfigError("sample_transform: image smaller than the divisibility multiple");
    }
    TransformOp op;
    switch (rng.index(3)) {
        case 0: op.kind = TransformKind::hflip; return op;
        case 1: op.kind = TransformKind::vflip; return op;
        default: break;
    }
    op.kind = TransformKind::crop;
    op.crop_h = std::max((3 * h / 4) / multiple * multiple, multiple);
    op.crop_w = std::max((3 * w / 4) / multiple * multiple, multiple);
    op.top = rng.range_int(0, h - op.crop_h);
    op.left = rng.range_int(0, w - op.crop_w);
    return op;
}

Tensor4 apply_transform(const TransformOp& op, const Tensor4& x) {
    switch (op.kind) {
        case TransformKind::identity: return x;
        case TransformKind::hflip: return flip_h(x);
        case TransformKind::vflip: return flip_v(x);
        case TransformKind::crop: break;
    }
    check_crop(op, x.h, x.w);
    Tensor4 out(x.n, x.c, op.crop_h, op.crop_w);
    for (int s = 0; s < x.n; ++s) {
        for (int ci = 0; ci < x.c; ++ci) {
            const double* src = x.plane(s, ci);
            double* dst = out.plane(s, ci);
            for (int y = 0; y < op.crop_h; ++y) {
                const double* row = src + static_cast<std::size_t>(op.top + y) * x.w + op.left;
                std::copy(row, row + op.crop_w, dst + static_cast<std::size_t>(y) * op.crop_w);
            }
        }
    }
    return out;
}

std::pair<Tensor4, Tensor4> invert_transform(const TransformOp& op, const Tensor4& y, int full_h,
                                             int full_w) {
    Tensor4 mask(y.n, 1, full_h, full_w, 1.0);
    switch (op.kind) {
        case TransformKind::identity: return {y, mask};
        case TransformKind::hflip: return {flip_h(y), mask};
        case TransformKind::vflip: return {flip_v(y), mask};
        case TransformKind::crop: break;
    }
    check_crop(op, full_h, full_w);
    if (y.h != op.crop_h || y.w != op.crop_w) {
        throw ConfigError("invert_transform: payload " + y.shape_str() +
                          " does not match crop window");
    }
    Tensor4 out(y.n, y.c, full_h, full_w, 0.0);
    mask.fill(0.0);
    for (int s = 0; s < y.n; ++s) {
        for (int ci = 0; ci < y.c; ++ci) {
            const double* src = y.plane(s, ci);
            double* dst = out.plane(s, ci);
            for (int yy = 0; yy < op.crop_h; ++yy) {
                std::copy(src + static_cast<std::size_t>(yy) * op.crop_w,
                          src + static_cast<std::size_t>(yy + 1) * op.crop_w,
                          dst + static_cast<std::size_t>(op.top + yy) * full_w + op.left);
            }
        }
        double* mp = mask.plane(s, 0);
        for (int yy = 0; yy < op.crop_h; ++yy) {
            double* row = mp + static_cast<std::size_t>(op.top + yy) * full_w + op.left;
            std::fill(row, row + op.crop_w, 1.0);
        }
    }
    return {out, mask};
}

}  // namespace lfc
