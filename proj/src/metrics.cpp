#include "lfc/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>

#include "lfc/errors.hpp"
#include "lfc/graph.hpp"
#include "lfc/textio.hpp"

namespace lfc {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

// One-dimensional squared distance transform (lower envelope of parabolas).
void dt_1d(const std::vector<double>& f, std::vector<double>& out, int n) {
    std::vector<int> v(static_cast<std::size_t>(n));
    std::vector<double> z(static_cast<std::size_t>(n) + 1);
    int k = 0;
    v[0] = 0;
    z[0] = -kInf;
    z[1] = kInf;
    for (int q = 1; q < n; ++q) {
        if (f[static_cast<std::size_t>(q)] == kInf) continue;
        if (f[static_cast<std::size_t>(v[static_cast<std::size_t>(k)])] == kInf) {
            v[static_cast<std::size_t>(k)] = q;
            continue;
        }
        double s;
        while (true) {
            const int p = v[static_cast<std::size_t>(k)];
            s = ((f[static_cast<std::size_t>(q)] + q * q) -
                 (f[static_cast<std::size_t>(p)] + p * p)) /
                (2.0 * q - 2.0 * p);
            if (s <= z[static_cast<std::size_t>(k)] && k > 0) {
                --k;
            } else {
                break;
            }
        }
        ++k;
        v[static_cast<std::size_t>(k)] = q;
        z[static_cast<std::size_t>(k)] = s;
        z[static_cast<std::size_t>(k) + 1] = kInf;
    }
    k = 0;
    for (int q = 0; q < n; ++q) {
        while (z[static_cast<std::size_t>(k) + 1] < q) ++k;
        const int p = v[static_cast<std::size_t>(k)];
        out[static_cast<std::size_t>(q)] =
            f[static_cast<std::size_t>(p)] == kInf
                ? kInf
                : (q - p) * static_cast<double>(q - p) + f[static_cast<std::size_t>(p)];
    }
}

// Exact squared Euclidean distance to the nearest seed pixel.
std::vector<double> edt_squared(const std::vector<std::uint8_t>& seeds, int h, int w) {
    std::vector<double> dist(static_cast<std::size_t>(h) * w, kInf);
    for (std::size_t i = 0; i < dist.size(); ++i) {
        if (seeds[i]) dist[i] = 0.0;
    }
    std::vector<double> col(static_cast<std::size_t>(h)), col_out(static_cast<std::size_t>(h));
    for (int x = 0; x < w; ++x) {
        for (int y = 0; y < h; ++y) col[static_cast<std::size_t>(y)] = dist[static_cast<std::size_t>(y) * w + x];
        dt_1d(col, col_out, h);
        for (int y = 0; y < h; ++y) dist[static_cast<std::size_t>(y) * w + x] = col_out[static_cast<std::size_t>(y)];
    }
    std::vector<double> row(static_cast<std::size_t>(w)), row_out(static_cast<std::size_t>(w));
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) row[static_cast<std::size_t>(x)] = dist[static_cast<std::size_t>(y) * w + x];
        dt_1d(row, row_out, w);
        for (int x = 0; x < w; ++x) dist[static_cast<std::size_t>(y) * w + x] = row_out[static_cast<std::size_t>(x)];
    }
    return dist;
}

double population_std(const std::vector<double>& xs, double mean) {
    if (xs.empty()) return 0.0;
    double acc = 0.0;
    for (double x : xs) acc += (x - mean) * (x - mean);
    return std::sqrt(acc / static_cast<double>(xs.size()));
}

}  // namespace

double dice(const SegMask& pred, const SegMask& gt, int cls) {
    if (!pred.same_shape(gt)) {
        throw ConfigError("dice: mask shapes differ");
    }
    std::int64_t p = 0, g = 0, both = 0;
    for (std::size_t i = 0; i < pred.v.size(); ++i) {
        const bool in_p = pred.v[i] == cls;
        const bool in_g = gt.v[i] == cls;
        p += in_p;
        g += in_g;
        both += in_p && in_g;
    }
    if (p + g == 0) return 1.0;  // both empty: perfect agreement
    return 2.0 * static_cast<double>(both) / static_cast<double>(p + g);
}

std::vector<std::pair<int, int>> boundary_pixels(const SegMask& m, int cls) {
    std::vector<std::pair<int, int>> out;
    for (int y = 0; y < m.h; ++y) {
        for (int x = 0; x < m.w; ++x) {
            if (m.at(y, x) != cls) continue;
            const bool edge = y == 0 || y == m.h - 1 || x == 0 || x == m.w - 1 ||
                              m.at(y - 1, x) != cls || m.at(y + 1, x) != cls ||
                              m.at(y, x - 1) != cls || m.at(y, x + 1) != cls;
            if (edge) out.emplace_back(y, x);
        }
    }
    return out;
}

std::optional<double> asd(const SegMask& pred, const SegMask& gt, int cls) {
    if (!pred.same_shape(gt)) {
        throw ConfigError("asd: mask shapes differ");
    }
    const auto bp = boundary_pixels(pred, cls);
    const auto bg = boundary_pixels(gt, cls);
    if (bp.empty() || bg.empty()) return std::nullopt;

    std::vector<std::uint8_t> seed_p(pred.v.size(), 0), seed_g(pred.v.size(), 0);
    for (auto [y, x] : bp) seed_p[static_cast<std::size_t>(y) * pred.w + x] = 1;
    for (auto [y, x] : bg) seed_g[static_cast<std::size_t>(y) * pred.w + x] = 1;
    const auto dist_to_g = edt_squared(seed_g, pred.h, pred.w);
    const auto dist_to_p = edt_squared(seed_p, pred.h, pred.w);

    double acc = 0.0;
    for (auto [y, x] : bp) acc += std::sqrt(dist_to_g[static_cast<std::size_t>(y) * pred.w + x]);
    for (auto [y, x] : bg) acc += std::sqrt(dist_to_p[static_cast<std::size_t>(y) * pred.w + x]);
    return acc / static_cast<double>(bp.size() + bg.size());
}

MetricReport report(const std::vector<std::pair<SegMask, SegMask>>& pred_gt_pairs,
                    const std::vector<int>& class_ids) {
    if (pred_gt_pairs.empty()) {
        throw DegenerateInputError("report: no samples");
    }
    MetricReport rep;
    for (int cls : class_ids) {
        ClassStats st;
        st.cls = cls;
        std::vector<double> dices, asds;
        for (const auto& [pred, gt] : pred_gt_pairs) {
            dices.push_back(dice(pred, gt, cls));
            if (auto d = asd(pred, gt, cls)) {
                asds.push_back(*d);
            } else {
                ++st.asd_excluded;
            }
        }
        st.dice_n = static_cast<int>(dices.size());
        st.dice_mean = std::accumulate(dices.begin(), dices.end(), 0.0) / st.dice_n;
        st.dice_std = population_std(dices, st.dice_mean);
        st.asd_n = static_cast<int>(asds.size());
        if (st.asd_n > 0) {
            st.asd_mean = std::accumulate(asds.begin(), asds.end(), 0.0) / st.asd_n;
            st.asd_std = population_std(asds, st.asd_mean);
        }
        rep.classes.push_back(st);
    }
    return rep;
}

std::string MetricReport::to_csv() const {
    std::ostringstream os;
    os << "class,metric,mean,std,n,excluded\n";
    for (const ClassStats& st : classes) {
        os << st.cls << ",dice," << fmt_double(st.dice_mean) << "," << fmt_double(st.dice_std)
           << "," << st.dice_n << ",0\n";
        os << st.cls << ",asd," << fmt_double(st.asd_mean) << "," << fmt_double(st.asd_std) << ","
           << st.asd_n << "," << st.asd_excluded << "\n";
    }
    return os.str();
}

std::string MetricReport::pretty() const {
    std::ostringstream os;
    for (const ClassStats& st : classes) {
        os << "class " << st.cls << ": Dice(%) " << fmt_mean_std(st.dice_mean, st.dice_std, 100.0)
           << "  ASD(px) " << fmt_mean_std(st.asd_mean, st.asd_std);
        if (st.asd_excluded > 0) os << "  (asd excluded: " << st.asd_excluded << ")";
        os << "\n";
    }
    return os.str();
}

SegMask predict_mask(ModelBranch& branch, const Tensor4& image) {
    const Tensor4 logits = forward(branch, image, BnMode::eval);
    SegMask m(logits.h, logits.w);
    const std::size_t plane = static_cast<std::size_t>(logits.h) * logits.w;
    for (std::size_t i = 0; i < plane; ++i) {
        int best = 0;
        double bv = logits.plane(0, 0)[i];
        for (int ci = 1; ci < logits.c; ++ci) {
            if (logits.plane(0, ci)[i] > bv) {
                bv = logits.plane(0, ci)[i];
                best = ci;
            }
        }
        m.v[i] = static_cast<std::uint8_t>(best);
    }
    return m;
}

SegMask mask_from_class_map(const Tensor4& labels, int sample) {
    SegMask m(labels.h, labels.w);
    const double* src = labels.plane(sample, 0);
    for (std::size_t i = 0; i < m.v.size(); ++i) m.v[i] = static_cast<std::uint8_t>(src[i]);
    return m;
}

double mean_dice(const std::vector<std::pair<SegMask, SegMask>>& pred_gt_pairs,
                 const std::vector<int>& class_ids) {
    const MetricReport rep = report(pred_gt_pairs, class_ids);
    double acc = 0.0;
    for (const ClassStats& st : rep.classes) acc += st.dice_mean;
    return acc / static_cast<double>(rep.classes.size());
}

}  // namespace lfc
