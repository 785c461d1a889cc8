#include "lfc/curriculum.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "lfc/errors.hpp"
#include "lfc/graph.hpp"
#include "lfc/textio.hpp"

namespace lfc {

double alpha_schedule(int epoch, int r_max) {
    if (epoch < 0 || r_max < 1) {
        throw ConfigError("alpha_schedule: need epoch >= 0 and r_max >= 1");
    }
    const double x = static_cast<double>(epoch) / static_cast<double>(r_max);
    return 1.0 - 1.0 / (1.0 + std::exp(-x));
}

double ScheduleState::alpha() const { return alpha_schedule(epoch, r_max); }

double kl_divergence(const Tensor4& p_source, const Tensor4& p_target) {
    require_same_shape(p_source, p_target, "kl_divergence");
    const std::size_t plane = static_cast<std::size_t>(p_source.h) * p_source.w;
    const std::int64_t pixels = static_cast<std::int64_t>(p_source.n) * p_source.h * p_source.w;
    if (pixels == 0) throw DegenerateInputError("kl_divergence: empty probability map");

    for (const Tensor4* t : {&p_source, &p_target}) {
        for (int s = 0; s < t->n; ++s) {
            for (std::size_t i = 0; i < plane; ++i) {
                double sum = 0.0;
                for (int ci = 0; ci < t->c; ++ci) sum += t->plane(s, ci)[i];
                if (std::abs(sum - 1.0) > 1e-6) {
                    throw ValidationError("kl_divergence: channel sum off by more than 1e-6");
                }
            }
        }
    }

    double acc = 0.0;
    for (int s = 0; s < p_source.n; ++s) {
        for (int ci = 0; ci < p_source.c; ++ci) {
            const double* ps = p_source.plane(s, ci);
            const double* pt = p_target.plane(s, ci);
            for (std::size_t i = 0; i < plane; ++i) {
                const double p = ps[i];
                if (p <= 0.0) continue;
                acc += p * std::log(std::max(p, kLogEps) / std::max(pt[i], kLogEps));
            }
        }
    }
    return std::max(acc / static_cast<double>(pixels), 0.0);
}

std::vector<double> batch_weights(const std::vector<double>& difficulties, double alpha,
                                  double delta) {
    if (difficulties.empty()) {
        throw DegenerateInputError("batch_weights: empty batch");
    }
    const double B = static_cast<double>(difficulties.size());
    double sum = 0.0;
    for (double d : difficulties) {
        if (!std::isfinite(d)) throw ValidationError("batch_weights: non-finite difficulty");
        sum += d;
    }
    std::vector<double> weights(difficulties.size());
    for (std::size_t i = 0; i < difficulties.size(); ++i) {
        const double ratio = sum < 1e-12 ? 1.0 / B : difficulties[i] / sum;
        weights[i] = alpha * (delta - ratio) + (1.0 - alpha);
    }
    return weights;
}

std::vector<RankedSample> rank_dataset(ModelBranch& source, ModelBranch& target,
                                       const std::vector<Tensor4>& images,
                                       const std::vector<int>& sample_ids,
                                       const std::vector<Tensor4>* source_probs) {
    if (images.empty()) throw DegenerateInputError("rank_dataset: empty dataset");
    if (images.size() != sample_ids.size()) {
        throw ConfigError("rank_dataset: ids/images size mismatch");
    }
    if (source_probs && source_probs->size() != images.size()) {
        throw ConfigError("rank_dataset: precomputed source probs size mismatch");
    }
    std::vector<RankedSample> out(images.size());
    for (std::size_t i = 0; i < images.size(); ++i) {
        Tensor4 p_s;
        if (source_probs) {
            p_s = (*source_probs)[i];
        } else {
            p_s = softmax_channels(constant(forward(source, images[i], BnMode::eval)))->value;
        }
        const Tensor4 p_t =
            softmax_channels(constant(forward(target, images[i], BnMode::eval)))->value;
        out[i] = {sample_ids[i], kl_divergence(p_s, p_t)};
    }
    std::sort(out.begin(), out.end(), [](const RankedSample& a, const RankedSample& b) {
        if (a.difficulty != b.difficulty) return a.difficulty < b.difficulty;
        return a.sample_id < b.sample_id;
    });
    return out;
}

void write_ranking_csv(const std::vector<RankedSample>& ranking,
                       const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw IoError("write_ranking_csv: cannot open '" + path.string() + "'");
    out << "sample_id,difficulty\n";
    for (const RankedSample& r : ranking) {
        out << r.sample_id << "," << fmt_double(r.difficulty) << "\n";
    }
}

}  // namespace lfc
