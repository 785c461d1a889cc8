#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "lfc/segnet.hpp"
#include "lfc/tensor.hpp"

namespace lfc {

// Easy-to-hard curriculum: per-sample difficulty as the pixel-averaged KL
// divergence between source and target predictions, the epoch-driven focus
// weight alpha, and the in-batch sample re-weighting derived from both.

struct ScheduleState {
    int epoch = 0;  // 0-based
    int r_max = 5;
    double delta = 1.5;

    double alpha() const;
};

// alpha = 1 - sigmoid(epoch / r_max); 0.5 at epoch 0, strictly decreasing.
double alpha_schedule(int epoch, int r_max);

// Mean over pixels of the channel-summed KL(p_source || p_target). Inputs are
// per-pixel probability maps of identical shape; channel sums must be 1 within
// 1e-6. Probabilities are clamped at 1e-8 inside the logarithm.
double kl_divergence(const Tensor4& p_source, const Tensor4& p_target);

// omega_b = alpha * (delta - d_b / sum(d)) + (1 - alpha). A vanishing sum of
// difficulties falls back to uniform ratios 1/B. Weights act as constants in
// the loss; no gradient flows through them.
std::vector<double> batch_weights(const std::vector<double>& difficulties, double alpha,
                                  double delta);

struct RankedSample {
    int sample_id = 0;
    double difficulty = 0.0;
};

// Scores every sample with kl_divergence over softmaxed eval-mode forwards of
// the two branches and returns them ascending by difficulty (ties by id).
// Precomputed source probability maps may be supplied to skip the f^s passes.
std::vector<RankedSample> rank_dataset(ModelBranch& source, ModelBranch& target,
                                       const std::vector<Tensor4>& images,
                                       const std::vector<int>& sample_ids,
                                       const std::vector<Tensor4>* source_probs = nullptr);

// CSV export: header `sample_id,difficulty`, one row per sample in rank order.
void write_ranking_csv(const std::vector<RankedSample>& ranking,
                       const std::filesystem::path& path);

}  // namespace lfc
