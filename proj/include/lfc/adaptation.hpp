#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "lfc/curriculum.hpp"
#include "lfc/segnet.hpp"
#include "lfc/tensor.hpp"
#include "lfc/transforms.hpp"

namespace lfc {

// Source-to-target adaptation: frozen source branch, trainable target branch
// initialized by AdaBN, and an EMA momentum branch providing augmentation-
// consistent pseudo labels. The loss blends fixed source pseudo labels with
// momentum pseudo labels under the curriculum weights.

// f^m <- tau * f^m + (1 - tau) * f^t for every parameter and BN statistic.
void ema_update(ModelBranch& momentum, ModelBranch& target, double tau);

// Hard one-hot argmax of softmax(f^s(x)); ties go to the lowest class index.
Tensor4 pseudo_label_source(ModelBranch& f_s, const Tensor4& x);

// y_psd = softmax(invert(T, f^m(apply(T, x)))) plus the validity mask of the
// inversion. No gradients flow into f^m.
std::pair<Tensor4, Tensor4> pseudo_label_momentum(ModelBranch& f_m, const Tensor4& x,
                                                  const TransformOp& op);

// One-hot over channel dim from a (n,1,h,w) class-index map.
Tensor4 one_hot(const Tensor4& labels, int num_classes);
Tensor4 argmax_one_hot(const Tensor4& probs);

// mean_b omega_b * (alpha * l_fix_b + (1 - alpha) * l_sl_b)
double combine_losses(const std::vector<double>& l_fix, const std::vector<double>& l_sl,
                      const std::vector<double>& omega, double alpha);

struct LossBreakdown {
    double alpha = 0.0;
    std::vector<double> omega;
    std::vector<double> l_fix;  // per sample
    std::vector<double> l_sl;   // per sample; zeros when the branch is disabled
    double l_fix_mean = 0.0;
    double l_sl_mean = 0.0;
    double l_total = 0.0;
};

enum class AblationMode { full, no_easy2hard, no_src2tgt };

AblationMode ablation_from_string(const std::string& s);
const char* ablation_name(AblationMode m);

struct AdaptConfig {
    std::uint64_t seed = 1;
    int epochs = 10;
    int batch_size = 2;
    double lr = 0.001;
    double tau = 0.99;
    int r_max = 5;
    double delta = 1.5;
    AblationMode ablation = AblationMode::full;
    std::filesystem::path out_dir;  // empty: no log files written
};

struct EpochLogRow {
    int epoch = 0;
    double alpha = 0.0;
    double mean_omega = 0.0;
    double l_fix = 0.0;
    double l_sl = 0.0;
    double l_total = 0.0;
    double dice_val = -1.0;  // -1 when no evaluation hook was supplied
};

// Periodic evaluation callback (returns e.g. a validation Dice).
using EvalHook = std::function<double(ModelBranch&)>;

struct AdaptResult {
    ModelBranch target;
    std::optional<ModelBranch> momentum;
    std::vector<EpochLogRow> epoch_log;
    std::vector<LossBreakdown> batch_log;
    std::int64_t ema_updates = 0;
    std::uint64_t y_src_hash_begin = 0;
    std::uint64_t y_src_hash_end = 0;
};

// Full pipeline: AdaBN init, momentum clone, cached source pseudo labels, then
// per epoch: alpha schedule, easy-first batch order, per-batch difficulties and
// weights, per-sample transforms and momentum pseudo labels, combined loss,
// backward, Adam on the target branch only, EMA update per step. Aborts with a
// state dump if the loss turns non-finite.
AdaptResult adapt(ModelBranch& f_s, const std::vector<Tensor4>& target_images,
                  const std::vector<int>& sample_ids, const AdaptConfig& cfg,
                  const EvalHook& eval_hook = {});

// adapt() with the given ablation mode forced.
AdaptResult ablate(AblationMode mode, ModelBranch& f_s, const std::vector<Tensor4>& target_images,
                   const std::vector<int>& sample_ids, AdaptConfig cfg,
                   const EvalHook& eval_hook = {});

void write_epoch_log_csv(const std::vector<EpochLogRow>& rows,
                         const std::filesystem::path& path);

// Supervised cross-entropy training used to produce the source model.
struct SourceTrainConfig {
    std::uint64_t seed = 1;
    int epochs = 10;
    int batch_size = 2;
    double lr = 0.001;
};

struct SourceTrainResult {
    ModelBranch model;
    std::vector<EpochLogRow> epoch_log;  // alpha/omega columns unused (zero)
};

SourceTrainResult train_source(const SegNetConfig& arch, const std::vector<Tensor4>& images,
                               const std::vector<Tensor4>& label_maps,
                               const SourceTrainConfig& cfg, const EvalHook& eval_hook = {});

std::uint64_t hash_tensors(const std::vector<Tensor4>& tensors);

}  // namespace lfc
