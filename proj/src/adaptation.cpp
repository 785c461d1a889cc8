#include "lfc/adaptation.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>
#include <numeric>
#include <sstream>

#include "lfc/adam.hpp"
#include "lfc/checkpoint.hpp"
#include "lfc/errors.hpp"
#include "lfc/graph.hpp"
#include "lfc/textio.hpp"

namespace lfc {

namespace {

// Per-sample cross entropy of a (1,C,h,w) prediction slice.
Value sample_ce(const Value& p_batch, int sample, const Tensor4& target, const Tensor4& mask) {
    return cross_entropy_soft(slice_sample(p_batch, sample), target, mask);
}

void dump_divergence(const std::filesystem::path& out_dir, int epoch, int batch_index,
                     const std::vector<int>& ids, const std::vector<double>& difficulties,
                     const LossBreakdown& bd) {
    if (out_dir.empty()) return;
    std::ostringstream os;
    os << "non-finite total loss\n";
    os << "epoch=" << epoch << "\n";
    os << "batch_index=" << batch_index << "\n";
    os << "alpha=" << fmt_double(bd.alpha) << "\n";
    os << "l_total=" << fmt_double(bd.l_total) << "\n";
    for (std::size_t b = 0; b < bd.omega.size(); ++b) {
        os << "sample id=" << ids[b];
        if (b < difficulties.size()) os << " d=" << fmt_double(difficulties[b]);
        os << " omega=" << fmt_double(bd.omega[b]) << " l_fix=" << fmt_double(bd.l_fix[b])
           << " l_sl=" << fmt_double(bd.l_sl[b]) << "\n";
    }
    write_text_file(out_dir / "divergence_dump.txt", os.str());
}

}  // namespace

void ema_update(ModelBranch& momentum, ModelBranch& target, double tau) {
    if (momentum.config != target.config) {
        throw ConfigError("ema_update: branch architectures differ");
    }
    auto mp = momentum.named_parameters();
    auto tp = target.named_parameters();
    for (std::size_t i = 0; i < mp.size(); ++i) {
        if (mp[i].first != tp[i].first ||
            !mp[i].second->value.same_shape(tp[i].second->value)) {
            throw ConfigError("ema_update: parameter mismatch at '" + mp[i].first + "'");
        }
        Tensor4& m = mp[i].second->value;
        const Tensor4& t = tp[i].second->value;
        for (std::size_t k = 0; k < m.data.size(); ++k) {
            m.data[k] = tau * m.data[k] + (1.0 - tau) * t.data[k];
        }
    }
    auto mb = momentum.named_bn_states();
    auto tb = target.named_bn_states();
    for (std::size_t i = 0; i < mb.size(); ++i) {
        BatchNormState& m = *mb[i].second;
        const BatchNormState& t = *tb[i].second;
        for (std::size_t k = 0; k < m.running_mean.data.size(); ++k) {
            m.running_mean.data[k] =
                tau * m.running_mean.data[k] + (1.0 - tau) * t.running_mean.data[k];
            m.running_var.data[k] =
                tau * m.running_var.data[k] + (1.0 - tau) * t.running_var.data[k];
        }
    }
}

Tensor4 argmax_one_hot(const Tensor4& probs) {
    Tensor4 out(probs.n, probs.c, probs.h, probs.w, 0.0);
    const std::size_t plane = static_cast<std::size_t>(probs.h) * probs.w;
    for (int s = 0; s < probs.n; ++s) {
        for (std::size_t i = 0; i < plane; ++i) {
            int best = 0;
            double bv = probs.plane(s, 0)[i];
            for (int ci = 1; ci < probs.c; ++ci) {
                const double v = probs.plane(s, ci)[i];
                if (v > bv) {  // ties keep the lowest class index
                    bv = v;
                    best = ci;
                }
            }
            out.plane(s, best)[i] = 1.0;
        }
    }
    return out;
}

Tensor4 one_hot(const Tensor4& labels, int num_classes) {
    if (labels.c != 1) {
        throw ConfigError("one_hot: expected (n,1,h,w) class map, got " + labels.shape_str());
    }
    Tensor4 out(labels.n, num_classes, labels.h, labels.w, 0.0);
    const std::size_t plane = static_cast<std::size_t>(labels.h) * labels.w;
    for (int s = 0; s < labels.n; ++s) {
        const double* src = labels.plane(s, 0);
        for (std::size_t i = 0; i < plane; ++i) {
            const int cls = static_cast<int>(src[i]);
            if (cls < 0 || cls >= num_classes || src[i] != static_cast<double>(cls)) {
                throw ValidationError("one_hot: label value out of range");
            }
            out.plane(s, cls)[i] = 1.0;
        }
    }
    return out;
}

Tensor4 pseudo_label_source(ModelBranch& f_s, const Tensor4& x) {
    const Tensor4 probs = softmax_channels(constant(forward(f_s, x, BnMode::eval)))->value;
    return argmax_one_hot(probs);
}

std::pair<Tensor4, Tensor4> pseudo_label_momentum(ModelBranch& f_m, const Tensor4& x,
                                                  const TransformOp& op) {
    const Tensor4 transformed = apply_transform(op, x);
    const Tensor4 logits = forward(f_m, transformed, BnMode::eval);
    auto [restored, mask] = invert_transform(op, logits, x.h, x.w);
    Tensor4 y_psd = softmax_channels(constant(std::move(restored)))->value;
    return {std::move(y_psd), std::move(mask)};
}

double combine_losses(const std::vector<double>& l_fix, const std::vector<double>& l_sl,
                      const std::vector<double>& omega, double alpha) {
    if (l_fix.size() != l_sl.size() || l_fix.size() != omega.size() || l_fix.empty()) {
        throw ConfigError("combine_losses: inconsistent batch arrays");
    }
    double acc = 0.0;
    for (std::size_t b = 0; b < l_fix.size(); ++b) {
        acc += omega[b] * (alpha * l_fix[b] + (1.0 - alpha) * l_sl[b]);
    }
    return acc / static_cast<double>(l_fix.size());
}

AblationMode ablation_from_string(const std::string& s) {
    if (s == "full") return AblationMode::full;
    if (s == "no_easy2hard") return AblationMode::no_easy2hard;
    if (s == "no_src2tgt") return AblationMode::no_src2tgt;
    throw ConfigError("unknown ablation mode '" + s + "'");
}

const char* ablation_name(AblationMode m) {
    switch (m) {
        case AblationMode::full: return "full";
        case AblationMode::no_easy2hard: return "no_easy2hard";
        case AblationMode::no_src2tgt: return "no_src2tgt";
    }
    return "?";
}

std::uint64_t hash_tensors(const std::vector<Tensor4>& tensors) {
    std::vector<std::uint8_t> bytes;
    for (const Tensor4& t : tensors) {
        const std::size_t off = bytes.size();
        bytes.resize(off + t.data.size() * sizeof(double));
        std::memcpy(bytes.data() + off, t.data.data(), t.data.size() * sizeof(double));
    }
    return hash_bytes(bytes);
}

void write_epoch_log_csv(const std::vector<EpochLogRow>& rows,
                         const std::filesystem::path& path) {
    std::ostringstream os;
    os << "epoch,alpha,mean_omega,l_fix,l_sl,l_total,dice_val\n";
    for (const EpochLogRow& r : rows) {
        os << r.epoch << "," << fmt_double(r.alpha) << "," << fmt_double(r.mean_omega) << ","
           << fmt_double(r.l_fix) << "," << fmt_double(r.l_sl) << "," << fmt_double(r.l_total)
           << "," << fmt_double(r.dice_val) << "\n";
    }
    write_text_file(path, os.str());
}

AdaptResult adapt(ModelBranch& f_s, const std::vector<Tensor4>& target_images,
                  const std::vector<int>& sample_ids, const AdaptConfig& cfg,
                  const EvalHook& eval_hook) {
    if (target_images.empty()) throw DegenerateInputError("adapt: empty target set");
    if (target_images.size() != sample_ids.size()) {
        throw ConfigError("adapt: ids/images size mismatch");
    }
    if (cfg.epochs < 0 || cfg.batch_size < 1) {
        throw ConfigError("adapt: need epochs >= 0 and batch_size >= 1");
    }
    if (f_s.role != Role::source) {
        throw ConfigError("adapt: first branch must have the source role");
    }
    const bool use_curriculum = cfg.ablation != AblationMode::no_easy2hard;
    const bool use_momentum = cfg.ablation != AblationMode::no_src2tgt;
    const std::size_t n = target_images.size();
    const int img_h = target_images[0].h;
    const int img_w = target_images[0].w;

    AdaptResult result;
    result.target = adabn_init(f_s, target_images, cfg.batch_size);
    if (use_momentum) result.momentum = clone_into_momentum(result.target);
    ModelBranch& f_t = result.target;

    // Source predictions are frozen; compute the probability maps and the hard
    // pseudo labels once, before the first epoch.
    std::vector<Tensor4> p_src(n), y_src(n);
    for (std::size_t i = 0; i < n; ++i) {
        p_src[i] = softmax_channels(constant(forward(f_s, target_images[i], BnMode::eval)))->value;
        y_src[i] = argmax_one_hot(p_src[i]);
    }
    result.y_src_hash_begin = hash_tensors(y_src);

    Rng transform_rng(mix_seed(cfg.seed, 0x7472616eULL));

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        const double alpha = alpha_schedule(epoch, cfg.r_max);
        std::vector<std::size_t> order(n);
        std::iota(order.begin(), order.end(), 0);
        if (use_curriculum) {
            // Easy-first ordering against the current target model.
            auto ranking = rank_dataset(f_s, f_t, target_images, sample_ids, &p_src);
            std::vector<std::size_t> by_id(
                static_cast<std::size_t>(
                    1 + *std::max_element(sample_ids.begin(), sample_ids.end())),
                0);
            for (std::size_t i = 0; i < n; ++i)
                by_id[static_cast<std::size_t>(sample_ids[i])] = i;
            for (std::size_t i = 0; i < n; ++i)
                order[i] = by_id[static_cast<std::size_t>(ranking[i].sample_id)];
            if (!cfg.out_dir.empty()) {
                write_ranking_csv(ranking, cfg.out_dir /
                                               ("ranking_epoch" + std::to_string(epoch) + ".csv"));
            }
        }

        double epoch_omega = 0.0, epoch_fix = 0.0, epoch_sl = 0.0, epoch_total = 0.0;
        std::size_t epoch_samples = 0, batches = 0;
        int batch_index = 0;

        for (std::size_t first = 0; first < n; first += cfg.batch_size, ++batch_index) {
            const std::size_t last = std::min(first + cfg.batch_size, n);
            const int B = static_cast<int>(last - first);
            std::vector<std::size_t> idx(order.begin() + static_cast<std::ptrdiff_t>(first),
                                         order.begin() + static_cast<std::ptrdiff_t>(last));
            std::vector<int> batch_ids(static_cast<std::size_t>(B));
            Tensor4 x_batch(B, target_images[0].c, img_h, img_w);
            for (int b = 0; b < B; ++b) {
                batch_ids[static_cast<std::size_t>(b)] = sample_ids[idx[static_cast<std::size_t>(b)]];
                const Tensor4& img = target_images[idx[static_cast<std::size_t>(b)]];
                std::copy(img.data.begin(), img.data.end(),
                          x_batch.data.begin() +
                              static_cast<std::ptrdiff_t>(static_cast<std::size_t>(b) *
                                                          img.data.size()));
            }

            // Difficulties against the live target model, eval mode.
            std::vector<double> difficulties;
            std::vector<double> omega(static_cast<std::size_t>(B), 1.0);
            if (use_curriculum) {
                const Value p_eval =
                    softmax_channels(constant(forward(f_t, x_batch, BnMode::eval)));
                difficulties.resize(static_cast<std::size_t>(B));
                for (int b = 0; b < B; ++b) {
                    const Tensor4 slice = slice_sample(p_eval, b)->value;
                    difficulties[static_cast<std::size_t>(b)] =
                        kl_divergence(p_src[idx[static_cast<std::size_t>(b)]], slice);
                }
                bool finite = true;
                for (double d : difficulties) finite = finite && std::isfinite(d);
                if (!finite) {
                    LossBreakdown bd;
                    bd.alpha = alpha;
                    dump_divergence(cfg.out_dir, epoch, batch_index, batch_ids, difficulties, bd);
                    throw NumericError("adapt: non-finite difficulty at epoch " +
                                       std::to_string(epoch) + ", batch " +
                                       std::to_string(batch_index) +
                                       "; predictions have diverged");
                }
                omega = batch_weights(difficulties, alpha, cfg.delta);
            }

            // Momentum pseudo labels under per-sample transforms.
            std::vector<Tensor4> y_psd(static_cast<std::size_t>(B));
            std::vector<Tensor4> psd_mask(static_cast<std::size_t>(B));
            if (use_momentum) {
                for (int b = 0; b < B; ++b) {
                    const TransformOp op = sample_transform(
                        transform_rng, img_h, img_w, f_t.config.spatial_multiple());
                    auto [label, mask] = pseudo_label_momentum(
                        *result.momentum, target_images[idx[static_cast<std::size_t>(b)]], op);
                    y_psd[static_cast<std::size_t>(b)] = std::move(label);
                    psd_mask[static_cast<std::size_t>(b)] = std::move(mask);
                }
            }

            const Value logits = forward_traced(f_t, x_batch, BnMode::train);
            const Value p_t = softmax_channels(logits);

            LossBreakdown bd;
            bd.alpha = alpha;
            bd.omega = omega;
            bd.l_fix.resize(static_cast<std::size_t>(B));
            bd.l_sl.assign(static_cast<std::size_t>(B), 0.0);
            const Tensor4 full_mask(1, 1, img_h, img_w, 1.0);
            Value loss;
            for (int b = 0; b < B; ++b) {
                const std::size_t bi = static_cast<std::size_t>(b);
                const Value l_fix =
                    sample_ce(p_t, b, y_src[idx[bi]], full_mask);
                bd.l_fix[bi] = l_fix->value.item();
                Value term;
                if (use_momentum) {
                    const Value l_sl = sample_ce(p_t, b, y_psd[bi], psd_mask[bi]);
                    bd.l_sl[bi] = l_sl->value.item();
                    term = add(scale(l_fix, omega[bi] * alpha / B),
                               scale(l_sl, omega[bi] * (1.0 - alpha) / B));
                } else {
                    term = scale(l_fix, omega[bi] / B);
                }
                loss = loss ? add(loss, term) : term;
            }
            bd.l_total = loss->value.item();
            bd.l_fix_mean =
                std::accumulate(bd.l_fix.begin(), bd.l_fix.end(), 0.0) / B;
            bd.l_sl_mean = std::accumulate(bd.l_sl.begin(), bd.l_sl.end(), 0.0) / B;

            if (!std::isfinite(bd.l_total)) {
                dump_divergence(cfg.out_dir, epoch, batch_index, batch_ids, difficulties, bd);
                throw NumericError("adapt: non-finite total loss at epoch " +
                                   std::to_string(epoch) + ", batch " +
                                   std::to_string(batch_index));
            }

            backward(loss);
            adam_step(f_t.parameters(), AdamConfig{cfg.lr, 0.9, 0.999, 1e-8});
            if (use_momentum) {
                ema_update(*result.momentum, f_t, cfg.tau);
                ++result.ema_updates;
            }

            for (double w : omega) epoch_omega += w;
            for (double v : bd.l_fix) epoch_fix += v;
            for (double v : bd.l_sl) epoch_sl += v;
            epoch_total += bd.l_total;
            epoch_samples += static_cast<std::size_t>(B);
            ++batches;
            result.batch_log.push_back(std::move(bd));
        }

        EpochLogRow row;
        row.epoch = epoch;
        row.alpha = alpha;
        row.mean_omega = epoch_omega / static_cast<double>(epoch_samples);
        row.l_fix = epoch_fix / static_cast<double>(epoch_samples);
        row.l_sl = epoch_sl / static_cast<double>(epoch_samples);
        row.l_total = epoch_total / static_cast<double>(batches);
        row.dice_val = eval_hook ? eval_hook(f_t) : -1.0;
        result.epoch_log.push_back(row);
    }

    result.y_src_hash_end = hash_tensors(y_src);
    if (!cfg.out_dir.empty()) {
        write_epoch_log_csv(result.epoch_log, cfg.out_dir / "train_log.csv");
    }
    return result;
}

AdaptResult ablate(AblationMode mode, ModelBranch& f_s, const std::vector<Tensor4>& target_images,
                   const std::vector<int>& sample_ids, AdaptConfig cfg,
                   const EvalHook& eval_hook) {
    cfg.ablation = mode;
    return adapt(f_s, target_images, sample_ids, cfg, eval_hook);
}

SourceTrainResult train_source(const SegNetConfig& arch, const std::vector<Tensor4>& images,
                               const std::vector<Tensor4>& label_maps,
                               const SourceTrainConfig& cfg, const EvalHook& eval_hook) {
    if (images.empty()) throw DegenerateInputError("train_source: empty training set");
    if (images.size() != label_maps.size()) {
        throw ConfigError("train_source: images/labels size mismatch");
    }
    SourceTrainResult result;
    result.model = build(arch, mix_seed(cfg.seed, 0x696e6974ULL));

    std::vector<Tensor4> targets(images.size());
    for (std::size_t i = 0; i < images.size(); ++i) {
        targets[i] = one_hot(label_maps[i], arch.num_classes);
    }

    Rng shuffle_rng(mix_seed(cfg.seed, 0x73687566ULL));
    const int img_h = images[0].h, img_w = images[0].w;

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        std::vector<std::size_t> order(images.size());
        std::iota(order.begin(), order.end(), 0);
        for (std::size_t i = order.size(); i > 1; --i) {
            std::swap(order[i - 1], order[shuffle_rng.index(i)]);
        }
        double epoch_loss = 0.0;
        std::size_t batches = 0;
        for (std::size_t first = 0; first < order.size(); first += cfg.batch_size) {
            const std::size_t last = std::min(first + cfg.batch_size, order.size());
            const int B = static_cast<int>(last - first);
            Tensor4 x_batch(B, images[0].c, img_h, img_w);
            Tensor4 t_batch(B, arch.num_classes, img_h, img_w);
            for (int b = 0; b < B; ++b) {
                const std::size_t i = order[first + static_cast<std::size_t>(b)];
                std::copy(images[i].data.begin(), images[i].data.end(),
                          x_batch.data.begin() +
                              static_cast<std::ptrdiff_t>(static_cast<std::size_t>(b) *
                                                          images[i].data.size()));
                std::copy(targets[i].data.begin(), targets[i].data.end(),
                          t_batch.data.begin() +
                              static_cast<std::ptrdiff_t>(static_cast<std::size_t>(b) *
                                                          targets[i].data.size()));
            }
            const Tensor4 mask(B, 1, img_h, img_w, 1.0);
            const Value logits = forward_traced(result.model, x_batch, BnMode::train);
            const Value loss = cross_entropy_soft(softmax_channels(logits), t_batch, mask);
            const double loss_v = loss->value.item();
            if (!std::isfinite(loss_v)) {
                throw NumericError("train_source: non-finite loss at epoch " +
                                   std::to_string(epoch));
            }
            backward(loss);
            adam_step(result.model.parameters(), AdamConfig{cfg.lr, 0.9, 0.999, 1e-8});
            epoch_loss += loss_v;
            ++batches;
        }
        EpochLogRow row;
        row.epoch = epoch;
        row.l_total = epoch_loss / static_cast<double>(batches);
        row.dice_val = eval_hook ? eval_hook(result.model) : -1.0;
        result.epoch_log.push_back(row);
    }
    return result;
}

}  // namespace lfc
