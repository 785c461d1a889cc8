#include "lfc/commands.hpp"

#include <atomic>
#include <cmath>
#include <iostream>
#include <sstream>
#include <thread>

#include "lfc/adaptation.hpp"
#include "lfc/checkpoint.hpp"
#include "lfc/errors.hpp"
#include "lfc/metrics.hpp"
#include "lfc/textio.hpp"

namespace lfc {

namespace {

namespace fs = std::filesystem;

MetricReport evaluate_model(ModelBranch& model, const Dataset& ds) {
    std::vector<std::pair<SegMask, SegMask>> pairs;
    pairs.reserve(ds.images.size());
    for (std::size_t i = 0; i < ds.images.size(); ++i) {
        pairs.emplace_back(predict_mask(model, ds.images[i]),
                           mask_from_class_map(ds.labels[i], 0));
    }
    return report(pairs, kForegroundClasses);
}

void write_resolved_config(const RunConfig& cfg, const fs::path& dir) {
    write_text_file(dir / "config_resolved.txt", cfg.to_text());
}

// Runs jobs on a small worker pool; rethrows the first job exception.
void run_parallel(const std::vector<std::function<void()>>& jobs, unsigned max_workers) {
    if (max_workers == 0) max_workers = std::max(1u, std::thread::hardware_concurrency());
    max_workers = std::min<unsigned>(max_workers, static_cast<unsigned>(jobs.size()));
    if (max_workers <= 1) {
        for (const auto& job : jobs) job();
        return;
    }
    std::atomic<std::size_t> next{0};
    std::exception_ptr first_error;
    std::mutex error_mutex;
    std::vector<std::thread> workers;
    for (unsigned t = 0; t < max_workers; ++t) {
        workers.emplace_back([&]() {
            while (true) {
                const std::size_t i = next.fetch_add(1);
                if (i >= jobs.size()) return;
                try {
                    jobs[i]();
                } catch (...) {
                    std::lock_guard<std::mutex> lock(error_mutex);
                    if (!first_error) first_error = std::current_exception();
                }
            }
        });
    }
    for (auto& w : workers) w.join();
    if (first_error) std::rethrow_exception(first_error);
}

ModelBranch load_source_model(const fs::path& path) {
    ModelBranch m = load_branch(path);
    if (m.role != Role::source) {
        throw ConfigError("checkpoint '" + path.string() + "' does not hold a source model");
    }
    return m;
}

}  // namespace

RunConfig resolve_config(const std::optional<fs::path>& config_file, const fs::path& data,
                         const fs::path& out) {
    RunConfig cfg = config_file ? RunConfig::from_file(*config_file) : RunConfig{};
    if (!data.empty()) cfg.data_dir = data.string();
    if (!out.empty()) cfg.out_dir = out.string();
    cfg.validate();
    return cfg;
}

double dataset_mean_dice(ModelBranch& model, const Dataset& ds) {
    std::vector<std::pair<SegMask, SegMask>> pairs;
    pairs.reserve(ds.images.size());
    for (std::size_t i = 0; i < ds.images.size(); ++i) {
        pairs.emplace_back(predict_mask(model, ds.images[i]),
                           mask_from_class_map(ds.labels[i], 0));
    }
    return mean_dice(pairs, kForegroundClasses);
}

void cmd_gen_data(const GenDataArgs& args) {
    const DomainSpec source =
        args.source_spec ? read_spec_file(*args.source_spec) : default_source_spec();
    const DomainSpec target =
        args.target_spec ? read_spec_file(*args.target_spec) : default_target_spec();
    benchmark(source, target, args.sizes, args.seed, args.out, args.force);
    std::cout << "benchmark written to " << args.out.string() << " (source/train="
              << args.sizes.source_train << ", target/train=" << args.sizes.target_train
              << ", target/test=" << args.sizes.target_test << ")\n";
}

void cmd_train_source(const TrainSourceArgs& args) {
    const RunConfig cfg = resolve_config(args.config, args.data, args.out);
    const fs::path data_dir(cfg.data_dir);
    const Dataset train = load_dataset(data_dir / "source" / "train");

    // Per-epoch validation snapshot on a fixed slice of the source split.
    const std::size_t val_n = std::min<std::size_t>(50, train.images.size());
    EvalHook hook = [&](ModelBranch& model) {
        std::vector<std::pair<SegMask, SegMask>> pairs;
        for (std::size_t i = 0; i < val_n; ++i) {
            pairs.emplace_back(predict_mask(model, train.images[i]),
                               mask_from_class_map(train.labels[i], 0));
        }
        return mean_dice(pairs, kForegroundClasses);
    };

    SourceTrainConfig tc;
    tc.seed = cfg.seed;
    tc.epochs = cfg.epochs;
    tc.batch_size = cfg.batch_size;
    tc.lr = cfg.lr;

    SegNetConfig arch;
    SourceTrainResult result = train_source(arch, train.images, train.labels, tc, hook);
    result.model.set_role(Role::source);

    fs::create_directories(cfg.out_dir);
    save_branch(result.model, fs::path(cfg.out_dir) / "source_model.ckpt");
    write_epoch_log_csv(result.epoch_log, fs::path(cfg.out_dir) / "train_log.csv");
    write_resolved_config(cfg, cfg.out_dir);

    const double final_dice = dataset_mean_dice(result.model, train);
    std::cout << "source model saved; source-train mean foreground Dice = "
              << fmt_double(final_dice) << "\n";
}

void cmd_adapt(const AdaptArgs& args) {
    const RunConfig cfg = resolve_config(args.config, args.data, args.out);
    ModelBranch f_s = load_source_model(args.source_model);
    const fs::path data_dir(cfg.data_dir);
    const Dataset target_train = load_dataset(data_dir / "target" / "train");
    const Dataset target_test = load_dataset(data_dir / "target" / "test");

    AdaptConfig ac;
    ac.seed = cfg.seed;
    ac.epochs = cfg.epochs;
    ac.batch_size = cfg.batch_size;
    ac.lr = cfg.lr;
    ac.tau = cfg.tau;
    ac.r_max = cfg.r_max;
    ac.delta = cfg.delta;
    ac.ablation = ablation_from_string(cfg.ablation);
    ac.out_dir = cfg.out_dir;
    fs::create_directories(cfg.out_dir);

    EvalHook hook = [&](ModelBranch& model) { return dataset_mean_dice(model, target_test); };
    AdaptResult result = adapt(f_s, target_train.images, target_train.sample_ids, ac, hook);

    save_branch(result.target, fs::path(cfg.out_dir) / "model.ckpt");
    const MetricReport rep = evaluate_model(result.target, target_test);
    write_text_file(fs::path(cfg.out_dir) / "metrics.csv", rep.to_csv());
    write_resolved_config(cfg, cfg.out_dir);
    std::cout << "adaptation (" << cfg.ablation << ") finished\n" << rep.pretty();
}

void cmd_evaluate(const EvaluateArgs& args) {
    if (args.domain != "source" && args.domain != "target") {
        throw ConfigError("evaluate: domain must be 'source' or 'target'");
    }
    if (args.split != "train" && args.split != "test") {
        throw ConfigError("evaluate: split must be 'train' or 'test'");
    }
    const Dataset ds = load_dataset(args.data / args.domain / args.split);

    std::vector<std::pair<SegMask, SegMask>> pairs;
    pairs.reserve(ds.images.size());
    if (args.oracle) {
        for (std::size_t i = 0; i < ds.images.size(); ++i) {
            const SegMask gt = mask_from_class_map(ds.labels[i], 0);
            pairs.emplace_back(gt, gt);
        }
    } else {
        ModelBranch model = load_branch(args.model);
        for (std::size_t i = 0; i < ds.images.size(); ++i) {
            pairs.emplace_back(predict_mask(model, ds.images[i]),
                               mask_from_class_map(ds.labels[i], 0));
        }
    }
    const MetricReport rep = report(pairs, kForegroundClasses);
    if (!args.out.empty()) {
        if (args.out.has_parent_path()) fs::create_directories(args.out.parent_path());
        write_text_file(args.out, rep.to_csv());
    }
    std::cout << rep.pretty();
}

void cmd_ablate_suite(const AblateSuiteArgs& args) {
    if (args.seeds < 1) throw ConfigError("ablate-suite: seeds must be >= 1");
    const RunConfig base_cfg = resolve_config(args.config, args.data, args.out);
    const fs::path data_dir(base_cfg.data_dir);
    const fs::path out_dir(base_cfg.out_dir);
    const Dataset target_train = load_dataset(data_dir / "target" / "train");
    const Dataset target_test = load_dataset(data_dir / "target" / "test");
    const ModelBranch source_model = load_source_model(args.source_model);
    fs::create_directories(out_dir);

    const std::vector<std::string> modes = {"full", "no_easy2hard", "no_src2tgt", "no_adaptation"};
    struct RunOutcome {
        MetricReport report;
    };
    std::vector<std::vector<RunOutcome>> outcomes(modes.size());
    for (auto& v : outcomes) v.resize(static_cast<std::size_t>(args.seeds));

    std::vector<std::function<void()>> jobs;
    for (std::size_t mi = 0; mi < modes.size(); ++mi) {
        for (int si = 0; si < args.seeds; ++si) {
            jobs.emplace_back([&, mi, si]() {
                const std::uint64_t run_seed = base_cfg.seed + static_cast<std::uint64_t>(si);
                const fs::path run_dir =
                    out_dir / (modes[mi] + "_seed" + std::to_string(run_seed));
                fs::create_directories(run_dir);
                ModelBranch f_s = source_model;  // each job works on its own copy
                if (modes[mi] == "no_adaptation") {
                    const MetricReport rep = evaluate_model(f_s, target_test);
                    write_text_file(run_dir / "metrics.csv", rep.to_csv());
                    outcomes[mi][static_cast<std::size_t>(si)] = {rep};
                    return;
                }
                RunConfig cfg = base_cfg;
                cfg.seed = run_seed;
                cfg.ablation = modes[mi];
                cfg.out_dir = run_dir.string();
                AdaptConfig ac;
                ac.seed = cfg.seed;
                ac.epochs = cfg.epochs;
                ac.batch_size = cfg.batch_size;
                ac.lr = cfg.lr;
                ac.tau = cfg.tau;
                ac.r_max = cfg.r_max;
                ac.delta = cfg.delta;
                ac.ablation = ablation_from_string(cfg.ablation);
                ac.out_dir = run_dir;
                AdaptResult result =
                    adapt(f_s, target_train.images, target_train.sample_ids, ac, {});
                save_branch(result.target, run_dir / "model.ckpt");
                const MetricReport rep = evaluate_model(result.target, target_test);
                write_text_file(run_dir / "metrics.csv", rep.to_csv());
                write_resolved_config(cfg, run_dir);
                outcomes[mi][static_cast<std::size_t>(si)] = {rep};
            });
        }
    }
    run_parallel(jobs, args.max_workers);

    // Aggregate over seeds: per mode and class, mean and population std of the
    // per-run class means.
    std::ostringstream summary;
    summary << "mode,class,dice_mean,dice_std,asd_mean,asd_std,seeds\n";
    std::ostringstream comparison;
    comparison << "mode,dice_disc,asd_disc,dice_cup,asd_cup\n";
    for (std::size_t mi = 0; mi < modes.size(); ++mi) {
        std::ostringstream row;
        row << modes[mi];
        for (std::size_t ci = 0; ci < kForegroundClasses.size(); ++ci) {
            std::vector<double> dices, asds;
            for (int si = 0; si < args.seeds; ++si) {
                const ClassStats& st =
                    outcomes[mi][static_cast<std::size_t>(si)].report.classes[ci];
                dices.push_back(st.dice_mean);
                asds.push_back(st.asd_mean);
            }
            auto mean_of = [](const std::vector<double>& xs) {
                double acc = 0.0;
                for (double x : xs) acc += x;
                return acc / static_cast<double>(xs.size());
            };
            auto std_of = [](const std::vector<double>& xs, double mean) {
                double acc = 0.0;
                for (double x : xs) acc += (x - mean) * (x - mean);
                return std::sqrt(acc / static_cast<double>(xs.size()));
            };
            const double dm = mean_of(dices), ds = std_of(dices, dm);
            const double am = mean_of(asds), as = std_of(asds, am);
            summary << modes[mi] << "," << kForegroundClasses[ci] << "," << fmt_double(dm) << ","
                    << fmt_double(ds) << "," << fmt_double(am) << "," << fmt_double(as) << ","
                    << args.seeds << "\n";
            row << "," << fmt_mean_std(dm, ds, 100.0) << "," << fmt_mean_std(am, as);
        }
        comparison << row.str() << "\n";
    }
    write_text_file(out_dir / "summary.csv", summary.str());
    write_text_file(out_dir / "comparison.csv", comparison.str());
    std::cout << comparison.str();
}

}  // namespace lfc
