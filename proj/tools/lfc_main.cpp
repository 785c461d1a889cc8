#include <CLI11.hpp>
#include <iostream>
#include <string>

#include "lfc/commands.hpp"
#include "lfc/errors.hpp"

namespace {

int run(int argc, char** argv) {
    CLI::App app{"Source-free domain adaptation for segmentation via curriculum learning"};
    app.require_subcommand(1);

    lfc::GenDataArgs gen;
    std::string gen_source_spec, gen_target_spec;
    auto* gen_cmd = app.add_subcommand("gen-data", "Generate the synthetic cross-domain benchmark");
    gen_cmd->add_option("--out", gen.out, "Output directory")->required();
    gen_cmd->add_option("--seed", gen.seed, "Generator seed")->required();
    gen_cmd->add_option("--source-spec", gen_source_spec, "Source domain spec file");
    gen_cmd->add_option("--target-spec", gen_target_spec, "Target domain spec file");
    gen_cmd->add_option("--source-train", gen.sizes.source_train, "Source train size");
    gen_cmd->add_option("--target-train", gen.sizes.target_train, "Target train size");
    gen_cmd->add_option("--target-test", gen.sizes.target_test, "Target test size");
    gen_cmd->add_flag("--force", gen.force, "Overwrite a non-empty output directory");

    lfc::TrainSourceArgs train;
    std::string train_config;
    auto* train_cmd = app.add_subcommand("train-source", "Train the source model");
    train_cmd->add_option("--data", train.data, "Benchmark root directory")->required();
    train_cmd->add_option("--config", train_config, "Run config file");
    train_cmd->add_option("--out", train.out, "Output directory")->required();

    lfc::AdaptArgs adapt;
    std::string adapt_config;
    auto* adapt_cmd = app.add_subcommand("adapt", "Adapt the source model to the target domain");
    adapt_cmd->add_option("--source-model", adapt.source_model, "Source checkpoint")->required();
    adapt_cmd->add_option("--data", adapt.data, "Benchmark root directory")->required();
    adapt_cmd->add_option("--config", adapt_config, "Run config file");
    adapt_cmd->add_option("--out", adapt.out, "Output directory")->required();

    lfc::EvaluateArgs eval;
    auto* eval_cmd = app.add_subcommand("evaluate", "Evaluate a checkpoint on a split");
    eval_cmd->add_option("--model", eval.model, "Model checkpoint");
    eval_cmd->add_option("--data", eval.data, "Benchmark root directory")->required();
    eval_cmd->add_option("--domain", eval.domain, "source or target (default target)");
    eval_cmd->add_option("--split", eval.split, "train or test (default test)");
    eval_cmd->add_option("--out", eval.out, "Report CSV path");
    eval_cmd->add_flag("--oracle", eval.oracle, "Evaluate ground truth against itself");

    lfc::AblateSuiteArgs suite;
    std::string suite_config;
    auto* suite_cmd = app.add_subcommand("ablate-suite", "Run all modes over several seeds");
    suite_cmd->add_option("--source-model", suite.source_model, "Source checkpoint")->required();
    suite_cmd->add_option("--data", suite.data, "Benchmark root directory")->required();
    suite_cmd->add_option("--config", suite_config, "Run config file");
    suite_cmd->add_option("--seeds", suite.seeds, "Number of seeds (default 3)");
    suite_cmd->add_option("--out", suite.out, "Output directory")->required();
    suite_cmd->add_option("--workers", suite.max_workers, "Worker threads (default: cores)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    try {
        if (*gen_cmd) {
            if (!gen_source_spec.empty()) gen.source_spec = gen_source_spec;
            if (!gen_target_spec.empty()) gen.target_spec = gen_target_spec;
            lfc::cmd_gen_data(gen);
        } else if (*train_cmd) {
            if (!train_config.empty()) train.config = train_config;
            lfc::cmd_train_source(train);
        } else if (*adapt_cmd) {
            if (!adapt_config.empty()) adapt.config = adapt_config;
            lfc::cmd_adapt(adapt);
        } else if (*eval_cmd) {
            if (!eval.oracle && eval.model.empty()) {
                throw lfc::ConfigError("evaluate: --model is required unless --oracle is set");
            }
            lfc::cmd_evaluate(eval);
        } else if (*suite_cmd) {
            if (!suite_config.empty()) suite.config = suite_config;
            lfc::cmd_ablate_suite(suite);
        }
    } catch (const lfc::FsConflictError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    } catch (const lfc::NumericError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 4;
    } catch (const lfc::Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) { return run(argc, argv); }
