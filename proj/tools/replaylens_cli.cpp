// replaylens: train paired toy multimodal checkpoints, inspect their
// activations through the logit lens, and run the replay / intervention /
// perturbation / pass@k / ablation experiments from a single JSON config.
//
// Every subcommand writes a self-describing run directory (outputs +
// config.json + manifest.json with content hashes); rerunning with the same
// config reproduces the outputs byte-identically.

#include <cstdio>
#include <cstdlib>
#include <string>

#include "CLI11.hpp"

#include "rlens/commands.hpp"
#include "rlens/errors.hpp"

namespace {

struct CommonArgs {
    std::string config_path;
    std::string out_dir;
    std::string dataset;
    std::string pair_dir;
    std::string seed; // string so "unset" is distinguishable
};

void add_common(CLI::App* cmd, CommonArgs& args, bool needs_pair, bool needs_dataset) {
    cmd->add_option("--config", args.config_path, "JSON config file");
    cmd->add_option("--out", args.out_dir, "output run directory")->required();
    cmd->add_option("--seed", args.seed, "global seed (overrides config and REPLAYLENS_SEED)");
    if (needs_pair) {
        cmd->add_option("--pair-dir", args.pair_dir, "train-pair run directory");
    }
    if (needs_dataset) {
        cmd->add_option("--dataset", args.dataset, "JSONL task dataset");
    }
}

// Precedence: explicit flag > REPLAYLENS_SEED > config file > defaults.
rlens::RunConfig resolve_config(const CommonArgs& args) {
    rlens::RunConfig cfg;
    if (!args.config_path.empty()) {
        cfg = rlens::load_run_config_file(args.config_path);
    }
    if (const char* env = std::getenv("REPLAYLENS_SEED")) {
        try {
            cfg.seed = std::stoull(env);
        } catch (const std::exception&) {
            throw rlens::ConfigError(std::string("REPLAYLENS_SEED is not an integer: ") + env);
        }
    }
    if (!args.seed.empty()) {
        try {
            cfg.seed = std::stoull(args.seed);
        } catch (const std::exception&) {
            throw rlens::ConfigError("--seed is not an integer: " + args.seed);
        }
    }
    if (!args.dataset.empty()) {
        cfg.dataset = args.dataset;
    }
    if (!args.pair_dir.empty()) {
        cfg.pair_dir = args.pair_dir;
    }
    return cfg;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"replaylens: logit-lens lab for paired toy multimodal transformers"};
    app.require_subcommand(1);

    struct Sub {
        const char* name;
        const char* help;
        bool needs_pair;
        bool needs_dataset;
        void (*run)(const rlens::RunConfig&, const std::string&);
    };
    const Sub subs[] = {
        {"train-pair", "train a base checkpoint and synthesize its tuned counterpart", false, false,
         rlens::cmd_train_pair},
        {"lens-report", "entropy-percentile KL heatmap and top-prediction shifts", true, true,
         rlens::cmd_lens_report},
        {"replay-eval", "greedy accuracy with and without activation replay", true, true,
         rlens::cmd_replay_eval},
        {"intervene", "cross-model activation splice study", true, true, rlens::cmd_intervene},
        {"perturb", "input-noise perturbation study on one task", true, true, rlens::cmd_perturb},
        {"passk", "pass@k sampling evaluation", true, true, rlens::cmd_passk},
        {"ablate", "tau x alpha replay ablation grid", true, true, rlens::cmd_ablate},
    };

    CommonArgs args[std::size(subs)];
    for (size_t i = 0; i < std::size(subs); ++i) {
        CLI::App* cmd = app.add_subcommand(subs[i].name, subs[i].help);
        add_common(cmd, args[i], subs[i].needs_pair, subs[i].needs_dataset);
    }

    CLI11_PARSE(app, argc, argv);

    for (size_t i = 0; i < std::size(subs); ++i) {
        if (!app.get_subcommand(subs[i].name)->parsed()) {
            continue;
        }
        try {
            const rlens::RunConfig cfg = resolve_config(args[i]);
            subs[i].run(cfg, args[i].out_dir);
            std::printf("%s: wrote %s\n", subs[i].name, args[i].out_dir.c_str());
            return 0;
        } catch (const rlens::ConfigError& e) {
            std::fprintf(stderr, "config error: %s\n", e.what());
            return 2;
        } catch (const rlens::DataError& e) {
            std::fprintf(stderr, "data error: %s\n", e.what());
            return 3;
        } catch (const rlens::NumericError& e) {
            std::fprintf(stderr, "numeric failure: %s\n", e.what());
            return 4;
        } catch (const rlens::TrainFailure& e) {
            std::fprintf(stderr, "training failure: %s\nloss curve (last 20):\n", e.what());
            const auto& curve = e.loss_curve;
            const size_t from = curve.size() > 20 ? curve.size() - 20 : 0;
            for (size_t s = from; s < curve.size(); ++s) {
                std::fprintf(stderr, "  step %zu: %.6f\n", s, curve[s]);
            }
            return 1;
        } catch (const std::exception& e) {
            std::fprintf(stderr, "error: %s\n", e.what());
            return 1;
        }
    }
    return 1;
}
