#include <cstdio>
#include <exception>
#include <filesystem>
#include <string>

#include <nlohmann/json.hpp>

#include "CLI11.hpp"
#include "gpia/cli.hpp"
#include "gpia/errors.hpp"

int main(int argc, char** argv) {
    CLI::App app{"group property inference laboratory"};
    app.require_subcommand(1);

    std::string config_path, out_override, graph_dir, model_out, mode;
    std::string arch = "gcn";
    int layers = 2, jobs = 1;
    unsigned long long seed = 0;

    auto* synth = app.add_subcommand("synth", "generate a synthetic graph");
    synth->add_option("--config", config_path, "experiment config")->required();
    synth->add_option("--out", out_override, "output directory override");

    auto* train_cmd =
        app.add_subcommand("train", "train one gnn on a graph directory");
    train_cmd->add_option("--graph", graph_dir, "directory with edges.tsv and features.csv")
        ->required();
    train_cmd->add_option("--arch", arch, "gcn|sage|gat")
        ->check(CLI::IsMember({"gcn", "sage", "gat"}));
    train_cmd->add_option("--layers", layers, "hidden layer count");
    train_cmd->add_option("--seed", seed, "training seed");
    train_cmd->add_option("--out", model_out, "model file")->required();

    auto* attack = app.add_subcommand("attack", "run the configured attacks");
    attack->add_option("--config", config_path)->required();

    auto* defend =
        app.add_subcommand("defend", "evaluate defenses against the attacks");
    defend->add_option("--config", config_path)->required();

    auto* analyze =
        app.add_subcommand("analyze", "influence and disparity diagnostics");
    analyze->add_option("mode", mode, "analysis kind")
        ->required()
        ->check(CLI::IsMember({"influence", "disparity", "correlation",
                               "gapbuckets", "distribution"}));
    analyze->add_option("--config", config_path)->required();

    auto* sweep =
        app.add_subcommand("sweep", "cross-product over the declared axes");
    sweep->add_option("--config", config_path)->required();
    sweep->add_option("--jobs", jobs, "worker count");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    }

    gpia::ExperimentConfig cfg;
    std::string sub;
    try {
        if (train_cmd->parsed()) {
            cfg.graph_dir = graph_dir;
            gpia::GnnConfig g;
            g.arch = gpia::arch_from_string(arch);
            g.hidden_layers = layers;
            g.seed = seed;
            g.validate();
            cfg.gnn = g;
            cfg.model_out = model_out;
            std::filesystem::path parent =
                std::filesystem::path(model_out).parent_path();
            cfg.out_dir = parent.empty() ? "." : parent.string();
            cfg.config_hash = gpia::fnv1a_hex(cfg.to_json().dump());
            sub = "train";
        } else {
            cfg = gpia::validate_config(config_path);
            if (synth->parsed()) {
                if (!out_override.empty()) cfg.out_dir = out_override;
                sub = "synth";
            } else if (attack->parsed()) {
                sub = "attack";
            } else if (defend->parsed()) {
                sub = "defend";
            } else if (analyze->parsed()) {
                sub = "analyze:" + mode;
            } else {
                if (sweep->count("--jobs") > 0) cfg.jobs = jobs;
                sub = "sweep";
            }
        }
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 2;
    }

    try {
        gpia::RunManifest m = gpia::run(cfg, sub);
        std::printf("done in %.2fs (config %s)\n", m.wall_clock_s,
                    m.config_hash.c_str());
        return 0;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 3;
    }
}
