#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "gpia/analysis.hpp"
#include "gpia/attacks.hpp"
#include "gpia/defenses.hpp"
#include "gpia/gnn.hpp"
#include "gpia/graph.hpp"

namespace gpia {

// What the adversary is given. The partial graph is carved from the target at
// partial_fraction; the shadow graph comes from its own generator config or
// from files on disk.
struct KnowledgeConfig {
    Access access = Access::black;
    std::optional<double> partial_fraction;
    std::optional<SyntheticConfig> shadow_synthetic;
    std::optional<std::string> shadow_dir;
    MixRatio mix_ratio;
};

struct SweepAxes {
    std::vector<double> noise_scales;
    std::vector<double> truncation_ratios;
    std::vector<MixRatio> mix_ratios;
    std::vector<int> depths;  // gnn hidden layer counts, 2..8
    std::vector<double> group_ratios;

    bool any() const;
    // Cross-product size over the declared axes, 1 when none are declared.
    long combinations() const;
};

struct ExperimentConfig {
    std::optional<std::string> graph_dir;
    std::optional<SyntheticConfig> synthetic;
    std::optional<GnnConfig> gnn;
    std::optional<PropertySpec> property;
    std::vector<AttackSpec> attacks;
    std::vector<DefenseSpec> defenses;
    KnowledgeConfig knowledge;
    SweepAxes sweep;
    std::uint64_t seed = 0;
    std::vector<std::uint64_t> seeds;  // per-run sweep seeds, defaults to {seed}
    std::string out_dir = "out";
    std::optional<std::string> model_out;  // train stage target file
    ElementKind analyze_element = ElementKind::node;
    int jobs = 1;

    std::string config_hash;  // FNV-1a 64 of the key-sorted dump

    // Throws ConfigError listing every violated constraint at once.
    static ExperimentConfig from_json(const nlohmann::json& j);
    nlohmann::json to_json() const;
};

// Reads and parses the file, applies the GPIA_OUT_DIR override, and returns a
// fully validated config.
ExperimentConfig validate_config(const std::string& path);

std::string fnv1a_hex(const std::string& s);

struct RunManifest {
    std::string config_hash;
    std::map<std::string, int> versions;
    std::vector<std::uint64_t> seeds;
    std::vector<std::string> outputs;  // file names inside out_dir
    double wall_clock_s = 0.0;  // kept out of the file so reruns match bytewise

    nlohmann::json to_json() const;
    void write(const std::string& path) const;
};

// Subcommands: synth, train, attack, defend, sweep, and analyze:MODE with
// MODE in {influence, disparity, correlation, gapbuckets, distribution}.
// Writes artifacts plus manifest.json into cfg.out_dir.
RunManifest run(const ExperimentConfig& cfg, const std::string& subcommand);

}  // namespace gpia
