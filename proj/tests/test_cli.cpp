#include <cstdlib>
#include <filesystem>
#include <string>

#include <nlohmann/json.hpp>

#include "doctest.h"
#include "gpia/cli.hpp"
#include "gpia/errors.hpp"
#include "gpia/io.hpp"

using namespace gpia;
using nlohmann::json;

namespace {

std::string fresh_dir(const std::string& name) {
    std::string d = "/tmp/gpia_cli_test/" + name;
    std::filesystem::remove_all(d);
    std::filesystem::create_directories(d);
    return d;
}

json synthetic_json(int n, double ratio, std::uint64_t seed) {
    return {{"n", n},       {"group_ratio", ratio}, {"rho", 0.8},
            {"homophily", 0.6}, {"avg_degree", 8.0},    {"label_noise", 0.1},
            {"classes", 2}, {"seed", seed}};
}

json property_json() {
    return {{"level", "node"}, {"lhs", 1}, {"rhs", 0},
            {"comparator", ">"}, {"property_col", 0}};
}

json a2_json() {
    return {{"id", "A2"},
            {"aggregation", "posterior-concat"},
            {"classifier", {{"kind", "lr"}}},
            {"property", property_json()},
            {"train_samples", 24},
            {"test_samples", 12},
            {"sample_fraction", 0.3},
            {"planted_pos", 0.75},
            {"planted_neg", 0.25}};
}

json tiny_gnn_json() {
    return {{"arch", "gcn"},     {"hidden_layers", 1}, {"hidden_dim", 8},
            {"classes", 2},      {"max_epochs", 30},   {"patience", 10},
            {"seed", 5}};
}

// The small planted black-box experiment the smoke stages share.
json base_config(const std::string& out_dir) {
    json j;
    j["synthetic"] = synthetic_json(300, 0.5, 11);
    j["gnn"] = tiny_gnn_json();
    j["knowledge"] = {{"access", "black"}, {"partial_fraction", 0.4}};
    j["attacks"] = json::array({a2_json()});
    j["out_dir"] = out_dir;
    j["seed"] = 17;
    return j;
}

ExperimentConfig load(const json& j, const std::string& name) {
    std::string path = "/tmp/gpia_cli_test/" + name + ".json";
    std::filesystem::create_directories("/tmp/gpia_cli_test");
    write_text_file(path, j.dump(1));
    return validate_config(path);
}

}  // namespace

TEST_CASE("fnv1a 64 reference vectors") {
    CHECK(fnv1a_hex("") == "cbf29ce484222325");
    CHECK(fnv1a_hex("a") == "af63dc4c8601ec8c");
    CHECK(fnv1a_hex("{}") == "08f44b07b5901a25");
}

TEST_CASE("config hash names the experiment") {
    json j1;
    j1["synthetic"] = synthetic_json(50, 0.5, 1);
    j1["gnn"] = tiny_gnn_json();
    json j2;  // same fields, different insertion order
    j2["gnn"] = tiny_gnn_json();
    j2["synthetic"] = synthetic_json(50, 0.5, 1);
    CHECK(ExperimentConfig::from_json(j1).config_hash ==
          ExperimentConfig::from_json(j2).config_hash);

    // placement and seed knobs stay outside the hash
    json j3 = j1;
    j3["out_dir"] = "elsewhere";
    j3["seed"] = 9;
    j3["jobs"] = 4;
    CHECK(ExperimentConfig::from_json(j3).config_hash ==
          ExperimentConfig::from_json(j1).config_hash);

    json j4 = j1;
    j4["synthetic"]["n"] = 51;
    CHECK(ExperimentConfig::from_json(j4).config_hash !=
          ExperimentConfig::from_json(j1).config_hash);
}

TEST_CASE("minimal synthetic config resolves with defaults") {
    json j;
    j["synthetic"] = synthetic_json(50, 0.5, 1);
    ExperimentConfig c = load(j, "minimal");
    REQUIRE(c.synthetic.has_value());
    CHECK(c.synthetic->n == 50);
    CHECK(c.seed == 0);
    CHECK(c.seeds == std::vector<std::uint64_t>{0});
    CHECK(c.out_dir == "out");
    CHECK(c.jobs == 1);
    CHECK(!c.config_hash.empty());
}

TEST_CASE("every violation is reported at once") {
    json j;
    j["synthetic"] = synthetic_json(50, 0.5, 1);
    j["extra"] = 1;
    json a1 = a2_json();
    a1["id"] = "A1";
    a1["layers"] = json::array({1});
    a1["aggregation"] = "embed-maxpool";
    j["attacks"] = json::array({a1});  // no knowledge section at all
    try {
        ExperimentConfig::from_json(j);
        FAIL("expected ConfigError");
    } catch (const ConfigError& e) {
        std::string msg = e.what();
        CHECK(msg.find("unknown field: extra") != std::string::npos);
        CHECK(msg.find("A1 needs a partial graph") != std::string::npos);
        CHECK(msg.find("A1 is white-box but access is black") !=
              std::string::npos);
    }
}

TEST_CASE("taxonomy gates per attack id") {
    json j;
    j["synthetic"] = synthetic_json(50, 0.5, 1);
    json a3 = a2_json();
    a3["id"] = "A3";
    a3["layers"] = json::array({1});
    a3["aggregation"] = "embed-maxpool";
    j["attacks"] = json::array({a3});
    j["knowledge"] = {{"access", "white"}};
    CHECK_THROWS_WITH_AS(ExperimentConfig::from_json(j),
                         doctest::Contains("A3 needs a shadow graph"),
                         ConfigError);

    // satisfied knowledge passes
    j["knowledge"]["shadow"] = synthetic_json(80, 0.5, 9);
    CHECK_NOTHROW(ExperimentConfig::from_json(j));
}

TEST_CASE("sweep axis values are range checked") {
    json base;
    base["synthetic"] = synthetic_json(50, 0.5, 1);

    json j = base;
    j["sweep"] = {{"noise_scales", json::array({0.5, 0.0})}};
    CHECK_THROWS_WITH_AS(ExperimentConfig::from_json(j),
                         doctest::Contains("b must be > 0"), ConfigError);

    j = base;
    j["sweep"] = {{"noise_scales", json::array()}};
    CHECK_THROWS_WITH_AS(ExperimentConfig::from_json(j),
                         doctest::Contains("sweep axis empty"), ConfigError);

    j = base;
    j["sweep"] = {{"depths", json::array({2, 9})}};
    CHECK_THROWS_WITH_AS(ExperimentConfig::from_json(j),
                         doctest::Contains("depth must lie in [2, 8]"),
                         ConfigError);

    j = base;
    j["sweep"] = {{"truncation_ratios", json::array({1.0})}};
    CHECK_THROWS_WITH_AS(ExperimentConfig::from_json(j),
                         doctest::Contains("r must lie in (0, 1)"),
                         ConfigError);

    j = base;
    j["sweep"] = {{"mix_ratios", json::array({"3:7"})}};
    CHECK_THROWS_AS(ExperimentConfig::from_json(j), ConfigError);

    j = base;
    j["sweep"] = {{"depths", json::array({2, 3})},
                  {"group_ratios", json::array({0.5, 0.6, 0.7})}};
    ExperimentConfig c = ExperimentConfig::from_json(j);
    CHECK(c.sweep.combinations() == 6);
}

TEST_CASE("missing graph files are caught at validation") {
    json j;
    j["graph_dir"] = "/tmp/gpia_cli_test/does_not_exist";
    CHECK_THROWS_WITH_AS(ExperimentConfig::from_json(j),
                         doctest::Contains("missing file"), ConfigError);
}

TEST_CASE("env var overrides the output directory") {
    json j;
    j["synthetic"] = synthetic_json(50, 0.5, 1);
    j["out_dir"] = "from_file";
    setenv("GPIA_OUT_DIR", "/tmp/gpia_cli_test/from_env", 1);
    ExperimentConfig c = load(j, "env");
    unsetenv("GPIA_OUT_DIR");
    CHECK(c.out_dir == "/tmp/gpia_cli_test/from_env");
    CHECK(load(j, "env").out_dir == "from_file");
}

TEST_CASE("synth writes a graph that loads back identically") {
    std::string dir = fresh_dir("synth");
    json j;
    j["synthetic"] = synthetic_json(80, 0.5, 7);
    j["out_dir"] = dir;
    ExperimentConfig c = load(j, "synth");
    RunManifest m = run(c, "synth");
    CHECK(m.config_hash == c.config_hash);
    CHECK(std::filesystem::exists(dir + "/manifest.json"));

    Graph g = generate_synthetic(SyntheticConfig::from_json(j["synthetic"]));
    Graph back = load_graph(dir + "/edges.tsv", dir + "/features.csv", 0);
    CHECK(back.n == g.n);
    CHECK(back.edges == g.edges);
    CHECK(back.labels == g.labels);
    CHECK((back.features - g.features).norm() == 0.0);
}

TEST_CASE("train writes a loadable model") {
    std::string dir = fresh_dir("train");
    json j;
    j["synthetic"] = synthetic_json(80, 0.5, 7);
    j["gnn"] = tiny_gnn_json();
    j["model_out"] = dir + "/model.json";
    j["out_dir"] = dir;
    RunManifest m = run(load(j, "train"), "train");
    CHECK(m.seeds == std::vector<std::uint64_t>{5});
    GnnModel model = load_model(dir + "/model.json");
    CHECK(model.cfg.hidden_dim == 8);
    CHECK(model.trained_epochs > 0);
}

TEST_CASE("attack stage emits results plus per-attack artifacts") {
    std::string dir = fresh_dir("attack");
    ExperimentConfig c = load(base_config(dir), "attack");
    run(c, "attack");

    std::string csv = read_text_file(dir + "/results.csv");
    CHECK(csv.rfind("attack_id,aggregation,alignment,classifier,seed,accuracy,"
                    "n_test,config_hash\n",
                    0) == 0);
    CHECK(csv.find("A2,posterior-concat,sampling,lr,17,") != std::string::npos);
    CHECK(csv.find(c.config_hash) != std::string::npos);

    json rj = json::parse(read_text_file(dir + "/attack_0_A2.json"));
    CHECK(rj.at("config_hash") == c.config_hash);
    CHECK(rj.at("n_test") == 12);
    double acc = rj.at("accuracy").get<double>();
    CHECK(acc >= 0.7);  // planted 0.75/0.25 fixture separates easily

    std::string preds = read_text_file(dir + "/attack_0_A2_predictions.csv");
    CHECK(std::count(preds.begin(), preds.end(), '\n') == 13);
}

TEST_CASE("identical config and seed reproduce identical bytes") {
    std::string d1 = fresh_dir("det1");
    std::string d2 = fresh_dir("det2");
    json j = base_config(d1);
    run(load(j, "det1"), "attack");
    j["out_dir"] = d2;
    run(load(j, "det2"), "attack");
    for (const char* name :
         {"results.csv", "attack_0_A2.json", "attack_0_A2_predictions.csv",
          "manifest.json"})
        CHECK(read_text_file(d1 + "/" + name) ==
              read_text_file(d2 + "/" + name));
}

TEST_CASE("defend stage writes the sweep table schema") {
    std::string dir = fresh_dir("defend");
    json j = base_config(dir);
    j["defenses"] = json::array({{{"method", "noisy-posterior"}, {"b", 10.0}}});
    run(load(j, "defend"), "defend");
    std::string csv = read_text_file(dir + "/defense_results.csv");
    CHECK(csv.rfind("method,param,attack_id,attack_acc,target_acc,seed\n", 0) ==
          0);
    CHECK(csv.find("noisy-posterior,10,A2,") != std::string::npos);

    // an embedding defense cannot pair with the black-box attack
    j["defenses"] = json::array(
        {{{"method", "truncation"}, {"r", 0.3}, {"target_layers", {1}}}});
    CHECK_THROWS_AS(run(load(j, "defend_bad"), "defend"), UsageError);
}

TEST_CASE("sweep covers the axis cross product once per seed") {
    std::string dir = fresh_dir("sweep");
    json j = base_config(dir);
    j["defenses"] = json::array({{{"method", "noisy-posterior"}, {"b", 1.0}}});
    j["sweep"] = {{"noise_scales", json::array({0.1, 0.5, 10.0})}};
    j["seeds"] = json::array({21, 22});
    run(load(j, "sweep"), "sweep");

    std::string csv = read_text_file(dir + "/defense_results.csv");
    CHECK(std::count(csv.begin(), csv.end(), '\n') == 7);  // header + 3*2
    CHECK(csv.find("noisy-posterior,10,A2,") != std::string::npos);

    std::string d4 = fresh_dir("sweep4");
    j["out_dir"] = d4;
    j["jobs"] = 4;
    run(load(j, "sweep4"), "sweep");
    CHECK(read_text_file(d4 + "/defense_results.csv") == csv);
    CHECK(read_text_file(d4 + "/manifest.json") ==
          read_text_file(dir + "/manifest.json"));
}

TEST_CASE("undefended depth sweep lists axis cells per row") {
    std::string dir = fresh_dir("depths");
    json j = base_config(dir);
    json gnn = tiny_gnn_json();
    gnn["hidden_layers"] = 2;
    j["gnn"] = gnn;
    j["sweep"] = {{"depths", json::array({2, 3})}};
    run(load(j, "depths"), "sweep");
    std::string csv = read_text_file(dir + "/results.csv");
    CHECK(csv.rfind("point,depth,group_ratio,mix_ratio,attack_id,seed,"
                    "accuracy,config_hash\n",
                    0) == 0);
    CHECK(csv.find("0,2,,,A2,17,") != std::string::npos);
    CHECK(csv.find("1,3,,,A2,17,") != std::string::npos);
}

TEST_CASE("sweep usage rules") {
    json j = base_config("/tmp/gpia_cli_test/unused");
    j["attacks"].push_back(a2_json());
    CHECK_THROWS_WITH_AS(run(ExperimentConfig::from_json(j), "sweep"),
                         doctest::Contains("exactly one attack"), ConfigError);

    j = base_config("/tmp/gpia_cli_test/unused");
    j["sweep"] = {{"noise_scales", json::array({0.5})}};
    CHECK_THROWS_WITH_AS(run(ExperimentConfig::from_json(j), "sweep"),
                         doctest::Contains("needs a noisy defense"),
                         ConfigError);

    CHECK_THROWS_AS(run(ExperimentConfig::from_json(base_config("x")), "bogus"),
                    UsageError);
    CHECK_THROWS_AS(
        run(ExperimentConfig::from_json(base_config("x")), "analyze:bogus"),
        UsageError);
}

TEST_CASE("analyze disparity and influence write their csvs") {
    std::string dir = fresh_dir("analyze");
    json j;
    j["synthetic"] = synthetic_json(60, 0.75, 31);
    j["gnn"] = tiny_gnn_json();
    j["property"] = property_json();
    j["out_dir"] = dir;
    j["seed"] = 9;
    ExperimentConfig c = load(j, "analyze");

    run(c, "analyze:disparity");
    std::string d = read_text_file(dir + "/disparity.csv");
    CHECK(d.rfind("lhs_loss,lhs_accuracy,lhs_count,rhs_loss,rhs_accuracy,"
                  "rhs_count,loss_gap\n",
                  0) == 0);
    CHECK(std::count(d.begin(), d.end(), '\n') == 2);

    run(c, "analyze:influence");
    std::string i = read_text_file(dir + "/influence.csv");
    CHECK(i.rfind("element,group,score\n", 0) == 0);
    CHECK(std::count(i.begin(), i.end(), '\n') == 61);

    run(c, "analyze:correlation");
    std::string r = read_text_file(dir + "/correlation.csv");
    CHECK(r.rfind("n,pearson\n", 0) == 0);
}

TEST_CASE("analyze gapbuckets buckets the attack test samples") {
    std::string dir = fresh_dir("gaps");
    json j = base_config(dir);
    run(load(j, "gaps"), "analyze:gapbuckets");
    std::string csv = read_text_file(dir + "/gap_buckets.csv");
    CHECK(csv.rfind("bucket,mean_gap,mean_accuracy,count\n", 0) == 0);
    CHECK(std::count(csv.begin(), csv.end(), '\n') == 5);

    run(load(j, "gaps"), "analyze:distribution");
    std::string dist = read_text_file(dir + "/distribution.csv");
    CHECK(dist.rfind("x,y,flag\n", 0) == 0);
    CHECK(std::count(dist.begin(), dist.end(), '\n') == 25);  // 24 train rows
}
