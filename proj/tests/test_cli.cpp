#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <random>

#include "fedtcd/cli.hpp"
#include "fedtcd/errors.hpp"
#include "fedtcd/io.hpp"

using namespace fedtcd;
namespace fs = std::filesystem;

namespace {

struct TempDir {
    fs::path path;
    TempDir() {
        std::random_device rd;
        path = fs::temp_directory_path() / ("fedtcd_test_" + std::to_string(rd()) + std::to_string(rd()));
        fs::create_directories(path);
    }
    ~TempDir() {
        std::error_code ec;
        fs::remove_all(path, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;
};

ExperimentConfig small_config() {
    ExperimentConfig c;
    c.seed = 4;
    c.scenario.D = 3;
    c.scenario.T = 8;
    c.scenario.L = 1;
    c.scenario.K = 2;
    c.scenario.n_k = {40, 50};
    c.scenario.sparsity = 0.5;
    c.dism.h = 8;
    c.dism.null_permutations = 5;
    c.dcto.R = 2;
    c.dcto.E = 2;
    c.dcto.m = 4;
    c.dcto.eta = 0.1;
    sync_seeds(c);
    return c;
}

int run(std::vector<std::string> args) {
    args.insert(args.begin(), "fedtcd");
    std::vector<const char*> argv;
    for (const auto& a : args) argv.push_back(a.c_str());
    return run_cli(static_cast<int>(argv.size()), argv.data());
}

}  // namespace

TEST_CASE("synth writes one file per client plus truth and held-out panels") {
    TempDir dir;
    const auto cfg = small_config();
    cmd_synth(cfg, dir.path, true);
    for (const char* f : {"config.json", "dataset/client_0.ddic", "dataset/client_1.ddic", "dataset/heldout.ddic",
                          "dataset/truth.ddgt", "dataset/truth.ddgt.json", "dataset/client_0.csv"})
        CHECK_MESSAGE(fs::exists(dir.path / f), f);
    const auto panels = load_panels(dir.path, 2);
    CHECK(panels == generate(cfg.scenario).first);
    CHECK(decode_truth(read_file(dir.path / "dataset/truth.ddgt")) == generate(cfg.scenario).second);
    const std::string csv = read_text(dir.path / "dataset/client_1.csv");
    CHECK(std::count(csv.begin(), csv.end(), '\n') == 1 + 50 * 8);
    CHECK(load_config(dir.path / "config.json") == cfg);
}

TEST_CASE("synth is byte-reproducible for a fixed seed") {
    TempDir a, b;
    cmd_synth(small_config(), a.path);
    cmd_synth(small_config(), b.path);
    CHECK(read_file(a.path / "dataset/client_0.ddic") == read_file(b.path / "dataset/client_0.ddic"));
    CHECK(read_file(a.path / "dataset/heldout.ddic") == read_file(b.path / "dataset/heldout.ddic"));
    CHECK(read_file(a.path / "dataset/client_0.ddic") != read_file(a.path / "dataset/heldout.ddic"));
}

TEST_CASE("dism writes priors and reruns bit-identically") {
    TempDir dir;
    auto cfg = small_config();
    cmd_synth(cfg, dir.path);
    const auto r = cmd_dism(cfg, dir.path);
    const auto first = read_file(dir.path / "priors.ddps");
    CHECK(decode_priors(first) == r.priors);
    cmd_dism(cfg, dir.path);
    CHECK(read_file(dir.path / "priors.ddps") == first);
    CHECK(read_text(dir.path / "priors.txt").find("bytes up") != std::string::npos);

    cfg.dism.T_S = cfg.scenario.T;
    cmd_dism(cfg, dir.path);
    CHECK(read_text(dir.path / "priors.txt").rfind("sampled times: 1 ", 0) == 0);
}

TEST_CASE("dcto: zero step size leaves the initial parameters") {
    TempDir dir;
    auto cfg = small_config();
    cfg.dcto.R = 1;
    cfg.dcto.E = 1;
    cfg.dcto.eta = 0.0;
    cmd_synth(cfg, dir.path);
    cmd_dism(cfg, dir.path);
    const auto r = cmd_dcto(cfg, dir.path);
    const ModelShape shape{3, 1, 4, resolved_w_enc(cfg.dcto, 1)};
    // Two clients: the weighted mean reproduces the broadcast up to rounding.
    const auto stored = decode_checkpoint(read_file(dir.path / "checkpoint.ddck")).theta;
    const auto init = init_theta(shape, cfg.seed);
    REQUIRE(stored.flat.size() == init.flat.size());
    CHECK(stored.shape == init.shape);
    double worst = 0.0;
    for (std::size_t a = 0; a < init.flat.size(); ++a) worst = std::max(worst, std::abs(stored.flat[a] - init.flat[a]));
    CHECK(worst < 1e-15);
    CHECK(r.state.next_round == 1);
    const std::string rounds = read_text(dir.path / "rounds.csv");
    CHECK(std::count(rounds.begin(), rounds.end(), '\n') == 1 + 2);
}

TEST_CASE("dcto: resume matches an uninterrupted run") {
    TempDir whole, split;
    auto cfg = small_config();
    cfg.dcto.R = 4;
    for (const auto* d : {&whole, &split}) {
        cmd_synth(cfg, d->path);
        cmd_dism(cfg, d->path);
    }
    cmd_dcto(cfg, whole.path);

    auto first = cfg;
    first.dcto.R = 2;
    cmd_dcto(first, split.path);
    cmd_dcto(cfg, split.path, true);

    CHECK(read_file(split.path / "checkpoint.ddck") == read_file(whole.path / "checkpoint.ddck"));
    CHECK(read_file(split.path / "estimate.ddge") == read_file(whole.path / "estimate.ddge"));
    CHECK(read_text(split.path / "rounds.csv") == read_text(whole.path / "rounds.csv"));
    CHECK(read_text(split.path / "loss_curve.csv") == read_text(whole.path / "loss_curve.csv"));
}

TEST_CASE("eval: the true graph scores perfectly") {
    TempDir dir;
    const auto cfg = small_config();
    cmd_synth(cfg, dir.path);
    const auto truth = decode_truth(read_file(dir.path / "dataset/truth.ddgt"));
    write_file(dir.path / "estimate.ddge",
               encode_estimate(GraphEstimate{truth.W_true, truth.A_true, truth.oracle_S, truth.oracle_S_A}));
    const auto rep = cmd_eval(cfg, dir.path);
    CHECK(rep.auroc_mean.value_or(0.0) == 1.0);
    CHECK(fs::exists(dir.path / "eval.csv"));
    CHECK(fs::exists(dir.path / "eval_t.csv"));
    CHECK_FALSE(rep.masks.has_value());

    write_file(dir.path / "estimate.ddge",
               encode_estimate(GraphEstimate{Tensor3(8, 3, 3), Tensor3(1, 3, 3), truth.oracle_S, truth.oracle_S_A}));
    CHECK(cmd_eval(cfg, dir.path).auroc_mean.value_or(0.0) == 0.5);
}

TEST_CASE("run_cli: pipeline and exit codes") {
    TempDir dir;
    const fs::path cfg_file = dir.path / "cfg.json";
    write_text(cfg_file, config_to_json(small_config()));
    const std::string out = (dir.path / "run").string();

    CHECK(run({"pipeline", "-c", cfg_file.string(), "-o", out}) == kExitOk);
    for (const char* f : {"priors.ddps", "checkpoint.ddck", "estimate.ddge", "rounds.csv", "eval.txt", "timings.csv"})
        CHECK_MESSAGE(fs::exists(fs::path(out) / f), f);

    // Later stages pick up the config echo from the output directory.
    CHECK(run({"eval", "-o", out}) == kExitOk);
    CHECK(run({"dcto", "-o", out, "--set", "dcto.R=3", "--resume"}) == kExitOk);
    CHECK(run({"dcto", "-o", out, "--set", "dcto.R=1", "--resume"}) == kExitConfig);

    CHECK(run({"synth", "-c", cfg_file.string(), "-o", out, "--set", "dcto.bogus=1"}) == kExitConfig);
    CHECK(run({"synth", "-c", cfg_file.string(), "-o", out, "--set", "dcto.R=0"}) == kExitConfig);
    CHECK(run({"synth", "-c", (dir.path / "missing.json").string()}) == kExitIo);
    CHECK(run({"dism", "-c", cfg_file.string(), "-o", (dir.path / "empty").string()}) == kExitIo);
    CHECK(run({"nonsense"}) == kExitConfig);

    write_text(dir.path / "bad.json", "{\"scenario\": {\"D\": 3, \"color\": 1}}");
    CHECK(run({"synth", "-c", (dir.path / "bad.json").string(), "-o", out}) == kExitConfig);
    write_text(dir.path / "broken.json", "{ not json");
    CHECK(run({"synth", "-c", (dir.path / "broken.json").string(), "-o", out}) == kExitConfig);
}

TEST_CASE("config json round-trip and overrides") {
    auto cfg = small_config();
    cfg.scenario.confounded_edges.push_back({0, 2, {0.3, -0.3}, 1.0, 1.0, {}, {}, Window{2, 6}});
    cfg.scenario.inconsistent_edges.push_back({1, 0, 1, {1}, Window{}});
    cfg.scenario.noise_burst = NoiseBurst{1, Window{3, 5}, 2.0};
    cfg.dism.delta_hard = 0.25;
    CHECK(config_from_json(config_to_json(cfg)) == cfg);

    apply_override(cfg, "dcto.R=7");
    CHECK(cfg.dcto.R == 7);
    apply_override(cfg, "scenario.dynamics=piecewise");
    CHECK(cfg.scenario.dynamics == Dynamics::Piecewise);
    apply_override(cfg, "dism.delta_local=permutation");
    CHECK_FALSE(cfg.dism.delta_local.has_value());
    CHECK_THROWS_AS(apply_override(cfg, "dcto.R"), ConfigError);
    CHECK_THROWS_AS(apply_override(cfg, "dcto.nothing=1"), ConfigError);
    CHECK_THROWS_AS(config_from_json("{\"dcto\": {\"R\": \"many\"}}"), ConfigError);
}

TEST_CASE("output directory resolution") {
    ExperimentConfig cfg;
    ::unsetenv(kOutputEnv);
    CHECK(resolve_output_dir(cfg, "") == fs::path("fedtcd_out"));
    ::setenv(kOutputEnv, "/tmp/from_env", 1);
    CHECK(resolve_output_dir(cfg, "") == fs::path("/tmp/from_env"));
    cfg.output_dir = "/tmp/from_config";
    CHECK(resolve_output_dir(cfg, "") == fs::path("/tmp/from_config"));
    CHECK(resolve_output_dir(cfg, "/tmp/flag") == fs::path("/tmp/flag"));
    ::unsetenv(kOutputEnv);
}
