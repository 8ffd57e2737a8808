#include "fedtcd/cli.hpp"

#include <cstdlib>
#include <iostream>
#include <optional>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "fedtcd/errors.hpp"
#include "fedtcd/io.hpp"
#include "fedtcd/parallel.hpp"

namespace fs = std::filesystem;

namespace fedtcd {

namespace {

void sidecar(const fs::path& file, const char* format, const ExperimentConfig& config) {
    nlohmann::json j;
    j["format"] = format;
    j["version"] = 1;
    j["config"] = nlohmann::json::parse(config_to_json(config));
    write_text(fs::path(file).concat(".json"), j.dump(2) + "\n");
}

void echo_config(const ExperimentConfig& config, const fs::path& out) {
    write_text(out / "config.json", config_to_json(config));
}

fs::path client_file(const fs::path& out, std::size_t k) {
    return out / "dataset" / ("client_" + std::to_string(k) + ".ddic");
}

std::vector<TimeSeriesPanel> read_panels(const fs::path& file) { return decode_dataset(read_file(file)); }

PriorSet load_priors(const fs::path& out, const ExperimentConfig& config) {
    PriorSet p = decode_priors(read_file(out / "priors.ddps"));
    if (p.T() != config.scenario.T || p.D() != config.scenario.D || p.L() != config.scenario.L)
        throw ConfigError("priors.ddps does not match the dataset dimensions");
    return p;
}

void append_timing(const fs::path& out, const std::string& what, double seconds) {
    const fs::path file = out / "timings.csv";
    std::string text = fs::exists(file) ? read_text(file) : "step,seconds\n";
    std::ostringstream os;
    os << what << "," << seconds << "\n";
    write_text(file, text + os.str());
}

}  // namespace

fs::path resolve_output_dir(const ExperimentConfig& config, const std::string& flag) {
    if (!flag.empty()) return flag;
    if (!config.output_dir.empty()) return config.output_dir;
    if (const char* env = std::getenv(kOutputEnv); env && *env) return env;
    return "fedtcd_out";
}

std::vector<TimeSeriesPanel> load_panels(const fs::path& out, std::size_t K) {
    std::vector<TimeSeriesPanel> panels;
    for (std::size_t k = 0; k < K; ++k) {
        auto part = read_panels(client_file(out, k));
        if (part.size() != 1) throw IoError(client_file(out, k).string() + ": expected one client panel");
        panels.push_back(std::move(part.front()));
    }
    return panels;
}

void cmd_synth(const ExperimentConfig& config, const fs::path& out, bool csv) {
    validate(config);
    echo_config(config, out);
    const auto [panels, truth] = generate(config.scenario);
    const auto held = generate(config.scenario, held_out_seed(config.scenario)).first;
    for (const auto& p : panels) {
        const fs::path file = client_file(out, p.client_id);
        write_file(file, encode_dataset(std::span(&p, 1), config.scenario.L));
        sidecar(file, "DDIC", config);
        if (csv) write_text(out / "dataset" / ("client_" + std::to_string(p.client_id) + ".csv"), panel_csv(p));
    }
    write_file(out / "dataset" / "heldout.ddic", encode_dataset(held, config.scenario.L));
    sidecar(out / "dataset" / "heldout.ddic", "DDIC", config);
    write_file(out / "dataset" / "truth.ddgt", encode_truth(truth));
    sidecar(out / "dataset" / "truth.ddgt", "DDGT", config);
}

DismResult cmd_dism(const ExperimentConfig& config, const fs::path& out) {
    validate(config);
    echo_config(config, out);
    const auto panels = load_panels(out, config.scenario.K);
    DismResult r = run_dism(panels, config.scenario.L, config.dism);
    write_file(out / "priors.ddps", encode_priors(r.priors));
    sidecar(out / "priors.ddps", "DDPS", config);
    std::ostringstream os;
    os << mask_summary(r.priors) << "bytes up: " << r.log.bytes_up << ", bytes down: " << r.log.bytes_down << "\n";
    write_text(out / "priors.txt", os.str());
    append_timing(out, "dism", r.log.wall_seconds);
    return r;
}

DctoResult cmd_dcto(const ExperimentConfig& config, const fs::path& out, bool resume) {
    validate(config);
    echo_config(config, out);
    const auto panels = load_panels(out, config.scenario.K);
    const PriorSet priors = load_priors(out, config);
    std::optional<DctoState> start;
    if (resume && fs::exists(out / "checkpoint.ddck")) start = decode_checkpoint(read_file(out / "checkpoint.ddck"));
    const fs::path ckpt = out / "checkpoint.ddck";
    DctoResult r = run_dcto(priors, panels, config.dcto, start,
                            [&](const DctoState& s) { write_file(ckpt, encode_checkpoint(s)); });
    if (r.rounds.empty()) write_file(ckpt, encode_checkpoint(r.state));
    sidecar(ckpt, "DDCK", config);
    write_file(out / "estimate.ddge", encode_estimate(r.estimate));
    sidecar(out / "estimate.ddge", "DDGE", config);

    // Resumed runs extend the logs of the interrupted run.
    const bool extend = start && start->next_round > 0;
    auto write_log = [&](const char* name, const std::string& csv) {
        const fs::path file = out / name;
        if (extend && fs::exists(file)) {
            const std::string body = csv.substr(csv.find('\n') + 1);
            write_text(file, read_text(file) + body);
        } else {
            write_text(file, csv);
        }
    };
    write_log("rounds.csv", round_log_csv(r.rounds));
    write_log("loss_curve.csv", loss_curve_csv(r.steps));
    for (const auto& log : r.rounds) append_timing(out, "round " + std::to_string(log.round), log.wall_seconds);
    return r;
}

EvalReport cmd_eval(const ExperimentConfig& config, const fs::path& out) {
    validate(config);
    const GraphEstimate est = decode_estimate_file(read_file(out / "estimate.ddge"));
    const GroundTruth truth = decode_truth(read_file(out / "dataset" / "truth.ddgt"));
    const auto held = read_panels(out / "dataset" / "heldout.ddic");
    EvalReport rep = fs::exists(out / "priors.ddps")
                         ? evaluate(est, truth, held, load_priors(out, config), config.scenario, config.shd_threshold)
                         : evaluate(est, truth, held, config.shd_threshold);
    write_text(out / "eval.csv", report_csv(rep));
    write_text(out / "eval_t.csv", per_t_csv(rep));
    write_text(out / "eval.txt", report_text(rep));
    return rep;
}

EvalReport cmd_pipeline(const ExperimentConfig& config, const fs::path& out, bool csv) {
    cmd_synth(config, out, csv);
    cmd_dism(config, out);
    cmd_dcto(config, out, false);
    return cmd_eval(config, out);
}

int run_cli(int argc, const char* const* argv) {
    CLI::App app{"Federated dynamic causal discovery: synthetic data, skeleton mining, trajectory training"};
    app.require_subcommand(1);
    unsigned threads = 0;
    app.add_option("--threads", threads, "Worker thread cap (0: hardware concurrency)");

    struct Common {
        std::string config_path, out;
        std::vector<std::string> sets;
        std::optional<std::uint64_t> seed;
        bool csv = false, resume = false;
    } common;
    auto add_common = [&](CLI::App* sub) {
        sub->add_option("-c,--config", common.config_path, "Experiment config (JSON)");
        sub->add_option("-o,--out", common.out, std::string("Output directory (default: $") + kOutputEnv + ")");
        sub->add_option("--set", common.sets, "Override a config field, e.g. --set dcto.R=20");
        sub->add_option("--seed", common.seed, "Experiment seed");
    };
    CLI::App* synth = app.add_subcommand("synth", "Generate client panels and ground truth");
    CLI::App* dism = app.add_subcommand("dism", "Mine skeleton priors from client statistics");
    CLI::App* dcto = app.add_subcommand("dcto", "Train the trajectory model with federated averaging");
    CLI::App* eval = app.add_subcommand("eval", "Score the estimate against ground truth");
    CLI::App* pipe = app.add_subcommand("pipeline", "synth, dism, dcto and eval in sequence");
    for (auto* s : {synth, dism, dcto, eval, pipe}) add_common(s);
    for (auto* s : {synth, pipe}) s->add_flag("--csv", common.csv, "Also export panels as CSV");
    dcto->add_flag("--resume", common.resume, "Continue from checkpoint.ddck");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return kExitConfig;
    }

    try {
        set_max_threads(threads);
        ExperimentConfig config;
        if (!common.config_path.empty()) config = load_config(common.config_path);
        fs::path out = resolve_output_dir(config, common.out);
        const bool reads_existing = !synth->parsed() && !pipe->parsed();
        if (common.config_path.empty() && reads_existing && fs::exists(out / "config.json"))
            config = load_config(out / "config.json");
        if (common.seed) {
            config.seed = *common.seed;
            sync_seeds(config);
        }
        for (const auto& s : common.sets) apply_override(config, s);
        validate(config);

        if (synth->parsed()) {
            cmd_synth(config, out, common.csv);
            std::cout << "wrote " << config.scenario.K << " client panels to " << (out / "dataset").string() << "\n";
        } else if (dism->parsed()) {
            const DismResult r = cmd_dism(config, out);
            std::cout << mask_summary(r.priors);
        } else if (dcto->parsed()) {
            const DctoResult r = cmd_dcto(config, out, common.resume);
            if (!r.rounds.empty())
                std::cout << "round " << r.rounds.back().round << ": global loss " << r.rounds.back().global_loss.total
                          << "\n";
        } else if (eval->parsed()) {
            std::cout << report_text(cmd_eval(config, out));
        } else if (pipe->parsed()) {
            std::cout << report_text(cmd_pipeline(config, out, common.csv));
        }
        return kExitOk;
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kExitConfig;
    } catch (const NumericError& e) {
        std::cerr << "numeric error: " << e.what() << "\n";
        return kExitNumeric;
    } catch (const IoError& e) {
        std::cerr << "io error: " << e.what() << "\n";
        return kExitIo;
    } catch (const fs::filesystem_error& e) {
        std::cerr << "io error: " << e.what() << "\n";
        return kExitIo;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}

}  // namespace fedtcd
