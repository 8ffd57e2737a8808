#include "fedtcd/config.hpp"

#include <initializer_list>
#include <limits>

#include <json.hpp>

#include "fedtcd/errors.hpp"
#include "fedtcd/io.hpp"

namespace fedtcd {

using nlohmann::json;

namespace {

constexpr std::size_t kOpenEnd = std::numeric_limits<std::size_t>::max();

// Rejects keys outside `allowed`.
void only(const json& j, const std::string& where, std::initializer_list<const char*> allowed) {
    if (!j.is_object()) throw ConfigError(where + ": expected an object");
    for (const auto& [key, _] : j.items()) {
        bool ok = false;
        for (const char* a : allowed) ok = ok || key == a;
        if (!ok) throw ConfigError(where + ": unknown key '" + key + "'");
    }
}

template <class T>
void read(const json& j, const char* key, T& out, const std::string& where) {
    if (!j.contains(key)) return;
    try {
        out = j.at(key).get<T>();
    } catch (const json::exception& e) {
        throw ConfigError(where + "." + key + ": " + e.what());
    }
}

json window_json(const Window& w) {
    return {{"begin", w.begin}, {"end", w.end == kOpenEnd ? json(nullptr) : json(w.end)}};
}

Window window_from(const json& j, const std::string& where) {
    only(j, where, {"begin", "end"});
    Window w;
    read(j, "begin", w.begin, where);
    if (j.contains("end") && !j.at("end").is_null()) read(j, "end", w.end, where);
    return w;
}

json scenario_json(const ScenarioSpec& s) {
    json j;
    j["D"] = s.D;
    j["T"] = s.T;
    j["L"] = s.L;
    j["K"] = s.K;
    j["n_k"] = s.n_k;
    j["sparsity"] = s.sparsity;
    j["lag_sparsity"] = s.lag_sparsity ? json(*s.lag_sparsity) : json(nullptr);
    j["dynamics"] = to_string(s.dynamics);
    j["noise_sigma"] = s.noise_sigma;
    j["edges"] = json::array();
    for (const auto& e : s.edges) j["edges"].push_back({{"from", e.from}, {"to", e.to}, {"coef", e.coef}});
    j["lag_edges"] = json::array();
    for (const auto& e : s.lag_edges)
        j["lag_edges"].push_back({{"lag", e.lag}, {"from", e.from}, {"to", e.to}, {"coef", e.coef}});
    j["confounded_edges"] = json::array();
    for (const auto& c : s.confounded_edges)
        j["confounded_edges"].push_back({{"from", c.from},
                                         {"to", c.to},
                                         {"strength", c.strength},
                                         {"load_from", c.load_from},
                                         {"load_to", c.load_to},
                                         {"offset_from", c.offset_from},
                                         {"offset_to", c.offset_to},
                                         {"window", window_json(c.window)}});
    j["inconsistent_edges"] = json::array();
    for (const auto& e : s.inconsistent_edges)
        j["inconsistent_edges"].push_back({{"lag", e.lag},
                                           {"from", e.from},
                                           {"to", e.to},
                                           {"zero_clients", e.zero_clients},
                                           {"window", window_json(e.window)}});
    if (s.noise_burst)
        j["noise_burst"] = {{"client", s.noise_burst->client},
                            {"window", window_json(s.noise_burst->window)},
                            {"amplitude", s.noise_burst->amplitude}};
    else
        j["noise_burst"] = nullptr;
    return j;
}

ScenarioSpec scenario_from(const json& j) {
    const std::string w = "scenario";
    only(j, w,
         {"D", "T", "L", "K", "n_k", "sparsity", "lag_sparsity", "dynamics", "noise_sigma", "edges", "lag_edges",
          "confounded_edges", "inconsistent_edges", "noise_burst"});
    ScenarioSpec s;
    read(j, "D", s.D, w);
    read(j, "T", s.T, w);
    read(j, "L", s.L, w);
    read(j, "K", s.K, w);
    if (j.contains("K") && !j.contains("n_k")) s.n_k.assign(s.K, s.n_k.empty() ? 300 : s.n_k.front());
    read(j, "n_k", s.n_k, w);
    read(j, "sparsity", s.sparsity, w);
    if (j.contains("lag_sparsity") && !j.at("lag_sparsity").is_null()) {
        double v = 0.0;
        read(j, "lag_sparsity", v, w);
        s.lag_sparsity = v;
    }
    if (j.contains("dynamics")) {
        std::string d;
        read(j, "dynamics", d, w);
        s.dynamics = dynamics_from_string(d);
    }
    read(j, "noise_sigma", s.noise_sigma, w);
    if (j.contains("edges"))
        for (const auto& e : j.at("edges")) {
            only(e, w + ".edges[]", {"from", "to", "coef"});
            Edge x;
            read(e, "from", x.from, w);
            read(e, "to", x.to, w);
            read(e, "coef", x.coef, w);
            s.edges.push_back(x);
        }
    if (j.contains("lag_edges"))
        for (const auto& e : j.at("lag_edges")) {
            only(e, w + ".lag_edges[]", {"lag", "from", "to", "coef"});
            LagEdge x;
            read(e, "lag", x.lag, w);
            read(e, "from", x.from, w);
            read(e, "to", x.to, w);
            read(e, "coef", x.coef, w);
            s.lag_edges.push_back(x);
        }
    if (j.contains("confounded_edges"))
        for (const auto& e : j.at("confounded_edges")) {
            const std::string where = w + ".confounded_edges[]";
            only(e, where, {"from", "to", "strength", "load_from", "load_to", "offset_from", "offset_to", "window"});
            ConfoundedEdge c;
            read(e, "from", c.from, where);
            read(e, "to", c.to, where);
            read(e, "strength", c.strength, where);
            read(e, "load_from", c.load_from, where);
            read(e, "load_to", c.load_to, where);
            read(e, "offset_from", c.offset_from, where);
            read(e, "offset_to", c.offset_to, where);
            if (e.contains("window")) c.window = window_from(e.at("window"), where + ".window");
            s.confounded_edges.push_back(c);
        }
    if (j.contains("inconsistent_edges"))
        for (const auto& e : j.at("inconsistent_edges")) {
            const std::string where = w + ".inconsistent_edges[]";
            only(e, where, {"lag", "from", "to", "zero_clients", "window"});
            InconsistentEdge x;
            read(e, "lag", x.lag, where);
            read(e, "from", x.from, where);
            read(e, "to", x.to, where);
            read(e, "zero_clients", x.zero_clients, where);
            if (e.contains("window")) x.window = window_from(e.at("window"), where + ".window");
            s.inconsistent_edges.push_back(x);
        }
    if (j.contains("noise_burst") && !j.at("noise_burst").is_null()) {
        const json& b = j.at("noise_burst");
        only(b, w + ".noise_burst", {"client", "window", "amplitude"});
        NoiseBurst nb;
        read(b, "client", nb.client, w);
        read(b, "amplitude", nb.amplitude, w);
        if (b.contains("window")) nb.window = window_from(b.at("window"), w + ".noise_burst.window");
        s.noise_burst = nb;
    }
    return s;
}

json threshold_json(const std::optional<double>& v) { return v ? json(*v) : json("permutation"); }

std::optional<double> threshold_from(const json& j, const char* key) {
    if (!j.contains(key)) return std::nullopt;
    const json& v = j.at(key);
    if (v.is_string() && v.get<std::string>() == "permutation") return std::nullopt;
    if (v.is_number()) return v.get<double>();
    throw ConfigError(std::string("dism.") + key + ": expected a number or \"permutation\"");
}

json to_json_doc(const ExperimentConfig& c) {
    json j;
    j["seed"] = c.seed;
    j["output_dir"] = c.output_dir;
    j["scenario"] = scenario_json(c.scenario);
    const DismConfig& d = c.dism;
    j["dism"] = {{"T_S", d.T_S},
                 {"h", d.h},
                 {"sigma", d.sigma},
                 {"delta_hard", threshold_json(d.delta_hard)},
                 {"delta_local", threshold_json(d.delta_local)},
                 {"ridge_scale", d.ridge_scale},
                 {"null_permutations", d.null_permutations},
                 {"null_quantile", d.null_quantile},
                 {"surrogate", d.use_surrogate}};
    const DctoConfig& t = c.dcto;
    j["dcto"] = {{"R", t.R},
                 {"E", t.E},
                 {"eta", t.eta},
                 {"lambda_W", t.lambdas.W},
                 {"lambda_A", t.lambdas.A},
                 {"lambda_DAG", t.lambdas.DAG},
                 {"m", t.m},
                 {"w_enc", t.w_enc}};
    j["eval"] = {{"shd_threshold", c.shd_threshold}};
    return j;
}

ExperimentConfig from_json_doc(const json& j) {
    only(j, "config", {"seed", "output_dir", "scenario", "dism", "dcto", "eval"});
    ExperimentConfig c;
    read(j, "seed", c.seed, "config");
    read(j, "output_dir", c.output_dir, "config");
    if (j.contains("scenario")) c.scenario = scenario_from(j.at("scenario"));
    if (j.contains("dism")) {
        const json& d = j.at("dism");
        only(d, "dism",
             {"T_S", "h", "sigma", "delta_hard", "delta_local", "ridge_scale", "null_permutations", "null_quantile",
              "surrogate"});
        read(d, "T_S", c.dism.T_S, "dism");
        read(d, "h", c.dism.h, "dism");
        read(d, "sigma", c.dism.sigma, "dism");
        c.dism.delta_hard = threshold_from(d, "delta_hard");
        c.dism.delta_local = threshold_from(d, "delta_local");
        read(d, "ridge_scale", c.dism.ridge_scale, "dism");
        read(d, "null_permutations", c.dism.null_permutations, "dism");
        read(d, "null_quantile", c.dism.null_quantile, "dism");
        read(d, "surrogate", c.dism.use_surrogate, "dism");
    }
    if (j.contains("dcto")) {
        const json& d = j.at("dcto");
        only(d, "dcto", {"R", "E", "eta", "lambda_W", "lambda_A", "lambda_DAG", "m", "w_enc"});
        read(d, "R", c.dcto.R, "dcto");
        read(d, "E", c.dcto.E, "dcto");
        read(d, "eta", c.dcto.eta, "dcto");
        read(d, "lambda_W", c.dcto.lambdas.W, "dcto");
        read(d, "lambda_A", c.dcto.lambdas.A, "dcto");
        read(d, "lambda_DAG", c.dcto.lambdas.DAG, "dcto");
        read(d, "m", c.dcto.m, "dcto");
        read(d, "w_enc", c.dcto.w_enc, "dcto");
    }
    if (j.contains("eval")) {
        only(j.at("eval"), "eval", {"shd_threshold"});
        read(j.at("eval"), "shd_threshold", c.shd_threshold, "eval");
    }
    sync_seeds(c);
    validate(c);
    return c;
}

}  // namespace

bool operator==(const ExperimentConfig& a, const ExperimentConfig& b) { return to_json_doc(a) == to_json_doc(b); }

void sync_seeds(ExperimentConfig& c) {
    c.scenario.seed = c.seed;
    c.dism.seed = c.seed;
    c.dcto.seed = c.seed;
}

void validate(const ExperimentConfig& c) {
    validate(c.scenario);
    auto require = [](bool ok, const char* msg) {
        if (!ok) throw ConfigError(msg);
    };
    require(c.dism.T_S >= 1, "dism.T_S must be >= 1");
    require(c.dism.h >= 2, "dism.h must be >= 2");
    require(c.dism.sigma > 0.0, "dism.sigma must be positive");
    require(c.dism.ridge_scale > 0.0, "dism.ridge_scale must be positive");
    require(c.dism.null_permutations >= 1, "dism.null_permutations must be >= 1");
    require(c.dism.null_quantile > 0.0 && c.dism.null_quantile < 1.0, "dism.null_quantile must lie in (0, 1)");
    require(c.dcto.R >= 1, "dcto.R must be >= 1");
    require(c.dcto.E >= 1, "dcto.E must be >= 1");
    require(c.dcto.eta >= 0.0, "dcto.eta must be >= 0");
    require(c.dcto.lambdas.W >= 0.0 && c.dcto.lambdas.A >= 0.0 && c.dcto.lambdas.DAG >= 0.0,
            "dcto lambdas must be >= 0");
    require(c.dcto.m >= 1, "dcto.m must be >= 1");
    require(c.dcto.w_enc <= c.scenario.T, "dcto.w_enc must not exceed T");
    require(c.shd_threshold >= 0.0, "eval.shd_threshold must be >= 0");
}

ExperimentConfig config_from_json(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::parse_error& e) {
        throw ConfigError(std::string("config is not valid JSON: ") + e.what());
    }
    return from_json_doc(j);
}

std::string config_to_json(const ExperimentConfig& c) { return to_json_doc(c).dump(2) + "\n"; }

ExperimentConfig load_config(const std::filesystem::path& path) { return config_from_json(read_text(path)); }

void apply_override(ExperimentConfig& c, const std::string& assignment) {
    const auto eq = assignment.find('=');
    if (eq == std::string::npos || eq == 0) throw ConfigError("override '" + assignment + "' is not key=value");
    std::string pointer = "/" + assignment.substr(0, eq);
    for (auto& ch : pointer)
        if (ch == '.') ch = '/';
    const std::string raw = assignment.substr(eq + 1);
    json value;
    try {
        value = json::parse(raw);
    } catch (const json::parse_error&) {
        value = raw;
    }
    json doc = to_json_doc(c);
    const json::json_pointer ptr(pointer);
    try {
        if (!doc.contains(ptr)) throw ConfigError("override: unknown field '" + assignment.substr(0, eq) + "'");
        doc[ptr] = value;
    } catch (const json::exception& e) {
        throw ConfigError("override '" + assignment + "': " + e.what());
    }
    c = from_json_doc(doc);
}

}  // namespace fedtcd
