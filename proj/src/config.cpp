#include "knt/config.hpp"

#include <cmath>
#include <fstream>
#include <set>

#include "knt/errors.hpp"
#include "knt/io_store.hpp"

namespace knt {

namespace {

using json = nlohmann::json;

std::string join(const std::string& path, const std::string& key) { return path.empty() ? key : path + "." + key; }

// Typed reads from one JSON object; remembers which keys were consumed so the
// rest can be rejected as unknown.
class Section {
public:
    Section(const json& doc, std::string path) : doc_(doc), path_(std::move(path)) {
        if (!doc_.is_object()) throw ConfigError(path_.empty() ? "<root>" : path_, "expected an object");
    }

    const json* find(const std::string& key) {
        seen_.insert(key);
        auto it = doc_.find(key);
        return it == doc_.end() || it->is_null() ? nullptr : &*it;
    }

    std::string field(const std::string& key) const { return join(path_, key); }

    void read(const std::string& key, std::size_t& out) {
        if (const json* v = find(key)) out = as_count(*v, field(key));
    }
    void read(const std::string& key, std::uint64_t& out, bool) {
        if (const json* v = find(key)) out = as_u64(*v, field(key));
    }
    void read(const std::string& key, double& out) {
        if (const json* v = find(key)) out = as_double(*v, field(key));
    }
    void read(const std::string& key, bool& out) {
        if (const json* v = find(key)) {
            if (!v->is_boolean()) throw ConfigError(field(key), "expected true or false");
            out = v->get<bool>();
        }
    }
    void read(const std::string& key, std::optional<std::size_t>& out) {
        if (const json* v = find(key)) out = as_count(*v, field(key));
    }
    void read(const std::string& key, std::optional<double>& out) {
        if (const json* v = find(key)) out = as_double(*v, field(key));
    }
    std::optional<std::string> string(const std::string& key) {
        const json* v = find(key);
        if (!v) return std::nullopt;
        if (!v->is_string()) throw ConfigError(field(key), "expected a string");
        return v->get<std::string>();
    }
    template <typename T, typename F>
    std::optional<std::vector<T>> list(const std::string& key, F convert) {
        const json* v = find(key);
        if (!v) return std::nullopt;
        if (!v->is_array()) throw ConfigError(field(key), "expected an array");
        std::vector<T> out;
        for (std::size_t i = 0; i < v->size(); ++i) {
            out.push_back(convert((*v)[i], field(key) + "[" + std::to_string(i) + "]"));
        }
        return out;
    }

    void finish() const {
        for (auto it = doc_.begin(); it != doc_.end(); ++it) {
            if (!seen_.count(it.key())) throw ConfigError(field(it.key()), "unknown field");
        }
    }

    static std::size_t as_count(const json& v, const std::string& f) {
        if (!v.is_number_integer() || v.get<std::int64_t>() < 0) throw ConfigError(f, "expected a non-negative integer");
        return v.get<std::size_t>();
    }
    static std::uint64_t as_u64(const json& v, const std::string& f) {
        if (v.is_number_unsigned()) return v.get<std::uint64_t>();
        if (v.is_number_integer() && v.get<std::int64_t>() >= 0) return v.get<std::uint64_t>();
        throw ConfigError(f, "expected a non-negative integer");
    }
    static double as_double(const json& v, const std::string& f) {
        if (!v.is_number()) throw ConfigError(f, "expected a number");
        return v.get<double>();
    }

private:
    const json& doc_;
    std::string path_;
    std::set<std::string> seen_;
};

template <typename F>
auto wrap(const std::string& field, F fn) -> decltype(fn()) {
    try {
        return fn();
    } catch (const InvalidArgument& e) {
        throw ConfigError(field, e.what());
    }
}

void parse_dataset(const json& doc, ExperimentConfig& cfg) {
    Section s(doc, "dataset");
    if (auto m = s.string("manifest")) cfg.manifest = *m;
    if (const json* synth = s.find("synth")) {
        Section y(*synth, "dataset.synth");
        SynthConfig& c = cfg.synth;
        y.read("num_patients", c.num_patients);
        y.read("samples_per_patient", c.samples_per_patient);
        y.read("h", c.height);
        y.read("w", c.width);
        y.read("c", c.channels);
        y.read("num_labels", c.num_labels);
        y.read("identity_strength", c.identity_strength);
        y.read("label_strength", c.label_strength);
        y.read("noise_std", c.noise_std);
        y.read("label_prior", c.label_prior);
        y.read("seed", c.seed, true);
        y.finish();
    }
    s.finish();
}

void parse_defense(const json& doc, ExperimentConfig& cfg) {
    Section s(doc, "defense");
    DefenseSpec& d = cfg.defense;
    if (auto m = s.string("method")) d.method = wrap("defense.method", [&] { return parse_method(*m); });
    if (auto k = s.string("key")) cfg.key = wrap("defense.key", [&] { return MasterKey::from_hex(*k); });
    s.read("L", d.layers);
    s.read("d", d.d);
    s.read("weight_std", d.weight_std);
    s.read("sigma", d.sigma);
    s.read("epsilon", d.dp.epsilon);
    s.read("delta", d.dp.delta);
    s.read("clip_quantile", d.dp.clip_quantile);
    s.finish();
}

void parse_metrics(const json& doc, ExperimentConfig& cfg) {
    Section s(doc, "metrics");
    EvalProtocol& p = cfg.protocol;
    if (auto m = s.string("mode")) p.pairs.mode = wrap("metrics.mode", [&] { return parse_similarity_mode(*m); });
    s.read("n_same", p.pairs.n_same);
    s.read("n_diff", p.pairs.n_diff);
    s.read("train_fraction", p.train_fraction);
    s.read("probe", p.run_probe);
    s.read("probe_epochs", p.probe.epochs);
    s.read("probe_lr", p.probe.learning_rate);
    s.read("probe_seeds", p.probe_seeds);
    s.finish();
}

void parse_attack(const json& doc, ExperimentConfig& cfg) {
    Section s(doc, "attack");
    AttackSetup& a = cfg.attack;
    if (auto k = s.string("kind")) a.kind = wrap("attack.kind", [&] { return parse_attack_kind(*k); });
    s.read("steps", a.grad.steps);
    s.read("restarts", a.grad.restarts);
    s.read("lambda", a.grad.lambda);
    s.read("learning_rate", a.grad.learning_rate);
    s.read("init_scale", a.init_scale);
    s.read("nonnegative", a.grad.nonnegative);
    s.read("seed", a.grad.seed, true);
    s.read("num_samples", a.num_samples);
    s.read("ridge", a.ridge);
    s.finish();
}

void parse_sweep(const json& doc, ExperimentConfig& cfg) {
    Section s(doc, "sweep");
    if (auto v = s.list<std::size_t>("L", Section::as_count)) cfg.sweep_layers = *v;
    if (auto v = s.list<std::size_t>("d", Section::as_count)) cfg.sweep_dims = *v;
    if (auto v = s.list<Method>("methods", [](const json& x, const std::string& f) {
            if (!x.is_string()) throw ConfigError(f, "expected a method name");
            return wrap(f, [&] { return parse_method(x.get<std::string>()); });
        })) {
        cfg.sweep_methods = *v;
    }
    s.finish();
}

void parse_seeds(const json& doc, ExperimentConfig& cfg) {
    Section s(doc, "seeds");
    if (auto v = s.list<std::uint64_t>("key_seeds", Section::as_u64)) cfg.key_seeds = *v;
    if (auto v = s.list<std::uint64_t>("eval_seeds", Section::as_u64)) cfg.eval_seeds = *v;
    s.finish();
}

}  // namespace

void ExperimentConfig::validate() const {
    auto check = [](const std::string& field, auto fn) {
        try {
            fn();
        } catch (const InvalidArgument& e) {
            throw ConfigError(field, e.what());
        }
    };
    if (!manifest) check("dataset.synth", [&] { synth.validate(); });
    // Checked whatever the method: sweeps can reach the noise and DP baselines.
    if (!(defense.dp.epsilon > 0.0)) throw ConfigError("defense.epsilon", "must be > 0");
    if (!(defense.dp.delta > 0.0 && defense.dp.delta < 1.0)) throw ConfigError("defense.delta", "must lie in (0, 1)");
    if (!(defense.dp.clip_quantile > 0.0 && defense.dp.clip_quantile <= 1.0)) {
        throw ConfigError("defense.clip_quantile", "must lie in (0, 1]");
    }
    if (!(defense.sigma >= 0.0 && std::isfinite(defense.sigma))) throw ConfigError("defense.sigma", "must be finite and >= 0");
    if (defense.weight_std && !(*defense.weight_std >= 0.0)) throw ConfigError("defense.weight_std", "must be >= 0");
    check("defense", [&] { defense.validate(); });
    if (defense.d && *defense.d == 0) throw ConfigError("defense.d", "must be >= 1");
    if (defense.layers == 0) throw ConfigError("defense.L", "must be >= 1");
    if (!(protocol.train_fraction > 0.0 && protocol.train_fraction < 1.0)) {
        throw ConfigError("metrics.train_fraction", "must lie strictly between 0 and 1");
    }
    if (protocol.pairs.n_same == 0 || protocol.pairs.n_diff == 0) throw ConfigError("metrics.n_same", "pair counts must be >= 1");
    if (protocol.probe.epochs == 0) throw ConfigError("metrics.probe_epochs", "must be >= 1");
    if (!(protocol.probe.learning_rate > 0.0)) throw ConfigError("metrics.probe_lr", "must be > 0");
    check("attack", [&] { attack.grad.validate(); });
    if (attack.init_scale && !(*attack.init_scale >= 0.0)) throw ConfigError("attack.init_scale", "must be >= 0");
    if (attack.ridge && !(*attack.ridge >= 0.0)) throw ConfigError("attack.ridge", "must be >= 0");
    if (attack.num_samples == 0) throw ConfigError("attack.num_samples", "must be >= 1");
    if (key_seeds.empty()) throw ConfigError("seeds.key_seeds", "needs at least one seed");
    if (eval_seeds.empty()) throw ConfigError("seeds.eval_seeds", "needs at least one seed");
    if (sweep_layers.empty()) throw ConfigError("sweep.L", "needs at least one depth");
    for (std::size_t i = 0; i < sweep_layers.size(); ++i) {
        if (sweep_layers[i] == 0) throw ConfigError("sweep.L[" + std::to_string(i) + "]", "must be >= 1");
    }
    for (std::size_t i = 0; i < sweep_dims.size(); ++i) {
        if (sweep_dims[i] == 0) throw ConfigError("sweep.d[" + std::to_string(i) + "]", "must be >= 1");
    }
    if (sweep_methods.empty()) throw ConfigError("sweep.methods", "needs at least one method");
    if (threads < 0) throw ConfigError("threads", "must be >= 0");
}

ExperimentConfig parse_config(const nlohmann::json& doc) {
    ExperimentConfig cfg;
    Section root(doc, "");
    if (const json* v = root.find("dataset")) parse_dataset(*v, cfg);
    if (const json* v = root.find("defense")) parse_defense(*v, cfg);
    if (const json* v = root.find("metrics")) parse_metrics(*v, cfg);
    if (const json* v = root.find("attack")) parse_attack(*v, cfg);
    if (const json* v = root.find("sweep")) parse_sweep(*v, cfg);
    if (const json* v = root.find("seeds")) parse_seeds(*v, cfg);
    if (auto o = root.string("output")) cfg.out_dir = *o;
    if (const json* v = root.find("threads")) {
        if (!v->is_number_integer()) throw ConfigError("threads", "expected an integer");
        cfg.threads = v->get<int>();
    }
    root.finish();
    cfg.validate();
    return cfg;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("--config", "cannot open " + path.string());
    json doc;
    try {
        in >> doc;
    } catch (const json::exception& e) {
        throw ConfigError("--config", std::string("not valid JSON: ") + e.what());
    }
    ExperimentConfig cfg = parse_config(doc);
    if (cfg.manifest && cfg.manifest->is_relative()) cfg.manifest = path.parent_path() / *cfg.manifest;
    return cfg;
}

nlohmann::ordered_json echo_config(const ExperimentConfig& cfg) {
    nlohmann::ordered_json j;
    auto& ds = j["dataset"];
    if (cfg.manifest) {
        ds["manifest"] = cfg.manifest->string();
    } else {
        const SynthConfig& c = cfg.synth;
        ds["synth"] = {{"num_patients", c.num_patients}, {"samples_per_patient", c.samples_per_patient},
                       {"h", c.height},                  {"w", c.width},
                       {"c", c.channels},                {"num_labels", c.num_labels},
                       {"identity_strength", c.identity_strength}, {"label_strength", c.label_strength},
                       {"noise_std", c.noise_std},       {"label_prior", c.label_prior},
                       {"seed", c.seed}};
    }
    const DefenseSpec& d = cfg.defense;
    auto& df = j["defense"];
    df["method"] = to_string(d.method);
    df["key_fingerprint"] = cfg.key ? nlohmann::ordered_json(cfg.key->fingerprint()) : nlohmann::ordered_json(nullptr);
    df["L"] = d.layers;
    df["d"] = d.d ? nlohmann::ordered_json(*d.d) : nlohmann::ordered_json(nullptr);
    df["weight_std"] = d.weight_std ? nlohmann::ordered_json(*d.weight_std) : nlohmann::ordered_json(nullptr);
    df["sigma"] = d.sigma;
    df["epsilon"] = d.dp.epsilon;
    df["delta"] = d.dp.delta;
    df["clip_quantile"] = d.dp.clip_quantile;
    const EvalProtocol& p = cfg.protocol;
    j["metrics"] = {{"mode", to_string(p.pairs.mode)}, {"n_same", p.pairs.n_same},
                    {"n_diff", p.pairs.n_diff},        {"train_fraction", p.train_fraction},
                    {"probe", p.run_probe},            {"probe_epochs", p.probe.epochs},
                    {"probe_lr", p.probe.learning_rate}, {"probe_seeds", p.probe_seeds}};
    const AttackSetup& a = cfg.attack;
    j["attack"] = {{"kind", to_string(a.kind)},
                   {"steps", a.grad.steps},
                   {"restarts", a.grad.restarts},
                   {"lambda", a.grad.lambda},
                   {"learning_rate", a.grad.learning_rate},
                   {"init_scale", a.init_scale ? nlohmann::ordered_json(*a.init_scale) : nlohmann::ordered_json(nullptr)},
                   {"nonnegative", a.grad.nonnegative},
                   {"seed", a.grad.seed},
                   {"num_samples", a.num_samples},
                   {"ridge", a.ridge ? nlohmann::ordered_json(*a.ridge) : nlohmann::ordered_json(nullptr)}};
    std::vector<std::string> methods;
    for (Method m : cfg.sweep_methods) methods.push_back(to_string(m));
    j["sweep"] = {{"L", cfg.sweep_layers}, {"d", cfg.sweep_dims}, {"methods", methods}};
    j["seeds"] = {{"key_seeds", cfg.key_seeds}, {"eval_seeds", cfg.eval_seeds}};
    j["output"] = cfg.out_dir.string();
    j["threads"] = cfg.threads;
    return j;
}

Dataset load_dataset(const ExperimentConfig& cfg) {
    if (cfg.manifest) return read_dataset(*cfg.manifest);
    return generate(cfg.synth);
}

EvalProtocol protocol_for_seed(const EvalProtocol& base, std::uint64_t eval_seed) {
    EvalProtocol p = base;
    p.pairs.seed = eval_seed;
    p.split_seed = eval_seed;
    p.probe.seed = eval_seed;
    return p;
}

}  // namespace knt
