// knt: command-line runner for the keyed nonlinear transform experiments.

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <omp.h>

#include <CLI11.hpp>

#include "knt/config.hpp"
#include "knt/errors.hpp"
#include "knt/experiment.hpp"
#include "knt/io_store.hpp"

namespace fs = std::filesystem;
using knt::ordered_json;

namespace {

constexpr const char* kVersion = "1.0.0";

enum Exit { kOk = 0, kFailure = 1, kUsage = 2, kData = 3, kNumerical = 4 };

struct Flags {
    std::string config;
    std::string key;
    std::string method;
    std::vector<std::size_t> d;
    std::vector<std::size_t> layers;
    std::optional<double> sigma;
    std::optional<double> epsilon;
    std::optional<double> delta;
    std::vector<std::uint64_t> seeds;
    std::string out;
    std::optional<int> threads;
    std::string mode;

    // Subcommand specific.
    std::string input;
    std::string attack_kind;
    std::optional<std::size_t> steps;
    std::optional<std::size_t> restarts;
    std::optional<std::size_t> samples;
    bool nonnegative = false;
    std::size_t channels = 512;
    std::size_t reps = 1000;
};

std::size_t single(const std::vector<std::size_t>& v, const char* flag) {
    if (v.size() > 1) throw knt::ConfigError(flag, "several values are only accepted by sweep");
    return v.front();
}

knt::ExperimentConfig build_config(const Flags& f, bool allow_lists) {
    knt::ExperimentConfig cfg = f.config.empty() ? knt::ExperimentConfig{} : knt::load_config(f.config);
    if (!f.key.empty()) {
        cfg.key = knt::MasterKey::from_hex(f.key);
    } else if (const char* env = std::getenv("KNT_KEY"); env && *env) {
        try {
            cfg.key = knt::MasterKey::from_hex(env);
        } catch (const knt::InvalidArgument& e) {
            throw knt::ConfigError("KNT_KEY", e.what());
        }
    }
    if (!f.method.empty()) {
        try {
            cfg.defense.method = knt::parse_method(f.method);
        } catch (const knt::InvalidArgument& e) {
            throw knt::ConfigError("--method", e.what());
        }
    }
    if (!f.d.empty()) {
        if (allow_lists) cfg.sweep_dims = f.d;
        else cfg.defense.d = single(f.d, "--d");
    }
    if (!f.layers.empty()) {
        if (allow_lists) cfg.sweep_layers = f.layers;
        else cfg.defense.layers = single(f.layers, "--L");
    }
    if (f.sigma) cfg.defense.sigma = *f.sigma;
    if (f.epsilon) cfg.defense.dp.epsilon = *f.epsilon;
    if (f.delta) cfg.defense.dp.delta = *f.delta;
    if (!f.seeds.empty()) cfg.key_seeds = f.seeds;
    if (!f.out.empty()) cfg.out_dir = f.out;
    if (f.threads) cfg.threads = *f.threads;
    if (!f.mode.empty()) {
        try {
            cfg.protocol.pairs.mode = knt::parse_similarity_mode(f.mode);
        } catch (const knt::InvalidArgument& e) {
            throw knt::ConfigError("--mode", e.what());
        }
    }
    if (!f.attack_kind.empty()) {
        try {
            cfg.attack.kind = knt::parse_attack_kind(f.attack_kind);
        } catch (const knt::InvalidArgument& e) {
            throw knt::ConfigError("--attack", e.what());
        }
    }
    if (f.steps) cfg.attack.grad.steps = *f.steps;
    if (f.restarts) cfg.attack.grad.restarts = *f.restarts;
    if (f.samples) cfg.attack.num_samples = *f.samples;
    if (f.nonnegative) cfg.attack.grad.nonnegative = true;
    if (!f.input.empty()) cfg.manifest = f.input;
    cfg.validate();
    if (cfg.threads > 0) omp_set_num_threads(cfg.threads);
    return cfg;
}

ordered_json provenance(const std::string& command, const knt::ExperimentConfig& cfg, double seconds) {
    ordered_json p;
    p["tool"] = "knt";
    p["version"] = kVersion;
    p["command"] = command;
    p["config"] = knt::echo_config(cfg);
    p["wall_seconds"] = seconds;
    p["threads"] = cfg.threads > 0 ? cfg.threads : omp_get_max_threads();
    return p;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

void print_metrics(const std::vector<knt::MetricsReport>& rows) {
    std::printf("%-12s %5s %3s %9s %10s %8s %8s  %s\n", "method", "d", "L", "key_seed", "verif_auc", "top1", "cls_auc",
                "key");
    for (const auto& r : rows) {
        const std::string cls = r.classification_auc ? knt::format_double(*r.classification_auc).substr(0, 6) : "-";
        std::printf("%-12s %5zu %3zu %9llu %10.4f %8.4f %8s  %s\n", r.method.c_str(), r.d, r.layers,
                    static_cast<unsigned long long>(r.key_seed), r.verification_auc, r.top1, cls.c_str(),
                    r.key_fingerprint.empty() ? "-" : r.key_fingerprint.c_str());
    }
}

void print_summary(const ordered_json& summary) {
    for (const auto& row : summary) {
        std::printf("%-12s d=%-4zu L=%zu  verif %.4f +- %.4f  top1 %.4f +- %.4f", row["method"].get<std::string>().c_str(),
                    row["d"].get<std::size_t>(), row["L"].get<std::size_t>(), row["verif_auc_mean"].get<double>(),
                    row["verif_auc_std"].get<double>(), row["top1_mean"].get<double>(), row["top1_std"].get<double>());
        if (!row["cls_auc_mean"].is_null()) {
            std::printf("  cls %.4f +- %.4f", row["cls_auc_mean"].get<double>(), row["cls_auc_std"].get<double>());
        }
        std::printf("  (n=%zu)\n", row["seeds"].get<std::size_t>());
    }
}

// Evaluates the configured method over every (eval seed, key seed).
int run_metrics(const std::string& command, const knt::ExperimentConfig& cfg, bool with_probe) {
    const auto t0 = std::chrono::steady_clock::now();
    const knt::Dataset data = knt::load_dataset(cfg);
    std::vector<knt::MetricsReport> rows;
    const auto key_seeds = knt::is_randomized(cfg.defense.method) ? cfg.key_seeds : std::vector<std::uint64_t>{0};
    for (std::uint64_t es : cfg.eval_seeds) {
        knt::EvalProtocol p = knt::protocol_for_seed(cfg.protocol, es);
        p.run_probe = with_probe && cfg.protocol.run_probe;
        std::vector<knt::SweepCell> cells;
        for (std::uint64_t ks : key_seeds) cells.push_back({cfg.defense, ks});
        auto part = knt::run_cells(data, cells, cfg.key, p, cfg.threads);
        for (auto& r : part) {
            r.experiment_id = command + "/" + r.method + "/e" + std::to_string(es);
            rows.push_back(std::move(r));
        }
    }
    const auto summary = knt::summarize(rows);
    knt::write_report(cfg.out_dir / "report.json", cfg.out_dir / "results.csv", rows,
                      provenance(command, cfg, seconds_since(t0)), summary);
    print_metrics(rows);
    print_summary(summary);
    std::printf("wrote %s\n", (cfg.out_dir / "report.json").string().c_str());
    return kOk;
}

int cmd_gen(const knt::ExperimentConfig& cfg) {
    const auto t0 = std::chrono::steady_clock::now();
    knt::Dataset data = knt::generate(cfg.synth);
    const auto manifest = knt::write_dataset(cfg.out_dir, "dataset", data);
    ordered_json prov = provenance("gen", cfg, seconds_since(t0));
    std::ofstream(cfg.out_dir / "gen.json") << prov.dump(2) << '\n';
    std::printf("generated %zu samples (%zu patients) -> %s\n", data.size(), cfg.synth.num_patients,
                manifest.string().c_str());
    std::printf("tensor_digest=%s\n", knt::file_digest(cfg.out_dir / "dataset.kntf").c_str());
    return kOk;
}

int cmd_transform(const knt::ExperimentConfig& cfg) {
    const auto t0 = std::chrono::steady_clock::now();
    const knt::Dataset data = knt::load_dataset(cfg);
    if (data.size() == 0) throw knt::InvalidDataset("empty dataset");
    const knt::MasterKey key = cfg.key ? *cfg.key : knt::key_for_seed(std::nullopt, cfg.key_seeds.front());
    std::vector<double> norms;
    for (const auto& f : data.features) norms.push_back(knt::l2_norm(f));
    const auto& g0 = data.features.front();
    const knt::Defense defense(cfg.defense, key, g0.height(), g0.width(), g0.channels(), norms);
    auto out = defense.apply(data.features, data.sample_ids, cfg.threads);
    const knt::Dataset released = data.with_features(std::move(out));
    knt::write_dataset(cfg.out_dir, "transformed", released);
    ordered_json prov = provenance("transform", cfg, seconds_since(t0));
    prov["key_fingerprint"] = defense.key_fingerprint();
    prov["tensor_digest"] = knt::file_digest(cfg.out_dir / "transformed.kntf");
    std::ofstream(cfg.out_dir / "transform.json") << prov.dump(2) << '\n';
    std::printf("method=%s d=%zu key=%s samples=%zu\n", knt::to_string(cfg.defense.method).c_str(),
                defense.output_channels(), defense.key_fingerprint().empty() ? "-" : defense.key_fingerprint().c_str(),
                released.size());
    std::printf("tensor_digest=%s\n", prov["tensor_digest"].get<std::string>().c_str());
    return kOk;
}

int cmd_attack(const knt::ExperimentConfig& cfg) {
    const auto t0 = std::chrono::steady_clock::now();
    const knt::Dataset data = knt::load_dataset(cfg);
    knt::AttackSetup setup = cfg.attack;
    setup.spec = cfg.defense;
    knt::AttackReport report = knt::run_attack(data, setup, cfg.key_seeds, cfg.key, cfg.protocol, cfg.threads);
    report.experiment_id = "attack/" + report.attack_kind;
    if (setup.kind == knt::AttackKind::grad && setup.grad.nonnegative) report.flags.push_back("nonnegative_projection");
    knt::write_report(cfg.out_dir / "attack_report.json", cfg.out_dir / "attack_results.csv", report,
                      provenance("attack", cfg, seconds_since(t0)));
    for (const auto& row : report.per_seed) {
        std::printf("%s d=%zu L=%zu key_seed=%llu key=%s cos=%.4f +- %.4f top1=%.4f ms/sample=%.1f\n",
                    report.attack_kind.c_str(), report.d, report.layers, static_cast<unsigned long long>(row.key_seed),
                    row.key_fingerprint.c_str(), row.eval.mean_cosine, row.eval.std_cosine, row.eval.top1,
                    row.ms_per_sample);
    }
    std::printf("mean over %zu keys: cos %.4f +- %.4f, top1 %.4f +- %.4f\n", report.per_seed.size(), report.mean_cosine,
                report.std_cosine, report.top1_mean, report.top1_std);
    return kOk;
}

int cmd_dp(knt::ExperimentConfig cfg) {
    cfg.defense.method = knt::Method::dp;
    const double unit = knt::dp_sigma(cfg.defense.dp.epsilon, cfg.defense.dp.delta, 1.0);
    std::printf("epsilon=%g delta=%g sigma per unit sensitivity=%.6f\n", cfg.defense.dp.epsilon, cfg.defense.dp.delta,
                unit);
    if (cfg.defense.dp.epsilon > 1.0) std::printf("note: epsilon > 1 is outside the classical mechanism's guarantee\n");
    return run_metrics("dp", cfg, true);
}

int cmd_bench(const knt::ExperimentConfig& cfg, const Flags& f) {
    knt::TransformConfig tc = cfg.defense.transform_config();
    if (!tc.dim) tc.dim = f.channels;
    const auto stats = knt::bench_transform(7, 7, f.channels, tc, f.reps);
    ordered_json doc;
    doc["kind"] = "bench";
    doc["provenance"] = provenance("bench", cfg, 0.0);
    doc["geometry"] = {{"h", 7}, {"w", 7}, {"c", f.channels}, {"d", *tc.dim}, {"L", tc.layers}};
    doc["reps"] = stats.reps;
    doc["median_ms"] = stats.median_ms;
    doc["p10_ms"] = stats.p10_ms;
    doc["p90_ms"] = stats.p90_ms;
    doc["reference_ms"] = 0.15;
    fs::create_directories(cfg.out_dir);
    std::ofstream(cfg.out_dir / "bench.json") << doc.dump(2) << '\n';
    std::printf("7x7x%zu d=%zu L=%zu single-threaded: median %.4f ms (p10 %.4f, p90 %.4f, %zu reps); reference 0.15 ms\n",
                f.channels, *tc.dim, tc.layers, stats.median_ms, stats.p10_ms, stats.p90_ms, stats.reps);
    return kOk;
}

int cmd_sweep(const knt::ExperimentConfig& cfg) {
    const auto t0 = std::chrono::steady_clock::now();
    const knt::Dataset data = knt::load_dataset(cfg);
    if (data.size() == 0) throw knt::InvalidDataset("empty dataset");
    const std::size_t c = data.features.front().channels();
    const std::vector<std::size_t> dims = cfg.sweep_dims.empty() ? std::vector<std::size_t>{c} : cfg.sweep_dims;
    std::vector<knt::MetricsReport> rows;
    for (std::uint64_t es : cfg.eval_seeds) {
        const knt::EvalProtocol p = knt::protocol_for_seed(cfg.protocol, es);
        std::vector<knt::SweepCell> cells;
        for (knt::Method m : cfg.sweep_methods) {
            for (std::size_t layers : cfg.sweep_layers) {
                for (std::size_t d : dims) {
                    knt::DefenseSpec spec = cfg.defense;
                    spec.method = m;
                    spec.layers = layers;
                    spec.d = d;
                    const auto seeds = knt::is_randomized(m) ? cfg.key_seeds : std::vector<std::uint64_t>{0};
                    for (std::uint64_t ks : seeds) cells.push_back({spec, ks});
                }
            }
        }
        auto part = knt::run_cells(data, cells, cfg.key, p, cfg.threads);
        for (auto& r : part) {
            r.experiment_id = "sweep/" + r.method + "/e" + std::to_string(es);
            rows.push_back(std::move(r));
        }
    }
    const auto summary = knt::summarize(rows);
    knt::write_report(cfg.out_dir / "report.json", cfg.out_dir / "results.csv", rows,
                      provenance("sweep", cfg, seconds_since(t0)), summary);
    print_summary(summary);
    std::printf("wrote %s\n", (cfg.out_dir / "results.csv").string().c_str());
    return kOk;
}

std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> out;
    std::string cur;
    bool quoted = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
        const char ch = line[i];
        if (quoted) {
            if (ch == '"' && i + 1 < line.size() && line[i + 1] == '"') {
                cur += '"';
                ++i;
            } else if (ch == '"') {
                quoted = false;
            } else {
                cur += ch;
            }
        } else if (ch == '"') {
            quoted = true;
        } else if (ch == ',') {
            out.push_back(cur);
            cur.clear();
        } else {
            cur += ch;
        }
    }
    out.push_back(cur);
    return out;
}

// Groups an existing results.csv by (method, d, L) and prints mean +- std.
int cmd_report(const knt::ExperimentConfig& cfg, const Flags& f) {
    const fs::path csv = f.input.empty() ? cfg.out_dir / "results.csv" : fs::path(f.input);
    std::ifstream in(csv);
    if (!in) throw knt::ConfigError("--in", "cannot open " + csv.string());
    std::string line;
    std::getline(in, line);
    const auto header = split_csv_line(line);
    if (header != knt::metrics_csv_columns()) throw knt::InvalidDataset(csv.string() + " is not a metrics results file");
    std::vector<knt::MetricsReport> rows;
    std::size_t lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        const auto cols = split_csv_line(line);
        if (cols.size() != header.size()) {
            throw knt::InvalidDataset(csv.string() + ":" + std::to_string(lineno) + ": wrong column count");
        }
        knt::MetricsReport r;
        try {
            r.experiment_id = cols[0];
            r.method = cols[1];
            r.d = std::stoul(cols[2]);
            r.layers = std::stoul(cols[3]);
            r.key_seed = std::stoull(cols[4]);
            r.verification_auc = std::stod(cols[5]);
            r.top1 = std::stod(cols[6]);
            if (!cols[7].empty()) r.classification_auc = std::stod(cols[7]);
        } catch (const std::exception&) {
            throw knt::InvalidDataset(csv.string() + ":" + std::to_string(lineno) + ": unparsable value");
        }
        rows.push_back(std::move(r));
    }
    print_summary(knt::summarize(rows));
    return kOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Keyed nonlinear transform: defenses, attacks and metrics on spatial feature maps"};
    app.set_version_flag("--version", kVersion);
    app.require_subcommand(1);
    Flags f;

    auto add_common = [&](CLI::App* sub) {
        sub->add_option("--config", f.config, "JSON experiment config (flags override it)")->check(CLI::ExistingFile);
        sub->add_option("--key", f.key, "64 hex chars; KNT_KEY is read when absent. Never printed.");
        sub->add_option("--method", f.method, "raw|noise|perm|knt|knt_nokey|knt_linear|knt_noperm|dp");
        sub->add_option("--d", f.d, "output dim (sweep: comma list)")->delimiter(',');
        sub->add_option("--L", f.layers, "layer count (sweep: comma list)")->delimiter(',');
        sub->add_option("--sigma", f.sigma, "Gaussian noise std for method=noise");
        sub->add_option("--epsilon", f.epsilon, "DP epsilon");
        sub->add_option("--delta", f.delta, "DP delta");
        sub->add_option("--seeds", f.seeds, "key seeds, comma separated")->delimiter(',');
        sub->add_option("--out", f.out, "output directory");
        sub->add_option("--threads", f.threads, "worker threads (0 = OpenMP default)");
        sub->add_option("--mode", f.mode, "similarity mode: flattened|pooled");
    };

    auto* gen = app.add_subcommand("gen", "generate a synthetic dataset (tensor + manifest)");
    auto* transform = app.add_subcommand("transform", "apply a defense to a dataset and write the released tensor");
    auto* reid = app.add_subcommand("reid", "verification AUC and Top-1 re-identification");
    auto* probe = app.add_subcommand("probe", "privacy metrics plus linear-probe classification AUC");
    auto* attack = app.add_subcommand("attack", "key-compromise inversion (pinv or grad)");
    auto* dp = app.add_subcommand("dp", "Gaussian-mechanism baseline");
    auto* bench = app.add_subcommand("bench", "single-sample transform latency");
    auto* sweep = app.add_subcommand("sweep", "(L, d) grid over methods and key seeds");
    auto* report = app.add_subcommand("report", "summarize an existing results.csv");
    for (auto* sub : {gen, transform, reid, probe, attack, dp, bench, sweep, report}) add_common(sub);
    for (auto* sub : {transform, reid, probe, attack, dp, sweep}) {
        sub->add_option("--in", f.input, "dataset manifest (default: synthetic data from the config)");
    }
    report->add_option("--in", f.input, "results.csv to summarize (default: <out>/results.csv)");
    attack->add_option("--attack", f.attack_kind, "pinv|grad");
    attack->add_option("--steps", f.steps, "Adam steps per restart");
    attack->add_option("--restarts", f.restarts, "restarts per position");
    attack->add_option("--samples", f.samples, "number of attacked samples");
    attack->add_flag("--nonneg", f.nonnegative, "project estimates onto x >= 0 after every step");
    bench->add_option("--c", f.channels, "input channels (h = w = 7)");
    bench->add_option("--reps", f.reps, "timed repetitions (>= 1000 recommended)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : kUsage;
    }

    try {
        const bool lists = sweep->parsed();
        knt::ExperimentConfig cfg = build_config(f, lists);
        if (gen->parsed()) return cmd_gen(cfg);
        if (transform->parsed()) return cmd_transform(cfg);
        if (reid->parsed()) return run_metrics("reid", cfg, false);
        if (probe->parsed()) return run_metrics("probe", cfg, true);
        if (attack->parsed()) return cmd_attack(cfg);
        if (dp->parsed()) return cmd_dp(cfg);
        if (bench->parsed()) return cmd_bench(cfg, f);
        if (sweep->parsed()) return cmd_sweep(cfg);
        if (report->parsed()) return cmd_report(cfg, f);
    } catch (const knt::ConfigError& e) {
        std::fprintf(stderr, "knt: config error: %s\n", e.what());
        return kUsage;
    } catch (const knt::InvalidArgument& e) {
        std::fprintf(stderr, "knt: invalid argument: %s\n", e.what());
        return kUsage;
    } catch (const knt::FormatError& e) {
        std::fprintf(stderr, "knt: format error: %s\n", e.what());
        return kData;
    } catch (const knt::InvalidDataset& e) {
        std::fprintf(stderr, "knt: dataset error: %s\n", e.what());
        return kData;
    } catch (const knt::IoError& e) {
        std::fprintf(stderr, "knt: i/o error: %s\n", e.what());
        return kData;
    } catch (const knt::NumericalError& e) {
        std::fprintf(stderr, "knt: numerical failure: %s\n", e.what());
        return kNumerical;
    } catch (const knt::AttackFailure& e) {
        std::fprintf(stderr, "knt: attack failed: %s\n", e.what());
        return kNumerical;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "knt: %s\n", e.what());
        return kFailure;
    }
    return kFailure;
}
