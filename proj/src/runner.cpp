#include "cafe/runner.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <sstream>

#include <json.hpp>

#include "cafe/error.hpp"
#include "cafe/metrics.hpp"
#include "cafe/protocol.hpp"
#include "cafe/synth.hpp"

namespace cafe::run {

using nlohmann::json;
namespace fs = std::filesystem;

std::uint64_t fnv1a(const std::string& bytes) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

namespace {

std::string hex64(std::uint64_t v) {
    char buf[19];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

void write_file(const fs::path& path, const std::string& content) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open " + path.string() + " for writing");
    f << content;
    if (!f) throw IoError("write failed for " + path.string());
}

std::string read_file(const fs::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open " + path.string());
    std::ostringstream ss;
    ss << f.rdbuf();
    return ss.str();
}

json round_to_json(const fl::RoundReport& r) {
    json j;
    j["round"] = r.round;
    j["lr"] = r.lr;
    j["swa_active"] = r.swa_active;
    json clients = json::array();
    for (const auto& c : r.clients) {
        clients.push_back({{"id", c.id},
                           {"eval_loss", c.eval_loss},
                           {"eval_lambda", c.eval_lambda},
                           {"weight", c.weight}});
    }
    j["clients"] = clients;
    json g;
    g["f1"] = r.f1;
    g["accuracy"] = r.accuracy;
    if (std::isnan(r.eo_gap)) {
        g["eo_gap"] = nullptr;
        g["eo_gap_signed"] = nullptr;
    } else {
        g["eo_gap"] = r.eo_gap;
        g["eo_gap_signed"] = r.eo_gap_signed;
    }
    json pg;
    for (const auto& [grp, m] : r.per_group) {
        pg[std::to_string(grp)] = {
            {"f1", m.f1}, {"accuracy", m.accuracy}, {"support", m.support}};
    }
    g["per_group"] = pg;
    json gl;
    for (const auto& [grp, lam] : r.group_lambdas) gl[std::to_string(grp)] = lam;
    g["group_lambdas"] = gl;
    g["group_lambda_disparity"] = r.group_lambda_disparity;
    j["global"] = g;
    return j;
}

struct SeedFinal {
    std::uint64_t seed = 0;
    bool ok = false;
    std::string error;
    double f1 = 0.0, accuracy = 0.0, eo_gap = 0.0, disparity = 0.0;
};

struct Stats {
    double mean = 0.0, stddev = 0.0;
};

Stats stats_of(const std::vector<double>& xs) {
    Stats s;
    if (xs.empty()) return s;
    for (double x : xs) s.mean += x;
    s.mean /= xs.size();
    double var = 0.0;
    for (double x : xs) var += (x - s.mean) * (x - s.mean);
    s.stddev = xs.size() > 1 ? std::sqrt(var / (xs.size() - 1)) : 0.0;
    return s;
}

// Baseline finals (per seed and pooled) loaded from another run's summary.
struct Baseline {
    bool self = true;
    std::map<std::uint64_t, SeedFinal> per_seed;
    double mean_f1 = 0.0, mean_accuracy = 0.0, mean_eo = 0.0;
};

Baseline load_baseline(const std::string& dir) {
    Baseline b;
    b.self = false;
    json s = json::parse(read_file(fs::path(dir) / "summary.json"));
    for (const auto& e : s.at("per_seed")) {
        if (!e.value("ok", false)) continue;
        SeedFinal f;
        f.seed = e.at("seed").get<std::uint64_t>();
        f.ok = true;
        f.f1 = e.at("f1").get<double>();
        f.accuracy = e.at("accuracy").get<double>();
        f.eo_gap = e.at("eo_gap").get<double>();
        b.per_seed[f.seed] = f;
    }
    b.mean_f1 = s.at("mean").at("f1").get<double>();
    b.mean_accuracy = s.at("mean").at("accuracy").get<double>();
    b.mean_eo = s.at("mean").at("eo_gap").get<double>();
    return b;
}

}  // namespace

int run_experiment_config(const ExperimentConfig& cfg) {
    data::LabeledDataset dataset =
        cfg.synthetic ? data::generate(*cfg.synthetic, cfg.data_seed)
                      : data::load_dataset(*cfg.dataset_path);
    std::string dataset_bytes = data::serialize_dataset(dataset);
    std::string dataset_hash = hex64(fnv1a(dataset_bytes));

    std::vector<fl::ClientState> clients = data::partition(dataset, cfg.partition, cfg.data_seed);

    fs::path out_dir(cfg.output_dir);
    std::error_code ec;
    fs::create_directories(out_dir, ec);
    if (ec) throw IoError("cannot create output dir " + out_dir.string());

    std::string config_echo = canonical_config(cfg);
    {
        json manifest;
        manifest["config"] = json::parse(config_echo);
        manifest["config_hash"] = hex64(fnv1a(config_echo));
        manifest["dataset_hash"] = dataset_hash;
        manifest["seeds"] = cfg.seeds;
        manifest["version"] = kVersion;
        write_file(out_dir / "manifest.json", manifest.dump(2) + "\n");
    }

    Baseline baseline;
    if (cfg.fate_baseline) baseline = load_baseline(*cfg.fate_baseline);

    std::vector<SeedFinal> finals;
    bool any_failed = false;
    for (std::uint64_t seed : cfg.seeds) {
        SeedFinal f;
        f.seed = seed;
        try {
            fl::ExperimentResult res =
                fl::run_experiment(clients, cfg.model, cfg.method, seed, cfg.participation);
            std::ostringstream lines;
            for (const auto& rep : res.reports) lines << round_to_json(rep).dump() << "\n";
            write_file(out_dir / ("metrics_seed" + std::to_string(seed) + ".jsonl"),
                       lines.str());
            if (!res.reports.empty()) {
                const auto& last = res.reports.back();
                f.ok = true;
                f.f1 = last.f1;
                f.accuracy = last.accuracy;
                f.eo_gap = last.eo_gap;
                f.disparity = last.group_lambda_disparity;
            } else {
                f.ok = true;  // zero-round run: nothing to summarize
                f.f1 = f.accuracy = f.eo_gap = f.disparity =
                    std::numeric_limits<double>::quiet_NaN();
            }
        } catch (const Error& e) {
            f.error = e.what();
            any_failed = true;
        }
        finals.push_back(std::move(f));
    }

    json summary;
    json per_seed = json::array();
    std::vector<double> f1s, accs, eos, disps, fates;
    for (const auto& f : finals) {
        json e;
        e["seed"] = f.seed;
        e["ok"] = f.ok;
        if (f.ok) {
            e["f1"] = f.f1;
            e["accuracy"] = f.accuracy;
            e["eo_gap"] = f.eo_gap;
            e["group_lambda_disparity"] = f.disparity;
            bool use_f1 = cfg.fate_perf == ExperimentConfig::FatePerf::f1;
            double perf = use_f1 ? f.f1 : f.accuracy;
            double base_perf = baseline.self ? perf
                                             : (use_f1 ? baseline.mean_f1
                                                       : baseline.mean_accuracy);
            double base_eo = baseline.self ? f.eo_gap : baseline.mean_eo;
            if (!baseline.self) {
                auto it = baseline.per_seed.find(f.seed);
                if (it != baseline.per_seed.end()) {
                    base_perf = use_f1 ? it->second.f1 : it->second.accuracy;
                    base_eo = it->second.eo_gap;
                }
            }
            double fate_v = fair::fate(perf, base_perf, f.eo_gap, base_eo);
            e["fate"] = fate_v;
            if (!std::isnan(f.f1)) {
                f1s.push_back(f.f1);
                accs.push_back(f.accuracy);
                eos.push_back(f.eo_gap);
                disps.push_back(f.disparity);
                fates.push_back(fate_v);
            }
        } else {
            e["error"] = f.error;
        }
        per_seed.push_back(e);
    }
    summary["per_seed"] = per_seed;
    auto put_stats = [&](const char* key, const std::vector<double>& xs) {
        Stats s = stats_of(xs);
        summary["mean"][key] = s.mean;
        summary["stddev"][key] = s.stddev;
    };
    put_stats("f1", f1s);
    put_stats("accuracy", accs);
    put_stats("eo_gap", eos);
    put_stats("group_lambda_disparity", disps);
    put_stats("fate", fates);
    summary["fate_baseline"] = cfg.fate_baseline ? json(*cfg.fate_baseline) : json("self");
    write_file(out_dir / "summary.json", summary.dump(2) + "\n");

    {
        std::ostringstream txt;
        txt << "seeds: " << cfg.seeds.size() << "\n";
        char buf[256];
        for (const auto& f : finals) {
            if (f.ok) {
                std::snprintf(buf, sizeof buf,
                              "seed %llu: f1=%.4f acc=%.4f eo_gap=%.4f dlambda=%.6f\n",
                              static_cast<unsigned long long>(f.seed), f.f1, f.accuracy,
                              f.eo_gap, f.disparity);
            } else {
                std::snprintf(buf, sizeof buf, "seed %llu: FAILED (%s)\n",
                              static_cast<unsigned long long>(f.seed), f.error.c_str());
            }
            txt << buf;
        }
        Stats sf = stats_of(f1s), se = stats_of(eos), sfa = stats_of(fates);
        std::snprintf(buf, sizeof buf,
                      "mean: f1=%.4f+-%.4f eo_gap=%.4f+-%.4f fate=%.4f\n", sf.mean, sf.stddev,
                      se.mean, se.stddev, sfa.mean);
        txt << buf;
        write_file(out_dir / "summary.txt", txt.str());
    }

    return any_failed ? 2 : 0;
}

int write_report(const std::vector<std::string>& run_dirs, int baseline_index,
                 const std::string& out_path) {
    if (run_dirs.empty()) throw ConfigError("report: need at least one run dir");
    if (baseline_index < 0 || baseline_index >= static_cast<int>(run_dirs.size())) {
        throw ConfigError("report: baseline index out of range");
    }

    struct RunInfo {
        std::string dir;
        std::string method;
        std::string dataset_hash;
        Stats f1, eo;
    };
    std::vector<RunInfo> runs;
    for (const auto& dir : run_dirs) {
        RunInfo info;
        info.dir = dir;
        json manifest = json::parse(read_file(fs::path(dir) / "manifest.json"));
        info.method = manifest.at("config").at("method").at("name").get<std::string>();
        info.dataset_hash = manifest.at("dataset_hash").get<std::string>();
        json s = json::parse(read_file(fs::path(dir) / "summary.json"));
        info.f1.mean = s.at("mean").at("f1").get<double>();
        info.f1.stddev = s.at("stddev").at("f1").get<double>();
        info.eo.mean = s.at("mean").at("eo_gap").get<double>();
        info.eo.stddev = s.at("stddev").at("eo_gap").get<double>();
        runs.push_back(std::move(info));
    }
    for (const auto& r : runs) {
        if (r.dataset_hash != runs.front().dataset_hash) {
            throw ConfigError("report: dataset hash mismatch between " + runs.front().dir +
                              " (" + runs.front().dataset_hash + ") and " + r.dir + " (" +
                              r.dataset_hash + ")");
        }
    }

    const RunInfo& base = runs[baseline_index];
    json out;
    out["baseline"] = base.dir;
    json rows = json::array();
    std::ostringstream txt;
    txt << "method        f1(mean+-std)      eo_gap(mean+-std)   fate_vs_baseline\n";
    char buf[256];
    for (const auto& r : runs) {
        double fate_v = fair::fate(r.f1.mean, base.f1.mean, r.eo.mean, base.eo.mean);
        rows.push_back({{"dir", r.dir},
                        {"method", r.method},
                        {"f1_mean", r.f1.mean},
                        {"f1_stddev", r.f1.stddev},
                        {"eo_gap_mean", r.eo.mean},
                        {"eo_gap_stddev", r.eo.stddev},
                        {"fate", fate_v}});
        std::snprintf(buf, sizeof buf, "%-12s  %.4f +- %.4f   %.4f +- %.4f    %+.4f\n",
                      r.method.c_str(), r.f1.mean, r.f1.stddev, r.eo.mean, r.eo.stddev,
                      fate_v);
        txt << buf;
    }
    out["rows"] = rows;
    write_file(out_path + ".json", out.dump(2) + "\n");
    write_file(out_path + ".txt", txt.str());
    return 0;
}

}  // namespace cafe::run
