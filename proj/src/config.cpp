#include "cafe/config.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

#include "cafe/error.hpp"

namespace cafe::run {

using nlohmann::json;

namespace {

// Collects problems so one pass reports everything wrong with a config.
struct Problems {
    std::vector<std::string> items;
    void add(const std::string& p) { items.push_back(p); }
    bool any() const { return !items.empty(); }
    [[noreturn]] void raise() const {
        std::ostringstream msg;
        msg << "invalid config (" << items.size() << " problem"
            << (items.size() == 1 ? "" : "s") << "):";
        for (const auto& p : items) msg << "\n  - " << p;
        throw ConfigError(msg.str());
    }
};

void check_keys(const json& obj, const std::string& where,
                const std::set<std::string>& allowed, Problems& problems) {
    for (const auto& [key, _] : obj.items()) {
        if (!allowed.count(key)) problems.add(where + ": unknown key '" + key + "'");
    }
}

template <typename T>
bool read_field(const json& obj, const std::string& where, const std::string& key, T& out,
                Problems& problems) {
    if (!obj.contains(key)) return false;
    try {
        out = obj.at(key).get<T>();
        return true;
    } catch (const json::exception&) {
        problems.add(where + "." + key + ": wrong type");
        return false;
    }
}

fl::Method parse_method_name(const std::string& s, Problems& problems) {
    if (s == "cafe") return fl::Method::cafe;
    if (s == "fedavg") return fl::Method::fedavg;
    if (s == "fedsam") return fl::Method::fedsam;
    if (s == "fedswa") return fl::Method::fedswa;
    if (s == "kd_fedavg") return fl::Method::kd_fedavg;
    problems.add("method.name: unknown method '" + s +
                 "' (expected cafe|fedavg|fedsam|fedswa|kd_fedavg)");
    return fl::Method::cafe;
}

void parse_method(const json& j, fl::MethodConfig& m, Problems& problems) {
    check_keys(j, "method",
               {"name", "alpha", "epsilon", "cycle", "swa_start_fraction", "epochs",
                "batch_size", "rounds", "base_lr", "swa_lr", "sam_rho", "kd_warmup_rounds",
                "kd_temperature", "kd_mix", "optimizer", "weighting", "swa", "curvature_tol",
                "curvature_max_iter"},
               problems);
    std::string name;
    if (read_field(j, "method", "name", name, problems)) {
        m.method = parse_method_name(name, problems);
    } else if (!j.contains("name")) {
        problems.add("method.name: required");
    }
    read_field(j, "method", "alpha", m.alpha, problems);
    read_field(j, "method", "epsilon", m.epsilon, problems);
    read_field(j, "method", "cycle", m.cycle, problems);
    read_field(j, "method", "swa_start_fraction", m.swa_start_fraction, problems);
    read_field(j, "method", "epochs", m.epochs, problems);
    read_field(j, "method", "batch_size", m.batch_size, problems);
    read_field(j, "method", "rounds", m.total_rounds, problems);
    read_field(j, "method", "base_lr", m.base_lr, problems);
    read_field(j, "method", "swa_lr", m.swa_lr, problems);
    read_field(j, "method", "sam_rho", m.sam_rho, problems);
    read_field(j, "method", "kd_warmup_rounds", m.kd_warmup_rounds, problems);
    read_field(j, "method", "kd_temperature", m.kd_temperature, problems);
    read_field(j, "method", "kd_mix", m.kd_mix, problems);
    read_field(j, "method", "curvature_tol", m.curvature.tol, problems);
    read_field(j, "method", "curvature_max_iter", m.curvature.max_iter, problems);

    std::string s;
    if (read_field(j, "method", "optimizer", s, problems)) {
        if (s == "auto") m.optimizer = fl::Optimizer::method_default;
        else if (s == "sgd") m.optimizer = fl::Optimizer::sgd;
        else if (s == "sam") m.optimizer = fl::Optimizer::sam;
        else problems.add("method.optimizer: expected auto|sgd|sam");
    }
    if (read_field(j, "method", "weighting", s, problems)) {
        if (s == "auto") m.weighting = fl::Weighting::method_default;
        else if (s == "sharpness") m.weighting = fl::Weighting::sharpness;
        else if (s == "data_size") m.weighting = fl::Weighting::data_size;
        else if (s == "uniform") m.weighting = fl::Weighting::uniform;
        else problems.add("method.weighting: expected auto|sharpness|data_size|uniform");
    }
    if (read_field(j, "method", "swa", s, problems)) {
        if (s == "auto") m.swa = fl::SwaMode::method_default;
        else if (s == "on") m.swa = fl::SwaMode::on;
        else if (s == "off") m.swa = fl::SwaMode::off;
        else problems.add("method.swa: expected auto|on|off");
    }

    // Bounds, mirrored from MethodConfig::validate so all violations are
    // listed instead of failing on the first.
    if (!(m.alpha >= 0.0 && m.alpha <= 1.0)) problems.add("method.alpha: must be in [0,1]");
    if (!(m.epsilon > 0.0)) problems.add("method.epsilon: must be > 0");
    if (m.cycle < 1) problems.add("method.cycle: must be >= 1");
    if (!(m.swa_start_fraction >= 0.0 && m.swa_start_fraction <= 1.0)) {
        problems.add("method.swa_start_fraction: must be in [0,1]");
    }
    if (m.epochs < 0) problems.add("method.epochs: must be >= 0");
    if (m.batch_size < 1) problems.add("method.batch_size: must be >= 1");
    if (m.total_rounds < 0) problems.add("method.rounds: must be >= 0");
    if (!(m.base_lr > 0.0)) problems.add("method.base_lr: must be > 0");
    if (!(m.swa_lr > 0.0)) problems.add("method.swa_lr: must be > 0");
    if (m.sam_rho < 0.0) problems.add("method.sam_rho: must be >= 0");
    if (!(m.kd_temperature > 0.0)) problems.add("method.kd_temperature: must be > 0");
    if (!(m.kd_mix >= 0.0 && m.kd_mix <= 1.0)) problems.add("method.kd_mix: must be in [0,1]");
    if (!(m.curvature.tol > 0.0)) problems.add("method.curvature_tol: must be > 0");
    if (m.curvature.max_iter < 1) problems.add("method.curvature_max_iter: must be >= 1");
}

void parse_model(const json& j, nn::MlpSpec& m, Problems& problems) {
    check_keys(j, "model", {"layer_widths", "hidden", "output"}, problems);
    read_field(j, "model", "layer_widths", m.layer_widths, problems);
    std::string s;
    if (read_field(j, "model", "hidden", s, problems)) {
        if (s == "relu") m.hidden = nn::MlpSpec::Hidden::relu;
        else if (s == "tanh") m.hidden = nn::MlpSpec::Hidden::tanh;
        else problems.add("model.hidden: expected relu|tanh");
    }
    if (read_field(j, "model", "output", s, problems)) {
        if (s == "sigmoid") m.output = nn::MlpSpec::Output::sigmoid_binary;
        else if (s == "linear") m.output = nn::MlpSpec::Output::linear;
        else problems.add("model.output: expected sigmoid|linear");
    }
    try {
        m.validate();
    } catch (const Error& e) {
        problems.add(std::string("model: ") + e.what());
    }
}

void parse_synthetic(const json& j, data::SyntheticSpec& s, Problems& problems) {
    check_keys(j, "data.synthetic",
               {"default_disparity", "dim", "n_total", "group_ratio", "label_noise",
                "persons_per_group", "feature_sigma", "person_sigma", "means"},
               problems);
    bool use_default = false;
    read_field(j, "data.synthetic", "default_disparity", use_default, problems);
    if (use_default) s = data::SyntheticSpec::default_disparity_fixture();

    read_field(j, "data.synthetic", "dim", s.dim, problems);
    read_field(j, "data.synthetic", "n_total", s.n_total, problems);
    read_field(j, "data.synthetic", "group_ratio", s.group_ratio, problems);
    read_field(j, "data.synthetic", "persons_per_group", s.persons_per_group, problems);
    read_field(j, "data.synthetic", "feature_sigma", s.feature_sigma, problems);
    read_field(j, "data.synthetic", "person_sigma", s.person_sigma, problems);
    std::vector<double> noise;
    if (read_field(j, "data.synthetic", "label_noise", noise, problems)) {
        if (noise.size() != 2) problems.add("data.synthetic.label_noise: expected 2 entries");
        else s.label_noise = {noise[0], noise[1]};
    }
    if (j.contains("means")) {
        const json& mj = j.at("means");
        check_keys(mj, "data.synthetic.means",
                   {"group0_class0", "group0_class1", "group1_class0", "group1_class1"},
                   problems);
        read_field(mj, "data.synthetic.means", "group0_class0", s.group_class_means[0][0],
                   problems);
        read_field(mj, "data.synthetic.means", "group0_class1", s.group_class_means[0][1],
                   problems);
        read_field(mj, "data.synthetic.means", "group1_class0", s.group_class_means[1][0],
                   problems);
        read_field(mj, "data.synthetic.means", "group1_class1", s.group_class_means[1][1],
                   problems);
    } else if (!use_default) {
        problems.add("data.synthetic: either default_disparity or means is required");
    }
    try {
        s.validate();
    } catch (const Error& e) {
        problems.add(std::string("data.synthetic: ") + e.what());
    }
}

void parse_partition(const json& j, data::PartitionSpec& p, Problems& problems) {
    check_keys(j, "partition",
               {"mode", "compositions", "persons_per_group", "examples_per_person",
                "train_fraction", "shuffle_split"},
               problems);
    std::string s;
    if (read_field(j, "partition", "mode", s, problems)) {
        if (s == "multi_person") p.mode = data::PartitionMode::multi_person;
        else if (s == "single_and_multi") p.mode = data::PartitionMode::single_and_multi;
        else if (s == "single_only") p.mode = data::PartitionMode::single_only;
        else problems.add("partition.mode: expected multi_person|single_and_multi|single_only");
    }
    std::vector<std::vector<int>> comps;
    if (read_field(j, "partition", "compositions", comps, problems)) {
        p.client_compositions.clear();
        for (std::size_t i = 0; i < comps.size(); ++i) {
            if (comps[i].size() != 2) {
                problems.add("partition.compositions[" + std::to_string(i) +
                             "]: expected [group0_persons, group1_persons]");
            } else {
                p.client_compositions.emplace_back(comps[i][0], comps[i][1]);
            }
        }
    }
    if (p.client_compositions.empty()) problems.add("partition.compositions: required");
    read_field(j, "partition", "persons_per_group", p.persons_per_group, problems);
    read_field(j, "partition", "examples_per_person", p.examples_per_person, problems);
    read_field(j, "partition", "train_fraction", p.train_fraction, problems);
    read_field(j, "partition", "shuffle_split", p.shuffle_split, problems);
    if (!(p.train_fraction > 0.0 && p.train_fraction < 1.0)) {
        problems.add("partition.train_fraction: must be in (0,1)");
    }
}

}  // namespace

ExperimentConfig parse_config_text(const std::string& text) {
    json root;
    try {
        root = json::parse(text);
    } catch (const json::exception& e) {
        throw ConfigError(std::string("config is not valid JSON: ") + e.what());
    }

    Problems problems;
    check_keys(root, "config",
               {"method", "model", "data", "partition", "seeds", "participation", "output_dir",
                "fate_baseline", "fate_perf"},
               problems);

    ExperimentConfig cfg;
    if (root.contains("method") && root.at("method").is_object()) {
        parse_method(root.at("method"), cfg.method, problems);
    } else {
        problems.add("method: required object");
    }

    cfg.model.layer_widths = {8, 16, 1};
    if (root.contains("model")) {
        if (root.at("model").is_object()) parse_model(root.at("model"), cfg.model, problems);
        else problems.add("model: must be an object");
    }

    if (root.contains("data") && root.at("data").is_object()) {
        const json& dj = root.at("data");
        check_keys(dj, "data", {"seed", "synthetic", "path"}, problems);
        read_field(dj, "data", "seed", cfg.data_seed, problems);
        bool has_synth = dj.contains("synthetic");
        bool has_path = dj.contains("path");
        if (has_synth == has_path) {
            problems.add("data: exactly one of synthetic / path is required");
        }
        if (has_synth && dj.at("synthetic").is_object()) {
            data::SyntheticSpec s;
            parse_synthetic(dj.at("synthetic"), s, problems);
            cfg.synthetic = s;
        } else if (has_synth) {
            problems.add("data.synthetic: must be an object");
        }
        if (has_path) {
            std::string p;
            if (read_field(dj, "data", "path", p, problems)) cfg.dataset_path = p;
        }
    } else {
        problems.add("data: required object");
    }

    if (root.contains("partition") && root.at("partition").is_object()) {
        parse_partition(root.at("partition"), cfg.partition, problems);
    } else {
        problems.add("partition: required object");
    }

    if (root.contains("seeds")) {
        try {
            cfg.seeds = root.at("seeds").get<std::vector<std::uint64_t>>();
        } catch (const json::exception&) {
            problems.add("seeds: expected an array of nonnegative integers");
        }
    }
    if (cfg.seeds.empty()) problems.add("seeds: at least one seed is required");

    if (root.contains("participation")) {
        const json& pj = root.at("participation");
        if (pj.is_string()) {
            if (pj.get<std::string>() != "all") {
                problems.add("participation: string value must be \"all\"");
            }
        } else {
            try {
                cfg.participation = pj.get<std::vector<double>>();
                for (double p : cfg.participation) {
                    if (!(p >= 0.0 && p <= 1.0)) {
                        problems.add("participation: probabilities must be in [0,1]");
                        break;
                    }
                }
            } catch (const json::exception&) {
                problems.add("participation: expected \"all\" or an array of probabilities");
            }
        }
    }

    if (!read_field(root, "config", "output_dir", cfg.output_dir, problems) ||
        cfg.output_dir.empty()) {
        problems.add("output_dir: required nonempty string");
    }
    std::string fb;
    if (read_field(root, "config", "fate_baseline", fb, problems)) cfg.fate_baseline = fb;
    std::string fp;
    if (read_field(root, "config", "fate_perf", fp, problems)) {
        if (fp == "f1") cfg.fate_perf = ExperimentConfig::FatePerf::f1;
        else if (fp == "accuracy") cfg.fate_perf = ExperimentConfig::FatePerf::accuracy;
        else problems.add("fate_perf: expected f1|accuracy");
    }

    if (!cfg.participation.empty() &&
        cfg.participation.size() != cfg.partition.client_compositions.size()) {
        problems.add("participation: length must equal the number of clients");
    }

    if (problems.any()) problems.raise();
    return cfg;
}

ExperimentConfig parse_config(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw IoError("cannot open config file " + path);
    std::ostringstream ss;
    ss << f.rdbuf();
    return parse_config_text(ss.str());
}

std::string canonical_config(const ExperimentConfig& cfg) {
    json j;
    json m;
    switch (cfg.method.method) {
        case fl::Method::cafe: m["name"] = "cafe"; break;
        case fl::Method::fedavg: m["name"] = "fedavg"; break;
        case fl::Method::fedsam: m["name"] = "fedsam"; break;
        case fl::Method::fedswa: m["name"] = "fedswa"; break;
        case fl::Method::kd_fedavg: m["name"] = "kd_fedavg"; break;
    }
    m["alpha"] = cfg.method.alpha;
    m["epsilon"] = cfg.method.epsilon;
    m["cycle"] = cfg.method.cycle;
    m["swa_start_fraction"] = cfg.method.swa_start_fraction;
    m["epochs"] = cfg.method.epochs;
    m["batch_size"] = cfg.method.batch_size;
    m["rounds"] = cfg.method.total_rounds;
    m["base_lr"] = cfg.method.base_lr;
    m["swa_lr"] = cfg.method.swa_lr;
    m["sam_rho"] = cfg.method.sam_rho;
    m["kd_warmup_rounds"] = cfg.method.kd_warmup_rounds;
    m["kd_temperature"] = cfg.method.kd_temperature;
    m["kd_mix"] = cfg.method.kd_mix;
    m["optimizer"] = cfg.method.optimizer == fl::Optimizer::method_default
                         ? "auto"
                         : (cfg.method.optimizer == fl::Optimizer::sgd ? "sgd" : "sam");
    switch (cfg.method.weighting) {
        case fl::Weighting::method_default: m["weighting"] = "auto"; break;
        case fl::Weighting::sharpness: m["weighting"] = "sharpness"; break;
        case fl::Weighting::data_size: m["weighting"] = "data_size"; break;
        case fl::Weighting::uniform: m["weighting"] = "uniform"; break;
    }
    m["swa"] = cfg.method.swa == fl::SwaMode::method_default
                   ? "auto"
                   : (cfg.method.swa == fl::SwaMode::on ? "on" : "off");
    m["curvature_tol"] = cfg.method.curvature.tol;
    m["curvature_max_iter"] = cfg.method.curvature.max_iter;
    j["method"] = m;

    json model;
    model["layer_widths"] = cfg.model.layer_widths;
    model["hidden"] = cfg.model.hidden == nn::MlpSpec::Hidden::relu ? "relu" : "tanh";
    model["output"] =
        cfg.model.output == nn::MlpSpec::Output::sigmoid_binary ? "sigmoid" : "linear";
    j["model"] = model;

    json d;
    d["seed"] = cfg.data_seed;
    if (cfg.synthetic) {
        const auto& s = *cfg.synthetic;
        json sj;
        sj["dim"] = s.dim;
        sj["n_total"] = s.n_total;
        sj["group_ratio"] = s.group_ratio;
        sj["label_noise"] = s.label_noise;
        sj["persons_per_group"] = s.persons_per_group;
        sj["feature_sigma"] = s.feature_sigma;
        sj["person_sigma"] = s.person_sigma;
        sj["means"] = {{"group0_class0", s.group_class_means[0][0]},
                       {"group0_class1", s.group_class_means[0][1]},
                       {"group1_class0", s.group_class_means[1][0]},
                       {"group1_class1", s.group_class_means[1][1]}};
        d["synthetic"] = sj;
    }
    if (cfg.dataset_path) d["path"] = *cfg.dataset_path;
    j["data"] = d;

    json p;
    switch (cfg.partition.mode) {
        case data::PartitionMode::multi_person: p["mode"] = "multi_person"; break;
        case data::PartitionMode::single_and_multi: p["mode"] = "single_and_multi"; break;
        case data::PartitionMode::single_only: p["mode"] = "single_only"; break;
    }
    json comps = json::array();
    for (const auto& [a, b] : cfg.partition.client_compositions) {
        comps.push_back({a, b});
    }
    p["compositions"] = comps;
    p["persons_per_group"] = cfg.partition.persons_per_group;
    p["examples_per_person"] = cfg.partition.examples_per_person;
    p["train_fraction"] = cfg.partition.train_fraction;
    p["shuffle_split"] = cfg.partition.shuffle_split;
    j["partition"] = p;

    j["seeds"] = cfg.seeds;
    if (cfg.participation.empty()) {
        j["participation"] = "all";
    } else {
        j["participation"] = cfg.participation;
    }
    j["output_dir"] = cfg.output_dir;
    if (cfg.fate_baseline) j["fate_baseline"] = *cfg.fate_baseline;
    j["fate_perf"] = cfg.fate_perf == ExperimentConfig::FatePerf::f1 ? "f1" : "accuracy";

    return j.dump(2);
}

}  // namespace cafe::run
