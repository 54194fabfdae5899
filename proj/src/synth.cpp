#include "cafe/synth.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <numeric>
#include <sstream>

#include "cafe/error.hpp"
#include "cafe/rng.hpp"

namespace cafe::data {

void SyntheticSpec::validate() const {
    if (dim < 1) throw ConfigError("synthetic: dim must be >= 1");
    if (n_total < 1) throw ConfigError("synthetic: n_total must be >= 1");
    if (persons_per_group < 1) throw ConfigError("synthetic: persons_per_group must be >= 1");
    if (!(group_ratio >= 0.0 && group_ratio <= 1.0)) {
        throw ConfigError("synthetic: group_ratio must be in [0,1]");
    }
    for (double p : label_noise) {
        if (!(p >= 0.0 && p < 0.5)) throw ConfigError("synthetic: label_noise must be in [0,0.5)");
    }
    if (!(feature_sigma > 0.0)) throw ConfigError("synthetic: feature_sigma must be > 0");
    if (person_sigma < 0.0) throw ConfigError("synthetic: person_sigma must be >= 0");
    for (int g = 0; g < 2; ++g) {
        for (int c = 0; c < 2; ++c) {
            if (static_cast<int>(group_class_means[g][c].size()) != dim) {
                throw ConfigError("synthetic: mean vector for group " + std::to_string(g) +
                                  " class " + std::to_string(c) + " must have length dim");
            }
        }
    }
}

SyntheticSpec SyntheticSpec::default_disparity_fixture() {
    SyntheticSpec s;
    s.dim = 8;
    s.n_total = 2500;  // pooled eval of 500 keeps the TPR quantization mild
    s.group_ratio = 0.8;
    s.persons_per_group = 5;
    s.label_noise = {0.0, 0.2};
    s.feature_sigma = 1.0;
    s.person_sigma = 0.3;
    auto mean = [&](double a, double b) {
        std::vector<double> m(s.dim, a);
        m[0] = b;
        m[1] = b;
        return m;
    };
    // Group 0: classes split along the first two coordinates by +-1.5.
    s.group_class_means[0][0] = mean(0.0, -1.5);
    s.group_class_means[0][1] = mean(0.0, 1.5);
    // Group 1: weaker separation and an offset base, so the majority-fit
    // decision boundary serves it worse.
    auto mean1 = [&](double b) {
        std::vector<double> m(s.dim, 0.8);
        m[0] = b;
        m[1] = b;
        return m;
    };
    s.group_class_means[1][0] = mean1(-0.7);
    s.group_class_means[1][1] = mean1(0.7);
    return s;
}

LabeledDataset generate(const SyntheticSpec& spec, std::uint64_t seed) {
    spec.validate();
    rng::Stream stream(seed);

    int n0 = static_cast<int>(std::llround(spec.group_ratio * spec.n_total));
    std::array<int, 2> group_counts = {n0, spec.n_total - n0};

    LabeledDataset ds;
    ds.features = Matrix(spec.n_total, spec.dim);
    ds.labels.reserve(spec.n_total);
    ds.groups.reserve(spec.n_total);
    ds.persons.reserve(spec.n_total);

    int row = 0;
    for (int g = 0; g < 2; ++g) {
        int n_g = group_counts[g];
        int k = spec.persons_per_group;
        // per-person mean offsets
        std::vector<std::vector<double>> offsets(k);
        for (auto& off : offsets) {
            off.resize(spec.dim);
            for (double& x : off) x = spec.person_sigma * stream.normal();
        }
        for (int j = 0; j < k; ++j) {
            int count = n_g / k + (j < n_g % k ? 1 : 0);
            int person_id = g * k + j;
            for (int e = 0; e < count; ++e) {
                int y_true = stream.uniform() < 0.5 ? 0 : 1;
                int y_obs = stream.uniform() < spec.label_noise[g] ? 1 - y_true : y_true;
                auto f = ds.features.row(row);
                const auto& mu = spec.group_class_means[g][y_true];
                for (int d = 0; d < spec.dim; ++d) {
                    f[d] = mu[d] + offsets[j][d] + spec.feature_sigma * stream.normal();
                }
                ds.labels.push_back(y_obs);
                ds.groups.push_back(g);
                ds.persons.push_back(person_id);
                ++row;
            }
        }
    }
    return ds;
}

namespace {

LabeledDataset take_rows(const LabeledDataset& ds, const std::vector<int>& idx) {
    LabeledDataset out;
    out.features = Matrix(static_cast<int>(idx.size()), ds.features.cols);
    out.labels.reserve(idx.size());
    out.groups.reserve(idx.size());
    out.persons.reserve(idx.size());
    for (std::size_t i = 0; i < idx.size(); ++i) {
        auto src = ds.features.row(idx[i]);
        std::copy(src.begin(), src.end(), out.features.row(static_cast<int>(i)).begin());
        out.labels.push_back(ds.labels[idx[i]]);
        out.groups.push_back(ds.groups[idx[i]]);
        out.persons.push_back(ds.persons[idx[i]]);
    }
    return out;
}

}  // namespace

std::pair<LabeledDataset, LabeledDataset> split_ordered(const LabeledDataset& ds, double ratio,
                                                        bool shuffle, std::uint64_t seed) {
    if (!(ratio > 0.0 && ratio < 1.0)) throw ConfigError("split: ratio must be in (0,1)");
    int n = ds.size();
    if (n < 2) throw ConfigError("split: need at least 2 examples");

    std::vector<int> order(n);
    std::iota(order.begin(), order.end(), 0);
    if (shuffle) {
        rng::Stream stream(seed);
        stream.shuffle(order);
    }
    int n_train = static_cast<int>(ratio * n + 1e-9);
    n_train = std::clamp(n_train, 1, n - 1);
    std::vector<int> train_idx(order.begin(), order.begin() + n_train);
    std::vector<int> eval_idx(order.begin() + n_train, order.end());
    return {take_rows(ds, train_idx), take_rows(ds, eval_idx)};
}

nn::Batch to_batch(const LabeledDataset& ds) {
    return nn::Batch{ds.features, ds.labels, ds.groups};
}

std::vector<ClientData> partition(const LabeledDataset& ds, const PartitionSpec& pspec,
                                  std::uint64_t seed) {
    if (pspec.client_compositions.empty()) {
        throw ConfigError("partition: client_compositions must not be empty");
    }
    for (const auto& [a, b] : pspec.client_compositions) {
        int total = a + b;
        if (a < 0 || b < 0 || total < 1) {
            throw ConfigError("partition: each composition needs >= 1 person");
        }
        if (pspec.mode == PartitionMode::single_only && total != 1) {
            throw ConfigError("partition: single_only mode requires exactly 1 person per client");
        }
        if (pspec.mode == PartitionMode::multi_person && total < 2) {
            throw ConfigError("partition: multi_person mode requires >= 2 persons per client");
        }
    }

    // person id -> (group, example indices)
    std::map<int, std::pair<int, std::vector<int>>> people;
    for (int i = 0; i < ds.size(); ++i) {
        auto& entry = people[ds.persons[i]];
        if (entry.second.empty()) {
            entry.first = ds.groups[i];
        } else if (entry.first != ds.groups[i]) {
            throw ConfigError("partition: person " + std::to_string(ds.persons[i]) +
                              " spans multiple groups");
        }
        entry.second.push_back(i);
    }

    std::array<std::vector<int>, 2> pool;  // person ids per group
    for (const auto& [pid, entry] : people) {
        if (entry.first != 0 && entry.first != 1) {
            throw ConfigError("partition: group tags must be 0/1");
        }
        pool[entry.first].push_back(pid);
        if (pspec.examples_per_person > 0 &&
            static_cast<int>(entry.second.size()) != pspec.examples_per_person) {
            throw ConfigError("partition: person " + std::to_string(pid) + " has " +
                              std::to_string(entry.second.size()) + " examples, expected " +
                              std::to_string(pspec.examples_per_person));
        }
    }
    if (pspec.persons_per_group > 0) {
        for (int g = 0; g < 2; ++g) {
            if (static_cast<int>(pool[g].size()) != pspec.persons_per_group) {
                throw ConfigError("partition: dataset has " + std::to_string(pool[g].size()) +
                                  " persons in group " + std::to_string(g) + ", expected " +
                                  std::to_string(pspec.persons_per_group));
            }
        }
    }

    int need0 = 0, need1 = 0;
    for (const auto& [a, b] : pspec.client_compositions) {
        need0 += a;
        need1 += b;
    }
    if (need0 > static_cast<int>(pool[0].size()) || need1 > static_cast<int>(pool[1].size())) {
        throw ConfigError("partition: compositions need (" + std::to_string(need0) + "," +
                          std::to_string(need1) + ") persons, dataset has (" +
                          std::to_string(pool[0].size()) + "," +
                          std::to_string(pool[1].size()) + ")");
    }

    rng::Stream stream(rng::mix(seed, 0xA551u));
    stream.shuffle(pool[0]);
    stream.shuffle(pool[1]);

    std::vector<ClientData> clients;
    std::size_t next0 = 0, next1 = 0;
    for (std::size_t c = 0; c < pspec.client_compositions.size(); ++c) {
        auto [a, b] = pspec.client_compositions[c];
        std::vector<int> idx;
        for (int k = 0; k < a; ++k) {
            const auto& ex = people[pool[0][next0++]].second;
            idx.insert(idx.end(), ex.begin(), ex.end());
        }
        for (int k = 0; k < b; ++k) {
            const auto& ex = people[pool[1][next1++]].second;
            idx.insert(idx.end(), ex.begin(), ex.end());
        }
        std::sort(idx.begin(), idx.end());
        LabeledDataset local = take_rows(ds, idx);
        auto [train, eval] =
            split_ordered(local, pspec.train_fraction, pspec.shuffle_split, rng::mix(seed, c));
        ClientData client;
        client.id = static_cast<int>(c);
        client.train = to_batch(train);
        client.eval = to_batch(eval);
        client.rng_seed = rng::mix(seed, 0xC11E27u, c);
        clients.push_back(std::move(client));
    }
    return clients;
}

std::string serialize_dataset(const LabeledDataset& ds) {
    std::ostringstream out;
    for (int d = 0; d < ds.features.cols; ++d) out << "x" << d << ",";
    out << "label,group,person\n";
    char buf[40];
    for (int i = 0; i < ds.size(); ++i) {
        auto row = ds.features.row(i);
        for (double v : row) {
            std::snprintf(buf, sizeof buf, "%.17g", v);
            out << buf << ",";
        }
        out << ds.labels[i] << "," << ds.groups[i] << "," << ds.persons[i] << "\n";
    }
    return out.str();
}

void save_dataset(const std::string& path, const LabeledDataset& ds) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open " + path + " for writing");
    f << serialize_dataset(ds);
    if (!f) throw IoError("write failed for " + path);
}

LabeledDataset load_dataset(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw IoError("cannot open " + path);
    std::string header;
    if (!std::getline(f, header)) throw IoError("empty dataset file " + path);

    std::vector<std::string> cols;
    {
        std::stringstream hs(header);
        std::string c;
        while (std::getline(hs, c, ',')) cols.push_back(c);
    }
    if (cols.size() < 4 || cols[cols.size() - 3] != "label" || cols[cols.size() - 2] != "group" ||
        cols.back() != "person") {
        throw IoError("dataset header must end with label,group,person");
    }
    int dim = static_cast<int>(cols.size()) - 3;

    std::vector<double> values;
    std::vector<int> labels, groups, persons;
    std::string line;
    int lineno = 1;
    while (std::getline(f, line)) {
        ++lineno;
        if (line.empty()) continue;
        std::stringstream ls(line);
        std::string cell;
        std::vector<std::string> cells;
        while (std::getline(ls, cell, ',')) cells.push_back(cell);
        if (static_cast<int>(cells.size()) != dim + 3) {
            throw IoError("line " + std::to_string(lineno) + ": expected " +
                          std::to_string(dim + 3) + " columns, got " +
                          std::to_string(cells.size()));
        }
        for (int d = 0; d < dim; ++d) {
            try {
                values.push_back(std::stod(cells[d]));
            } catch (const std::exception&) {
                throw IoError("line " + std::to_string(lineno) + ": bad number '" + cells[d] +
                              "'");
            }
        }
        try {
            labels.push_back(std::stoi(cells[dim]));
            groups.push_back(std::stoi(cells[dim + 1]));
            persons.push_back(std::stoi(cells[dim + 2]));
        } catch (const std::exception&) {
            throw IoError("line " + std::to_string(lineno) + ": bad integer column");
        }
        if (labels.back() != 0 && labels.back() != 1) {
            throw IoError("line " + std::to_string(lineno) + ": label must be 0/1");
        }
    }
    LabeledDataset ds;
    ds.features.rows = static_cast<int>(labels.size());
    ds.features.cols = dim;
    ds.features.data = std::move(values);
    ds.labels = std::move(labels);
    ds.groups = std::move(groups);
    ds.persons = std::move(persons);
    if (ds.size() == 0) throw IoError("dataset " + path + " has no examples");
    return ds;
}

}  // namespace cafe::data
