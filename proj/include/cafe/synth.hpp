#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "cafe/nn.hpp"
#include "cafe/types.hpp"

// Synthetic data with latent sensitive groups and controllable disparity,
// plus the client partitioning schemes used by the experiments.

namespace cafe::data {

struct LabeledDataset {
    Matrix features;
    std::vector<int> labels;
    std::vector<int> groups;
    std::vector<int> persons;

    int size() const { return features.rows; }
};

struct SyntheticSpec {
    int dim = 8;
    // means[group][class], each of length dim
    std::array<std::array<std::vector<double>, 2>, 2> group_class_means;
    std::array<double, 2> label_noise = {0.0, 0.0};  // per-group flip probability
    double group_ratio = 0.5;                        // fraction of group-0 examples
    int n_total = 1000;
    int persons_per_group = 5;
    double feature_sigma = 1.0;
    //每person draws a fixed mean offset of this scale, so one person's
    // examples cluster together (single-person clients stay homogeneous).
    double person_sigma = 0.3;

    void validate() const;

    // Two groups, well separated for group 0, noisier labels and weaker
    // separation for group 1; the under-served-minority structure used by
    // the acceptance experiments.
    static SyntheticSpec default_disparity_fixture();
};

// Gaussian features around the class-and-group mean plus a per-person offset;
// labels flipped with the group's noise rate. Group-0 examples come first.
LabeledDataset generate(const SyntheticSpec& spec, std::uint64_t seed);

enum class PartitionMode { multi_person, single_and_multi, single_only };

struct PartitionSpec {
    PartitionMode mode = PartitionMode::multi_person;
    // (group-0 persons, group-1 persons) per client
    std::vector<std::pair<int, int>> client_compositions;
    int persons_per_group = 0;    // expected in the dataset; 0 = don't check
    int examples_per_person = 0;  // expected per person; 0 = don't check
    double train_fraction = 0.8;
    bool shuffle_split = true;
};

// Client row produced by partitioning; consumed by the federated round loop.
struct ClientData {
    int id = 0;
    nn::Batch train;
    nn::Batch eval;
    std::uint64_t rng_seed = 0;
};

// Assigns whole persons to clients (disjoint across clients), then applies
// the per-client train/eval split. Throws ConfigError when the dataset cannot
// satisfy the compositions.
std::vector<ClientData> partition(const LabeledDataset& ds, const PartitionSpec& pspec,
                                  std::uint64_t seed);

// Train/eval split. shuffle=false keeps the original order and sends the
// first floor(ratio*n) examples to train.
std::pair<LabeledDataset, LabeledDataset> split_ordered(const LabeledDataset& ds, double ratio,
                                                        bool shuffle, std::uint64_t seed);

nn::Batch to_batch(const LabeledDataset& ds);

// Columnar text format: header row, then per example the feature columns,
// label, group and person id.
std::string serialize_dataset(const LabeledDataset& ds);
void save_dataset(const std::string& path, const LabeledDataset& ds);
LabeledDataset load_dataset(const std::string& path);

}  // namespace cafe::data
