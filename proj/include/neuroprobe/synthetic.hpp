#pragma once

// Planted-signal corpora with known ground truth.
//
// Each token has a word type and a label. Informative neurons carry a
// label-dependent mean plus Gaussian noise; identity neurons carry a fixed
// per-type vector (so a probe can memorize types through them); every other
// neuron is pure noise. A fraction of types is "memorizable": all of their
// tokens share one fixed label. Remaining tokens draw their label at random.

#include <neuroprobe/dataset.hpp>

#include <cstdint>
#include <random>
#include <string>
#include <vector>

namespace neuroprobe::synthetic {

struct PlantedSpec
{
    std::size_t train_tokens = 5000;
    std::size_t dev_tokens = 1000;
    std::size_t test_tokens = 1000;
    std::size_t num_neurons = 200;
    std::size_t num_labels = 4;
    std::string task = "tag";

    std::vector<std::size_t> informative;
    /// Label that switches each informative neuron on (mean = +strength, 0 otherwise);
    /// -1 gives the neuron a random +-strength mean per label.
    std::vector<int> owners;
    std::vector<double> strengths; ///< per informative neuron; empty = all 1
    double signal = 1.0;
    double noise = 1.0;

    std::vector<std::size_t> identity;
    double identity_scale = 1.0;
    double identity_noise = 0.1;

    std::size_t vocab_size = 400;
    double memorizable_fraction = 0.0;
    std::size_t sentence_length = 10;

    LayerMap layers; ///< empty = one layer per 50 neurons
    std::uint64_t seed = 1;
};

struct PlantedSplit
{
    ActivationDataset data;
    LabelColumn labels;
};

struct PlantedCorpus
{
    PlantedSplit train;
    PlantedSplit dev;
    PlantedSplit test;

    Splits as_splits() const
    {
        return Splits{LoadedDataset{train.data, {train.labels}, {}}, LoadedDataset{dev.data, {dev.labels}, {}},
                      LoadedDataset{test.data, {test.labels}, {}}};
    }
};

inline LayerMap uniform_layers(std::size_t num_neurons, std::size_t width)
{
    LayerMap layers;
    for (std::size_t start = 0, i = 0; start < num_neurons; start += width, ++i) {
        layers.push_back({"layer" + std::to_string(i), start, std::min(start + width, num_neurons)});
    }
    return layers;
}

/// Owner i % labels for informative neuron i, so every label gets its share.
inline std::vector<int> round_robin_owners(std::size_t count, std::size_t labels)
{
    std::vector<int> owners(count);
    for (std::size_t i = 0; i < count; ++i) {
        owners[i] = static_cast<int>(i % labels);
    }
    return owners;
}

inline std::string type_surface(std::size_t type) { return "w" + std::to_string(type); }

inline PlantedCorpus make_planted(const PlantedSpec& spec)
{
    const auto d = spec.num_neurons;
    const auto t_count = spec.num_labels;
    std::mt19937_64 world(spec.seed);
    std::normal_distribution<double> gauss(0.0, 1.0);

    // label means of informative neurons
    std::vector<std::vector<double>> means(t_count, std::vector<double>(spec.informative.size(), 0.0));
    for (std::size_t i = 0; i < spec.informative.size(); ++i) {
        const double strength = spec.strengths.empty() ? 1.0 : spec.strengths.at(i);
        const int owner = spec.owners.empty() ? -1 : spec.owners.at(i);
        for (std::size_t c = 0; c < t_count; ++c) {
            if (owner >= 0) {
                means[c][i] = static_cast<std::size_t>(owner) == c ? strength : 0.0;
            } else {
                means[c][i] = (world() & 1U) ? strength : -strength;
            }
        }
    }

    std::vector<std::vector<double>> identity(spec.vocab_size, std::vector<double>(spec.identity.size()));
    for (auto& v : identity) {
        for (auto& x : v) {
            x = spec.identity_scale * gauss(world);
        }
    }
    std::vector<int> fixed_label(spec.vocab_size, -1);
    std::uniform_int_distribution<std::size_t> label_draw(0, t_count - 1);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    for (auto& f : fixed_label) {
        if (unit(world) < spec.memorizable_fraction) {
            f = static_cast<int>(label_draw(world));
        }
    }

    std::vector<char> role(d, 0); // 0 noise, 1 informative, 2 identity
    for (auto n : spec.informative) {
        role.at(n) = 1;
    }
    for (auto n : spec.identity) {
        role.at(n) = 2;
    }
    std::vector<std::size_t> info_slot(d, 0);
    for (std::size_t i = 0; i < spec.informative.size(); ++i) {
        info_slot[spec.informative[i]] = i;
    }
    std::vector<std::size_t> identity_slot(d, 0);
    for (std::size_t i = 0; i < spec.identity.size(); ++i) {
        identity_slot[spec.identity[i]] = i;
    }

    LabelColumn proto;
    proto.task_name = spec.task;
    for (std::size_t c = 0; c < t_count; ++c) {
        proto.tagset.push_back("L" + std::to_string(c));
    }
    const auto layers = spec.layers.empty() ? uniform_layers(d, 50) : spec.layers;

    auto make_split = [&](std::size_t n, std::uint64_t salt) {
        std::mt19937_64 rng(spec.seed * 0x9e3779b97f4a7c15ULL + salt);
        std::uniform_int_distribution<std::size_t> type_draw(0, spec.vocab_size - 1);
        std::vector<float> values(n * d);
        std::vector<TokenRecord> tokens;
        LabelColumn labels = proto;
        for (std::size_t r = 0; r < n; ++r) {
            const auto type = type_draw(rng);
            const auto label = fixed_label[type] >= 0 ? static_cast<std::size_t>(fixed_label[type]) : label_draw(rng);
            tokens.push_back({static_cast<std::int64_t>(r / spec.sentence_length),
                              static_cast<std::int64_t>(r % spec.sentence_length), type_surface(type)});
            labels.labels.push_back(static_cast<std::uint32_t>(label));
            for (std::size_t c = 0; c < d; ++c) {
                double v = 0.0;
                switch (role[c]) {
                case 1: v = spec.signal * means[label][info_slot[c]] + spec.noise * gauss(rng); break;
                case 2: v = identity[type][identity_slot[c]] + spec.identity_noise * gauss(rng); break;
                default: v = spec.noise * gauss(rng); break;
                }
                values[r * d + c] = static_cast<float>(v);
            }
        }
        return PlantedSplit{ActivationDataset(n, d, std::move(values), std::move(tokens), layers), std::move(labels)};
    };
    return PlantedCorpus{make_split(spec.train_tokens, 1), make_split(spec.dev_tokens, 2),
                         make_split(spec.test_tokens, 3)};
}

/// Writes train/, dev/ and test/ under `root`.
inline void write_planted(const fs::path& root, const PlantedCorpus& corpus)
{
    for (const auto& [name, split] :
         {std::pair{"train", &corpus.train}, std::pair{"dev", &corpus.dev}, std::pair{"test", &corpus.test}}) {
        write_dataset(root / name, split->data, std::span<const LabelColumn>(&split->labels, 1));
    }
}

} // namespace neuroprobe::synthetic
