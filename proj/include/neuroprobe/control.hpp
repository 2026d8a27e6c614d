#pragma once

// Control tasks: every word type gets one label sampled from the empirical
// label distribution of the linguistic task's train split.

#include <neuroprobe/dataset.hpp>

#include <nlohmann/json.hpp>

#include <cstdint>
#include <map>
#include <random>
#include <set>
#include <string>
#include <vector>

namespace neuroprobe {

struct ControlMapping
{
    std::uint64_t seed = 0;
    std::map<std::string, std::uint32_t> mapping; ///< surface type -> control label id
    std::vector<double> source_distribution;
};

/// Uniform double in [0, 1) from the top 53 bits of one generator draw.
inline double unit_draw(std::mt19937_64& rng)
{
    return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

/// Types are visited in byte-wise sorted order; each consumes exactly one
/// generator draw and is mapped through the inverse CDF.
inline ControlMapping generate_control_mapping(const LabelColumn& train_labels, const std::set<std::string>& vocabulary,
                                               std::uint64_t seed)
{
    if (train_labels.num_labels() < 2) {
        throw Error(Errc::DegenerateTagset, "control task needs at least 2 labels, tagset of " +
                                                train_labels.task_name + " has " +
                                                std::to_string(train_labels.num_labels()));
    }
    if (vocabulary.empty()) {
        throw Error(Errc::EmptyVocabulary, "no word types to map");
    }
    ControlMapping out;
    out.seed = seed;
    out.source_distribution = empirical_distribution(train_labels);

    std::vector<double> cdf(out.source_distribution.size());
    double acc = 0.0;
    for (std::size_t t = 0; t < cdf.size(); ++t) {
        acc += out.source_distribution[t];
        cdf[t] = acc;
    }
    std::mt19937_64 rng(seed);
    for (const auto& type : vocabulary) {
        const double u = unit_draw(rng) * acc;
        auto it = std::upper_bound(cdf.begin(), cdf.end(), u);
        auto label = static_cast<std::uint32_t>(std::min<std::size_t>(it - cdf.begin(), cdf.size() - 1));
        // zero-probability labels never get picked, even on a boundary draw
        while (out.source_distribution[label] == 0.0 && label + 1 < cdf.size()) {
            ++label;
        }
        out.mapping.emplace(type, label);
    }
    return out;
}

/// Control column for one split; `task_name` becomes "<task>.control".
inline LabelColumn apply_control(const ControlMapping& control, const ActivationDataset& data,
                                 const LabelColumn& linguistic)
{
    LabelColumn column;
    column.task_name = linguistic.task_name + ".control";
    column.tagset = linguistic.tagset;
    column.labels.reserve(data.num_tokens());
    for (const auto& tok : data.tokens()) {
        auto it = control.mapping.find(tok.surface);
        if (it == control.mapping.end()) {
            throw Error(Errc::LabelAlignmentError, "word type '" + tok.surface + "' missing from control mapping");
        }
        column.labels.push_back(it->second);
    }
    return column;
}

struct ControlTask
{
    ControlMapping mapping;
    LabelColumn train;
    LabelColumn dev;
    LabelColumn test;
};

/// Vocabulary is the union over all three splits; sampling uses train frequencies.
inline ControlTask generate_control(const Splits& splits, const std::string& task, std::uint64_t seed)
{
    const auto& train_labels = splits.train.column(task);
    const auto vocab = collect_vocabulary({&splits.train.data, &splits.dev.data, &splits.test.data});
    auto mapping = generate_control_mapping(train_labels, vocab, seed);
    ControlTask out{std::move(mapping), {}, {}, {}};
    out.train = apply_control(out.mapping, splits.train.data, train_labels);
    out.dev = apply_control(out.mapping, splits.dev.data, splits.dev.column(task));
    out.test = apply_control(out.mapping, splits.test.data, splits.test.column(task));
    return out;
}

inline nlohmann::json control_sidecar_json(const ControlMapping& control, const std::string& task)
{
    return {{"task", task},
            {"seed", control.seed},
            {"source_distribution", control.source_distribution},
            {"num_types", control.mapping.size()}};
}

/// Writes <task>.control.labels, .control.tagset and .control.json into a dataset directory.
inline void write_control_column(const fs::path& dir, const LabelColumn& column, const ControlMapping& control,
                                 const std::string& task)
{
    write_label_column(dir, column);
    detail::write_text(dir / (task + ".control.json"), control_sidecar_json(control, task).dump(2) + "\n");
}

} // namespace neuroprobe
