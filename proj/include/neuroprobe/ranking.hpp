#pragma once

// Weight-mass neuron ranking. For each label the probe's weights are sorted by
// magnitude; a growing fraction p of every label's total |weight| is covered
// by a prefix of that order, and the union of those prefixes grows until it
// holds the requested number of neurons.

#include <neuroprobe/probe.hpp>

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>
#include <vector>

namespace neuroprobe {

/// Mass fraction p advances in steps of 1/kDefaultMassSteps, starting at one step.
inline constexpr std::size_t kDefaultMassSteps = 1000;

/// Relative slack when comparing cumulative mass against p * total.
inline constexpr double kMassTolerance = 1e-12;

struct NeuronRanking
{
    std::vector<std::size_t> ordered_neurons;
    std::vector<double> inclusion_mass;                   ///< parallel to ordered_neurons
    std::vector<std::vector<std::size_t>> attributed_labels; ///< parallel to ordered_neurons
    std::vector<std::vector<std::size_t>> per_label_order;
    std::vector<std::size_t> zero_mass_labels;
    std::vector<std::string> tagset;
    std::size_t num_neurons = 0; ///< size of the ranked neuron space
    std::size_t mass_steps = kDefaultMassSteps;
    double stop_mass = 0.0; ///< p at which the union first reached the requested size

    std::size_t size() const noexcept { return ordered_neurons.size(); }
    std::size_t num_labels() const noexcept { return tagset.size(); }
};

namespace detail {

/// Feature columns of one label sorted by |w| descending, lower column first on ties.
inline std::vector<std::size_t> label_column_order(const ProbeModel& model, std::size_t label)
{
    const auto w = model.label_weights(label);
    std::vector<std::size_t> order(model.num_features);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return std::abs(w[a]) > std::abs(w[b]); });
    return order;
}

struct LabelMass
{
    std::vector<std::size_t> order;
    std::vector<double> cumulative;
    double total = 0.0;

    /// Length of the minimal prefix covering fraction p of the total.
    std::size_t prefix_length(double p) const
    {
        const double target = p * total * (1.0 - kMassTolerance);
        auto it = std::lower_bound(cumulative.begin(), cumulative.end(), target);
        if (it == cumulative.end()) {
            return cumulative.size();
        }
        return static_cast<std::size_t>(it - cumulative.begin()) + 1;
    }
};

inline LabelMass label_mass(const ProbeModel& model, std::size_t label)
{
    LabelMass m;
    m.order = label_column_order(model, label);
    const auto w = model.label_weights(label);
    m.cumulative.reserve(m.order.size());
    double acc = 0.0;
    for (auto c : m.order) {
        acc += std::abs(w[c]);
        m.cumulative.push_back(acc);
    }
    m.total = acc;
    return m;
}

inline double max_abs_weight(const ProbeModel& model, std::size_t column)
{
    double best = 0.0;
    for (std::size_t t = 0; t < model.num_labels; ++t) {
        best = std::max(best, std::abs(model.weight(t, column)));
    }
    return best;
}

} // namespace detail

/// Per label, neurons sorted by |theta[t, d]| descending; ties by lower index.
inline std::vector<std::vector<std::size_t>> per_label_order(const ProbeModel& model)
{
    std::vector<std::vector<std::size_t>> out(model.num_labels);
    for (std::size_t t = 0; t < model.num_labels; ++t) {
        out[t] = detail::label_column_order(model, t);
        for (auto& c : out[t]) {
            c = model.source_index(c);
        }
    }
    return out;
}

/// Smallest prefix of label t's order whose |weight| sum reaches p of the label total.
inline std::vector<std::size_t> label_mass_prefix(const ProbeModel& model, std::size_t label, double p)
{
    if (label >= model.num_labels) {
        throw Error(Errc::IndexOutOfRange, "label " + std::to_string(label));
    }
    if (!(p > 0.0 && p <= 1.0)) {
        throw Error(Errc::InvalidConfig, "mass fraction must lie in (0, 1]");
    }
    const auto mass = detail::label_mass(model, label);
    if (mass.total <= 0.0) {
        throw Error(Errc::ZeroMass, "all weights of label " + std::to_string(label) + " are zero");
    }
    std::vector<std::size_t> prefix(mass.order.begin(),
                                    mass.order.begin() + static_cast<std::ptrdiff_t>(mass.prefix_length(p)));
    for (auto& c : prefix) {
        c = model.source_index(c);
    }
    return prefix;
}

/// Ranks the `count` most salient neurons.
///
/// Neurons are ordered by the mass step at which they first enter the union,
/// then by their largest |weight| over labels (descending), then by index.
/// If every step is exhausted before `count` is reached, never-included
/// neurons are appended by largest |weight| and index with inclusion mass
/// 1.0 and no attribution. Labels whose weights are all zero are skipped and
/// reported in `zero_mass_labels`.
///
/// Attribution lists, for each ranked neuron, the labels whose prefix holds
/// it at the stopping mass.
inline NeuronRanking select_top(const ProbeModel& model, std::size_t count,
                                std::size_t mass_steps = kDefaultMassSteps)
{
    const auto features = model.num_features;
    if (count < 1 || count > features) {
        throw Error(Errc::InvalidN, "requested " + std::to_string(count) + " neurons out of " +
                                        std::to_string(features));
    }
    if (mass_steps < 1) {
        throw Error(Errc::InvalidConfig, "mass_steps must be >= 1");
    }

    NeuronRanking ranking;
    ranking.tagset = model.tagset;
    if (ranking.tagset.size() != model.num_labels) {
        ranking.tagset.clear();
        for (std::size_t t = 0; t < model.num_labels; ++t) {
            ranking.tagset.push_back(std::to_string(t));
        }
    }
    ranking.num_neurons = features;
    ranking.mass_steps = mass_steps;

    std::vector<detail::LabelMass> masses;
    masses.reserve(model.num_labels);
    for (std::size_t t = 0; t < model.num_labels; ++t) {
        masses.push_back(detail::label_mass(model, t));
        if (masses.back().total <= 0.0) {
            ranking.zero_mass_labels.push_back(t);
        }
    }

    std::vector<std::size_t> first_step(features, 0);
    std::vector<std::size_t> prefix_len(model.num_labels, 0);
    std::size_t included = 0;
    std::size_t stop = mass_steps;
    for (std::size_t k = 1; k <= mass_steps; ++k) {
        const double p = static_cast<double>(k) / static_cast<double>(mass_steps);
        for (std::size_t t = 0; t < model.num_labels; ++t) {
            if (masses[t].total <= 0.0) {
                continue;
            }
            const auto len = masses[t].prefix_length(p);
            for (std::size_t j = prefix_len[t]; j < len; ++j) {
                const auto c = masses[t].order[j];
                if (first_step[c] == 0) {
                    first_step[c] = k;
                    ++included;
                }
            }
            prefix_len[t] = std::max(prefix_len[t], len);
        }
        if (included >= count) {
            stop = k;
            break;
        }
    }
    ranking.stop_mass = static_cast<double>(stop) / static_cast<double>(mass_steps);

    std::vector<double> max_abs(features);
    for (std::size_t c = 0; c < features; ++c) {
        max_abs[c] = detail::max_abs_weight(model, c);
    }
    std::vector<std::size_t> columns(features);
    std::iota(columns.begin(), columns.end(), std::size_t{0});
    const auto never = mass_steps + 1;
    auto step_of = [&](std::size_t c) { return first_step[c] == 0 ? never : first_step[c]; };
    std::sort(columns.begin(), columns.end(), [&](std::size_t a, std::size_t b) {
        if (step_of(a) != step_of(b)) {
            return step_of(a) < step_of(b);
        }
        if (max_abs[a] != max_abs[b]) {
            return max_abs[a] > max_abs[b];
        }
        return a < b;
    });
    columns.resize(count);

    std::vector<std::vector<std::size_t>> position(model.num_labels);
    for (std::size_t t = 0; t < model.num_labels; ++t) {
        position[t].assign(features, 0);
        for (std::size_t j = 0; j < masses[t].order.size(); ++j) {
            position[t][masses[t].order[j]] = j;
        }
    }

    for (auto c : columns) {
        ranking.ordered_neurons.push_back(model.source_index(c));
        ranking.inclusion_mass.push_back(first_step[c] == 0
                                             ? 1.0
                                             : static_cast<double>(first_step[c]) / static_cast<double>(mass_steps));
        std::vector<std::size_t> labels;
        if (first_step[c] != 0) {
            for (std::size_t t = 0; t < model.num_labels; ++t) {
                if (masses[t].total > 0.0 && position[t][c] < prefix_len[t]) {
                    labels.push_back(t);
                }
            }
        }
        ranking.attributed_labels.push_back(std::move(labels));
    }

    ranking.per_label_order.resize(model.num_labels);
    for (std::size_t t = 0; t < model.num_labels; ++t) {
        auto& order = ranking.per_label_order[t];
        order = masses[t].order;
        for (auto& c : order) {
            c = model.source_index(c);
        }
    }
    return ranking;
}

/// select_top over every feature: a full permutation of the model's neurons.
inline NeuronRanking full_ranking(const ProbeModel& model, std::size_t mass_steps = kDefaultMassSteps)
{
    return select_top(model, model.num_features, mass_steps);
}

/// Number of ranked neurons attributed to each label; shared neurons count once per label.
inline std::vector<std::size_t> label_neuron_counts(const NeuronRanking& ranking)
{
    std::vector<std::size_t> counts(ranking.num_labels(), 0);
    for (const auto& labels : ranking.attributed_labels) {
        for (auto t : labels) {
            ++counts.at(t);
        }
    }
    return counts;
}

inline nlohmann::json ranking_json(const NeuronRanking& r)
{
    nlohmann::json attributed = nlohmann::json::object();
    for (std::size_t i = 0; i < r.size(); ++i) {
        nlohmann::json names = nlohmann::json::array();
        for (auto t : r.attributed_labels[i]) {
            names.push_back(r.tagset.at(t));
        }
        attributed[std::to_string(r.ordered_neurons[i])] = std::move(names);
    }
    nlohmann::json counts = nlohmann::json::object();
    const auto per_label = label_neuron_counts(r);
    for (std::size_t t = 0; t < r.num_labels(); ++t) {
        counts[r.tagset[t]] = per_label[t];
    }
    nlohmann::json zero = nlohmann::json::array();
    for (auto t : r.zero_mass_labels) {
        zero.push_back(r.tagset.at(t));
    }
    return {{"ordered_neurons", r.ordered_neurons},
            {"inclusion_mass", r.inclusion_mass},
            {"attributed_labels", attributed},
            {"per_label_counts", counts},
            {"tagset", r.tagset},
            {"num_neurons", r.num_neurons},
            {"mass_step", 1.0 / static_cast<double>(r.mass_steps)},
            {"stop_mass", r.stop_mass},
            {"zero_mass_labels", zero}};
}

/// Inverse of ranking_json; per-label orders are not stored and come back empty.
inline NeuronRanking ranking_from_json(const nlohmann::json& j)
{
    NeuronRanking r;
    try {
        r.ordered_neurons = j.at("ordered_neurons").get<std::vector<std::size_t>>();
        r.inclusion_mass = j.at("inclusion_mass").get<std::vector<double>>();
        r.tagset = j.at("tagset").get<std::vector<std::string>>();
        r.num_neurons = j.at("num_neurons").get<std::size_t>();
        r.mass_steps = static_cast<std::size_t>(std::llround(1.0 / j.at("mass_step").get<double>()));
        r.stop_mass = j.at("stop_mass").get<double>();
        std::map<std::string, std::size_t> ids;
        for (std::size_t t = 0; t < r.tagset.size(); ++t) {
            ids[r.tagset[t]] = t;
        }
        const auto& attributed = j.at("attributed_labels");
        for (auto n : r.ordered_neurons) {
            std::vector<std::size_t> labels;
            for (const auto& name : attributed.at(std::to_string(n))) {
                labels.push_back(ids.at(name.get<std::string>()));
            }
            r.attributed_labels.push_back(std::move(labels));
        }
        for (const auto& name : j.at("zero_mass_labels")) {
            r.zero_mass_labels.push_back(ids.at(name.get<std::string>()));
        }
    } catch (const std::out_of_range& e) {
        throw Error(Errc::MalformedFile, std::string("ranking: ") + e.what());
    } catch (const nlohmann::json::exception& e) {
        throw Error(Errc::MalformedFile, std::string("ranking: ") + e.what());
    }
    if (r.inclusion_mass.size() != r.ordered_neurons.size()) {
        throw Error(Errc::MalformedFile, "ranking: inclusion_mass length differs from ordered_neurons");
    }
    return r;
}

} // namespace neuroprobe
