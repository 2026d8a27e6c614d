#pragma once

#include <neuroprobe/probe.hpp>
#include <neuroprobe/ranking.hpp>

#include <nlohmann/json.hpp>

#include <string>
#include <vector>

namespace neuroprobe {

struct OracleResult
{
    ProbeModel model;
    double accuracy = 0.0; ///< Acc_a
};

/// Probe on every neuron, scored on `eval_data`.
inline OracleResult oracle(const ActivationDataset& train_data, const LabelColumn& train_labels,
                           const ActivationDataset& eval_data, const LabelColumn& eval_labels, double lambda1,
                           double lambda2, const TrainConfig& config)
{
    OracleResult out{train(train_data, train_labels, config, lambda1, lambda2), 0.0};
    out.accuracy = evaluate(out.model, eval_data, eval_labels);
    return out;
}

struct Trial
{
    std::size_t num_neurons = 0;
    double accuracy = 0.0;
};

struct SelectionTrace
{
    double oracle_accuracy = 0.0;
    double delta = 0.0; ///< accuracy points, e.g. 0.5
    std::size_t step_size = 0;
    std::vector<Trial> trials;
    std::vector<std::size_t> minimal_set;
    bool threshold_met = false; ///< false only when the forced trial at N = D fell short
    std::string eval_split = "test";

    double threshold() const { return oracle_accuracy - delta / 100.0; }
};

/// Neurons added per trial: ceil(1% of D).
inline std::size_t selection_step(std::size_t num_neurons) { return (num_neurons + 99) / 100; }

/// Retrains on growing prefixes of `ranking` (1% of D per step) and stops at
/// the first prefix within `delta` points of the oracle, or at all D neurons.
inline SelectionTrace minimal_neurons(const NeuronRanking& ranking, const ActivationDataset& train_data,
                                      const LabelColumn& train_labels, const ActivationDataset& eval_data,
                                      const LabelColumn& eval_labels, double oracle_accuracy, double delta,
                                      double lambda1, double lambda2, const TrainConfig& config)
{
    if (!(delta > 0.0)) {
        throw Error(Errc::InvalidConfig, "delta must be > 0");
    }
    const auto d = train_data.num_neurons();
    if (ranking.size() != d) {
        throw Error(Errc::InvalidConfig, "minimal selection needs a full ranking of all " + std::to_string(d) +
                                             " neurons, got " + std::to_string(ranking.size()));
    }
    SelectionTrace trace;
    trace.oracle_accuracy = oracle_accuracy;
    trace.delta = delta;
    trace.step_size = selection_step(d);
    const double threshold = trace.threshold() - 1e-12;

    for (std::size_t n = trace.step_size;; n = std::min(n + trace.step_size, d)) {
        const std::span<const std::size_t> prefix(ranking.ordered_neurons.data(), n);
        const auto model = train(train_data, train_labels, config, lambda1, lambda2, prefix);
        const double acc = evaluate(model, eval_data, eval_labels);
        trace.trials.push_back({n, acc});
        const bool accepted = acc >= threshold;
        if (accepted || n == d) {
            trace.threshold_met = accepted;
            trace.minimal_set.assign(prefix.begin(), prefix.end());
            break;
        }
    }
    return trace;
}

inline nlohmann::json selection_trace_json(const SelectionTrace& t)
{
    nlohmann::json trials = nlohmann::json::array();
    for (const auto& trial : t.trials) {
        trials.push_back({{"num_neurons", trial.num_neurons}, {"accuracy", trial.accuracy}});
    }
    return {{"oracle_accuracy", t.oracle_accuracy},
            {"delta", t.delta},
            {"step_size", t.step_size},
            {"trials", trials},
            {"minimal_set", t.minimal_set},
            {"num_selected", t.minimal_set.size()},
            {"threshold_met", t.threshold_met},
            {"eval_split", t.eval_split}};
}

} // namespace neuroprobe
