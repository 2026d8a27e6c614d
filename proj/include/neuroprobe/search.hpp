#pragma once

// Automated (lambda1, lambda2) selection. Every grid point trains a probe,
// ranks its neurons, and is scored by
//
//   S = alpha * (A_t - A_b) - beta * (A_z - A_l)
//
// where A_t / A_b keep only the top / bottom M*D ranked neurons (the rest
// zeroed), A_z is the unregularized probe's accuracy and A_l the point's own
// accuracy. All accuracies are measured on the dev split.

#include <neuroprobe/probe.hpp>
#include <neuroprobe/ranking.hpp>

#include <nlohmann/json.hpp>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <thread>
#include <tuple>
#include <vector>

namespace neuroprobe {

struct LambdaPair
{
    double lambda1 = 0.0;
    double lambda2 = 0.0;

    friend bool operator==(const LambdaPair&, const LambdaPair&) = default;
    friend bool operator<(const LambdaPair& a, const LambdaPair& b)
    {
        return std::tie(a.lambda1, a.lambda2) < std::tie(b.lambda1, b.lambda2);
    }
};

struct GridRow
{
    LambdaPair lambdas;
    double top_accuracy = 0.0;     ///< A_t
    double bottom_accuracy = 0.0;  ///< A_b
    double unregularized = 0.0;    ///< A_z
    double accuracy = 0.0;         ///< A_l
    double score = -std::numeric_limits<double>::infinity();
    std::optional<std::string> error;
};

struct SearchOptions
{
    double ablation_fraction = 0.2;
    double alpha = 0.5;
    double beta = 0.5;
    unsigned jobs = 1;
    std::size_t mass_steps = kDefaultMassSteps;
};

struct SearchResult
{
    std::vector<GridRow> grid; ///< in input order
    LambdaPair winner;
    double winner_score = -std::numeric_limits<double>::infinity();
    double ablation_fraction = 0.2;
    double alpha = 0.5;
    double beta = 0.5;
};

inline double score(double top_accuracy, double bottom_accuracy, double unregularized, double accuracy,
                    double alpha = 0.5, double beta = 0.5)
{
    return alpha * (top_accuracy - bottom_accuracy) - beta * (unregularized - accuracy);
}

/// {0, 1e-7, ..., 1e-1} squared, lambda1-major.
inline std::vector<LambdaPair> default_grid()
{
    const double values[] = {0.0, 1e-7, 1e-6, 1e-5, 1e-4, 1e-3, 1e-2, 1e-1};
    std::vector<LambdaPair> grid;
    for (double l1 : values) {
        for (double l2 : values) {
            grid.push_back({l1, l2});
        }
    }
    return grid;
}

/// ceil(fraction * total) clamped to [1, total]. A tiny slack keeps products
/// such as 0.2 * 200 from rounding up past an exact integer.
inline std::size_t slice_size(double fraction, std::size_t total)
{
    if (!(fraction > 0.0 && fraction <= 1.0)) {
        throw Error(Errc::InvalidConfig, "fraction must lie in (0, 1]");
    }
    auto k = static_cast<std::size_t>(std::ceil(fraction * static_cast<double>(total) - 1e-9));
    return std::clamp<std::size_t>(k, 1, total);
}

inline std::vector<std::size_t> top_slice(const NeuronRanking& full, std::size_t k)
{
    return {full.ordered_neurons.begin(), full.ordered_neurons.begin() + static_cast<std::ptrdiff_t>(k)};
}

inline std::vector<std::size_t> bottom_slice(const NeuronRanking& full, std::size_t k)
{
    return {full.ordered_neurons.end() - static_cast<std::ptrdiff_t>(k), full.ordered_neurons.end()};
}

/// Winner is the highest score; equal scores go to the smaller (lambda1, lambda2).
inline void pick_winner(SearchResult& result)
{
    const GridRow* best = nullptr;
    for (const auto& row : result.grid) {
        if (best == nullptr || row.score > best->score ||
            (row.score == best->score && row.lambdas < best->lambdas)) {
            best = &row;
        }
    }
    if (best != nullptr) {
        result.winner = best->lambdas;
        result.winner_score = best->score;
    }
}

inline SearchResult grid_search(const ActivationDataset& train_data, const LabelColumn& train_labels,
                                const ActivationDataset& dev_data, const LabelColumn& dev_labels,
                                std::span<const LambdaPair> grid, const TrainConfig& config,
                                const SearchOptions& options = {})
{
    if (grid.empty()) {
        throw Error(Errc::InvalidConfig, "empty lambda grid");
    }
    if (!(options.ablation_fraction > 0.0 && options.ablation_fraction < 1.0)) {
        throw Error(Errc::InvalidConfig, "ablation fraction must lie in (0, 1)");
    }
    config.validate();

    SearchResult result;
    result.ablation_fraction = options.ablation_fraction;
    result.alpha = options.alpha;
    result.beta = options.beta;

    const auto unregularized = train(train_data, train_labels, config, 0.0, 0.0);
    const double a_z = evaluate(unregularized, dev_data, dev_labels);
    const auto k = slice_size(options.ablation_fraction, train_data.num_neurons());

    result.grid.resize(grid.size());
    auto run_point = [&](std::size_t i) {
        GridRow& row = result.grid[i];
        row.lambdas = grid[i];
        row.unregularized = a_z;
        try {
            const auto model = train(train_data, train_labels, config, grid[i].lambda1, grid[i].lambda2);
            row.accuracy = evaluate(model, dev_data, dev_labels);
            const auto ranking = full_ranking(model, options.mass_steps);
            row.top_accuracy = evaluate_ablated(model, dev_data, dev_labels, top_slice(ranking, k));
            row.bottom_accuracy = evaluate_ablated(model, dev_data, dev_labels, bottom_slice(ranking, k));
            row.score = score(row.top_accuracy, row.bottom_accuracy, a_z, row.accuracy, options.alpha, options.beta);
        } catch (const std::exception& e) {
            row.score = -std::numeric_limits<double>::infinity();
            row.error = e.what();
        }
    };

    const unsigned jobs = std::max(1u, std::min<unsigned>(options.jobs, static_cast<unsigned>(grid.size())));
    if (jobs == 1) {
        for (std::size_t i = 0; i < grid.size(); ++i) {
            run_point(i);
        }
    } else {
        std::atomic<std::size_t> next{0};
        std::vector<std::jthread> workers;
        for (unsigned w = 0; w < jobs; ++w) {
            workers.emplace_back([&] {
                for (std::size_t i = next++; i < grid.size(); i = next++) {
                    run_point(i);
                }
            });
        }
    }
    pick_winner(result);
    return result;
}

inline nlohmann::json search_result_json(const SearchResult& r)
{
    auto num = [](double v) -> nlohmann::json {
        if (!std::isfinite(v)) {
            return nullptr;
        }
        return v;
    };
    nlohmann::json rows = nlohmann::json::array();
    for (const auto& row : r.grid) {
        nlohmann::json j = {{"lambda1", row.lambdas.lambda1},
                            {"lambda2", row.lambdas.lambda2},
                            {"A_t", row.top_accuracy},
                            {"A_b", row.bottom_accuracy},
                            {"A_z", row.unregularized},
                            {"A_l", row.accuracy},
                            {"score", num(row.score)}};
        if (row.error) {
            j["error"] = *row.error;
        }
        rows.push_back(std::move(j));
    }
    return {{"grid", rows},
            {"winner", {{"lambda1", r.winner.lambda1}, {"lambda2", r.winner.lambda2}, {"score", num(r.winner_score)}}},
            {"ablation_fraction", r.ablation_fraction},
            {"alpha", r.alpha},
            {"beta", r.beta},
            {"split", "dev"}};
}

/// Parses [[l1, l2], ...] or [{"lambda1":..,"lambda2":..}, ...].
inline std::vector<LambdaPair> grid_from_json(const nlohmann::json& j)
{
    std::vector<LambdaPair> grid;
    try {
        for (const auto& item : j) {
            if (item.is_array()) {
                if (item.size() != 2) {
                    throw Error(Errc::InvalidConfig, "grid entries must be [lambda1, lambda2]");
                }
                grid.push_back({item[0].get<double>(), item[1].get<double>()});
            } else {
                grid.push_back({item.at("lambda1").get<double>(), item.at("lambda2").get<double>()});
            }
        }
    } catch (const nlohmann::json::exception& e) {
        throw Error(Errc::InvalidConfig, std::string("grid: ") + e.what());
    }
    if (grid.empty()) {
        throw Error(Errc::InvalidConfig, "empty lambda grid");
    }
    return grid;
}

} // namespace neuroprobe
