#include <neuroprobe/ranking.hpp>

#include <gtest/gtest.h>

#include <algorithm>
#include <random>
#include <set>

using namespace neuroprobe;

namespace {

ProbeModel model_from(std::vector<std::vector<double>> rows)
{
    auto m = ProbeModel::zeros(rows.size(), rows.front().size());
    for (std::size_t t = 0; t < rows.size(); ++t) {
        for (std::size_t c = 0; c < rows[t].size(); ++c) {
            m.weight(t, c) = rows[t][c];
        }
    }
    return m;
}

/// Straightforward re-derivation of the ordering: scan every mass step,
/// recompute every label prefix from scratch, record first entry.
struct BruteForce
{
    std::vector<std::size_t> order;
    std::vector<double> mass;
};

BruteForce brute_force_order(const ProbeModel& m, std::size_t steps)
{
    const auto d = m.num_features;
    std::vector<std::size_t> first(d, steps + 1);
    for (std::size_t k = 1; k <= steps; ++k) {
        const double p = static_cast<double>(k) / static_cast<double>(steps);
        for (std::size_t t = 0; t < m.num_labels; ++t) {
            std::vector<std::size_t> cols(d);
            std::iota(cols.begin(), cols.end(), std::size_t{0});
            std::stable_sort(cols.begin(), cols.end(), [&](auto a, auto b) {
                return std::abs(m.weight(t, a)) > std::abs(m.weight(t, b));
            });
            double total = 0.0;
            for (auto c : cols) total += std::abs(m.weight(t, c));
            if (total == 0.0) continue;
            double acc = 0.0;
            for (auto c : cols) {
                if (acc >= p * total * (1.0 - 1e-12)) break;
                acc += std::abs(m.weight(t, c));
                first[c] = std::min(first[c], k);
            }
        }
    }
    std::vector<double> max_abs(d, 0.0);
    for (std::size_t c = 0; c < d; ++c) {
        for (std::size_t t = 0; t < m.num_labels; ++t) {
            max_abs[c] = std::max(max_abs[c], std::abs(m.weight(t, c)));
        }
    }
    BruteForce out;
    out.order.resize(d);
    std::iota(out.order.begin(), out.order.end(), std::size_t{0});
    std::stable_sort(out.order.begin(), out.order.end(), [&](auto a, auto b) {
        if (first[a] != first[b]) return first[a] < first[b];
        return max_abs[a] > max_abs[b];
    });
    for (auto c : out.order) {
        out.mass.push_back(first[c] > steps ? 1.0 : static_cast<double>(first[c]) / static_cast<double>(steps));
    }
    return out;
}

ProbeModel random_model(std::size_t t, std::size_t d, std::mt19937_64& rng, double sparsity)
{
    std::normal_distribution<double> g(0.0, 1.0);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    auto m = ProbeModel::zeros(t, d);
    for (auto& w : m.weights) {
        w = u(rng) < sparsity ? 0.0 : g(rng);
    }
    return m;
}

} // namespace

TEST(LabelMassPrefix, SingleLabelExamples)
{
    const auto m = model_from({{0.5, 0.3, 0.2}});
    EXPECT_EQ(label_mass_prefix(m, 0, 0.5), (std::vector<std::size_t>{0}));
    EXPECT_EQ(label_mass_prefix(m, 0, 0.8), (std::vector<std::size_t>{0, 1}));
    EXPECT_EQ(label_mass_prefix(m, 0, 0.81), (std::vector<std::size_t>{0, 1, 2}));
    EXPECT_EQ(label_mass_prefix(m, 0, 1.0), (std::vector<std::size_t>{0, 1, 2}));
}

TEST(LabelMassPrefix, NegativeWeightsCountByMagnitude)
{
    const auto m = model_from({{0.1, -0.6, 0.3}});
    EXPECT_EQ(label_mass_prefix(m, 0, 0.6), (std::vector<std::size_t>{1}));
    EXPECT_EQ(label_mass_prefix(m, 0, 0.9), (std::vector<std::size_t>{1, 2}));
}

TEST(LabelMassPrefix, TiesPreferLowerIndex)
{
    const auto m = model_from({{0.25, 0.25, 0.25, 0.25}});
    EXPECT_EQ(label_mass_prefix(m, 0, 0.5), (std::vector<std::size_t>{0, 1}));
    EXPECT_EQ(per_label_order(m)[0], (std::vector<std::size_t>{0, 1, 2, 3}));
}

TEST(LabelMassPrefix, Errors)
{
    const auto zero = ProbeModel::zeros(2, 3);
    try {
        label_mass_prefix(zero, 0, 0.5);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), Errc::ZeroMass);
    }
    const auto m = model_from({{1.0, 2.0}});
    EXPECT_THROW(label_mass_prefix(m, 0, 0.0), Error);
    EXPECT_THROW(label_mass_prefix(m, 0, 1.5), Error);
    EXPECT_THROW(label_mass_prefix(m, 1, 0.5), Error);
}

TEST(SelectTop, HandWorkedTwoLabels)
{
    // label A mass is concentrated on neuron 2, label B on neuron 0
    const auto m = model_from({{0.0, 0.1, 0.9, 0.0}, {0.7, 0.0, 0.0, 0.3}});
    const auto r = select_top(m, 2);
    EXPECT_EQ(r.ordered_neurons, (std::vector<std::size_t>{2, 0}));
    EXPECT_EQ(r.inclusion_mass, (std::vector<double>{0.001, 0.001}));
    EXPECT_EQ(r.attributed_labels, (std::vector<std::vector<std::size_t>>{{0}, {1}}));
    EXPECT_DOUBLE_EQ(r.stop_mass, 0.001);

    const auto full = full_ranking(m);
    EXPECT_EQ(full.ordered_neurons, (std::vector<std::size_t>{2, 0, 3, 1}));
    // neuron 3 enters once B needs more than 0.7 of its mass; neuron 1 once A needs more than 0.9
    EXPECT_DOUBLE_EQ(full.inclusion_mass[2], 0.701);
    EXPECT_DOUBLE_EQ(full.inclusion_mass[3], 0.901);
    EXPECT_DOUBLE_EQ(full.stop_mass, 0.901);
}

TEST(SelectTop, InvalidCount)
{
    const auto m = model_from({{1.0, 2.0, 3.0}});
    for (std::size_t n : {std::size_t{0}, std::size_t{4}}) {
        try {
            select_top(m, n);
            FAIL();
        } catch (const Error& e) {
            EXPECT_EQ(e.code(), Errc::InvalidN);
        }
    }
}

TEST(SelectTop, ZeroMassLabelSkipped)
{
    const auto m = model_from({{0.0, 0.0, 0.0}, {0.2, 0.0, 0.8}});
    const auto r = full_ranking(m);
    EXPECT_EQ(r.zero_mass_labels, (std::vector<std::size_t>{0}));
    EXPECT_EQ(r.ordered_neurons, (std::vector<std::size_t>{2, 0, 1}));
    // neuron 1 has no weight anywhere: appended with mass 1.0 and no labels
    EXPECT_EQ(r.inclusion_mass.back(), 1.0);
    EXPECT_TRUE(r.attributed_labels.back().empty());
    for (const auto& labels : r.attributed_labels) {
        EXPECT_EQ(std::count(labels.begin(), labels.end(), 0u), 0);
    }
}

TEST(SelectTop, AllZeroModelFallsBackToIndexOrder)
{
    const auto r = full_ranking(ProbeModel::zeros(3, 5));
    EXPECT_EQ(r.ordered_neurons, (std::vector<std::size_t>{0, 1, 2, 3, 4}));
    EXPECT_EQ(r.zero_mass_labels.size(), 3u);
}

TEST(SelectTop, SubsetModelReportsSourceIndices)
{
    auto m = model_from({{0.1, 0.9}});
    m.subset = std::vector<std::size_t>{17, 4};
    const auto r = full_ranking(m);
    EXPECT_EQ(r.ordered_neurons, (std::vector<std::size_t>{4, 17}));
    EXPECT_EQ(label_mass_prefix(m, 0, 0.5), (std::vector<std::size_t>{4}));
}

TEST(SelectTop, MatchesBruteForceOracle)
{
    std::mt19937_64 rng(10);
    for (int trial = 0; trial < 40; ++trial) {
        const std::size_t t = 1 + rng() % 5, d = 1 + rng() % 40;
        const auto m = random_model(t, d, rng, trial % 3 == 0 ? 0.6 : 0.0);
        const std::size_t steps = trial % 2 ? 1000 : 37;
        const auto expected = brute_force_order(m, steps);
        const auto r = full_ranking(m, steps);
        EXPECT_EQ(r.ordered_neurons, expected.order) << "trial " << trial;
        EXPECT_EQ(r.inclusion_mass, expected.mass) << "trial " << trial;
    }
}

TEST(SelectTop, PermutationAndNestedPrefixes)
{
    std::mt19937_64 rng(11);
    for (int trial = 0; trial < 20; ++trial) {
        const std::size_t t = 2 + rng() % 4, d = 2 + rng() % 30;
        const auto m = random_model(t, d, rng, 0.3);
        const auto full = full_ranking(m);
        std::set<std::size_t> unique(full.ordered_neurons.begin(), full.ordered_neurons.end());
        EXPECT_EQ(unique.size(), d);
        EXPECT_EQ(*unique.rbegin(), d - 1);
        EXPECT_TRUE(std::is_sorted(full.inclusion_mass.begin(), full.inclusion_mass.end()));
        for (std::size_t n = 1; n <= d; ++n) {
            const auto r = select_top(m, n);
            ASSERT_EQ(r.size(), n);
            EXPECT_TRUE(std::equal(r.ordered_neurons.begin(), r.ordered_neurons.end(), full.ordered_neurons.begin()))
                << "n " << n;
        }
    }
}

TEST(SelectTop, AttributionMatchesPrefixesAtStopMass)
{
    std::mt19937_64 rng(12);
    for (int trial = 0; trial < 20; ++trial) {
        const std::size_t t = 2 + rng() % 4, d = 5 + rng() % 20;
        const auto m = random_model(t, d, rng, 0.2);
        const auto r = select_top(m, 1 + rng() % d);
        for (std::size_t i = 0; i < r.size(); ++i) {
            if (r.inclusion_mass[i] > r.stop_mass) {
                EXPECT_TRUE(r.attributed_labels[i].empty());
                continue;
            }
            for (std::size_t label = 0; label < t; ++label) {
                if (std::find(r.zero_mass_labels.begin(), r.zero_mass_labels.end(), label) !=
                    r.zero_mass_labels.end()) {
                    continue;
                }
                const auto prefix = label_mass_prefix(m, label, r.stop_mass);
                const bool in_prefix =
                    std::find(prefix.begin(), prefix.end(), r.ordered_neurons[i]) != prefix.end();
                const bool attributed = std::find(r.attributed_labels[i].begin(), r.attributed_labels[i].end(),
                                                  label) != r.attributed_labels[i].end();
                EXPECT_EQ(in_prefix, attributed);
            }
        }
    }
}

TEST(SelectTop, LabelCountsAndJsonRoundTrip)
{
    auto m = model_from({{0.0, 0.1, 0.9, 0.0}, {0.7, 0.0, 0.5, 0.3}, {0.0, 0.0, 0.0, 0.0}});
    m.tagset = {"A", "B", "C"};
    const auto r = full_ranking(m);
    const auto counts = label_neuron_counts(r);
    ASSERT_EQ(counts.size(), 3u);
    EXPECT_EQ(counts[2], 0u);
    const auto j = ranking_json(r);
    EXPECT_EQ(j["tagset"], nlohmann::json({"A", "B", "C"}));
    EXPECT_EQ(j["zero_mass_labels"], nlohmann::json({"C"}));
    EXPECT_DOUBLE_EQ(j["mass_step"].get<double>(), 0.001);
    EXPECT_EQ(j["per_label_counts"]["A"].get<std::size_t>(), counts[0]);
    const auto back = ranking_from_json(nlohmann::json::parse(j.dump()));
    EXPECT_EQ(back.ordered_neurons, r.ordered_neurons);
    EXPECT_EQ(back.inclusion_mass, r.inclusion_mass);
    EXPECT_EQ(back.attributed_labels, r.attributed_labels);
    EXPECT_EQ(back.zero_mass_labels, r.zero_mass_labels);
    EXPECT_EQ(back.mass_steps, r.mass_steps);
    EXPECT_EQ(back.stop_mass, r.stop_mass);
}

TEST(SelectTop, MalformedJsonRejected)
{
    try {
        ranking_from_json(nlohmann::json{{"ordered_neurons", {1, 2}}});
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), Errc::MalformedFile);
    }
}
