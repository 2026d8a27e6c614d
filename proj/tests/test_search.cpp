#include <neuroprobe/search.hpp>
#include <neuroprobe/synthetic.hpp>

#include <gtest/gtest.h>

#include <algorithm>
#include <random>

using namespace neuroprobe;

namespace {

const synthetic::PlantedCorpus& corpus()
{
    static const auto c = [] {
        synthetic::PlantedSpec spec;
        spec.train_tokens = 2000;
        spec.dev_tokens = 600;
        spec.test_tokens = 600;
        spec.num_neurons = 100;
        spec.num_labels = 4;
        spec.informative.resize(10);
        std::iota(spec.informative.begin(), spec.informative.end(), std::size_t{0});
        spec.layers = synthetic::uniform_layers(100, 4);
        spec.seed = 9;
        return synthetic::make_planted(spec);
    }();
    return c;
}

std::vector<LambdaPair> small_grid()
{
    std::vector<LambdaPair> grid;
    for (double l1 : {0.0, 1e-4, 1e-3, 1e-2}) {
        for (double l2 : {0.0, 1e-4, 1e-3, 1e-2}) {
            grid.push_back({l1, l2});
        }
    }
    return grid;
}

SearchResult run(std::span<const LambdaPair> grid, unsigned jobs = 1)
{
    const auto& c = corpus();
    SearchOptions opts;
    opts.jobs = jobs;
    TrainConfig config;
    config.seed = 2;
    return grid_search(c.train.data, c.train.labels, c.dev.data, c.dev.labels, grid, config, opts);
}

} // namespace

TEST(Score, Examples)
{
    EXPECT_NEAR(score(0.9016, 0.1686, 0.9604, 0.9604), 0.3665, 1e-12);
    EXPECT_EQ(score(0.7, 0.7, 0.8, 0.8), 0.0);
    EXPECT_NEAR(score(0.5, 0.5, 0.9, 0.8, 0.0, 1.0), -0.1, 1e-12);
}

TEST(Score, SwappingSlicesNegatesFirstTerm)
{
    std::mt19937_64 rng(3);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (int i = 0; i < 200; ++i) {
        const double at = u(rng), ab = u(rng);
        EXPECT_EQ(score(at, ab, 0.5, 0.5), -score(ab, at, 0.5, 0.5));
    }
}

TEST(DefaultGrid, Contents)
{
    const auto grid = default_grid();
    EXPECT_EQ(grid.size(), 64u);
    auto has = [&](double a, double b) {
        return std::find(grid.begin(), grid.end(), LambdaPair{a, b}) != grid.end();
    };
    EXPECT_TRUE(has(0.001, 0.01));
    EXPECT_TRUE(has(1e-5, 1e-6));
    EXPECT_TRUE(has(0.0, 0.0));
    EXPECT_TRUE(has(0.1, 1e-7));
}

TEST(SliceSize, CeilWithExactProducts)
{
    EXPECT_EQ(slice_size(0.2, 200), 40u);
    EXPECT_EQ(slice_size(0.2, 20), 4u);
    EXPECT_EQ(slice_size(0.2, 21), 5u);
    EXPECT_EQ(slice_size(0.2, 3), 1u);
    EXPECT_THROW(slice_size(0.0, 10), Error);
}

TEST(PickWinner, TieGoesToSmallerLambdas)
{
    SearchResult r;
    r.grid = {{{1e-3, 0.0}, 0, 0, 0, 0, 0.25, {}}, {{1e-4, 1e-2}, 0, 0, 0, 0, 0.25, {}},
              {{1e-4, 1e-3}, 0, 0, 0, 0, 0.25, {}}, {{0.0, 0.0}, 0, 0, 0, 0, 0.1, {}}};
    pick_winner(r);
    EXPECT_EQ(r.winner, (LambdaPair{1e-4, 1e-3}));
    EXPECT_EQ(r.winner_score, 0.25);
}

TEST(PickWinner, InvariantUnderPermutation)
{
    std::mt19937_64 rng(4);
    std::vector<GridRow> rows;
    for (const auto& p : default_grid()) {
        rows.push_back({p, 0, 0, 0, 0, static_cast<double>(rng() % 5) / 10.0, {}});
    }
    SearchResult base;
    base.grid = rows;
    pick_winner(base);
    for (int trial = 0; trial < 20; ++trial) {
        std::shuffle(rows.begin(), rows.end(), rng);
        SearchResult r;
        r.grid = rows;
        pick_winner(r);
        EXPECT_EQ(r.winner, base.winner);
    }
}

TEST(GridSearch, SinglePointWins)
{
    const std::vector<LambdaPair> grid{{1e-3, 1e-3}};
    const auto r = run(grid);
    ASSERT_EQ(r.grid.size(), 1u);
    EXPECT_EQ(r.winner, grid[0]);
    EXPECT_EQ(r.winner_score, r.grid[0].score);
}

TEST(GridSearch, EmptyGridRejected)
{
    try {
        run({});
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), Errc::InvalidConfig);
    }
}

TEST(GridSearch, FailedPointScoresNegativeInfinity)
{
    const std::vector<LambdaPair> grid{{-1.0, 0.0}, {0.0, 1e-3}};
    const auto r = run(grid);
    EXPECT_EQ(r.grid[0].score, -std::numeric_limits<double>::infinity());
    EXPECT_TRUE(r.grid[0].error.has_value());
    EXPECT_EQ(r.winner, grid[1]);
    const auto j = search_result_json(r);
    EXPECT_TRUE(j["grid"][0]["score"].is_null());
    EXPECT_TRUE(j["grid"][0].contains("error"));
    EXPECT_EQ(j["split"], "dev");
}

TEST(GridSearch, PlantedWinnerSeparatesSlices)
{
    const auto grid = small_grid();
    const auto r = run(grid);
    ASSERT_EQ(r.grid.size(), 16u);
    double best = -1.0;
    for (const auto& row : r.grid) {
        EXPECT_EQ(row.unregularized, r.grid.front().unregularized);
        EXPECT_EQ(row.score, score(row.top_accuracy, row.bottom_accuracy, row.unregularized, row.accuracy));
        best = std::max(best, row.score);
        if (row.lambdas == LambdaPair{0.0, 0.0}) {
            EXPECT_EQ(row.accuracy, row.unregularized);
        }
    }
    EXPECT_EQ(r.winner_score, best);
    const auto& winner = *std::find_if(r.grid.begin(), r.grid.end(), [&](const auto& row) {
        return row.lambdas == r.winner;
    });
    EXPECT_GE(winner.top_accuracy - winner.bottom_accuracy, 0.3);
}

TEST(GridSearch, ParallelMatchesSerial)
{
    const auto grid = small_grid();
    const auto serial = search_result_json(run(grid, 1)).dump();
    const auto parallel = search_result_json(run(grid, 4)).dump();
    EXPECT_EQ(serial, parallel);
}

TEST(GridSearch, WinnerInvariantUnderGridOrder)
{
    auto grid = small_grid();
    const auto base = run(grid);
    std::mt19937_64 rng(5);
    std::shuffle(grid.begin(), grid.end(), rng);
    EXPECT_EQ(run(grid).winner, base.winner);
}

TEST(GridJson, BothShapesParse)
{
    const auto a = grid_from_json(nlohmann::json::parse("[[0, 0.001], [1e-5, 1e-6]]"));
    const auto b = grid_from_json(nlohmann::json::parse(R"([{"lambda1":0,"lambda2":0.001},{"lambda1":1e-5,"lambda2":1e-6}])"));
    EXPECT_EQ(a, b);
    EXPECT_EQ(a[1], (LambdaPair{1e-5, 1e-6}));
    EXPECT_THROW(grid_from_json(nlohmann::json::parse("[]")), Error);
    EXPECT_THROW(grid_from_json(nlohmann::json::parse("[[1, 2, 3]]")), Error);
}
