#include <neuroprobe/dataset.hpp>

#include "support/oracles.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <fstream>
#include <limits>
#include <random>

using namespace neuroprobe;

namespace {

void write_file(const fs::path& p, const std::string& text)
{
    std::ofstream out(p, std::ios::binary);
    out << text;
}

void write_floats(const fs::path& p, const std::vector<float>& v, std::size_t truncate = 0)
{
    std::ofstream out(p, std::ios::binary);
    out.write(reinterpret_cast<const char*>(v.data()), static_cast<std::streamsize>(v.size() * 4 - truncate));
}

/// N=2, D=3 dataset with one "pos" column.
fs::path tiny_dataset(const std::string& name)
{
    auto dir = oracles::scratch_dir(name);
    write_file(dir / "meta.json", R"({"version":1,"num_tokens":2,"num_neurons":3,"dtype":"f32",
        "byte_order":"little","layout":"row_major",
        "layers":[{"name":"l0","start":0,"end":2},{"name":"l1","start":2,"end":3}]})");
    write_floats(dir / "activations.bin", {1.f, 2.f, 3.f, 4.f, 5.f, 6.f});
    write_file(dir / "tokens.tsv", "0\t0\tThe\n0\t1\tcat\n");
    write_file(dir / "pos.labels", "DT\nNN\n");
    return dir;
}

Errc load_error(const fs::path& dir)
{
    try {
        load_dataset(dir);
    } catch (const Error& e) {
        return e.code();
    }
    ADD_FAILURE() << "expected load_dataset to fail";
    return Errc::InvalidConfig;
}

ActivationDataset random_dataset(std::size_t n, std::size_t d, std::uint64_t seed)
{
    std::mt19937_64 rng(seed);
    std::normal_distribution<float> g(0.f, 3.f);
    std::vector<float> v(n * d);
    for (auto& x : v) {
        x = g(rng);
    }
    std::vector<TokenRecord> tokens;
    for (std::size_t r = 0; r < n; ++r) {
        tokens.push_back({static_cast<std::int64_t>(r / 4), static_cast<std::int64_t>(r % 4), "t" + std::to_string(r % 7)});
    }
    return ActivationDataset(n, d, std::move(v), std::move(tokens), {{"emb", 0, d / 2}, {"l1", d / 2, d}});
}

} // namespace

TEST(Dataset, LoadsTinyDirectory)
{
    const auto loaded = load_dataset(tiny_dataset("tiny"));
    EXPECT_EQ(loaded.data.num_tokens(), 2u);
    EXPECT_EQ(loaded.data.num_neurons(), 3u);
    EXPECT_FLOAT_EQ(loaded.data.at(1, 2), 6.f);
    EXPECT_EQ(loaded.data.tokens()[1].surface, "cat");
    ASSERT_EQ(loaded.columns.size(), 1u);
    const auto& pos = loaded.column("pos");
    EXPECT_EQ(pos.tagset, (std::vector<std::string>{"DT", "NN"}));
    EXPECT_EQ(pos.labels, (std::vector<std::uint32_t>{0, 1}));
}

TEST(Dataset, TruncatedBinaryIsSizeMismatch)
{
    const auto dir = tiny_dataset("truncated");
    write_floats(dir / "activations.bin", {1.f, 2.f, 3.f, 4.f, 5.f, 6.f}, 1);
    ASSERT_EQ(fs::file_size(dir / "activations.bin"), 23u);
    EXPECT_EQ(load_error(dir), Errc::SizeMismatch);
}

TEST(Dataset, LayerMapGapRejected)
{
    EXPECT_THROW(validate_layer_map({{"l0", 0, 2}, {"l1", 3, 5}}, 5), Error);
    try {
        validate_layer_map({{"l0", 0, 2}, {"l1", 3, 5}}, 5);
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), Errc::LayerMapGap);
    }
    EXPECT_NO_THROW(validate_layer_map({{"l0", 0, 2}, {"l1", 2, 5}}, 5));

    const auto dir = tiny_dataset("gap");
    write_file(dir / "meta.json", R"({"version":1,"num_tokens":2,"num_neurons":3,"dtype":"f32",
        "byte_order":"little","layout":"row_major",
        "layers":[{"name":"l0","start":0,"end":1},{"name":"l1","start":2,"end":3}]})");
    EXPECT_EQ(load_error(dir), Errc::LayerMapGap);
}

TEST(Dataset, LayerMapMustCoverAllNeurons)
{
    try {
        validate_layer_map({{"l0", 0, 2}}, 3);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), Errc::LayerMapGap);
    }
}

TEST(Dataset, NonFiniteRejected)
{
    const auto dir = tiny_dataset("nan");
    write_floats(dir / "activations.bin", {1.f, std::numeric_limits<float>::quiet_NaN(), 3.f, 4.f, 5.f, 6.f});
    EXPECT_EQ(load_error(dir), Errc::NonFiniteValue);
    write_floats(dir / "activations.bin", {1.f, 2.f, 3.f, std::numeric_limits<float>::infinity(), 5.f, 6.f});
    EXPECT_EQ(load_error(dir), Errc::NonFiniteValue);
}

TEST(Dataset, LabelCountMismatch)
{
    const auto dir = tiny_dataset("labels");
    write_file(dir / "pos.labels", "DT\n");
    EXPECT_EQ(load_error(dir), Errc::LabelAlignmentError);
}

TEST(Dataset, MissingFiles)
{
    auto dir = tiny_dataset("missing_labels");
    fs::remove(dir / "pos.labels");
    EXPECT_EQ(load_error(dir), Errc::MissingFile);
    dir = tiny_dataset("missing_meta");
    fs::remove(dir / "meta.json");
    EXPECT_EQ(load_error(dir), Errc::MissingFile);
    dir = tiny_dataset("missing_bin");
    fs::remove(dir / "activations.bin");
    EXPECT_EQ(load_error(dir), Errc::MissingFile);
}

TEST(Dataset, TokenIndicesMustBeContiguous)
{
    const auto dir = tiny_dataset("tokens");
    write_file(dir / "tokens.tsv", "0\t0\tThe\n0\t2\tcat\n");
    EXPECT_EQ(load_error(dir), Errc::MalformedFile);
    write_file(dir / "tokens.tsv", "0\t0\tThe\n0\t0\tcat\n");
    EXPECT_EQ(load_error(dir), Errc::MalformedFile);
    // different sentences each restart at 0
    write_file(dir / "tokens.tsv", "0\t0\tThe\n1\t0\tcat\n");
    EXPECT_NO_THROW(load_dataset(dir));
}

TEST(Dataset, TagsetSidecarDefinesOrder)
{
    const auto dir = tiny_dataset("tagset");
    write_file(dir / "pos.tagset", "NN\nDT\nVB\n");
    const auto loaded = load_dataset(dir);
    const auto& pos = loaded.column("pos");
    EXPECT_EQ(pos.tagset.size(), 3u);
    EXPECT_EQ(pos.labels, (std::vector<std::uint32_t>{1, 0}));

    write_file(dir / "pos.tagset", "NN\n");
    EXPECT_EQ(load_error(dir), Errc::LabelAlignmentError);
}

TEST(Dataset, WriteLoadRoundTripIsByteIdentical)
{
    for (std::uint64_t seed : {1u, 2u, 3u}) {
        const auto data = random_dataset(13, 6, seed);
        LabelColumn col{"sem", std::vector<std::uint32_t>(13, 0), {"A", "B"}};
        for (std::size_t i = 0; i < 13; i += 3) {
            col.labels[i] = 1;
        }
        const auto dir = oracles::scratch_dir("roundtrip" + std::to_string(seed));
        write_dataset(dir / "a", data, std::span<const LabelColumn>(&col, 1));
        const auto loaded = load_dataset(dir / "a");
        write_dataset(dir / "b", loaded.data, loaded.columns);
        EXPECT_EQ(oracles::slurp(dir / "a" / "activations.bin"), oracles::slurp(dir / "b" / "activations.bin"));
        EXPECT_EQ(oracles::slurp(dir / "a" / "tokens.tsv"), oracles::slurp(dir / "b" / "tokens.tsv"));
        EXPECT_EQ(loaded.data.tokens(), data.tokens());
        EXPECT_EQ(loaded.column("sem").labels, col.labels);
        EXPECT_EQ(loaded.data.fingerprint(), data.fingerprint());
    }
}

TEST(Dataset, BinaryLayoutIsRowMajorLittleEndian)
{
    const auto data = random_dataset(4, 6, 9);
    LabelColumn col{"x", {0, 1, 0, 1}, {"a", "b"}};
    const auto dir = oracles::scratch_dir("layout");
    write_dataset(dir, data, std::span<const LabelColumn>(&col, 1));
    const auto bytes = oracles::slurp(dir / "activations.bin");
    ASSERT_EQ(bytes.size(), 4u * 6u * 4u);
    const std::size_t r = 2, c = 5, offset = (r * 6 + c) * 4;
    std::uint32_t bits = 0;
    for (int i = 3; i >= 0; --i) {
        bits = (bits << 8) | static_cast<unsigned char>(bytes[offset + static_cast<std::size_t>(i)]);
    }
    EXPECT_EQ(std::bit_cast<float>(bits), data.at(r, c));
}

namespace {

fs::path write_splits(const std::string& name, std::size_t test_d = 6)
{
    const auto root = oracles::scratch_dir(name);
    LabelColumn col{"pos", {0, 1, 0, 1, 1, 0, 0, 1}, {"A", "B"}};
    write_dataset(root / "train", random_dataset(8, 6, 1), std::span<const LabelColumn>(&col, 1));
    write_dataset(root / "dev", random_dataset(8, 6, 2), std::span<const LabelColumn>(&col, 1));
    write_dataset(root / "test", random_dataset(8, test_d, 3), std::span<const LabelColumn>(&col, 1));
    return root;
}

} // namespace

TEST(Splits, ConsistentSplitsLoad)
{
    const auto splits = load_splits(write_splits("splits_ok"));
    EXPECT_EQ(splits.dev.data.num_neurons(), 6u);
}

TEST(Splits, NeuronCountMismatch)
{
    try {
        load_splits(write_splits("splits_d", 4));
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), Errc::SplitMismatch);
    }
}

TEST(Splits, TagsetMismatch)
{
    const auto root = write_splits("splits_tags");
    write_file(root / "dev" / "pos.tagset", "A\nB\nC\n");
    try {
        load_splits(root);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), Errc::SplitMismatch);
    }
}

TEST(Splits, MissingDev)
{
    const auto root = write_splits("splits_missing");
    fs::remove_all(root / "dev");
    try {
        split_paths(root);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), Errc::MissingFile);
    }
}

TEST(EmpiricalDistribution, Examples)
{
    EXPECT_EQ(empirical_distribution({"t", {0, 0, 1, 1}, {"a", "b"}}), (std::vector<double>{0.5, 0.5}));
    EXPECT_EQ(empirical_distribution({"t", {2, 2, 2}, {"a", "b", "c"}}), (std::vector<double>{0.0, 0.0, 1.0}));
    EXPECT_THROW(empirical_distribution({"t", {}, {"a"}}), Error);
}

TEST(EmpiricalDistribution, SumsToOne)
{
    std::mt19937_64 rng(5);
    for (int trial = 0; trial < 20; ++trial) {
        const std::size_t t = 2 + rng() % 40;
        LabelColumn col{"t", {}, std::vector<std::string>(t)};
        for (std::size_t i = 0; i < t; ++i) {
            col.tagset[i] = "L" + std::to_string(i);
        }
        const std::size_t n = 1 + rng() % 5000;
        std::vector<std::size_t> counts(t, 0);
        for (std::size_t i = 0; i < n; ++i) {
            const auto id = static_cast<std::uint32_t>(rng() % t);
            col.labels.push_back(id);
            ++counts[id];
        }
        const auto p = empirical_distribution(col);
        double sum = 0.0;
        for (std::size_t i = 0; i < t; ++i) {
            EXPECT_DOUBLE_EQ(p[i], static_cast<double>(counts[i]) / static_cast<double>(n));
            sum += p[i];
        }
        EXPECT_NEAR(sum, 1.0, 1e-9);
    }
}

TEST(Dataset, LayerOf)
{
    const LayerMap layers{{"emb", 0, 4}, {"l1", 4, 8}, {"l2", 8, 10}};
    EXPECT_EQ(layer_of(layers, 0), 0u);
    EXPECT_EQ(layer_of(layers, 3), 0u);
    EXPECT_EQ(layer_of(layers, 4), 1u);
    EXPECT_EQ(layer_of(layers, 9), 2u);
    EXPECT_THROW(layer_of(layers, 10), Error);
}
