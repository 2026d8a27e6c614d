#pragma once

// On-disk activation container.
//
//   <dir>/meta.json         {"version":1,"num_tokens":N,"num_neurons":D,"dtype":"f32",
//                            "byte_order":"little","layout":"row_major","layers":[...]}
//   <dir>/activations.bin   N*D little-endian binary32, row-major (token-major)
//   <dir>/tokens.tsv        sentence_id \t token_index \t surface, one line per row
//   <dir>/<task>.labels     one label string per row
//   <dir>/<task>.tagset     optional; one label per line, defines id order
//
// A split root holds train/, dev/ and test/ dataset directories.

#include <neuroprobe/error.hpp>

#include <nlohmann/json.hpp>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <span>
#include <sstream>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

namespace neuroprobe {

namespace fs = std::filesystem;

struct TokenRecord
{
    std::int64_t sentence_id = 0;
    std::int64_t token_index = 0;
    std::string surface;

    friend bool operator==(const TokenRecord&, const TokenRecord&) = default;
};

struct LayerRange
{
    std::string name;
    std::size_t start = 0; ///< inclusive
    std::size_t end = 0;   ///< exclusive

    std::size_t size() const noexcept { return end - start; }
    bool contains(std::size_t neuron) const noexcept { return neuron >= start && neuron < end; }

    friend bool operator==(const LayerRange&, const LayerRange&) = default;
};

using LayerMap = std::vector<LayerRange>;

inline void validate_layer_map(const LayerMap& layers, std::size_t num_neurons)
{
    if (layers.empty()) {
        throw Error(Errc::LayerMapGap, "layer map is empty");
    }
    std::size_t expected = 0;
    for (const auto& layer : layers) {
        if (layer.start != expected) {
            throw Error(Errc::LayerMapGap,
                        "layer '" + layer.name + "' starts at " + std::to_string(layer.start) +
                            ", expected " + std::to_string(expected));
        }
        if (layer.end <= layer.start) {
            throw Error(Errc::LayerMapGap, "layer '" + layer.name + "' is empty or reversed");
        }
        expected = layer.end;
    }
    if (expected != num_neurons) {
        throw Error(Errc::LayerMapGap, "layers cover [0, " + std::to_string(expected) +
                                           ") but num_neurons is " + std::to_string(num_neurons));
    }
}

/// Index of the layer holding `neuron`. The map must already be validated.
inline std::size_t layer_of(const LayerMap& layers, std::size_t neuron)
{
    auto it = std::upper_bound(layers.begin(), layers.end(), neuron,
                               [](std::size_t n, const LayerRange& l) { return n < l.end; });
    if (it == layers.end()) {
        throw Error(Errc::IndexOutOfRange, "neuron " + std::to_string(neuron) + " outside layer map");
    }
    return static_cast<std::size_t>(it - layers.begin());
}

/// Token-aligned activation matrix. Immutable once constructed; the
/// constructor enforces every container invariant.
class ActivationDataset
{
public:
    ActivationDataset(std::size_t num_tokens, std::size_t num_neurons, std::vector<float> activations,
                      std::vector<TokenRecord> tokens, LayerMap layers)
        : num_tokens_(num_tokens), num_neurons_(num_neurons), activations_(std::move(activations)),
          tokens_(std::move(tokens)), layers_(std::move(layers))
    {
        if (num_tokens_ == 0 || num_neurons_ == 0) {
            throw Error(Errc::MalformedFile, "num_tokens and num_neurons must be >= 1");
        }
        if (activations_.size() != num_tokens_ * num_neurons_) {
            throw Error(Errc::SizeMismatch, "activation count " + std::to_string(activations_.size()) +
                                                " != N*D = " + std::to_string(num_tokens_ * num_neurons_));
        }
        for (std::size_t i = 0; i < activations_.size(); ++i) {
            if (!std::isfinite(activations_[i])) {
                throw Error(Errc::NonFiniteValue, "row " + std::to_string(i / num_neurons_) + ", column " +
                                                      std::to_string(i % num_neurons_));
            }
        }
        if (tokens_.size() != num_tokens_) {
            throw Error(Errc::MalformedFile, "token table has " + std::to_string(tokens_.size()) +
                                                 " rows, expected " + std::to_string(num_tokens_));
        }
        validate_layer_map(layers_, num_neurons_);
        validate_token_indices();
    }

    std::size_t num_tokens() const noexcept { return num_tokens_; }
    std::size_t num_neurons() const noexcept { return num_neurons_; }
    const LayerMap& layers() const noexcept { return layers_; }
    const std::vector<TokenRecord>& tokens() const noexcept { return tokens_; }
    std::span<const float> activations() const noexcept { return activations_; }

    std::span<const float> row(std::size_t r) const
    {
        return std::span<const float>(activations_).subspan(r * num_neurons_, num_neurons_);
    }

    float at(std::size_t r, std::size_t c) const { return activations_[r * num_neurons_ + c]; }

    /// FNV-1a over the shape and the raw activation bytes.
    std::string fingerprint() const
    {
        std::uint64_t h = 0xcbf29ce484222325ULL;
        auto mix = [&h](const void* data, std::size_t len) {
            const auto* p = static_cast<const unsigned char*>(data);
            for (std::size_t i = 0; i < len; ++i) {
                h ^= p[i];
                h *= 0x100000001b3ULL;
            }
        };
        const std::uint64_t shape[2] = {num_tokens_, num_neurons_};
        mix(shape, sizeof(shape));
        mix(activations_.data(), activations_.size() * sizeof(float));
        std::ostringstream out;
        out << std::hex;
        out.width(16);
        out.fill('0');
        out << h;
        return out.str();
    }

private:
    void validate_token_indices() const
    {
        std::unordered_map<std::int64_t, std::vector<std::int64_t>> by_sentence;
        for (const auto& tok : tokens_) {
            by_sentence[tok.sentence_id].push_back(tok.token_index);
        }
        for (auto& [sid, indices] : by_sentence) {
            std::sort(indices.begin(), indices.end());
            for (std::size_t i = 0; i < indices.size(); ++i) {
                if (indices[i] != static_cast<std::int64_t>(i)) {
                    throw Error(Errc::MalformedFile, "sentence " + std::to_string(sid) +
                                                         " token indices are not unique and contiguous from 0");
                }
            }
        }
    }

    std::size_t num_tokens_;
    std::size_t num_neurons_;
    std::vector<float> activations_;
    std::vector<TokenRecord> tokens_;
    LayerMap layers_;
};

struct LabelColumn
{
    std::string task_name;
    std::vector<std::uint32_t> labels;
    std::vector<std::string> tagset;

    std::size_t num_labels() const noexcept { return tagset.size(); }
};

inline void validate_column(const LabelColumn& column, std::size_t num_tokens)
{
    if (column.labels.size() != num_tokens) {
        throw Error(Errc::LabelAlignmentError, column.task_name + " has " + std::to_string(column.labels.size()) +
                                                   " labels for " + std::to_string(num_tokens) + " tokens");
    }
    std::set<std::string> seen;
    for (const auto& tag : column.tagset) {
        if (tag.empty() || !seen.insert(tag).second) {
            throw Error(Errc::MalformedFile, column.task_name + " tagset has an empty or duplicate entry");
        }
    }
    for (auto id : column.labels) {
        if (id >= column.tagset.size()) {
            throw Error(Errc::LabelAlignmentError, column.task_name + " label id out of tagset range");
        }
    }
}

struct LoadedDataset
{
    ActivationDataset data;
    std::vector<LabelColumn> columns; ///< sorted by task name
    fs::path directory;

    bool has_column(const std::string& task) const
    {
        return std::any_of(columns.begin(), columns.end(), [&](const auto& c) { return c.task_name == task; });
    }

    const LabelColumn& column(const std::string& task) const
    {
        for (const auto& c : columns) {
            if (c.task_name == task) {
                return c;
            }
        }
        throw Error(Errc::MissingFile, "no " + task + ".labels in " + directory.string());
    }
};

namespace detail {

inline std::vector<std::string> read_lines(const fs::path& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw Error(Errc::MissingFile, path.string());
    }
    std::vector<std::string> lines;
    std::string line;
    while (std::getline(in, line)) {
        lines.push_back(std::move(line));
    }
    return lines;
}

inline void require_file(const fs::path& path)
{
    if (!fs::is_regular_file(path)) {
        throw Error(Errc::MissingFile, path.string());
    }
}

inline std::int64_t parse_int(const std::string& s, const fs::path& where)
{
    std::size_t pos = 0;
    long long v = 0;
    try {
        v = std::stoll(s, &pos);
    } catch (const std::exception&) {
        pos = std::string::npos;
    }
    if (pos != s.size()) {
        throw Error(Errc::MalformedFile, where.string() + ": bad integer '" + s + "'");
    }
    return v;
}

inline float load_f32_le(const unsigned char* p)
{
    std::uint32_t bits = std::uint32_t(p[0]) | (std::uint32_t(p[1]) << 8) | (std::uint32_t(p[2]) << 16) |
                         (std::uint32_t(p[3]) << 24);
    return std::bit_cast<float>(bits);
}

inline void store_f32_le(float value, unsigned char* p)
{
    auto bits = std::bit_cast<std::uint32_t>(value);
    p[0] = static_cast<unsigned char>(bits);
    p[1] = static_cast<unsigned char>(bits >> 8);
    p[2] = static_cast<unsigned char>(bits >> 16);
    p[3] = static_cast<unsigned char>(bits >> 24);
}

inline std::vector<float> read_f32_file(const fs::path& path, std::size_t expected_count)
{
    require_file(path);
    const auto bytes = fs::file_size(path);
    if (bytes != expected_count * 4) {
        throw Error(Errc::SizeMismatch, path.string() + " is " + std::to_string(bytes) + " bytes, expected " +
                                            std::to_string(expected_count * 4));
    }
    std::vector<float> values(expected_count);
    std::ifstream in(path, std::ios::binary);
    if constexpr (std::endian::native == std::endian::little) {
        in.read(reinterpret_cast<char*>(values.data()), static_cast<std::streamsize>(bytes));
    } else {
        std::vector<unsigned char> raw(bytes);
        in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(bytes));
        for (std::size_t i = 0; i < expected_count; ++i) {
            values[i] = load_f32_le(raw.data() + 4 * i);
        }
    }
    if (!in) {
        throw Error(Errc::SizeMismatch, "short read on " + path.string());
    }
    return values;
}

inline void write_f32_file(const fs::path& path, std::span<const float> values)
{
    std::vector<unsigned char> raw(values.size() * 4);
    for (std::size_t i = 0; i < values.size(); ++i) {
        store_f32_le(values[i], raw.data() + 4 * i);
    }
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    out.write(reinterpret_cast<const char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
    if (!out) {
        throw Error(Errc::MalformedFile, "cannot write " + path.string());
    }
}

inline void write_text(const fs::path& path, const std::string& text)
{
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    out << text;
    if (!out) {
        throw Error(Errc::MalformedFile, "cannot write " + path.string());
    }
}

inline nlohmann::json read_json(const fs::path& path)
{
    require_file(path);
    std::ifstream in(path);
    try {
        return nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
        throw Error(Errc::MalformedFile, path.string() + ": " + e.what());
    }
}

inline LabelColumn read_label_column(const fs::path& dir, const std::string& task, std::size_t num_tokens)
{
    LabelColumn column;
    column.task_name = task;
    const auto strings = read_lines(dir / (task + ".labels"));
    if (strings.size() != num_tokens) {
        throw Error(Errc::LabelAlignmentError, task + ".labels has " + std::to_string(strings.size()) +
                                                   " lines, expected " + std::to_string(num_tokens));
    }
    const auto tagset_path = dir / (task + ".tagset");
    if (fs::exists(tagset_path)) {
        column.tagset = read_lines(tagset_path);
    } else {
        std::set<std::string> distinct(strings.begin(), strings.end());
        column.tagset.assign(distinct.begin(), distinct.end());
    }
    std::map<std::string, std::uint32_t> ids;
    for (std::size_t i = 0; i < column.tagset.size(); ++i) {
        ids.emplace(column.tagset[i], static_cast<std::uint32_t>(i));
    }
    column.labels.reserve(strings.size());
    for (const auto& s : strings) {
        auto it = ids.find(s);
        if (it == ids.end()) {
            throw Error(Errc::LabelAlignmentError, task + ": label '" + s + "' not in tagset");
        }
        column.labels.push_back(it->second);
    }
    validate_column(column, num_tokens);
    return column;
}

} // namespace detail

inline void write_label_column(const fs::path& dir, const LabelColumn& column)
{
    std::string labels;
    for (auto id : column.labels) {
        labels += column.tagset.at(id);
        labels += '\n';
    }
    std::string tagset;
    for (const auto& t : column.tagset) {
        tagset += t;
        tagset += '\n';
    }
    detail::write_text(dir / (column.task_name + ".labels"), labels);
    detail::write_text(dir / (column.task_name + ".tagset"), tagset);
}

inline LoadedDataset load_dataset(const fs::path& dir)
{
    if (!fs::is_directory(dir)) {
        throw Error(Errc::MissingFile, dir.string() + " is not a directory");
    }
    const auto meta = detail::read_json(dir / "meta.json");
    LayerMap layers;
    std::size_t n = 0;
    std::size_t d = 0;
    try {
        if (meta.at("version").get<int>() != 1 || meta.at("dtype") != "f32" || meta.at("byte_order") != "little" ||
            meta.at("layout") != "row_major") {
            throw Error(Errc::MalformedFile, "meta.json: unsupported version/dtype/byte_order/layout");
        }
        n = meta.at("num_tokens").get<std::size_t>();
        d = meta.at("num_neurons").get<std::size_t>();
        for (const auto& l : meta.at("layers")) {
            layers.push_back({l.at("name").get<std::string>(), l.at("start").get<std::size_t>(),
                              l.at("end").get<std::size_t>()});
        }
    } catch (const nlohmann::json::exception& e) {
        throw Error(Errc::MalformedFile, std::string("meta.json: ") + e.what());
    }
    detail::require_file(dir / "tokens.tsv");
    std::vector<std::string> tasks;
    for (const auto& entry : fs::directory_iterator(dir)) {
        const auto name = entry.path().filename().string();
        constexpr std::string_view suffix = ".labels";
        if (entry.is_regular_file() && name.size() > suffix.size() && name.ends_with(suffix)) {
            tasks.push_back(name.substr(0, name.size() - suffix.size()));
        }
    }
    if (tasks.empty()) {
        throw Error(Errc::MissingFile, "no *.labels file in " + dir.string());
    }
    std::sort(tasks.begin(), tasks.end());

    validate_layer_map(layers, d);
    auto values = detail::read_f32_file(dir / "activations.bin", n * d);

    std::vector<TokenRecord> tokens;
    tokens.reserve(n);
    for (const auto& line : detail::read_lines(dir / "tokens.tsv")) {
        const auto t1 = line.find('\t');
        const auto t2 = t1 == std::string::npos ? std::string::npos : line.find('\t', t1 + 1);
        if (t2 == std::string::npos) {
            throw Error(Errc::MalformedFile, "tokens.tsv: expected 3 tab-separated fields");
        }
        tokens.push_back({detail::parse_int(line.substr(0, t1), dir / "tokens.tsv"),
                          detail::parse_int(line.substr(t1 + 1, t2 - t1 - 1), dir / "tokens.tsv"),
                          line.substr(t2 + 1)});
    }

    LoadedDataset loaded{ActivationDataset(n, d, std::move(values), std::move(tokens), std::move(layers)), {}, dir};
    for (const auto& task : tasks) {
        loaded.columns.push_back(detail::read_label_column(dir, task, n));
    }
    return loaded;
}

inline void write_dataset(const fs::path& dir, const ActivationDataset& data, std::span<const LabelColumn> columns)
{
    fs::create_directories(dir);
    nlohmann::json layers = nlohmann::json::array();
    for (const auto& l : data.layers()) {
        layers.push_back({{"name", l.name}, {"start", l.start}, {"end", l.end}});
    }
    nlohmann::json meta = {{"version", 1},           {"num_tokens", data.num_tokens()},
                           {"num_neurons", data.num_neurons()}, {"dtype", "f32"},
                           {"byte_order", "little"}, {"layout", "row_major"},
                           {"layers", layers}};
    detail::write_text(dir / "meta.json", meta.dump(2) + "\n");
    detail::write_f32_file(dir / "activations.bin", data.activations());
    std::string tsv;
    for (const auto& t : data.tokens()) {
        tsv += std::to_string(t.sentence_id) + '\t' + std::to_string(t.token_index) + '\t' + t.surface + '\n';
    }
    detail::write_text(dir / "tokens.tsv", tsv);
    for (const auto& column : columns) {
        validate_column(column, data.num_tokens());
        write_label_column(dir, column);
    }
}

struct SplitPaths
{
    fs::path train;
    fs::path dev;
    fs::path test;
};

inline SplitPaths split_paths(const fs::path& root)
{
    SplitPaths paths{root / "train", root / "dev", root / "test"};
    for (const auto& p : {paths.train, paths.dev, paths.test}) {
        if (!fs::is_directory(p)) {
            throw Error(Errc::MissingFile, p.string());
        }
    }
    return paths;
}

struct Splits
{
    LoadedDataset train;
    LoadedDataset dev;
    LoadedDataset test;
};

/// Loads train/dev/test and checks they agree on D, the layer map, and the
/// tagset of every task.
inline Splits load_splits(const fs::path& root)
{
    const auto paths = split_paths(root);
    Splits splits{load_dataset(paths.train), load_dataset(paths.dev), load_dataset(paths.test)};
    const auto& ref = splits.train;
    for (const LoadedDataset* other : {&splits.dev, &splits.test}) {
        const auto where = other->directory.string();
        if (other->data.num_neurons() != ref.data.num_neurons()) {
            throw Error(Errc::SplitMismatch, where + ": num_neurons " + std::to_string(other->data.num_neurons()) +
                                                 " != train " + std::to_string(ref.data.num_neurons()));
        }
        if (other->data.layers() != ref.data.layers()) {
            throw Error(Errc::SplitMismatch, where + ": layer map differs from train");
        }
        if (other->columns.size() != ref.columns.size()) {
            throw Error(Errc::SplitMismatch, where + ": task set differs from train");
        }
        for (std::size_t i = 0; i < ref.columns.size(); ++i) {
            if (other->columns[i].task_name != ref.columns[i].task_name ||
                other->columns[i].tagset != ref.columns[i].tagset) {
                throw Error(Errc::SplitMismatch, where + ": tagset of " + ref.columns[i].task_name + " differs");
            }
        }
    }
    return splits;
}

/// Entry t is count(t)/N.
inline std::vector<double> empirical_distribution(const LabelColumn& column)
{
    if (column.labels.empty()) {
        throw Error(Errc::EmptyInput, "empty label column");
    }
    std::vector<double> counts(column.num_labels(), 0.0);
    for (auto id : column.labels) {
        counts.at(id) += 1.0;
    }
    const auto n = static_cast<double>(column.labels.size());
    for (auto& c : counts) {
        c /= n;
    }
    return counts;
}

/// Returns a copy of `data` restricted to `neurons` (in the given order). The
/// layer map collapses to a single synthetic layer.
inline ActivationDataset select_columns(const ActivationDataset& data, std::span<const std::size_t> neurons)
{
    std::vector<float> values;
    values.reserve(data.num_tokens() * neurons.size());
    for (std::size_t r = 0; r < data.num_tokens(); ++r) {
        const auto row = data.row(r);
        for (auto c : neurons) {
            values.push_back(row[c]);
        }
    }
    return ActivationDataset(data.num_tokens(), neurons.size(), std::move(values), data.tokens(),
                             {{"subset", 0, neurons.size()}});
}

inline std::set<std::string> collect_vocabulary(std::initializer_list<const ActivationDataset*> datasets)
{
    std::set<std::string> vocab;
    for (const auto* d : datasets) {
        for (const auto& t : d->tokens()) {
            vocab.insert(t.surface);
        }
    }
    return vocab;
}

} // namespace neuroprobe
