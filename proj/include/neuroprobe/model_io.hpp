#pragma once

// Probe file pair:
//
//   <name>.json   header, see `model_header`
//   <name>.bin    float32 little-endian: weights (num_labels x num_features,
//                 label-major) followed by bias (num_labels)
//
// Parameters are trained in double precision and narrowed to binary32 on save.

#include <neuroprobe/dataset.hpp>
#include <neuroprobe/probe.hpp>

#include <nlohmann/json.hpp>

namespace neuroprobe {

inline nlohmann::json train_config_json(const TrainConfig& c)
{
    return {{"epochs", c.epochs},         {"batch_size", c.batch_size}, {"learning_rate", c.learning_rate},
            {"adam_beta1", c.adam_beta1}, {"adam_beta2", c.adam_beta2}, {"adam_epsilon", c.adam_epsilon},
            {"seed", c.seed}};
}

inline TrainConfig train_config_from_json(const nlohmann::json& j, TrainConfig c = {})
{
    c.epochs = j.value("epochs", c.epochs);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.learning_rate = j.value("learning_rate", c.learning_rate);
    c.adam_beta1 = j.value("adam_beta1", c.adam_beta1);
    c.adam_beta2 = j.value("adam_beta2", c.adam_beta2);
    c.adam_epsilon = j.value("adam_epsilon", c.adam_epsilon);
    c.seed = j.value("seed", c.seed);
    return c;
}

inline nlohmann::json model_header(const ProbeModel& m, const std::string& weights_file)
{
    nlohmann::json subset = nullptr;
    if (m.subset) {
        subset = *m.subset;
    }
    return {{"format", "neuroprobe-probe"},
            {"version", 1},
            {"task", m.task},
            {"tagset", m.tagset},
            {"num_labels", m.num_labels},
            {"num_features", m.num_features},
            {"source_neurons", m.source_neurons},
            {"lambda1", m.lambda1},
            {"lambda2", m.lambda2},
            {"subset", subset},
            {"dataset_fingerprint", m.dataset_fingerprint},
            {"config", train_config_json(m.config)},
            {"weights_file", weights_file},
            {"dtype", "f32"},
            {"byte_order", "little"},
            {"layout", "weights_label_major_then_bias"}};
}

/// Writes `json_path` and a sibling with the extension replaced by ".bin".
inline void save_model(const ProbeModel& m, const fs::path& json_path)
{
    auto bin_path = json_path;
    bin_path.replace_extension(".bin");
    std::vector<float> values;
    values.reserve(m.weights.size() + m.bias.size());
    for (double w : m.weights) {
        values.push_back(static_cast<float>(w));
    }
    for (double b : m.bias) {
        values.push_back(static_cast<float>(b));
    }
    if (!json_path.parent_path().empty()) {
        fs::create_directories(json_path.parent_path());
    }
    detail::write_f32_file(bin_path, values);
    detail::write_text(json_path, model_header(m, bin_path.filename().string()).dump(2) + "\n");
}

inline ProbeModel load_model(const fs::path& json_path)
{
    const auto header = detail::read_json(json_path);
    ProbeModel m;
    fs::path bin_path;
    try {
        if (header.at("format") != "neuroprobe-probe" || header.at("version").get<int>() != 1) {
            throw Error(Errc::MalformedFile, json_path.string() + ": not a version-1 probe file");
        }
        m = ProbeModel::zeros(header.at("num_labels").get<std::size_t>(), header.at("num_features").get<std::size_t>());
        m.task = header.at("task").get<std::string>();
        m.tagset = header.at("tagset").get<std::vector<std::string>>();
        m.source_neurons = header.at("source_neurons").get<std::size_t>();
        m.lambda1 = header.at("lambda1").get<double>();
        m.lambda2 = header.at("lambda2").get<double>();
        if (!header.at("subset").is_null()) {
            m.subset = header.at("subset").get<std::vector<std::size_t>>();
        }
        m.dataset_fingerprint = header.at("dataset_fingerprint").get<std::string>();
        m.config = train_config_from_json(header.at("config"));
        bin_path = json_path.parent_path() / header.at("weights_file").get<std::string>();
    } catch (const nlohmann::json::exception& e) {
        throw Error(Errc::MalformedFile, json_path.string() + ": " + e.what());
    }
    if (m.subset && m.subset->size() != m.num_features) {
        throw Error(Errc::MalformedFile, "subset length differs from num_features");
    }
    const auto values = detail::read_f32_file(bin_path, m.weights.size() + m.bias.size());
    for (std::size_t k = 0; k < m.weights.size(); ++k) {
        m.weights[k] = values[k];
    }
    for (std::size_t t = 0; t < m.bias.size(); ++t) {
        m.bias[t] = values[m.weights.size() + t];
    }
    return m;
}

} // namespace neuroprobe
