#pragma once

// Layer-wise and per-label reports over a ranking.
//
// CSV layouts (header line is fixed):
//   report_layerwise.csv  layer_index,layer_name,start,end,count
//   report_labels.csv     label_id,label,num_neurons
//   report_dominant.csv   label_id,label,layer_index,layer_name,count,is_dominant

#include <neuroprobe/dataset.hpp>
#include <neuroprobe/ranking.hpp>

#include <nlohmann/json.hpp>

#include <algorithm>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

namespace neuroprobe {

struct LayerDistribution
{
    LayerMap layers;
    std::vector<std::size_t> per_layer_counts;
    std::size_t total_selected = 0;
};

struct LabelLayerSummary
{
    LayerMap layers;
    std::vector<std::string> tagset;
    std::vector<std::vector<std::size_t>> histogram;         ///< label x layer
    std::vector<std::optional<std::size_t>> dominant_layer;  ///< nullopt when a label has no neurons
};

struct LocalizationReport
{
    std::vector<std::string> tagset;
    std::vector<std::size_t> per_label_counts;
    std::vector<std::size_t> neurons;  ///< ranked neurons, in ranking order
    std::vector<std::size_t> sharing;  ///< labels attributed to each of `neurons`
    double mean_sharing = 0.0;         ///< over neurons with at least one label
    std::size_t max_sharing = 0;
    std::vector<std::size_t> shared_neurons; ///< neurons attributed to two or more labels
};

inline LayerDistribution layer_distribution(const NeuronRanking& ranking, const LayerMap& layers)
{
    LayerDistribution out{layers, std::vector<std::size_t>(layers.size(), 0), ranking.size()};
    for (auto n : ranking.ordered_neurons) {
        ++out.per_layer_counts[layer_of(layers, n)];
    }
    return out;
}

/// Plurality layer per label; ties go to the lower layer index.
inline LabelLayerSummary dominant_layers(const NeuronRanking& ranking, const LayerMap& layers)
{
    LabelLayerSummary out;
    out.layers = layers;
    out.tagset = ranking.tagset;
    out.histogram.assign(ranking.num_labels(), std::vector<std::size_t>(layers.size(), 0));
    for (std::size_t i = 0; i < ranking.size(); ++i) {
        const auto layer = layer_of(layers, ranking.ordered_neurons[i]);
        for (auto t : ranking.attributed_labels[i]) {
            ++out.histogram[t][layer];
        }
    }
    for (const auto& h : out.histogram) {
        const auto it = std::max_element(h.begin(), h.end());
        if (it == h.end() || *it == 0) {
            out.dominant_layer.emplace_back(std::nullopt);
        } else {
            out.dominant_layer.emplace_back(static_cast<std::size_t>(it - h.begin()));
        }
    }
    return out;
}

inline LocalizationReport localization_report(const NeuronRanking& ranking)
{
    LocalizationReport out;
    out.tagset = ranking.tagset;
    out.per_label_counts = label_neuron_counts(ranking);
    out.neurons = ranking.ordered_neurons;
    std::size_t attributed = 0;
    std::size_t total = 0;
    for (std::size_t i = 0; i < ranking.size(); ++i) {
        const auto k = ranking.attributed_labels[i].size();
        out.sharing.push_back(k);
        out.max_sharing = std::max(out.max_sharing, k);
        if (k > 0) {
            ++attributed;
            total += k;
        }
        if (k > 1) {
            out.shared_neurons.push_back(ranking.ordered_neurons[i]);
        }
    }
    out.mean_sharing = attributed == 0 ? 0.0 : static_cast<double>(total) / static_cast<double>(attributed);
    return out;
}

inline nlohmann::json to_json(const LayerDistribution& d)
{
    nlohmann::json layers = nlohmann::json::array();
    for (std::size_t i = 0; i < d.layers.size(); ++i) {
        layers.push_back({{"layer_index", i},
                          {"layer_name", d.layers[i].name},
                          {"start", d.layers[i].start},
                          {"end", d.layers[i].end},
                          {"count", d.per_layer_counts[i]}});
    }
    return {{"layers", layers}, {"total_selected", d.total_selected}};
}

inline std::string to_csv(const LayerDistribution& d)
{
    std::ostringstream out;
    out << "layer_index,layer_name,start,end,count\n";
    for (std::size_t i = 0; i < d.layers.size(); ++i) {
        out << i << ',' << d.layers[i].name << ',' << d.layers[i].start << ',' << d.layers[i].end << ','
            << d.per_layer_counts[i] << '\n';
    }
    return out.str();
}

inline nlohmann::json to_json(const LocalizationReport& r)
{
    nlohmann::json labels = nlohmann::json::array();
    for (std::size_t t = 0; t < r.tagset.size(); ++t) {
        labels.push_back({{"label_id", t}, {"label", r.tagset[t]}, {"num_neurons", r.per_label_counts[t]}});
    }
    nlohmann::json sharing = nlohmann::json::array();
    for (std::size_t i = 0; i < r.neurons.size(); ++i) {
        sharing.push_back({{"neuron", r.neurons[i]}, {"num_labels", r.sharing[i]}});
    }
    return {{"labels", labels},
            {"sharing", sharing},
            {"mean_sharing", r.mean_sharing},
            {"max_sharing", r.max_sharing},
            {"shared_neurons", r.shared_neurons}};
}

inline std::string to_csv(const LocalizationReport& r)
{
    std::ostringstream out;
    out << "label_id,label,num_neurons\n";
    for (std::size_t t = 0; t < r.tagset.size(); ++t) {
        out << t << ',' << r.tagset[t] << ',' << r.per_label_counts[t] << '\n';
    }
    return out.str();
}

inline nlohmann::json to_json(const LabelLayerSummary& s)
{
    nlohmann::json labels = nlohmann::json::array();
    for (std::size_t t = 0; t < s.tagset.size(); ++t) {
        nlohmann::json dominant = nullptr;
        nlohmann::json dominant_name = nullptr;
        if (s.dominant_layer[t]) {
            dominant = *s.dominant_layer[t];
            dominant_name = s.layers[*s.dominant_layer[t]].name;
        }
        labels.push_back({{"label_id", t},
                          {"label", s.tagset[t]},
                          {"dominant_layer", dominant},
                          {"dominant_layer_name", dominant_name},
                          {"layer_histogram", s.histogram[t]}});
    }
    nlohmann::json names = nlohmann::json::array();
    for (const auto& l : s.layers) {
        names.push_back(l.name);
    }
    return {{"labels", labels}, {"layers", names}};
}

inline std::string to_csv(const LabelLayerSummary& s)
{
    std::ostringstream out;
    out << "label_id,label,layer_index,layer_name,count,is_dominant\n";
    for (std::size_t t = 0; t < s.tagset.size(); ++t) {
        for (std::size_t l = 0; l < s.layers.size(); ++l) {
            const bool dominant = s.dominant_layer[t] && *s.dominant_layer[t] == l;
            out << t << ',' << s.tagset[t] << ',' << l << ',' << s.layers[l].name << ',' << s.histogram[t][l] << ','
                << (dominant ? 1 : 0) << '\n';
        }
    }
    return out.str();
}

/// Writes report_{layerwise,labels,dominant}.{json,csv} into `dir`.
inline std::vector<std::string> write_reports(const fs::path& dir, const NeuronRanking& ranking,
                                              const LayerMap& layers)
{
    fs::create_directories(dir);
    const auto layerwise = layer_distribution(ranking, layers);
    const auto labels = localization_report(ranking);
    const auto dominant = dominant_layers(ranking, layers);
    detail::write_text(dir / "report_layerwise.json", to_json(layerwise).dump(2) + "\n");
    detail::write_text(dir / "report_layerwise.csv", to_csv(layerwise));
    detail::write_text(dir / "report_labels.json", to_json(labels).dump(2) + "\n");
    detail::write_text(dir / "report_labels.csv", to_csv(labels));
    detail::write_text(dir / "report_dominant.json", to_json(dominant).dump(2) + "\n");
    detail::write_text(dir / "report_dominant.csv", to_csv(dominant));
    return {"report_layerwise.json", "report_layerwise.csv", "report_labels.json",
            "report_labels.csv",     "report_dominant.json", "report_dominant.csv"};
}

} // namespace neuroprobe
