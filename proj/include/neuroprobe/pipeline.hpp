#pragma once

// Subcommand implementations behind the `neuroprobe` executable. Every
// function here is deterministic for a fixed RunConfig; the only
// time-dependent output is manifest.json's "created_at".

#include <neuroprobe/analysis.hpp>
#include <neuroprobe/control.hpp>
#include <neuroprobe/dataset.hpp>
#include <neuroprobe/model_io.hpp>
#include <neuroprobe/probe.hpp>
#include <neuroprobe/ranking.hpp>
#include <neuroprobe/search.hpp>
#include <neuroprobe/selection.hpp>

#include <nlohmann/json.hpp>

#include <chrono>
#include <ctime>
#include <iomanip>
#include <optional>
#include <ostream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

namespace neuroprobe {

inline constexpr std::string_view kVersion = "0.1.0";

struct RunConfig
{
    fs::path dataset_root;
    std::string task;
    std::uint64_t seed = 0;
    TrainConfig train;
    std::optional<LambdaPair> lambdas;
    std::optional<std::vector<LambdaPair>> grid;
    double delta = 0.5;
    double ablation_fraction = 0.2;
    fs::path output_dir = "neuroprobe_out";
    unsigned jobs = 1;
    int random_runs = 3;
    bool select_on_dev = false;

    /// TrainConfig with the run seed applied.
    TrainConfig train_config() const
    {
        auto c = train;
        c.seed = seed;
        return c;
    }

    void validate() const
    {
        if (!(ablation_fraction > 0.0 && ablation_fraction < 1.0)) {
            throw Error(Errc::InvalidConfig, "ablation_fraction must lie in (0, 1)");
        }
        if (!(delta > 0.0)) {
            throw Error(Errc::InvalidConfig, "delta must be > 0");
        }
        if (random_runs < 1) {
            throw Error(Errc::InvalidConfig, "random_runs must be >= 1");
        }
        if (task.empty()) {
            throw Error(Errc::InvalidConfig, "task is required");
        }
        if (dataset_root.empty()) {
            throw Error(Errc::InvalidConfig, "dataset_root is required");
        }
        train_config().validate();
    }
};

inline nlohmann::json run_config_json(const RunConfig& c)
{
    nlohmann::json j = {{"dataset_root", c.dataset_root.string()},
                        {"task", c.task},
                        {"seed", c.seed},
                        {"train", train_config_json(c.train_config())},
                        {"delta", c.delta},
                        {"ablation_fraction", c.ablation_fraction},
                        {"output_dir", c.output_dir.string()},
                        {"random_runs", c.random_runs},
                        {"select_on_dev", c.select_on_dev}};
    j["lambdas"] = c.lambdas ? nlohmann::json{c.lambdas->lambda1, c.lambdas->lambda2} : nlohmann::json(nullptr);
    if (c.grid) {
        nlohmann::json g = nlohmann::json::array();
        for (const auto& p : *c.grid) {
            g.push_back({p.lambda1, p.lambda2});
        }
        j["grid"] = g;
    } else {
        j["grid"] = nullptr;
    }
    return j;
}

/// Keys mirror RunConfig fields; "train" holds TrainConfig fields and
/// "lambdas" is [l1, l2]. Unknown keys are rejected.
inline RunConfig run_config_from_json(const nlohmann::json& j, RunConfig c = {})
{
    static const std::set<std::string> known = {"dataset_root", "task",        "seed",          "train",
                                                "lambdas",      "grid",        "delta",         "ablation_fraction",
                                                "output_dir",   "jobs",        "random_runs",   "select_on_dev"};
    if (!j.is_object()) {
        throw Error(Errc::InvalidConfig, "run config must be a JSON object");
    }
    for (const auto& [key, _] : j.items()) {
        if (!known.contains(key)) {
            throw Error(Errc::InvalidConfig, "unknown run config key '" + key + "'");
        }
    }
    try {
        if (j.contains("dataset_root")) c.dataset_root = j["dataset_root"].get<std::string>();
        if (j.contains("task")) c.task = j["task"].get<std::string>();
        if (j.contains("seed")) c.seed = j["seed"].get<std::uint64_t>();
        if (j.contains("train")) c.train = train_config_from_json(j["train"], c.train);
        if (j.contains("lambdas") && !j["lambdas"].is_null()) {
            const auto& l = j["lambdas"];
            c.lambdas = LambdaPair{l.at(0).get<double>(), l.at(1).get<double>()};
        }
        if (j.contains("grid") && !j["grid"].is_null()) c.grid = grid_from_json(j["grid"]);
        if (j.contains("delta")) c.delta = j["delta"].get<double>();
        if (j.contains("ablation_fraction")) c.ablation_fraction = j["ablation_fraction"].get<double>();
        if (j.contains("output_dir")) c.output_dir = j["output_dir"].get<std::string>();
        if (j.contains("jobs")) c.jobs = j["jobs"].get<unsigned>();
        if (j.contains("random_runs")) c.random_runs = j["random_runs"].get<int>();
        if (j.contains("select_on_dev")) c.select_on_dev = j["select_on_dev"].get<bool>();
    } catch (const nlohmann::json::exception& e) {
        throw Error(Errc::InvalidConfig, std::string("run config: ") + e.what());
    }
    return c;
}

inline RunConfig load_run_config(const fs::path& path)
{
    try {
        return run_config_from_json(detail::read_json(path));
    } catch (const Error& e) {
        if (e.code() == Errc::MalformedFile) {
            throw Error(Errc::InvalidConfig, e.what());
        }
        throw;
    }
}

inline void write_json(const fs::path& path, const nlohmann::json& j)
{
    if (!path.parent_path().empty()) {
        fs::create_directories(path.parent_path());
    }
    detail::write_text(path, j.dump(2) + "\n");
}

// --- validate ---------------------------------------------------------------

/// Accepts a split root (train/dev/test) or a single dataset directory.
inline nlohmann::json cmd_validate(const fs::path& root)
{
    if (fs::is_directory(root / "train") || fs::is_directory(root / "dev") || fs::is_directory(root / "test")) {
        const auto splits = load_splits(root);
        nlohmann::json tasks = nlohmann::json::array();
        for (const auto& c : splits.train.columns) {
            tasks.push_back({{"task", c.task_name}, {"num_labels", c.num_labels()}});
        }
        return {{"status", "ok"},
                {"kind", "splits"},
                {"num_neurons", splits.train.data.num_neurons()},
                {"num_tokens",
                 {{"train", splits.train.data.num_tokens()},
                  {"dev", splits.dev.data.num_tokens()},
                  {"test", splits.test.data.num_tokens()}}},
                {"tasks", tasks}};
    }
    const auto d = load_dataset(root);
    nlohmann::json tasks = nlohmann::json::array();
    for (const auto& c : d.columns) {
        tasks.push_back({{"task", c.task_name}, {"num_labels", c.num_labels()}});
    }
    return {{"status", "ok"},
            {"kind", "dataset"},
            {"num_neurons", d.data.num_neurons()},
            {"num_tokens", d.data.num_tokens()},
            {"tasks", tasks}};
}

// --- accuracy reports / ablation -------------------------------------------

inline nlohmann::json accuracy_report(const std::string& task, const std::string& split, double accuracy,
                                      std::size_t num_neurons)
{
    return {{"task", task}, {"split", split}, {"accuracy", accuracy}, {"num_neurons", num_neurons}};
}

enum class AblationMode { Top, Bottom, Random };

inline AblationMode parse_ablation_mode(const std::string& s)
{
    if (s == "top") return AblationMode::Top;
    if (s == "bottom") return AblationMode::Bottom;
    if (s == "random") return AblationMode::Random;
    throw Error(Errc::InvalidConfig, "ablation mode must be top, bottom or random");
}

inline std::string_view to_string(AblationMode m)
{
    switch (m) {
    case AblationMode::Top: return "top";
    case AblationMode::Bottom: return "bottom";
    case AblationMode::Random: return "random";
    }
    return "?";
}

struct AblationRow
{
    AblationMode mode = AblationMode::Top;
    double fraction = 0.0;
    std::size_t num_kept = 0;
    double accuracy = 0.0; ///< mean over runs
    std::vector<double> run_accuracies;
};

/// Random sample of k neurons out of d; run r uses std::mt19937_64(seed + r).
inline std::vector<std::size_t> random_keep_set(std::size_t d, std::size_t k, std::uint64_t seed)
{
    std::vector<std::size_t> all(d);
    std::iota(all.begin(), all.end(), std::size_t{0});
    std::mt19937_64 rng(seed);
    std::shuffle(all.begin(), all.end(), rng);
    all.resize(k);
    return all;
}

inline AblationRow ablate(const ProbeModel& model, const NeuronRanking& full, const ActivationDataset& data,
                          const LabelColumn& labels, AblationMode mode, double fraction, std::uint64_t seed,
                          int runs = 1)
{
    if (full.size() != model.num_features) {
        throw Error(Errc::MissingRanking, "ablation needs a full ranking of " + std::to_string(model.num_features) +
                                              " neurons, got " + std::to_string(full.size()));
    }
    AblationRow row;
    row.mode = mode;
    row.fraction = fraction;
    row.num_kept = slice_size(fraction, model.num_features);
    const int count = mode == AblationMode::Random ? std::max(runs, 1) : 1;
    for (int r = 0; r < count; ++r) {
        std::vector<std::size_t> keep;
        switch (mode) {
        case AblationMode::Top: keep = top_slice(full, row.num_kept); break;
        case AblationMode::Bottom: keep = bottom_slice(full, row.num_kept); break;
        case AblationMode::Random:
            keep = random_keep_set(model.num_features, row.num_kept, seed + static_cast<std::uint64_t>(r));
            break;
        }
        row.run_accuracies.push_back(evaluate_ablated(model, data, labels, keep));
    }
    double sum = 0.0;
    for (double a : row.run_accuracies) {
        sum += a;
    }
    row.accuracy = sum / static_cast<double>(row.run_accuracies.size());
    return row;
}

inline nlohmann::json ablation_row_json(const AblationRow& r)
{
    return {{"mode", std::string(to_string(r.mode))},
            {"fraction", r.fraction},
            {"num_kept", r.num_kept},
            {"accuracy", r.accuracy},
            {"run_accuracies", r.run_accuracies}};
}

// --- selectivity ------------------------------------------------------------

struct SelectivityRow
{
    std::size_t neurons_all = 0;      ///< Neu_a
    std::size_t neurons_selected = 0; ///< Neu_t
    double accuracy_all = 0.0;        ///< Acc_a
    double accuracy_selected = 0.0;   ///< Acc_t
    double control_all = 0.0;
    double control_selected = 0.0;
    double selectivity_all = 0.0;      ///< Sel_a
    double selectivity_selected = 0.0; ///< Sel_t
};

/// Trains control-task probes on all neurons and on `selected`, and pairs them
/// with the given linguistic accuracies.
inline SelectivityRow compute_selectivity(const ActivationDataset& train_data, const ActivationDataset& eval_data,
                                          const ControlTask& control, bool eval_on_dev,
                                          std::span<const std::size_t> selected, double accuracy_all,
                                          double accuracy_selected, LambdaPair lambdas, const TrainConfig& config)
{
    const auto& eval_labels = eval_on_dev ? control.dev : control.test;
    SelectivityRow row;
    row.neurons_all = train_data.num_neurons();
    row.neurons_selected = selected.size();
    row.accuracy_all = accuracy_all;
    row.accuracy_selected = accuracy_selected;
    const auto full = train(train_data, control.train, config, lambdas.lambda1, lambdas.lambda2);
    row.control_all = evaluate(full, eval_data, eval_labels);
    const auto top = train(train_data, control.train, config, lambdas.lambda1, lambdas.lambda2, selected);
    row.control_selected = evaluate(top, eval_data, eval_labels);
    row.selectivity_all = selectivity(row.accuracy_all, row.control_all);
    row.selectivity_selected = selectivity(row.accuracy_selected, row.control_selected);
    return row;
}

inline nlohmann::json selectivity_json(const SelectivityRow& r)
{
    return {{"Neu_a", r.neurons_all},          {"Neu_t", r.neurons_selected},     {"Acc_a", r.accuracy_all},
            {"Acc_t", r.accuracy_selected},    {"control_acc_a", r.control_all},  {"control_acc_t", r.control_selected},
            {"Sel_a", r.selectivity_all},      {"Sel_t", r.selectivity_selected}};
}

// --- full run ---------------------------------------------------------------

struct FullRunResult
{
    LambdaPair lambdas;
    bool searched = false;
    double oracle_accuracy = 0.0;
    SelectionTrace trace;
    SelectivityRow selectivity;
    std::vector<AblationRow> ablation;
    std::vector<std::string> artifacts;
};

inline std::string utc_timestamp()
{
    const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&now, &tm);
    std::ostringstream out;
    out << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
    return out.str();
}

inline nlohmann::json run_defaults_json(const RunConfig& c)
{
    const auto t = c.train_config();
    return {{"learning_rate", t.learning_rate},
            {"adam_beta1", t.adam_beta1},
            {"adam_beta2", t.adam_beta2},
            {"adam_epsilon", t.adam_epsilon},
            {"epochs", t.epochs},
            {"batch_size", t.batch_size},
            {"weight_init", "zeros"},
            {"l1_handling", "subgradient inside Adam, 0 at w == 0"},
            {"bias_penalized", false},
            {"loss_reduction", "mean over batch"},
            {"final_partial_batch", "kept"},
            {"mass_step", 1.0 / static_cast<double>(kDefaultMassSteps)},
            {"ranking_tie_rule", "first-inclusion mass, then max |weight| over labels desc, then neuron index"},
            {"per_label_tie_rule", "|weight| desc, then neuron index"},
            {"argmax_tie_rule", "lowest label id"},
            {"search_alpha", 0.5},
            {"search_beta", 0.5},
            {"search_split", "dev"},
            {"search_tie_rule", "lexicographically smallest (lambda1, lambda2)"},
            {"selection_step", "ceil(0.01 * D)"},
            {"selection_split", c.select_on_dev ? "dev" : "test"},
            {"random_ablation_seeds", "seed + run_index"},
            {"control_type_key", "exact surface string"},
            {"control_vocabulary", "union of train, dev, test types"},
            {"dominant_layer_rule", "plurality, lower layer index on ties"}};
}

/// search (unless lambdas are pinned) -> oracle -> ranking -> ablation table
/// -> minimal selection -> control task + selectivity -> reports -> manifest.
inline FullRunResult cmd_full_run(const RunConfig& config, std::ostream* progress = nullptr)
{
    config.validate();
    auto log = [&](const std::string& msg) {
        if (progress != nullptr) {
            *progress << "[neuroprobe] " << msg << '\n';
        }
    };
    const auto out_dir = config.output_dir;
    fs::create_directories(out_dir);
    const auto splits = load_splits(config.dataset_root);
    const auto& train_labels = splits.train.column(config.task);
    const auto& dev_labels = splits.dev.column(config.task);
    const auto& test_labels = splits.test.column(config.task);
    const auto train_cfg = config.train_config();
    const auto& eval_split = config.select_on_dev ? splits.dev : splits.test;
    const auto& eval_labels = config.select_on_dev ? dev_labels : test_labels;
    const std::string eval_name = config.select_on_dev ? "dev" : "test";

    FullRunResult result;
    if (config.lambdas) {
        result.lambdas = *config.lambdas;
        log("lambdas pinned, skipping search");
    } else {
        const auto grid = config.grid ? *config.grid : default_grid();
        log("searching " + std::to_string(grid.size()) + " lambda pairs");
        SearchOptions opts;
        opts.ablation_fraction = config.ablation_fraction;
        opts.jobs = config.jobs;
        const auto search =
            grid_search(splits.train.data, train_labels, splits.dev.data, dev_labels, grid, train_cfg, opts);
        write_json(out_dir / "search_result.json", search_result_json(search));
        result.artifacts.push_back("search_result.json");
        result.lambdas = search.winner;
        result.searched = true;
    }
    const auto [l1, l2] = result.lambdas;

    log("training oracle probe");
    const auto orc = oracle(splits.train.data, train_labels, eval_split.data, eval_labels, l1, l2, train_cfg);
    result.oracle_accuracy = orc.accuracy;
    save_model(orc.model, out_dir / "probe.json");
    result.artifacts.insert(result.artifacts.end(), {"probe.json", "probe.bin"});

    const auto full = full_ranking(orc.model);
    write_json(out_dir / "ranking.json", ranking_json(full));
    result.artifacts.push_back("ranking.json");

    log("ablation table");
    nlohmann::json ablation_rows = nlohmann::json::array();
    ablation_rows.push_back({{"mode", "all"},
                             {"fraction", 1.0},
                             {"num_kept", orc.model.num_features},
                             {"accuracy", orc.accuracy},
                             {"run_accuracies", {orc.accuracy}}});
    for (auto mode : {AblationMode::Top, AblationMode::Random, AblationMode::Bottom}) {
        result.ablation.push_back(ablate(orc.model, full, eval_split.data, eval_labels, mode,
                                         config.ablation_fraction, config.seed, config.random_runs));
        ablation_rows.push_back(ablation_row_json(result.ablation.back()));
    }
    write_json(out_dir / "ablation.json", {{"task", config.task}, {"split", eval_name}, {"rows", ablation_rows}});
    result.artifacts.push_back("ablation.json");

    log("minimal neuron selection");
    result.trace = minimal_neurons(full, splits.train.data, train_labels, eval_split.data, eval_labels, orc.accuracy,
                                   config.delta, l1, l2, train_cfg);
    result.trace.eval_split = eval_name;
    auto trace_json = selection_trace_json(result.trace);
    trace_json["lambdas"] = {l1, l2};
    trace_json["config"] = train_config_json(train_cfg);
    trace_json["dataset_fingerprint"] = splits.train.data.fingerprint();
    write_json(out_dir / "selection_trace.json", trace_json);
    result.artifacts.push_back("selection_trace.json");

    const auto top = select_top(orc.model, result.trace.minimal_set.size());
    write_json(out_dir / "ranking_top.json", ranking_json(top));
    result.artifacts.push_back("ranking_top.json");

    log("control task and selectivity");
    const auto control = generate_control(splits, config.task, config.seed);
    write_json(out_dir / "control.json", control_sidecar_json(control.mapping, config.task));
    result.artifacts.push_back("control.json");
    result.selectivity =
        compute_selectivity(splits.train.data, eval_split.data, control, config.select_on_dev,
                            result.trace.minimal_set, orc.accuracy, result.trace.trials.back().accuracy,
                            result.lambdas, train_cfg);
    auto sel_json = selectivity_json(result.selectivity);
    sel_json["task"] = config.task;
    sel_json["split"] = eval_name;
    write_json(out_dir / "selectivity.json", sel_json);
    result.artifacts.push_back("selectivity.json");

    log("reports");
    for (auto& name : write_reports(out_dir, top, splits.train.data.layers())) {
        result.artifacts.push_back(std::move(name));
    }

    nlohmann::json manifest = {
        {"tool", "neuroprobe"},
        {"version", std::string(kVersion)},
        {"created_at", utc_timestamp()},
        {"config", run_config_json(config)},
        {"defaults", run_defaults_json(config)},
        {"lambdas", {{"lambda1", l1}, {"lambda2", l2}, {"source", result.searched ? "search" : "pinned"}}},
        {"search_skipped", !result.searched},
        {"dataset_fingerprint", splits.train.data.fingerprint()},
        {"artifacts", result.artifacts}};
    if (!result.searched) {
        manifest["notes"] = {"search_result.json not written: lambdas were pinned in the run config"};
    }
    write_json(out_dir / "manifest.json", manifest);
    log("done");
    return result;
}

} // namespace neuroprobe
