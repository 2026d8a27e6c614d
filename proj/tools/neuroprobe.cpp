// neuroprobe: neuron-level probing of pre-extracted activations.
//
// Exit codes: 0 success, 1 validation/config failure, 2 runtime failure.

#include <neuroprobe/pipeline.hpp>

#include <CLI11.hpp>

#include <iostream>
#include <memory>

namespace {

using namespace neuroprobe;

struct Flags
{
    std::string config_file;
    std::string dataset_root;
    std::string task;
    std::uint64_t seed = 0;
    int epochs = 0;
    std::size_t batch_size = 0;
    double learning_rate = 0.0;
    double lambda1 = 0.0;
    double lambda2 = 0.0;
    std::string grid;
    double delta = 0.0;
    double ablation_fraction = 0.0;
    std::string output_dir;
    unsigned jobs = 1;
    int runs = 3;
    bool select_on_dev = false;
    bool verbose = false;

    // subcommand-specific
    std::string model;
    std::string ranking;
    std::string split = "test";
    std::string mode = "top";
    double fraction = 0.2;
    std::size_t top_n = 0;
    std::string subset;
};

struct Options
{
    CLI::Option* config = nullptr;
    CLI::Option* dataset_root = nullptr;
    CLI::Option* task = nullptr;
    CLI::Option* seed = nullptr;
    CLI::Option* epochs = nullptr;
    CLI::Option* batch_size = nullptr;
    CLI::Option* learning_rate = nullptr;
    CLI::Option* lambda1 = nullptr;
    CLI::Option* lambda2 = nullptr;
    CLI::Option* grid = nullptr;
    CLI::Option* delta = nullptr;
    CLI::Option* ablation_fraction = nullptr;
    CLI::Option* output_dir = nullptr;
    CLI::Option* jobs = nullptr;
    CLI::Option* runs = nullptr;
    CLI::Option* select_on_dev = nullptr;
};

void add_run_flags(CLI::App* sub, Flags& f, Options& o)
{
    o.config = sub->add_option("--config", f.config_file, "RunConfig JSON file; flags override its values");
    o.dataset_root = sub->add_option("--dataset-root", f.dataset_root, "split root holding train/, dev/, test/");
    o.task = sub->add_option("--task", f.task, "label column to probe (e.g. pos)");
    o.seed = sub->add_option("--seed", f.seed, "seed for shuffling, control tasks and random ablation");
    o.epochs = sub->add_option("--epochs", f.epochs);
    o.batch_size = sub->add_option("--batch-size", f.batch_size);
    o.learning_rate = sub->add_option("--learning-rate", f.learning_rate);
    o.lambda1 = sub->add_option("--lambda1", f.lambda1, "L1 strength (pins lambdas; skips search in full-run)");
    o.lambda2 = sub->add_option("--lambda2", f.lambda2, "L2 strength");
    o.grid = sub->add_option("--grid", f.grid, "JSON list of [lambda1, lambda2] pairs, or a file holding one");
    o.delta = sub->add_option("--delta", f.delta, "minimal-set tolerance in accuracy points");
    o.ablation_fraction = sub->add_option("--ablation-fraction", f.ablation_fraction);
    o.output_dir = sub->add_option("--output-dir", f.output_dir);
    o.jobs = sub->add_option("--jobs", f.jobs, "grid points evaluated concurrently");
    o.runs = sub->add_option("--runs", f.runs, "random-ablation repetitions");
    o.select_on_dev = sub->add_flag("--select-on-dev", f.select_on_dev, "score minimal selection on dev, not test");
    sub->add_flag("-v,--verbose", f.verbose, "progress on stderr");
}

RunConfig build_config(const Flags& f, const Options& o)
{
    RunConfig c = o.config->count() ? load_run_config(f.config_file) : RunConfig{};
    if (o.dataset_root->count()) c.dataset_root = f.dataset_root;
    if (o.task->count()) c.task = f.task;
    if (o.seed->count()) c.seed = f.seed;
    if (o.epochs->count()) c.train.epochs = f.epochs;
    if (o.batch_size->count()) c.train.batch_size = f.batch_size;
    if (o.learning_rate->count()) c.train.learning_rate = f.learning_rate;
    if (o.lambda1->count() || o.lambda2->count()) {
        auto pair = c.lambdas.value_or(LambdaPair{});
        if (o.lambda1->count()) pair.lambda1 = f.lambda1;
        if (o.lambda2->count()) pair.lambda2 = f.lambda2;
        c.lambdas = pair;
    }
    if (o.grid->count()) {
        const fs::path maybe_file(f.grid);
        nlohmann::json j;
        if (fs::is_regular_file(maybe_file)) {
            j = detail::read_json(maybe_file);
        } else {
            try {
                j = nlohmann::json::parse(f.grid);
            } catch (const nlohmann::json::exception& e) {
                throw Error(Errc::InvalidConfig, std::string("--grid: ") + e.what());
            }
        }
        c.grid = grid_from_json(j);
    }
    if (o.delta->count()) c.delta = f.delta;
    if (o.ablation_fraction->count()) c.ablation_fraction = f.ablation_fraction;
    if (o.output_dir->count()) c.output_dir = f.output_dir;
    if (o.jobs->count()) c.jobs = f.jobs;
    if (o.runs->count()) c.random_runs = f.runs;
    if (o.select_on_dev->count()) c.select_on_dev = f.select_on_dev;
    return c;
}

const LoadedDataset& pick_split(const Splits& s, const std::string& name)
{
    if (name == "train") return s.train;
    if (name == "dev") return s.dev;
    if (name == "test") return s.test;
    throw Error(Errc::InvalidConfig, "split must be train, dev or test");
}

std::vector<std::size_t> parse_subset(const std::string& text)
{
    nlohmann::json j;
    if (fs::is_regular_file(text)) {
        j = detail::read_json(text);
    } else {
        try {
            j = nlohmann::json::parse(text);
        } catch (const nlohmann::json::exception& e) {
            throw Error(Errc::InvalidConfig, std::string("--subset: ") + e.what());
        }
    }
    if (j.is_object() && j.contains("minimal_set")) {
        j = j["minimal_set"];
    } else if (j.is_object() && j.contains("ordered_neurons")) {
        j = j["ordered_neurons"];
    }
    try {
        return j.get<std::vector<std::size_t>>();
    } catch (const nlohmann::json::exception& e) {
        throw Error(Errc::InvalidConfig, std::string("--subset: ") + e.what());
    }
}

NeuronRanking load_ranking(const std::string& path)
{
    if (path.empty() || !fs::is_regular_file(path)) {
        throw Error(Errc::MissingRanking, "ranking file '" + path + "' not found (run `neuroprobe rank` first)");
    }
    return ranking_from_json(detail::read_json(path));
}

void print(const nlohmann::json& j) { std::cout << j.dump(2) << '\n'; }

} // namespace

int main(int argc, char** argv)
{
    CLI::App app{"neuroprobe: neuron-level probing of contextual representations"};
    app.require_subcommand(1);
    Flags f;

    std::string validate_root;
    auto* validate = app.add_subcommand("validate", "check a dataset directory or split root");
    validate->add_option("dataset_root", validate_root, "dataset directory or split root")->required();

    std::vector<std::pair<CLI::App*, Options>> subs;
    auto add = [&](const char* name, const char* help) {
        auto* sub = app.add_subcommand(name, help);
        Options o;
        add_run_flags(sub, f, o);
        subs.emplace_back(sub, o);
        return sub;
    };
    auto* train_cmd = add("train", "train a probe and write probe.json/probe.bin");
    train_cmd->add_option("--subset", f.subset, "neuron list as JSON (or a trace/ranking file)");
    auto* eval_cmd = add("eval", "accuracy of a saved probe on one split");
    eval_cmd->add_option("--model", f.model, "probe.json")->required();
    eval_cmd->add_option("--split", f.split, "train, dev or test");
    auto* ablate_cmd = add("ablate", "accuracy keeping only top/bottom/random ranked neurons");
    ablate_cmd->add_option("--model", f.model, "probe.json trained on all neurons")->required();
    ablate_cmd->add_option("--ranking", f.ranking, "full ranking.json from `rank`");
    ablate_cmd->add_option("--mode", f.mode, "top, bottom or random");
    ablate_cmd->add_option("--fraction", f.fraction, "fraction of neurons kept");
    ablate_cmd->add_option("--split", f.split, "train, dev or test");
    auto* search_cmd = add("search-lambdas", "grid search over (lambda1, lambda2)");
    auto* rank_cmd = add("rank", "rank neurons of a saved probe");
    rank_cmd->add_option("--model", f.model, "probe.json")->required();
    rank_cmd->add_option("--top-n", f.top_n, "rank only the top N (default: all neurons)");
    auto* select_cmd = add("select-minimal", "oracle + ranking + minimal neuron set");
    auto* control_cmd = add("control", "write control-task label columns into every split");
    auto* report_cmd = add("report", "layer-wise and per-label reports for a ranking");
    report_cmd->add_option("--ranking", f.ranking, "ranking JSON (e.g. ranking_top.json)")->required();
    auto* full_cmd = add("full-run", "search, oracle, ranking, ablation, selection, control, reports");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 1;
    }

    try {
        if (validate->parsed()) {
            try {
                print(cmd_validate(validate_root));
                return 0;
            } catch (const Error& e) {
                print({{"status", "error"}, {"error", std::string(to_string(e.code()))}, {"message", e.what()}});
                return is_validation_error(e.code()) ? 1 : 2;
            }
        }

        const Options* opts = nullptr;
        CLI::App* active = nullptr;
        for (auto& [sub, o] : subs) {
            if (sub->parsed()) {
                active = sub;
                opts = &o;
            }
        }
        auto config = build_config(f, *opts);
        if (active == rank_cmd) {
            const auto model = load_model(f.model);
            const auto ranking = f.top_n > 0 ? select_top(model, f.top_n) : full_ranking(model);
            write_json(config.output_dir / (f.top_n > 0 ? "ranking_top.json" : "ranking.json"), ranking_json(ranking));
            print({{"num_ranked", ranking.size()}, {"stop_mass", ranking.stop_mass}});
            return 0;
        }
        config.validate();
        std::ostream* progress = f.verbose ? &std::clog : nullptr;
        const auto train_cfg = config.train_config();

        if (active == full_cmd) {
            const auto result = cmd_full_run(config, progress);
            print({{"output_dir", config.output_dir.string()},
                   {"lambdas", {result.lambdas.lambda1, result.lambdas.lambda2}},
                   {"oracle_accuracy", result.oracle_accuracy},
                   {"minimal_set_size", result.trace.minimal_set.size()},
                   {"selectivity", selectivity_json(result.selectivity)}});
            return 0;
        }
        if (active == search_cmd) {
            const auto splits = load_splits(config.dataset_root);
            SearchOptions opts_search;
            opts_search.ablation_fraction = config.ablation_fraction;
            opts_search.jobs = config.jobs;
            const auto grid = config.grid ? *config.grid : default_grid();
            const auto result =
                grid_search(splits.train.data, splits.train.column(config.task), splits.dev.data,
                            splits.dev.column(config.task), grid, train_cfg, opts_search);
            const auto j = search_result_json(result);
            write_json(config.output_dir / "search_result.json", j);
            print(j["winner"]);
            return 0;
        }
        if (active == control_cmd) {
            const auto splits = load_splits(config.dataset_root);
            const auto control = generate_control(splits, config.task, config.seed);
            const auto paths = split_paths(config.dataset_root);
            write_control_column(paths.train, control.train, control.mapping, config.task);
            write_control_column(paths.dev, control.dev, control.mapping, config.task);
            write_control_column(paths.test, control.test, control.mapping, config.task);
            print(control_sidecar_json(control.mapping, config.task));
            return 0;
        }

        const auto splits = load_splits(config.dataset_root);
        const auto lambdas = config.lambdas.value_or(LambdaPair{});

        if (active == train_cmd) {
            std::optional<std::vector<std::size_t>> subset;
            if (!f.subset.empty()) {
                subset = parse_subset(f.subset);
            }
            const auto model =
                subset ? train(splits.train.data, splits.train.column(config.task), train_cfg, lambdas.lambda1,
                               lambdas.lambda2, std::span<const std::size_t>(*subset))
                       : train(splits.train.data, splits.train.column(config.task), train_cfg, lambdas.lambda1,
                               lambdas.lambda2);
            save_model(model, config.output_dir / "probe.json");
            print({{"model", (config.output_dir / "probe.json").string()}, {"num_features", model.num_features}});
            return 0;
        }
        if (active == eval_cmd) {
            const auto model = load_model(f.model);
            const auto& split = pick_split(splits, f.split);
            const double acc = evaluate(model, split.data, split.column(config.task));
            const auto j = accuracy_report(config.task, f.split, acc, model.num_features);
            write_json(config.output_dir / ("accuracy_" + f.split + ".json"), j);
            print(j);
            return 0;
        }
        if (active == ablate_cmd) {
            const auto model = load_model(f.model);
            const auto ranking = load_ranking(f.ranking);
            const auto& split = pick_split(splits, f.split);
            const auto row = ablate(model, ranking, split.data, split.column(config.task), parse_ablation_mode(f.mode),
                                    f.fraction, config.seed, config.random_runs);
            auto j = ablation_row_json(row);
            j["task"] = config.task;
            j["split"] = f.split;
            write_json(config.output_dir / ("ablation_" + f.mode + ".json"), j);
            print(j);
            return 0;
        }
        if (active == select_cmd) {
            if (!config.lambdas) {
                throw Error(Errc::InvalidConfig, "select-minimal needs --lambda1/--lambda2 (or lambdas in --config)");
            }
            const auto& eval = config.select_on_dev ? splits.dev : splits.test;
            const auto orc = oracle(splits.train.data, splits.train.column(config.task), eval.data,
                                    eval.column(config.task), lambdas.lambda1, lambdas.lambda2, train_cfg);
            const auto full = full_ranking(orc.model);
            auto trace = minimal_neurons(full, splits.train.data, splits.train.column(config.task), eval.data,
                                         eval.column(config.task), orc.accuracy, config.delta, lambdas.lambda1,
                                         lambdas.lambda2, train_cfg);
            trace.eval_split = config.select_on_dev ? "dev" : "test";
            auto j = selection_trace_json(trace);
            j["lambdas"] = {lambdas.lambda1, lambdas.lambda2};
            j["config"] = train_config_json(train_cfg);
            j["dataset_fingerprint"] = splits.train.data.fingerprint();
            save_model(orc.model, config.output_dir / "probe.json");
            write_json(config.output_dir / "ranking.json", ranking_json(full));
            write_json(config.output_dir / "selection_trace.json", j);
            print({{"oracle_accuracy", trace.oracle_accuracy}, {"num_selected", trace.minimal_set.size()}});
            return 0;
        }
        if (active == report_cmd) {
            const auto ranking = load_ranking(f.ranking);
            write_reports(config.output_dir, ranking, splits.train.data.layers());
            print({{"output_dir", config.output_dir.string()}, {"num_ranked", ranking.size()}});
            return 0;
        }
        return 2;
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << '\n';
        return (is_validation_error(e.code()) || e.code() == Errc::InvalidConfig) ? 1 : 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 2;
    }
}
