// Writes a planted-signal corpus (train/dev/test) for trying the pipeline
// without a language model.

#include <neuroprobe/synthetic.hpp>

#include <CLI11.hpp>

#include <iostream>
#include <numeric>

int main(int argc, char** argv)
{
    CLI::App app{"neuroprobe-synth: planted-signal activation corpus"};
    std::string out;
    neuroprobe::synthetic::PlantedSpec spec;
    std::size_t informative = 20;
    std::size_t first = 0;
    bool random_means = false;
    spec.signal = 1.5;
    app.add_option("out", out, "output split root")->required();
    app.add_option("--neurons", spec.num_neurons);
    app.add_option("--labels", spec.num_labels);
    app.add_option("--informative", informative, "number of planted neurons");
    app.add_option("--first-informative", first, "index of the first planted neuron");
    app.add_option("--signal", spec.signal, "mean shift of a planted neuron for its label");
    app.add_flag("--random-means", random_means,
                 "give planted neurons random +-signal means per label instead of one owning label");
    app.add_option("--train-tokens", spec.train_tokens);
    app.add_option("--dev-tokens", spec.dev_tokens);
    app.add_option("--test-tokens", spec.test_tokens);
    app.add_option("--task", spec.task);
    app.add_option("--seed", spec.seed);
    CLI11_PARSE(app, argc, argv);

    if (first + informative > spec.num_neurons) {
        std::cerr << "error: planted neurons exceed --neurons\n";
        return 1;
    }
    spec.informative.resize(informative);
    std::iota(spec.informative.begin(), spec.informative.end(), first);
    if (!random_means) {
        spec.owners = neuroprobe::synthetic::round_robin_owners(informative, spec.num_labels);
    }
    try {
        neuroprobe::synthetic::write_planted(out, neuroprobe::synthetic::make_planted(spec));
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 2;
    }
    std::cout << "wrote " << out << '\n';
    return 0;
}
