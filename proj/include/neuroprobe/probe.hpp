#pragma once

// Linear softmax probe with elastic-net penalty:
//
//   loss(theta, b) = mean_i -log softmax(theta z_i + b)[y_i]
//                    + lambda1 * |theta|_1 + lambda2 * |theta|_2^2
//
// The bias is never penalized. Training is minibatch Adam with the L1 term
// entering as a subgradient (sign(w), 0 at w == 0).

#include <neuroprobe/dataset.hpp>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

namespace neuroprobe {

struct TrainConfig
{
    int epochs = 10;
    std::size_t batch_size = 512;
    double learning_rate = 1e-3;
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.999;
    double adam_epsilon = 1e-8;
    std::uint64_t seed = 0;

    void validate() const
    {
        if (epochs < 1) {
            throw Error(Errc::InvalidConfig, "epochs must be >= 1");
        }
        if (batch_size < 1) {
            throw Error(Errc::InvalidConfig, "batch_size must be >= 1");
        }
        if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) {
            throw Error(Errc::InvalidConfig, "learning_rate must be > 0");
        }
        if (!(adam_beta1 >= 0.0 && adam_beta1 < 1.0) || !(adam_beta2 >= 0.0 && adam_beta2 < 1.0) ||
            !(adam_epsilon > 0.0)) {
            throw Error(Errc::InvalidConfig, "Adam betas must lie in [0,1) and epsilon must be > 0");
        }
    }
};

struct ProbeModel
{
    std::size_t num_labels = 0;
    std::size_t num_features = 0;
    std::vector<double> weights; ///< num_labels x num_features, label-major
    std::vector<double> bias;
    double lambda1 = 0.0;
    double lambda2 = 0.0;
    /// Source neuron of each feature column; nullopt when trained on all neurons.
    std::optional<std::vector<std::size_t>> subset;
    std::size_t source_neurons = 0;
    std::string dataset_fingerprint;
    std::string task;
    std::vector<std::string> tagset;
    TrainConfig config;

    static ProbeModel zeros(std::size_t labels, std::size_t features)
    {
        ProbeModel m;
        m.num_labels = labels;
        m.num_features = features;
        m.source_neurons = features;
        m.weights.assign(labels * features, 0.0);
        m.bias.assign(labels, 0.0);
        return m;
    }

    double weight(std::size_t label, std::size_t feature) const { return weights[label * num_features + feature]; }
    double& weight(std::size_t label, std::size_t feature) { return weights[label * num_features + feature]; }

    std::span<const double> label_weights(std::size_t label) const
    {
        return std::span<const double>(weights).subspan(label * num_features, num_features);
    }

    std::size_t source_index(std::size_t feature) const { return subset ? (*subset)[feature] : feature; }
    bool is_full() const noexcept { return !subset.has_value(); }
};

/// Rows of a row-major feature matrix plus their gold labels. `rows`, when
/// non-empty, selects (and orders) the rows that make up the batch.
template <class Scalar>
struct BatchView
{
    std::span<const Scalar> features;
    std::size_t num_features = 0;
    std::span<const std::uint32_t> labels;
    std::span<const std::size_t> rows = {};

    std::size_t size() const noexcept { return rows.empty() ? labels.size() : rows.size(); }
    std::size_t row_index(std::size_t i) const { return rows.empty() ? i : rows[i]; }
    std::span<const Scalar> row(std::size_t i) const
    {
        return features.subspan(row_index(i) * num_features, num_features);
    }
    std::uint32_t label(std::size_t i) const { return labels[row_index(i)]; }
};

struct Gradient
{
    std::vector<double> weights;
    std::vector<double> bias;
};

namespace detail {

template <class Scalar>
void compute_logits(const ProbeModel& model, std::span<const Scalar> row, std::span<double> out)
{
    const auto f = model.num_features;
    for (std::size_t t = 0; t < model.num_labels; ++t) {
        const double* w = model.weights.data() + t * f;
        double acc = model.bias[t];
        for (std::size_t j = 0; j < f; ++j) {
            acc += w[j] * static_cast<double>(row[j]);
        }
        out[t] = acc;
    }
}

/// In-place softmax. Returns log-sum-exp of the original values.
inline double softmax_inplace(std::span<double> v)
{
    const double mx = *std::max_element(v.begin(), v.end());
    double sum = 0.0;
    for (auto& x : v) {
        x = std::exp(x - mx);
        sum += x;
    }
    for (auto& x : v) {
        x /= sum;
    }
    return mx + std::log(sum);
}

inline std::size_t argmax_lowest(std::span<const double> v)
{
    std::size_t best = 0;
    for (std::size_t i = 1; i < v.size(); ++i) {
        if (v[i] > v[best]) {
            best = i;
        }
    }
    return best;
}

template <class Scalar>
void check_batch(const ProbeModel& model, const BatchView<Scalar>& batch)
{
    if (batch.size() == 0) {
        throw Error(Errc::EmptyInput, "empty batch");
    }
    if (batch.num_features != model.num_features) {
        throw Error(Errc::DimensionMismatch, "batch has " + std::to_string(batch.num_features) +
                                                 " features, model expects " + std::to_string(model.num_features));
    }
}

inline double sign(double w) { return w > 0.0 ? 1.0 : (w < 0.0 ? -1.0 : 0.0); }

} // namespace detail

template <class Scalar>
std::vector<double> predict_proba(const ProbeModel& model, std::span<const Scalar> row)
{
    if (row.size() != model.num_features) {
        throw Error(Errc::DimensionMismatch, "row has " + std::to_string(row.size()) + " values, model expects " +
                                                 std::to_string(model.num_features));
    }
    std::vector<double> p(model.num_labels);
    detail::compute_logits(model, row, std::span<double>(p));
    detail::softmax_inplace(p);
    return p;
}

inline double penalty(const ProbeModel& model)
{
    double l1 = 0.0;
    double l2 = 0.0;
    for (double w : model.weights) {
        l1 += std::abs(w);
        l2 += w * w;
    }
    return model.lambda1 * l1 + model.lambda2 * l2;
}

template <class Scalar>
double mean_nll(const ProbeModel& model, const BatchView<Scalar>& batch)
{
    detail::check_batch(model, batch);
    std::vector<double> z(model.num_labels);
    double total = 0.0;
    for (std::size_t i = 0; i < batch.size(); ++i) {
        detail::compute_logits(model, batch.row(i), std::span<double>(z));
        const double mx = *std::max_element(z.begin(), z.end());
        double sum = 0.0;
        for (double v : z) {
            sum += std::exp(v - mx);
        }
        total += mx + std::log(sum) - z[batch.label(i)];
    }
    return total / static_cast<double>(batch.size());
}

template <class Scalar>
double loss(const ProbeModel& model, const BatchView<Scalar>& batch)
{
    return mean_nll(model, batch) + penalty(model);
}

/// Gradient of the mean NLL only (no penalty terms).
template <class Scalar>
void nll_gradient(const ProbeModel& model, const BatchView<Scalar>& batch, Gradient& grad)
{
    detail::check_batch(model, batch);
    const auto f = model.num_features;
    grad.weights.assign(model.weights.size(), 0.0);
    grad.bias.assign(model.num_labels, 0.0);
    std::vector<double> p(model.num_labels);
    for (std::size_t i = 0; i < batch.size(); ++i) {
        const auto row = batch.row(i);
        detail::compute_logits(model, row, std::span<double>(p));
        detail::softmax_inplace(p);
        p[batch.label(i)] -= 1.0;
        for (std::size_t t = 0; t < model.num_labels; ++t) {
            const double r = p[t];
            grad.bias[t] += r;
            double* g = grad.weights.data() + t * f;
            for (std::size_t j = 0; j < f; ++j) {
                g[j] += r * static_cast<double>(row[j]);
            }
        }
    }
    const double inv = 1.0 / static_cast<double>(batch.size());
    for (auto& g : grad.weights) {
        g *= inv;
    }
    for (auto& g : grad.bias) {
        g *= inv;
    }
}

/// Analytic (sub)gradient of `loss`; d|w|/dw is taken as 0 at w == 0.
template <class Scalar>
Gradient gradient(const ProbeModel& model, const BatchView<Scalar>& batch)
{
    Gradient grad;
    nll_gradient(model, batch, grad);
    for (std::size_t k = 0; k < grad.weights.size(); ++k) {
        const double w = model.weights[k];
        grad.weights[k] += model.lambda1 * detail::sign(w) + 2.0 * model.lambda2 * w;
    }
    return grad;
}

namespace detail {

inline void check_subset(std::span<const std::size_t> subset, std::size_t num_neurons)
{
    if (subset.empty()) {
        throw Error(Errc::EmptySubset, "feature subset is empty");
    }
    std::vector<char> seen(num_neurons, 0);
    for (auto n : subset) {
        if (n >= num_neurons) {
            throw Error(Errc::IndexOutOfRange, "neuron " + std::to_string(n) + " >= " + std::to_string(num_neurons));
        }
        if (seen[n]) {
            throw Error(Errc::IndexOutOfRange, "neuron " + std::to_string(n) + " listed twice");
        }
        seen[n] = 1;
    }
}

inline void check_lambdas(double lambda1, double lambda2)
{
    if (!(lambda1 >= 0.0) || !(lambda2 >= 0.0) || !std::isfinite(lambda1) || !std::isfinite(lambda2)) {
        throw Error(Errc::InvalidConfig, "regularization strengths must be finite and >= 0");
    }
}

} // namespace detail

/// Trains a probe from zero initialization. Minibatch order comes from a
/// std::mt19937_64 seeded with `config.seed`, reshuffled every epoch; the
/// final partial batch is kept.
inline ProbeModel train(const ActivationDataset& data, const LabelColumn& labels, const TrainConfig& config,
                        double lambda1, double lambda2,
                        std::optional<std::span<const std::size_t>> feature_subset = std::nullopt)
{
    config.validate();
    detail::check_lambdas(lambda1, lambda2);
    if (labels.labels.size() != data.num_tokens()) {
        throw Error(Errc::LabelAlignmentError, "label column does not match dataset rows");
    }
    if (labels.num_labels() == 0) {
        throw Error(Errc::DegenerateTagset, "empty tagset");
    }

    std::vector<float> gathered;
    std::span<const float> features = data.activations();
    std::size_t num_features = data.num_neurons();
    if (feature_subset) {
        detail::check_subset(*feature_subset, data.num_neurons());
        num_features = feature_subset->size();
        gathered.reserve(data.num_tokens() * num_features);
        for (std::size_t r = 0; r < data.num_tokens(); ++r) {
            const auto row = data.row(r);
            for (auto c : *feature_subset) {
                gathered.push_back(row[c]);
            }
        }
        features = gathered;
    }

    auto model = ProbeModel::zeros(labels.num_labels(), num_features);
    model.lambda1 = lambda1;
    model.lambda2 = lambda2;
    model.source_neurons = data.num_neurons();
    model.dataset_fingerprint = data.fingerprint();
    model.task = labels.task_name;
    model.tagset = labels.tagset;
    model.config = config;
    if (feature_subset) {
        model.subset.emplace(feature_subset->begin(), feature_subset->end());
    }

    const auto n = data.num_tokens();
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::mt19937_64 rng(config.seed);

    std::vector<double> m_w(model.weights.size(), 0.0), v_w(model.weights.size(), 0.0);
    std::vector<double> m_b(model.num_labels, 0.0), v_b(model.num_labels, 0.0);
    double beta1_pow = 1.0;
    double beta2_pow = 1.0;
    Gradient grad;

    auto adam = [&](std::vector<double>& param, std::vector<double>& m, std::vector<double>& v,
                    const std::vector<double>& g, double c1, double c2) {
        for (std::size_t k = 0; k < param.size(); ++k) {
            m[k] = config.adam_beta1 * m[k] + (1.0 - config.adam_beta1) * g[k];
            v[k] = config.adam_beta2 * v[k] + (1.0 - config.adam_beta2) * g[k] * g[k];
            param[k] -= config.learning_rate * (m[k] / c1) / (std::sqrt(v[k] / c2) + config.adam_epsilon);
        }
    };

    for (int epoch = 0; epoch < config.epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), rng);
        for (std::size_t start = 0; start < n; start += config.batch_size) {
            const auto len = std::min(config.batch_size, n - start);
            BatchView<float> batch{features, num_features, labels.labels,
                                   std::span<const std::size_t>(order).subspan(start, len)};
            nll_gradient(model, batch, grad);
            for (std::size_t k = 0; k < grad.weights.size(); ++k) {
                const double w = model.weights[k];
                grad.weights[k] += lambda1 * detail::sign(w) + 2.0 * lambda2 * w;
            }
            beta1_pow *= config.adam_beta1;
            beta2_pow *= config.adam_beta2;
            adam(model.weights, m_w, v_w, grad.weights, 1.0 - beta1_pow, 1.0 - beta2_pow);
            adam(model.bias, m_b, v_b, grad.bias, 1.0 - beta1_pow, 1.0 - beta2_pow);
        }
    }

    const auto finite = [](double x) { return std::isfinite(x); };
    if (!std::all_of(model.weights.begin(), model.weights.end(), finite) ||
        !std::all_of(model.bias.begin(), model.bias.end(), finite)) {
        throw Error(Errc::TrainingDiverged, "non-finite parameters after training");
    }
    return model;
}

namespace detail {

/// Shared evaluation path. `keep`, when given, is indexed by feature column;
/// dropped columns read as 0.
inline double accuracy(const ProbeModel& model, const ActivationDataset& data, const LabelColumn& labels,
                       const std::vector<char>& keep)
{
    const std::size_t expected = model.is_full() ? model.num_features : model.source_neurons;
    if (data.num_neurons() != expected) {
        throw Error(Errc::DimensionMismatch, "dataset has " + std::to_string(data.num_neurons()) +
                                                 " neurons, model expects " + std::to_string(expected));
    }
    if (labels.labels.size() != data.num_tokens()) {
        throw Error(Errc::LabelAlignmentError, "label column does not match dataset rows");
    }
    if (labels.num_labels() != model.num_labels) {
        throw Error(Errc::DimensionMismatch, "tagset size differs from model label count");
    }
    std::vector<float> scratch(model.num_features);
    std::vector<double> z(model.num_labels);
    std::size_t correct = 0;
    for (std::size_t r = 0; r < data.num_tokens(); ++r) {
        const auto row = data.row(r);
        for (std::size_t f = 0; f < model.num_features; ++f) {
            scratch[f] = keep[f] ? row[model.source_index(f)] : 0.0f;
        }
        compute_logits(model, std::span<const float>(scratch), std::span<double>(z));
        if (argmax_lowest(z) == labels.labels[r]) {
            ++correct;
        }
    }
    return static_cast<double>(correct) / static_cast<double>(data.num_tokens());
}

} // namespace detail

/// Label with the highest probability; ties go to the lowest id.
template <class Scalar>
std::size_t predict(const ProbeModel& model, std::span<const Scalar> row)
{
    return detail::argmax_lowest(predict_proba(model, row));
}

/// Token-level accuracy. Subset models read their columns from the full dataset.
inline double evaluate(const ProbeModel& model, const ActivationDataset& data, const LabelColumn& labels)
{
    return detail::accuracy(model, data, labels, std::vector<char>(model.num_features, 1));
}

/// Accuracy of a full-feature probe with every activation outside `keep_set` zeroed.
inline double evaluate_ablated(const ProbeModel& model, const ActivationDataset& data, const LabelColumn& labels,
                               std::span<const std::size_t> keep_set)
{
    if (!model.is_full()) {
        throw Error(Errc::InvalidConfig, "ablation needs a probe trained on all neurons");
    }
    std::vector<char> keep(model.num_features, 0);
    for (auto n : keep_set) {
        if (n >= model.num_features) {
            throw Error(Errc::IndexOutOfRange, "neuron " + std::to_string(n) + " >= " +
                                                   std::to_string(model.num_features));
        }
        if (keep[n]) {
            throw Error(Errc::IndexOutOfRange, "neuron " + std::to_string(n) + " listed twice");
        }
        keep[n] = 1;
    }
    return detail::accuracy(model, data, labels, keep);
}

inline double selectivity(double acc_linguistic, double acc_control) { return acc_linguistic - acc_control; }

struct FullBatchResult
{
    ProbeModel model;
    double stationarity = 0.0; ///< norm of the minimum-norm subgradient at the solution
    std::size_t iterations = 0;
    bool converged = false;
};

/// Deterministic full-batch minimizer of `loss` (accelerated proximal
/// gradient with backtracking and objective-based restart). Used where an
/// exact optimum is required; minibatch Adam stays the training path.
template <class Scalar>
FullBatchResult minimize_full_batch(const BatchView<Scalar>& batch, std::size_t num_labels, double lambda1,
                                    double lambda2, double tolerance = 1e-6, std::size_t max_iterations = 2'000'000)
{
    detail::check_lambdas(lambda1, lambda2);
    auto x = ProbeModel::zeros(num_labels, batch.num_features);
    x.lambda2 = lambda2;
    x.lambda1 = 0.0; // smooth part only while iterating

    auto smooth = [&](const ProbeModel& m) {
        double l2 = 0.0;
        for (double w : m.weights) {
            l2 += w * w;
        }
        return mean_nll(m, batch) + lambda2 * l2;
    };
    auto smooth_grad = [&](const ProbeModel& m, Gradient& g) {
        nll_gradient(m, batch, g);
        for (std::size_t k = 0; k < g.weights.size(); ++k) {
            g.weights[k] += 2.0 * lambda2 * m.weights[k];
        }
    };
    auto l1 = [&](const ProbeModel& m) {
        double s = 0.0;
        for (double w : m.weights) {
            s += std::abs(w);
        }
        return lambda1 * s;
    };
    auto stationarity = [&](const ProbeModel& m, const Gradient& g) {
        double s = 0.0;
        for (std::size_t k = 0; k < g.weights.size(); ++k) {
            const double w = m.weights[k];
            double r = 0.0;
            if (w != 0.0) {
                r = g.weights[k] + lambda1 * detail::sign(w);
            } else {
                r = detail::sign(g.weights[k]) * std::max(std::abs(g.weights[k]) - lambda1, 0.0);
            }
            s += r * r;
        }
        for (double gb : g.bias) {
            s += gb * gb;
        }
        return std::sqrt(s);
    };

    ProbeModel y = x;
    Gradient gy;
    Gradient gx;
    double step = 1.0;
    double momentum = 1.0;
    double fx = smooth(x) + l1(x);
    FullBatchResult result;
    for (std::size_t it = 1; it <= max_iterations; ++it) {
        smooth_grad(y, gy);
        const double fy = smooth(y);
        ProbeModel next = y;
        for (;;) {
            for (std::size_t k = 0; k < next.weights.size(); ++k) {
                const double z = y.weights[k] - step * gy.weights[k];
                const double shrink = step * lambda1;
                next.weights[k] = z > shrink ? z - shrink : (z < -shrink ? z + shrink : 0.0);
            }
            for (std::size_t t = 0; t < next.bias.size(); ++t) {
                next.bias[t] = y.bias[t] - step * gy.bias[t];
            }
            double lin = 0.0;
            double sq = 0.0;
            for (std::size_t k = 0; k < next.weights.size(); ++k) {
                const double d = next.weights[k] - y.weights[k];
                lin += gy.weights[k] * d;
                sq += d * d;
            }
            for (std::size_t t = 0; t < next.bias.size(); ++t) {
                const double d = next.bias[t] - y.bias[t];
                lin += gy.bias[t] * d;
                sq += d * d;
            }
            if (smooth(next) <= fy + lin + sq / (2.0 * step) + 1e-15 || step < 1e-12) {
                break;
            }
            step *= 0.5;
        }
        const double fnext = smooth(next) + l1(next);
        double momentum_next = 0.5 * (1.0 + std::sqrt(1.0 + 4.0 * momentum * momentum));
        if (fnext > fx && momentum > 1.0) {
            // restart from the last iterate without momentum
            y = x;
            momentum = 1.0;
            continue;
        }
        const double mix = (momentum - 1.0) / momentum_next;
        y = next;
        for (std::size_t k = 0; k < y.weights.size(); ++k) {
            y.weights[k] += mix * (next.weights[k] - x.weights[k]);
        }
        for (std::size_t t = 0; t < y.bias.size(); ++t) {
            y.bias[t] += mix * (next.bias[t] - x.bias[t]);
        }
        x = std::move(next);
        fx = fnext;
        momentum = momentum_next;

        smooth_grad(x, gx);
        result.stationarity = stationarity(x, gx);
        result.iterations = it;
        if (result.stationarity < tolerance) {
            result.converged = true;
            break;
        }
    }
    x.lambda1 = lambda1;
    result.model = std::move(x);
    return result;
}

} // namespace neuroprobe
