#pragma once

// Bit-width selection and quantization-aware training loops. One search
// session owns its model; sessions with different seeds or lambdas are
// independent and may run on separate threads.

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "mixq/common.hpp"
#include "mixq/graph.hpp"
#include "mixq/integer.hpp"
#include "mixq/layers.hpp"
#include "mixq/relaxed.hpp"
#include "mixq/tensor.hpp"

namespace mixq {

struct SearchOptions {
    std::vector<int> bit_choices = {2, 4, 8};
    double lambda = 0.0;
    int64_t epochs = 100;
    double lr = 0.01;
    uint64_t seed = 0;
    bool alpha_penalty_only = false;  // literal two-step update instead of the joint one
    int64_t sage_sample_cap = 0;
};

struct SearchRow {
    int64_t epoch = 0;
    double task_loss = 0.0;
    double penalty = 0.0;
    double expected_bits = 0.0;
};

struct SearchOutcome {
    BitWidthAssignment assignment;
    std::vector<SearchRow> log;
    Model relaxed_model;  // retains trained weights and quantizer state for finalize
};

namespace detail {

inline bool model_has_sage(const ModelConfig& c) {
    for (const auto& lc : c.layers)
        if (lc.kind == LayerKind::sage) return true;
    return false;
}

}  // namespace detail

// Train the relaxed architecture minimizing task_loss + lambda * penalty with
// a single joint update (weights and quantizer parameters follow the task
// loss; the mixing logits also see the penalty), then read the assignment off
// argmax(alpha).
inline SearchOutcome search(const GraphDataset& ds, const ModelConfig& config, const SearchOptions& opts) {
    if (opts.bit_choices.empty()) throw ConfigError("search: empty bit choice set");
    if (!std::isfinite(opts.lambda)) throw ConfigError("search: lambda must be finite");

    SearchOutcome out;
    out.relaxed_model = build_relaxed_architecture(config, ds, opts.bit_choices, opts.seed);
    Model& model = out.relaxed_model;
    model.sage_sample_cap = opts.sage_sample_cap;
    calibrate_model(model, ds);

    const std::vector<Tensor> params = model.learnable_params();
    std::vector<Tensor> alpha_params;
    for (const auto& c : model.components)
        if (c.rq) alpha_params.push_back(c.rq->alphas);

    Adam opt(opts.lr);
    Rng sample_rng = make_rng(opts.seed ^ 0x5a5a5a5a5a5a5a5aULL);
    const bool sample = opts.sage_sample_cap > 0 && detail::model_has_sage(config);

    for (int64_t epoch = 0; epoch < opts.epochs; ++epoch) {
        try {
            CsrF sampled;
            ForwardOptions fopts;
            PenaltyAccumulator acc;
            fopts.penalty = &acc;
            if (sample) {
                sampled = sample_neighbors(*ds.adjacency, opts.sage_sample_cap, sample_rng);
                fopts.sage_sampled = &sampled;
            }

            Tensor logits = model_forward(model, ds, fopts);
            Tensor task = softmax_cross_entropy(logits, ds.labels, ds.train_mask);
            if (!std::isfinite(task.item()))
                throw DomainError("non-finite task loss");

            out.log.push_back({epoch, task.item(), penalty_value(acc), expected_average_bits(acc)});

            Adam::zero_grad(params);
            if (opts.alpha_penalty_only) {
                // Algorithm-literal split: theta steps on the task loss, alpha
                // steps on lambda * C only.
                backward(task);
                Adam::zero_grad(alpha_params);
                if (opts.lambda != 0.0) backward(mul(Tensor::scalar(opts.lambda), penalty_cost(acc)));
            } else {
                backward(total_loss(task, acc, opts.lambda));
            }
            opt.step(params);
        } catch (const DomainError& e) {
            throw TrainingError("search diverged at epoch " + std::to_string(epoch) + ": " + e.what(), epoch);
        }
    }

    for (const auto& c : model.components)
        if (c.rq) out.assignment.items.push_back({c.id, c.role, c.rq->argmax_bits()});
    return out;
}

struct TrainOptions {
    int64_t epochs = 100;
    double lr = 0.01;
    int64_t sage_sample_cap = 0;
};

// Quantization-aware (or FP) training on the train mask.
inline void train_model(Model& model, const GraphDataset& ds, const TrainOptions& opts) {
    if (model.mode == Mode::relaxed)
        throw StateError("train_model: finalize the relaxed model before QAT retraining");
    calibrate_model(model, ds);
    const std::vector<Tensor> params = model.learnable_params();
    Adam opt(opts.lr);
    Rng sample_rng = make_rng(model.seed ^ 0xa5a5a5a5a5a5a5a5ULL);
    const bool sample = opts.sage_sample_cap > 0 && detail::model_has_sage(model.config);

    for (int64_t epoch = 0; epoch < opts.epochs; ++epoch) {
        try {
            CsrF sampled;
            ForwardOptions fopts;
            if (sample) {
                sampled = sample_neighbors(*ds.adjacency, opts.sage_sample_cap, sample_rng);
                fopts.sage_sampled = &sampled;
            }
            Tensor logits = model_forward(model, ds, fopts);
            Tensor loss = softmax_cross_entropy(logits, ds.labels, ds.train_mask);
            if (!std::isfinite(loss.item())) throw DomainError("non-finite loss");
            Adam::zero_grad(params);
            backward(loss);
            opt.step(params);
        } catch (const DomainError& e) {
            throw TrainingError("train diverged at epoch " + std::to_string(epoch) + ": " + e.what(), epoch);
        }
    }
}

enum class EvalMask { train, val, test };

struct EvalResult {
    Accuracy accuracy;
    std::vector<int64_t> predictions;
};

inline EvalResult evaluate(Model& model, const GraphDataset& ds, Mode mode, EvalMask mask_kind = EvalMask::test) {
    const std::vector<uint8_t>& mask = mask_kind == EvalMask::train  ? ds.train_mask
                                       : mask_kind == EvalMask::val ? ds.val_mask
                                                                    : ds.test_mask;
    EvalResult res;
    if (mode == Mode::integer) {
        IntegerModel im = compile_integer(model, ds);
        res.predictions = predictions(integer_forward(im, ds));
    } else if (mode == Mode::fp) {
        Model fp = model;
        fp.mode = Mode::fp;
        res.predictions = predictions(model_forward(fp, ds));
    } else {
        if (model.mode != mode) throw StateError("evaluate: checkpoint does not support mode");
        calibrate_model(model, ds);
        res.predictions = predictions(model_forward(model, ds));
    }
    res.accuracy = accuracy_on_mask(res.predictions, ds.labels, mask, ds.num_classes);
    return res;
}

}  // namespace mixq
