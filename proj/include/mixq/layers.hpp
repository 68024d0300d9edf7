#pragma once

// Quantizable GCN, GIN and GraphSAGE layers plus the model builder. A model
// carries its parameters and a flat list of quantizable components; the mode
// decides whether a component applies nothing (fp), a fixed quantizer
// (fake_quant) or a softmax mixture over bit choices (relaxed). The integer
// inference path lives in integer.hpp and mirrors this forward stage by
// stage.
//
// GCN layers run transform-first, H' = relu(A_hat (H Theta)): the message
// linear output and the aggregation output are the two quantized
// intermediates of each layer, matching the per-layer component set
// {adjacency, weight, linear output, aggregation output}.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include <json.hpp>

#include "mixq/common.hpp"
#include "mixq/graph.hpp"
#include "mixq/qmp.hpp"
#include "mixq/quantize.hpp"
#include "mixq/relaxed.hpp"
#include "mixq/tensor.hpp"

namespace mixq {

enum class LayerKind { gcn, gin, sage, linear };

inline const char* layer_kind_name(LayerKind k) {
    switch (k) {
        case LayerKind::gcn: return "gcn";
        case LayerKind::gin: return "gin";
        case LayerKind::sage: return "sage";
        case LayerKind::linear: return "linear";
    }
    return "?";
}

inline LayerKind layer_kind_from_name(const std::string& s) {
    if (s == "gcn") return LayerKind::gcn;
    if (s == "gin") return LayerKind::gin;
    if (s == "sage") return LayerKind::sage;
    if (s == "linear") return LayerKind::linear;
    throw ConfigError("unknown layer kind: " + s);
}

struct LayerConfig {
    LayerKind kind = LayerKind::gcn;
    int64_t in_dim = 0;
    int64_t out_dim = 0;
    bool relu_activation = true;          // activation in {relu, none}
    std::vector<int64_t> gin_mlp_dims;    // hidden widths of the GIN MLP
    bool gin_epsilon_learnable = true;
};

enum class Mode { fp, fake_quant, relaxed, integer };

inline const char* mode_name(Mode m) {
    switch (m) {
        case Mode::fp: return "fp";
        case Mode::fake_quant: return "fake_quant";
        case Mode::relaxed: return "relaxed";
        case Mode::integer: return "integer";
    }
    return "?";
}

inline Mode mode_from_name(const std::string& s) {
    if (s == "fp") return Mode::fp;
    if (s == "fake_quant") return Mode::fake_quant;
    if (s == "relaxed") return Mode::relaxed;
    if (s == "integer") return Mode::integer;
    throw ConfigError("unknown mode: " + s);
}

struct ModelConfig {
    std::vector<LayerConfig> layers;
    Task task = Task::node_classification;
    bool global_max_pooling = false;  // graph tasks pool before the linear head

    void validate() const {
        if (layers.empty()) throw ConfigError("model: at least one layer required");
        if (task == Task::graph_classification && !global_max_pooling)
            throw ConfigError("model: graph classification requires global max pooling");
        for (size_t i = 1; i < layers.size(); ++i)
            if (layers[i].in_dim != layers[i - 1].out_dim)
                throw ConfigError("model: layer " + std::to_string(i) + " input dim " +
                                  std::to_string(layers[i].in_dim) + " does not match previous output " +
                                  std::to_string(layers[i - 1].out_dim));
    }
};

// ---------------------------------------------------------------------------
// Components

struct Component {
    std::string id;
    Role role = Role::output;
    Granularity gran = Granularity::per_tensor;
    bool is_signed = true;
    bool symmetric = false;
    std::shared_ptr<Quantizer> q;           // fake_quant mode
    std::shared_ptr<RelaxedQuantizer> rq;   // relaxed mode
};

struct LayerParams {
    std::vector<Tensor> weights;  // gcn/linear: {W}; sage: {W_root, W_neigh}; gin: MLP weights
    Tensor gin_eps;               // [1]
};

struct Model {
    ModelConfig config;
    Mode mode = Mode::fp;
    uint64_t seed = 0;
    std::vector<LayerParams> params;
    std::vector<Component> components;
    bool calibrated = false;
    int64_t sage_sample_cap = 0;  // 0 = full neighborhood
    BitWidthAssignment assignment;  // set by finalize

    Component& component(const std::string& id) {
        for (auto& c : components)
            if (c.id == id) return c;
        throw StateError("model: unknown component " + id);
    }
    const Component& component(const std::string& id) const {
        return const_cast<Model*>(this)->component(id);
    }

    std::vector<Tensor> learnable_params() const {
        std::vector<Tensor> out;
        for (const auto& lp : params) {
            for (const auto& w : lp.weights) out.push_back(w);
            if (lp.gin_eps.defined() && lp.gin_eps.requires_grad()) out.push_back(lp.gin_eps);
        }
        for (const auto& c : components) {
            if (c.q && c.q->learnable && c.q->log_s.defined()) {
                out.push_back(c.q->log_s);
                out.push_back(c.q->zero);
            }
            if (c.rq) {
                out.push_back(c.rq->alphas);
                for (const auto& child : c.rq->children)
                    if (child->learnable && child->log_s.defined()) {
                        out.push_back(child->log_s);
                        out.push_back(child->zero);
                    }
            }
        }
        return out;
    }
};

namespace detail {

// Component recipes. Adjacency entries are nonnegative, so their quantizers
// are unsigned and symmetric (zero point pinned at 0, which also represents
// GIN's unit weights exactly). Inputs are unsigned when the dataset features
// are nonnegative; everything else is signed asymmetric.
inline void push_component(std::vector<Component>& out, std::string id, Role role, Granularity gran,
                           bool is_signed, bool symmetric = false) {
    Component c;
    c.id = std::move(id);
    c.role = role;
    c.gran = gran;
    c.is_signed = is_signed;
    c.symmetric = symmetric;
    out.push_back(std::move(c));
}

inline std::vector<Component> enumerate_components(const ModelConfig& config, bool input_nonneg) {
    std::vector<Component> out;
    push_component(out, "input/x", Role::input, Granularity::per_tensor, !input_nonneg);
    for (size_t l = 0; l < config.layers.size(); ++l) {
        const LayerConfig& lc = config.layers[l];
        const std::string p = "layer" + std::to_string(l) + "/";
        switch (lc.kind) {
            case LayerKind::gcn:
                push_component(out, p + "adj", Role::aggregation, Granularity::per_row, false, true);
                push_component(out, p + "weight", Role::weight, Granularity::per_tensor, true);
                push_component(out, p + "msg_out", Role::output, Granularity::per_tensor, true);
                push_component(out, p + "agg_out", Role::aggregation, Granularity::per_tensor, true);
                break;
            case LayerKind::gin: {
                push_component(out, p + "adj", Role::aggregation, Granularity::per_row, false, true);
                push_component(out, p + "agg_out", Role::aggregation, Granularity::per_tensor, true);
                std::vector<int64_t> dims = lc.gin_mlp_dims;
                dims.push_back(lc.out_dim);
                for (size_t m = 0; m < dims.size(); ++m) {
                    const std::string mp = p + "mlp" + std::to_string(m) + "/";
                    push_component(out, mp + "weight", Role::weight, Granularity::per_tensor, true);
                    push_component(out, mp + "out", Role::output, Granularity::per_tensor, true);
                }
                break;
            }
            case LayerKind::sage:
                push_component(out, p + "adj", Role::aggregation, Granularity::per_row, false, true);
                push_component(out, p + "agg_out", Role::aggregation, Granularity::per_tensor, true);
                push_component(out, p + "weight_root", Role::weight, Granularity::per_tensor, true);
                push_component(out, p + "weight_neigh", Role::weight, Granularity::per_tensor, true);
                push_component(out, p + "out", Role::output, Granularity::per_tensor, true);
                break;
            case LayerKind::linear:
                push_component(out, p + "weight", Role::weight, Granularity::per_tensor, true);
                push_component(out, p + "out", Role::output, Granularity::per_tensor, true);
                break;
        }
    }
    return out;
}

inline bool features_nonneg(const GraphDataset& ds) {
    for (double v : ds.features.values())
        if (v < 0.0) return false;
    return true;
}

}  // namespace detail

// Fresh FP model with seeded Glorot-style initialization.
inline Model build_model(const ModelConfig& config, const GraphDataset& ds, uint64_t seed) {
    config.validate();
    if (!config.layers.empty() && config.layers.front().in_dim != ds.feature_dim())
        throw ConfigError("model: first layer input dim must match the dataset feature dim");

    Model m;
    m.config = config;
    m.seed = seed;
    m.mode = Mode::fp;
    Rng rng = make_rng(seed);
    for (const LayerConfig& lc : config.layers) {
        LayerParams lp;
        auto init = [&rng](int64_t rows, int64_t cols) {
            return Tensor::randn({rows, cols}, rng, std::sqrt(2.0 / static_cast<double>(rows + cols)), true);
        };
        switch (lc.kind) {
            case LayerKind::gcn:
            case LayerKind::linear:
                lp.weights.push_back(init(lc.in_dim, lc.out_dim));
                break;
            case LayerKind::sage:
                lp.weights.push_back(init(lc.in_dim, lc.out_dim));
                lp.weights.push_back(init(lc.in_dim, lc.out_dim));
                break;
            case LayerKind::gin: {
                int64_t prev = lc.in_dim;
                std::vector<int64_t> dims = lc.gin_mlp_dims;
                dims.push_back(lc.out_dim);
                for (int64_t d : dims) {
                    lp.weights.push_back(init(prev, d));
                    prev = d;
                }
                lp.gin_eps = Tensor::zeros({1}, lc.gin_epsilon_learnable);
                break;
            }
        }
        m.params.push_back(std::move(lp));
    }
    m.components = detail::enumerate_components(config, detail::features_nonneg(ds));
    return m;
}

// Attach fixed-precision quantizers (uniform bits, or per-component from an
// assignment), switching the model into fake_quant mode.
inline void attach_fake_quantizers(Model& m, int bits) {
    for (auto& c : m.components) {
        c.q = std::make_shared<Quantizer>(bits, c.is_signed, c.gran, c.symmetric);
        c.rq.reset();
    }
    m.mode = Mode::fake_quant;
    m.calibrated = false;
}

inline void attach_fake_quantizers(Model& m, const BitWidthAssignment& assignment) {
    for (auto& c : m.components) {
        const auto* item = assignment.find(c.id);
        if (!item) throw ConfigError("assignment: missing component " + c.id);
        c.q = std::make_shared<Quantizer>(item->bits, c.is_signed, c.gran, c.symmetric);
        c.rq.reset();
    }
    m.assignment = assignment;
    m.mode = Mode::fake_quant;
    m.calibrated = false;
}

// Algorithm-style relaxed architecture: every component gains one relaxed
// quantizer over the bit choice set.
inline void attach_relaxed_quantizers(Model& m, const std::vector<int>& bit_choices) {
    if (bit_choices.empty()) throw ConfigError("relaxed architecture: empty bit choice set");
    for (auto& c : m.components) {
        c.rq = std::make_shared<RelaxedQuantizer>(
            RelaxedQuantizer::make(c.id, c.role, bit_choices, c.is_signed, c.gran, c.symmetric));
        c.q.reset();
    }
    m.mode = Mode::relaxed;
    m.calibrated = false;
}

inline Model build_relaxed_architecture(const ModelConfig& config, const GraphDataset& ds,
                                        const std::vector<int>& bit_choices, uint64_t seed) {
    Model m = build_model(config, ds, seed);
    attach_relaxed_quantizers(m, bit_choices);
    return m;
}

// Replace every relaxed quantizer by the chosen child, keeping that child's
// learned scale and zero point as the QAT warm start.
inline Model finalize(const Model& relaxed, const BitWidthAssignment& assignment) {
    if (relaxed.mode != Mode::relaxed) throw StateError("finalize: model is not in relaxed mode");
    Model m = relaxed;
    for (auto& c : m.components) {
        const auto* item = assignment.find(c.id);
        if (!item) throw ConfigError("finalize: assignment misses component " + c.id);
        auto it = std::find(c.rq->bit_choices.begin(), c.rq->bit_choices.end(), item->bits);
        if (it == c.rq->bit_choices.end())
            throw ConfigError("finalize: bits " + std::to_string(item->bits) + " not among the choices of " + c.id);
        c.q = c.rq->children[static_cast<size_t>(it - c.rq->bit_choices.begin())];
        c.rq.reset();
    }
    m.assignment = assignment;
    m.mode = Mode::fake_quant;
    m.calibrated = relaxed.calibrated;
    return m;
}

// ---------------------------------------------------------------------------
// Pooling

// Per-graph columnwise max. Quantized inputs stay within their range (the max
// of in-range values is in range), so pooling needs no quantizer of its own.
inline Tensor global_max_pool(const Tensor& h, const std::vector<int64_t>& graph_of, int64_t num_graphs) {
    if (h.shape().size() != 2 || static_cast<int64_t>(graph_of.size()) != h.dim(0))
        throw DimensionError("global_max_pool: assignment must cover all rows");
    const int64_t n = h.dim(0), f = h.dim(1);
    std::vector<double> out(static_cast<size_t>(num_graphs * f), -std::numeric_limits<double>::infinity());
    auto argmax = std::make_shared<std::vector<int64_t>>(static_cast<size_t>(num_graphs * f), -1);
    const auto& hv = h.values();
    for (int64_t i = 0; i < n; ++i) {
        const int64_t g = graph_of[static_cast<size_t>(i)];
        for (int64_t j = 0; j < f; ++j) {
            const size_t oi = static_cast<size_t>(g * f + j);
            const double v = hv[static_cast<size_t>(i * f + j)];
            if (v > out[oi]) {
                out[oi] = v;
                (*argmax)[oi] = i * f + j;
            }
        }
    }
    for (size_t i = 0; i < out.size(); ++i)
        if ((*argmax)[i] < 0) throw InvalidArgument("global_max_pool: empty graph " + std::to_string(i / f));

    auto hp = h.node_ptr();
    return detail::make_op({num_graphs, f}, std::move(out), {h}, [hp, argmax](TensorNode& self) {
        auto& gh = hp->ensure_grad();
        for (size_t i = 0; i < self.grad.size(); ++i) gh[static_cast<size_t>((*argmax)[i])] += self.grad[i];
    });
}

// ---------------------------------------------------------------------------
// Forward pass

namespace detail {

// One component's mode-dependent application point.
struct QSlot {
    Component* comp = nullptr;
    Mode mode = Mode::fp;
    bool calibrating = false;
    PenaltyAccumulator* acc = nullptr;

    Tensor apply(const Tensor& x, const Slicing& slicing) const {
        if (mode == Mode::fp || comp == nullptr) return x;
        if (mode == Mode::fake_quant) {
            if (calibrating && !comp->q->calibrated) calibrate_minmax(*comp->q, x.values(), slicing);
            return fake_quantize(*comp->q, x, slicing);
        }
        // relaxed
        if (calibrating)
            for (auto& child : comp->rq->children)
                if (!child->calibrated) calibrate_minmax(*child, x.values(), slicing);
        if (acc) acc->record(comp->rq, x.numel());
        return mix_forward(*comp->rq, x, slicing);
    }

    Tensor apply_dense(const Tensor& x) const {
        if (mode == Mode::fp || comp == nullptr) return x;
        const Granularity g = mode == Mode::fake_quant ? comp->q->gran : comp->rq->children.front()->gran;
        return apply(x, Slicing::dense(g, x.dim(0), x.dim(1)));
    }

    Tensor apply_csr(const Tensor& values, const CsrF& a) const {
        if (mode == Mode::fp || comp == nullptr) return values;
        const Granularity g = mode == Mode::fake_quant ? comp->q->gran : comp->rq->children.front()->gran;
        return apply(values, Slicing::csr(g, a));
    }
};

}  // namespace detail

// Uniform-neighbor subsampling for GraphSAGE: keep at most `cap` entries per
// row, chosen without replacement.
inline CsrF sample_neighbors(const CsrF& a, int64_t cap, Rng& rng) {
    if (cap <= 0) return a;
    CsrF out;
    out.n_rows = a.n_rows;
    out.n_cols = a.n_cols;
    out.row_ptr.assign(static_cast<size_t>(a.n_rows) + 1, 0);
    std::vector<std::tuple<int64_t, int64_t, double>> kept;
    for (int64_t r = 0; r < a.n_rows; ++r) {
        const int64_t deg = a.row_ptr[r + 1] - a.row_ptr[r];
        std::vector<int64_t> idx(static_cast<size_t>(deg));
        for (int64_t e = 0; e < deg; ++e) idx[static_cast<size_t>(e)] = a.row_ptr[r] + e;
        if (deg > cap) {
            std::shuffle(idx.begin(), idx.end(), rng);
            idx.resize(static_cast<size_t>(cap));
        }
        for (int64_t e : idx) kept.emplace_back(r, a.col_idx[e], a.values[e]);
    }
    return CsrF::from_coo(a.n_rows, a.n_cols, std::move(kept));
}

// Layer forwards. `h` arrives already quantized by the input component or the
// previous layer; intermediate quantizers apply pre-activation.

inline Tensor gcn_forward(const Tensor& h, CsrPtr a_hat, const Tensor& a_values, const Tensor& theta,
                          const detail::QSlot& adj, const detail::QSlot& weight, const detail::QSlot& msg_out,
                          const detail::QSlot& agg_out, bool relu_activation) {
    Tensor theta_q = weight.apply_dense(theta);
    Tensor msg = msg_out.apply_dense(matmul(h, theta_q));
    Tensor a_q = adj.apply_csr(a_values, *a_hat);
    Tensor y = agg_out.apply_dense(spmm_values_tensor(a_hat, a_q, msg));
    return relu_activation ? relu(y) : y;
}

inline Tensor gin_forward(const Tensor& h, CsrPtr a, const Tensor& a_values, const Tensor& eps,
                          const std::vector<Tensor>& mlp_weights, const detail::QSlot& adj,
                          const detail::QSlot& agg_out, const std::vector<detail::QSlot>& mlp_weight_slots,
                          const std::vector<detail::QSlot>& mlp_out_slots, bool relu_activation) {
    for (double w : a->values)
        if (w != 1.0) throw InvalidArgument("gin_forward: adjacency must be unweighted");
    Tensor a_q = adj.apply_csr(a_values, *a);
    Tensor agg = spmm_values_tensor(a, a_q, h);
    Tensor summed = add(agg, mul(add(eps, Tensor::scalar(1.0)), h));
    Tensor cur = agg_out.apply_dense(summed);
    for (size_t i = 0; i < mlp_weights.size(); ++i) {
        Tensor w_q = mlp_weight_slots[i].apply_dense(mlp_weights[i]);
        cur = mlp_out_slots[i].apply_dense(matmul(cur, w_q));
        if (i + 1 < mlp_weights.size()) cur = relu(cur);  // relu between the MLP linears
    }
    return relu_activation ? relu(cur) : cur;
}

inline Tensor sage_forward(const Tensor& h, CsrPtr a, const Tensor& a_values, const Tensor& theta_root,
                           const Tensor& theta_neigh, const detail::QSlot& adj, const detail::QSlot& agg_out,
                           const detail::QSlot& w_root, const detail::QSlot& w_neigh, const detail::QSlot& out,
                           bool relu_activation) {
    Tensor a_q = adj.apply_csr(a_values, *a);
    Tensor agg = agg_out.apply_dense(spmm_values_tensor(a, a_q, h));
    Tensor root = matmul(h, w_root.apply_dense(theta_root));
    Tensor neigh = matmul(agg, w_neigh.apply_dense(theta_neigh));
    Tensor y = out.apply_dense(add(root, neigh));
    return relu_activation ? relu(y) : y;
}

struct ForwardOptions {
    bool calibrate = false;
    PenaltyAccumulator* penalty = nullptr;
    // Per-epoch GraphSAGE neighbor sampling; null means full aggregation.
    const CsrF* sage_sampled = nullptr;
};

// End-to-end forward in the model's mode (fp, fake_quant or relaxed; the
// integer mode is compiled separately). Returns logits: [n x classes] for
// node tasks, [num_graphs x classes] after pooling for graph tasks.
inline Tensor model_forward(Model& m, const GraphDataset& ds, const ForwardOptions& opts = {}) {
    if (m.mode == Mode::integer)
        throw StateError("model_forward: integer mode runs through compile_integer");
    m.config.validate();

    auto slot = [&](const std::string& id) {
        detail::QSlot s;
        s.comp = &m.component(id);
        s.mode = m.mode;
        s.calibrating = opts.calibrate;
        s.acc = opts.penalty;
        return s;
    };

    // Adjacency variants: GCN uses the normalized matrix, GIN and SAGE the raw
    // one. Normalization is deterministic, so rebuild lazily per call.
    CsrPtr norm;
    CsrPtr raw = ds.adjacency;
    if (opts.sage_sampled != nullptr) raw = std::make_shared<CsrF>(*opts.sage_sampled);
    for (const auto& lc : m.config.layers)
        if (lc.kind == LayerKind::gcn && !norm) norm = std::make_shared<CsrF>(gcn_normalize(*ds.adjacency));

    Tensor h = slot("input/x").apply_dense(ds.features);
    bool pooled = false;
    size_t last_mp = 0;
    for (size_t l = 0; l < m.config.layers.size(); ++l)
        if (m.config.layers[l].kind != LayerKind::linear) last_mp = l;

    for (size_t l = 0; l < m.config.layers.size(); ++l) {
        const LayerConfig& lc = m.config.layers[l];
        const std::string p = "layer" + std::to_string(l) + "/";
        switch (lc.kind) {
            case LayerKind::gcn: {
                Tensor a_vals = Tensor::from_values({norm->nnz()}, norm->values);
                h = gcn_forward(h, norm, a_vals, m.params[l].weights[0], slot(p + "adj"), slot(p + "weight"),
                                slot(p + "msg_out"), slot(p + "agg_out"), lc.relu_activation);
                break;
            }
            case LayerKind::gin: {
                Tensor a_vals = Tensor::from_values({raw->nnz()}, raw->values);
                std::vector<detail::QSlot> w_slots, o_slots;
                for (size_t mi = 0; mi < m.params[l].weights.size(); ++mi) {
                    w_slots.push_back(slot(p + "mlp" + std::to_string(mi) + "/weight"));
                    o_slots.push_back(slot(p + "mlp" + std::to_string(mi) + "/out"));
                }
                h = gin_forward(h, raw, a_vals, m.params[l].gin_eps, m.params[l].weights, slot(p + "adj"),
                                slot(p + "agg_out"), w_slots, o_slots, lc.relu_activation);
                break;
            }
            case LayerKind::sage: {
                Tensor a_vals = Tensor::from_values({raw->nnz()}, raw->values);
                h = sage_forward(h, raw, a_vals, m.params[l].weights[0], m.params[l].weights[1], slot(p + "adj"),
                                 slot(p + "agg_out"), slot(p + "weight_root"), slot(p + "weight_neigh"),
                                 slot(p + "out"), lc.relu_activation);
                break;
            }
            case LayerKind::linear: {
                Tensor w_q = slot(p + "weight").apply_dense(m.params[l].weights[0]);
                h = slot(p + "out").apply_dense(matmul(h, w_q));
                if (lc.relu_activation) h = relu(h);
                break;
            }
        }
        if (m.config.global_max_pooling && !pooled && l == last_mp) {
            h = global_max_pool(h, ds.graph_of, ds.num_graphs);
            pooled = true;
        }
    }
    if (opts.calibrate) m.calibrated = true;
    return h;
}

// Run one calibration forward if the model has uncalibrated quantizers.
inline void calibrate_model(Model& m, const GraphDataset& ds) {
    if (m.mode == Mode::fp || m.calibrated) return;
    ForwardOptions opts;
    opts.calibrate = true;
    model_forward(m, ds, opts);
}

inline std::vector<int64_t> predictions(const Tensor& logits) {
    const int64_t n = logits.dim(0), c = logits.dim(1);
    std::vector<int64_t> out(static_cast<size_t>(n));
    for (int64_t i = 0; i < n; ++i) {
        int64_t best = 0;
        for (int64_t j = 1; j < c; ++j)
            if (logits.at(i, j) > logits.at(i, best)) best = j;
        out[static_cast<size_t>(i)] = best;
    }
    return out;
}

struct Accuracy {
    double overall = 0.0;
    std::vector<double> per_class;
    int64_t count = 0;
};

inline Accuracy accuracy_on_mask(const std::vector<int64_t>& preds, const std::vector<int64_t>& labels,
                                 const std::vector<uint8_t>& mask, int64_t num_classes) {
    Accuracy acc;
    std::vector<int64_t> correct(static_cast<size_t>(num_classes), 0), total(static_cast<size_t>(num_classes), 0);
    for (size_t i = 0; i < labels.size(); ++i) {
        if (!mask[i]) continue;
        ++total[static_cast<size_t>(labels[i])];
        if (preds[i] == labels[i]) ++correct[static_cast<size_t>(labels[i])];
        ++acc.count;
    }
    int64_t all_correct = 0;
    for (size_t c = 0; c < correct.size(); ++c) {
        all_correct += correct[c];
        acc.per_class.push_back(total[c] > 0 ? static_cast<double>(correct[c]) / static_cast<double>(total[c]) : 0.0);
    }
    acc.overall = acc.count > 0 ? static_cast<double>(all_correct) / static_cast<double>(acc.count) : 0.0;
    return acc;
}

// ---------------------------------------------------------------------------
// Checkpoint serialization (versioned JSON; doubles round-trip exactly)

inline nlohmann::json layer_config_to_json(const LayerConfig& lc) {
    return {{"kind", layer_kind_name(lc.kind)},
            {"in_dim", lc.in_dim},
            {"out_dim", lc.out_dim},
            {"activation", lc.relu_activation ? "relu" : "none"},
            {"gin_mlp_dims", lc.gin_mlp_dims},
            {"gin_epsilon_learnable", lc.gin_epsilon_learnable}};
}

inline LayerConfig layer_config_from_json(const nlohmann::json& j) {
    LayerConfig lc;
    lc.kind = layer_kind_from_name(j.at("kind").get<std::string>());
    lc.in_dim = j.at("in_dim").get<int64_t>();
    lc.out_dim = j.at("out_dim").get<int64_t>();
    const std::string act = j.value("activation", "relu");
    if (act != "relu" && act != "none") throw ConfigError("layer activation must be relu or none");
    lc.relu_activation = act == "relu";
    lc.gin_mlp_dims = j.value("gin_mlp_dims", std::vector<int64_t>{});
    lc.gin_epsilon_learnable = j.value("gin_epsilon_learnable", true);
    return lc;
}

inline nlohmann::json model_config_to_json(const ModelConfig& mc) {
    nlohmann::json layers = nlohmann::json::array();
    for (const auto& lc : mc.layers) layers.push_back(layer_config_to_json(lc));
    return {{"layers", layers},
            {"task", mc.task == Task::node_classification ? "node_classification" : "graph_classification"},
            {"pooling", mc.global_max_pooling ? "global_max" : "none"}};
}

inline ModelConfig model_config_from_json(const nlohmann::json& j) {
    ModelConfig mc;
    for (const auto& lj : j.at("layers")) mc.layers.push_back(layer_config_from_json(lj));
    const std::string task = j.value("task", "node_classification");
    if (task == "node_classification")
        mc.task = Task::node_classification;
    else if (task == "graph_classification")
        mc.task = Task::graph_classification;
    else
        throw ConfigError("unknown task: " + task);
    const std::string pooling = j.value("pooling", mc.task == Task::graph_classification ? "global_max" : "none");
    if (pooling != "global_max" && pooling != "none") throw ConfigError("pooling must be global_max or none");
    mc.global_max_pooling = pooling == "global_max";
    return mc;
}

constexpr const char* kCheckpointFormat = "mixq-checkpoint/v1";

inline nlohmann::json checkpoint_to_json(const Model& m) {
    if (m.mode == Mode::relaxed) throw StateError("checkpoint: finalize the relaxed model first");
    nlohmann::json j;
    j["format"] = kCheckpointFormat;
    j["config"] = model_config_to_json(m.config);
    j["seed"] = m.seed;
    j["mode"] = mode_name(m.mode);
    j["calibrated"] = m.calibrated;
    nlohmann::json params = nlohmann::json::array();
    for (const auto& lp : m.params) {
        nlohmann::json pj;
        nlohmann::json weights = nlohmann::json::array();
        for (const auto& w : lp.weights)
            weights.push_back({{"shape", w.shape()}, {"values", w.values()}});
        pj["weights"] = weights;
        if (lp.gin_eps.defined()) pj["gin_eps"] = lp.gin_eps.values()[0];
        params.push_back(std::move(pj));
    }
    j["params"] = std::move(params);
    nlohmann::json comps = nlohmann::json::array();
    for (const auto& c : m.components) {
        nlohmann::json cj{{"id", c.id},
                          {"role", role_name(c.role)},
                          {"granularity", granularity_name(c.gran)},
                          {"signed", c.is_signed},
                          {"symmetric", c.symmetric}};
        if (c.q) {
            cj["bits"] = c.q->bits;
            cj["calibrated"] = c.q->calibrated;
            if (c.q->log_s.defined()) {
                cj["log_s"] = c.q->log_s.values();
                cj["zero"] = c.q->zero.values();
            }
        }
        comps.push_back(std::move(cj));
    }
    j["components"] = std::move(comps);
    if (!m.assignment.items.empty()) j["assignment"] = m.assignment.to_json();
    return j;
}

inline Granularity granularity_from_name(const std::string& s) {
    if (s == "per_tensor") return Granularity::per_tensor;
    if (s == "per_row") return Granularity::per_row;
    if (s == "per_column") return Granularity::per_column;
    throw ConfigError("unknown granularity: " + s);
}

inline Model checkpoint_from_json(const nlohmann::json& j) {
    if (j.value("format", "") != kCheckpointFormat)
        throw ConfigError("checkpoint: unsupported format tag '" + j.value("format", "") + "'");
    Model m;
    m.config = model_config_from_json(j.at("config"));
    m.seed = j.at("seed").get<uint64_t>();
    m.mode = mode_from_name(j.at("mode").get<std::string>());
    m.calibrated = j.value("calibrated", false);
    for (const auto& pj : j.at("params")) {
        LayerParams lp;
        for (const auto& wj : pj.at("weights")) {
            Shape shape = wj.at("shape").get<Shape>();
            std::vector<double> values = wj.at("values").get<std::vector<double>>();
            lp.weights.push_back(Tensor::from_values(std::move(shape), std::move(values), true));
        }
        if (pj.contains("gin_eps")) lp.gin_eps = Tensor::from_values({1}, {pj.at("gin_eps").get<double>()}, true);
        m.params.push_back(std::move(lp));
    }
    for (const auto& cj : j.at("components")) {
        Component c;
        c.id = cj.at("id").get<std::string>();
        c.role = role_from_name(cj.at("role").get<std::string>());
        c.gran = granularity_from_name(cj.at("granularity").get<std::string>());
        c.is_signed = cj.at("signed").get<bool>();
        c.symmetric = cj.at("symmetric").get<bool>();
        if (cj.contains("bits")) {
            c.q = std::make_shared<Quantizer>(cj.at("bits").get<int>(), c.is_signed, c.gran, c.symmetric);
            c.q->calibrated = cj.value("calibrated", false);
            if (cj.contains("log_s")) {
                std::vector<double> ls = cj.at("log_s").get<std::vector<double>>();
                std::vector<double> zv = cj.at("zero").get<std::vector<double>>();
                const int64_t n_slices = static_cast<int64_t>(ls.size());
                c.q->log_s = Tensor::from_values({n_slices}, std::move(ls), true);
                c.q->zero = Tensor::from_values({n_slices}, std::move(zv), true);
            }
        }
        m.components.push_back(std::move(c));
    }
    if (j.contains("assignment")) m.assignment = BitWidthAssignment::from_json(j.at("assignment"));
    return m;
}

}  // namespace mixq
