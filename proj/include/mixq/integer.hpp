#pragma once

// Integer inference. A calibrated fake-quantized model compiles into integer
// weights plus per-stage affine parameters; the forward pass then runs every
// matrix product in 64-bit integer arithmetic and reproduces the fake path
// exactly, stage by stage:
//
//   - linear stages use the dense Theorem-1 analogue (integer matmul plus
//     rank-1 corrections), then re-quantize into the stage's output range;
//   - aggregations run the integer spmm kernel in identity-output mode and
//     re-quantize with the aggregation-output component, which is the fused
//     form of Theorem 1 split into its two halves;
//   - relu acts directly on integers as max(q, Z);
//   - max pooling selects among in-range integers and needs no re-quantization.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "mixq/common.hpp"
#include "mixq/graph.hpp"
#include "mixq/layers.hpp"
#include "mixq/qmp.hpp"
#include "mixq/quantize.hpp"

namespace mixq {

struct IntegerModel {
    ModelConfig config;
    std::map<std::string, QuantParams> params;           // per component id
    std::vector<std::vector<std::vector<int64_t>>> wq;   // [layer][weight] integers
    std::vector<double> gin_eps;                         // per layer
    std::vector<std::shared_ptr<CsrI>> adj_q;            // per layer (empty for linear)
    int64_t n_nodes = 0;
};

namespace detail {

inline std::vector<int64_t> quantize_dense(const std::vector<double>& x, const QuantParams& p, int64_t rows,
                                           int64_t cols) {
    const Granularity g = p.scale.size() == 1 ? Granularity::per_tensor
                          : (static_cast<int64_t>(p.scale.size()) == cols ? Granularity::per_column
                                                                          : Granularity::per_row);
    return quantize(x, p, Slicing::dense(g, rows, cols));
}

inline void relu_int(std::vector<int64_t>& q, const QuantParams& p) {
    const int64_t z = p.zero_int(0);
    for (int64_t& v : q) v = std::max(v, z);
}

}  // namespace detail

inline IntegerModel compile_integer(const Model& m, const GraphDataset& ds) {
    if (m.mode != Mode::fake_quant)
        throw StateError("compile_integer: model must be in fake_quant mode (finalize a relaxed model first)");
    if (!m.calibrated) throw StateError("compile_integer: model is not calibrated");

    IntegerModel im;
    im.config = m.config;
    im.n_nodes = ds.num_nodes();
    for (const auto& c : m.components) im.params[c.id] = c.q->params();

    CsrPtr norm;
    for (const auto& lc : m.config.layers)
        if (lc.kind == LayerKind::gcn && !norm) norm = std::make_shared<CsrF>(gcn_normalize(*ds.adjacency));

    for (size_t l = 0; l < m.config.layers.size(); ++l) {
        const LayerConfig& lc = m.config.layers[l];
        const std::string p = "layer" + std::to_string(l) + "/";
        std::vector<std::vector<int64_t>> weights;
        for (size_t wi = 0; wi < m.params[l].weights.size(); ++wi) {
            const Tensor& w = m.params[l].weights[wi];
            std::string comp_id;
            if (lc.kind == LayerKind::gin)
                comp_id = p + "mlp" + std::to_string(wi) + "/weight";
            else if (lc.kind == LayerKind::sage)
                comp_id = wi == 0 ? p + "weight_root" : p + "weight_neigh";
            else
                comp_id = p + "weight";
            weights.push_back(detail::quantize_dense(w.values(), im.params.at(comp_id), w.dim(0), w.dim(1)));
        }
        im.wq.push_back(std::move(weights));
        im.gin_eps.push_back(m.params[l].gin_eps.defined() ? m.params[l].gin_eps.values()[0] : 0.0);

        if (lc.kind == LayerKind::linear) {
            im.adj_q.push_back(nullptr);
        } else {
            const CsrF& a = lc.kind == LayerKind::gcn ? *norm : *ds.adjacency;
            const Component& adj = m.component(p + "adj");
            im.adj_q.push_back(std::make_shared<CsrI>(quantize_adjacency(a, im.params.at(p + "adj"), adj.gran)));
        }
    }
    return im;
}

// Integer forward pass; returns dequantized logits.
inline Tensor integer_forward(const IntegerModel& im, const GraphDataset& ds) {
    if (ds.num_nodes() != im.n_nodes) throw DimensionError("integer_forward: dataset size changed since compile");

    const QuantParams* cur_p = &im.params.at("input/x");
    int64_t rows = ds.num_nodes();
    int64_t cols = ds.feature_dim();
    std::vector<int64_t> h_q = detail::quantize_dense(ds.features.values(), *cur_p, rows, cols);

    auto quantized_linear_stage = [&](const std::vector<int64_t>& xq, const QuantParams& px, int64_t k,
                                      const std::vector<int64_t>& w, int64_t out_dim, const QuantParams& pw,
                                      const QuantParams& pout) {
        const std::vector<double> real = quantized_linear_real(xq, rows, k, px, w, out_dim, pw);
        return detail::quantize_dense(real, pout, rows, out_dim);
    };

    bool pooled = false;
    size_t last_mp = 0;
    for (size_t l = 0; l < im.config.layers.size(); ++l)
        if (im.config.layers[l].kind != LayerKind::linear) last_mp = l;

    for (size_t l = 0; l < im.config.layers.size(); ++l) {
        const LayerConfig& lc = im.config.layers[l];
        const std::string p = "layer" + std::to_string(l) + "/";
        switch (lc.kind) {
            case LayerKind::gcn: {
                const QuantParams& pw = im.params.at(p + "weight");
                const QuantParams& pm = im.params.at(p + "msg_out");
                const QuantParams& py = im.params.at(p + "agg_out");
                std::vector<int64_t> m_q =
                    quantized_linear_stage(h_q, *cur_p, cols, im.wq[l][0], lc.out_dim, pw, pm);

                QuantizedAggregation agg;
                agg.qa = im.adj_q[l];
                agg.params_a = im.params.at(p + "adj");
                agg.params_x = pm;
                agg.identity_output = true;  // re-quantized by the agg_out component below
                const std::vector<double> r = quantized_aggregate_identity(agg, m_q, lc.out_dim);
                h_q = detail::quantize_dense(r, py, rows, lc.out_dim);
                if (lc.relu_activation) detail::relu_int(h_q, py);
                cur_p = &py;
                cols = lc.out_dim;
                break;
            }
            case LayerKind::gin: {
                QuantizedAggregation agg;
                agg.qa = im.adj_q[l];
                agg.params_a = im.params.at(p + "adj");
                agg.params_x = *cur_p;
                agg.identity_output = true;
                const std::vector<double> agg_real = quantized_aggregate_identity(agg, h_q, cols);

                // (1 + eps) H enters through the dequantized integers, exactly
                // as the fake path multiplies the fake-quantized tensor.
                const double scale = cur_p->scale[0];
                const int64_t z = cur_p->zero_int(0);
                std::vector<double> summed(agg_real.size());
                for (size_t i = 0; i < summed.size(); ++i)
                    summed[i] = agg_real[i] +
                                (1.0 + im.gin_eps[l]) * (static_cast<double>(h_q[i] - z) * scale);
                const QuantParams& ps = im.params.at(p + "agg_out");
                std::vector<int64_t> cur = detail::quantize_dense(summed, ps, rows, cols);

                const QuantParams* pin = &ps;
                int64_t k = cols;
                for (size_t wi = 0; wi < im.wq[l].size(); ++wi) {
                    const std::string mp = p + "mlp" + std::to_string(wi) + "/";
                    const QuantParams& pw = im.params.at(mp + "weight");
                    const QuantParams& po = im.params.at(mp + "out");
                    const int64_t out_dim =
                        wi + 1 < im.wq[l].size()
                            ? static_cast<int64_t>(im.wq[l][wi].size()) / k
                            : lc.out_dim;
                    cur = quantized_linear_stage(cur, *pin, k, im.wq[l][wi], out_dim, pw, po);
                    if (wi + 1 < im.wq[l].size()) detail::relu_int(cur, po);
                    pin = &po;
                    k = out_dim;
                }
                h_q = std::move(cur);
                cur_p = pin;
                cols = k;
                if (lc.relu_activation) detail::relu_int(h_q, *cur_p);
                break;
            }
            case LayerKind::sage: {
                QuantizedAggregation agg;
                agg.qa = im.adj_q[l];
                agg.params_a = im.params.at(p + "adj");
                agg.params_x = *cur_p;
                agg.identity_output = true;
                const std::vector<double> agg_real = quantized_aggregate_identity(agg, h_q, cols);
                const QuantParams& pagg = im.params.at(p + "agg_out");
                const std::vector<int64_t> agg_q = detail::quantize_dense(agg_real, pagg, rows, cols);

                const QuantParams& pwr = im.params.at(p + "weight_root");
                const QuantParams& pwn = im.params.at(p + "weight_neigh");
                const std::vector<double> root =
                    quantized_linear_real(h_q, rows, cols, *cur_p, im.wq[l][0], lc.out_dim, pwr);
                const std::vector<double> neigh =
                    quantized_linear_real(agg_q, rows, cols, pagg, im.wq[l][1], lc.out_dim, pwn);
                std::vector<double> summed(root.size());
                for (size_t i = 0; i < summed.size(); ++i) summed[i] = root[i] + neigh[i];
                const QuantParams& po = im.params.at(p + "out");
                h_q = detail::quantize_dense(summed, po, rows, lc.out_dim);
                if (lc.relu_activation) detail::relu_int(h_q, po);
                cur_p = &po;
                cols = lc.out_dim;
                break;
            }
            case LayerKind::linear: {
                const QuantParams& pw = im.params.at(p + "weight");
                const QuantParams& po = im.params.at(p + "out");
                h_q = quantized_linear_stage(h_q, *cur_p, cols, im.wq[l][0], lc.out_dim, pw, po);
                if (lc.relu_activation) detail::relu_int(h_q, po);
                cur_p = &po;
                cols = lc.out_dim;
                break;
            }
        }
        if (im.config.global_max_pooling && !pooled && l == last_mp) {
            // Integer max pooling: dequantization is monotone, so selecting on
            // integers matches selecting on the fake reals.
            std::vector<int64_t> pooled_q(static_cast<size_t>(ds.num_graphs * cols),
                                          std::numeric_limits<int64_t>::min());
            for (int64_t i = 0; i < rows; ++i) {
                const int64_t g = ds.graph_of[static_cast<size_t>(i)];
                for (int64_t j = 0; j < cols; ++j) {
                    const size_t oi = static_cast<size_t>(g * cols + j);
                    pooled_q[oi] = std::max(pooled_q[oi], h_q[static_cast<size_t>(i * cols + j)]);
                }
            }
            h_q = std::move(pooled_q);
            rows = ds.num_graphs;
            pooled = true;
        }
    }

    const Granularity g = cur_p->scale.size() == 1 ? Granularity::per_tensor : Granularity::per_column;
    std::vector<double> logits = dequantize(h_q, *cur_p, Slicing::dense(g, rows, cols));
    return Tensor::from_values({rows, cols}, std::move(logits));
}

}  // namespace mixq
