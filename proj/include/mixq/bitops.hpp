#pragma once

// Operation counting and BitOPs accounting. Convention: one multiply and one
// add each count as one scalar op, and a function's BitOPs are its op count
// times its operating bit-width (FP stages count as 32). A matmul whose
// operands sit at different widths bills at the wider operand, reflecting the
// cast one operand needs. The counted op set is a property of the
// architecture, not of the execution mode, so a uniformly-INT8 model costs
// exactly a quarter of its FP32 counterpart.

#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "mixq/common.hpp"
#include "mixq/graph.hpp"
#include "mixq/layers.hpp"

namespace mixq {

inline int64_t count_dense_matmul(int64_t m, int64_t k, int64_t n) {
    if (m <= 0 || k <= 0 || n <= 0) throw InvalidArgument("count_dense_matmul: dimensions must be positive");
    return 2 * m * k * n;
}

inline int64_t count_spmm(int64_t nnz, int64_t f) {
    if (nnz < 0 || f < 0) throw InvalidArgument("count_spmm: negative input");
    return 2 * nnz * f;
}

struct CostRecord {
    std::string function_id;
    int64_t op_count = 0;
    int bits = 32;

    double bitops() const { return static_cast<double>(op_count) * static_cast<double>(bits); }
};

struct CostReport {
    std::vector<CostRecord> records;

    int64_t total_ops() const {
        int64_t t = 0;
        for (const auto& r : records) t += r.op_count;
        return t;
    }
    double total_bitops() const {
        double t = 0.0;
        for (const auto& r : records) t += r.bitops();
        return t;
    }
    double average_bits() const {
        const int64_t ops = total_ops();
        return ops > 0 ? total_bitops() / static_cast<double>(ops) : 0.0;
    }
    double gbitops() const { return total_bitops() / 1e9; }

    nlohmann::json to_json() const {
        nlohmann::json recs = nlohmann::json::array();
        for (const auto& r : records)
            recs.push_back({{"function_id", r.function_id},
                            {"ops", r.op_count},
                            {"bits", r.bits},
                            {"bitops", r.bitops()}});
        return {{"records", recs},
                {"total_ops", total_ops()},
                {"total_bitops", total_bitops()},
                {"average_bits", average_bits()},
                {"gbitops", gbitops()}};
    }

    void write_csv(const std::string& path) const {
        std::ofstream out(path);
        out << "function_id,ops,bits,bitops\n";
        out.precision(17);
        for (const auto& r : records)
            out << r.function_id << ',' << r.op_count << ',' << r.bits << ',' << r.bitops() << '\n';
    }
};

namespace detail {

inline int component_bits(const Model& m, const std::string& id) {
    if (m.mode == Mode::fp) return 32;
    const Component& c = m.component(id);
    if (c.rq) throw StateError("bitops: unresolved relaxed quantizer " + id);
    if (!c.q) return 32;
    return c.q->bits;
}

}  // namespace detail

// Traverse the model and bill every function at its operating bit-width.
// Deterministic: records appear in execution order.
inline CostReport report(const Model& m, const GraphDataset& ds) {
    m.config.validate();
    CostReport rep;

    int64_t rows = ds.num_nodes();
    int64_t raw_nnz = ds.adjacency->nnz();
    int64_t norm_nnz = 0;
    for (const auto& lc : m.config.layers)
        if (lc.kind == LayerKind::gcn && norm_nnz == 0) norm_nnz = gcn_normalize(*ds.adjacency).nnz();

    size_t last_mp = 0;
    for (size_t l = 0; l < m.config.layers.size(); ++l)
        if (m.config.layers[l].kind != LayerKind::linear) last_mp = l;

    int cur_bits = detail::component_bits(m, "input/x");
    bool pooled = false;
    for (size_t l = 0; l < m.config.layers.size(); ++l) {
        const LayerConfig& lc = m.config.layers[l];
        const std::string p = "layer" + std::to_string(l) + "/";
        switch (lc.kind) {
            case LayerKind::gcn: {
                const int b_w = detail::component_bits(m, p + "weight");
                const int b_m = detail::component_bits(m, p + "msg_out");
                const int b_a = detail::component_bits(m, p + "adj");
                const int b_y = detail::component_bits(m, p + "agg_out");
                rep.records.push_back({p + "msg_matmul", count_dense_matmul(rows, lc.in_dim, lc.out_dim),
                                       std::max(cur_bits, b_w)});
                rep.records.push_back({p + "aggregate", count_spmm(norm_nnz, lc.out_dim), std::max(b_a, b_m)});
                rep.records.push_back({p + "agg_rescale", 2 * rows * lc.out_dim, b_y});
                if (lc.relu_activation) rep.records.push_back({p + "relu", rows * lc.out_dim, b_y});
                cur_bits = b_y;
                break;
            }
            case LayerKind::gin: {
                const int b_a = detail::component_bits(m, p + "adj");
                const int b_s = detail::component_bits(m, p + "agg_out");
                rep.records.push_back({p + "aggregate", count_spmm(raw_nnz, lc.in_dim), std::max(b_a, cur_bits)});
                rep.records.push_back({p + "combine", 2 * rows * lc.in_dim, b_s});
                int b_in = b_s;
                int64_t k = lc.in_dim;
                std::vector<int64_t> dims = lc.gin_mlp_dims;
                dims.push_back(lc.out_dim);
                for (size_t mi = 0; mi < dims.size(); ++mi) {
                    const std::string mp = p + "mlp" + std::to_string(mi) + "/";
                    const int b_w = detail::component_bits(m, mp + "weight");
                    const int b_o = detail::component_bits(m, mp + "out");
                    rep.records.push_back({mp + "matmul", count_dense_matmul(rows, k, dims[mi]),
                                           std::max(b_in, b_w)});
                    if (mi + 1 < dims.size())
                        rep.records.push_back({mp + "relu", rows * dims[mi], b_o});
                    b_in = b_o;
                    k = dims[mi];
                }
                if (lc.relu_activation) rep.records.push_back({p + "relu", rows * lc.out_dim, b_in});
                cur_bits = b_in;
                break;
            }
            case LayerKind::sage: {
                const int b_a = detail::component_bits(m, p + "adj");
                const int b_agg = detail::component_bits(m, p + "agg_out");
                const int b_wr = detail::component_bits(m, p + "weight_root");
                const int b_wn = detail::component_bits(m, p + "weight_neigh");
                const int b_o = detail::component_bits(m, p + "out");
                rep.records.push_back({p + "aggregate", count_spmm(raw_nnz, lc.in_dim), std::max(b_a, cur_bits)});
                rep.records.push_back({p + "agg_rescale", 2 * rows * lc.in_dim, b_agg});
                rep.records.push_back({p + "root_matmul", count_dense_matmul(rows, lc.in_dim, lc.out_dim),
                                       std::max(cur_bits, b_wr)});
                rep.records.push_back({p + "neigh_matmul", count_dense_matmul(rows, lc.in_dim, lc.out_dim),
                                       std::max(b_agg, b_wn)});
                rep.records.push_back({p + "add", rows * lc.out_dim, b_o});
                if (lc.relu_activation) rep.records.push_back({p + "relu", rows * lc.out_dim, b_o});
                cur_bits = b_o;
                break;
            }
            case LayerKind::linear: {
                const int b_w = detail::component_bits(m, p + "weight");
                const int b_o = detail::component_bits(m, p + "out");
                rep.records.push_back({p + "matmul", count_dense_matmul(rows, lc.in_dim, lc.out_dim),
                                       std::max(cur_bits, b_w)});
                if (lc.relu_activation) rep.records.push_back({p + "relu", rows * lc.out_dim, b_o});
                cur_bits = b_o;
                break;
            }
        }
        if (m.config.global_max_pooling && !pooled && l == last_mp) {
            rep.records.push_back({"pool", rows * lc.out_dim, cur_bits});
            rows = ds.num_graphs;
            pooled = true;
        }
    }
    return rep;
}

}  // namespace mixq
