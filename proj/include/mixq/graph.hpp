#pragma once

// Sparse graph storage (CSR), GCN normalization, dataset ingestion and
// synthetic graph generation. Matrices and datasets are immutable after
// construction and safe to share across threads.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <sstream>
#include <string>
#include <tuple>
#include <vector>

#include "mixq/common.hpp"
#include "mixq/tensor.hpp"

namespace mixq {

template <typename T>
struct Csr {
    int64_t n_rows = 0;
    int64_t n_cols = 0;
    std::vector<int64_t> row_ptr;  // length n_rows + 1
    std::vector<int64_t> col_idx;  // length nnz, strictly increasing per row
    std::vector<T> values;         // length nnz

    int64_t nnz() const { return static_cast<int64_t>(col_idx.size()); }

    void validate() const {
        if (static_cast<int64_t>(row_ptr.size()) != n_rows + 1)
            throw InvalidArgument("csr: row_ptr length must be n_rows+1");
        if (row_ptr.front() != 0 || row_ptr.back() != nnz())
            throw InvalidArgument("csr: row_ptr must start at 0 and end at nnz");
        if (col_idx.size() != values.size()) throw InvalidArgument("csr: col_idx/values length mismatch");
        for (int64_t r = 0; r < n_rows; ++r) {
            if (row_ptr[r] > row_ptr[r + 1]) throw InvalidArgument("csr: row_ptr not nondecreasing");
            for (int64_t e = row_ptr[r]; e < row_ptr[r + 1]; ++e) {
                if (col_idx[e] < 0 || col_idx[e] >= n_cols)
                    throw InvalidArgument("csr: column index out of range");
                if (e > row_ptr[r] && col_idx[e] <= col_idx[e - 1])
                    throw InvalidArgument("csr: column indices must be strictly increasing per row");
            }
        }
    }

    // Duplicate (row, col) entries merge by summing their values.
    static Csr<T> from_coo(int64_t n_rows, int64_t n_cols,
                           std::vector<std::tuple<int64_t, int64_t, T>> entries) {
        std::sort(entries.begin(), entries.end(), [](const auto& a, const auto& b) {
            return std::tie(std::get<0>(a), std::get<1>(a)) < std::tie(std::get<0>(b), std::get<1>(b));
        });
        Csr<T> out;
        out.n_rows = n_rows;
        out.n_cols = n_cols;
        out.row_ptr.assign(static_cast<size_t>(n_rows) + 1, 0);
        for (size_t i = 0; i < entries.size();) {
            auto [r, c, v] = entries[i];
            size_t j = i + 1;
            while (j < entries.size() && std::get<0>(entries[j]) == r && std::get<1>(entries[j]) == c) {
                v += std::get<2>(entries[j]);
                ++j;
            }
            out.col_idx.push_back(c);
            out.values.push_back(v);
            out.row_ptr[static_cast<size_t>(r) + 1]++;
            i = j;
        }
        for (int64_t r = 0; r < n_rows; ++r) out.row_ptr[static_cast<size_t>(r) + 1] += out.row_ptr[static_cast<size_t>(r)];
        out.validate();
        return out;
    }

    std::vector<std::tuple<int64_t, int64_t, T>> to_coo() const {
        std::vector<std::tuple<int64_t, int64_t, T>> out;
        out.reserve(static_cast<size_t>(nnz()));
        for (int64_t r = 0; r < n_rows; ++r)
            for (int64_t e = row_ptr[r]; e < row_ptr[r + 1]; ++e)
                out.emplace_back(r, col_idx[e], values[e]);
        return out;
    }
};

using CsrF = Csr<double>;
using CsrI = Csr<int64_t>;
using CsrPtr = std::shared_ptr<const CsrF>;

// Â = D^{-1/2} (I + A) D^{-1/2} with D_ii = row sums of (I + A).
// Explicit self-loops, when present, contribute to both I+A and D additively.
inline CsrF gcn_normalize(const CsrF& a) {
    if (a.n_rows != a.n_cols) throw InvalidArgument("gcn_normalize: matrix must be square");
    for (double w : a.values)
        if (w < 0.0) throw InvalidArgument("gcn_normalize: negative edge weight");

    const int64_t n = a.n_rows;
    std::vector<std::tuple<int64_t, int64_t, double>> entries = a.to_coo();
    for (int64_t i = 0; i < n; ++i) entries.emplace_back(i, i, 1.0);
    CsrF ia = CsrF::from_coo(n, n, std::move(entries));

    std::vector<double> dinv_sqrt(static_cast<size_t>(n));
    for (int64_t r = 0; r < n; ++r) {
        double d = 0.0;
        for (int64_t e = ia.row_ptr[r]; e < ia.row_ptr[r + 1]; ++e) d += ia.values[e];
        dinv_sqrt[static_cast<size_t>(r)] = 1.0 / std::sqrt(d);
    }
    for (int64_t r = 0; r < n; ++r)
        for (int64_t e = ia.row_ptr[r]; e < ia.row_ptr[r + 1]; ++e)
            ia.values[e] *= dinv_sqrt[static_cast<size_t>(r)] * dinv_sqrt[static_cast<size_t>(ia.col_idx[e])];
    return ia;
}

// Exact real sparse-dense product; the FP oracle for the quantized kernel.
inline std::vector<double> spmm_reference_values(const CsrF& a, const std::vector<double>& x, int64_t f) {
    std::vector<double> out(static_cast<size_t>(a.n_rows * f), 0.0);
    for (int64_t r = 0; r < a.n_rows; ++r) {
        const size_t ooff = static_cast<size_t>(r * f);
        for (int64_t e = a.row_ptr[r]; e < a.row_ptr[r + 1]; ++e) {
            const double w = a.values[e];
            const size_t xoff = static_cast<size_t>(a.col_idx[e] * f);
            for (int64_t j = 0; j < f; ++j) out[ooff + static_cast<size_t>(j)] += w * x[xoff + static_cast<size_t>(j)];
        }
    }
    return out;
}

inline Tensor spmm_reference(const CsrF& a, const Tensor& x) {
    if (x.shape().size() != 2 || a.n_cols != x.dim(0))
        throw DimensionError("spmm: dimension mismatch, sparse is " + std::to_string(a.n_rows) + "x" +
                             std::to_string(a.n_cols) + ", dense is " + shape_str(x.shape()));
    return Tensor::from_values({a.n_rows, x.dim(1)}, spmm_reference_values(a, x.values(), x.dim(1)));
}

// Differentiable A.X for a fixed sparse matrix; gradient flows to x only.
inline Tensor spmm(CsrPtr a, const Tensor& x) {
    if (x.shape().size() != 2 || a->n_cols != x.dim(0))
        throw DimensionError("spmm: dimension mismatch");
    const int64_t f = x.dim(1);
    auto xp = x.node_ptr();
    return detail::make_op({a->n_rows, f}, spmm_reference_values(*a, x.values(), f), {x},
                           [a, xp, f](TensorNode& self) {
                               auto& gx = xp->ensure_grad();
                               const auto& g = self.grad;
                               for (int64_t r = 0; r < a->n_rows; ++r)
                                   for (int64_t e = a->row_ptr[r]; e < a->row_ptr[r + 1]; ++e) {
                                       const double w = a->values[e];
                                       const size_t xoff = static_cast<size_t>(a->col_idx[e] * f);
                                       const size_t goff = static_cast<size_t>(r * f);
                                       for (int64_t j = 0; j < f; ++j)
                                           gx[xoff + static_cast<size_t>(j)] += w * g[goff + static_cast<size_t>(j)];
                                   }
                           });
}

// Differentiable A.X where the sparse values themselves are a [nnz] tensor
// (used when the adjacency passes through a fake quantizer). `pattern`
// supplies the structure; its stored values are ignored.
inline Tensor spmm_values_tensor(CsrPtr pattern, const Tensor& vals, const Tensor& x) {
    if (vals.numel() != pattern->nnz()) throw DimensionError("spmm: values tensor must have nnz elements");
    if (x.shape().size() != 2 || pattern->n_cols != x.dim(0)) throw DimensionError("spmm: dimension mismatch");
    const int64_t f = x.dim(1);
    const auto& vv = vals.values();
    const auto& xv = x.values();
    std::vector<double> out(static_cast<size_t>(pattern->n_rows * f), 0.0);
    for (int64_t r = 0; r < pattern->n_rows; ++r) {
        const size_t ooff = static_cast<size_t>(r * f);
        for (int64_t e = pattern->row_ptr[r]; e < pattern->row_ptr[r + 1]; ++e) {
            const double w = vv[static_cast<size_t>(e)];
            const size_t xoff = static_cast<size_t>(pattern->col_idx[e] * f);
            for (int64_t j = 0; j < f; ++j) out[ooff + static_cast<size_t>(j)] += w * xv[xoff + static_cast<size_t>(j)];
        }
    }
    auto vp = vals.node_ptr();
    auto xp = x.node_ptr();
    return detail::make_op(
        {pattern->n_rows, f}, std::move(out), {vals, x}, [pattern, vp, xp, f](TensorNode& self) {
            const auto& g = self.grad;
            const auto& vv2 = vp->values;
            const auto& xv2 = xp->values;
            for (int64_t r = 0; r < pattern->n_rows; ++r) {
                const size_t goff = static_cast<size_t>(r * f);
                for (int64_t e = pattern->row_ptr[r]; e < pattern->row_ptr[r + 1]; ++e) {
                    const size_t xoff = static_cast<size_t>(pattern->col_idx[e] * f);
                    if (vp->requires_grad) {
                        double acc = 0.0;
                        for (int64_t j = 0; j < f; ++j)
                            acc += g[goff + static_cast<size_t>(j)] * xv2[xoff + static_cast<size_t>(j)];
                        vp->ensure_grad()[static_cast<size_t>(e)] += acc;
                    }
                    if (xp->requires_grad) {
                        auto& gx = xp->ensure_grad();
                        const double w = vv2[static_cast<size_t>(e)];
                        for (int64_t j = 0; j < f; ++j)
                            gx[xoff + static_cast<size_t>(j)] += w * g[goff + static_cast<size_t>(j)];
                    }
                }
            }
        });
}

// ---------------------------------------------------------------------------
// Datasets

enum class Task { node_classification, graph_classification };

struct GraphDataset {
    CsrPtr adjacency;
    Tensor features;               // [n x f]
    std::vector<int64_t> labels;   // per node, or per graph for graph tasks
    std::vector<uint8_t> train_mask, val_mask, test_mask;  // per node / per graph
    Task task = Task::node_classification;
    std::vector<int64_t> graph_of;  // node -> graph id (graph tasks only)
    int64_t num_graphs = 1;
    int64_t num_classes = 0;

    int64_t num_nodes() const { return adjacency->n_rows; }
    int64_t feature_dim() const { return features.dim(1); }

    void validate() const {
        if (features.dim(0) != adjacency->n_rows)
            throw InvalidArgument("dataset: feature row count must equal adjacency dimension");
        const size_t units = task == Task::node_classification ? static_cast<size_t>(num_nodes())
                                                               : static_cast<size_t>(num_graphs);
        if (labels.size() != units || train_mask.size() != units || val_mask.size() != units ||
            test_mask.size() != units)
            throw InvalidArgument("dataset: labels/masks length mismatch");
        for (size_t i = 0; i < units; ++i) {
            if (labels[i] < 0 || labels[i] >= num_classes)
                throw InvalidArgument("dataset: label out of range at index " + std::to_string(i));
            if ((train_mask[i] != 0) + (val_mask[i] != 0) + (test_mask[i] != 0) > 1)
                throw InvalidArgument("dataset: masks must be pairwise disjoint");
        }
    }
};

namespace detail {

inline std::vector<std::string> read_lines(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw FormatError("missing file: " + path.string());
    std::vector<std::string> lines;
    std::string line;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        lines.push_back(line);
    }
    while (!lines.empty() && lines.back().empty()) lines.pop_back();
    return lines;
}

inline std::vector<std::string> split(const std::string& s, char sep) {
    std::vector<std::string> out;
    std::string cur;
    for (char ch : s) {
        if (ch == sep) {
            out.push_back(cur);
            cur.clear();
        } else {
            cur += ch;
        }
    }
    out.push_back(cur);
    return out;
}

struct EdgeList {
    std::vector<std::tuple<int64_t, int64_t, double>> entries;
    int64_t max_node = -1;
};

inline EdgeList read_edges(const std::filesystem::path& path) {
    EdgeList el;
    auto lines = read_lines(path);
    for (size_t i = 0; i < lines.size(); ++i) {
        if (lines[i].empty()) continue;
        auto parts = split(lines[i], '\t');
        if (parts.size() < 2 || parts.size() > 3)
            throw FormatError(path.string() + ":" + std::to_string(i + 1) + ": expected src<TAB>dst[<TAB>weight]");
        try {
            int64_t src = std::stoll(parts[0]);
            int64_t dst = std::stoll(parts[1]);
            double w = parts.size() == 3 ? std::stod(parts[2]) : 1.0;
            if (src < 0 || dst < 0)
                throw FormatError(path.string() + ":" + std::to_string(i + 1) + ": negative node id");
            el.entries.emplace_back(src, dst, w);
            el.max_node = std::max({el.max_node, src, dst});
        } catch (const FormatError&) {
            throw;
        } catch (const std::exception&) {
            throw FormatError(path.string() + ":" + std::to_string(i + 1) + ": unparsable edge line");
        }
    }
    return el;
}

// Symmetrization is by union-with-max so that inputs already listing both
// directions (the citation-dataset convention) keep their weights.
inline CsrF build_adjacency(EdgeList el, int64_t n, bool symmetrize, const std::string& file) {
    for (size_t i = 0; i < el.entries.size(); ++i) {
        auto [s, d, w] = el.entries[i];
        if (s >= n || d >= n)
            throw FormatError(file + ": edge references node " + std::to_string(std::max(s, d)) +
                              " but the dataset has " + std::to_string(n) + " nodes");
        (void)w;
    }
    CsrF merged = CsrF::from_coo(n, n, std::move(el.entries));
    if (!symmetrize) return merged;
    std::map<std::pair<int64_t, int64_t>, double> sym;
    for (auto [r, c, v] : merged.to_coo()) {
        auto key = std::make_pair(r, c);
        auto rev = std::make_pair(c, r);
        sym[key] = std::max(sym.count(key) ? sym[key] : 0.0, v);
        sym[rev] = std::max(sym.count(rev) ? sym[rev] : 0.0, v);
    }
    std::vector<std::tuple<int64_t, int64_t, double>> entries;
    entries.reserve(sym.size());
    for (auto& [k, v] : sym) entries.emplace_back(k.first, k.second, v);
    return CsrF::from_coo(n, n, std::move(entries));
}

inline std::vector<std::vector<double>> read_feature_rows(const std::filesystem::path& path) {
    auto lines = read_lines(path);
    std::vector<std::vector<double>> rows;
    size_t width = 0;
    for (size_t i = 0; i < lines.size(); ++i) {
        auto parts = split(lines[i], ',');
        std::vector<double> row;
        row.reserve(parts.size());
        for (const auto& p : parts) {
            try {
                row.push_back(std::stod(p));
            } catch (const std::exception&) {
                throw FormatError(path.string() + ":" + std::to_string(i + 1) + ": unparsable feature value '" + p +
                                  "'");
            }
        }
        if (i == 0) width = row.size();
        if (row.size() != width)
            throw FormatError(path.string() + ":" + std::to_string(i + 1) + ": ragged feature row (" +
                              std::to_string(row.size()) + " vs " + std::to_string(width) + ")");
        rows.push_back(std::move(row));
    }
    return rows;
}

inline std::vector<int64_t> read_labels(const std::filesystem::path& path) {
    auto lines = read_lines(path);
    std::vector<int64_t> labels;
    for (size_t i = 0; i < lines.size(); ++i) {
        try {
            labels.push_back(std::stoll(lines[i]));
        } catch (const std::exception&) {
            throw FormatError(path.string() + ":" + std::to_string(i + 1) + ": unparsable label");
        }
    }
    return labels;
}

struct Masks {
    std::vector<uint8_t> train, val, test;
};

inline Masks read_masks(const std::filesystem::path& path, size_t expected) {
    auto lines = read_lines(path);
    if (lines.size() != expected)
        throw FormatError(path.string() + ": expected " + std::to_string(expected) + " mask lines, got " +
                          std::to_string(lines.size()));
    Masks m;
    m.train.resize(expected, 0);
    m.val.resize(expected, 0);
    m.test.resize(expected, 0);
    for (size_t i = 0; i < lines.size(); ++i) {
        const std::string& s = lines[i];
        if (s == "train")
            m.train[i] = 1;
        else if (s == "val")
            m.val[i] = 1;
        else if (s == "test")
            m.test[i] = 1;
        else if (s != "none")
            throw FormatError(path.string() + ":" + std::to_string(i + 1) +
                              ": mask must be one of train/val/test/none, got '" + s + "'");
    }
    return m;
}

}  // namespace detail

// Load a node-level dataset directory: edges.tsv, features.csv, labels.csv,
// masks.csv. Graph-level datasets are a root of per-graph subdirectories
// (each holding edges.tsv + features.csv) plus root labels.csv / masks.csv.
inline GraphDataset load_dataset(const std::filesystem::path& dir, bool symmetrize = true) {
    namespace fs = std::filesystem;
    if (!fs::exists(dir)) throw FormatError("missing dataset directory: " + dir.string());

    // Graph-level layout: per-graph subdirectories named graph_*.
    std::vector<fs::path> graph_dirs;
    if (fs::exists(dir / "graphs")) {
        for (const auto& entry : fs::directory_iterator(dir / "graphs"))
            if (entry.is_directory()) graph_dirs.push_back(entry.path());
        std::sort(graph_dirs.begin(), graph_dirs.end());
    }

    GraphDataset ds;
    if (graph_dirs.empty()) {
        auto feature_rows = detail::read_feature_rows(dir / "features.csv");
        const int64_t n = static_cast<int64_t>(feature_rows.size());
        if (n == 0) throw FormatError((dir / "features.csv").string() + ": no feature rows");
        const int64_t f = static_cast<int64_t>(feature_rows[0].size());
        std::vector<double> flat;
        flat.reserve(static_cast<size_t>(n * f));
        for (auto& row : feature_rows) flat.insert(flat.end(), row.begin(), row.end());

        auto edges = detail::read_edges(dir / "edges.tsv");
        ds.adjacency = std::make_shared<CsrF>(
            detail::build_adjacency(std::move(edges), n, symmetrize, (dir / "edges.tsv").string()));
        ds.features = Tensor::from_values({n, f}, std::move(flat));
        ds.labels = detail::read_labels(dir / "labels.csv");
        if (static_cast<int64_t>(ds.labels.size()) != n)
            throw FormatError((dir / "labels.csv").string() + ": expected " + std::to_string(n) + " labels");
        auto masks = detail::read_masks(dir / "masks.csv", static_cast<size_t>(n));
        ds.train_mask = std::move(masks.train);
        ds.val_mask = std::move(masks.val);
        ds.test_mask = std::move(masks.test);
        ds.task = Task::node_classification;
        ds.graph_of.assign(static_cast<size_t>(n), 0);
    } else {
        // Merge the per-graph blocks into one block-diagonal adjacency.
        std::vector<std::tuple<int64_t, int64_t, double>> entries;
        std::vector<double> flat;
        int64_t offset = 0;
        int64_t f = -1;
        for (const auto& gdir : graph_dirs) {
            auto feature_rows = detail::read_feature_rows(gdir / "features.csv");
            const int64_t gn = static_cast<int64_t>(feature_rows.size());
            if (gn == 0) throw FormatError((gdir / "features.csv").string() + ": no feature rows");
            if (f < 0) f = static_cast<int64_t>(feature_rows[0].size());
            if (static_cast<int64_t>(feature_rows[0].size()) != f)
                throw FormatError((gdir / "features.csv").string() + ": feature width differs across graphs");
            for (auto& row : feature_rows) flat.insert(flat.end(), row.begin(), row.end());

            auto edges = detail::read_edges(gdir / "edges.tsv");
            CsrF block = detail::build_adjacency(std::move(edges), gn, symmetrize, (gdir / "edges.tsv").string());
            for (auto [r, c, v] : block.to_coo()) entries.emplace_back(r + offset, c + offset, v);
            const int64_t gid = static_cast<int64_t>(&gdir - graph_dirs.data());
            for (int64_t i = 0; i < gn; ++i) ds.graph_of.push_back(gid);
            offset += gn;
        }
        ds.adjacency = std::make_shared<CsrF>(CsrF::from_coo(offset, offset, std::move(entries)));
        ds.features = Tensor::from_values({offset, f}, std::move(flat));
        ds.num_graphs = static_cast<int64_t>(graph_dirs.size());
        ds.labels = detail::read_labels(dir / "labels.csv");
        if (static_cast<int64_t>(ds.labels.size()) != ds.num_graphs)
            throw FormatError((dir / "labels.csv").string() + ": expected one label per graph");
        auto masks = detail::read_masks(dir / "masks.csv", static_cast<size_t>(ds.num_graphs));
        ds.train_mask = std::move(masks.train);
        ds.val_mask = std::move(masks.val);
        ds.test_mask = std::move(masks.test);
        ds.task = Task::graph_classification;
    }

    ds.num_classes = 0;
    for (int64_t y : ds.labels) ds.num_classes = std::max(ds.num_classes, y + 1);
    ds.validate();
    return ds;
}

// ---------------------------------------------------------------------------
// Synthetic graphs

enum class SyntheticKind { two_block_sbm, ring, star };

struct SyntheticSpec {
    SyntheticKind kind = SyntheticKind::two_block_sbm;
    int64_t n = 100;
    int64_t f = 16;
    double p_in = 0.2;
    double p_out = 0.02;
    uint64_t seed = 0;
    bool degree_onehot = false;  // one-hot encoding based on node degree
    double noise = 1.0;
    double mean_separation = 0.5;
};

inline GraphDataset generate_synthetic(const SyntheticSpec& spec) {
    if (spec.n < 2) throw InvalidArgument("generate_synthetic: n must be >= 2");
    Rng rng = make_rng(spec.seed);

    const int64_t n = spec.n;
    std::vector<std::tuple<int64_t, int64_t, double>> entries;
    std::vector<int64_t> labels(static_cast<size_t>(n), 0);

    switch (spec.kind) {
        case SyntheticKind::two_block_sbm: {
            for (int64_t i = 0; i < n; ++i) labels[static_cast<size_t>(i)] = i < n / 2 ? 0 : 1;
            std::uniform_real_distribution<double> unif(0.0, 1.0);
            for (int64_t i = 0; i < n; ++i)
                for (int64_t j = i + 1; j < n; ++j) {
                    const bool same = labels[static_cast<size_t>(i)] == labels[static_cast<size_t>(j)];
                    const double p = same ? spec.p_in : spec.p_out;
                    if (unif(rng) < p) {
                        entries.emplace_back(i, j, 1.0);
                        entries.emplace_back(j, i, 1.0);
                    }
                }
            break;
        }
        case SyntheticKind::ring: {
            for (int64_t i = 0; i < n; ++i) {
                const int64_t j = (i + 1) % n;
                entries.emplace_back(i, j, 1.0);
                entries.emplace_back(j, i, 1.0);
                labels[static_cast<size_t>(i)] = i % 2;
            }
            break;
        }
        case SyntheticKind::star: {
            for (int64_t i = 1; i < n; ++i) {
                entries.emplace_back(0, i, 1.0);
                entries.emplace_back(i, 0, 1.0);
            }
            labels[0] = 1;
            break;
        }
    }

    GraphDataset ds;
    ds.adjacency = std::make_shared<CsrF>(CsrF::from_coo(n, n, std::move(entries)));
    ds.labels = labels;
    ds.num_classes = 2;
    ds.task = Task::node_classification;
    ds.graph_of.assign(static_cast<size_t>(n), 0);

    if (spec.degree_onehot) {
        int64_t max_deg = 0;
        for (int64_t r = 0; r < n; ++r)
            max_deg = std::max(max_deg, ds.adjacency->row_ptr[r + 1] - ds.adjacency->row_ptr[r]);
        const int64_t f = max_deg + 1;
        std::vector<double> feat(static_cast<size_t>(n * f), 0.0);
        for (int64_t r = 0; r < n; ++r) {
            const int64_t deg = ds.adjacency->row_ptr[r + 1] - ds.adjacency->row_ptr[r];
            feat[static_cast<size_t>(r * f + deg)] = 1.0;
        }
        ds.features = Tensor::from_values({n, f}, std::move(feat));
    } else {
        std::normal_distribution<double> noise(0.0, spec.noise);
        std::vector<double> feat(static_cast<size_t>(n * spec.f));
        for (int64_t i = 0; i < n; ++i) {
            const double mean = labels[static_cast<size_t>(i)] == 0 ? spec.mean_separation : -spec.mean_separation;
            for (int64_t j = 0; j < spec.f; ++j)
                feat[static_cast<size_t>(i * spec.f + j)] = mean + noise(rng);
        }
        ds.features = Tensor::from_values({n, spec.f}, std::move(feat));
    }

    // 60/20/20 split, deterministic in the seed.
    ds.train_mask.assign(static_cast<size_t>(n), 0);
    ds.val_mask.assign(static_cast<size_t>(n), 0);
    ds.test_mask.assign(static_cast<size_t>(n), 0);
    std::vector<int64_t> perm(static_cast<size_t>(n));
    for (int64_t i = 0; i < n; ++i) perm[static_cast<size_t>(i)] = i;
    std::shuffle(perm.begin(), perm.end(), rng);
    const int64_t n_train = (n * 6) / 10;
    const int64_t n_val = (n * 2) / 10;
    for (int64_t i = 0; i < n; ++i) {
        if (i < n_train)
            ds.train_mask[static_cast<size_t>(perm[static_cast<size_t>(i)])] = 1;
        else if (i < n_train + n_val)
            ds.val_mask[static_cast<size_t>(perm[static_cast<size_t>(i)])] = 1;
        else
            ds.test_mask[static_cast<size_t>(perm[static_cast<size_t>(i)])] = 1;
    }
    ds.validate();
    return ds;
}

// Write a dataset in the directory layout load_dataset expects.
inline void save_dataset(const GraphDataset& ds, const std::filesystem::path& dir) {
    namespace fs = std::filesystem;
    fs::create_directories(dir);
    {
        std::ofstream out(dir / "edges.tsv");
        // Emit each undirected pair once; ingestion symmetrizes by default.
        for (auto [r, c, v] : ds.adjacency->to_coo()) {
            if (c < r) continue;
            out << r << '\t' << c << '\t' << v << '\n';
        }
    }
    {
        std::ofstream out(dir / "features.csv");
        out.precision(17);
        const int64_t n = ds.features.dim(0), f = ds.features.dim(1);
        for (int64_t i = 0; i < n; ++i) {
            for (int64_t j = 0; j < f; ++j) {
                if (j) out << ',';
                out << ds.features.values()[static_cast<size_t>(i * f + j)];
            }
            out << '\n';
        }
    }
    {
        std::ofstream out(dir / "labels.csv");
        for (int64_t y : ds.labels) out << y << '\n';
    }
    {
        std::ofstream out(dir / "masks.csv");
        for (size_t i = 0; i < ds.labels.size(); ++i) {
            if (ds.train_mask[i])
                out << "train\n";
            else if (ds.val_mask[i])
                out << "val\n";
            else if (ds.test_mask[i])
                out << "test\n";
            else
                out << "none\n";
        }
    }
}

}  // namespace mixq
