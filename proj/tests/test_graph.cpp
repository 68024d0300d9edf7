#include <catch2/catch_amalgamated.hpp>

#include <filesystem>
#include <fstream>
#include <set>

#include "mixq/graph.hpp"
#include "mixq/tensor.hpp"
#include "oracles.hpp"

using namespace mixq;
namespace fs = std::filesystem;

namespace {

fs::path make_temp_dir(const std::string& tag) {
    fs::path dir = fs::temp_directory_path() / ("mixq_test_" + tag + "_" + std::to_string(::getpid()));
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

void write_file(const fs::path& p, const std::string& text) {
    std::ofstream out(p);
    out << text;
}

CsrF random_graph(int64_t n, double p, Rng& rng, bool symmetric = true) {
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    std::uniform_real_distribution<double> w(0.1, 2.0);
    std::vector<std::tuple<int64_t, int64_t, double>> entries;
    for (int64_t i = 0; i < n; ++i)
        for (int64_t j = symmetric ? i + 1 : 0; j < n; ++j) {
            if (i == j) continue;
            if (unif(rng) < p) {
                const double weight = w(rng);
                entries.emplace_back(i, j, weight);
                if (symmetric) entries.emplace_back(j, i, weight);
            }
        }
    return CsrF::from_coo(n, n, std::move(entries));
}

}  // namespace

TEST_CASE("csr construction and round trip", "[graph]") {
    SECTION("duplicates merge by summing") {
        CsrF a = CsrF::from_coo(2, 2, {{0, 1, 1.0}, {0, 1, 2.5}, {1, 0, 1.0}});
        CHECK(a.nnz() == 2);
        CHECK(a.values[0] == 3.5);
    }

    SECTION("coo round trip preserves the entry multiset") {
        Rng rng = make_rng(17);
        for (int trial = 0; trial < 10; ++trial) {
            CsrF a = random_graph(12, 0.3, rng, false);
            auto coo = a.to_coo();
            CsrF b = CsrF::from_coo(a.n_rows, a.n_cols, coo);
            CHECK(a.row_ptr == b.row_ptr);
            CHECK(a.col_idx == b.col_idx);
            CHECK(a.values == b.values);
        }
    }

    SECTION("validate rejects malformed matrices") {
        CsrF bad;
        bad.n_rows = bad.n_cols = 2;
        bad.row_ptr = {0, 1, 2};
        bad.col_idx = {0, 5};
        bad.values = {1.0, 1.0};
        CHECK_THROWS_AS(bad.validate(), InvalidArgument);
    }
}

TEST_CASE("gcn normalization", "[graph]") {
    SECTION("empty edge set yields the identity") {
        CsrF a = CsrF::from_coo(3, 3, {});
        CsrF norm = gcn_normalize(a);
        auto dense = oracle::csr_to_dense(norm);
        for (int64_t i = 0; i < 3; ++i)
            for (int64_t j = 0; j < 3; ++j)
                CHECK_THAT(dense[static_cast<size_t>(i * 3 + j)],
                           Catch::Matchers::WithinAbs(i == j ? 1.0 : 0.0, 1e-15));
    }

    SECTION("single undirected unit edge gives all entries 1/2") {
        CsrF a = CsrF::from_coo(2, 2, {{0, 1, 1.0}, {1, 0, 1.0}});
        auto dense = oracle::csr_to_dense(gcn_normalize(a));
        for (double v : dense) CHECK_THAT(v, Catch::Matchers::WithinAbs(0.5, 1e-15));
    }

    SECTION("star graph matches the dense oracle exactly") {
        std::vector<std::tuple<int64_t, int64_t, double>> entries;
        for (int64_t i = 1; i < 6; ++i) {
            entries.emplace_back(0, i, 1.0);
            entries.emplace_back(i, 0, 1.0);
        }
        CsrF a = CsrF::from_coo(6, 6, entries);
        auto got = oracle::csr_to_dense(gcn_normalize(a));
        auto want = oracle::dense_gcn_normalize(oracle::csr_to_dense(a), 6);
        for (size_t i = 0; i < got.size(); ++i) CHECK(got[i] == want[i]);
    }

    SECTION("matches the dense formula on random graphs up to n=32") {
        Rng rng = make_rng(23);
        for (int64_t n : {2, 5, 9, 17, 32}) {
            CsrF a = random_graph(n, 0.25, rng);
            auto got = oracle::csr_to_dense(gcn_normalize(a));
            auto want = oracle::dense_gcn_normalize(oracle::csr_to_dense(a), n);
            for (size_t i = 0; i < got.size(); ++i)
                CHECK_THAT(got[i], Catch::Matchers::WithinAbs(want[i], 1e-12));
        }
    }

    SECTION("explicit self loops contribute additively") {
        CsrF a = CsrF::from_coo(2, 2, {{0, 0, 1.0}, {0, 1, 1.0}, {1, 0, 1.0}});
        auto got = oracle::csr_to_dense(gcn_normalize(a));
        auto want = oracle::dense_gcn_normalize(oracle::csr_to_dense(a), 2);
        for (size_t i = 0; i < got.size(); ++i)
            CHECK_THAT(got[i], Catch::Matchers::WithinAbs(want[i], 1e-15));
    }

    SECTION("negative weights are rejected") {
        CsrF a = CsrF::from_coo(2, 2, {{0, 1, -1.0}});
        CHECK_THROWS_AS(gcn_normalize(a), InvalidArgument);
    }

    SECTION("normalization sanity on symmetric unweighted input") {
        // Row sums of the normalized matrix reach exactly 1 on degree-regular
        // graphs. On irregular graphs they can exceed 1 (a star's hub row sums
        // to 1/3 + 2/sqrt(6) for n=3), so the general sanity bound is
        // spectral: the largest eigenvalue of the normalized matrix is <= 1.
        const int64_t n = 20;
        std::vector<std::tuple<int64_t, int64_t, double>> ring;
        for (int64_t i = 0; i < n; ++i) {
            ring.emplace_back(i, (i + 1) % n, 1.0);
            ring.emplace_back((i + 1) % n, i, 1.0);
        }
        CsrF norm = gcn_normalize(CsrF::from_coo(n, n, ring));
        Tensor ones = Tensor::full({n, 1}, 1.0);
        Tensor row_sums = spmm_reference(norm, ones);
        for (double v : row_sums.values()) CHECK(v <= 1.0 + 1e-12);

        Rng rng = make_rng(29);
        std::vector<std::tuple<int64_t, int64_t, double>> entries;
        std::uniform_real_distribution<double> unif(0.0, 1.0);
        for (int64_t i = 0; i < n; ++i)
            for (int64_t j = i + 1; j < n; ++j)
                if (unif(rng) < 0.3) {
                    entries.emplace_back(i, j, 1.0);
                    entries.emplace_back(j, i, 1.0);
                }
        CsrF irregular = gcn_normalize(CsrF::from_coo(n, n, entries));
        Tensor v = Tensor::randn({n, 1}, rng);
        double norm_ratio = 0.0;
        for (int iter = 0; iter < 200; ++iter) {
            Tensor w = spmm_reference(irregular, v);
            double nv = 0.0, nw = 0.0;
            for (double x : v.values()) nv += x * x;
            for (double x : w.values()) nw += x * x;
            norm_ratio = std::sqrt(nw / nv);
            std::vector<double> scaled = w.values();
            for (double& x : scaled) x /= std::sqrt(nw);
            v = Tensor::from_values({n, 1}, scaled);
        }
        CHECK(norm_ratio <= 1.0 + 1e-9);
    }
}

TEST_CASE("sparse-dense products", "[graph]") {
    SECTION("identity times X is X") {
        CsrF eye = CsrF::from_coo(3, 3, {{0, 0, 1.0}, {1, 1, 1.0}, {2, 2, 1.0}});
        Tensor x = Tensor::from_values({3, 2}, {1, 2, 3, 4, 5, 6});
        CHECK(spmm_reference(eye, x).values() == x.values());
    }

    SECTION("complete 3-node graph sums the two neighbors") {
        std::vector<std::tuple<int64_t, int64_t, double>> entries;
        for (int64_t i = 0; i < 3; ++i)
            for (int64_t j = 0; j < 3; ++j)
                if (i != j) entries.emplace_back(i, j, 1.0);
        CsrF a = CsrF::from_coo(3, 3, entries);
        Tensor x = Tensor::full({3, 2}, 1.0);
        Tensor y = spmm_reference(a, x);
        for (double v : y.values()) CHECK_THAT(v, Catch::Matchers::WithinAbs(2.0, 1e-15));
    }

    SECTION("random 10x10 agrees with the dense oracle") {
        Rng rng = make_rng(31);
        CsrF a = random_graph(10, 0.4, rng, false);
        Tensor x = Tensor::randn({10, 6}, rng);
        Tensor y = spmm_reference(a, x);
        auto want = oracle::dense_matmul(oracle::csr_to_dense(a), 10, 10, x.values(), 6);
        for (size_t i = 0; i < want.size(); ++i)
            CHECK_THAT(y.values()[i], Catch::Matchers::WithinAbs(want[i], 1e-12));
    }

    SECTION("dimension mismatch is rejected") {
        CsrF a = CsrF::from_coo(3, 3, {});
        CHECK_THROWS_AS(spmm_reference(a, Tensor::zeros({4, 2})), DimensionError);
    }

    SECTION("gradients flow through both spmm variants") {
        Rng rng = make_rng(37);
        auto a = std::make_shared<CsrF>(random_graph(6, 0.5, rng, false));
        Tensor x = Tensor::randn({6, 3}, rng, 1.0, true);
        CHECK(oracle::gradcheck(x, [&] { return sum(spmm(a, x)); }) <= 1e-5);

        Tensor vals = Tensor::from_values({a->nnz()}, a->values, true);
        CHECK(oracle::gradcheck(vals, [&] { return sum(spmm_values_tensor(a, vals, x)); }) <= 1e-5);
        CHECK(oracle::gradcheck(x, [&] { return sum(spmm_values_tensor(a, vals, x)); }) <= 1e-5);
    }
}

TEST_CASE("dataset loading", "[graph]") {
    SECTION("two nodes, one edge, with and without symmetrization") {
        fs::path dir = make_temp_dir("pair");
        write_file(dir / "edges.tsv", "0\t1\t1.0\n");
        write_file(dir / "features.csv", "1.0,0.0\n0.0,1.0\n");
        write_file(dir / "labels.csv", "0\n1\n");
        write_file(dir / "masks.csv", "train\ntest\n");
        CHECK(load_dataset(dir, true).adjacency->nnz() == 2);
        CHECK(load_dataset(dir, false).adjacency->nnz() == 1);
        fs::remove_all(dir);
    }

    SECTION("symmetrizing an already-bidirectional listing keeps weights") {
        fs::path dir = make_temp_dir("bidir");
        write_file(dir / "edges.tsv", "0\t1\t1.0\n1\t0\t1.0\n");
        write_file(dir / "features.csv", "1.0\n1.0\n");
        write_file(dir / "labels.csv", "0\n1\n");
        write_file(dir / "masks.csv", "train\ntest\n");
        GraphDataset ds = load_dataset(dir, true);
        CHECK(ds.adjacency->nnz() == 2);
        CHECK(ds.adjacency->values == std::vector<double>{1.0, 1.0});
        fs::remove_all(dir);
    }

    SECTION("edge referencing a missing node names the file") {
        fs::path dir = make_temp_dir("badedge");
        write_file(dir / "edges.tsv", "0\t2\n");
        write_file(dir / "features.csv", "1.0\n1.0\n");
        write_file(dir / "labels.csv", "0\n1\n");
        write_file(dir / "masks.csv", "train\ntest\n");
        CHECK_THROWS_WITH(load_dataset(dir), Catch::Matchers::ContainsSubstring("edges.tsv"));
        fs::remove_all(dir);
    }

    SECTION("ragged feature rows are rejected with a line number") {
        fs::path dir = make_temp_dir("ragged");
        write_file(dir / "edges.tsv", "0\t1\n");
        write_file(dir / "features.csv", "1.0,2.0\n3.0\n");
        write_file(dir / "labels.csv", "0\n1\n");
        write_file(dir / "masks.csv", "train\ntest\n");
        CHECK_THROWS_WITH(load_dataset(dir), Catch::Matchers::ContainsSubstring("features.csv:2"));
        fs::remove_all(dir);
    }

    SECTION("missing files are reported") {
        fs::path dir = make_temp_dir("missing");
        CHECK_THROWS_AS(load_dataset(dir), FormatError);
        fs::remove_all(dir);
    }

    SECTION("explicit self-loops are preserved as given") {
        fs::path dir = make_temp_dir("selfloop");
        write_file(dir / "edges.tsv", "0\t0\t2.5\n0\t1\t1.0\n");
        write_file(dir / "features.csv", "1.0\n1.0\n");
        write_file(dir / "labels.csv", "0\n1\n");
        write_file(dir / "masks.csv", "train\ntest\n");
        GraphDataset ds = load_dataset(dir, true);
        CHECK(ds.adjacency->nnz() == 3);  // loop + both directions of the edge
        CHECK(ds.adjacency->values[0] == 2.5);
        fs::remove_all(dir);
    }

    SECTION("cora-format fixture dimensions survive the round trip") {
        // 2708 nodes, 10556 directed edge entries (5278 undirected pairs)
        const int64_t n = 2708;
        std::vector<std::tuple<int64_t, int64_t, double>> entries;
        for (int64_t i = 0; i < n; ++i) {
            entries.emplace_back(i, (i + 1) % n, 1.0);
            entries.emplace_back((i + 1) % n, i, 1.0);
        }
        for (int64_t i = 0; i < (10556 - 2 * n) / 2; ++i) {
            entries.emplace_back(i, i + 2, 1.0);
            entries.emplace_back(i + 2, i, 1.0);
        }
        GraphDataset ds;
        ds.adjacency = std::make_shared<CsrF>(CsrF::from_coo(n, n, std::move(entries)));
        ds.features = Tensor::full({n, 4}, 1.0);
        ds.labels.assign(static_cast<size_t>(n), 0);
        for (int64_t i = 0; i < n; ++i) ds.labels[static_cast<size_t>(i)] = i % 7;
        ds.num_classes = 7;
        ds.train_mask.assign(static_cast<size_t>(n), 1);
        ds.val_mask.assign(static_cast<size_t>(n), 0);
        ds.test_mask.assign(static_cast<size_t>(n), 0);
        ds.graph_of.assign(static_cast<size_t>(n), 0);

        fs::path dir = make_temp_dir("cora_shape");
        save_dataset(ds, dir);
        GraphDataset back = load_dataset(dir, true);
        CHECK(back.num_nodes() == 2708);
        CHECK(back.adjacency->nnz() == 10556);
        fs::remove_all(dir);
    }

    SECTION("save and reload round trip") {
        SyntheticSpec spec;
        spec.n = 30;
        spec.f = 4;
        spec.seed = 5;
        GraphDataset ds = generate_synthetic(spec);
        fs::path dir = make_temp_dir("roundtrip");
        save_dataset(ds, dir);
        GraphDataset back = load_dataset(dir, true);
        CHECK(back.adjacency->nnz() == ds.adjacency->nnz());
        CHECK(back.labels == ds.labels);
        CHECK(back.train_mask == ds.train_mask);
        for (size_t i = 0; i < ds.features.values().size(); ++i)
            CHECK_THAT(back.features.values()[i],
                       Catch::Matchers::WithinAbs(ds.features.values()[i], 1e-15));
        fs::remove_all(dir);
    }

    SECTION("graph-level layout merges blocks") {
        fs::path dir = make_temp_dir("graphs");
        for (int g = 0; g < 2; ++g) {
            fs::path gdir = dir / "graphs" / ("graph_" + std::to_string(g));
            fs::create_directories(gdir);
            write_file(gdir / "edges.tsv", "0\t1\n");
            write_file(gdir / "features.csv", "1.0\n2.0\n");
        }
        write_file(dir / "labels.csv", "0\n1\n");
        write_file(dir / "masks.csv", "train\ntest\n");
        GraphDataset ds = load_dataset(dir);
        CHECK(ds.task == Task::graph_classification);
        CHECK(ds.num_graphs == 2);
        CHECK(ds.num_nodes() == 4);
        CHECK(ds.graph_of == std::vector<int64_t>{0, 0, 1, 1});
        CHECK(ds.adjacency->nnz() == 4);
        fs::remove_all(dir);
    }
}

TEST_CASE("synthetic graphs", "[graph]") {
    SECTION("ring nodes all have degree two") {
        SyntheticSpec spec;
        spec.kind = SyntheticKind::ring;
        spec.n = 4;
        GraphDataset ds = generate_synthetic(spec);
        for (int64_t r = 0; r < 4; ++r)
            CHECK(ds.adjacency->row_ptr[r + 1] - ds.adjacency->row_ptr[r] == 2);
    }

    SECTION("sbm generation is deterministic in the seed") {
        SyntheticSpec spec;
        spec.n = 100;
        spec.seed = 42;
        GraphDataset a = generate_synthetic(spec);
        GraphDataset b = generate_synthetic(spec);
        CHECK(a.adjacency->col_idx == b.adjacency->col_idx);
        CHECK(a.adjacency->row_ptr == b.adjacency->row_ptr);
        CHECK(a.features.values() == b.features.values());
        CHECK(a.train_mask == b.train_mask);
    }

    SECTION("degree one-hot features") {
        SyntheticSpec spec;
        spec.kind = SyntheticKind::star;
        spec.n = 5;
        spec.degree_onehot = true;
        GraphDataset ds = generate_synthetic(spec);
        CHECK(ds.features.dim(1) == 5);  // hub degree 4 -> one-hot width 5
        CHECK(ds.features.values()[4] == 1.0);
    }

    SECTION("n below 2 is rejected") {
        SyntheticSpec spec;
        spec.n = 1;
        CHECK_THROWS_AS(generate_synthetic(spec), InvalidArgument);
    }
}

TEST_CASE("fp32 two-layer gcn learns the sbm fixture", "[graph][training]") {
    SyntheticSpec spec;
    spec.n = 100;
    spec.f = 16;
    spec.p_in = 0.2;
    spec.p_out = 0.02;
    spec.seed = 1;
    GraphDataset ds = generate_synthetic(spec);
    auto norm = std::make_shared<CsrF>(gcn_normalize(*ds.adjacency));

    Rng rng = make_rng(2);
    const int64_t hidden = 16;
    Tensor w1 = Tensor::randn({ds.feature_dim(), hidden}, rng, 1.0 / std::sqrt(double(ds.feature_dim())), true);
    Tensor w2 = Tensor::randn({hidden, ds.num_classes}, rng, 1.0 / std::sqrt(double(hidden)), true);
    Adam opt(0.02);

    double acc = 0.0;
    for (int epoch = 0; epoch < 200; ++epoch) {
        Adam::zero_grad({w1, w2});
        Tensor h = relu(spmm(norm, matmul(ds.features, w1)));
        Tensor logits = spmm(norm, matmul(h, w2));
        Tensor loss = softmax_cross_entropy(logits, ds.labels, ds.train_mask);
        backward(loss);
        opt.step({w1, w2});
    }
    {
        Tensor h = relu(spmm(norm, matmul(ds.features, w1)));
        Tensor logits = spmm(norm, matmul(h, w2));
        int64_t correct = 0, total = 0;
        for (int64_t i = 0; i < ds.num_nodes(); ++i) {
            if (!ds.test_mask[static_cast<size_t>(i)]) continue;
            int64_t best = 0;
            for (int64_t c = 1; c < ds.num_classes; ++c)
                if (logits.at(i, c) > logits.at(i, best)) best = c;
            correct += best == ds.labels[static_cast<size_t>(i)];
            ++total;
        }
        acc = static_cast<double>(correct) / static_cast<double>(total);
    }
    CHECK(acc >= 0.95);
}
