#pragma once

// Experiment orchestration behind the CLI verbs: gen-data, search, train,
// eval, report. Every emitted file is re-ingestible by the tool itself, and
// identical configurations (including the seed) reproduce identical outputs.

#include <algorithm>
#include <atomic>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "mixq/bitops.hpp"
#include "mixq/common.hpp"
#include "mixq/graph.hpp"
#include "mixq/integer.hpp"
#include "mixq/layers.hpp"
#include "mixq/search.hpp"

namespace mixq {

struct RunConfig {
    // dataset: either a directory or a synthetic spec
    std::string dataset_dir;
    bool use_synthetic = false;
    SyntheticSpec synthetic;
    bool symmetrize = true;

    // architecture shorthand
    std::string arch_kind = "gcn";
    int64_t arch_layers = 2;
    int64_t hidden = 16;
    int64_t gin_mlp_hidden = 0;  // 0: same as the layer output width

    // search / retrain phases
    std::vector<int> bits = {2, 4, 8};
    double lambda = 0.0;
    int64_t search_epochs = 150;
    int64_t train_epochs = 100;
    double lr = 0.02;
    uint64_t seed = 0;
    std::string alpha_grad = "joint";  // or penalty_only
    int64_t sage_sample_cap = 0;
    std::string eval_mode = "integer";

    std::string out_dir;

    // sweep fan-out
    std::vector<double> sweep_lambdas;
    std::vector<uint64_t> sweep_seeds;
    int64_t jobs = 1;

    void validate() const {
        if (!use_synthetic && dataset_dir.empty()) throw ConfigError("config: dataset or synthetic spec required");
        if (bits.empty()) throw ConfigError("config: bits must be non-empty");
        std::vector<int> sorted = bits;
        std::sort(sorted.begin(), sorted.end());
        if (std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end())
            throw ConfigError("config: bits must be distinct");
        if (!std::isfinite(lambda)) throw ConfigError("config: lambda must be finite");
        if (alpha_grad != "joint" && alpha_grad != "penalty_only")
            throw ConfigError("config: alpha_grad must be joint or penalty_only");
        if (arch_kind != "gcn" && arch_kind != "gin" && arch_kind != "sage")
            throw ConfigError("config: arch must be gcn, gin or sage");
        if (arch_layers < 1) throw ConfigError("config: at least one layer");
        (void)mode_from_name(eval_mode);
    }

    nlohmann::json to_json() const {
        nlohmann::json j;
        if (use_synthetic) {
            const char* kind = synthetic.kind == SyntheticKind::two_block_sbm ? "sbm"
                               : synthetic.kind == SyntheticKind::ring        ? "ring"
                                                                              : "star";
            j["synthetic"] = {{"kind", kind},          {"n", synthetic.n},
                              {"f", synthetic.f},      {"p_in", synthetic.p_in},
                              {"p_out", synthetic.p_out}, {"seed", synthetic.seed},
                              {"degree_onehot", synthetic.degree_onehot}};
        } else {
            j["dataset"] = dataset_dir;
        }
        j["symmetrize"] = symmetrize;
        j["arch"] = {{"kind", arch_kind}, {"layers", arch_layers}, {"hidden", hidden},
                     {"gin_mlp_hidden", gin_mlp_hidden}};
        j["bits"] = bits;
        j["lambda"] = lambda;
        j["search_epochs"] = search_epochs;
        j["train_epochs"] = train_epochs;
        j["lr"] = lr;
        j["seed"] = seed;
        j["alpha_grad"] = alpha_grad;
        j["sage_sample_cap"] = sage_sample_cap;
        j["eval_mode"] = eval_mode;
        j["out_dir"] = out_dir;
        if (!sweep_lambdas.empty() || !sweep_seeds.empty())
            j["sweep"] = {{"lambdas", sweep_lambdas}, {"seeds", sweep_seeds}, {"jobs", jobs}};
        return j;
    }

    static SyntheticKind synthetic_kind_from_name(const std::string& s) {
        if (s == "sbm" || s == "two_block_sbm") return SyntheticKind::two_block_sbm;
        if (s == "ring") return SyntheticKind::ring;
        if (s == "star") return SyntheticKind::star;
        throw ConfigError("unknown synthetic kind: " + s);
    }

    static RunConfig from_json(const nlohmann::json& j) {
        RunConfig c;
        if (j.contains("synthetic")) {
            c.use_synthetic = true;
            const auto& s = j.at("synthetic");
            c.synthetic.kind = synthetic_kind_from_name(s.value("kind", "sbm"));
            c.synthetic.n = s.value("n", int64_t{100});
            c.synthetic.f = s.value("f", int64_t{16});
            c.synthetic.p_in = s.value("p_in", 0.2);
            c.synthetic.p_out = s.value("p_out", 0.02);
            c.synthetic.seed = s.value("seed", uint64_t{0});
            c.synthetic.degree_onehot = s.value("degree_onehot", false);
        }
        if (j.contains("dataset")) c.dataset_dir = j.at("dataset").get<std::string>();
        c.symmetrize = j.value("symmetrize", true);
        if (j.contains("arch")) {
            const auto& a = j.at("arch");
            c.arch_kind = a.value("kind", "gcn");
            c.arch_layers = a.value("layers", int64_t{2});
            c.hidden = a.value("hidden", int64_t{16});
            c.gin_mlp_hidden = a.value("gin_mlp_hidden", int64_t{0});
        }
        c.bits = j.value("bits", std::vector<int>{2, 4, 8});
        c.lambda = j.value("lambda", 0.0);
        c.search_epochs = j.value("search_epochs", int64_t{150});
        c.train_epochs = j.value("train_epochs", int64_t{100});
        c.lr = j.value("lr", 0.02);
        c.seed = j.value("seed", uint64_t{0});
        c.alpha_grad = j.value("alpha_grad", "joint");
        c.sage_sample_cap = j.value("sage_sample_cap", int64_t{0});
        c.eval_mode = j.value("eval_mode", "integer");
        c.out_dir = j.value("out_dir", "");
        if (j.contains("sweep")) {
            const auto& s = j.at("sweep");
            c.sweep_lambdas = s.value("lambdas", std::vector<double>{});
            c.sweep_seeds = s.value("seeds", std::vector<uint64_t>{});
            c.jobs = s.value("jobs", int64_t{1});
        }
        return c;
    }
};

namespace detail {

inline void write_text(const std::filesystem::path& path, const std::string& text) {
    std::filesystem::create_directories(path.parent_path().empty() ? "." : path.parent_path());
    std::ofstream out(path);
    if (!out) throw ConfigError("cannot write " + path.string());
    out << text;
}

inline nlohmann::json read_json(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw FormatError("missing file: " + path.string());
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(path.string() + ": " + e.what());
    }
    return j;
}

}  // namespace detail

inline GraphDataset load_run_dataset(const RunConfig& c) {
    if (c.use_synthetic) return generate_synthetic(c.synthetic);
    return load_dataset(c.dataset_dir, c.symmetrize);
}

inline ModelConfig make_arch(const RunConfig& c, const GraphDataset& ds) {
    ModelConfig mc;
    mc.task = ds.task;
    mc.global_max_pooling = ds.task == Task::graph_classification;
    const LayerKind kind = layer_kind_from_name(c.arch_kind);
    int64_t in = ds.feature_dim();
    for (int64_t l = 0; l < c.arch_layers; ++l) {
        const bool last_mp = l == c.arch_layers - 1;
        LayerConfig lc;
        lc.kind = kind;
        lc.in_dim = in;
        // graph tasks keep a hidden width through pooling and classify with a
        // linear head; node tasks emit classes from the last layer
        lc.out_dim = (last_mp && ds.task == Task::node_classification) ? ds.num_classes : c.hidden;
        lc.relu_activation = !(last_mp && ds.task == Task::node_classification);
        if (kind == LayerKind::gin)
            lc.gin_mlp_dims = {c.gin_mlp_hidden > 0 ? c.gin_mlp_hidden : c.hidden};
        in = lc.out_dim;
        mc.layers.push_back(lc);
    }
    if (ds.task == Task::graph_classification) {
        LayerConfig head1{LayerKind::linear, in, c.hidden, true, {}, true};
        LayerConfig head2{LayerKind::linear, c.hidden, ds.num_classes, false, {}, true};
        mc.layers.push_back(head1);
        mc.layers.push_back(head2);
    }
    mc.validate();
    return mc;
}

// gen-data: write the synthetic dataset in the ingestible directory layout.
inline void cmd_gen_data(const SyntheticSpec& spec, const std::string& out_dir) {
    GraphDataset ds = generate_synthetic(spec);
    save_dataset(ds, out_dir);
}

inline std::string search_log_csv(const std::vector<SearchRow>& rows) {
    std::ostringstream out;
    out.precision(17);
    out << "epoch,task_loss,penalty,expected_avg_bits\n";
    for (const auto& r : rows)
        out << r.epoch << ',' << r.task_loss << ',' << r.penalty << ',' << r.expected_bits << '\n';
    return out.str();
}

// search: run bit-width selection, write assignment.json + search_log.csv and
// echo the resolved config. Returns the assignment.
inline BitWidthAssignment cmd_search(const RunConfig& config) {
    config.validate();
    if (config.out_dir.empty()) throw ConfigError("search: out_dir required");
    GraphDataset ds = load_run_dataset(config);
    ModelConfig mc = make_arch(config, ds);

    SearchOptions opts;
    opts.bit_choices = config.bits;
    opts.lambda = config.lambda;
    opts.epochs = config.search_epochs;
    opts.lr = config.lr;
    opts.seed = config.seed;
    opts.alpha_penalty_only = config.alpha_grad == "penalty_only";
    opts.sage_sample_cap = config.sage_sample_cap;
    SearchOutcome outcome = search(ds, mc, opts);

    namespace fs = std::filesystem;
    fs::create_directories(config.out_dir);
    detail::write_text(fs::path(config.out_dir) / "assignment.json", outcome.assignment.to_json().dump(2) + "\n");
    detail::write_text(fs::path(config.out_dir) / "search_log.csv", search_log_csv(outcome.log));
    detail::write_text(fs::path(config.out_dir) / "resolved_config.json", config.to_json().dump(2) + "\n");
    return outcome.assignment;
}

// train: finalize the assignment into a fixed-precision model, QAT-retrain,
// and save the checkpoint.
inline void cmd_train(const RunConfig& config, const std::string& assignment_path) {
    config.validate();
    if (config.out_dir.empty()) throw ConfigError("train: out_dir required");
    GraphDataset ds = load_run_dataset(config);
    ModelConfig mc = make_arch(config, ds);
    BitWidthAssignment assignment = BitWidthAssignment::from_json(detail::read_json(assignment_path));

    Model model = build_model(mc, ds, config.seed);
    attach_fake_quantizers(model, assignment);
    TrainOptions topts;
    topts.epochs = config.train_epochs;
    topts.lr = config.lr;
    topts.sage_sample_cap = config.sage_sample_cap;
    train_model(model, ds, topts);

    namespace fs = std::filesystem;
    fs::create_directories(config.out_dir);
    detail::write_text(fs::path(config.out_dir) / "checkpoint.json", checkpoint_to_json(model).dump() + "\n");
    detail::write_text(fs::path(config.out_dir) / "resolved_config.json", config.to_json().dump(2) + "\n");
}

inline nlohmann::json eval_metrics(Model& model, const GraphDataset& ds, Mode mode, const RunConfig& config) {
    EvalResult res = evaluate(model, ds, mode);
    Model report_model = model;
    if (mode == Mode::fp) report_model.mode = Mode::fp;
    CostReport cost = report(report_model, ds);
    nlohmann::json j;
    j["accuracy"] = res.accuracy.overall;
    j["per_class_accuracy"] = res.accuracy.per_class;
    j["avg_bits"] = cost.average_bits();
    j["gbitops"] = cost.gbitops();
    j["mode"] = mode_name(mode);
    j["seed"] = config.seed;
    j["lambda"] = config.lambda;
    return j;
}

// eval: load a checkpoint, run the requested mode, emit metrics.json.
inline nlohmann::json cmd_eval(const std::string& checkpoint_path, const RunConfig& config) {
    config.validate();
    GraphDataset ds = load_run_dataset(config);
    Model model = checkpoint_from_json(detail::read_json(checkpoint_path));
    const Mode mode = mode_from_name(config.eval_mode);
    nlohmann::json metrics = eval_metrics(model, ds, mode, config);
    if (!config.out_dir.empty()) {
        namespace fs = std::filesystem;
        fs::create_directories(config.out_dir);
        detail::write_text(fs::path(config.out_dir) / "metrics.json", metrics.dump(2) + "\n");
    }
    return metrics;
}

// One full pipeline run (search -> finalize with warm-started quantizers ->
// QAT retrain -> eval) into a run directory; the unit the sweep fans out.
inline nlohmann::json run_pipeline(const RunConfig& config) {
    config.validate();
    if (config.out_dir.empty()) throw ConfigError("pipeline: out_dir required");
    GraphDataset ds = load_run_dataset(config);
    ModelConfig mc = make_arch(config, ds);

    SearchOptions sopts;
    sopts.bit_choices = config.bits;
    sopts.lambda = config.lambda;
    sopts.epochs = config.search_epochs;
    sopts.lr = config.lr;
    sopts.seed = config.seed;
    sopts.alpha_penalty_only = config.alpha_grad == "penalty_only";
    sopts.sage_sample_cap = config.sage_sample_cap;
    SearchOutcome outcome = search(ds, mc, sopts);

    Model finalized = finalize(outcome.relaxed_model, outcome.assignment);
    TrainOptions topts;
    topts.epochs = config.train_epochs;
    topts.lr = config.lr;
    topts.sage_sample_cap = config.sage_sample_cap;
    train_model(finalized, ds, topts);

    nlohmann::json metrics = eval_metrics(finalized, ds, mode_from_name(config.eval_mode), config);

    namespace fs = std::filesystem;
    fs::create_directories(config.out_dir);
    detail::write_text(fs::path(config.out_dir) / "assignment.json", outcome.assignment.to_json().dump(2) + "\n");
    detail::write_text(fs::path(config.out_dir) / "search_log.csv", search_log_csv(outcome.log));
    detail::write_text(fs::path(config.out_dir) / "checkpoint.json", checkpoint_to_json(finalized).dump() + "\n");
    detail::write_text(fs::path(config.out_dir) / "metrics.json", metrics.dump(2) + "\n");
    detail::write_text(fs::path(config.out_dir) / "resolved_config.json", config.to_json().dump(2) + "\n");
    return metrics;
}

// sweep: fan the full pipeline out over lambda x seed combinations, each into
// its own subdirectory. Runs are independent sessions; `jobs` worker threads
// pull from a shared queue.
inline void cmd_sweep(const RunConfig& base) {
    base.validate();
    if (base.out_dir.empty()) throw ConfigError("sweep: out_dir required");
    std::vector<double> lambdas = base.sweep_lambdas.empty() ? std::vector<double>{base.lambda} : base.sweep_lambdas;
    std::vector<uint64_t> seeds = base.sweep_seeds.empty() ? std::vector<uint64_t>{base.seed} : base.sweep_seeds;

    std::vector<RunConfig> runs;
    for (double lambda : lambdas)
        for (uint64_t seed : seeds) {
            RunConfig rc = base;
            rc.lambda = lambda;
            rc.seed = seed;
            rc.sweep_lambdas.clear();
            rc.sweep_seeds.clear();
            std::ostringstream name;
            name << "lambda_" << lambda << "_seed_" << seed;
            rc.out_dir = (std::filesystem::path(base.out_dir) / name.str()).string();
            runs.push_back(std::move(rc));
        }

    const int64_t jobs = std::max<int64_t>(1, base.jobs);
    std::atomic<size_t> next{0};
    std::vector<std::thread> workers;
    std::vector<std::exception_ptr> errors(runs.size());
    auto worker = [&] {
        for (;;) {
            const size_t i = next.fetch_add(1);
            if (i >= runs.size()) return;
            try {
                run_pipeline(runs[i]);
            } catch (...) {
                errors[i] = std::current_exception();
            }
        }
    };
    for (int64_t t = 0; t < std::min<int64_t>(jobs, static_cast<int64_t>(runs.size())); ++t)
        workers.emplace_back(worker);
    for (auto& w : workers) w.join();
    for (const auto& e : errors)
        if (e) std::rethrow_exception(e);
}

// report: aggregate run directories into summary.csv and the Pareto subset
// under (maximize accuracy, minimize average bits).
struct ReportRow {
    double lambda = 0.0;
    uint64_t seed = 0;
    double avg_bits = 0.0;
    double gbitops = 0.0;
    double accuracy = 0.0;
};

inline bool dominates(const ReportRow& a, const ReportRow& b) {
    return a.accuracy >= b.accuracy && a.avg_bits <= b.avg_bits &&
           (a.accuracy > b.accuracy || a.avg_bits < b.avg_bits);
}

inline std::vector<ReportRow> pareto_front(const std::vector<ReportRow>& rows) {
    std::vector<ReportRow> out;
    for (const auto& r : rows) {
        bool dominated = false;
        for (const auto& other : rows)
            if (dominates(other, r)) dominated = true;
        if (!dominated) out.push_back(r);
    }
    return out;
}

inline std::string rows_to_csv(const std::vector<ReportRow>& rows) {
    std::ostringstream out;
    out.precision(17);
    out << "lambda,seed,avg_bits,gbitops,accuracy\n";
    for (const auto& r : rows)
        out << r.lambda << ',' << r.seed << ',' << r.avg_bits << ',' << r.gbitops << ',' << r.accuracy << '\n';
    return out.str();
}

inline std::vector<ReportRow> collect_report_rows(const std::string& run_dir) {
    namespace fs = std::filesystem;
    if (!fs::exists(run_dir)) throw FormatError("report: missing directory " + run_dir);
    std::vector<fs::path> metric_files;
    if (fs::exists(fs::path(run_dir) / "metrics.json")) metric_files.push_back(fs::path(run_dir) / "metrics.json");
    for (const auto& entry : fs::recursive_directory_iterator(run_dir))
        if (entry.is_regular_file() && entry.path().filename() == "metrics.json" &&
            entry.path() != fs::path(run_dir) / "metrics.json")
            metric_files.push_back(entry.path());
    std::sort(metric_files.begin(), metric_files.end());

    std::vector<ReportRow> rows;
    for (const auto& path : metric_files) {
        nlohmann::json j = detail::read_json(path);
        ReportRow r;
        r.lambda = j.value("lambda", 0.0);
        r.seed = j.value("seed", uint64_t{0});
        r.avg_bits = j.at("avg_bits").get<double>();
        r.gbitops = j.at("gbitops").get<double>();
        r.accuracy = j.at("accuracy").get<double>();
        rows.push_back(r);
    }
    if (rows.empty()) throw FormatError("report: no completed evaluations under " + run_dir);
    std::stable_sort(rows.begin(), rows.end(), [](const ReportRow& a, const ReportRow& b) {
        return std::tie(a.lambda, a.seed) < std::tie(b.lambda, b.seed);
    });
    return rows;
}

inline void cmd_report(const std::string& run_dir) {
    const std::vector<ReportRow> rows = collect_report_rows(run_dir);
    namespace fs = std::filesystem;
    detail::write_text(fs::path(run_dir) / "summary.csv", rows_to_csv(rows));
    detail::write_text(fs::path(run_dir) / "pareto.csv", rows_to_csv(pareto_front(rows)));
}

}  // namespace mixq
