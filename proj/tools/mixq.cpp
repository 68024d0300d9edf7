// mixq: mixed-precision quantized GNN experiments.
//
// Verbs: gen-data, search, train, eval, report. Exit codes: 0 success,
// 2 configuration error, 3 data error, 4 training divergence.

#include <cstdint>
#include <exception>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "mixq/run.hpp"

namespace {

mixq::RunConfig load_config(const std::string& path) {
    if (path.empty()) return mixq::RunConfig{};
    return mixq::RunConfig::from_json(mixq::detail::read_json(path));
}

struct Overrides {
    std::string dataset;
    std::string out_dir;
    double lambda = 0.0;
    bool lambda_set = false;
    int64_t seed = -1;
    int64_t search_epochs = -1;
    int64_t train_epochs = -1;
    double lr = -1.0;
    std::vector<int> bits;
    std::string arch_kind;
    int64_t layers = -1;
    int64_t hidden = -1;
    std::string alpha_grad;
    std::string eval_mode;
    int64_t sage_cap = -1;
    int64_t jobs = -1;
    bool no_symmetrize = false;

    void apply(mixq::RunConfig& c) const {
        if (!dataset.empty()) {
            c.dataset_dir = dataset;
            c.use_synthetic = false;
        }
        if (!out_dir.empty()) c.out_dir = out_dir;
        if (lambda_set) c.lambda = lambda;
        if (seed >= 0) c.seed = static_cast<uint64_t>(seed);
        if (search_epochs >= 0) c.search_epochs = search_epochs;
        if (train_epochs >= 0) c.train_epochs = train_epochs;
        if (lr >= 0) c.lr = lr;
        if (!bits.empty()) c.bits = bits;
        if (!arch_kind.empty()) c.arch_kind = arch_kind;
        if (layers > 0) c.arch_layers = layers;
        if (hidden > 0) c.hidden = hidden;
        if (!alpha_grad.empty()) c.alpha_grad = alpha_grad;
        if (!eval_mode.empty()) c.eval_mode = eval_mode;
        if (sage_cap >= 0) c.sage_sample_cap = sage_cap;
        if (jobs > 0) c.jobs = jobs;
        if (no_symmetrize) c.symmetrize = false;
    }
};

void add_override_flags(CLI::App* cmd, Overrides& o) {
    cmd->add_option("--dataset", o.dataset, "Dataset directory (overrides config)");
    cmd->add_option("--out", o.out_dir, "Output directory");
    cmd->add_option("--lambda", o.lambda, "Penalty weight")->each([&o](const std::string&) { o.lambda_set = true; });
    cmd->add_option("--seed", o.seed, "Random seed");
    cmd->add_option("--search-epochs", o.search_epochs, "Bit-width search epochs");
    cmd->add_option("--train-epochs", o.train_epochs, "QAT retrain epochs");
    cmd->add_option("--lr", o.lr, "Learning rate");
    cmd->add_option("--bits", o.bits, "Bit-width choices");
    cmd->add_option("--arch", o.arch_kind, "Layer kind: gcn, gin or sage");
    cmd->add_option("--layers", o.layers, "Number of message-passing layers");
    cmd->add_option("--hidden", o.hidden, "Hidden width");
    cmd->add_option("--alpha-grad", o.alpha_grad, "joint or penalty_only");
    cmd->add_option("--eval-mode", o.eval_mode, "fp, fake_quant or integer");
    cmd->add_option("--sage-cap", o.sage_cap, "GraphSAGE neighbor sampling cap (0 = full)");
    cmd->add_option("--jobs", o.jobs, "Sweep worker threads");
    cmd->add_flag("--no-symmetrize", o.no_symmetrize, "Do not symmetrize loaded edges");
}

int exit_code_for(const std::exception& e) {
    if (dynamic_cast<const mixq::ConfigError*>(&e) || dynamic_cast<const mixq::StateError*>(&e)) return 2;
    if (dynamic_cast<const mixq::FormatError*>(&e) || dynamic_cast<const mixq::InvalidArgument*>(&e) ||
        dynamic_cast<const mixq::DimensionError*>(&e) || dynamic_cast<const mixq::DomainError*>(&e))
        return 3;
    if (dynamic_cast<const mixq::TrainingError*>(&e)) return 4;
    return 1;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Mixed-precision quantized GNN engine"};
    app.require_subcommand(1);

    // gen-data
    auto* gen = app.add_subcommand("gen-data", "Generate a synthetic dataset directory");
    std::string gen_kind = "sbm", gen_out;
    int64_t gen_n = 100, gen_f = 16;
    double gen_pin = 0.2, gen_pout = 0.02;
    uint64_t gen_seed = 0;
    bool gen_degree_onehot = false;
    gen->add_option("--kind", gen_kind, "sbm, ring or star");
    gen->add_option("--n", gen_n, "Number of nodes");
    gen->add_option("--f", gen_f, "Feature dimension");
    gen->add_option("--p-in", gen_pin, "SBM intra-block edge probability");
    gen->add_option("--p-out", gen_pout, "SBM inter-block edge probability");
    gen->add_option("--seed", gen_seed, "Random seed");
    double gen_sep = 0.5, gen_noise = 1.0;
    gen->add_option("--separation", gen_sep, "SBM class-mean separation");
    gen->add_option("--noise", gen_noise, "Feature noise standard deviation");
    gen->add_flag("--degree-onehot", gen_degree_onehot, "Degree one-hot features");
    gen->add_option("--out", gen_out, "Output directory")->required();

    // search
    auto* search_cmd = app.add_subcommand("search", "Search per-component bit-widths");
    std::string search_config;
    bool sweep = false;
    Overrides search_over;
    search_cmd->add_option("--config", search_config, "JSON run configuration");
    search_cmd->add_flag("--sweep", sweep, "Fan out over sweep.lambdas x sweep.seeds");
    add_override_flags(search_cmd, search_over);

    // train
    auto* train_cmd = app.add_subcommand("train", "Finalize an assignment and QAT-retrain");
    std::string train_config, train_assignment;
    Overrides train_over;
    train_cmd->add_option("--config", train_config, "JSON run configuration");
    train_cmd->add_option("--assignment", train_assignment, "assignment.json from search")->required();
    add_override_flags(train_cmd, train_over);

    // eval
    auto* eval_cmd = app.add_subcommand("eval", "Evaluate a checkpoint");
    std::string eval_config, eval_checkpoint;
    Overrides eval_over;
    eval_cmd->add_option("--config", eval_config, "JSON run configuration");
    eval_cmd->add_option("--checkpoint", eval_checkpoint, "checkpoint.json from train")->required();
    add_override_flags(eval_cmd, eval_over);

    // report
    auto* report_cmd = app.add_subcommand("report", "Aggregate runs into summary.csv and pareto.csv");
    std::string report_dir;
    report_cmd->add_option("--run-dir", report_dir, "Directory of completed runs")->required();

    CLI11_PARSE(app, argc, argv);

    try {
        if (*gen) {
            mixq::SyntheticSpec spec;
            spec.kind = mixq::RunConfig::synthetic_kind_from_name(gen_kind);
            spec.n = gen_n;
            spec.f = gen_f;
            spec.p_in = gen_pin;
            spec.p_out = gen_pout;
            spec.seed = gen_seed;
            spec.mean_separation = gen_sep;
            spec.noise = gen_noise;
            spec.degree_onehot = gen_degree_onehot;
            mixq::cmd_gen_data(spec, gen_out);
            std::cout << "wrote dataset to " << gen_out << "\n";
        } else if (*search_cmd) {
            mixq::RunConfig c = load_config(search_config);
            search_over.apply(c);
            if (sweep) {
                mixq::cmd_sweep(c);
                std::cout << "sweep complete under " << c.out_dir << "\n";
            } else {
                mixq::BitWidthAssignment a = mixq::cmd_search(c);
                std::cout << "assignment (" << a.items.size() << " components, mean "
                          << a.mean_bits() << " bits) written to " << c.out_dir << "\n";
            }
        } else if (*train_cmd) {
            mixq::RunConfig c = load_config(train_config);
            train_over.apply(c);
            mixq::cmd_train(c, train_assignment);
            std::cout << "checkpoint written to " << c.out_dir << "\n";
        } else if (*eval_cmd) {
            mixq::RunConfig c = load_config(eval_config);
            eval_over.apply(c);
            nlohmann::json metrics = mixq::cmd_eval(eval_checkpoint, c);
            std::cout << metrics.dump(2) << "\n";
        } else if (*report_cmd) {
            mixq::cmd_report(report_dir);
            std::cout << "summary.csv and pareto.csv written to " << report_dir << "\n";
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return exit_code_for(e);
    }
    return 0;
}
