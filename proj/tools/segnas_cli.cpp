// Command-line front end for the differentiable segmentation-architecture
// search pipelines: search, decode, retrain, random-baseline, evolve, report.
#include <cstdio>
#include <exception>
#include <iostream>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "segnas/pipeline.hpp"

namespace {

segnas::RunConfig config_for(const std::string& config_path, const std::string& out_dir) {
    segnas::RunConfig cfg;
    if (!config_path.empty()) cfg = segnas::load_run_config(config_path);
    if (!out_dir.empty()) cfg.out_dir = out_dir;
    cfg.validate();
    return cfg;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"segnas: differentiable neural architecture search for segmentation"};
    app.require_subcommand(1);

    std::string config_path, out_dir, run_dir;
    std::string cell_mode, network_mode;
    int decode_k = 0, n_samples = 5;

    auto add_config = [&](CLI::App* sub) {
        sub->add_option("--config", config_path, "JSON run configuration file");
        sub->add_option("--out", out_dir, "output run directory (overrides config)");
    };
    auto* search = app.add_subcommand("search", "train the supernet and emit an arch checkpoint");
    add_config(search);
    auto* decode = app.add_subcommand("decode", "extract a genotype from a searched run");
    decode->add_option("--run", run_dir, "run directory")->required();
    decode->add_option("--cell-mode", cell_mode, "argmax | topk");
    decode->add_option("--network-mode", network_mode, "full | viterbi | multipath");
    decode->add_option("--K", decode_k, "top-K input edges per block");
    auto* retrain = app.add_subcommand("retrain", "retrain the decoded genotype from scratch");
    retrain->add_option("--run", run_dir, "run directory")->required();
    auto* baseline = app.add_subcommand("random-baseline", "retrain uniformly sampled cells");
    add_config(baseline);
    baseline->add_option("--samples", n_samples, "number of random cells");
    auto* evolve = app.add_subcommand("evolve", "evolutionary search over genotypes");
    add_config(evolve);
    auto* report = app.add_subcommand("report", "summarize a run directory");
    report->add_option("--run", run_dir, "run directory")->required();

    CLI11_PARSE(app, argc, argv);

    try {
        if (search->parsed()) {
            auto m = segnas::cmd_search(config_for(config_path, out_dir));
            std::cout << "searched " << m.config.out_dir << "\n";
        } else if (decode->parsed()) {
            auto m = segnas::cmd_decode(run_dir, cell_mode, decode_k, network_mode);
            std::cout << "decoded " << run_dir << "/" << m.artifacts.at("genotype") << "\n";
        } else if (retrain->parsed()) {
            auto m = segnas::cmd_retrain(run_dir);
            std::cout << "retrained " << run_dir << "/" << m.artifacts.at("metrics") << "\n";
        } else if (baseline->parsed()) {
            auto m = segnas::cmd_random_baseline(config_for(config_path, out_dir), n_samples);
            std::cout << "baselined " << m.config.out_dir << "\n";
        } else if (evolve->parsed()) {
            auto m = segnas::cmd_evolve(config_for(config_path, out_dir));
            std::cout << "evolved " << m.config.out_dir << "\n";
        } else if (report->parsed()) {
            std::cout << segnas::cmd_report(run_dir);
        }
    } catch (const std::exception& e) {
        // machine-readable single-line error contract
        std::cerr << nlohmann::json{{"error", e.what()}}.dump() << "\n";
        return 1;
    }
    return 0;
}
