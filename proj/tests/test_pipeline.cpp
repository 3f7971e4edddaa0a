#include <catch2/catch_amalgamated.hpp>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "segnas/pipeline.hpp"

using namespace segnas;
namespace fs = std::filesystem;

namespace {

std::string slurp(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    REQUIRE(f.good());
    std::stringstream ss;
    ss << f.rdbuf();
    return ss.str();
}

std::vector<std::string> lines_of(const std::string& text) {
    std::vector<std::string> out;
    std::stringstream ss(text);
    for (std::string line; std::getline(ss, line);)
        if (!line.empty()) out.push_back(line);
    return out;
}

RunConfig tiny_config(const std::string& dir) {
    RunConfig cfg;
    cfg.topology = "chain";
    cfg.base_channels = 8;
    cfg.pc_K = 2;
    cfg.image_size = 16;
    cfg.n_train = 4;
    cfg.n_val = 2;
    cfg.n_test = 2;
    cfg.epochs_search = 2;
    cfg.epochs_retrain = 3;
    cfg.best_epoch_floor = 1;
    cfg.alpha_start_epoch = 0;
    cfg.evo_pop = 4;
    cfg.evo_generations = 2;
    cfg.evo_train_epochs = 1;
    cfg.out_dir = dir;
    return cfg;
}

fs::path scratch(const std::string& name) {
    auto p = fs::temp_directory_path() / ("segnas_pipe_" + name);
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

}  // namespace

TEST_CASE("defaults match the reference training protocol") {
    RunConfig cfg;
    REQUIRE(cfg.lr0 == 0.01);
    REQUIRE(cfg.gaea_lr == 0.1);
    REQUIRE(cfg.weight_decay == 1e-3);
    REQUIRE(cfg.alpha_start_epoch == 15);
    REQUIRE(cfg.base_channels == 16);
    REQUIRE(cfg.pc_K == 8);
    REQUIRE(cfg.batch == 2);
}

TEST_CASE("unknown config keys and bad pairings fail fast") {
    REQUIRE_THROWS_WITH(run_config_from_json({{"learning_rate", 0.1}}),
                        Catch::Matchers::ContainsSubstring("unknown config key"));
    REQUIRE_THROWS_WITH(run_config_from_json({{"schema_version", 99}}),
                        Catch::Matchers::ContainsSubstring("schema_version"));
    RunConfig cfg;
    cfg.topology = "resnext-unet";  // needs large space and no edge norm
    REQUIRE_THROWS_AS(cfg.validate(), std::invalid_argument);
    REQUIRE_THROWS_AS(cmd_search(cfg), std::invalid_argument);
    cfg.space = "large";
    cfg.edge_norm = false;
    REQUIRE_NOTHROW(cfg.validate());
    RunConfig neg;
    neg.batch = 0;
    REQUIRE_THROWS_AS(neg.validate(), std::invalid_argument);
}

TEST_CASE("config json round trips") {
    auto cfg = tiny_config("somewhere");
    cfg.seed = 9;
    auto back = run_config_from_json(to_json(cfg));
    REQUIRE(to_json(back).dump() == to_json(cfg).dump());
}

TEST_CASE("a two-epoch search leaves a two-row entropy trace") {
    const auto dir = scratch("search");
    auto cfg = tiny_config(dir.string());
    auto m = cmd_search(cfg);
    REQUIRE(m.status == "searched");
    const auto rows = lines_of(slurp((dir / "entropy.csv").string()));
    REQUIRE(rows.size() == 3);  // header + one row per epoch
    REQUIRE(rows[0] == "epoch,mean,min,max");
    REQUIRE(rows[1].rfind("0,", 0) == 0);
    REQUIRE(rows[2].rfind("1,", 0) == 0);
    REQUIRE(fs::exists(dir / "arch.json"));
    REQUIRE(fs::exists(dir / "manifest.json"));
    REQUIRE(!fs::exists(dir / "manifest.json.tmp"));  // atomic rename cleaned up
    fs::remove_all(dir);
}

TEST_CASE("search is bitwise deterministic per seed") {
    const auto d1 = scratch("det1"), d2 = scratch("det2");
    auto c1 = tiny_config(d1.string()), c2 = tiny_config(d2.string());
    c1.seed = c2.seed = 5;
    cmd_search(c1);
    cmd_search(c2);
    REQUIRE(slurp((d1 / "arch.json").string()) == slurp((d2 / "arch.json").string()));
    REQUIRE(slurp((d1 / "entropy.csv").string()) == slurp((d2 / "entropy.csv").string()));
    fs::remove_all(d1);
    fs::remove_all(d2);
}

TEST_CASE("decoding a uniform checkpoint picks the first op everywhere") {
    const auto dir = scratch("uniform");
    auto cfg = tiny_config(dir.string());
    cfg.topology = "darts-unet";
    RunManifest m;
    m.config = cfg;
    save_arch_params(ArchParams<float>::make(cfg.make(), true), (dir / "arch.json").string());
    m.artifacts["arch"] = "arch.json";
    m.status = "searched";
    m.save(dir.string());

    auto dm = cmd_decode(dir.string(), "argmax");
    auto g = load_genotype((dir / "genotype.json").string());
    const OpKind first = cfg.make().space.ops[0];
    REQUIRE(g.normal_edges.size() == cfg.make().cell.edges.size());
    for (const auto& ge : g.normal_edges) REQUIRE(ge.op == first);
    for (const auto& ge : g.reduce_edges) REQUIRE(ge.op == first);
    REQUIRE(dm.status == "decoded");
    fs::remove_all(dir);
}

TEST_CASE("top-2 decode keeps at most two inputs per block and dot matches genotype") {
    const auto dir = scratch("topk");
    auto cfg = tiny_config(dir.string());
    cfg.topology = "darts-unet";
    cfg.epochs_search = 1;
    cmd_search(cfg);
    cmd_decode(dir.string(), "topk", 2);
    auto g = load_genotype((dir / "genotype.json").string());
    const auto topo = cfg.make();
    for (int j = 0; j < topo.cell.num_blocks; ++j) {
        const int node = topo.cell.num_input_nodes + j;
        int kept = 0;
        for (const auto& ge : g.normal_edges)
            if (topo.cell.edges[ge.edge_index].to == node) ++kept;
        REQUIRE(kept >= 1);
        REQUIRE(kept <= 2);
    }
    // the DOT export carries one labeled edge per kept genotype edge
    const auto dot = slurp((dir / "cell_normal.dot").string());
    std::size_t labeled = 0, pos = 0;
    while ((pos = dot.find("label=\"", pos)) != std::string::npos) {
        ++labeled;
        pos += 7;
    }
    REQUIRE(labeled == g.normal_edges.size());
    for (const auto& ge : g.normal_edges)
        REQUIRE(dot.find("label=\"" + std::string(op_name(ge.op)) + "\"") != std::string::npos);
    fs::remove_all(dir);
}

TEST_CASE("decode refuses a run without an arch checkpoint") {
    const auto dir = scratch("nocheckpoint");
    RunManifest m;
    m.config = tiny_config(dir.string());
    m.save(dir.string());
    REQUIRE_THROWS_WITH(cmd_decode(dir.string()),
                        Catch::Matchers::ContainsSubstring("arch checkpoint"));
    fs::remove_all(dir);
}

TEST_CASE("retraining an all-skip degenerate genotype completes with a sane score") {
    const auto dir = scratch("degenerate");
    auto cfg = tiny_config(dir.string());
    const auto topo = cfg.make();
    std::vector<GenotypeEdge> skips;
    for (std::size_t e = 0; e < topo.cell.edges.size(); ++e)
        skips.push_back({static_cast<int>(e), OpKind::skip});
    auto g = Genotype::full_network(topo, skips, skips);
    RunManifest m;
    m.config = cfg;
    save_genotype(g, (dir / "genotype.json").string());
    m.artifacts["genotype"] = "genotype.json";
    m.save(dir.string());

    auto rm = cmd_retrain(dir.string());
    REQUIRE(rm.status == "retrained");
    nlohmann::json metrics;
    std::ifstream(dir / "metrics.json") >> metrics;
    const double iou = metrics.at("test_mean_iou");
    REQUIRE(iou >= 0.0);
    REQUIRE(iou <= 1.0);
    // best-checkpoint selection respects the configured epoch floor
    const int best_epoch = metrics.at("best_epoch");
    REQUIRE(best_epoch >= cfg.best_epoch_floor);
    REQUIRE(best_epoch < cfg.epochs_retrain);
    fs::remove_all(dir);
}

TEST_CASE("reported mean iou matches an offline recomputation from saved predictions") {
    const auto dir = scratch("recompute");
    auto cfg = tiny_config(dir.string());
    cmd_search(cfg);
    cmd_decode(dir.string());
    cmd_retrain(dir.string());
    nlohmann::json metrics, preds;
    std::ifstream(dir / "metrics.json") >> metrics;
    std::ifstream(dir / "predictions.json") >> preds;
    const auto p = preds.at("predictions").get<std::vector<int>>();
    const auto l = preds.at("labels").get<std::vector<int>>();
    REQUIRE(mean_iou(p, l) == Catch::Approx(metrics.at("test_mean_iou").get<double>()));
    REQUIRE(lines_of(slurp((dir / "pr.csv").string())).size() == 4);  // header + 3 thresholds
    fs::remove_all(dir);
}

TEST_CASE("random baseline reports per-sample rows, their mean, and the max") {
    const auto dir = scratch("baseline");
    auto cfg = tiny_config(dir.string());
    cfg.epochs_retrain = 1;
    auto m = cmd_random_baseline(cfg, 1);
    REQUIRE(lines_of(slurp((dir / "baseline.csv").string())).size() == 2);  // n=1: one record

    auto m2 = cmd_random_baseline(cfg, 3);
    const auto rows = lines_of(slurp((dir / "baseline.csv").string()));
    REQUIRE(rows.size() == 4);
    double sum = 0, best = -1;
    for (std::size_t i = 1; i < rows.size(); ++i) {
        const double v = std::stod(rows[i].substr(rows[i].find(',') + 1));
        sum += v;
        best = std::max(best, v);
    }
    nlohmann::json summary;
    std::ifstream(dir / "baseline_summary.json") >> summary;
    REQUIRE(summary.at("mean_iou_mean").get<double>() == Catch::Approx(sum / 3));
    REQUIRE(summary.at("mean_iou_max").get<double>() == Catch::Approx(best));
    REQUIRE(m2.status == "baselined");
    REQUIRE_THROWS_AS(cmd_random_baseline(cfg, 0), std::invalid_argument);
    fs::remove_all(dir);
}

TEST_CASE("evolve writes a parseable history and resumes from the last generation") {
    const auto whole_dir = scratch("evo_whole");
    auto whole_cfg = tiny_config(whole_dir.string());
    cmd_evolve(whole_cfg);
    auto whole = load_history_jsonl((whole_dir / "history.jsonl").string());
    REQUIRE(whole.records.size() >= 8);  // pop 4, 2 generations

    // interrupt after generation 1, then resume with the full budget
    const auto dir = scratch("evo_resume");
    auto cfg = tiny_config(dir.string());
    cfg.evo_generations = 1;
    cmd_evolve(cfg);
    REQUIRE(load_history_jsonl((dir / "history.jsonl").string()).records.size() == 4);
    cfg.evo_generations = 2;
    cmd_evolve(cfg);
    auto resumed = load_history_jsonl((dir / "history.jsonl").string());
    auto norm = [](const History& h) {
        std::vector<std::tuple<int, std::uint64_t, double, std::string>> out;
        for (const auto& r : h.records) out.push_back({r.generation, r.id, r.fitness, r.status});
        std::sort(out.begin(), out.end());
        return out;
    };
    REQUIRE(norm(resumed) == norm(whole));
    fs::remove_all(whole_dir);
    fs::remove_all(dir);
}

TEST_CASE("over-budget genotypes surface as rejected-memory in the history") {
    const auto dir = scratch("evo_budget");
    auto cfg = tiny_config(dir.string());
    cfg.evo_generations = 1;
    cfg.evo_memory_budget = 1;
    cmd_evolve(cfg);
    auto h = load_history_jsonl((dir / "history.jsonl").string());
    REQUIRE(h.records.size() == 4);
    for (const auto& r : h.records) REQUIRE(r.status == "rejected-memory");
    fs::remove_all(dir);
}

TEST_CASE("the manifest alone is enough to run every later stage") {
    const auto dir = scratch("manifest");
    auto cfg = tiny_config(dir.string());
    cmd_search(cfg);
    // later stages take only the run directory and read the manifest
    REQUIRE_NOTHROW(cmd_decode(dir.string()));
    REQUIRE_NOTHROW(cmd_retrain(dir.string()));
    const auto text = cmd_report(dir.string());
    REQUIRE(text.find("status retrained") != std::string::npos);
    REQUIRE(text.find("test_mean_iou") != std::string::npos);
    REQUIRE(fs::exists(dir / "report.txt"));
    auto m = load_manifest(dir.string());
    REQUIRE(m.artifacts.count("arch") == 1);
    REQUIRE(m.artifacts.count("genotype") == 1);
    REQUIRE(m.artifacts.count("metrics") == 1);
    fs::remove_all(dir);
}
