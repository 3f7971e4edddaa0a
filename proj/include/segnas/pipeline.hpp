#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "segnas/arch_params.hpp"
#include "segnas/checkpoint.hpp"
#include "segnas/data.hpp"
#include "segnas/decoder.hpp"
#include "segnas/evolution.hpp"
#include "segnas/metrics.hpp"
#include "segnas/optim.hpp"
#include "segnas/supernet.hpp"

namespace segnas {

// ---- run configuration ----

// Versioned schema; unknown keys are rejected so typos fail fast. Desk-scale
// defaults (epochs, dataset size) are intentionally small; the reference
// protocol uses lr0=0.01, arch lr=0.1, weight decay 1e-3, 16 channels,
// batch 2, 1/8 partial channels and gates arch updates until epoch 15.
struct RunConfig {
    int schema_version = 1;
    std::string topology = "darts-unet";  // resnext-unet | darts-unet | darts-unetpp | chain
    std::string space = "base";           // base | large
    int depth = 2;
    int base_channels = 16;
    bool edge_norm = true;
    int pc_K = 8;
    int batch = 2;
    int epochs_search = 5;
    int epochs_retrain = 10;
    int alpha_start_epoch = 15;
    int best_epoch_floor = 3;  // scaled-down stand-in for the 30-epoch floor
    double lr0 = 0.01;
    double gaea_lr = 0.1;
    double weight_decay = 1e-3;
    double momentum = 0.9;
    double grad_clip = 5.0;  // global-norm clip; 0 disables
    std::vector<double> class_weights = {1.0, 5.0};
    std::uint64_t seed = 0;
    int image_size = 64;
    int n_train = 32, n_val = 8, n_test = 8;
    double object_rate = 0.8;
    std::string out_dir = "runs/default";
    std::string decode_mode = "topk";    // argmax | topk
    std::string network_mode = "full";   // full | viterbi | multipath
    int decode_K = 2;
    // evolution
    int evo_pop = 4, evo_generations = 2, evo_workers = 2;
    double evo_mutation_rate = 0.2, evo_aging_fraction = 0.25;
    std::size_t evo_memory_budget = 0;
    int evo_train_epochs = 2;

    void validate() const {
        if (schema_version != 1)
            throw std::invalid_argument("unsupported config schema_version " +
                                        std::to_string(schema_version));
        if (topology == "resnext-unet" && (space != "large" || edge_norm))
            throw std::invalid_argument(
                "resnext-unet pairs with the large space and edge_norm off");
        for (auto [name, v] : std::initializer_list<std::pair<const char*, double>>{
                 {"depth", depth},         {"base_channels", base_channels},
                 {"pc_K", pc_K},           {"batch", batch},
                 {"epochs_search", epochs_search}, {"epochs_retrain", epochs_retrain},
                 {"lr0", lr0},             {"gaea_lr", gaea_lr},
                 {"image_size", image_size}, {"n_train", n_train},
                 {"n_val", n_val},         {"n_test", n_test},
                 {"decode_K", decode_K},   {"evo_pop", evo_pop},
                 {"evo_generations", evo_generations}, {"evo_workers", evo_workers},
                 {"evo_train_epochs", evo_train_epochs}})
            if (v <= 0)
                throw std::invalid_argument(std::string(name) + " must be positive");
        if (class_weights.size() != 2)
            throw std::invalid_argument("class_weights must have two entries");
    }

    Topology make() const { return make_topology(topology, space, depth, base_channels, edge_norm); }

    DatasetConfig dataset(int n) const {
        DatasetConfig d;
        d.height = image_size;
        d.width = image_size;
        d.n_patches = n;
        d.object_rate = object_rate;
        return d;
    }
};

inline nlohmann::json to_json(const RunConfig& c) {
    return nlohmann::json{{"schema_version", c.schema_version},
                          {"topology", c.topology},
                          {"space", c.space},
                          {"depth", c.depth},
                          {"base_channels", c.base_channels},
                          {"edge_norm", c.edge_norm},
                          {"pc_K", c.pc_K},
                          {"batch", c.batch},
                          {"epochs_search", c.epochs_search},
                          {"epochs_retrain", c.epochs_retrain},
                          {"alpha_start_epoch", c.alpha_start_epoch},
                          {"best_epoch_floor", c.best_epoch_floor},
                          {"lr0", c.lr0},
                          {"gaea_lr", c.gaea_lr},
                          {"weight_decay", c.weight_decay},
                          {"momentum", c.momentum},
                          {"grad_clip", c.grad_clip},
                          {"class_weights", c.class_weights},
                          {"seed", c.seed},
                          {"image_size", c.image_size},
                          {"n_train", c.n_train},
                          {"n_val", c.n_val},
                          {"n_test", c.n_test},
                          {"object_rate", c.object_rate},
                          {"out_dir", c.out_dir},
                          {"decode_mode", c.decode_mode},
                          {"network_mode", c.network_mode},
                          {"decode_K", c.decode_K},
                          {"evo_pop", c.evo_pop},
                          {"evo_generations", c.evo_generations},
                          {"evo_workers", c.evo_workers},
                          {"evo_mutation_rate", c.evo_mutation_rate},
                          {"evo_aging_fraction", c.evo_aging_fraction},
                          {"evo_memory_budget", c.evo_memory_budget},
                          {"evo_train_epochs", c.evo_train_epochs}};
}

inline RunConfig run_config_from_json(const nlohmann::json& j) {
    RunConfig c;
    const auto known = to_json(c);
    for (auto it = j.begin(); it != j.end(); ++it)
        if (!known.contains(it.key()))
            throw std::invalid_argument("unknown config key '" + it.key() + "'");
    auto get = [&](const char* key, auto& field) {
        if (j.contains(key)) field = j.at(key).get<std::decay_t<decltype(field)>>();
    };
    get("schema_version", c.schema_version);
    get("topology", c.topology);
    get("space", c.space);
    get("depth", c.depth);
    get("base_channels", c.base_channels);
    get("edge_norm", c.edge_norm);
    get("pc_K", c.pc_K);
    get("batch", c.batch);
    get("epochs_search", c.epochs_search);
    get("epochs_retrain", c.epochs_retrain);
    get("alpha_start_epoch", c.alpha_start_epoch);
    get("best_epoch_floor", c.best_epoch_floor);
    get("lr0", c.lr0);
    get("gaea_lr", c.gaea_lr);
    get("weight_decay", c.weight_decay);
    get("momentum", c.momentum);
    get("grad_clip", c.grad_clip);
    get("class_weights", c.class_weights);
    get("seed", c.seed);
    get("image_size", c.image_size);
    get("n_train", c.n_train);
    get("n_val", c.n_val);
    get("n_test", c.n_test);
    get("object_rate", c.object_rate);
    get("out_dir", c.out_dir);
    get("decode_mode", c.decode_mode);
    get("network_mode", c.network_mode);
    get("decode_K", c.decode_K);
    get("evo_pop", c.evo_pop);
    get("evo_generations", c.evo_generations);
    get("evo_workers", c.evo_workers);
    get("evo_mutation_rate", c.evo_mutation_rate);
    get("evo_aging_fraction", c.evo_aging_fraction);
    get("evo_memory_budget", c.evo_memory_budget);
    get("evo_train_epochs", c.evo_train_epochs);
    c.validate();
    return c;
}

inline RunConfig load_run_config(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw std::runtime_error("cannot read config " + path);
    nlohmann::json j;
    f >> j;
    return run_config_from_json(j);
}

// ---- run manifest ----

inline void write_text_atomic(const std::string& path, const std::string& text) {
    const std::string tmp = path + ".tmp";
    {
        std::ofstream f(tmp);
        if (!f) throw std::runtime_error("cannot write " + tmp);
        f << text;
    }
    std::filesystem::rename(tmp, path);
}

// Self-describing run directory: the manifest alone locates every artifact
// needed to re-run a later stage.
struct RunManifest {
    RunConfig config;
    std::map<std::string, std::string> artifacts;  // name -> path relative to dir
    std::string status = "new";

    void save(const std::string& dir) const {
        nlohmann::json j{{"config", to_json(config)}, {"artifacts", artifacts},
                         {"status", status}};
        write_text_atomic(dir + "/manifest.json", j.dump(2) + "\n");
    }
};

inline RunManifest load_manifest(const std::string& dir) {
    std::ifstream f(dir + "/manifest.json");
    if (!f) throw std::runtime_error("missing manifest in " + dir);
    nlohmann::json j;
    f >> j;
    RunManifest m;
    m.config = run_config_from_json(j.at("config"));
    m.artifacts = j.at("artifacts").get<std::map<std::string, std::string>>();
    m.status = j.at("status");
    return m;
}

// ---- evaluation helpers ----

template <typename T>
std::vector<int> argmax_labels(const Tensor<T>& logits) {
    const int N = logits.dim(0), C = logits.dim(1), H = logits.dim(2), W = logits.dim(3);
    std::vector<int> out(static_cast<std::size_t>(N) * H * W);
    for (int n = 0; n < N; ++n)
        for (int y = 0; y < H; ++y)
            for (int x = 0; x < W; ++x) {
                int best = 0;
                for (int c = 1; c < C; ++c)
                    if (logits.at4(n, c, y, x) > logits.at4(n, best, y, x)) best = c;
                out[(static_cast<std::size_t>(n) * H + y) * W + x] = best;
            }
    return out;
}

// MeanIoU of a model over a whole split, plus the flat prediction/label
// streams for downstream reports.
struct SplitEval {
    double mean_iou = 0;
    std::vector<int> preds, labels;
};

template <typename T, typename ForwardFn>
SplitEval evaluate_split(const DatasetSplit<T>& split, int batch, ForwardFn&& forward) {
    SplitEval ev;
    const int n = static_cast<int>(split.patches.size());
    for (int start = 0; start < n; start += batch) {
        const int take = std::min(batch, n - start);
        auto [images, labels] = make_batch(split, start, take);
        const Tensor<T> logits = forward(images);
        auto preds = argmax_labels(logits);
        ev.preds.insert(ev.preds.end(), preds.begin(), preds.end());
        ev.labels.insert(ev.labels.end(), labels.begin(), labels.end());
    }
    ev.mean_iou = mean_iou(ev.preds, ev.labels);
    return ev;
}

// ---- discrete training (shared by retrain / baseline / evolve) ----

// Scale factor bringing the global gradient norm under `clip` (1 when
// already inside, or when clipping is disabled).
template <typename T>
T grad_clip_scale(const std::map<std::string, const Tensor<T>*>& grads, double clip) {
    if (clip <= 0) return T(1);
    double sq = 0;
    for (const auto& [name, g] : grads)
        for (T v : g->values()) sq += static_cast<double>(v) * v;
    const double norm = std::sqrt(sq);
    return norm > clip ? static_cast<T>(clip / norm) : T(1);
}

template <typename T>
void clipped_sgd_step(SgdMomentum<T>& sgd, ParamStore<T>& params,
                      const std::map<std::string, const Tensor<T>*>& grads, T lr,
                      double clip) {
    const T cs = grad_clip_scale(grads, clip);
    for (const auto& [name, gptr] : grads) {
        if (cs == T(1)) {
            sgd.step(name, params.at(name), *gptr, lr);
        } else {
            Tensor<T> g = *gptr;
            for (T& v : g.values()) v *= cs;
            sgd.step(name, params.at(name), g, lr);
        }
    }
}

template <typename T>
struct TrainResult {
    double best_val_iou = -1;
    int best_epoch = -1;
    double test_iou = 0;
    std::vector<int> test_preds, test_labels;
    std::vector<std::string> log_rows;  // "epoch,train_loss,val_iou"
};

// Fixed-budget training of a decoded network with fresh weights; keeps the
// best validation checkpoint from `best_floor` onward and evaluates it on
// the test split.
template <typename T>
TrainResult<T> train_discrete(const Genotype& g, const RunConfig& cfg, std::uint64_t seed,
                              int epochs, const DatasetSplit<T>& train,
                              const DatasetSplit<T>& val, const DatasetSplit<T>& test,
                              const std::string& best_ckpt_path = "") {
    g.validate();
    DiscreteNet<T> net(g, seed);
    SgdMomentum<T> sgd(static_cast<T>(cfg.momentum), static_cast<T>(cfg.weight_decay));
    const std::vector<T> cw{static_cast<T>(cfg.class_weights[0]),
                            static_cast<T>(cfg.class_weights[1])};
    const int steps_per_epoch =
        std::max(1, static_cast<int>(train.patches.size()) / cfg.batch);
    const int total_steps = epochs * steps_per_epoch;

    TrainResult<T> res;
    ParamStore<T> best(seed);
    auto eval_net = [&](const DatasetSplit<T>& split) {
        return evaluate_split(split, cfg.batch, [&](const Tensor<T>& images) {
            auto fw = net.forward(images);
            return fw.tape->value(fw.logits);
        });
    };
    for (int epoch = 0; epoch < epochs; ++epoch) {
        double loss_sum = 0;
        for (int s = 0; s < steps_per_epoch; ++s) {
            auto [images, labels] = make_batch(train, s * cfg.batch, cfg.batch);
            auto fw = net.forward(images);
            auto loss = fw.tape->weighted_cross_entropy(fw.logits, labels, cw);
            loss_sum += fw.tape->value(loss)[0];
            fw.tape->backward(loss);
            const T lr = cosine_lr(epoch * steps_per_epoch + s, total_steps,
                                   static_cast<T>(cfg.lr0));
            clipped_sgd_step(sgd, net.params(), fw.bind->grads(), lr, cfg.grad_clip);
        }
        const double val_iou = eval_net(val).mean_iou;
        std::ostringstream row;
        row << epoch << "," << loss_sum / steps_per_epoch << "," << val_iou;
        res.log_rows.push_back(row.str());
        if (epoch >= cfg.best_epoch_floor && val_iou > res.best_val_iou) {
            res.best_val_iou = val_iou;
            res.best_epoch = epoch;
            best = net.params();
        }
    }
    if (res.best_epoch >= 0) net.params() = best;  // restore the kept checkpoint
    if (!best_ckpt_path.empty()) save_checkpoint(net.params(), best_ckpt_path);
    auto test_ev = eval_net(test);
    res.test_iou = test_ev.mean_iou;
    res.test_preds = std::move(test_ev.preds);
    res.test_labels = std::move(test_ev.labels);
    return res;
}

template <typename T>
std::array<DatasetSplit<T>, 3> make_splits(const RunConfig& cfg) {
    return {generate_synthetic_dataset<T>(cfg.dataset(cfg.n_train), cfg.seed, "train"),
            generate_synthetic_dataset<T>(cfg.dataset(cfg.n_val), cfg.seed + 1, "val"),
            generate_synthetic_dataset<T>(cfg.dataset(cfg.n_test), cfg.seed + 2, "test")};
}

// ---- pipelines ----

// Supernet search: network weights on training batches, architecture
// parameters (exponentiated-gradient on theta, plain SGD on gamma/beta) on
// validation batches once the gate opens. Emits the arch checkpoint and a
// per-epoch entropy trace.
inline RunManifest cmd_search(const RunConfig& cfg) {
    cfg.validate();
    auto topo = cfg.make();  // fails before any compute on a bad pairing
    std::filesystem::create_directories(cfg.out_dir);
    using T = float;
    auto [train, val, test] = make_splits<T>(cfg);
    (void)test;

    SuperNet<T> net(topo, cfg.pc_K, cfg.seed, /*theta_mode=*/true);
    SgdMomentum<T> sgd(static_cast<T>(cfg.momentum), static_cast<T>(cfg.weight_decay));
    SgdMomentum<T> arch_sgd(0, 0);
    const std::vector<T> cw{static_cast<T>(cfg.class_weights[0]),
                            static_cast<T>(cfg.class_weights[1])};
    const int steps_per_epoch =
        std::max(1, static_cast<int>(train.patches.size()) / cfg.batch);
    const int total_steps = cfg.epochs_search * steps_per_epoch;

    std::ostringstream entropy_csv, log_csv;
    entropy_csv << "epoch,mean,min,max\n";
    log_csv << "epoch,train_loss,val_iou,entropy_mean\n";
    int val_cursor = 0;
    for (int epoch = 0; epoch < cfg.epochs_search; ++epoch) {
        double loss_sum = 0;
        for (int s = 0; s < steps_per_epoch; ++s) {
            auto [images, labels] = make_batch(train, s * cfg.batch, cfg.batch);
            auto fw = net.forward(images, RunMode::search);
            auto loss = fw.tape->weighted_cross_entropy(fw.logits, labels, cw);
            loss_sum += fw.tape->value(loss)[0];
            fw.tape->backward(loss);
            const T lr = cosine_lr(epoch * steps_per_epoch + s, total_steps,
                                   static_cast<T>(cfg.lr0));
            clipped_sgd_step(sgd, net.params(), fw.bind->grads(), lr, cfg.grad_clip);

            if (!arch_update_gate(epoch, cfg.alpha_start_epoch)) continue;
            auto [vim, vlab] = make_batch(val, (val_cursor++) * cfg.batch, cfg.batch);
            auto vfw = net.forward(vim, RunMode::search);
            auto vloss = vfw.tape->weighted_cross_entropy(vfw.logits, vlab, cw);
            vfw.tape->backward(vloss);
            auto ag = net.harvest_arch_grads(vfw);
            auto& arch = net.arch();
            for (std::size_t r = 0; r < arch.alpha_normal.size(); ++r)
                gaea_step(arch.alpha_normal[r], ag.alpha_normal[r],
                          static_cast<T>(cfg.gaea_lr));
            for (std::size_t r = 0; r < arch.alpha_reduce.size(); ++r)
                gaea_step(arch.alpha_reduce[r], ag.alpha_reduce[r],
                          static_cast<T>(cfg.gaea_lr));
            auto sgd_vec = [&](const std::string& name, std::vector<T>& w,
                               const std::vector<T>& grad) {
                Tensor<T> wt(Shape{static_cast<int>(w.size())}, w);
                Tensor<T> gt(Shape{static_cast<int>(grad.size())}, grad);
                arch_sgd.step(name, wt, gt, static_cast<T>(cfg.gaea_lr));
                w = wt.values();
            };
            sgd_vec("arch.gamma_normal", arch.gamma_normal, ag.gamma_normal);
            sgd_vec("arch.gamma_reduce", arch.gamma_reduce, ag.gamma_reduce);
            sgd_vec("arch.beta", arch.beta, ag.beta);
        }
        std::vector<std::vector<T>> rows = net.arch().alpha_normal;
        rows.insert(rows.end(), net.arch().alpha_reduce.begin(),
                    net.arch().alpha_reduce.end());
        const auto es = entropy_stats(rows);
        const double val_iou =
            evaluate_split(val, cfg.batch, [&](const Tensor<T>& images) {
                auto fw = net.forward(images, RunMode::eval);
                return fw.tape->value(fw.logits);
            }).mean_iou;
        entropy_csv << epoch << "," << es.mean << "," << es.min << "," << es.max << "\n";
        log_csv << epoch << "," << loss_sum / steps_per_epoch << "," << val_iou << ","
                << es.mean << "\n";
    }

    save_arch_params(net.arch(), cfg.out_dir + "/arch.json");
    write_text_atomic(cfg.out_dir + "/entropy.csv", entropy_csv.str());
    write_text_atomic(cfg.out_dir + "/search_log.csv", log_csv.str());
    RunManifest m;
    m.config = cfg;
    m.artifacts["arch"] = "arch.json";
    m.artifacts["entropy"] = "entropy.csv";
    m.artifacts["search_log"] = "search_log.csv";
    m.status = "searched";
    m.save(cfg.out_dir);
    return m;
}

// Decode the searched architecture parameters into a genotype plus DOT
// graphs of the cells and the kept network.
inline RunManifest cmd_decode(const std::string& run_dir, std::string cell_mode = "",
                              int K = 0, std::string network_mode = "") {
    auto m = load_manifest(run_dir);
    if (!m.artifacts.count("arch"))
        throw std::runtime_error("run has no arch checkpoint; run search first");
    auto& cfg = m.config;
    auto arch = load_arch_params<float>(run_dir + "/" + m.artifacts.at("arch"));
    DecodeOptions opt;
    opt.cell_mode = cell_mode.empty() ? cfg.decode_mode : cell_mode;
    opt.K = K > 0 ? K : cfg.decode_K;
    opt.use_gamma = cfg.edge_norm;
    opt.network_mode = network_mode.empty() ? cfg.network_mode : network_mode;
    auto g = decode_genotype(cfg.make(), arch, opt);
    g.validate();
    save_genotype(g, run_dir + "/genotype.json");
    write_text_atomic(run_dir + "/cell_normal.dot", cell_dot(g, false));
    write_text_atomic(run_dir + "/cell_reduce.dot", cell_dot(g, true));
    write_text_atomic(run_dir + "/network.dot", network_dot(g));
    m.artifacts["genotype"] = "genotype.json";
    m.artifacts["cell_normal_dot"] = "cell_normal.dot";
    m.artifacts["cell_reduce_dot"] = "cell_reduce.dot";
    m.artifacts["network_dot"] = "network.dot";
    m.status = "decoded";
    m.save(run_dir);
    return m;
}

// Retrain the decoded genotype from scratch and report test metrics.
inline RunManifest cmd_retrain(const std::string& run_dir) {
    auto m = load_manifest(run_dir);
    if (!m.artifacts.count("genotype"))
        throw std::runtime_error("run has no genotype; run decode first");
    auto& cfg = m.config;
    using T = float;
    auto g = load_genotype(run_dir + "/" + m.artifacts.at("genotype"));
    auto [train, val, test] = make_splits<T>(cfg);
    auto res = train_discrete(g, cfg, cfg.seed + 17, cfg.epochs_retrain, train, val, test,
                              run_dir + "/retrain_best.ckpt");

    std::ostringstream log_csv;
    log_csv << "epoch,train_loss,val_iou\n";
    for (const auto& row : res.log_rows) log_csv << row << "\n";
    write_text_atomic(run_dir + "/retrain_log.csv", log_csv.str());

    auto per_patch = [&](const std::vector<int>& flat) {
        const std::size_t plane = static_cast<std::size_t>(cfg.image_size) * cfg.image_size;
        std::vector<std::vector<int>> out;
        for (std::size_t off = 0; off + plane <= flat.size(); off += plane)
            out.emplace_back(flat.begin() + off, flat.begin() + off + plane);
        return out;
    };
    const auto report = pr_curve(per_patch(res.test_preds), per_patch(res.test_labels),
                                 cfg.image_size, cfg.image_size, {0.3, 0.5, 0.7});
    save_pr_csv(report, run_dir + "/pr.csv");
    nlohmann::json metrics{{"test_mean_iou", res.test_iou},
                           {"best_val_iou", res.best_val_iou},
                           {"best_epoch", res.best_epoch},
                           {"best_epoch_floor", cfg.best_epoch_floor}};
    write_text_atomic(run_dir + "/metrics.json", metrics.dump(2) + "\n");
    nlohmann::json preds{{"height", cfg.image_size}, {"width", cfg.image_size},
                         {"predictions", res.test_preds}, {"labels", res.test_labels}};
    write_text_atomic(run_dir + "/predictions.json", preds.dump() + "\n");

    m.artifacts["retrain_log"] = "retrain_log.csv";
    m.artifacts["metrics"] = "metrics.json";
    m.artifacts["pr"] = "pr.csv";
    m.artifacts["predictions"] = "predictions.json";
    m.artifacts["retrain_ckpt"] = "retrain_best.ckpt";
    m.status = "retrained";
    m.save(run_dir);
    return m;
}

// Random-search baseline: n uniformly sampled cells, each retrained with the
// identical budget; the comparison quantity is the max IoU across samples.
inline RunManifest cmd_random_baseline(const RunConfig& cfg, int n_samples) {
    cfg.validate();
    if (n_samples < 1) throw std::invalid_argument("n_samples must be >= 1");
    auto topo = cfg.make();
    std::filesystem::create_directories(cfg.out_dir);
    using T = float;
    auto [train, val, test] = make_splits<T>(cfg);
    std::mt19937_64 rng(cfg.seed ^ 0xa5a5a5a5ull);

    std::ostringstream csv;
    csv << "sample,test_mean_iou\n";
    double sum = 0, best = -1;
    for (int i = 0; i < n_samples; ++i) {
        auto g = sample_random_cell(topo, rng);
        auto res = train_discrete(g, cfg, cfg.seed + 100 + i, cfg.epochs_retrain, train,
                                  val, test);
        csv << i << "," << res.test_iou << "\n";
        sum += res.test_iou;
        best = std::max(best, res.test_iou);
    }
    write_text_atomic(cfg.out_dir + "/baseline.csv", csv.str());

    nlohmann::json summary{{"n_samples", n_samples},
                           {"mean_iou_mean", sum / n_samples},
                           {"mean_iou_max", best}};
    // record the searched cell's retrained score alongside when available
    std::ifstream mf(cfg.out_dir + "/metrics.json");
    if (mf) {
        nlohmann::json metrics;
        mf >> metrics;
        summary["searched_mean_iou"] = metrics.at("test_mean_iou");
    }
    write_text_atomic(cfg.out_dir + "/baseline_summary.json", summary.dump(2) + "\n");

    RunManifest m;
    try {
        m = load_manifest(cfg.out_dir);
    } catch (const std::exception&) {
        m.config = cfg;
    }
    m.artifacts["baseline"] = "baseline.csv";
    m.artifacts["baseline_summary"] = "baseline_summary.json";
    m.status = "baselined";
    m.save(cfg.out_dir);
    return m;
}

// Evolutionary search over genotypes; each candidate is trained briefly and
// scored by validation MeanIoU. State and history are persisted after every
// generation so an interrupted run resumes from the last complete one.
inline RunManifest cmd_evolve(const RunConfig& cfg) {
    cfg.validate();
    auto topo = cfg.make();
    std::filesystem::create_directories(cfg.out_dir);
    using T = float;
    auto [train, val, test] = make_splits<T>(cfg);
    (void)test;

    EvolutionConfig ecfg;
    ecfg.pop_size = cfg.evo_pop;
    ecfg.generations = cfg.evo_generations;
    ecfg.workers = cfg.evo_workers;
    ecfg.mutation_rate = cfg.evo_mutation_rate;
    ecfg.aging_fraction = cfg.evo_aging_fraction;
    ecfg.seed = cfg.seed;
    ecfg.train_budget = cfg.evo_train_epochs;
    ecfg.memory_budget = cfg.evo_memory_budget;
    ecfg.batch = cfg.batch;
    ecfg.in_h = cfg.image_size;
    ecfg.in_w = cfg.image_size;

    Evaluator eval = [&](const JobMessage& job) {
        RunConfig jc = cfg;
        jc.best_epoch_floor = 0;
        auto res = train_discrete<T>(job.genotype, jc, job.seed, job.train_budget, train,
                                     val, val);
        return res.best_val_iou;
    };

    const std::string hist_path = cfg.out_dir + "/history.jsonl";
    const std::string state_path = cfg.out_dir + "/evo_state.json";
    History history;
    EvolutionState state;
    if (std::filesystem::exists(state_path)) {
        history = load_history_jsonl(hist_path);
        std::ifstream sf(state_path);
        nlohmann::json sj;
        sf >> sj;
        state = evolution_state_from_json(sj);
    }
    for (int gen = state.next_generation; gen < ecfg.generations; ++gen) {
        auto step = ecfg;
        step.generations = gen + 1;
        run_evolution(topo, step, eval, history, state);
        std::ostringstream hist;
        for (const auto& r : history.records) hist << to_json(r).dump() << "\n";
        write_text_atomic(hist_path, hist.str());
        write_text_atomic(state_path, to_json(state).dump(2) + "\n");
    }

    RunManifest m;
    try {
        m = load_manifest(cfg.out_dir);
    } catch (const std::exception&) {
        m.config = cfg;
    }
    m.artifacts["history"] = "history.jsonl";
    m.artifacts["evo_state"] = "evo_state.json";
    m.status = "evolved";
    m.save(cfg.out_dir);
    return m;
}

// Human-readable roll-up of whatever stages the run directory contains.
inline std::string cmd_report(const std::string& run_dir) {
    auto m = load_manifest(run_dir);
    std::ostringstream out;
    out << "run " << run_dir << " status " << m.status << "\n";
    out << "topology " << m.config.topology << " space " << m.config.space << " seed "
        << m.config.seed << "\n";
    for (const auto& [name, rel] : m.artifacts) out << "artifact " << name << " " << rel << "\n";
    std::ifstream mf(run_dir + "/metrics.json");
    if (mf) {
        nlohmann::json metrics;
        mf >> metrics;
        out << "test_mean_iou " << metrics.at("test_mean_iou").get<double>() << "\n";
        out << "best_val_iou " << metrics.at("best_val_iou").get<double>() << "\n";
    }
    std::ifstream bf(run_dir + "/baseline_summary.json");
    if (bf) {
        nlohmann::json s;
        bf >> s;
        out << "baseline_max_iou " << s.at("mean_iou_max").get<double>() << "\n";
    }
    if (std::filesystem::exists(run_dir + "/history.jsonl")) {
        auto h = load_history_jsonl(run_dir + "/history.jsonl");
        out << "evolution_records " << h.records.size() << " best_fitness "
            << h.best_fitness() << "\n";
    }
    const std::string text = out.str();
    write_text_atomic(run_dir + "/report.txt", text);
    return text;
}

}  // namespace segnas
