#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <functional>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "segnas/decoder.hpp"
#include "segnas/genotype.hpp"
#include "segnas/search_space.hpp"
#include "segnas/supernet.hpp"

namespace segnas {

// ---- random genotype sampling ----

// Uniform with replacement: every template edge gets an independent uniform
// op draw; the full network template is kept.
inline Genotype sample_random_cell(const Topology& topo, std::mt19937_64& rng) {
    const auto& ops = topo.space.ops;
    std::uniform_int_distribution<std::size_t> pick(0, ops.size() - 1);
    auto draw = [&]() {
        std::vector<GenotypeEdge> out;
        for (std::size_t e = 0; e < topo.cell.edges.size(); ++e)
            out.push_back({static_cast<int>(e), ops[pick(rng)]});
        return out;
    };
    auto g = Genotype::full_network(topo, draw(), draw());
    g.validate();
    return g;
}

// ---- mutation ----

// Per kept edge: with probability `rate`, switch the op uniformly over the
// space minus the current op. With probability `topo_move_rate`, one topology
// move: a random block swaps one kept input edge for a currently unused
// template edge into the same block. The result always satisfies the
// template invariants.
inline Genotype mutate(const Genotype& g, std::mt19937_64& rng, double rate,
                       double topo_move_rate = 0.2) {
    if (rate < 0 || rate > 1) throw std::invalid_argument("mutation rate must be in [0,1]");
    Genotype out = g;
    const auto& ops = out.topo.space.ops;
    std::uniform_real_distribution<double> uni(0.0, 1.0);
    auto mutate_cell = [&](std::vector<GenotypeEdge>& edges) {
        for (auto& ge : edges) {
            if (ops.size() < 2 || uni(rng) >= rate) continue;
            std::uniform_int_distribution<std::size_t> pick(0, ops.size() - 2);
            std::size_t k = pick(rng);
            const std::size_t cur = static_cast<std::size_t>(out.topo.space.index_of(ge.op));
            if (k >= cur) ++k;  // skip the current op
            ge.op = ops[k];
        }
        // a zero rate must be a strict identity, so the move is gated on it too
        if (out.topo.cell.style != "darts" || uni(rng) >= rate * topo_move_rate) return;
        const auto& cell = out.topo.cell;
        std::uniform_int_distribution<int> bpick(0, cell.num_blocks - 1);
        const int node = cell.num_input_nodes + bpick(rng);
        std::vector<std::size_t> kept_here;
        for (std::size_t i = 0; i < edges.size(); ++i)
            if (cell.edges[edges[i].edge_index].to == node) kept_here.push_back(i);
        std::vector<int> unused;
        for (int e : cell.edges_into(node)) {
            bool used = false;
            for (std::size_t i : kept_here) used = used || edges[i].edge_index == e;
            if (!used) unused.push_back(e);
        }
        if (kept_here.empty() || unused.empty()) return;
        std::uniform_int_distribution<std::size_t> kp(0, kept_here.size() - 1);
        std::uniform_int_distribution<std::size_t> up(0, unused.size() - 1);
        edges[kept_here[kp(rng)]].edge_index = unused[up(rng)];
        std::sort(edges.begin(), edges.end(),
                  [](const GenotypeEdge& a, const GenotypeEdge& b) {
                      return a.edge_index < b.edge_index;
                  });
    };
    mutate_cell(out.normal_edges);
    mutate_cell(out.reduce_edges);
    out.validate();
    return out;
}

// ---- memory estimation guard ----

struct MemoryEstimate {
    std::size_t param_bytes = 0;
    std::size_t activation_bytes = 0;  // scales linearly with the batch size
    std::size_t total() const { return param_bytes + activation_bytes; }
};

// Deterministic upper bound on training memory: parameter bytes plus summed
// activation bytes over a symbolic forward pass mirroring the discrete
// network's graph. Activations are over-counted (forward value plus backward
// gradient plus slop) so the estimate dominates the measured allocator peak.
inline MemoryEstimate estimate_memory(const Genotype& g, int batch, int in_ch, int in_h,
                                      int in_w, std::size_t scalar_bytes = 4) {
    g.validate();
    const auto& topo = g.topo;
    const auto& net = topo.network;
    const auto& cell = topo.cell;
    std::size_t act = 0;    // activation scalars for batch 1
    std::size_t params = 0; // parameter scalars

    auto op_act = [&](OpKind k, int C, int hin, int win, int hout, int wout) {
        const std::size_t in_n = static_cast<std::size_t>(C) * hin * win;
        const std::size_t out_n = static_cast<std::size_t>(C) * hout * wout;
        if (!op_has_params(k)) return out_n + in_n;  // pooled / resized copies
        return in_n + 3 * out_n;                     // relu + conv stages + norm
    };

    // stem: stride-2 conv blocks down to the divisor
    int sh = in_h, sw = in_w;
    {
        int ci = in_ch;
        int stages = 0;
        for (int d = net.stem_divisor; d > 1; d /= 2) ++stages;
        if (stages == 0) stages = 1;
        for (int s = 0; s < stages; ++s) {
            const int stride = net.stem_divisor == 1 ? 1 : 2;
            sh = same_out_dim(sh, stride);
            sw = same_out_dim(sw, stride);
            act += 3 * static_cast<std::size_t>(net.base_channels) * sh * sw;
            params += static_cast<std::size_t>(net.base_channels) * ci * 9 +
                      2 * static_cast<std::size_t>(net.base_channels);
            ci = net.base_channels;
        }
    }

    int max_level = 0;
    for (const auto& nd : net.nodes) max_level = std::max(max_level, nd.level);
    const auto sizes = level_sizes(sh, sw, max_level);

    for (int v = 0; v < static_cast<int>(net.nodes.size()); ++v) {
        if (!g.node_kept(v)) continue;
        const auto& nd = net.nodes[v];
        if (nd.name == "in") continue;
        // inputs arrive at the previous level's (largest possible) resolution
        const int in_level = std::max(0, nd.level - 1);
        const auto [th, tw] = sizes[in_level];
        const std::size_t plane = static_cast<std::size_t>(th) * tw;

        // aligned inputs + 1x1 aggregation
        int fanin = 0;
        for (int u : net.preds(v))
            if (g.net_edge_kept(net.edge_index(u, v)) && g.node_kept(u)) ++fanin;
        if (fanin == 0) fanin = 1;  // stem fallback
        act += static_cast<std::size_t>(fanin + 2) * nd.channels * plane;
        params += static_cast<std::size_t>(fanin) * nd.channels * nd.channels  // aligns
                  + static_cast<std::size_t>(fanin) * nd.channels * nd.channels;  // pre.w

        // cell body
        const auto& kept = g.cell_edges(nd.reduction);
        const auto [oh, ow] = sizes[nd.level];
        const std::size_t oplane = static_cast<std::size_t>(oh) * ow;
        for (const auto& ge : kept) {
            const auto& ce = cell.edges[ge.edge_index];
            const int stride = (nd.reduction && ce.from < cell.num_input_nodes) ? 2 : 1;
            const int hin = stride == 2 ? th : oh, win = stride == 2 ? tw : ow;
            act += op_act(ge.op, nd.channels, hin, win, oh, ow);
            params += op_param_count(ge.op, nd.channels);
        }
        // block sums, concat, output 1x1
        const int blocks = cell.style == "resnext" ? 1 : cell.num_blocks;
        act += static_cast<std::size_t>(blocks + 2) * nd.channels * oplane;
        params += static_cast<std::size_t>(blocks) * nd.channels * nd.channels;
    }

    // head: relu + 1x1 conv + bilinear upsample to input resolution
    const auto& sink = net.nodes[net.sink()];
    const auto [hh, hw] = sizes[sink.level];
    act += static_cast<std::size_t>(sink.channels) * hh * hw;
    act += 2 * static_cast<std::size_t>(2) * in_h * in_w;
    params += static_cast<std::size_t>(2) * sink.channels + 2;

    MemoryEstimate est;
    // x3: forward value, backward gradient, graph bookkeeping slop
    est.activation_bytes =
        static_cast<std::size_t>(batch) * act * scalar_bytes * 3;
    // x4: store copy, bound tape leaf, gradient, optimizer velocity
    est.param_bytes = params * scalar_bytes * 4;
    return est;
}

// ---- evolution orchestrator ----

struct Individual {
    std::uint64_t id = 0;
    Genotype genotype;
    bool has_fitness = false;
    double fitness = 0;  // validation MeanIoU in [0,1]
    int age = 0;
};

struct JobMessage {
    std::uint64_t id = 0;
    Genotype genotype;
    int train_budget = 0;
    std::uint64_t seed = 0;
};

struct ResultMessage {
    std::uint64_t id = 0;
    double fitness = 0;
    std::string status;  // ok | failed
};

struct HistoryRecord {
    int generation = 0;
    std::uint64_t id = 0;
    Genotype genotype;
    double fitness = 0;
    std::string status;  // ok | failed | rejected-memory
    double wall_time_s = 0;
};

struct History {
    std::vector<HistoryRecord> records;

    void append(HistoryRecord r) { records.push_back(std::move(r)); }

    double best_fitness() const {
        double best = -1;
        for (const auto& r : records)
            if (r.status == "ok") best = std::max(best, r.fitness);
        return best;
    }
};

inline nlohmann::json to_json(const HistoryRecord& r) {
    return nlohmann::json{{"generation", r.generation}, {"id", r.id},
                          {"genotype", to_json(r.genotype)}, {"fitness", r.fitness},
                          {"status", r.status},             {"wall_time_s", r.wall_time_s}};
}

inline HistoryRecord history_record_from_json(const nlohmann::json& j) {
    HistoryRecord r;
    r.generation = j.at("generation");
    r.id = j.at("id");
    r.genotype = genotype_from_json(j.at("genotype"));
    r.fitness = j.at("fitness");
    r.status = j.at("status");
    r.wall_time_s = j.at("wall_time_s");
    return r;
}

// JSON-lines export: one record per line, appendable.
inline void save_history_jsonl(const History& h, const std::string& path) {
    std::ofstream f(path);
    if (!f) throw std::runtime_error("cannot write " + path);
    for (const auto& r : h.records) f << to_json(r).dump() << "\n";
}

inline History load_history_jsonl(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw std::runtime_error("cannot read history " + path);
    History h;
    for (std::string line; std::getline(f, line);) {
        if (line.empty()) continue;
        h.append(history_record_from_json(nlohmann::json::parse(line)));
    }
    return h;
}

struct EvolutionConfig {
    int pop_size = 8;
    int generations = 4;
    int workers = 2;
    double mutation_rate = 0.2;
    double topo_move_rate = 0.2;
    double aging_fraction = 0.25;
    bool elitism = true;
    int train_budget = 10;           // epochs per candidate
    std::uint64_t seed = 0;
    std::size_t memory_budget = 0;   // bytes; 0 disables the guard
    int batch = 8;
    int in_ch = 1, in_h = 64, in_w = 64;
};

// Serializable orchestrator state: resuming from the last complete
// generation restores the population and the generator stream.
struct EvolutionState {
    int next_generation = 0;
    std::uint64_t next_id = 0;
    std::vector<Individual> population;
    std::string rng_state;
};

inline nlohmann::json to_json(const EvolutionState& s) {
    nlohmann::json pop = nlohmann::json::array();
    for (const auto& ind : s.population)
        pop.push_back({{"id", ind.id},
                       {"genotype", to_json(ind.genotype)},
                       {"has_fitness", ind.has_fitness},
                       {"fitness", ind.fitness},
                       {"age", ind.age}});
    return nlohmann::json{{"next_generation", s.next_generation},
                          {"next_id", s.next_id},
                          {"population", pop},
                          {"rng_state", s.rng_state}};
}

inline EvolutionState evolution_state_from_json(const nlohmann::json& j) {
    EvolutionState s;
    s.next_generation = j.at("next_generation");
    s.next_id = j.at("next_id");
    for (const auto& pj : j.at("population")) {
        Individual ind;
        ind.id = pj.at("id");
        ind.genotype = genotype_from_json(pj.at("genotype"));
        ind.has_fitness = pj.at("has_fitness");
        ind.fitness = pj.at("fitness");
        ind.age = pj.at("age");
        s.population.push_back(std::move(ind));
    }
    s.rng_state = j.at("rng_state");
    return s;
}

// Candidate evaluator: returns validation fitness in [0,1]; throwing signals
// a worker failure (the job is retried once).
using Evaluator = std::function<double(const JobMessage&)>;

namespace detail {

// In-process worker pool honoring the one-result-per-job contract. Results
// depend only on the job content, so any worker count yields the same
// fitness set.
inline std::vector<ResultMessage> dispatch_jobs(const std::vector<JobMessage>& jobs,
                                                int workers, const Evaluator& eval) {
    if (workers < 1) throw std::invalid_argument("worker count must be >= 1");
    std::vector<std::vector<const JobMessage*>> queues(workers);
    for (std::size_t i = 0; i < jobs.size(); ++i)
        queues[i % workers].push_back(&jobs[i]);
    std::vector<ResultMessage> results;
    for (const auto& q : queues)
        for (const JobMessage* job : q) {
            ResultMessage res{job->id, 0, "failed"};
            for (int attempt = 0; attempt < 2 && res.status != "ok"; ++attempt) {
                try {
                    res.fitness = eval(*job);
                    res.status = "ok";
                } catch (const std::exception&) {
                }
            }
            results.push_back(res);
        }
    return results;
}

inline std::uint64_t job_seed(std::uint64_t run_seed, std::uint64_t id) {
    std::uint64_t x = run_seed ^ (id * 0x9e3779b97f4a7c15ull + 0x2545f4914f6cdd1dull);
    x ^= x >> 33;
    x *= 0xff51afd7ed558ccdull;
    x ^= x >> 33;
    return x;
}

}  // namespace detail

// One evolutionary run (or continuation): generation 0 is sampled uniformly,
// then cycles of evaluate -> record -> tournament-3 selection + mutation,
// with the configured fraction of oldest individuals aged out and optional
// elitism. Deterministic given the seed, independent of the worker count.
inline void run_evolution(const Topology& topo, const EvolutionConfig& cfg,
                          const Evaluator& eval, History& history, EvolutionState& state) {
    if (cfg.pop_size < 2) throw std::invalid_argument("pop_size must be >= 2");
    if (cfg.workers < 1) throw std::invalid_argument("workers must be >= 1");
    std::mt19937_64 rng(cfg.seed);
    if (!state.rng_state.empty()) {
        std::istringstream in(state.rng_state);
        in >> rng;
    }

    if (state.population.empty() && state.next_generation == 0) {
        for (int i = 0; i < cfg.pop_size; ++i) {
            Individual ind;
            ind.id = state.next_id++;
            ind.genotype = sample_random_cell(topo, rng);
            state.population.push_back(std::move(ind));
        }
    }

    for (int gen = state.next_generation; gen < cfg.generations; ++gen) {
        const auto t0 = std::chrono::steady_clock::now();

        // evaluate everything without a fitness yet
        std::vector<JobMessage> jobs;
        for (auto& ind : state.population) {
            if (ind.has_fitness) continue;
            if (cfg.memory_budget > 0) {
                const auto est = estimate_memory(ind.genotype, cfg.batch, cfg.in_ch,
                                                 cfg.in_h, cfg.in_w);
                if (est.total() > cfg.memory_budget) {
                    ind.has_fitness = true;
                    ind.fitness = 0;
                    history.append({gen, ind.id, ind.genotype, 0, "rejected-memory", 0});
                    continue;
                }
            }
            jobs.push_back({ind.id, ind.genotype, cfg.train_budget,
                            detail::job_seed(cfg.seed, ind.id)});
        }
        const auto results = detail::dispatch_jobs(jobs, cfg.workers, eval);
        if (results.size() != jobs.size())
            throw std::logic_error("message contract violated: result count mismatch");
        const double wall = std::chrono::duration<double>(
                                std::chrono::steady_clock::now() - t0)
                                .count();
        for (const auto& res : results) {
            for (auto& ind : state.population)
                if (ind.id == res.id) {
                    ind.has_fitness = true;
                    ind.fitness = res.status == "ok" ? res.fitness : 0;
                    history.append({gen, ind.id, ind.genotype, ind.fitness, res.status,
                                    wall});
                }
        }

        // evolve: the aging fraction of oldest individuals leaves the parent
        // pool, tournament-3 winners father a full set of fresh children, and
        // the current elite is carried over unchanged alongside them
        Individual elite;
        bool have_elite = false;
        for (const auto& ind : state.population)
            if (ind.has_fitness && (!have_elite || ind.fitness > elite.fitness)) {
                elite = ind;
                have_elite = true;
            }

        std::vector<Individual> parents = state.population;
        std::sort(parents.begin(), parents.end(),
                  [](const Individual& a, const Individual& b) {
                      if (a.age != b.age) return a.age > b.age;
                      return a.id < b.id;
                  });
        const int n_age_out = static_cast<int>(
            std::floor(cfg.aging_fraction * static_cast<double>(parents.size())));
        parents.erase(parents.begin(), parents.begin() + n_age_out);
        if (cfg.elitism && have_elite) {
            bool present = false;
            for (const auto& p : parents) present = present || p.id == elite.id;
            if (!present) parents.push_back(elite);  // the elite outlives aging
        }
        if (parents.empty()) parents = state.population;

        std::vector<Individual> next;
        if (cfg.elitism && have_elite) {
            elite.age += 1;
            next.push_back(elite);
        }
        std::uniform_int_distribution<std::size_t> pick(0, parents.size() - 1);
        for (int i = 0; i < cfg.pop_size; ++i) {
            const Individual* best = nullptr;
            for (int t = 0; t < 3; ++t) {
                const Individual& cand = parents[pick(rng)];
                if (!best || (cand.has_fitness &&
                              (!best->has_fitness || cand.fitness > best->fitness)))
                    best = &cand;
            }
            Individual child;
            child.id = state.next_id++;
            child.genotype = mutate(best->genotype, rng, cfg.mutation_rate,
                                    cfg.topo_move_rate);
            next.push_back(std::move(child));
        }
        state.population = std::move(next);
        state.next_generation = gen + 1;
    }

    std::ostringstream out;
    out << rng;
    state.rng_state = out.str();
}

}  // namespace segnas
