#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

#include "segnas/arch_params.hpp"
#include "segnas/genotype.hpp"
#include "segnas/search_space.hpp"

namespace segnas {

inline std::vector<double> softmax_vec(const std::vector<double>& x) {
    std::vector<double> y(x.size());
    double mx = -std::numeric_limits<double>::infinity();
    for (double v : x) mx = std::max(mx, v);
    double denom = 0;
    for (std::size_t i = 0; i < x.size(); ++i) denom += (y[i] = std::exp(x[i] - mx));
    for (double& v : y) v /= denom;
    return y;
}

// Argmax op for one edge; ties break toward the lowest op index.
template <typename T>
OpKind decode_edge_argmax(const std::vector<T>& alpha_row, const std::vector<OpKind>& ops) {
    if (alpha_row.size() != ops.size())
        throw std::invalid_argument("decode_edge_argmax: row length != op count");
    std::size_t best = 0;
    for (std::size_t o = 1; o < ops.size(); ++o)
        if (alpha_row[o] > alpha_row[best]) best = o;
    return ops[best];
}

// Normalized decode for one edge. gamma_weight is this edge's softmax weight
// over its sibling edges; a positive per-edge scalar cannot change the
// within-edge argmax, it only scales the cross-edge ranking strength.
template <typename T>
std::pair<OpKind, double> decode_edge_normalized(const std::vector<T>& alpha_row,
                                                 double gamma_weight,
                                                 const std::vector<OpKind>& ops,
                                                 bool theta_mode) {
    if (alpha_row.size() != ops.size())
        throw std::invalid_argument("decode_edge_normalized: row length != op count");
    std::vector<double> w(alpha_row.begin(), alpha_row.end());
    if (!theta_mode) w = softmax_vec(w);
    std::size_t best = 0;
    for (std::size_t o = 1; o < w.size(); ++o)
        if (w[o] > w[best]) best = o;
    return {ops[best], w[best] * gamma_weight};
}

// ---- cell decode: top-K strongest input edges per block ----

// Ranks each block's candidate input edges by edge strength (max op weight,
// optionally scaled by the sibling-softmaxed gamma), keeps the top K, and
// drops "cut" edges unless that would leave the block without inputs. If
// every candidate decodes to cut, the strongest edge is kept with its best
// non-cut op so the decoded cell never loses a block entirely.
template <typename T>
std::vector<GenotypeEdge> decode_cell_topk(const CellTemplate& cell,
                                           const std::vector<std::vector<T>>& alpha_rows,
                                           const std::vector<T>& gamma,
                                           const std::vector<OpKind>& ops, int K,
                                           bool use_gamma, bool theta_mode) {
    if (K < 1) throw std::invalid_argument("decode_cell_topk: K must be >= 1");
    if (alpha_rows.size() != cell.edges.size())
        throw std::invalid_argument("decode_cell_topk: alpha row count != edge count");
    std::vector<GenotypeEdge> kept;
    for (int j = 0; j < cell.num_blocks; ++j) {
        const int node = cell.num_input_nodes + j;
        const auto incoming = cell.edges_into(node);
        std::vector<double> gamma_w(incoming.size(), 1.0);
        if (use_gamma) {
            std::vector<double> logits;
            for (int e : incoming) logits.push_back(static_cast<double>(gamma.at(e)));
            gamma_w = softmax_vec(logits);
        }
        struct Cand {
            int edge;
            OpKind op;
            double strength;
        };
        std::vector<Cand> cands;
        for (std::size_t k = 0; k < incoming.size(); ++k) {
            auto [op, strength] =
                decode_edge_normalized(alpha_rows[incoming[k]], gamma_w[k], ops, theta_mode);
            cands.push_back({incoming[k], op, strength});
        }
        std::stable_sort(cands.begin(), cands.end(), [](const Cand& a, const Cand& b) {
            return a.strength > b.strength;
        });
        const int take = std::min<int>(K, static_cast<int>(cands.size()));
        std::vector<Cand> top(cands.begin(), cands.begin() + take);
        std::vector<Cand> non_cut;
        for (const auto& c : top)
            if (c.op != OpKind::cut) non_cut.push_back(c);
        if (!non_cut.empty()) {
            for (const auto& c : non_cut) kept.push_back({c.edge, c.op});
        } else {
            // every top edge decoded to cut: keep the globally strongest edge
            // under its best non-cut op
            bool has_non_cut_op = false;
            for (OpKind o : ops)
                if (o != OpKind::cut) has_non_cut_op = true;
            if (!has_non_cut_op) {
                kept.push_back({top.front().edge, top.front().op});  // cut-only space
                continue;
            }
            Cand best{-1, OpKind::skip, -std::numeric_limits<double>::infinity()};
            for (std::size_t k = 0; k < incoming.size(); ++k) {
                std::vector<double> w(alpha_rows[incoming[k]].begin(),
                                      alpha_rows[incoming[k]].end());
                if (!theta_mode) w = softmax_vec(w);
                for (std::size_t o = 0; o < ops.size(); ++o) {
                    if (ops[o] == OpKind::cut) continue;
                    const double s = w[o] * gamma_w[k];
                    if (s > best.strength) best = {incoming[k], ops[o], s};
                }
            }
            kept.push_back({best.edge, best.op});
        }
    }
    std::sort(kept.begin(), kept.end(),
              [](const GenotypeEdge& a, const GenotypeEdge& b) {
                  return a.edge_index < b.edge_index;
              });
    return kept;
}

// ---- network decode ----

struct PathScore {
    std::vector<int> path;
    double score = 0;
};

// Per-edge log weight: beta softmaxed over each node's incoming edges
// (matching how beta enters the supernet aggregation).
template <typename T>
std::vector<double> beta_edge_log_weights(const std::vector<T>& beta,
                                          const NetworkTemplate& net) {
    if (beta.size() != net.edges.size())
        throw std::invalid_argument("beta length != network edge count");
    std::vector<double> logw(net.edges.size(), 0);
    for (int v = 0; v < static_cast<int>(net.nodes.size()); ++v) {
        std::vector<int> eidx;
        for (std::size_t e = 0; e < net.edges.size(); ++e)
            if (net.edges[e].to == v) eidx.push_back(static_cast<int>(e));
        if (eidx.empty()) continue;
        std::vector<double> logits;
        for (int e : eidx) logits.push_back(static_cast<double>(beta[e]));
        const auto w = softmax_vec(logits);
        for (std::size_t k = 0; k < eidx.size(); ++k) logw[eidx[k]] = std::log(w[k]);
    }
    return logw;
}

// Single best source->sink path by total log-likelihood, via dynamic
// programming over topological order. Ties break toward the lexicographically
// smallest predecessor.
template <typename T>
PathScore viterbi_best_path(const std::vector<T>& beta, const NetworkTemplate& net) {
    const auto logw = beta_edge_log_weights(beta, net);
    const auto order = net.topo_order();
    const int src = net.source(), snk = net.sink();
    std::vector<double> best(net.nodes.size(), -std::numeric_limits<double>::infinity());
    std::vector<int> back(net.nodes.size(), -1);
    best[src] = 0;
    for (int v : order) {
        if (v == src) continue;
        auto preds = net.preds(v);
        std::sort(preds.begin(), preds.end());
        for (int u : preds) {
            const double cand = best[u] + logw[net.edge_index(u, v)];
            if (cand > best[v]) {
                best[v] = cand;
                back[v] = u;
            }
        }
    }
    PathScore ps;
    ps.score = best[snk];
    for (int v = snk; v != -1; v = back[v]) ps.path.push_back(v);
    std::reverse(ps.path.begin(), ps.path.end());
    return ps;
}

struct MultiPathResult {
    std::vector<PathScore> scores;   // all paths, average log-likelihood
    std::vector<std::size_t> kept;   // indices into scores
    double mu = 0, sigma = 0;
    bool fallback = false;           // mu + 3*sigma selected nothing
};

// Scores every source->sink path by average log-likelihood, keeps paths with
// score >= mu + 3*sigma (population sigma). An empty selection falls back to
// the single best path.
template <typename T>
MultiPathResult multipath_decode(const std::vector<T>& beta, const NetworkTemplate& net,
                                 std::size_t cap = 10000) {
    const auto paths = enumerate_paths(net, cap);
    const auto logw = beta_edge_log_weights(beta, net);
    MultiPathResult res;
    for (const auto& p : paths) {
        double total = 0;
        for (std::size_t i = 0; i + 1 < p.size(); ++i)
            total += logw[net.edge_index(p[i], p[i + 1])];
        const double edges = static_cast<double>(p.size() - 1);
        res.scores.push_back({p, edges > 0 ? total / edges : 0});
    }
    const double n = static_cast<double>(res.scores.size());
    for (const auto& s : res.scores) res.mu += s.score;
    res.mu /= n;
    for (const auto& s : res.scores) res.sigma += (s.score - res.mu) * (s.score - res.mu);
    res.sigma = std::sqrt(res.sigma / n);
    const double cutoff = res.mu + 3 * res.sigma;
    for (std::size_t i = 0; i < res.scores.size(); ++i)
        if (res.scores[i].score >= cutoff) res.kept.push_back(i);
    if (res.kept.empty()) {
        res.fallback = true;
        std::size_t best = 0;
        for (std::size_t i = 1; i < res.scores.size(); ++i)
            if (res.scores[i].score > res.scores[best].score) best = i;
        res.kept.push_back(best);
    }
    return res;
}

// ---- full genotype assembly ----

struct DecodeOptions {
    std::string cell_mode = "topk";     // "argmax" (every edge) | "topk"
    int K = 2;
    bool use_gamma = true;              // rank edges with gamma when available
    std::string network_mode = "full";  // "full" | "viterbi" | "multipath"
};

template <typename T>
Genotype decode_genotype(const Topology& topo, const ArchParams<T>& arch,
                         const DecodeOptions& opt) {
    auto decode_cell = [&](const std::vector<std::vector<T>>& rows,
                           const std::vector<T>& gamma) {
        if (opt.cell_mode == "argmax") {
            std::vector<GenotypeEdge> out;
            for (std::size_t e = 0; e < rows.size(); ++e)
                out.push_back({static_cast<int>(e),
                               decode_edge_argmax(rows[e], topo.space.ops)});
            return out;
        }
        if (opt.cell_mode != "topk")
            throw std::invalid_argument("unknown cell decode mode '" + opt.cell_mode + "'");
        return decode_cell_topk(topo.cell, rows, gamma, topo.space.ops, opt.K,
                                opt.use_gamma && topo.edge_norm, arch.theta_mode);
    };
    Genotype g;
    g.topo = topo;
    g.normal_edges = decode_cell(arch.alpha_normal, arch.gamma_normal);
    g.reduce_edges = decode_cell(arch.alpha_reduce, arch.gamma_reduce);

    const auto& net = topo.network;
    if (opt.network_mode == "full") {
        for (int i = 0; i < static_cast<int>(net.nodes.size()); ++i) g.kept_nodes.push_back(i);
        for (int e = 0; e < static_cast<int>(net.edges.size()); ++e)
            g.kept_net_edges.push_back(e);
    } else {
        std::vector<std::vector<int>> kept_paths;
        if (opt.network_mode == "viterbi") {
            kept_paths.push_back(viterbi_best_path(arch.beta, net).path);
        } else if (opt.network_mode == "multipath") {
            const auto res = multipath_decode(arch.beta, net);
            for (std::size_t i : res.kept) kept_paths.push_back(res.scores[i].path);
        } else {
            throw std::invalid_argument("unknown network decode mode '" + opt.network_mode +
                                        "'");
        }
        std::set<int> nodes, edges;
        for (const auto& p : kept_paths) {
            for (int v : p) nodes.insert(v);
            for (std::size_t i = 0; i + 1 < p.size(); ++i)
                edges.insert(net.edge_index(p[i], p[i + 1]));
        }
        g.kept_nodes.assign(nodes.begin(), nodes.end());
        g.kept_net_edges.assign(edges.begin(), edges.end());
        g.paths = kept_paths;
    }
    g.validate();
    return g;
}

}  // namespace segnas
