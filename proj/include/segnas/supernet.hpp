#pragma once

#include <memory>
#include <random>

#include "segnas/arch_params.hpp"
#include "segnas/genotype.hpp"
#include "segnas/ops.hpp"
#include "segnas/search_space.hpp"
#include "segnas/tape.hpp"

namespace segnas {

enum class RunMode { search, eval };

// ---- relaxation primitives ----

// Uniform choice of ceil(C/K) channel indices without replacement, sorted.
inline std::vector<int> sample_channel_mask(int C, int K, std::mt19937_64& rng) {
    if (K < 1) throw std::invalid_argument("partial channel K must be >= 1");
    if (K > C)
        throw std::invalid_argument("partial channel K=" + std::to_string(K) +
                                    " exceeds channel count " + std::to_string(C));
    const int keep = (C + K - 1) / K;
    std::vector<int> all(C);
    for (int i = 0; i < C; ++i) all[i] = i;
    for (int i = 0; i < keep; ++i) {
        std::uniform_int_distribution<int> d(i, C - 1);
        std::swap(all[i], all[d(rng)]);
    }
    std::vector<int> mask(all.begin(), all.begin() + keep);
    std::sort(mask.begin(), mask.end());
    return mask;
}

// First ceil(C/K) channels; used in eval mode where no sampling happens.
inline std::vector<int> fixed_channel_mask(int C, int K) {
    if (K < 1 || K > C) throw std::invalid_argument("invalid partial channel K");
    const int keep = (C + K - 1) / K;
    std::vector<int> mask(keep);
    for (int i = 0; i < keep; ++i) mask[i] = i;
    return mask;
}

// Weighted sum over candidate op outputs. `weights` is a 1-d tape ref holding
// simplex probabilities (theta) or softmaxed alpha; both routes are
// differentiable w.r.t. x, the op weights, and the architecture logits.
template <typename T>
typename Tape<T>::Ref mixed_op_forward(Tape<T>& tape, typename Tape<T>::Ref x,
                                       typename Tape<T>::Ref weights,
                                       const std::vector<OpKind>& ops, int stride,
                                       Binder<T>& bind, const std::string& prefix) {
    if (tape.value(weights).numel() != ops.size())
        throw std::invalid_argument("mixed op: weight vector length " +
                                    std::to_string(tape.value(weights).numel()) +
                                    " != op count " + std::to_string(ops.size()));
    std::vector<typename Tape<T>::Ref> terms;
    for (std::size_t o = 0; o < ops.size(); ++o) {
        auto y = apply_op(tape, ops[o], x, stride, bind, prefix + "." + op_name(ops[o]));
        terms.push_back(tape.scale_by_elem(y, weights, static_cast<int>(o)));
    }
    return tape.add_n(terms);
}

// Partial channel connection: the mixed op runs on a masked channel subset,
// the complement bypasses unchanged (subsampled when stride > 1). K=1 reduces
// exactly to mixed_op_forward.
template <typename T>
typename Tape<T>::Ref partial_channel_forward(Tape<T>& tape, typename Tape<T>::Ref x,
                                              typename Tape<T>::Ref weights,
                                              const std::vector<OpKind>& ops, int K,
                                              const std::vector<int>& mask, int stride,
                                              Binder<T>& bind, const std::string& prefix) {
    if (K == 1) return mixed_op_forward(tape, x, weights, ops, stride, bind, prefix);
    const auto& xv = tape.value(x);
    auto sub = tape.gather_channels(x, mask);
    auto processed = mixed_op_forward(tape, sub, weights, ops, stride, bind, prefix);
    auto base = x;
    if (stride > 1)
        base = tape.resize_nearest(x, same_out_dim(xv.dim(2), stride),
                                   same_out_dim(xv.dim(3), stride));
    return tape.merge_channels(base, processed, mask);
}

// Edge-normalized node aggregation: softmax over the incoming edges' gamma
// logits weighs the edge outputs. With gamma_subset < 0 this is a plain sum.
template <typename T>
typename Tape<T>::Ref node_forward(Tape<T>& tape,
                                   const std::vector<typename Tape<T>::Ref>& edge_outputs,
                                   typename Tape<T>::Ref gamma_subset) {
    if (edge_outputs.empty())
        throw std::invalid_argument("node_forward: empty incoming edge set");
    if (gamma_subset < 0) return tape.add_n(edge_outputs);
    auto w = tape.softmax1d(gamma_subset);
    std::vector<typename Tape<T>::Ref> terms;
    for (std::size_t k = 0; k < edge_outputs.size(); ++k)
        terms.push_back(tape.scale_by_elem(edge_outputs[k], w, static_cast<int>(k)));
    return tape.add_n(terms);
}

// ---- shared network plumbing ----

template <typename T>
typename Tape<T>::Ref stem_forward(Tape<T>& tape, Binder<T>& bind, typename Tape<T>::Ref x,
                                   int base_channels, int divisor) {
    const int in_ch = tape.value(x).dim(1);
    int stage = 0;
    auto block = [&](typename Tape<T>::Ref h, int ci, int co, int stride) {
        const std::string p = "stem." + std::to_string(stage++);
        auto w = bind(p + ".w", Shape{co, ci, 3, 3}, "kaiming");
        h = tape.conv2d(h, w, -1, ConvSpec{3, 3, stride, 1, 1});
        auto s = bind(p + ".norm.scale", Shape{co}, "ones");
        auto b = bind(p + ".norm.bias", Shape{co}, "zeros");
        return tape.channel_affine(h, s, b);
    };
    if (divisor == 1) return block(x, in_ch, base_channels, 1);
    auto h = block(x, in_ch, base_channels, 2);
    for (int d = divisor / 2; d > 1; d /= 2) h = block(tape.relu(h), base_channels, base_channels, 2);
    return h;
}

template <typename T>
typename Tape<T>::Ref align_input(Tape<T>& tape, Binder<T>& bind, typename Tape<T>::Ref x,
                                  int to_ch, int to_h, int to_w, const std::string& prefix) {
    const auto& xv = tape.value(x);
    auto h = x;
    if (xv.dim(2) != to_h || xv.dim(3) != to_w) h = tape.resize_nearest(h, to_h, to_w);
    if (xv.dim(1) != to_ch) {
        auto w = bind(prefix + ".align.w", Shape{to_ch, xv.dim(1), 1, 1}, "kaiming");
        h = tape.conv2d(h, w, -1, ConvSpec{1, 1, 1, 1, 1});
    }
    return h;
}

template <typename T>
typename Tape<T>::Ref head_forward(Tape<T>& tape, Binder<T>& bind, typename Tape<T>::Ref x,
                                   int out_h, int out_w) {
    const int C = tape.value(x).dim(1);
    auto h = tape.relu(x);
    auto w = bind("head.w", Shape{2, C, 1, 1}, "kaiming");
    auto b = bind("head.b", Shape{2}, "zeros");
    h = tape.conv2d(h, w, b, ConvSpec{1, 1, 1, 1, 1});
    return tape.resize_bilinear(h, out_h, out_w);
}

// Spatial size at each scale level, derived by repeated stride-2 reduction.
inline std::vector<std::pair<int, int>> level_sizes(int h, int w, int max_level) {
    std::vector<std::pair<int, int>> out{{h, w}};
    for (int l = 1; l <= max_level; ++l)
        out.push_back({same_out_dim(out.back().first, 2), same_out_dim(out.back().second, 2)});
    return out;
}

// ---- supernet ----

template <typename T>
struct ForwardResult {
    std::unique_ptr<Tape<T>> tape;
    std::unique_ptr<Binder<T>> bind;
    typename Tape<T>::Ref logits = -1;
    std::vector<typename Tape<T>::Ref> alpha_normal, alpha_reduce;
    typename Tape<T>::Ref gamma_normal = -1, gamma_reduce = -1, beta = -1;
};

template <typename T>
struct ArchGrads {
    std::vector<std::vector<T>> alpha_normal, alpha_reduce;
    std::vector<T> gamma_normal, gamma_reduce, beta;
};

template <typename T>
class SuperNet {
public:
    SuperNet(Topology topo, int pc_K, std::uint64_t seed, bool theta_mode = true)
        : topo_(std::move(topo)),
          pc_K_(pc_K),
          params_(seed),
          mask_rng_(seed ^ 0x9e3779b97f4a7c15ull),
          arch_(ArchParams<T>::make(topo_, theta_mode)) {}

    Topology& topology() { return topo_; }
    const Topology& topology() const { return topo_; }
    ArchParams<T>& arch() { return arch_; }
    ParamStore<T>& params() { return params_; }
    int pc_K() const { return pc_K_; }

    ForwardResult<T> forward(const Tensor<T>& batch, RunMode mode) {
        ForwardResult<T> fw;
        fw.tape = std::make_unique<Tape<T>>();
        fw.bind = std::make_unique<Binder<T>>(*fw.tape, params_);
        Tape<T>& tape = *fw.tape;
        Binder<T>& bind = *fw.bind;
        const auto& net = topo_.network;
        const int num_ops = static_cast<int>(topo_.space.ops.size());

        // architecture leaves
        auto make_rows = [&](const std::vector<std::vector<T>>& rows,
                             std::vector<typename Tape<T>::Ref>& out) {
            for (const auto& r : rows)
                out.push_back(tape.leaf(Tensor<T>(Shape{num_ops}, r), true, "alpha"));
        };
        make_rows(arch_.alpha_normal, fw.alpha_normal);
        make_rows(arch_.alpha_reduce, fw.alpha_reduce);
        fw.gamma_normal = tape.leaf(
            Tensor<T>(Shape{static_cast<int>(arch_.gamma_normal.size())}, arch_.gamma_normal),
            true, "gamma_normal");
        fw.gamma_reduce = tape.leaf(
            Tensor<T>(Shape{static_cast<int>(arch_.gamma_reduce.size())}, arch_.gamma_reduce),
            true, "gamma_reduce");
        fw.beta = tape.leaf(Tensor<T>(Shape{static_cast<int>(arch_.beta.size())}, arch_.beta),
                            true, "beta");

        // per-edge op weight vectors (theta used directly; alpha softmaxed)
        std::vector<typename Tape<T>::Ref> w_normal, w_reduce;
        for (auto r : fw.alpha_normal)
            w_normal.push_back(arch_.theta_mode ? r : tape.softmax1d(r));
        for (auto r : fw.alpha_reduce)
            w_reduce.push_back(arch_.theta_mode ? r : tape.softmax1d(r));

        const int in_h = batch.dim(2), in_w = batch.dim(3);
        auto x = tape.constant(batch, "input");
        auto stem = stem_forward(tape, bind, x, net.base_channels, net.stem_divisor);
        const int stem_h = tape.value(stem).dim(2), stem_w = tape.value(stem).dim(3);
        int max_level = 0;
        for (const auto& nd : net.nodes) max_level = std::max(max_level, nd.level);
        const auto sizes = level_sizes(stem_h, stem_w, max_level);

        std::vector<typename Tape<T>::Ref> node_out(net.nodes.size(), -1);
        const auto order = net.topo_order();
        for (int v : order) {
            const auto& nd = net.nodes[v];
            const std::string np = "net." + nd.name;
            if (nd.name == "in") {  // stem passthrough source (unet)
                node_out[v] = stem;
                continue;
            }
            // aggregated input: beta-weighted aligned predecessors, concat, 1x1
            const int in_level = nd.reduction ? nd.level - 1 : nd.level;
            const auto [th, tw] = sizes[in_level];
            typename Tape<T>::Ref agg;
            auto preds = net.preds(v);
            std::sort(preds.begin(), preds.end());
            if (preds.empty()) {
                agg = align_input(tape, bind, stem, nd.channels, th, tw, np + ".stem");
            } else {
                std::vector<int> eidx;
                std::vector<typename Tape<T>::Ref> aligned;
                for (int u : preds) {
                    eidx.push_back(net.edge_index(u, v));
                    aligned.push_back(align_input(tape, bind, node_out[u], nd.channels, th,
                                                  tw,
                                                  np + ".e" + std::to_string(eidx.back())));
                }
                auto bw = tape.softmax1d(tape.gather_elems(fw.beta, eidx));
                std::vector<typename Tape<T>::Ref> scaled;
                for (std::size_t k = 0; k < aligned.size(); ++k)
                    scaled.push_back(tape.scale_by_elem(aligned[k], bw, static_cast<int>(k)));
                auto cat = tape.concat_channels(scaled);
                auto w =
                    bind(np + ".pre.w",
                         Shape{nd.channels, static_cast<int>(aligned.size()) * nd.channels, 1, 1},
                         "kaiming");
                agg = tape.conv2d(cat, w, -1, ConvSpec{1, 1, 1, 1, 1});
            }
            // cell input slots: chain wires parent + grandparent, dense
            // topologies feed the aggregate to every slot
            std::vector<typename Tape<T>::Ref> slots(
                static_cast<std::size_t>(topo_.cell.num_input_nodes), agg);
            if (net.topology == "chain" && v >= 2 && topo_.cell.num_input_nodes >= 2)
                slots[1] = node_out[v - 2];

            node_out[v] = cell_forward(
                tape, bind, slots, nd.reduction, nd.reduction ? w_reduce : w_normal,
                nd.reduction ? fw.gamma_reduce : fw.gamma_normal, mode, nd.channels,
                np + (nd.reduction ? ".rcell" : ".ncell"));
        }
        fw.logits = head_forward(tape, bind, node_out[net.sink()], in_h, in_w);
        return fw;
    }

    ArchGrads<T> harvest_arch_grads(const ForwardResult<T>& fw) const {
        ArchGrads<T> g;
        for (auto r : fw.alpha_normal) g.alpha_normal.push_back(fw.tape->grad(r).values());
        for (auto r : fw.alpha_reduce) g.alpha_reduce.push_back(fw.tape->grad(r).values());
        g.gamma_normal = fw.tape->grad(fw.gamma_normal).values();
        g.gamma_reduce = fw.tape->grad(fw.gamma_reduce).values();
        g.beta = fw.tape->grad(fw.beta).values();
        return g;
    }

private:
    typename Tape<T>::Ref cell_forward(Tape<T>& tape, Binder<T>& bind,
                                       const std::vector<typename Tape<T>::Ref>& inputs,
                                       bool reduction,
                                       const std::vector<typename Tape<T>::Ref>& edge_w,
                                       typename Tape<T>::Ref gamma_leaf, RunMode mode,
                                       int out_channels, const std::string& prefix) {
        const auto& cell = topo_.cell;
        const auto& ops = topo_.space.ops;
        const int C = tape.value(inputs[0]).dim(1);
        std::vector<typename Tape<T>::Ref> node_val(cell.num_nodes(), -1);
        for (int i = 0; i < cell.num_input_nodes; ++i) node_val[i] = inputs[i];

        auto edge_out = [&](int e) {
            const auto& ce = cell.edges[e];
            const int stride = (reduction && ce.from < cell.num_input_nodes) ? 2 : 1;
            const std::string ep = prefix + ".e" + std::to_string(e);
            std::vector<int> mask = (mode == RunMode::search && pc_K_ > 1)
                                        ? sample_channel_mask(C, pc_K_, mask_rng_)
                                        : fixed_channel_mask(C, pc_K_);
            return partial_channel_forward(tape, node_val[ce.from], edge_w[e], ops, pc_K_,
                                           mask, stride, bind, ep);
        };

        std::vector<typename Tape<T>::Ref> block_outs;
        if (cell.style == "resnext") {
            for (std::size_t e = 0; e < cell.edges.size(); ++e)
                node_val[cell.edges[e].to] = edge_out(static_cast<int>(e));
            std::vector<typename Tape<T>::Ref> ends;
            for (int t = 0; t < cell.towers; ++t)
                ends.push_back(node_val[cell.tower_depth * (t + 1)]);
            auto summed = tape.add_n(ends);
            auto skip_in = inputs[0];
            if (reduction) {
                const auto& sv = tape.value(summed);
                skip_in = tape.resize_nearest(inputs[0], sv.dim(2), sv.dim(3));
            }
            block_outs.push_back(tape.add(summed, skip_in));
        } else {
            for (int j = 0; j < cell.num_blocks; ++j) {
                const int node = cell.num_input_nodes + j;
                const auto incoming = cell.edges_into(node);
                std::vector<typename Tape<T>::Ref> outs;
                for (int e : incoming) outs.push_back(edge_out(e));
                typename Tape<T>::Ref gsub = -1;
                if (topo_.edge_norm) gsub = tape.gather_elems(gamma_leaf, incoming);
                node_val[node] = node_forward(tape, outs, gsub);
                block_outs.push_back(node_val[node]);
            }
        }
        auto cat = block_outs.size() == 1 ? block_outs[0] : tape.concat_channels(block_outs);
        auto w = bind(prefix + ".out.w",
                      Shape{out_channels, tape.value(cat).dim(1), 1, 1}, "kaiming");
        return tape.conv2d(cat, w, -1, ConvSpec{1, 1, 1, 1, 1});
    }

    Topology topo_;
    int pc_K_;
    ParamStore<T> params_;
    std::mt19937_64 mask_rng_;
    ArchParams<T> arch_;
};

// ---- discrete (decoded) network ----

template <typename T>
class DiscreteNet {
public:
    DiscreteNet(Genotype genotype, std::uint64_t seed)
        : geno_(std::move(genotype)), params_(seed) {
        geno_.validate();
    }

    const Genotype& genotype() const { return geno_; }
    ParamStore<T>& params() { return params_; }

    ForwardResult<T> forward(const Tensor<T>& batch) {
        ForwardResult<T> fw;
        fw.tape = std::make_unique<Tape<T>>();
        fw.bind = std::make_unique<Binder<T>>(*fw.tape, params_);
        Tape<T>& tape = *fw.tape;
        Binder<T>& bind = *fw.bind;
        const auto& net = geno_.topo.network;

        const int in_h = batch.dim(2), in_w = batch.dim(3);
        auto x = tape.constant(batch, "input");
        auto stem = stem_forward(tape, bind, x, net.base_channels, net.stem_divisor);
        int max_level = 0;
        for (const auto& nd : net.nodes) max_level = std::max(max_level, nd.level);
        const auto sizes =
            level_sizes(tape.value(stem).dim(2), tape.value(stem).dim(3), max_level);

        std::vector<typename Tape<T>::Ref> node_out(net.nodes.size(), -1);
        for (int v : net.topo_order()) {
            if (!geno_.node_kept(v)) continue;
            const auto& nd = net.nodes[v];
            const std::string np = "net." + nd.name;
            if (nd.name == "in") {
                node_out[v] = stem;
                continue;
            }
            const int in_level = nd.reduction ? nd.level - 1 : nd.level;
            const auto [th, tw] = sizes[in_level];
            std::vector<typename Tape<T>::Ref> aligned;
            auto preds = net.preds(v);
            std::sort(preds.begin(), preds.end());
            for (int u : preds) {
                const int e = net.edge_index(u, v);
                if (!geno_.net_edge_kept(e)) continue;
                aligned.push_back(align_input(tape, bind, node_out[u], nd.channels, th, tw,
                                              np + ".e" + std::to_string(e)));
            }
            typename Tape<T>::Ref agg;
            if (aligned.empty()) {
                agg = align_input(tape, bind, stem, nd.channels, th, tw, np + ".stem");
            } else {
                auto cat = aligned.size() == 1 ? aligned[0] : tape.concat_channels(aligned);
                auto w = bind(np + ".pre.w",
                              Shape{nd.channels, tape.value(cat).dim(1), 1, 1}, "kaiming");
                agg = tape.conv2d(cat, w, -1, ConvSpec{1, 1, 1, 1, 1});
            }
            std::vector<typename Tape<T>::Ref> slots(
                static_cast<std::size_t>(geno_.topo.cell.num_input_nodes), agg);
            if (net.topology == "chain" && v >= 2 && geno_.topo.cell.num_input_nodes >= 2 &&
                node_out[v - 2] >= 0)
                slots[1] = node_out[v - 2];
            node_out[v] = cell_forward(tape, bind, slots, nd.reduction, nd.channels,
                                       np + (nd.reduction ? ".rcell" : ".ncell"));
        }
        fw.logits = head_forward(tape, bind, node_out[net.sink()], in_h, in_w);
        return fw;
    }

private:
    typename Tape<T>::Ref cell_forward(Tape<T>& tape, Binder<T>& bind,
                                       const std::vector<typename Tape<T>::Ref>& inputs,
                                       bool reduction, int out_channels,
                                       const std::string& prefix) {
        const auto& cell = geno_.topo.cell;
        const auto& kept = geno_.cell_edges(reduction);
        std::vector<typename Tape<T>::Ref> node_val(cell.num_nodes(), -1);
        for (int i = 0; i < cell.num_input_nodes; ++i) node_val[i] = inputs[i];

        auto edge_for = [&](int e) -> const GenotypeEdge* {
            for (const auto& ge : kept)
                if (ge.edge_index == e) return &ge;
            return nullptr;
        };

        std::vector<typename Tape<T>::Ref> block_outs;
        auto run_edge = [&](int e, const GenotypeEdge& ge) {
            const auto& ce = cell.edges[e];
            const int stride = (reduction && ce.from < cell.num_input_nodes) ? 2 : 1;
            return apply_op(tape, ge.op, node_val[ce.from], stride, bind,
                            prefix + ".e" + std::to_string(e) + "." + op_name(ge.op));
        };
        if (cell.style == "resnext") {
            for (std::size_t e = 0; e < cell.edges.size(); ++e) {
                const auto* ge = edge_for(static_cast<int>(e));
                if (!ge)
                    throw std::invalid_argument("resnext genotype must keep every edge");
                node_val[cell.edges[e].to] = run_edge(static_cast<int>(e), *ge);
            }
            std::vector<typename Tape<T>::Ref> ends;
            for (int t = 0; t < cell.towers; ++t)
                ends.push_back(node_val[cell.tower_depth * (t + 1)]);
            auto summed = tape.add_n(ends);
            auto skip_in = inputs[0];
            if (reduction) {
                const auto& sv = tape.value(summed);
                skip_in = tape.resize_nearest(inputs[0], sv.dim(2), sv.dim(3));
            }
            block_outs.push_back(tape.add(summed, skip_in));
        } else {
            for (int j = 0; j < cell.num_blocks; ++j) {
                const int node = cell.num_input_nodes + j;
                std::vector<typename Tape<T>::Ref> outs;
                for (int e : cell.edges_into(node))
                    if (const auto* ge = edge_for(e)) outs.push_back(run_edge(e, *ge));
                node_val[node] = tape.add_n(outs);
                block_outs.push_back(node_val[node]);
            }
        }
        auto cat = block_outs.size() == 1 ? block_outs[0] : tape.concat_channels(block_outs);
        auto w = bind(prefix + ".out.w",
                      Shape{out_channels, tape.value(cat).dim(1), 1, 1}, "kaiming");
        return tape.conv2d(cat, w, -1, ConvSpec{1, 1, 1, 1, 1});
    }

    Genotype geno_;
    ParamStore<T> params_;
};

}  // namespace segnas
