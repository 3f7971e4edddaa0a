#pragma once

#include <algorithm>
#include <map>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "segnas/ops.hpp"

namespace segnas {

// ---- operation space ----

struct SearchSpace {
    std::string name;
    std::vector<OpKind> ops;  // order is stable; it indexes alpha rows

    int index_of(OpKind k) const {
        for (std::size_t i = 0; i < ops.size(); ++i)
            if (ops[i] == k) return static_cast<int>(i);
        throw std::invalid_argument("op '" + op_name(k) + "' not in space '" + name + "'");
    }
};

inline SearchSpace build_operation_space(const std::string& kind,
                                         const std::vector<std::string>& custom = {}) {
    SearchSpace s;
    if (kind == "base") {
        s.name = "base";
        s.ops = {OpKind::dilconv2d_3x3, OpKind::dilconv2d_5x5, OpKind::sepconv2d_3x3,
                 OpKind::sepconv2d_5x5, OpKind::avgpool3x3,    OpKind::maxpool3x3,
                 OpKind::skip,          OpKind::cut};
    } else if (kind == "large") {
        s.name = "large";
        s.ops = {OpKind::conv2d_1,      OpKind::conv2d_2,      OpKind::conv2d_3,
                 OpKind::depthconv2d_1, OpKind::depthconv2d_2, OpKind::depthconv2d_3,
                 OpKind::splitconv2d_1, OpKind::splitconv2d_2, OpKind::splitconv2d_3,
                 OpKind::skip,          OpKind::cut};
    } else if (kind == "custom") {
        if (custom.empty()) throw std::invalid_argument("custom space must be non-empty");
        s.name = "custom";
        std::set<std::string> seen;
        for (const auto& n : custom) {
            if (!seen.insert(n).second)
                throw std::invalid_argument("duplicate op '" + n + "' in custom space");
            s.ops.push_back(op_from_name(n));
        }
    } else {
        throw std::invalid_argument("unknown space kind '" + kind +
                                    "' (valid: base, large, custom)");
    }
    return s;
}

// ---- cell template ----

struct CellEdge {
    int from = 0;  // node id within the cell (< num_input_nodes means cell input)
    int to = 0;
};

struct CellTemplate {
    std::string style;  // "darts" | "resnext"
    int num_blocks = 4;
    int num_input_nodes = 2;
    std::vector<CellEdge> edges;
    int towers = 0;       // resnext only
    int tower_depth = 0;  // resnext only
    bool reduction = false;

    int num_nodes() const { return num_input_nodes + num_blocks; }

    std::vector<int> edges_into(int block) const {
        std::vector<int> out;
        for (std::size_t e = 0; e < edges.size(); ++e)
            if (edges[e].to == block) out.push_back(static_cast<int>(e));
        return out;
    }
};

inline CellTemplate build_cell_template(const std::string& style, int num_blocks,
                                        int num_input_nodes, int towers = 4,
                                        int tower_depth = 2) {
    if (num_blocks < 1) throw std::invalid_argument("num_blocks must be >= 1");
    CellTemplate c;
    c.style = style;
    if (style == "darts") {
        c.num_blocks = num_blocks;
        c.num_input_nodes = num_input_nodes;
        for (int j = 0; j < num_blocks; ++j) {
            const int node = num_input_nodes + j;
            for (int i = 0; i < node; ++i) c.edges.push_back({i, node});
        }
    } else if (style == "resnext") {
        // T towers of depth D, single-input chain per tower; block ids are laid
        // out tower-major after the single cell input (node 0).
        c.num_input_nodes = 1;
        c.towers = towers;
        c.tower_depth = tower_depth;
        c.num_blocks = towers * tower_depth;
        for (int t = 0; t < towers; ++t)
            for (int d = 0; d < tower_depth; ++d) {
                const int node = 1 + t * tower_depth + d;
                const int from = (d == 0) ? 0 : node - 1;
                c.edges.push_back({from, node});
            }
    } else {
        throw std::invalid_argument("unknown cell style '" + style + "'");
    }
    return c;
}

// ---- network template ----

struct NetNode {
    std::string name;
    int level = 0;  // spatial scale divisor is 2^level relative to the stem output
    int channels = 16;
    bool reduction = false;
};

struct NetEdge {
    int from = 0;
    int to = 0;
};

struct NetworkTemplate {
    std::string topology;  // "unet" | "unetpp" | "chain"
    std::vector<NetNode> nodes;
    std::vector<NetEdge> edges;
    int stem_divisor = 4;  // stem reduces input resolution by this factor
    int base_channels = 16;

    std::vector<int> preds(int node) const {
        std::vector<int> out;
        for (const auto& e : edges)
            if (e.to == node) out.push_back(e.from);
        return out;
    }
    std::vector<int> succs(int node) const {
        std::vector<int> out;
        for (const auto& e : edges)
            if (e.from == node) out.push_back(e.to);
        return out;
    }
    int source() const {
        for (int i = 0; i < static_cast<int>(nodes.size()); ++i)
            if (preds(i).empty()) return i;
        throw std::logic_error("network has no source");
    }
    int sink() const {
        for (int i = 0; i < static_cast<int>(nodes.size()); ++i)
            if (succs(i).empty()) return i;
        throw std::logic_error("network has no sink");
    }
    int edge_index(int u, int v) const {
        for (std::size_t e = 0; e < edges.size(); ++e)
            if (edges[e].from == u && edges[e].to == v) return static_cast<int>(e);
        throw std::invalid_argument("no network edge " + std::to_string(u) + "->" +
                                    std::to_string(v));
    }

    // Kahn topological sort; throws if the edge set has a cycle.
    std::vector<int> topo_order() const {
        std::vector<int> indeg(nodes.size(), 0);
        for (const auto& e : edges) ++indeg[e.to];
        std::vector<int> order, ready;
        for (int i = 0; i < static_cast<int>(nodes.size()); ++i)
            if (indeg[i] == 0) ready.push_back(i);
        while (!ready.empty()) {
            std::sort(ready.begin(), ready.end());
            int u = ready.front();
            ready.erase(ready.begin());
            order.push_back(u);
            for (int v : succs(u))
                if (--indeg[v] == 0) ready.push_back(v);
        }
        if (order.size() != nodes.size()) throw std::logic_error("network graph has a cycle");
        return order;
    }

    void validate() const {
        topo_order();
        int sources = 0, sinks = 0;
        for (int i = 0; i < static_cast<int>(nodes.size()); ++i) {
            if (preds(i).empty()) ++sources;
            if (succs(i).empty()) ++sinks;
        }
        if (sources != 1 || sinks != 1)
            throw std::logic_error("network must have exactly one source and one sink");
    }
};

inline NetworkTemplate build_network_template(const std::string& topology, int depth,
                                              int base_channels, int stem_divisor = 4) {
    if (depth < 2) throw std::invalid_argument("network depth must be >= 2");
    NetworkTemplate net;
    net.topology = topology;
    net.base_channels = base_channels;
    net.stem_divisor = stem_divisor;
    auto ch = [&](int level) { return base_channels << level; };
    if (topology == "chain") {
        for (int i = 0; i < depth; ++i)
            net.nodes.push_back({"n" + std::to_string(i), 0, base_channels, false});
        for (int i = 0; i + 1 < depth; ++i) net.edges.push_back({i, i + 1});
    } else if (topology == "unet") {
        // source (stem passthrough), depth encoder reduction cells, one
        // bottleneck, depth decoder normal cells with equal-scale skips
        net.nodes.push_back({"in", 0, base_channels, false});
        std::vector<int> enc;
        for (int i = 0; i < depth; ++i) {
            net.nodes.push_back({"enc" + std::to_string(i), i + 1, ch(i + 1), true});
            enc.push_back(static_cast<int>(net.nodes.size()) - 1);
            net.edges.push_back({enc[i] - 1, enc[i]});
        }
        net.nodes.push_back({"bottleneck", depth, ch(depth), false});
        const int bott = static_cast<int>(net.nodes.size()) - 1;
        net.edges.push_back({enc.back(), bott});
        int prev = bott;
        for (int i = depth - 1; i >= 0; --i) {
            net.nodes.push_back({"dec" + std::to_string(i), i, ch(i), false});
            const int dec = static_cast<int>(net.nodes.size()) - 1;
            net.edges.push_back({prev, dec});
            // equal-scale skip: encoder output at level i (the stem for i==0)
            net.edges.push_back({i == 0 ? 0 : enc[i - 1], dec});
            prev = dec;
        }
    } else if (topology == "unetpp") {
        // triangular grid: node (d, k) exists for d + k <= depth - 1
        std::map<std::pair<int, int>, int> id;
        for (int d = 0; d < depth; ++d)
            for (int k = 0; k + d < depth; ++k) {
                id[{d, k}] = static_cast<int>(net.nodes.size());
                net.nodes.push_back({"x" + std::to_string(d) + "_" + std::to_string(k), d,
                                     ch(d), d > 0 && k == 0});
            }
        for (int d = 0; d < depth; ++d)
            for (int k = 0; k + d < depth; ++k) {
                if (d > 0 && k == 0) net.edges.push_back({id[{d - 1, 0}], id[{d, 0}]});
                if (k > 0) {
                    for (int k2 = 0; k2 < k; ++k2)
                        net.edges.push_back({id[{d, k2}], id[{d, k}]});
                    net.edges.push_back({id[{d + 1, k - 1}], id[{d, k}]});
                }
            }
    } else {
        throw std::invalid_argument("unknown topology '" + topology +
                                    "' (valid: unet, unetpp, chain)");
    }
    net.validate();
    return net;
}

// ---- path enumeration ----

inline void enumerate_paths_rec(const NetworkTemplate& net, int node, int sink,
                                std::vector<int>& cur, std::vector<std::vector<int>>& out,
                                std::size_t cap) {
    cur.push_back(node);
    if (node == sink) {
        out.push_back(cur);
    } else {
        auto nxt = net.succs(node);
        std::sort(nxt.begin(), nxt.end());
        for (int v : nxt) enumerate_paths_rec(net, v, sink, cur, out, cap);
    }
    if (out.size() > cap)
        throw std::runtime_error("path count exceeds cap " + std::to_string(cap) +
                                 "; use a smaller topology");
    cur.pop_back();
}

inline std::vector<std::vector<int>> enumerate_paths(const NetworkTemplate& net,
                                                     std::size_t cap = 10000) {
    net.validate();
    std::vector<std::vector<int>> out;
    std::vector<int> cur;
    enumerate_paths_rec(net, net.source(), net.sink(), cur, out, cap);
    return out;
}

// ---- topology bundle ----

struct Topology {
    std::string name;
    CellTemplate cell;
    CellTemplate reduction_cell;  // same edges, used at reduction nodes
    NetworkTemplate network;
    SearchSpace space;
    bool edge_norm = true;
};

// ---- JSON serialization ----

inline nlohmann::json to_json(const SearchSpace& s) {
    nlohmann::json j;
    j["name"] = s.name;
    for (OpKind k : s.ops) j["ops"].push_back(op_name(k));
    return j;
}

inline SearchSpace space_from_json(const nlohmann::json& j) {
    SearchSpace s;
    s.name = j.at("name");
    for (const auto& n : j.at("ops")) s.ops.push_back(op_from_name(n));
    return s;
}

inline nlohmann::json to_json(const CellTemplate& c) {
    nlohmann::json j;
    j["style"] = c.style;
    j["num_blocks"] = c.num_blocks;
    j["num_input_nodes"] = c.num_input_nodes;
    j["towers"] = c.towers;
    j["tower_depth"] = c.tower_depth;
    j["reduction"] = c.reduction;
    for (const auto& e : c.edges) j["edges"].push_back({e.from, e.to});
    return j;
}

inline CellTemplate cell_from_json(const nlohmann::json& j) {
    CellTemplate c;
    c.style = j.at("style");
    c.num_blocks = j.at("num_blocks");
    c.num_input_nodes = j.at("num_input_nodes");
    c.towers = j.at("towers");
    c.tower_depth = j.at("tower_depth");
    c.reduction = j.at("reduction");
    for (const auto& e : j.at("edges")) c.edges.push_back({e.at(0), e.at(1)});
    return c;
}

inline nlohmann::json to_json(const NetworkTemplate& n) {
    nlohmann::json j;
    j["topology"] = n.topology;
    j["stem_divisor"] = n.stem_divisor;
    j["base_channels"] = n.base_channels;
    for (const auto& nd : n.nodes)
        j["nodes"].push_back({{"name", nd.name},
                              {"level", nd.level},
                              {"channels", nd.channels},
                              {"reduction", nd.reduction}});
    for (const auto& e : n.edges) j["edges"].push_back({e.from, e.to});
    return j;
}

inline NetworkTemplate network_from_json(const nlohmann::json& j) {
    NetworkTemplate n;
    n.topology = j.at("topology");
    n.stem_divisor = j.at("stem_divisor");
    n.base_channels = j.at("base_channels");
    for (const auto& nd : j.at("nodes"))
        n.nodes.push_back({nd.at("name"), nd.at("level"), nd.at("channels"), nd.at("reduction")});
    for (const auto& e : j.at("edges")) n.edges.push_back({e.at(0), e.at(1)});
    return n;
}

inline nlohmann::json to_json(const Topology& t) {
    nlohmann::json j;
    j["name"] = t.name;
    j["cell"] = to_json(t.cell);
    j["reduction_cell"] = to_json(t.reduction_cell);
    j["network"] = to_json(t.network);
    j["space"] = to_json(t.space);
    j["edge_norm"] = t.edge_norm;
    return j;
}

inline Topology topology_from_json(const nlohmann::json& j) {
    Topology t;
    t.name = j.at("name");
    t.cell = cell_from_json(j.at("cell"));
    t.reduction_cell = cell_from_json(j.at("reduction_cell"));
    t.network = network_from_json(j.at("network"));
    t.space = space_from_json(j.at("space"));
    t.edge_norm = j.at("edge_norm");
    return t;
}

// Named topology presets matching the explored experiment settings.
inline Topology make_topology(const std::string& name, const std::string& space_kind,
                              int depth, int base_channels, bool edge_norm,
                              int stem_divisor = 4) {
    Topology t;
    t.name = name;
    t.space = build_operation_space(space_kind);
    t.edge_norm = edge_norm;
    if (name == "resnext-unet") {
        if (edge_norm)
            throw std::invalid_argument(
                "resnext-unet does not support edge normalization (blocks have a single "
                "input edge)");
        t.cell = build_cell_template("resnext", 1, 1);
        t.network = build_network_template("unet", depth, base_channels, stem_divisor);
    } else if (name == "darts-unet") {
        t.cell = build_cell_template("darts", 4, 2);
        t.network = build_network_template("unet", depth, base_channels, stem_divisor);
    } else if (name == "darts-unetpp") {
        t.cell = build_cell_template("darts", 4, 2);
        t.network = build_network_template("unetpp", depth, base_channels, stem_divisor);
    } else if (name == "chain") {
        t.cell = build_cell_template("darts", 4, 2);
        t.network = build_network_template("chain", depth, base_channels, stem_divisor);
    } else {
        throw std::invalid_argument(
            "unknown topology '" + name +
            "' (valid: resnext-unet, darts-unet, darts-unetpp, chain)");
    }
    t.reduction_cell = t.cell;
    t.reduction_cell.reduction = true;
    return t;
}

}  // namespace segnas
