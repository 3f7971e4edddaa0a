#pragma once

#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "segnas/search_space.hpp"

namespace segnas {

struct GenotypeEdge {
    int edge_index = 0;  // index into CellTemplate::edges
    OpKind op = OpKind::skip;
};

// A decoded discrete architecture: chosen op per kept cell edge (normal and
// reduction variants), plus the kept sub-DAG of the network template.
struct Genotype {
    Topology topo;
    std::vector<GenotypeEdge> normal_edges;
    std::vector<GenotypeEdge> reduce_edges;
    std::vector<int> kept_nodes;                // network node ids
    std::vector<int> kept_net_edges;            // indices into network.edges
    std::vector<std::vector<int>> paths;        // kept source->sink paths (may be empty)

    const std::vector<GenotypeEdge>& cell_edges(bool reduction) const {
        return reduction ? reduce_edges : normal_edges;
    }

    bool node_kept(int v) const {
        return std::find(kept_nodes.begin(), kept_nodes.end(), v) != kept_nodes.end();
    }
    bool net_edge_kept(int e) const {
        return std::find(kept_net_edges.begin(), kept_net_edges.end(), e) !=
               kept_net_edges.end();
    }

    // Full-network genotype with the given per-edge ops on both cell types.
    static Genotype full_network(const Topology& topo, std::vector<GenotypeEdge> normal,
                                 std::vector<GenotypeEdge> reduce) {
        Genotype g;
        g.topo = topo;
        g.normal_edges = std::move(normal);
        g.reduce_edges = std::move(reduce);
        for (int i = 0; i < static_cast<int>(topo.network.nodes.size()); ++i)
            g.kept_nodes.push_back(i);
        for (int e = 0; e < static_cast<int>(topo.network.edges.size()); ++e)
            g.kept_net_edges.push_back(e);
        return g;
    }

    void validate() const {
        const auto& cell = topo.cell;
        auto check_cell = [&](const std::vector<GenotypeEdge>& edges) {
            std::set<int> seen;
            for (const auto& ge : edges) {
                if (ge.edge_index < 0 || ge.edge_index >= static_cast<int>(cell.edges.size()))
                    throw std::invalid_argument("genotype references unknown cell edge " +
                                                std::to_string(ge.edge_index));
                if (!seen.insert(ge.edge_index).second)
                    throw std::invalid_argument("genotype keeps cell edge " +
                                                std::to_string(ge.edge_index) + " twice");
                topo.space.index_of(ge.op);  // must belong to the space
            }
            // every block retains at least one input edge
            for (int j = 0; j < cell.num_blocks; ++j) {
                const int node = cell.num_input_nodes + j;
                bool has_input = false;
                for (const auto& ge : edges)
                    if (cell.edges[ge.edge_index].to == node) has_input = true;
                if (!has_input)
                    throw std::invalid_argument("block " + std::to_string(j) +
                                                " has no kept input edge");
            }
        };
        check_cell(normal_edges);
        check_cell(reduce_edges);

        // kept network part must be a connected source->sink sub-DAG
        const auto& net = topo.network;
        if (!node_kept(net.source()) || !node_kept(net.sink()))
            throw std::invalid_argument("genotype network part must keep source and sink");
        for (int e : kept_net_edges) {
            if (e < 0 || e >= static_cast<int>(net.edges.size()))
                throw std::invalid_argument("genotype references unknown network edge");
            if (!node_kept(net.edges[e].from) || !node_kept(net.edges[e].to))
                throw std::invalid_argument("kept network edge touches a dropped node");
        }
        for (int v : kept_nodes) {
            if (v != net.source()) {
                bool has_in = false;
                for (int e : kept_net_edges)
                    if (net.edges[e].to == v) has_in = true;
                if (!has_in)
                    throw std::invalid_argument("kept node " + net.nodes[v].name +
                                                " has no kept input edge");
            }
            if (v != net.sink()) {
                bool has_out = false;
                for (int e : kept_net_edges)
                    if (net.edges[e].from == v) has_out = true;
                if (!has_out)
                    throw std::invalid_argument("kept node " + net.nodes[v].name +
                                                " has no kept output edge");
            }
        }
    }
};

inline nlohmann::json to_json(const Genotype& g) {
    nlohmann::json j;
    j["topology"] = to_json(g.topo);
    auto dump_edges = [](const std::vector<GenotypeEdge>& edges) {
        nlohmann::json arr = nlohmann::json::array();
        for (const auto& e : edges)
            arr.push_back({{"edge", e.edge_index}, {"op", op_name(e.op)}});
        return arr;
    };
    j["normal_edges"] = dump_edges(g.normal_edges);
    j["reduce_edges"] = dump_edges(g.reduce_edges);
    j["kept_nodes"] = g.kept_nodes;
    j["kept_net_edges"] = g.kept_net_edges;
    j["paths"] = g.paths;
    return j;
}

inline Genotype genotype_from_json(const nlohmann::json& j) {
    Genotype g;
    g.topo = topology_from_json(j.at("topology"));
    auto load_edges = [](const nlohmann::json& arr) {
        std::vector<GenotypeEdge> out;
        for (const auto& e : arr)
            out.push_back({e.at("edge").get<int>(), op_from_name(e.at("op"))});
        return out;
    };
    g.normal_edges = load_edges(j.at("normal_edges"));
    g.reduce_edges = load_edges(j.at("reduce_edges"));
    g.kept_nodes = j.at("kept_nodes").get<std::vector<int>>();
    g.kept_net_edges = j.at("kept_net_edges").get<std::vector<int>>();
    g.paths = j.at("paths").get<std::vector<std::vector<int>>>();
    return g;
}

inline void save_genotype(const Genotype& g, const std::string& path) {
    std::ofstream f(path);
    if (!f) throw std::runtime_error("cannot write " + path);
    f << to_json(g).dump(2) << "\n";
}

inline Genotype load_genotype(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw std::runtime_error("cannot read genotype " + path);
    nlohmann::json j;
    f >> j;
    return genotype_from_json(j);
}

// ---- DOT export ----

inline std::string cell_dot(const Genotype& g, bool reduction) {
    const auto& cell = g.topo.cell;
    std::ostringstream out;
    out << "digraph cell_" << (reduction ? "reduce" : "normal") << " {\n";
    out << "  rankdir=LR;\n";
    for (int i = 0; i < cell.num_input_nodes; ++i)
        out << "  in" << i << " [shape=box];\n";
    for (int j = 0; j < cell.num_blocks; ++j) out << "  b" << j << " [shape=ellipse];\n";
    auto node_name = [&](int id) {
        return id < cell.num_input_nodes ? "in" + std::to_string(id)
                                         : "b" + std::to_string(id - cell.num_input_nodes);
    };
    for (const auto& ge : g.cell_edges(reduction)) {
        const auto& e = cell.edges[ge.edge_index];
        out << "  " << node_name(e.from) << " -> " << node_name(e.to) << " [label=\""
            << op_name(ge.op) << "\"];\n";
    }
    out << "}\n";
    return out.str();
}

inline std::string network_dot(const Genotype& g) {
    const auto& net = g.topo.network;
    std::ostringstream out;
    out << "digraph network {\n  rankdir=LR;\n";
    for (int v : g.kept_nodes)
        out << "  " << net.nodes[v].name << " [shape="
            << (net.nodes[v].reduction ? "box" : "ellipse") << "];\n";
    for (int e : g.kept_net_edges)
        out << "  " << net.nodes[net.edges[e].from].name << " -> "
            << net.nodes[net.edges[e].to].name << ";\n";
    out << "}\n";
    return out.str();
}

}  // namespace segnas
