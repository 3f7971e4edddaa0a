#include <catch2/catch_amalgamated.hpp>

#include <random>
#include <set>

#include "segnas/decoder.hpp"
#include "segnas/supernet.hpp"

using namespace segnas;

namespace {

NetworkTemplate diamond() {
    NetworkTemplate n;
    n.topology = "chain";
    n.nodes = {{"s", 0, 16, false},
               {"a", 0, 16, false},
               {"b", 0, 16, false},
               {"t", 0, 16, false}};
    n.edges = {{0, 1}, {0, 2}, {1, 3}, {2, 3}};
    return n;
}

}  // namespace

TEST_CASE("per-edge argmax decode") {
    const std::vector<OpKind> ops{OpKind::skip, OpKind::conv2d_1, OpKind::cut};
    SECTION("plain argmax") {
        REQUIRE(decode_edge_argmax(std::vector<double>{0.1, 2.0, -1.0}, ops) ==
                OpKind::conv2d_1);
    }
    SECTION("all-equal row breaks toward the first op") {
        REQUIRE(decode_edge_argmax(std::vector<double>{0.5, 0.5, 0.5}, ops) == OpKind::skip);
    }
    SECTION("1000 random rows match a brute-force scan") {
        std::mt19937_64 rng(17);
        std::uniform_real_distribution<double> d(-3, 3);
        for (int it = 0; it < 1000; ++it) {
            std::vector<double> row(ops.size());
            for (double& v : row) v = d(rng);
            std::size_t best = 0;
            for (std::size_t o = 0; o < row.size(); ++o)
                if (row[o] > row[best]) best = o;
            REQUIRE(decode_edge_argmax(row, ops) == ops[best]);
        }
    }
    SECTION("constant shift never changes the decoded op") {
        std::mt19937_64 rng(18);
        std::uniform_real_distribution<double> d(-3, 3);
        for (int it = 0; it < 200; ++it) {
            std::vector<double> row(ops.size());
            for (double& v : row) v = d(rng);
            auto shifted = row;
            for (double& v : shifted) v += 11.25;
            REQUIRE(decode_edge_argmax(row, ops) == decode_edge_argmax(shifted, ops));
        }
    }
}

TEST_CASE("normalized per-edge decode") {
    const std::vector<OpKind> ops{OpKind::skip, OpKind::conv2d_1, OpKind::cut};
    SECTION("gamma cannot change the within-edge op choice") {
        std::mt19937_64 rng(19);
        std::uniform_real_distribution<double> d(-3, 3);
        std::uniform_real_distribution<double> gw(0.01, 1.0);
        for (int it = 0; it < 200; ++it) {
            std::vector<double> row(ops.size());
            for (double& v : row) v = d(rng);
            const auto base = decode_edge_argmax(row, ops);
            REQUIRE(decode_edge_normalized(row, gw(rng), ops, false).first == base);
        }
    }
    SECTION("identical alpha rows: higher gamma ranks higher") {
        const std::vector<double> row{0.4, 1.2, -0.5};
        const auto gg = softmax_vec({1.0, 0.0});
        const auto e1 = decode_edge_normalized(row, gg[0], ops, false);
        const auto e2 = decode_edge_normalized(row, gg[1], ops, false);
        REQUIRE(e1.second > e2.second);
    }
    SECTION("strength matches the direct softmax product") {
        const std::vector<double> row{0.3, -0.7, 1.1};
        const double gamma_w = 0.35;
        const auto sm = softmax_vec(row);
        const auto [op, s] = decode_edge_normalized(row, gamma_w, ops, false);
        REQUIRE(op == OpKind::cut);
        REQUIRE(s == Catch::Approx(sm[2] * gamma_w).margin(1e-12));
    }
    SECTION("theta rows are consumed without a second softmax") {
        const std::vector<double> th{0.2, 0.7, 0.1};
        const auto [op, s] = decode_edge_normalized(th, 1.0, ops, true);
        REQUIRE(op == OpKind::conv2d_1);
        REQUIRE(s == Catch::Approx(0.7));
    }
}

TEST_CASE("top-K cell decode") {
    const std::vector<OpKind> ops{OpKind::skip, OpKind::conv2d_1};
    SECTION("strengths 0.9/0.5/0.7 with K=2 keep edges 0 and 2") {
        // one block fed by 3 inputs; theta rows place all mass on conv2d_1
        CellTemplate cell;
        cell.style = "darts";
        cell.num_blocks = 1;
        cell.num_input_nodes = 3;
        cell.edges = {{0, 3}, {1, 3}, {2, 3}};
        std::vector<std::vector<double>> rows{{0.1, 0.9}, {0.5, 0.5}, {0.3, 0.7}};
        auto kept = decode_cell_topk(cell, rows, std::vector<double>(3, 0.0), ops, 2,
                                     false, true);
        REQUIRE(kept.size() == 2);
        REQUIRE(kept[0].edge_index == 0);
        REQUIRE(kept[1].edge_index == 2);
    }
    SECTION("K at least the edge count keeps everything") {
        CellTemplate cell;
        cell.style = "darts";
        cell.num_blocks = 1;
        cell.num_input_nodes = 2;
        cell.edges = {{0, 2}, {1, 2}};
        std::vector<std::vector<double>> rows{{0.2, 0.8}, {0.6, 0.4}};
        auto kept = decode_cell_topk(cell, rows, std::vector<double>(2, 0.0), ops, 5,
                                     false, true);
        REQUIRE(kept.size() == 2);
    }
    SECTION("K=2 on the 4-block cell leaves at most 2 inputs per block") {
        auto cell = build_cell_template("darts", 4, 2);
        std::mt19937_64 rng(20);
        std::uniform_real_distribution<double> d(0.0, 1.0);
        std::vector<std::vector<double>> rows;
        for (std::size_t e = 0; e < cell.edges.size(); ++e) {
            std::vector<double> r(ops.size());
            double s = 0;
            for (double& v : r) s += (v = d(rng) + 1e-3);
            for (double& v : r) v /= s;
            rows.push_back(r);
        }
        std::vector<double> gamma(cell.edges.size());
        for (double& v : gamma) v = d(rng);
        auto kept = decode_cell_topk(cell, rows, gamma, ops, 2, true, true);
        for (int j = 0; j < cell.num_blocks; ++j) {
            int cnt = 0;
            for (const auto& ge : kept)
                if (cell.edges[ge.edge_index].to == cell.num_input_nodes + j) ++cnt;
            REQUIRE(cnt >= 1);
            REQUIRE(cnt <= 2);
        }
    }
    SECTION("cut edges are dropped while a non-cut edge remains") {
        CellTemplate cell;
        cell.style = "darts";
        cell.num_blocks = 1;
        cell.num_input_nodes = 2;
        cell.edges = {{0, 2}, {1, 2}};
        const std::vector<OpKind> oc{OpKind::conv2d_1, OpKind::cut};
        std::vector<std::vector<double>> rows{{0.1, 0.9}, {0.8, 0.2}};
        auto kept = decode_cell_topk(cell, rows, std::vector<double>(2, 0.0), oc, 2,
                                     false, true);
        REQUIRE(kept.size() == 1);
        REQUIRE(kept[0].edge_index == 1);
        REQUIRE(kept[0].op == OpKind::conv2d_1);
    }
    SECTION("all edges favoring cut still keep one non-cut op") {
        CellTemplate cell;
        cell.style = "darts";
        cell.num_blocks = 1;
        cell.num_input_nodes = 2;
        cell.edges = {{0, 2}, {1, 2}};
        const std::vector<OpKind> oc{OpKind::conv2d_1, OpKind::cut};
        std::vector<std::vector<double>> rows{{0.1, 0.9}, {0.2, 0.8}};
        auto kept = decode_cell_topk(cell, rows, std::vector<double>(2, 0.0), oc, 2,
                                     false, true);
        REQUIRE(kept.size() == 1);
        REQUIRE(kept[0].op == OpKind::conv2d_1);
        REQUIRE(kept[0].edge_index == 1);  // globally strongest non-cut weight is 0.2
    }
}

TEST_CASE("viterbi path decode") {
    SECTION("chain yields its unique path") {
        auto n = build_network_template("chain", 4, 16);
        auto ps = viterbi_best_path(std::vector<double>(n.edges.size(), 0.0), n);
        REQUIRE(ps.path == std::vector<int>{0, 1, 2, 3});
        REQUIRE(ps.score == Catch::Approx(0.0).margin(1e-12));  // all weights 1
    }
    SECTION("diamond with beta favoring the upper branch") {
        auto n = diamond();
        // edge order: s->a, s->b, a->t, b->t; the sink's incoming softmax is
        // where the branches compete
        auto ps = viterbi_best_path(std::vector<double>{0.0, 0.0, 2.0, 0.0}, n);
        REQUIRE(ps.path == std::vector<int>{0, 1, 3});
    }
    SECTION("matches exhaustive enumeration over 50 random seeds") {
        for (std::uint64_t seed = 0; seed < 50; ++seed) {
            std::mt19937_64 rng(seed);
            std::uniform_real_distribution<double> d(-2, 2);
            for (const std::string topo : {"chain", "unet", "unetpp"}) {
                auto n = build_network_template(topo, 4, 16);
                auto paths = enumerate_paths(n);
                REQUIRE(paths.size() <= 200);
                std::vector<double> beta(n.edges.size());
                for (double& b : beta) b = d(rng);
                const auto logw = beta_edge_log_weights(beta, n);
                double best = -1e300;
                for (const auto& p : paths) {
                    double s = 0;
                    for (std::size_t i = 0; i + 1 < p.size(); ++i)
                        s += logw[n.edge_index(p[i], p[i + 1])];
                    best = std::max(best, s);
                }
                REQUIRE(viterbi_best_path(beta, n).score == Catch::Approx(best).margin(1e-9));
            }
        }
    }
}

TEST_CASE("multi-path decode") {
    SECTION("equal beta on a diamond keeps every path with sigma 0") {
        auto n = diamond();
        auto res = multipath_decode(std::vector<double>(4, 0.0), n);
        REQUIRE(res.scores.size() == 2);
        REQUIRE(res.sigma == Catch::Approx(0.0).margin(1e-12));
        REQUIRE(res.kept.size() == 2);
        REQUIRE_FALSE(res.fallback);
    }
    SECTION("two unequal paths trigger the best-path fallback") {
        // scores a > b give mu = (a+b)/2, sigma = (a-b)/2, so the cutoff
        // mu + 3*sigma = 2a - b lies strictly above a
        auto n = diamond();
        auto res = multipath_decode(std::vector<double>{0.0, 0.0, 2.0, 0.0}, n);
        REQUIRE(res.scores.size() == 2);
        const double a = std::max(res.scores[0].score, res.scores[1].score);
        const double b = std::min(res.scores[0].score, res.scores[1].score);
        REQUIRE(res.mu == Catch::Approx((a + b) / 2).margin(1e-12));
        REQUIRE(res.sigma == Catch::Approx((a - b) / 2).margin(1e-12));
        REQUIRE(res.mu + 3 * res.sigma > a);
        REQUIRE(res.fallback);
        REQUIRE(res.kept.size() == 1);
        REQUIRE(res.scores[res.kept[0]].path == std::vector<int>{0, 1, 3});
    }
    SECTION("a strongly favored route dominates the kept set") {
        auto n = build_network_template("unetpp", 3, 16);
        auto route = enumerate_paths(n).front();
        std::vector<double> beta(n.edges.size(), 0.0);
        for (std::size_t i = 0; i + 1 < route.size(); ++i)
            beta[n.edge_index(route[i], route[i + 1])] = 5.0;
        auto res = multipath_decode(beta, n);
        // the favored route must score highest and be part of the kept set
        std::size_t best = 0;
        for (std::size_t i = 1; i < res.scores.size(); ++i)
            if (res.scores[i].score > res.scores[best].score) best = i;
        REQUIRE(res.scores[best].path == route);
        bool route_kept = false;
        for (std::size_t i : res.kept) route_kept = route_kept || res.scores[i].path == route;
        REQUIRE(route_kept);
        for (std::size_t i : res.kept) REQUIRE(res.scores[i].path == route);
    }
}

TEST_CASE("full genotype decode is instantiable") {
    std::mt19937_64 rng(23);
    std::uniform_real_distribution<double> d(0.0, 1.0);
    auto topo = make_topology("darts-unet", "base", 2, 4, true);
    topo.space = build_operation_space("custom", {"sepconv2d_3x3", "skip", "cut"});
    auto arch = ArchParams<double>::make(topo, true);
    auto randomize = [&](std::vector<std::vector<double>>& rows) {
        for (auto& r : rows) {
            double s = 0;
            for (double& v : r) s += (v = d(rng) + 1e-3);
            for (double& v : r) v /= s;
        }
    };
    randomize(arch.alpha_normal);
    randomize(arch.alpha_reduce);
    for (double& v : arch.gamma_normal) v = d(rng);
    for (double& v : arch.gamma_reduce) v = d(rng);
    for (double& v : arch.beta) v = d(rng);

    for (const std::string mode : {"full", "viterbi", "multipath"}) {
        DecodeOptions opt;
        opt.network_mode = mode;
        auto g = decode_genotype(topo, arch, opt);
        REQUIRE_NOTHROW(g.validate());
        DiscreteNet<double> net(g, 3);
        Tensor<double> batch(Shape{1, 1, 16, 16}, 0.1);
        auto fw = net.forward(batch);
        REQUIRE(fw.tape->value(fw.logits).shape() == Shape{1, 2, 16, 16});
        REQUIRE(all_finite(fw.tape->value(fw.logits)));
    }
}

TEST_CASE("genotype file and DOT round trips") {
    auto topo = make_topology("darts-unet", "base", 2, 4, true);
    auto arch = ArchParams<double>::make(topo, true);
    auto g = decode_genotype(topo, arch, DecodeOptions{});
    const std::string path = "genotype_roundtrip_test.json";
    save_genotype(g, path);
    auto g2 = load_genotype(path);
    REQUIRE(to_json(g2) == to_json(g));
    std::remove(path.c_str());

    // DOT exports carry every kept edge, labeled by op name
    const auto dot = cell_dot(g, false);
    for (const auto& ge : g.normal_edges)
        REQUIRE(dot.find(op_name(ge.op)) != std::string::npos);
    const auto ndot = network_dot(g);
    for (int e : g.kept_net_edges) {
        const auto& ne = topo.network.edges[e];
        REQUIRE(ndot.find(topo.network.nodes[ne.from].name) != std::string::npos);
        REQUIRE(ndot.find(topo.network.nodes[ne.to].name) != std::string::npos);
    }
}
