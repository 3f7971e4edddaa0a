#pragma once

#include <cmath>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "segnas/search_space.hpp"

namespace segnas {

// Architecture parameters: per cell-edge op logits (alpha, or simplex theta
// when theta_mode is set), per cell-edge normalization logits (gamma), and
// per network-edge logits (beta). Normal and reduction cells keep separate
// rows, shared across all cell instances of their type.
template <typename T>
struct ArchParams {
    std::vector<std::vector<T>> alpha_normal;
    std::vector<std::vector<T>> alpha_reduce;
    std::vector<T> gamma_normal;
    std::vector<T> gamma_reduce;
    std::vector<T> beta;
    bool theta_mode = true;

    static ArchParams make(const Topology& topo, bool theta_mode) {
        ArchParams a;
        a.theta_mode = theta_mode;
        const std::size_t num_ops = topo.space.ops.size();
        const std::size_t num_edges = topo.cell.edges.size();
        const T uniform = theta_mode ? static_cast<T>(1.0 / static_cast<double>(num_ops)) : T(0);
        a.alpha_normal.assign(num_edges, std::vector<T>(num_ops, uniform));
        a.alpha_reduce.assign(num_edges, std::vector<T>(num_ops, uniform));
        a.gamma_normal.assign(num_edges, T(0));
        a.gamma_reduce.assign(num_edges, T(0));
        a.beta.assign(topo.network.edges.size(), T(0));
        return a;
    }

    void check() const {
        if (theta_mode) {
            auto check_rows = [](const std::vector<std::vector<T>>& rows) {
                for (const auto& r : rows) {
                    T sum = T(0);
                    for (T v : r) {
                        if (v < T(0)) throw std::domain_error("theta entry < 0");
                        sum += v;
                    }
                    if (std::abs(static_cast<double>(sum) - 1.0) > 1e-9)
                        throw std::domain_error("theta row does not sum to 1");
                }
            };
            check_rows(alpha_normal);
            check_rows(alpha_reduce);
        }
    }
};

template <typename T>
nlohmann::json to_json(const ArchParams<T>& a) {
    nlohmann::json j;
    j["theta_mode"] = a.theta_mode;
    j["alpha_normal"] = a.alpha_normal;
    j["alpha_reduce"] = a.alpha_reduce;
    j["gamma_normal"] = a.gamma_normal;
    j["gamma_reduce"] = a.gamma_reduce;
    j["beta"] = a.beta;
    return j;
}

template <typename T>
ArchParams<T> arch_params_from_json(const nlohmann::json& j) {
    ArchParams<T> a;
    a.theta_mode = j.at("theta_mode");
    a.alpha_normal = j.at("alpha_normal").get<std::vector<std::vector<T>>>();
    a.alpha_reduce = j.at("alpha_reduce").get<std::vector<std::vector<T>>>();
    a.gamma_normal = j.at("gamma_normal").get<std::vector<T>>();
    a.gamma_reduce = j.at("gamma_reduce").get<std::vector<T>>();
    a.beta = j.at("beta").get<std::vector<T>>();
    return a;
}

template <typename T>
void save_arch_params(const ArchParams<T>& a, const std::string& path) {
    std::ofstream f(path);
    if (!f) throw std::runtime_error("cannot write " + path);
    f << to_json(a).dump(2) << "\n";
}

template <typename T>
ArchParams<T> load_arch_params(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw std::runtime_error("cannot read arch checkpoint " + path);
    nlohmann::json j;
    f >> j;
    return arch_params_from_json<T>(j);
}

}  // namespace segnas
