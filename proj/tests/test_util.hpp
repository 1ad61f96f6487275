#pragma once

#include <cmath>
#include <functional>
#include <random>
#include <vector>

#include "mmdet/tensor.hpp"

namespace mmdet::test {

inline Tensor random_tensor(std::vector<int> shape, std::mt19937_64& rng, double lo = -2.0, double hi = 2.0) {
    std::uniform_real_distribution<double> ud(lo, hi);
    Tensor t(std::move(shape));
    for (double& v : t.data) v = ud(rng);
    return t;
}

// Central finite differences against reverse-mode gradients. `build` gets a
// fresh graph and the leaf ids and must return a scalar loss node.
using LossBuilder = std::function<NodeId(Graph&, const std::vector<NodeId>&)>;

inline double max_grad_rel_err(std::vector<Tensor> leaves, const LossBuilder& build, double h = 1e-5) {
    Graph g;
    std::vector<NodeId> ids;
    for (const Tensor& t : leaves) ids.push_back(g.input(t));
    NodeId loss = build(g, ids);
    g.backward(loss);

    auto eval = [&](const std::vector<Tensor>& vals) {
        Graph g2;
        std::vector<NodeId> ids2;
        for (const Tensor& t : vals) ids2.push_back(g2.input(t));
        return g2.value(build(g2, ids2)).data[0];
    };

    double worst = 0.0;
    for (std::size_t li = 0; li < leaves.size(); ++li) {
        const Tensor& analytic = g.grad(ids[li]);
        for (std::size_t j = 0; j < leaves[li].data.size(); ++j) {
            std::vector<Tensor> plus = leaves, minus = leaves;
            plus[li].data[j] += h;
            minus[li].data[j] -= h;
            const double fd = (eval(plus) - eval(minus)) / (2.0 * h);
            const double err = std::abs(analytic.data[j] - fd) / std::max(1.0, std::abs(fd));
            worst = std::max(worst, err);
        }
    }
    return worst;
}

}  // namespace mmdet::test
