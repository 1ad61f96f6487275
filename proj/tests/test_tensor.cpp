#include <cmath>
#include <random>
#include <stdexcept>

#include "doctest.h"
#include "mmdet/tensor.hpp"
#include "test_util.hpp"

using namespace mmdet;
using mmdet::test::max_grad_rel_err;
using mmdet::test::random_tensor;

TEST_CASE("matmul identity and annihilator") {
    std::mt19937_64 rng(1);
    Tensor b = random_tensor({3, 5}, rng);
    Graph g;
    NodeId id = g.matmul(g.constant(Tensor::identity(3)), g.constant(b));
    for (std::size_t i = 0; i < b.data.size(); ++i) CHECK(g.value(id).data[i] == doctest::Approx(b.data[i]).epsilon(1e-15));

    Graph g2;
    NodeId z = g2.matmul(g2.constant(b), g2.constant(Tensor({5, 2})));
    for (double v : g2.value(z).data) CHECK(v == 0.0);
}

TEST_CASE("matmul matches the triple-loop oracle") {
    std::mt19937_64 rng(2);
    Tensor a = random_tensor({3, 4}, rng), b = random_tensor({4, 2}, rng);
    Graph g;
    const Tensor& c = g.value(g.matmul(g.constant(a), g.constant(b)));
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 2; ++j) {
            double acc = 0.0;
            for (int p = 0; p < 4; ++p) acc += a.at(i, p) * b.at(p, j);
            CHECK(c.at(i, j) == doctest::Approx(acc).epsilon(1e-14));
        }
}

TEST_CASE("matmul rejects mismatched shapes with both reported") {
    Graph g;
    NodeId a = g.constant(Tensor({2, 3})), b = g.constant(Tensor({4, 2}));
    CHECK_THROWS_WITH_AS(g.matmul(a, b), doctest::Contains("[2x3]"), std::invalid_argument);
}

TEST_CASE("softmax rows: uniform, stability, oracle") {
    Graph g;
    const Tensor& u = g.value(g.softmax_rows(g.constant(Tensor::full({1, 4}, 3.7))));
    for (double v : u.data) CHECK(v == doctest::Approx(0.25).epsilon(1e-15));

    Graph g2;
    const Tensor& s = g2.value(g2.softmax_rows(g2.constant(Tensor({1, 2}, {1000.0, 0.0}))));
    CHECK(s.data[0] == doctest::Approx(1.0));
    CHECK(s.data[1] < 1e-300);

    std::mt19937_64 rng(3);
    Tensor a = random_tensor({2, 3}, rng);
    Graph g3;
    const Tensor& out = g3.value(g3.softmax_rows(g3.constant(a)));
    for (int i = 0; i < 2; ++i) {
        long double z = 0.0;
        for (int j = 0; j < 3; ++j) z += std::exp(static_cast<long double>(a.at(i, j)));
        for (int j = 0; j < 3; ++j)
            CHECK(out.at(i, j) == doctest::Approx(static_cast<double>(std::exp(static_cast<long double>(a.at(i, j))) / z)).epsilon(1e-12));
    }
}

TEST_CASE("softmax rows sum to one and shift invariance") {
    std::mt19937_64 rng(4);
    for (int rep = 0; rep < 20; ++rep) {
        Tensor a = random_tensor({4, 6}, rng, -5.0, 5.0);
        Graph g;
        const Tensor& s = g.value(g.softmax_rows(g.constant(a)));
        for (int i = 0; i < 4; ++i) {
            double sum = 0.0;
            for (int j = 0; j < 6; ++j) sum += s.at(i, j);
            CHECK(std::abs(sum - 1.0) <= 1e-12);
        }
        Tensor shifted = a;
        const double c = 7.25;
        for (double& v : shifted.data) v += c;
        Graph g2;
        const Tensor& s2 = g2.value(g2.softmax_rows(g2.constant(shifted)));
        for (std::size_t i = 0; i < s.data.size(); ++i) CHECK(std::abs(s.data[i] - s2.data[i]) <= 1e-12);
    }
}

TEST_CASE("layer_norm examples") {
    Graph g;
    Tensor gain = Tensor::full({3}, 1.0), bias = Tensor({3});
    const Tensor& z = g.value(g.layer_norm(g.constant(Tensor::full({1, 3}, 5.0)), g.constant(gain), g.constant(bias), 1e-6));
    for (double v : z.data) CHECK(std::abs(v) < 1e-2);  // zero-variance row collapses to bias

    Graph g2;
    Tensor gain2 = Tensor::full({2}, 1.0), bias2 = Tensor({2});
    const Tensor& n = g2.value(g2.layer_norm(g2.constant(Tensor({1, 2}, {1.0, -1.0})), g2.constant(gain2), g2.constant(bias2), 1e-12));
    CHECK(n.data[0] == doctest::Approx(1.0).epsilon(1e-9));
    CHECK(n.data[1] == doctest::Approx(-1.0).epsilon(1e-9));

    std::mt19937_64 rng(5);
    Tensor a = random_tensor({1, 8}, rng);
    Graph g3;
    Tensor gain3 = Tensor::full({8}, 1.0), bias3 = Tensor({8});
    const double eps = 1e-10;
    const Tensor& out = g3.value(g3.layer_norm(g3.constant(a), g3.constant(gain3), g3.constant(bias3), eps));
    double mean = 0.0;
    for (int j = 0; j < 8; ++j) mean += a.at(0, j);
    mean /= 8;
    double var = 0.0;
    for (int j = 0; j < 8; ++j) var += (a.at(0, j) - mean) * (a.at(0, j) - mean);
    var /= 8;
    for (int j = 0; j < 8; ++j)
        CHECK(out.at(0, j) == doctest::Approx((a.at(0, j) - mean) / std::sqrt(var + eps)).epsilon(1e-12));

    // per-row zero mean / unit variance before gain and bias
    double omean = 0.0, ovar = 0.0;
    for (int j = 0; j < 8; ++j) omean += out.at(0, j);
    omean /= 8;
    for (int j = 0; j < 8; ++j) ovar += (out.at(0, j) - omean) * (out.at(0, j) - omean);
    ovar /= 8;
    CHECK(std::abs(omean) <= 1e-9);
    CHECK(std::abs(ovar - 1.0) <= 1e-9);
}

TEST_CASE("conv1d examples and oracle") {
    // k=1 identity channel map
    Graph g;
    std::mt19937_64 rng(6);
    Tensor a = random_tensor({4, 2}, rng);
    Tensor ker({1, 2, 2}, {1.0, 0.0, 0.0, 1.0});
    const Tensor& out = g.value(g.conv1d(g.constant(a), g.constant(ker), g.constant(Tensor({2}))));
    for (std::size_t i = 0; i < a.data.size(); ++i) CHECK(out.data[i] == doctest::Approx(a.data[i]));

    // all-zero kernel: every output row equals the bias
    Graph g2;
    Tensor bias({3}, {0.5, -1.0, 2.0});
    const Tensor& ob = g2.value(g2.conv1d(g2.constant(a), g2.constant(Tensor({3, 2, 3})), g2.constant(bias)));
    for (int t = 0; t < 4; ++t)
        for (int c = 0; c < 3; ++c) CHECK(ob.at(t, c) == doctest::Approx(bias.data[c]));

    // random T=5, Cin=2, Cout=3, k=3 against the naive sliding window
    Tensor x = random_tensor({5, 2}, rng);
    Tensor k3 = random_tensor({3, 2, 3}, rng);
    Tensor b3 = random_tensor({3}, rng);
    Graph g3;
    const Tensor& oc = g3.value(g3.conv1d(g3.constant(x), g3.constant(k3), g3.constant(b3)));
    for (int t = 0; t < 5; ++t)
        for (int co = 0; co < 3; ++co) {
            double acc = b3.data[co];
            for (int dk = 0; dk < 3; ++dk) {
                const int ts = t + dk - 1;
                if (ts < 0 || ts >= 5) continue;
                for (int ci = 0; ci < 2; ++ci) acc += x.at(ts, ci) * k3.data[(dk * 2 + ci) * 3 + co];
            }
            CHECK(oc.at(t, co) == doctest::Approx(acc).epsilon(1e-13));
        }
}

TEST_CASE("conv1d rejects even kernel size") {
    Graph g;
    NodeId a = g.constant(Tensor({4, 2}));
    CHECK_THROWS_AS(g.conv1d(a, g.constant(Tensor({2, 2, 2})), g.constant(Tensor({2}))), std::invalid_argument);
}

TEST_CASE("conv1d is linear") {
    std::mt19937_64 rng(7);
    Tensor a = random_tensor({6, 3}, rng), b = random_tensor({6, 3}, rng);
    Tensor k = random_tensor({3, 3, 2}, rng);
    Tensor zero_bias({2});
    auto conv = [&](const Tensor& x) {
        Graph g;
        return g.value(g.conv1d(g.constant(x), g.constant(k), g.constant(zero_bias)));
    };
    Tensor ab = a;
    for (std::size_t i = 0; i < ab.data.size(); ++i) ab.data[i] += b.data[i];
    Tensor ca = conv(a), cb = conv(b), cab = conv(ab);
    for (std::size_t i = 0; i < cab.data.size(); ++i) CHECK(std::abs(cab.data[i] - ca.data[i] - cb.data[i]) <= 1e-10);
}

TEST_CASE("backward basics") {
    std::mt19937_64 rng(8);
    Tensor x = random_tensor({3, 3}, rng);

    Graph g;
    NodeId xi = g.input(x);
    g.backward(g.sum(xi));
    for (double v : g.grad(xi).data) CHECK(v == 1.0);

    // scalar x*x -> gradient 2x
    Tensor s({1}, {1.7});
    Graph g2;
    NodeId si = g2.input(s);
    g2.backward(g2.sum(g2.mul(si, si)));
    CHECK(g2.grad(si).data[0] == doctest::Approx(3.4));

    // non-scalar loss rejected
    Graph g3;
    NodeId m = g3.input(x);
    CHECK_THROWS_AS(g3.backward(m), std::invalid_argument);
}

TEST_CASE("backward: unused leaf has exactly zero gradient") {
    std::mt19937_64 rng(9);
    Graph g;
    NodeId used = g.input(random_tensor({2, 2}, rng));
    NodeId unused = g.input(random_tensor({2, 2}, rng));
    g.backward(g.sum(g.mul(used, used)));
    for (double v : g.grad(unused).data) CHECK(v == 0.0);
}

TEST_CASE("composite graph gradient matches central differences") {
    std::mt19937_64 rng(10);
    Tensor a = random_tensor({3, 4}, rng), b = random_tensor({4, 3}, rng);
    const double err = max_grad_rel_err({a, b}, [](Graph& g, const std::vector<NodeId>& ids) {
        return g.sum(g.softmax_rows(g.matmul(ids[0], ids[1])));
    });
    CHECK(err <= 1e-4);
}

TEST_CASE("per-op gradients match finite differences") {
    std::mt19937_64 rng(11);
    for (int rep = 0; rep < 3; ++rep) {
        Tensor a = random_tensor({3, 4}, rng), b = random_tensor({3, 4}, rng);
        Tensor w = random_tensor({4, 2}, rng);
        Tensor gain = random_tensor({4}, rng, 0.5, 1.5), bias = random_tensor({4}, rng);
        Tensor ker = random_tensor({3, 4, 2}, rng), cbias = random_tensor({2}, rng);

        CHECK(max_grad_rel_err({a, b}, [](Graph& g, const std::vector<NodeId>& v) {
                  return g.sum(g.mul(g.add(v[0], v[1]), g.sub(v[0], v[1])));
              }) <= 1e-4);
        CHECK(max_grad_rel_err({a, w}, [](Graph& g, const std::vector<NodeId>& v) {
                  return g.sum(g.gelu(g.matmul(v[0], v[1])));
              }) <= 1e-4);
        CHECK(max_grad_rel_err({a, b}, [](Graph& g, const std::vector<NodeId>& v) {
                  return g.sum(g.softmax_rows(g.matmul_nt(v[0], v[1])));
              }) <= 1e-4);
        CHECK(max_grad_rel_err({a, gain, bias}, [](Graph& g, const std::vector<NodeId>& v) {
                  return g.sum(g.mul(g.layer_norm(v[0], v[1], v[2], 1e-6), g.layer_norm(v[0], v[1], v[2], 1e-6)));
              }) <= 1e-4);
        CHECK(max_grad_rel_err({a, ker, cbias}, [](Graph& g, const std::vector<NodeId>& v) {
                  return g.sum(g.gelu(g.conv1d(v[0], v[1], v[2])));
              }) <= 1e-4);
        CHECK(max_grad_rel_err({a, b}, [](Graph& g, const std::vector<NodeId>& v) {
                  return g.sum(g.softmax_rows(g.concat_cols({v[0], g.scale(v[1], 0.5)})));
              }) <= 1e-4);
        Tensor bias3 = random_tensor({3}, rng);
        CHECK(max_grad_rel_err({a, b, bias3}, [](Graph& g, const std::vector<NodeId>& v) {
                  return g.sum(g.gelu(g.add_row(g.matmul_nt(v[0], v[1]), v[2])));
              }) <= 1e-4);
    }
}

TEST_CASE("detection_loss gradient matches finite differences") {
    std::mt19937_64 rng(12);
    const int T = 5, C = 3;
    Tensor target({T, C});
    std::uniform_int_distribution<int> cd(0, C - 1);
    for (int t = 0; t < T; ++t) target.at(t, cd(rng)) = 1.0;
    Tensor logits = random_tensor({T, C}, rng);
    const double err = max_grad_rel_err({logits}, [&](Graph& g, const std::vector<NodeId>& v) {
        return g.detection_loss(g.softmax_rows(v[0]), target, 1.0);
    });
    CHECK(err <= 1e-4);
}

TEST_CASE("detection_loss validates one-hot targets and shapes") {
    Graph g;
    NodeId y = g.constant(Tensor::full({2, 2}, 0.5));
    CHECK_THROWS_AS(g.detection_loss(y, Tensor::full({2, 2}, 0.5), 1.0), std::invalid_argument);
    Tensor wrong_rows({3, 2}, {1, 0, 1, 0, 1, 0});
    CHECK_THROWS_AS(g.detection_loss(y, wrong_rows, 1.0), std::invalid_argument);
}

TEST_CASE("forward ops keep finite inputs finite") {
    std::mt19937_64 rng(13);
    Tensor a = random_tensor({4, 4}, rng, -100.0, 100.0);
    Graph g;
    NodeId out = g.softmax_rows(g.matmul(g.constant(a), g.constant(a)));
    CHECK(g.value(out).all_finite());
}
