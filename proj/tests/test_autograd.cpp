#include "doctest.h"

#include <cmath>
#include <functional>

#include "spikelab/autograd.hpp"
#include "spikelab/rng.hpp"
#include "support/test_support.hpp"

using namespace spikelab;
using testsupport::grads_match;
using testsupport::random_tensor;

namespace {

// Runs the graph builder as a scalar function of x for finite differences.
Tensor fd_grad(const std::function<Graph::Value(Graph&, Graph::Value)>& build,
               const Tensor& x, double eps = 1e-4) {
    return finite_diff_grad(
        [&](const Tensor& probe) {
            Graph g;
            Graph::Value in = g.leaf(probe, false);
            return build(g, in)->value[0];
        },
        x, eps);
}

Tensor graph_grad(const std::function<Graph::Value(Graph&, Graph::Value)>& build,
                  const Tensor& x) {
    Graph g;
    Graph::Value in = g.leaf(x, true);
    Graph::Value loss = build(g, in);
    g.backward(loss);
    return in->ensure_grad();
}

void check_gradients(const std::function<Graph::Value(Graph&, Graph::Value)>& build,
                     const Tensor& x, double rel = 1e-4) {
    CHECK(grads_match(graph_grad(build, x), fd_grad(build, x), rel));
}

}  // namespace

TEST_CASE("backward of sum is all ones") {
    Graph g;
    Graph::Value x = g.leaf(Tensor({3}, {0.5, -1.0, 2.0}), true);
    g.backward(g.sum(x));
    for (std::size_t i = 0; i < 3; ++i) CHECK(x->grad[i] == 1.0);
}

TEST_CASE("backward of sum(x*x) is 2x") {
    Graph g;
    Graph::Value x = g.leaf(Tensor({3}, {1.0, 2.0, 3.0}), true);
    g.backward(g.sum(g.mul(x, x)));
    CHECK(x->grad[0] == 2.0);
    CHECK(x->grad[1] == 4.0);
    CHECK(x->grad[2] == 6.0);
}

TEST_CASE("backward rejects non-scalar losses") {
    Graph g;
    Graph::Value x = g.leaf(Tensor({3}, 1.0), true);
    CHECK_THROWS_AS(g.backward(x), std::invalid_argument);
}

TEST_CASE("repeated backward accumulates into leaf gradients") {
    Graph g;
    Graph::Value x = g.leaf(Tensor({2}, {1.0, 1.0}), true);
    Graph::Value loss = g.sum(x);
    g.backward(loss);
    g.backward(loss);
    CHECK(x->grad[0] == 2.0);
    g.zero_grad();
    g.backward(loss);
    CHECK(x->grad[0] == 1.0);
}

TEST_CASE("gradient check: elementwise and bias ops") {
    Rng rng(101);
    for (int trial = 0; trial < 20; ++trial) {
        const Tensor x = random_tensor(rng, {3, 4});
        const Tensor other = random_tensor(rng, {3, 4});
        const Tensor bias = random_tensor(rng, {4});
        check_gradients(
            [&](Graph& g, Graph::Value in) { return g.sum(g.add(in, g.constant(other))); },
            x);
        check_gradients(
            [&](Graph& g, Graph::Value in) { return g.sum(g.sub(g.constant(other), in)); },
            x);
        check_gradients(
            [&](Graph& g, Graph::Value in) { return g.sum(g.mul(in, g.constant(other))); },
            x);
        check_gradients([&](Graph& g, Graph::Value in) { return g.sum(g.scale(in, -1.7)); },
                        x);
        check_gradients(
            [&](Graph& g, Graph::Value in) {
                return g.sum(g.add_bias(in, g.constant(bias)));
            },
            x);
    }
}

TEST_CASE("gradient check: matmul on both operands with broadcasting") {
    Rng rng(102);
    for (int trial = 0; trial < 20; ++trial) {
        const Tensor a = random_tensor(rng, {2, 3, 4});
        const Tensor b = random_tensor(rng, {4, 5});
        check_gradients(
            [&](Graph& g, Graph::Value in) { return g.sum(g.matmul(in, g.constant(b))); },
            a);
        check_gradients(
            [&](Graph& g, Graph::Value in) { return g.sum(g.matmul(g.constant(a), in)); },
            b);
    }
}

TEST_CASE("gradient check: conv2d input and kernel") {
    Rng rng(103);
    for (int trial = 0; trial < 20; ++trial) {
        const std::size_t stride = 1 + trial % 2;
        const std::size_t pad = trial % 2;
        const Tensor x = random_tensor(rng, {2, 2, 5, 5});
        const Tensor w = random_tensor(rng, {3, 2, 3, 3});
        check_gradients(
            [&](Graph& g, Graph::Value in) {
                return g.sum(g.conv2d(in, g.constant(w), stride, pad));
            },
            x);
        check_gradients(
            [&](Graph& g, Graph::Value in) {
                return g.sum(g.conv2d(g.constant(x), in, stride, pad));
            },
            w);
    }
}

TEST_CASE("gradient check: depthwise conv") {
    Rng rng(104);
    for (int trial = 0; trial < 10; ++trial) {
        const Tensor x = random_tensor(rng, {2, 3, 4, 4});
        const Tensor w = random_tensor(rng, {3, 3, 3});
        check_gradients(
            [&](Graph& g, Graph::Value in) {
                return g.sum(g.depthwise_conv2d(in, g.constant(w)));
            },
            x);
        check_gradients(
            [&](Graph& g, Graph::Value in) {
                return g.sum(g.depthwise_conv2d(g.constant(x), in));
            },
            w);
    }
}

TEST_CASE("gradient check: batch norm in both modes") {
    Rng rng(105);
    for (int trial = 0; trial < 10; ++trial) {
        const Tensor x = random_tensor(rng, {4, 3, 2, 2});
        const Tensor gamma = random_tensor(rng, {3}, 0.5, 1.5);
        const Tensor beta = random_tensor(rng, {3});
        BatchNormState state;
        state.init(3);
        for (std::size_t c = 0; c < 3; ++c) {
            state.running_mean[c] = rng.uniform(-0.2, 0.2);
            state.running_var[c] = rng.uniform(0.5, 1.5);
        }
        for (bool training : {true, false}) {
            // weight the output so the summed loss is not BN-shift-invariant
            const Tensor mask = random_tensor(rng, {4, 3, 2, 2});
            auto build = [&](Graph& g, Graph::Value in) {
                BatchNormState local = state;
                Graph::Value y = g.batch_norm(in, g.constant(gamma), g.constant(beta), 1,
                                              training, &local);
                return g.sum(g.mul(y, g.constant(mask)));
            };
            CHECK(grads_match(graph_grad(build, x), fd_grad(build, x, 1e-5), 2e-4));
            // affine parameter gradients
            auto build_gamma = [&](Graph& g, Graph::Value gin) {
                BatchNormState local = state;
                Graph::Value y = g.batch_norm(g.constant(x), gin, g.constant(beta), 1,
                                              training, &local);
                return g.sum(g.mul(y, g.constant(mask)));
            };
            CHECK(grads_match(graph_grad(build_gamma, gamma), fd_grad(build_gamma, gamma),
                              2e-4));
        }
    }
}

TEST_CASE("gradient check: pooling") {
    Rng rng(106);
    for (int trial = 0; trial < 10; ++trial) {
        const Tensor x = random_tensor(rng, {2, 2, 4, 4});
        check_gradients(
            [&](Graph& g, Graph::Value in) { return g.sum(g.max_pool(in, 2, 2)); }, x);
        check_gradients(
            [&](Graph& g, Graph::Value in) {
                // weighting distinguishes window members
                Graph::Value pooled = g.avg_pool(in, 3, 1, 1);
                Tensor w(pooled->value.shape());
                for (std::size_t i = 0; i < w.numel(); ++i)
                    w[i] = std::cos(static_cast<double>(i));
                return g.sum(g.mul(pooled, g.constant(w)));
            },
            x);
    }
}

TEST_CASE("max pooling routes ties to the first maximal element") {
    Graph g;
    Tensor x({1, 1, 2, 2}, 1.0);  // all tied
    Graph::Value in = g.leaf(x, true);
    g.backward(g.sum(g.max_pool(in, 2, 2)));
    CHECK(in->grad[0] == 1.0);
    CHECK(in->grad[1] == 0.0);
    CHECK(in->grad[2] == 0.0);
    CHECK(in->grad[3] == 0.0);
}

TEST_CASE("gradient check: smooth spike path") {
    Rng rng(107);
    for (int trial = 0; trial < 20; ++trial) {
        const Tensor u = random_tensor(rng, {8}, -2.0, 2.0);
        const double v_th = rng.uniform(0.2, 1.2);
        const double alpha = rng.uniform(1.0, 3.0);
        check_gradients(
            [&](Graph& g, Graph::Value in) {
                return g.sum(g.spike(in, v_th, alpha, SpikeMode::Smooth));
            },
            u);
    }
}

TEST_CASE("hard spike uses the surrogate in backward") {
    Graph g;
    const double v_th = 1.0, alpha = 2.0;
    Graph::Value u = g.leaf(Tensor({3}, {0.5, 1.0, 1.5}), true);
    Graph::Value s = g.spike(u, v_th, alpha, SpikeMode::Hard);
    CHECK(s->value[0] == 0.0);
    CHECK(s->value[1] == 1.0);  // inclusive at threshold
    CHECK(s->value[2] == 1.0);
    g.backward(g.sum(s));
    for (std::size_t i = 0; i < 3; ++i)
        CHECK(u->grad[i] == surrogate_derivative(u->value[i], v_th, alpha));
    CHECK(u->grad[1] == alpha / 2.0);
}

TEST_CASE("gradient check: shape and reduction ops") {
    Rng rng(108);
    for (int trial = 0; trial < 10; ++trial) {
        const Tensor x = random_tensor(rng, {3, 2, 2, 2});
        const Tensor w = random_tensor(rng, {3, 2, 2, 2});
        auto weighted = [&](Graph& g, Graph::Value v, const Tensor& mask) {
            Tensor m = mask.reshaped(v->value.shape());
            return g.sum(g.mul(v, g.constant(m)));
        };
        check_gradients(
            [&](Graph& g, Graph::Value in) {
                Tensor m({3, 8});
                for (std::size_t i = 0; i < m.numel(); ++i) m[i] = w[i];
                return g.sum(g.mul(g.reshape(in, {3, 8}), g.constant(m)));
            },
            x);
        check_gradients(
            [&](Graph& g, Graph::Value in) {
                Tensor m({2, 2, 2});
                for (std::size_t i = 0; i < m.numel(); ++i) m[i] = w[i];
                return g.sum(g.mul(g.select0(in, 1), g.constant(m)));
            },
            x);
        check_gradients(
            [&](Graph& g, Graph::Value in) {
                Tensor m({2, 2, 2});
                for (std::size_t i = 0; i < m.numel(); ++i) m[i] = w[i];
                return g.sum(g.mul(g.mean0(in), g.constant(m)));
            },
            x);
        check_gradients(
            [&](Graph& g, Graph::Value in) {
                Graph::Value t = g.transpose_last2(g.reshape(in, {3, 4, 2}));
                Tensor m({3, 2, 4});
                for (std::size_t i = 0; i < m.numel(); ++i) m[i] = w[i];
                return g.sum(g.mul(t, g.constant(m)));
            },
            x);
        check_gradients(
            [&](Graph& g, Graph::Value in) {
                Graph::Value tok = g.to_tokens(in);  // [3,4,2]
                Tensor m({3, 4, 2});
                for (std::size_t i = 0; i < m.numel(); ++i) m[i] = w[i];
                return g.sum(g.mul(tok, g.constant(m)));
            },
            x);
        check_gradients(
            [&](Graph& g, Graph::Value in) {
                Graph::Value back = g.from_tokens(g.to_tokens(in), 2, 2);
                return weighted(g, back, w);
            },
            x);
        check_gradients(
            [&](Graph& g, Graph::Value in) {
                Tensor m({3, 2});
                for (std::size_t i = 0; i < m.numel(); ++i) m[i] = w[i];
                return g.sum(g.mul(g.global_avg_hw(in), g.constant(m)));
            },
            x);
        check_gradients(
            [&](Graph& g, Graph::Value in) {
                std::vector<Graph::Value> parts{g.select0(in, 2), g.select0(in, 0)};
                Graph::Value stacked = g.stack0(parts);
                Tensor m({2, 2, 2, 2});
                for (std::size_t i = 0; i < m.numel(); ++i) m[i] = w[i];
                return g.sum(g.mul(stacked, g.constant(m)));
            },
            x);
    }
}

TEST_CASE("gradient check: smoothed cross entropy") {
    Rng rng(109);
    for (int trial = 0; trial < 20; ++trial) {
        const Tensor logits = random_tensor(rng, {4, 3}, -2.0, 2.0);
        std::vector<int> labels{0, 2, 1, 2};
        const double smoothing = trial % 2 ? 0.1 : 0.0;
        check_gradients(
            [&](Graph& g, Graph::Value in) {
                return g.cross_entropy_smoothed(in, labels, smoothing);
            },
            logits);
    }
}

TEST_CASE("cross entropy rejects bad labels and shapes") {
    Graph g;
    Graph::Value logits = g.leaf(Tensor({2, 3}, 0.0), false);
    CHECK_THROWS_AS(g.cross_entropy_smoothed(logits, {0, 3}, 0.0), std::invalid_argument);
    CHECK_THROWS_AS(g.cross_entropy_smoothed(logits, {0}, 0.0), std::invalid_argument);
    CHECK_THROWS_AS(g.cross_entropy_smoothed(logits, {0, 1}, 1.0), std::invalid_argument);
}

TEST_CASE("param registration deduplicates by address") {
    Tensor w({2}, {1.0, 2.0});
    Graph g;
    Graph::Value a = g.param(w);
    Graph::Value b = g.param(w);
    CHECK(a == b);
    g.backward(g.sum(g.add(a, b)));
    CHECK(g.grad_for(w)[0] == 2.0);
}
