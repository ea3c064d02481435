#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "poems/gradcheck.hpp"
#include "poems/matrix.hpp"
#include "poems/mlp.hpp"
#include "poems/optim.hpp"
#include "poems/rng.hpp"

using namespace poems;

namespace {

// Independent straight-line MLP evaluation: plain loops, no shared kernels.
Matrix straight_line_forward(const MlpParams& p, const Matrix& x) {
    Matrix cur = x;
    for (const auto& layer : p.layers) {
        Matrix next(cur.rows, layer.weight.cols);
        for (std::size_t n = 0; n < cur.rows; ++n) {
            for (std::size_t o = 0; o < layer.weight.cols; ++o) {
                double acc = layer.bias(0, o);
                for (std::size_t i = 0; i < layer.weight.rows; ++i)
                    acc += cur(n, i) * layer.weight(i, o);
                if (layer.act == Activation::relu && acc < 0.0) acc = 0.0;
                if (layer.act == Activation::tanh) acc = std::tanh(acc);
                next(n, o) = acc;
            }
        }
        cur = next;
    }
    return cur;
}

ParamSet mlp_param_set(MlpParams& p, MlpParams& g) {
    ParamSet set;
    for (std::size_t l = 0; l < p.layers.size(); ++l) {
        set.push_back({"l" + std::to_string(l) + ".W", &p.layers[l].weight, &g.layers[l].weight});
        set.push_back({"l" + std::to_string(l) + ".b", &p.layers[l].bias, &g.layers[l].bias});
    }
    return set;
}

} // namespace

TEST_CASE("rng streams are deterministic and bounded") {
    Rng a(42), b(42);
    for (int i = 0; i < 1000; ++i) {
        const double u = a.uniform();
        REQUIRE(u == b.uniform());
        REQUIRE(u >= 0.0);
        REQUIRE(u < 1.0);
    }
    Rng c(42), d(43);
    bool differ = false;
    for (int i = 0; i < 10; ++i) differ |= (c.uniform() != d.uniform());
    REQUIRE(differ);

    Rng e(7);
    for (int i = 0; i < 1000; ++i) {
        const double u = e.uniform(-2.0, 5.0);
        REQUIRE(u >= -2.0);
        REQUIRE(u < 5.0);
        REQUIRE(e.below(17) < 17);
    }
}

TEST_CASE("rng normal draws have standard moments") {
    Rng rng(123);
    const int n = 50000;
    double sum = 0.0, sq = 0.0;
    for (int i = 0; i < n; ++i) {
        const double x = rng.normal();
        sum += x;
        sq += x * x;
    }
    const double mean = sum / n;
    const double var = sq / n - mean * mean;
    REQUIRE(std::abs(mean) < 0.02);
    REQUIRE(std::abs(var - 1.0) < 0.03);
}

TEST_CASE("mix_seed separates nearby streams") {
    REQUIRE(mix_seed(21, 0) != mix_seed(21, 1));
    REQUIRE(mix_seed(21, 0) != mix_seed(22, 0));
    REQUIRE(mix_seed(0, 0) != 0);
}

TEST_CASE("matmul matches a hand-computed product") {
    const Matrix a{{1, 2, 3}, {4, 5, 6}};
    const Matrix b{{7, 8}, {9, 10}, {11, 12}};
    const Matrix c = matmul(a, b);
    const Matrix want{{58, 64}, {139, 154}};
    REQUIRE(max_abs_diff(c, want) == 0.0);
    REQUIRE_THROWS_AS(matmul(a, a), shape_error);
}

TEST_CASE("matmul_tn and matmul_nt agree with explicit transposes") {
    Rng rng(5);
    const Matrix a = random_normal(4, 6, rng);
    const Matrix b = random_normal(4, 3, rng);
    REQUIRE(max_abs_diff(matmul_tn(a, b), matmul(transpose(a), b)) < 1e-14);
    const Matrix c = random_normal(5, 6, rng);
    REQUIRE(max_abs_diff(matmul_nt(a, c), matmul(a, transpose(c))) < 1e-14);
}

TEST_CASE("row-vector helpers") {
    Matrix m{{1, 2}, {3, 4}};
    const Matrix r{{10, 20}};
    add_rowvec_inplace(m, r);
    REQUIRE(m(0, 0) == 11.0);
    REQUIRE(m(1, 1) == 24.0);
    const Matrix cs = colsum(m);
    REQUIRE(cs(0, 0) == 24.0);
    REQUIRE(cs(0, 1) == 46.0);
}

TEST_CASE("mlp_forward identity map") {
    MlpParams p;
    p.layers.push_back({Matrix{{1, 0}, {0, 1}}, Matrix(1, 2), Activation::identity});
    const Matrix out = mlp_forward(p, Matrix{{1, 2}});
    REQUIRE(out(0, 0) == 1.0);
    REQUIRE(out(0, 1) == 2.0);
}

TEST_CASE("mlp_forward on an empty batch") {
    Rng rng(1);
    MlpParams p = init_mlp({3, 4, 2}, rng);
    const Matrix out = mlp_forward(p, Matrix(0, 3));
    REQUIRE(out.rows == 0);
    REQUIRE(out.cols == 2);
}

TEST_CASE("mlp_forward matches straight-line evaluation") {
    Rng rng(9);
    for (Activation act : {Activation::relu, Activation::tanh}) {
        MlpParams p = init_mlp({5, 7, 4, 3}, rng, act);
        const Matrix x = random_normal(6, 5, rng);
        REQUIRE(max_abs_diff(mlp_forward(p, x), straight_line_forward(p, x)) < 1e-12);
    }
}

TEST_CASE("glorot initialization stays inside its bound") {
    Rng rng(11);
    MlpParams p = init_mlp({10, 20, 3}, rng);
    REQUIRE(p.layers.size() == 2);
    REQUIRE(p.layers[0].act == Activation::relu);
    REQUIRE(p.layers[1].act == Activation::identity);
    const double bound0 = std::sqrt(6.0 / (10 + 20));
    for (double w : p.layers[0].weight.data) REQUIRE(std::abs(w) <= bound0);
    for (double b : p.layers[0].bias.data) REQUIRE(b == 0.0);
}

TEST_CASE("mlp_backward linear-layer adjoint") {
    MlpParams p;
    p.layers.push_back({Matrix{{1, 2, 3}, {4, 5, 6}}, Matrix(1, 3), Activation::identity});
    MlpParams g = zeros_like(p);
    MlpCache cache;
    const Matrix x{{1, 1}, {2, -1}};
    mlp_forward(p, x, &cache);
    const Matrix ones(2, 3, 1.0);
    const Matrix dx = mlp_backward(p, cache, ones, g);
    // dL/dx_{n,i} = sum_o W_{i,o}
    REQUIRE(dx(0, 0) == 6.0);
    REQUIRE(dx(0, 1) == 15.0);
    REQUIRE(dx(1, 0) == 6.0);
    REQUIRE(dx(1, 1) == 15.0);
    // dL/dW = x^T * ones
    REQUIRE(g.layers[0].weight(0, 0) == 3.0);
    REQUIRE(g.layers[0].weight(1, 2) == 0.0);
    REQUIRE(g.layers[0].bias(0, 0) == 2.0);
}

TEST_CASE("mlp_backward zero cotangent gives zero gradients") {
    Rng rng(13);
    MlpParams p = init_mlp({3, 5, 2}, rng);
    MlpParams g = zeros_like(p);
    MlpCache cache;
    const Matrix x = random_normal(4, 3, rng);
    mlp_forward(p, x, &cache);
    const Matrix dx = mlp_backward(p, cache, Matrix(4, 2), g);
    for (const auto& layer : g.layers) {
        for (double w : layer.weight.data) REQUIRE(w == 0.0);
        for (double b : layer.bias.data) REQUIRE(b == 0.0);
    }
    for (double v : dx.data) REQUIRE(v == 0.0);
}

TEST_CASE("mlp_backward rejects a mismatched cache") {
    Rng rng(14);
    MlpParams p = init_mlp({3, 5, 2}, rng);
    MlpParams g = zeros_like(p);
    MlpCache cache;
    mlp_forward(p, random_normal(4, 3, rng), &cache);
    cache.act.pop_back();
    REQUIRE_THROWS_AS(mlp_backward(p, cache, Matrix(4, 2), g), contract_error);
}

TEST_CASE("mlp gradients match finite differences") {
    Rng rng(17);
    for (Activation act : {Activation::relu, Activation::tanh}) {
        MlpParams p = init_mlp({4, 6, 3}, rng, act);
        MlpParams g = zeros_like(p);
        ParamSet set = mlp_param_set(p, g);
        const Matrix x = random_normal(5, 4, rng);
        const Matrix weights = random_normal(5, 3, rng); // fixed cotangent
        auto loss = [&]() {
            const Matrix y = mlp_forward(p, x);
            double acc = 0.0;
            for (std::size_t i = 0; i < y.size(); ++i) acc += y.data[i] * weights.data[i];
            return acc;
        };
        MlpCache cache;
        mlp_forward(p, x, &cache);
        zero_grads(set);
        mlp_backward(p, cache, weights, g);
        REQUIRE(finite_diff_check(loss, set) < 1e-6);
    }
}

TEST_CASE("adamw first step closed form") {
    Matrix theta(1, 1);
    Matrix grad(1, 1, 1.0);
    ParamSet set{{"theta", &theta, &grad}};
    AdamWConfig hp; // lr 1e-3, betas 0.9/0.999, eps 1e-8, decay 0
    OptState st = init_opt_state(set, hp);
    adamw_step(set, st);
    REQUIRE(st.t == 1);
    REQUIRE(std::abs(theta(0, 0) + 1e-3) < 1e-9);
}

TEST_CASE("adamw zero gradient and zero decay is the identity") {
    Matrix theta(1, 1, 1.0);
    Matrix grad(1, 1);
    ParamSet set{{"theta", &theta, &grad}};
    OptState st = init_opt_state(set, AdamWConfig{});
    for (int i = 0; i < 5; ++i) adamw_step(set, st);
    REQUIRE(theta(0, 0) == 1.0);
}

TEST_CASE("adamw decay-only step is decoupled") {
    Matrix theta(1, 1, 1.0);
    Matrix grad(1, 1);
    ParamSet set{{"theta", &theta, &grad}};
    AdamWConfig hp;
    hp.lr = 1e-3;
    hp.weight_decay = 0.01;
    OptState st = init_opt_state(set, hp);
    adamw_step(set, st);
    REQUIRE(theta(0, 0) == Catch::Approx(1.0 - 1e-5).margin(1e-15));
}

TEST_CASE("adamw rejects non-finite gradients with the parameter path") {
    Matrix theta(1, 1);
    Matrix grad(1, 1, std::numeric_limits<double>::quiet_NaN());
    ParamSet set{{"enc.mRNA.l0.W", &theta, &grad}};
    OptState st = init_opt_state(set, AdamWConfig{});
    REQUIRE_THROWS_WITH(adamw_step(set, st), Catch::Matchers::ContainsSubstring("enc.mRNA.l0.W"));
}

TEST_CASE("finite_diff_check quadratic and constant losses") {
    Matrix theta(1, 1, 3.0);
    Matrix grad(1, 1, 6.0);
    ParamSet set{{"theta", &theta, &grad}};
    auto quad = [&]() { return theta(0, 0) * theta(0, 0); };
    REQUIRE(finite_diff_check(quad, set) < 1e-6);

    grad(0, 0) = 0.0;
    auto constant = []() { return 4.0; };
    REQUIRE(finite_diff_check(constant, set) == 0.0);
}

TEST_CASE("activation names round-trip") {
    REQUIRE(activation_from_name(activation_name(Activation::relu)) == Activation::relu);
    REQUIRE(activation_from_name(activation_name(Activation::tanh)) == Activation::tanh);
    REQUIRE(activation_from_name(activation_name(Activation::identity)) == Activation::identity);
    REQUIRE_THROWS_AS(activation_from_name("gelu"), contract_error);
}
