#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "crct/tensor.hpp"
#include "fd_check.hpp"

using namespace crct;

namespace {

Tensor rand_tensor(std::vector<int> shape, Rng& rng, bool requires_grad = true, double lo = -1.0,
                   double hi = 1.0) {
    std::int64_t n = 1;
    for (int d : shape) n *= d;
    std::vector<double> data(static_cast<std::size_t>(n));
    for (double& x : data) x = rng.uniform(lo, hi);
    return Tensor::from_vector(std::move(shape), data, requires_grad);
}

// values bounded away from zero, for ops with a kink there
Tensor rand_signed(std::vector<int> shape, Rng& rng) {
    std::int64_t n = 1;
    for (int d : shape) n *= d;
    std::vector<double> data(static_cast<std::size_t>(n));
    for (double& x : data) x = rng.uniform(0.2, 1.0) * (rng.uniform() < 0.5 ? -1.0 : 1.0);
    return Tensor::from_vector(std::move(shape), data, true);
}

}  // namespace

TEST_CASE("softmax basics") {
    const Tensor s = softmax(Tensor::from_vector({2}, {0.0, 0.0}));
    CHECK(s.value()[0] == doctest::Approx(0.5));
    CHECK(s.value()[1] == doctest::Approx(0.5));

    Rng rng(1);
    const Tensor x = rand_tensor({3, 7}, rng, false, -4.0, 4.0);
    const Tensor shifted = add(x, Tensor::scalar(1000.0));
    const Tensor a = softmax(x), b = softmax(shifted);
    for (Eigen::Index i = 0; i < a.value().size(); ++i)
        CHECK(a.value()[i] == doctest::Approx(b.value()[i]).epsilon(1e-12));

    const Tensor big = softmax(rand_tensor({2, 3, 5}, rng, false, -6.0, 6.0));
    for (int r = 0; r < 6; ++r) {
        double s_row = 0.0;
        for (int c = 0; c < 5; ++c) s_row += big.value()[r * 5 + c];
        CHECK(std::fabs(s_row - 1.0) < 1e-6);
    }
}

TEST_CASE("matmul identity and shape reporting") {
    const Tensor eye = Tensor::from_vector({3, 3}, {1, 0, 0, 0, 1, 0, 0, 0, 1});
    Rng rng(2);
    const Tensor a = rand_tensor({3, 4}, rng, false);
    const Tensor out = matmul(eye, a);
    for (Eigen::Index i = 0; i < a.value().size(); ++i) CHECK(out.value()[i] == a.value()[i]);

    try {
        matmul(rand_tensor({2, 3}, rng, false), rand_tensor({4, 5}, rng, false));
        FAIL("expected a shape error");
    } catch (const ShapeError& e) {
        const std::string msg = e.what();
        CHECK(msg.find("(2,3)") != std::string::npos);
        CHECK(msg.find("(4,5)") != std::string::npos);
    }
}

TEST_CASE("hand-checkable gradients") {
    Tensor x = Tensor::from_vector({1}, {2.0}, true);
    Tensor y = Tensor::from_vector({1}, {3.0}, true);
    mul(x, y).backward();
    CHECK(x.grad()[0] == doctest::Approx(3.0));
    CHECK(y.grad()[0] == doctest::Approx(2.0));

    Tensor z = Tensor::from_vector({4}, {1.0, -2.0, 0.5, 3.0}, true);
    sum(mul(z, z)).backward();
    for (int i = 0; i < 4; ++i) CHECK(z.grad()[i] == doctest::Approx(2.0 * z.value()[i]));
}

TEST_CASE("two-layer perceptron against finite differences") {
    Rng rng(7);
    const Tensor x = rand_tensor({3, 5}, rng, false);
    Tensor w1 = rand_tensor({5, 8}, rng);
    Tensor b1 = rand_tensor({8}, rng);
    Tensor w2 = rand_tensor({8, 2}, rng);
    Tensor b2 = rand_tensor({2}, rng);
    auto loss = [&]() {
        const Tensor h = gelu(add(matmul(x, w1), b1));
        const Tensor o = add(matmul(h, w2), b2);
        return mean(mul(o, o));
    };
    const auto rep = fdcheck::check({w1, b1, w2, b2}, loss);
    INFO(rep.worst);
    CHECK(rep.ok);
    CHECK(rep.checked == 5 * 8 + 8 + 8 * 2 + 2);
}

TEST_CASE("per-op gradients against finite differences") {
    Rng rng(11);

    SUBCASE("matmul") {
        Tensor a = rand_tensor({4, 6}, rng), b = rand_tensor({6, 3}, rng);
        CHECK(fdcheck::check({a, b}, [&]() { return mean(matmul(a, b)); }).ok);
    }
    SUBCASE("add broadcast modes") {
        Tensor a = rand_tensor({4, 8, 16}, rng);
        Tensor v = rand_tensor({16}, rng);
        Tensor s = rand_tensor({1}, rng);
        CHECK(fdcheck::check({a, v}, [&]() { return mean(mul(add(a, v), add(a, v))); }).ok);
        CHECK(fdcheck::check({a, s}, [&]() { return mean(mul(add(a, s), a)); }).ok);
        Tensor b = rand_tensor({4, 8, 16}, rng);
        CHECK(fdcheck::check({a, b}, [&]() { return mean(mul(add(a, b), b)); }).ok);
    }
    SUBCASE("mul modes and scale") {
        Tensor a = rand_tensor({3, 5}, rng), b = rand_tensor({3, 5}, rng);
        Tensor s = rand_tensor({1}, rng);
        CHECK(fdcheck::check({a, b}, [&]() { return mean(mul(a, b)); }).ok);
        CHECK(fdcheck::check({a, s}, [&]() { return sum(mul(a, s)); }).ok);
        CHECK(fdcheck::check({s, a}, [&]() { return sum(mul(s, a)); }).ok);
        CHECK(fdcheck::check({a}, [&]() { return sum(scale(a, -2.5)); }).ok);
    }
    SUBCASE("transpose and reshape") {
        Tensor a = rand_tensor({4, 7}, rng);
        CHECK(fdcheck::check({a}, [&]() { return mean(mul(transpose(a), transpose(a))); }).ok);
        CHECK(fdcheck::check({a}, [&]() {
                  const Tensor r = reshape(a, {7, 4});
                  return mean(mul(r, r));
              }).ok);
    }
    SUBCASE("concat and slice") {
        Tensor a = rand_tensor({2, 3, 4}, rng), b = rand_tensor({2, 5, 4}, rng);
        CHECK(fdcheck::check({a, b}, [&]() {
                  const Tensor c = concat({a, b}, 1);
                  return mean(mul(c, c));
              }).ok);
        Tensor c = rand_tensor({2, 3, 4}, rng);
        CHECK(fdcheck::check({a, c}, [&]() { return mean(concat({a, c}, 0)); }).ok);
        CHECK(fdcheck::check({a, c}, [&]() { return mean(concat({a, c}, 2)); }).ok);
        Tensor d = rand_tensor({4, 8, 16}, rng);
        CHECK(fdcheck::check({d}, [&]() {
                  const Tensor s = slice(d, 1, 2, 5);
                  return mean(mul(s, s));
              }).ok);
        CHECK(fdcheck::check({d}, [&]() { return mean(slice(d, 2, 3, 7)); }).ok);
    }
    SUBCASE("embedding with repeated ids") {
        Tensor table = rand_tensor({6, 5}, rng);
        const std::vector<int> ids{0, 2, 1, 2, 5};
        CHECK(fdcheck::check({table}, [&]() {
                  const Tensor e = embedding(table, ids);
                  return mean(mul(e, e));
              }).ok);
    }
    SUBCASE("softmax") {
        Tensor a = rand_tensor({4, 8, 16}, rng, true, -3.0, 3.0);
        Tensor w = rand_tensor({4, 8, 16}, rng, false);
        CHECK(fdcheck::check({a}, [&]() { return mean(mul(softmax(a), w)); }).ok);
    }
    SUBCASE("layer norm") {
        Tensor a = rand_tensor({4, 8, 16}, rng, true, -2.0, 2.0);
        Tensor gamma = rand_tensor({16}, rng, true, 0.5, 1.5);
        Tensor beta = rand_tensor({16}, rng);
        Tensor w = rand_tensor({4, 8, 16}, rng, false);
        CHECK(fdcheck::check({a, gamma, beta},
                             [&]() { return mean(mul(layer_norm(a, gamma, beta), w)); })
                  .ok);
    }
    SUBCASE("pointwise nonlinearities") {
        Tensor a = rand_tensor({3, 9}, rng, true, -2.0, 2.0);
        CHECK(fdcheck::check({a}, [&]() { return mean(gelu(a)); }).ok);
        CHECK(fdcheck::check({a}, [&]() { return mean(sigmoid(a)); }).ok);
        Tensor b = rand_signed({3, 9}, rng);
        CHECK(fdcheck::check({b}, [&]() { return mean(relu(b)); }).ok);
        CHECK(fdcheck::check({b}, [&]() { return mean(abs(b)); }).ok);
        CHECK(fdcheck::check({a}, [&]() { return sum(neg(a)); }).ok);
    }
    SUBCASE("masked fill") {
        Tensor a = rand_tensor({3, 6}, rng);
        const std::vector<unsigned char> full(18, 0);
        std::vector<unsigned char> some(18, 0);
        some[4] = some[11] = 1;
        const std::vector<unsigned char> lastdim{0, 1, 0, 0, 1, 0};
        CHECK(fdcheck::check({a}, [&]() { return mean(mul(masked_fill(a, some, 0.3), a)); }).ok);
        CHECK(fdcheck::check({a}, [&]() { return mean(masked_fill(a, lastdim, -2.0)); }).ok);
        CHECK(fdcheck::check({a}, [&]() { return mean(masked_fill(a, full, 9.0)); }).ok);
    }
    SUBCASE("binary cross entropy from logits") {
        Tensor z = rand_tensor({5}, rng, true, -3.0, 3.0);
        CHECK(fdcheck::check({z}, [&]() { return mean(bce_with_logits(z, 1.0)); }).ok);
        CHECK(fdcheck::check({z}, [&]() { return mean(bce_with_logits(z, 0.0)); }).ok);
    }
}

TEST_CASE("layer norm output moments before affine") {
    Rng rng(5);
    const Tensor x = rand_tensor({6, 32}, rng, false, -3.0, 5.0);
    const Tensor gamma = Tensor::full({32}, 1.0);
    const Tensor beta = Tensor::zeros({32});
    const Tensor y = layer_norm(x, gamma, beta);
    for (int r = 0; r < 6; ++r) {
        double m = 0.0, v = 0.0;
        for (int c = 0; c < 32; ++c) m += y.value()[r * 32 + c];
        m /= 32.0;
        for (int c = 0; c < 32; ++c) v += std::pow(y.value()[r * 32 + c] - m, 2);
        v /= 32.0;
        CHECK(std::fabs(m) < 1e-5);
        CHECK(std::fabs(v - 1.0) < 1e-4);
    }
}

TEST_CASE("large negative fill drives softmax to exact zero") {
    const Tensor x = Tensor::from_vector({1, 4}, {0.3, -0.2, 0.9, 0.1});
    const std::vector<unsigned char> mask{0, 1, 0, 1};
    const Tensor p = softmax(masked_fill(x, mask, -1e30));
    CHECK(p.value()[1] == 0.0);
    CHECK(p.value()[3] == 0.0);
    CHECK(p.value()[0] + p.value()[2] == doctest::Approx(1.0));
}

TEST_CASE("backward guards") {
    Rng rng(3);
    Tensor x = rand_tensor({4}, rng);
    CHECK_THROWS_AS(add(x, x).backward(), Error);

    Tensor loss = sum(x);
    loss.backward();
    CHECK_THROWS_AS(loss.backward(), Error);

    Tensor y = rand_tensor({4}, rng);
    {
        NoGradGuard ng;
        Tensor quiet = sum(y);
        quiet.backward();
    }
    CHECK(!y.has_grad());
}

TEST_CASE("repeated evaluation is bit-identical") {
    auto run = [](Eigen::ArrayXd* grad_out) {
        Rng rng(41);
        Tensor w = rand_tensor({8, 8}, rng);
        const Tensor x = rand_tensor({4, 8}, rng, false);
        Tensor loss = mean(bce_with_logits(sum(softmax(gelu(matmul(x, w)))), 1.0));
        const double v = loss.item();
        loss.backward();
        *grad_out = w.grad();
        return v;
    };
    Eigen::ArrayXd g1, g2;
    const double v1 = run(&g1), v2 = run(&g2);
    CHECK(v1 == v2);
    REQUIRE(g1.size() == g2.size());
    for (Eigen::Index i = 0; i < g1.size(); ++i) CHECK(g1[i] == g2[i]);
}

TEST_CASE("adam behaviour") {
    SUBCASE("zero gradient leaves parameters untouched") {
        Tensor p = Tensor::from_vector({3}, {1.0, -2.0, 0.5}, true);
        Adam opt({p}, 0.05);
        sum(scale(p, 0.0)).backward();
        opt.step();
        CHECK(p.value()[0] == 1.0);
        CHECK(p.value()[1] == -2.0);
        CHECK(p.value()[2] == 0.5);
    }
    SUBCASE("first step with unit gradient moves by about minus lr") {
        Tensor p = Tensor::from_vector({1}, {1.0}, true);
        Adam opt({p}, 0.01);
        sum(p).backward();
        opt.step();
        CHECK(p.value()[0] == doctest::Approx(1.0 - 0.01).epsilon(1e-6));
        CHECK(!p.has_grad());
        CHECK(opt.step_count() == 1);
    }
    SUBCASE("missing gradient is an error") {
        Tensor p = Tensor::from_vector({2}, {1.0, 2.0}, true);
        Adam opt({p}, 0.01);
        CHECK_THROWS_AS(opt.step(), Error);
    }
    SUBCASE("state restore reproduces the trajectory") {
        Rng rng(9);
        Tensor p = rand_tensor({6}, rng);
        Tensor q = rand_tensor({6}, rng);
        for (Eigen::Index i = 0; i < 6; ++i) q.raw()[i] = p.value()[i];
        const Tensor target = rand_tensor({6}, rng, false);

        auto loss_of = [&](Tensor& t) { return mean(mul(sub(t, target), sub(t, target))); };
        Adam a({p}, 0.02), b({q}, 0.02);
        for (int i = 0; i < 5; ++i) {
            loss_of(p).backward();
            a.step();
        }
        Adam resumed({q}, 0.02);
        for (int i = 0; i < 3; ++i) {
            loss_of(q).backward();
            b.step();
        }
        resumed.load_state(b.step_count(), b.moment1(), b.moment2());
        for (int i = 0; i < 2; ++i) {
            loss_of(q).backward();
            resumed.step();
        }
        for (Eigen::Index i = 0; i < 6; ++i) CHECK(p.value()[i] == q.value()[i]);
    }
    SUBCASE("state shape mismatch is rejected") {
        Tensor p = Tensor::from_vector({2}, {1.0, 2.0}, true);
        Adam opt({p}, 0.01);
        CHECK_THROWS_AS(opt.load_state(1, {}, {}), ShapeError);
    }
}

TEST_CASE("gradient clipping scales to the requested norm") {
    Tensor a = Tensor::from_vector({2}, {3.0, 0.0}, true);
    Tensor b = Tensor::from_vector({1}, {4.0}, true);
    add(sum(mul(a, a)), sum(mul(b, b))).backward();
    // grads: (6, 0) and (8): norm 10
    const double norm = clip_grad_norm({a, b}, 5.0);
    CHECK(norm == doctest::Approx(10.0));
    CHECK(a.grad()[0] == doctest::Approx(3.0));
    CHECK(b.grad()[0] == doctest::Approx(4.0));
    const double again = clip_grad_norm({a, b}, 50.0);
    CHECK(again == doctest::Approx(5.0));
    CHECK(a.grad()[0] == doctest::Approx(3.0));
}

TEST_CASE("shape bookkeeping and element access") {
    const Tensor t = Tensor::from_vector({2, 3}, {1, 2, 3, 4, 5, 6});
    CHECK(t.ndim() == 2);
    CHECK(t.dim(1) == 3);
    CHECK(t.numel() == 6);
    CHECK(t.at({1, 2}) == 6.0);
    CHECK_THROWS_AS(t.at({2, 0}), ShapeError);
    CHECK_THROWS_AS(t.item(), ShapeError);
    CHECK_THROWS_AS(Tensor::from_vector({2, 2}, {1.0}), ShapeError);
    CHECK_THROWS_AS(Tensor::zeros({0, 3}), ShapeError);
    CHECK(Tensor::scalar(4.5).item() == 4.5);

    const Tensor c = concat({Tensor::from_vector({2, 2}, {1, 2, 3, 4}),
                             Tensor::from_vector({2, 1}, {9, 8})},
                            1);
    const std::vector<double> want{1, 2, 9, 3, 4, 8};
    for (int i = 0; i < 6; ++i) CHECK(c.value()[i] == want[static_cast<std::size_t>(i)]);

    const Tensor s = slice(c, 1, 2, 1);
    CHECK(s.value()[0] == 9.0);
    CHECK(s.value()[1] == 8.0);

    const Tensor emb = embedding(Tensor::from_vector({3, 2}, {0, 1, 10, 11, 20, 21}), {2, 0});
    CHECK(emb.value()[0] == 20.0);
    CHECK(emb.value()[3] == 1.0);
    CHECK_THROWS_AS(embedding(Tensor::zeros({3, 2}), {3}), ShapeError);
}
