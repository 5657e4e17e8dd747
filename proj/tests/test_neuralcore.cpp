#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "gavatar/errors.hpp"
#include "gavatar/neuralcore.hpp"
#include "gavatar/rng.hpp"
#include "test_util.hpp"

using namespace gavatar;

TEST_CASE("param store: unique names, matching grad shapes, zero_grad") {
    ParamStore store;
    Tensor& t = store.add("a", {2, 3});
    CHECK(t.size() == 6);
    CHECK(t.g.size() == 6);
    CHECK_THROWS_AS(store.add("a", {1}), ValidationError);
    CHECK_THROWS_AS(store.at("missing"), ValidationError);
    t.g[0] = 5;
    store.zero_grad();
    CHECK(store.at("a").g[0] == 0.0);
    CHECK_THROWS_AS(store.add("bad", {0, 2}), ValidationError);
}

TEST_CASE("conv encoder: zero parameters give a zero feature") {
    ParamStore store;
    Rng rng(1);
    ConvEncoder enc;
    enc.init(store, "enc", 16, 16, 32, rng);
    for (auto& [name, t] : store.params) std::fill(t.v.begin(), t.v.end(), 0.0);
    Image img(16, 16);
    for (auto& v : img.data) v = rng.uniform(0, 1);
    Eigen::VectorXd f = enc.forward(img);
    CHECK(f.norm() == 0.0);
}

TEST_CASE("conv encoder: deterministic for a fixed seed and input") {
    Image img(16, 16);
    {
        Rng rng(9);
        for (auto& v : img.data) v = rng.uniform(0, 1);
    }
    Eigen::VectorXd a, b;
    for (int run = 0; run < 2; ++run) {
        ParamStore store;
        Rng rng(42);
        ConvEncoder enc;
        enc.init(store, "enc", 16, 16, 24, rng);
        (run == 0 ? a : b) = enc.forward(img);
    }
    CHECK(a == b);
}

TEST_CASE("conv encoder: input size is validated") {
    ParamStore store;
    Rng rng(3);
    ConvEncoder enc;
    enc.init(store, "enc", 16, 16, 8, rng);
    Image wrong(8, 8);
    CHECK_THROWS_AS(enc.forward(wrong), ValidationError);
}

TEST_CASE("conv encoder gradients match finite differences") {
    for (int trial = 0; trial < 3; ++trial) {
        ParamStore store;
        Rng rng(100 + trial);
        ConvEncoder enc;
        enc.init(store, "enc", 8, 8, 6, rng);
        Image img(8, 8);
        for (auto& v : img.data) v = rng.uniform(0, 1);
        Eigen::VectorXd probe(6);
        for (int i = 0; i < 6; ++i) probe[i] = rng.uniform(-1, 1);

        ConvEncoder::Context ctx;
        enc.forward(img, &ctx);
        store.zero_grad();
        Image g_img(8, 8);
        enc.backward(ctx, probe, &g_img);

        auto loss = [&]() { return probe.dot(enc.forward(img)); };
        const double h = 1e-5;
        // spot-check a few entries of every parameter tensor
        for (auto& [name, t] : store.params) {
            for (int k = 0; k < 4; ++k) {
                std::size_t i = rng.uniform_int(0, static_cast<int>(t.size()) - 1);
                double x0 = t.v[i];
                t.v[i] = x0 + h;
                double fp = loss();
                t.v[i] = x0 - h;
                double fm = loss();
                t.v[i] = x0;
                CHECK(testutil::rel_err(t.g[i], (fp - fm) / (2 * h), 1e-6) < 1e-5);
            }
        }
        for (int k = 0; k < 8; ++k) {
            std::size_t i = rng.uniform_int(0, static_cast<int>(img.data.size()) - 1);
            double x0 = img.data[i];
            img.data[i] = x0 + h;
            double fp = loss();
            img.data[i] = x0 - h;
            double fm = loss();
            img.data[i] = x0;
            CHECK(testutil::rel_err(g_img.data[i], (fp - fm) / (2 * h), 1e-6) < 1e-5);
        }
    }
}

TEST_CASE("softmax attention: degenerate and oracle cases") {
    Rng rng(7);
    Eigen::VectorXd q(4);
    for (int i = 0; i < 4; ++i) q[i] = rng.uniform(-1, 1);

    SUBCASE("single entry returns its value row") {
        Eigen::MatrixXd K(1, 4), V(1, 3);
        for (int i = 0; i < 4; ++i) K(0, i) = rng.uniform(-1, 1);
        for (int i = 0; i < 3; ++i) V(0, i) = rng.uniform(-1, 1);
        CHECK((softmax_attention(q, K, V) - V.row(0).transpose()).norm() < 1e-12);
    }
    SUBCASE("identical keys average the values") {
        Eigen::MatrixXd K(5, 4), V(5, 3);
        Eigen::RowVector4d row;
        for (int i = 0; i < 4; ++i) row[i] = rng.uniform(-1, 1);
        for (int r = 0; r < 5; ++r) {
            K.row(r) = row;
            for (int i = 0; i < 3; ++i) V(r, i) = rng.uniform(-1, 1);
        }
        Eigen::VectorXd mean = V.colwise().mean().transpose();
        CHECK((softmax_attention(q, K, V) - mean).norm() < 1e-12);
    }
    SUBCASE("random case matches a direct softmax oracle") {
        Eigen::MatrixXd K(6, 4), V(6, 3);
        for (int r = 0; r < 6; ++r) {
            for (int i = 0; i < 4; ++i) K(r, i) = rng.uniform(-2, 2);
            for (int i = 0; i < 3; ++i) V(r, i) = rng.uniform(-2, 2);
        }
        Eigen::VectorXd s = K * q / 2.0; // sqrt(d)=2
        Eigen::VectorXd w = s.array().exp();
        w /= w.sum();
        CHECK(std::abs(w.sum() - 1.0) < 1e-7);
        CHECK(w.minCoeff() >= 0.0);
        Eigen::VectorXd oracle = Eigen::VectorXd::Zero(3);
        for (int r = 0; r < 6; ++r) oracle += w[r] * V.row(r).transpose();
        CHECK((softmax_attention(q, K, V) - oracle).norm() < 1e-6);
    }
    SUBCASE("empty key set is an error") {
        Eigen::MatrixXd K(0, 4), V(0, 3);
        CHECK_THROWS_AS(softmax_attention(q, K, V), ValidationError);
    }
}

TEST_CASE("softmax attention gradients match finite differences") {
    for (int trial = 0; trial < 5; ++trial) {
        Rng rng(300 + trial);
        const int n = rng.uniform_int(1, 6), d = 4, dv = 3;
        Eigen::VectorXd q(d);
        Eigen::MatrixXd K(n, d), V(n, dv);
        for (int i = 0; i < d; ++i) q[i] = rng.uniform(-1, 1);
        for (int r = 0; r < n; ++r) {
            for (int i = 0; i < d; ++i) K(r, i) = rng.uniform(-1, 1);
            for (int i = 0; i < dv; ++i) V(r, i) = rng.uniform(-1, 1);
        }
        Eigen::VectorXd probe(dv);
        for (int i = 0; i < dv; ++i) probe[i] = rng.uniform(-1, 1);

        Eigen::VectorXd gq = Eigen::VectorXd::Zero(d);
        Eigen::MatrixXd gK = Eigen::MatrixXd::Zero(n, d), gV = Eigen::MatrixXd::Zero(n, dv);
        softmax_attention_backward(q, K, V, probe, gq, gK, gV);

        auto loss = [&]() { return probe.dot(softmax_attention(q, K, V)); };
        const double h = 1e-5;
        auto fd_check = [&](double* x, double analytic) {
            double x0 = *x;
            *x = x0 + h;
            double fp = loss();
            *x = x0 - h;
            double fm = loss();
            *x = x0;
            CHECK(testutil::rel_err(analytic, (fp - fm) / (2 * h), 1e-7) < 1e-5);
        };
        for (int i = 0; i < d; ++i) fd_check(&q[i], gq[i]);
        for (int r = 0; r < n; ++r)
            for (int i = 0; i < d; ++i) fd_check(&K(r, i), gK(r, i));
        for (int r = 0; r < n; ++r)
            for (int i = 0; i < dv; ++i) fd_check(&V(r, i), gV(r, i));
    }
}

TEST_CASE("mlp: zero final layer yields zero output") {
    ParamStore store;
    Rng rng(11);
    Mlp mlp;
    mlp.init(store, "m", {5, 16, 16, 3}, rng, true);
    Eigen::VectorXd x(5);
    for (int i = 0; i < 5; ++i) x[i] = rng.uniform(-2, 2);
    CHECK(mlp.forward(x).norm() == 0.0);
}

TEST_CASE("mlp: identity-configured single linear layer reproduces the input") {
    ParamStore store;
    Rng rng(12);
    Mlp mlp;
    mlp.init(store, "m", {4, 4}, rng, false);
    Tensor& W = store.at("m.l0.w");
    std::fill(W.v.begin(), W.v.end(), 0.0);
    for (int i = 0; i < 4; ++i) W.v[i * 4 + i] = 1.0;
    Eigen::VectorXd x(4);
    for (int i = 0; i < 4; ++i) x[i] = rng.uniform(-2, 2);
    CHECK((mlp.forward(x) - x).norm() == 0.0);
}

TEST_CASE("mlp gradients match finite differences over random configurations") {
    for (int trial = 0; trial < 12; ++trial) {
        Rng rng(400 + trial);
        ParamStore store;
        std::vector<int> dims = {rng.uniform_int(2, 6), rng.uniform_int(3, 10), rng.uniform_int(2, 5)};
        if (trial % 3 == 0) dims.insert(dims.begin() + 1, rng.uniform_int(3, 8));
        Mlp mlp;
        mlp.init(store, "m", dims, rng, false);
        Eigen::VectorXd x(dims.front());
        for (int i = 0; i < x.size(); ++i) x[i] = rng.uniform(-1, 1);
        Eigen::VectorXd probe(dims.back());
        for (int i = 0; i < probe.size(); ++i) probe[i] = rng.uniform(-1, 1);

        Mlp::Context ctx;
        mlp.forward(x, &ctx);
        store.zero_grad();
        Eigen::VectorXd gx = mlp.backward(ctx, probe);

        auto loss = [&]() { return probe.dot(mlp.forward(x)); };
        const double h = 1e-5;
        auto fd_check = [&](double* p, double analytic) {
            double x0 = *p;
            *p = x0 + h;
            double fp = loss();
            *p = x0 - h;
            double fm = loss();
            *p = x0;
            CHECK(testutil::rel_err(analytic, (fp - fm) / (2 * h), 1e-7) < 1e-5);
        };
        for (auto& [name, t] : store.params)
            for (std::size_t i = 0; i < t.size(); ++i) fd_check(&t.v[i], t.g[i]);
        for (int i = 0; i < x.size(); ++i) fd_check(&x[i], gx[i]);
    }
}

TEST_CASE("mlp shape mismatches are errors") {
    ParamStore store;
    Rng rng(13);
    Mlp mlp;
    mlp.init(store, "m", {3, 8, 2}, rng, false);
    CHECK_THROWS_AS(mlp.forward(Eigen::VectorXd::Zero(4)), ValidationError);
    CHECK_THROWS_AS(mlp.attach(store, "m2", {5}), ValidationError);
}
