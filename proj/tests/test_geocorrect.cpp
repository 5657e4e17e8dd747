#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "gavatar/errors.hpp"
#include "gavatar/geocorrect.hpp"
#include "test_util.hpp"

using namespace gavatar;

namespace {

ExpressionBank make_bank(int views = 3, int n_expr = 4) {
    ExpressionBank b;
    b.view_count = views;
    b.n_expr = n_expr;
    return b;
}

std::vector<Image> random_frames(Rng& rng, int n, int size = 8) {
    std::vector<Image> frames;
    for (int i = 0; i < n; ++i) {
        Image img(size, size);
        for (auto& v : img.data) v = rng.uniform(0, 1);
        frames.push_back(std::move(img));
    }
    return frames;
}

} // namespace

TEST_CASE("bank update: single EMA step from zero") {
    ExpressionBank bank = make_bank();
    Eigen::VectorXd v(4);
    v << 1, -2, 3, 0.5;
    bank.update(7, 1, v, 0.9);
    CHECK((bank.entries.at(7)[1] - 0.1 * v).norm() < 1e-15);
    CHECK(bank.entries.at(7)[0].norm() == 0.0);
    CHECK(bank.entries.at(7)[2].norm() == 0.0);
}

TEST_CASE("bank update: zero momentum copies the regression exactly") {
    ExpressionBank bank = make_bank();
    Eigen::VectorXd v(4);
    v << 0.25, -1, 2, 4;
    bank.update(0, 0, Eigen::VectorXd::Ones(4), 0.5);
    bank.update(0, 0, v, 0.0);
    CHECK(bank.entries.at(0)[0] == v);
}

TEST_CASE("bank update: repeated constant updates follow the geometric closed form") {
    ExpressionBank bank = make_bank();
    Eigen::VectorXd v(4);
    v << 2, -1, 0.5, 3;
    const double m = 0.8;
    const int k = 12;
    for (int i = 0; i < k; ++i) bank.update(3, 2, v, m);
    Eigen::VectorXd expect = (1.0 - std::pow(m, k)) * v;
    CHECK((bank.entries.at(3)[2] - expect).norm() < 1e-6);
}

TEST_CASE("bank update: slot error to the fixed point decays by factor m") {
    ExpressionBank bank = make_bank();
    Eigen::VectorXd v(4);
    v << 1, 2, 3, 4;
    const double m = 0.6;
    bank.update(1, 0, v, m);
    double prev = (bank.entries.at(1)[0] - v).norm();
    for (int i = 0; i < 5; ++i) {
        bank.update(1, 0, v, m);
        double cur = (bank.entries.at(1)[0] - v).norm();
        CHECK(cur == doctest::Approx(m * prev).epsilon(1e-10));
        prev = cur;
    }
}

TEST_CASE("bank update: validation") {
    ExpressionBank bank = make_bank();
    CHECK_THROWS_AS(bank.update(0, 3, Eigen::VectorXd::Zero(4), 0.5), ValidationError);
    CHECK_THROWS_AS(bank.update(0, -1, Eigen::VectorXd::Zero(4), 0.5), ValidationError);
    CHECK_THROWS_AS(bank.update(0, 0, Eigen::VectorXd::Zero(3), 0.5), ValidationError);
}

TEST_CASE("bank apply: missing timestamp, constant slots, two-view mean") {
    ExpressionBank bank = make_bank(2, 3);
    Eigen::VectorXd psi(3);
    psi << 5, 6, 7;
    CHECK(bank.apply(99, psi) == psi);

    Eigen::VectorXd u(3), v(3);
    u << 1, 0, -1;
    v << 3, 2, 1;
    bank.update(4, 0, u, 0.0);
    bank.update(4, 1, v, 0.0);
    CHECK((bank.apply(4, psi) - (psi + (u + v) / 2)).norm() < 1e-15);

    ExpressionBank cbank = make_bank(3, 3);
    for (int i = 0; i < 3; ++i) cbank.update(0, i, u, 0.0);
    CHECK((cbank.apply(0, psi) - (psi + u)).norm() < 1e-15);
}

TEST_CASE("momentum schedule endpoints and midpoint") {
    CHECK(momentum_schedule(0, 1000) == doctest::Approx(0.9));
    CHECK(momentum_schedule(1000, 1000) == doctest::Approx(0.1));
    CHECK(momentum_schedule(500, 1000) == doctest::Approx(0.5));
    CHECK_THROWS_AS(momentum_schedule(-1, 10), ValidationError);
    CHECK_THROWS_AS(momentum_schedule(11, 10), ValidationError);
}

TEST_CASE("regress: zero-initialized correction head outputs zero") {
    ParamStore store;
    Rng rng(5);
    CorrectionNet net;
    net.init(store, "corr", 8, 8, 16, 6, rng);
    auto frames = random_frames(rng, 3);
    auto [dpsi, fused] = net.regress(frames);
    CHECK(dpsi.norm() == 0.0);
    CHECK(fused.allFinite());
}

TEST_CASE("regress: empty view list is an error; one view degenerates cleanly") {
    ParamStore store;
    Rng rng(6);
    CorrectionNet net;
    net.init(store, "corr", 8, 8, 16, 6, rng);
    CHECK_THROWS_AS(net.regress({}), ValidationError);

    auto frames = random_frames(rng, 1);
    auto [dpsi, fused] = net.regress(frames);
    // single view: attention must return that view's feature unchanged
    ConvEncoder enc;
    enc.attach(store, "corr.enc", 8, 8, 16);
    CHECK((fused - enc.forward(frames[0])).norm() < 1e-12);
}

TEST_CASE("regress is invariant to view permutation") {
    ParamStore store;
    Rng rng(7);
    CorrectionNet net;
    net.init(store, "corr", 8, 8, 16, 6, rng);
    for (auto& [name, t] : store.params)
        for (double& x : t.v) x += rng.uniform(-0.05, 0.05); // make the head nonzero
    auto frames = random_frames(rng, 4);
    auto [dpsi, fused] = net.regress(frames);
    std::vector<Image> shuffled = {frames[2], frames[0], frames[3], frames[1]};
    auto [dpsi2, fused2] = net.regress(shuffled);
    CHECK((dpsi - dpsi2).norm() < 1e-12);
    CHECK((fused - fused2).norm() < 1e-12);
}

TEST_CASE("regress gradients match finite differences end to end") {
    ParamStore store;
    Rng rng(8);
    CorrectionNet net;
    net.init(store, "corr", 8, 8, 8, 3, rng);
    for (auto& [name, t] : store.params)
        for (double& x : t.v) x += rng.uniform(-0.05, 0.05);
    auto frames = random_frames(rng, 2);
    Eigen::VectorXd probe_dpsi(3), probe_fused(8);
    for (int i = 0; i < 3; ++i) probe_dpsi[i] = rng.uniform(-1, 1);
    for (int i = 0; i < 8; ++i) probe_fused[i] = rng.uniform(-1, 1);

    CorrectionNet::Context ctx;
    net.regress(frames, &ctx);
    store.zero_grad();
    net.backward(ctx, probe_dpsi, probe_fused);

    auto loss = [&]() {
        auto [d, f] = net.regress(frames);
        return probe_dpsi.dot(d) + probe_fused.dot(f);
    };
    const double h = 1e-5;
    int checked = 0;
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
            ++checked;
        }
    }
    CHECK(checked > 0);
    // the encoder's first-layer weight gradient is nonzero (end-to-end flow)
    const Tensor& w0 = store.at("corr.enc.conv0.w");
    double mag = 0;
    for (double g : w0.g) mag += std::abs(g);
    CHECK(mag > 0.0);
}
