#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "gavatar/errors.hpp"
#include "gavatar/texattn.hpp"
#include "test_util.hpp"

using namespace gavatar;

namespace {

Triplane make_plane(ParamStore& store, int n_f = 4, int n_d1 = 2) {
    Triplane tp;
    tp.init(store, "tp", n_f, n_d1, Eigen::Vector3d(-1, -1, -1), Eigen::Vector3d(1, 1, 1));
    return tp;
}

void randomize(ParamStore& store, Rng& rng, double scale = 0.5) {
    for (auto& [name, t] : store.params)
        for (double& x : t.v) x = rng.uniform(-scale, scale);
}

// independent oracle: sum over all grid nodes of separable hat weights
Eigen::VectorXd oracle_sample(const ParamStore& store, const Triplane& tp, const Eigen::Vector3d& p) {
    const char* names[3] = {"tp.xy", "tp.xz", "tp.yz"};
    const int axes[3][2] = {{0, 1}, {0, 2}, {1, 2}};
    const int nf = tp.n_f(), nd = tp.n_d1();
    Eigen::VectorXd out = Eigen::VectorXd::Zero(3 * nd);
    for (int pl = 0; pl < 3; ++pl) {
        const Tensor& grid = store.at(names[pl]);
        double g[2];
        for (int a = 0; a < 2; ++a) {
            double u = (p[axes[pl][a]] - tp.box_min()[axes[pl][a]]) /
                       (tp.box_max()[axes[pl][a]] - tp.box_min()[axes[pl][a]]);
            u = std::clamp(u, 0.0, 1.0);
            g[a] = u * (nf - 1);
        }
        for (int x = 0; x < nf; ++x)
            for (int y = 0; y < nf; ++y) {
                double wx = std::max(0.0, 1.0 - std::abs(g[0] - x));
                double wy = std::max(0.0, 1.0 - std::abs(g[1] - y));
                if (wx * wy == 0) continue;
                for (int d = 0; d < nd; ++d)
                    out[pl * nd + d] +=
                        wx * wy * grid.v[(static_cast<std::size_t>(x) * nf + y) * nd + d];
            }
    }
    return out;
}

} // namespace

TEST_CASE("triplane: exact grid node returns the stored node features") {
    ParamStore store;
    Triplane tp = make_plane(store);
    Rng rng(1);
    randomize(store, rng);
    // node (1,2) of a 4-grid over [-1,1]: u = 1/3, v = 2/3
    Eigen::Vector3d p(-1 + 2.0 / 3, -1 + 4.0 / 3, 0); // x->1/3, y->2/3, z->1/2
    Eigen::VectorXd s = tp.sample(p);
    CHECK(s.size() == 3 * tp.n_d1());
    const Tensor& xy = store.at("tp.xy");
    for (int d = 0; d < 2; ++d)
        CHECK(s[d] == doctest::Approx(xy.v[(1 * 4 + 2) * 2 + d]).epsilon(1e-12));
}

TEST_CASE("triplane: cell-center sample averages the four corner nodes on each plane") {
    ParamStore store;
    Triplane tp = make_plane(store);
    Rng rng(2);
    randomize(store, rng);
    // midpoint between nodes (0,0),(1,0),(0,1),(1,1): u = v = 1/6 -> g = 0.5
    double c = -1 + 1.0 / 3;
    Eigen::Vector3d p(c, c, c);
    Eigen::VectorXd s = tp.sample(p);
    const char* names[3] = {"tp.xy", "tp.xz", "tp.yz"};
    for (int pl = 0; pl < 3; ++pl) {
        const Tensor& grid = store.at(names[pl]);
        for (int d = 0; d < 2; ++d) {
            double mean = (grid.v[(0 * 4 + 0) * 2 + d] + grid.v[(1 * 4 + 0) * 2 + d] +
                           grid.v[(0 * 4 + 1) * 2 + d] + grid.v[(1 * 4 + 1) * 2 + d]) /
                          4.0;
            CHECK(s[pl * 2 + d] == doctest::Approx(mean).epsilon(1e-12));
        }
    }
}

TEST_CASE("triplane matches the gather-and-lerp oracle on 1000 random points") {
    ParamStore store;
    Triplane tp = make_plane(store, 8, 3);
    Rng rng(3);
    randomize(store, rng);
    for (int i = 0; i < 1000; ++i) {
        Eigen::Vector3d p(rng.uniform(-1.5, 1.5), rng.uniform(-1.5, 1.5), rng.uniform(-1.5, 1.5));
        CHECK((tp.sample(p) - oracle_sample(store, tp, p)).norm() < 1e-7);
    }
}

TEST_CASE("triplane: out-of-box points clamp to the boundary") {
    ParamStore store;
    Triplane tp = make_plane(store);
    Rng rng(4);
    randomize(store, rng);
    Eigen::Vector3d far(10, -30, 5);
    Eigen::Vector3d edge(1, -1, 1);
    CHECK(tp.sample(far) == tp.sample(edge));
}

TEST_CASE("triplane gradients hit only the touched nodes and match finite differences") {
    ParamStore store;
    Triplane tp = make_plane(store, 6, 2);
    Rng rng(5);
    randomize(store, rng);
    Eigen::Vector3d p(rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1));
    Eigen::VectorXd probe(3 * 2);
    for (int i = 0; i < probe.size(); ++i) probe[i] = rng.uniform(-1, 1);
    store.zero_grad();
    tp.sample_backward(p, probe);

    const double h = 1e-6;
    int touched = 0;
    for (auto& [name, t] : store.params) {
        for (std::size_t i = 0; i < t.size(); ++i) {
            double x0 = t.v[i];
            t.v[i] = x0 + h;
            double fp = probe.dot(tp.sample(p));
            t.v[i] = x0 - h;
            double fm = probe.dot(tp.sample(p));
            t.v[i] = x0;
            double fd = (fp - fm) / (2 * h);
            if (fd == 0.0)
                CHECK(t.g[i] == 0.0);
            else {
                CHECK(testutil::rel_err(t.g[i], fd, 1e-8) < 1e-5);
                ++touched;
            }
        }
    }
    CHECK(touched <= 12 * 2); // at most 4 nodes per plane, n_d1=2 channels each
    CHECK(touched > 0);
}

TEST_CASE("texture attention: zero inputs with zero biases give zero output") {
    ParamStore store;
    Rng rng(6);
    TextureAttention att;
    att.init(store, "att", 8, 6, 5, rng);
    Eigen::VectorXd v = att.forward(Eigen::VectorXd::Zero(8), Eigen::VectorXd::Zero(6));
    CHECK(v.norm() == 0.0);
}

TEST_CASE("texture attention: saturated-closed gate makes v independent of h") {
    ParamStore store;
    Rng rng(7);
    TextureAttention att;
    att.init(store, "att", 8, 6, 5, rng);
    Tensor& gb = store.at("att.gate.b");
    std::fill(gb.v.begin(), gb.v.end(), -1e3);
    std::fill(store.at("att.gate.w").v.begin(), store.at("att.gate.w").v.end(), 0.0);
    Eigen::VectorXd F(8), h1(6), h2(6);
    for (int i = 0; i < 8; ++i) F[i] = rng.uniform(-1, 1);
    for (int i = 0; i < 6; ++i) {
        h1[i] = rng.uniform(-1, 1);
        h2[i] = rng.uniform(-1, 1);
    }
    CHECK((att.forward(F, h1) - att.forward(F, h2)).norm() < 1e-12);
    CHECK_THROWS_AS(att.forward(Eigen::VectorXd::Zero(7), h1), ValidationError);
}

TEST_CASE("texture attention gradients match finite differences") {
    for (int trial = 0; trial < 5; ++trial) {
        ParamStore store;
        Rng rng(100 + trial);
        TextureAttention att;
        att.init(store, "att", 6, 5, 4, rng);
        for (auto& [name, t] : store.params)
            for (double& x : t.v) x += rng.uniform(-0.3, 0.3);
        Eigen::VectorXd F(6), hp(5), probe(4);
        for (int i = 0; i < 6; ++i) F[i] = rng.uniform(-1, 1);
        for (int i = 0; i < 5; ++i) hp[i] = rng.uniform(-1, 1);
        for (int i = 0; i < 4; ++i) probe[i] = rng.uniform(-1, 1);

        TextureAttention::Context ctx;
        att.forward(F, hp, &ctx);
        store.zero_grad();
        Eigen::VectorXd gF = Eigen::VectorXd::Zero(6), gh = Eigen::VectorXd::Zero(5);
        att.backward(ctx, probe, gF, gh);

        auto loss = [&]() { return probe.dot(att.forward(F, hp)); };
        const double h = 1e-5;
        auto fd_check = [&](double* x, double analytic) {
            double x0 = *x;
            *x = x0 + h;
            double fp = loss();
            *x = x0 - h;
            double fm = loss();
            *x = x0;
            CHECK(testutil::rel_err(analytic, (fp - fm) / (2 * h), 1e-7) < 1e-4);
        };
        for (auto& [name, t] : store.params)
            for (std::size_t i = 0; i < t.size(); ++i) fd_check(&t.v[i], t.g[i]);
        for (int i = 0; i < 6; ++i) fd_check(&F[i], gF[i]);
        for (int i = 0; i < 5; ++i) fd_check(&hp[i], gh[i]);
    }
}

TEST_CASE("decoder: zero-initialized heads give zero residuals of the right shape") {
    ParamStore store;
    Rng rng(8);
    TextureDecoder dec;
    dec.init(store, "dec", 10, rng);
    Eigen::VectorXd v(10);
    for (int i = 0; i < 10; ++i) v[i] = rng.uniform(-1, 1);
    ResidualSample r = dec.decode(v, 0.7);
    CHECK(r.d_mean.norm() == 0.0);
    CHECK(r.d_log_scale.norm() == 0.0);
    CHECK(r.d_rot.norm() == 0.0);
    CHECK(r.d_alpha == 0.0);
}

TEST_CASE("decoder: position offset scales linearly with the triangle scale") {
    ParamStore store;
    Rng rng(9);
    TextureDecoder dec;
    dec.init(store, "dec", 10, rng);
    for (auto& [name, t] : store.params)
        for (double& x : t.v) x += rng.uniform(-0.1, 0.1);
    Eigen::VectorXd v(10);
    for (int i = 0; i < 10; ++i) v[i] = rng.uniform(-1, 1);
    ResidualSample a = dec.decode(v, 1.0);
    ResidualSample b = dec.decode(v, 2.0);
    CHECK((b.d_mean - 2 * a.d_mean).norm() < 1e-12);
    CHECK((b.d_log_scale - a.d_log_scale).norm() == 0.0);
    // raw head output times 0.01 * scale
    CHECK(a.d_mean.norm() > 0.0);
}

TEST_CASE("decoder gradients match finite differences through trunk and all heads") {
    ParamStore store;
    Rng rng(10);
    TextureDecoder dec;
    dec.init(store, "dec", 6, rng);
    for (auto& [name, t] : store.params)
        for (double& x : t.v) x += rng.uniform(-0.1, 0.1);
    Eigen::VectorXd v(6);
    for (int i = 0; i < 6; ++i) v[i] = rng.uniform(-1, 1);
    Eigen::Vector3d pm(0.3, -0.2, 0.9), ps(0.1, 0.8, -0.4);
    Eigen::Vector4d pr(0.5, -0.1, 0.2, 0.7);
    double pa = -0.6;
    const double tri_scale = 0.8;

    TextureDecoder::Context ctx;
    dec.decode(v, tri_scale, &ctx);
    store.zero_grad();
    Eigen::VectorXd gv = dec.backward(ctx, pm, ps, pr, pa);

    auto loss = [&]() {
        ResidualSample r = dec.decode(v, tri_scale);
        return pm.dot(r.d_mean) + ps.dot(r.d_log_scale) + pr.dot(r.d_rot) + pa * r.d_alpha;
    };
    const double h = 1e-5;
    auto fd_check = [&](double* x, double analytic) {
        double x0 = *x;
        *x = x0 + h;
        double fp = loss();
        *x = x0 - h;
        double fm = loss();
        *x = x0;
        CHECK(testutil::rel_err(analytic, (fp - fm) / (2 * h), 1e-7) < 1e-4);
    };
    for (auto& [name, t] : store.params)
        for (int k = 0; k < 6; ++k) {
            std::size_t i = rng.uniform_int(0, static_cast<int>(t.size()) - 1);
            fd_check(&t.v[i], t.g[i]);
        }
    for (int i = 0; i < 6; ++i) fd_check(&v[i], gv[i]);
}
