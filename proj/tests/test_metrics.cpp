#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "gavatar/errors.hpp"
#include "gavatar/metrics.hpp"
#include "gavatar/rng.hpp"
#include "test_util.hpp"

using namespace gavatar;

namespace {

Image random_image(Rng& rng, int w = 12, int h = 10) {
    Image img(w, h);
    for (auto& v : img.data) v = rng.uniform(0, 1);
    return img;
}

} // namespace

TEST_CASE("psnr: cap, constant offset, symmetry, shape check") {
    Rng rng(1);
    Image a = random_image(rng);
    CHECK(psnr(a, a) == 99.0);

    Image b = a;
    for (auto& v : b.data) v += 0.1;
    CHECK(psnr(a, b) == doctest::Approx(20.0).epsilon(1e-12));
    CHECK(psnr(a, b) == psnr(b, a));

    Image c(5, 5);
    CHECK_THROWS_AS(psnr(a, c), ValidationError);
}

TEST_CASE("ssim identities and bounds") {
    Rng rng(2);
    Image x = random_image(rng, 16, 16);
    CHECK(ssim(x, x) == 1.0);

    Image inv = x;
    for (auto& v : inv.data) v = 1.0 - v;
    CHECK(ssim(x, inv) < ssim(x, x));

    for (int trial = 0; trial < 5; ++trial) {
        Image a = random_image(rng, 16, 16), b = random_image(rng, 16, 16);
        double s = ssim(a, b);
        CHECK(s >= -1.0);
        CHECK(s <= 1.0);
        CHECK(std::abs(s - ssim(b, a)) < 1e-9);
    }
    Image c(5, 5);
    CHECK_THROWS_AS(ssim(x, c), ValidationError);
}

TEST_CASE("ssim gradient matches finite differences") {
    Rng rng(3);
    Image a = random_image(rng, 9, 8), b = random_image(rng, 9, 8);
    Image g(9, 8);
    ssim_with_grad(a, b, g);
    const double h = 1e-6;
    for (int k = 0; k < 40; ++k) {
        std::size_t i = rng.uniform_int(0, static_cast<int>(a.data.size()) - 1);
        double x0 = a.data[i];
        a.data[i] = x0 + h;
        double fp = ssim(a, b);
        a.data[i] = x0 - h;
        double fm = ssim(a, b);
        a.data[i] = x0;
        CHECK(testutil::rel_err(g.data[i], (fp - fm) / (2 * h), 1e-8) < 1e-5);
    }
}
