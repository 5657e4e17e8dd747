#include <chrono>
#include <cstdio>
#include <string>

#include "gavatar/rasterizer.hpp"
#include "gavatar/rng.hpp"

using namespace gavatar;

namespace {

WorldGaussians random_cloud(int n, Rng& rng) {
    WorldGaussians w;
    w.sh_degree = 0;
    for (int i = 0; i < n; ++i) {
        w.means.emplace_back(rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0), rng.uniform(2.0, 5.0));
        Eigen::Vector4d q(rng.normal(), rng.normal(), rng.normal(), rng.normal());
        q.normalize();
        Eigen::Quaterniond quat(q[0], q[1], q[2], q[3]);
        w.rotations.push_back(quat.toRotationMatrix());
        w.scales.emplace_back(rng.uniform(0.01, 0.1), rng.uniform(0.01, 0.1), rng.uniform(0.01, 0.1));
        w.opacities.push_back(rng.uniform(0.2, 0.9));
        w.sh_coeffs.emplace_back(rng.uniform(0.0, 1.0), rng.uniform(0.0, 1.0), rng.uniform(0.0, 1.0));
        w.source.push_back(i);
    }
    return w;
}

double time_ms(const WorldGaussians& w, const Camera& cam, RasterMode mode, int reps) {
    Eigen::Vector3d bg(0.1, 0.1, 0.1);
    auto t0 = std::chrono::steady_clock::now();
    for (int r = 0; r < reps; ++r) render_gaussians(w, cam, bg, mode);
    auto t1 = std::chrono::steady_clock::now();
    return std::chrono::duration<double, std::milli>(t1 - t0).count() / reps;
}

} // namespace

int main(int argc, char** argv) {
    const int size = argc > 1 ? std::stoi(argv[1]) : 128;
    const int reps = argc > 2 ? std::stoi(argv[2]) : 3;
    Camera cam;
    cam.fx = cam.fy = size;
    cam.cx = cam.cy = size / 2.0;
    cam.width = cam.height = size;
    Rng rng(42);

    std::printf("%dx%d image, %d reps per mode\n", size, size, reps);
    std::printf("%8s %12s %12s %10s %12s\n", "splats", "exact (ms)", "tiled (ms)", "speedup", "max |diff|");
    for (int n : {100, 500, 2000, 8000}) {
        WorldGaussians w = random_cloud(n, rng);
        auto exact = render_gaussians(w, cam, Eigen::Vector3d(0.1, 0.1, 0.1), RasterMode::Exact);
        auto tiled = render_gaussians(w, cam, Eigen::Vector3d(0.1, 0.1, 0.1), RasterMode::Tiled);
        double md = 0;
        for (std::size_t i = 0; i < exact.out.image.data.size(); ++i)
            md = std::max(md, std::abs(exact.out.image.data[i] - tiled.out.image.data[i]));
        const double te = time_ms(w, cam, RasterMode::Exact, reps);
        const double tt = time_ms(w, cam, RasterMode::Tiled, reps);
        std::printf("%8d %12.2f %12.2f %9.1fx %12.3g\n", n, te, tt, te / tt, md);
    }
    return 0;
}
