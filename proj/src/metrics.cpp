#include "gavatar/metrics.hpp"

#include <cmath>
#include <vector>

#include "gavatar/errors.hpp"

namespace gavatar {

namespace {

constexpr int kWin = 11;
constexpr double kSigma = 1.5;
constexpr double kC1 = 0.01 * 0.01;
constexpr double kC2 = 0.03 * 0.03;

const std::vector<double>& window() {
    static const std::vector<double> w = [] {
        std::vector<double> v(kWin);
        double sum = 0;
        for (int i = 0; i < kWin; ++i) {
            double d = i - kWin / 2;
            v[i] = std::exp(-d * d / (2 * kSigma * kSigma));
            sum += v[i];
        }
        for (double& x : v) x /= sum;
        return v;
    }();
    return w;
}

// Separable zero-padded same-size convolution; the kernel is symmetric, so
// this is its own transpose.
std::vector<double> conv(const std::vector<double>& in, int w, int h) {
    const auto& k = window();
    std::vector<double> tmp(in.size(), 0.0), out(in.size(), 0.0);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            double s = 0;
            for (int i = 0; i < kWin; ++i) {
                int xx = x + i - kWin / 2;
                if (xx >= 0 && xx < w) s += k[i] * in[y * w + xx];
            }
            tmp[y * w + x] = s;
        }
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            double s = 0;
            for (int i = 0; i < kWin; ++i) {
                int yy = y + i - kWin / 2;
                if (yy >= 0 && yy < h) s += k[i] * tmp[yy * w + x];
            }
            out[y * w + x] = s;
        }
    return out;
}

void check_shapes(const Image& a, const Image& b) {
    if (a.width != b.width || a.height != b.height)
        throw ValidationError("image shapes do not match");
}

std::vector<double> channel(const Image& img, int c) {
    std::vector<double> p(static_cast<std::size_t>(img.width) * img.height);
    for (int y = 0; y < img.height; ++y)
        for (int x = 0; x < img.width; ++x) p[y * img.width + x] = img.at(x, y, c);
    return p;
}

double ssim_impl(const Image& a, const Image& b, Image* grad_a) {
    check_shapes(a, b);
    const int w = a.width, h = a.height;
    const std::size_t n = static_cast<std::size_t>(w) * h;
    double score = 0;
    for (int c = 0; c < 3; ++c) {
        std::vector<double> x = channel(a, c), y = channel(b, c);
        std::vector<double> x2(n), y2(n), xy(n);
        for (std::size_t i = 0; i < n; ++i) {
            x2[i] = x[i] * x[i];
            y2[i] = y[i] * y[i];
            xy[i] = x[i] * y[i];
        }
        std::vector<double> mx = conv(x, w, h), my = conv(y, w, h);
        std::vector<double> mx2 = conv(x2, w, h), my2 = conv(y2, w, h), mxy = conv(xy, w, h);

        std::vector<double> g_mx, g_mx2, g_mxy;
        if (grad_a) {
            g_mx.assign(n, 0.0);
            g_mx2.assign(n, 0.0);
            g_mxy.assign(n, 0.0);
        }
        double chan = 0;
        const double gscale = 1.0 / (3.0 * n); // mean over pixels and channels
        for (std::size_t i = 0; i < n; ++i) {
            const double sx = mx2[i] - mx[i] * mx[i];
            const double sy = my2[i] - my[i] * my[i];
            const double sxy = mxy[i] - mx[i] * my[i];
            const double A1 = 2 * mx[i] * my[i] + kC1, A2 = 2 * sxy + kC2;
            const double B1 = mx[i] * mx[i] + my[i] * my[i] + kC1, B2 = sx + sy + kC2;
            const double s = (A1 * A2) / (B1 * B2);
            chan += s;
            if (grad_a) {
                const double dA1 = A2 / (B1 * B2), dA2 = A1 / (B1 * B2);
                const double dB1 = -s / B1, dB2 = -s / B2;
                // through A1, A2, B1, B2 as functions of (mx, mx2, mxy)
                g_mx[i] = gscale * (dA1 * 2 * my[i] + dA2 * (-2 * my[i]) + dB1 * 2 * mx[i] +
                                    dB2 * (-2 * mx[i]));
                g_mx2[i] = gscale * dB2;
                g_mxy[i] = gscale * dA2 * 2;
            }
        }
        score += chan / static_cast<double>(n);
        if (grad_a) {
            std::vector<double> t_mx = conv(g_mx, w, h), t_mx2 = conv(g_mx2, w, h),
                                t_mxy = conv(g_mxy, w, h);
            for (int yy = 0; yy < h; ++yy)
                for (int xx = 0; xx < w; ++xx) {
                    const std::size_t i = static_cast<std::size_t>(yy) * w + xx;
                    grad_a->at(xx, yy, c) += t_mx[i] + 2 * x[i] * t_mx2[i] + y[i] * t_mxy[i];
                }
        }
    }
    return score / 3.0;
}

} // namespace

double psnr(const Image& a, const Image& b) {
    check_shapes(a, b);
    double mse = 0;
    for (std::size_t i = 0; i < a.data.size(); ++i) {
        const double d = a.data[i] - b.data[i];
        mse += d * d;
    }
    mse /= static_cast<double>(a.data.size());
    if (mse <= 0) return 99.0;
    return std::min(99.0, 10.0 * std::log10(1.0 / mse));
}

double ssim(const Image& a, const Image& b) { return ssim_impl(a, b, nullptr); }

double ssim_with_grad(const Image& a, const Image& b, Image& grad_a) {
    check_shapes(a, grad_a);
    return ssim_impl(a, b, &grad_a);
}

} // namespace gavatar
