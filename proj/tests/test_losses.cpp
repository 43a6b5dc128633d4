#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "g2d/gradcheck.hpp"
#include "g2d/losses.hpp"

using namespace g2d;

namespace {

Tensor unit_rows(int k, int d, Rng& rng) {
    std::vector<double> data(static_cast<std::size_t>(k) * d);
    for (int i = 0; i < k; ++i) {
        double n = 0;
        for (int j = 0; j < d; ++j) {
            data[i * d + j] = rng.uniform(-1.0, 1.0);
            n += data[i * d + j] * data[i * d + j];
        }
        n = std::sqrt(n);
        for (int j = 0; j < d; ++j) data[i * d + j] /= n;
    }
    return Tensor::from_data({k, d}, std::move(data));
}

// scalar reimplementation of the contrastive objective
double vla_oracle(const std::vector<std::vector<double>>& v,
                  const std::vector<std::vector<double>>& l, double sigma, bool symmetric) {
    const int k = static_cast<int>(v.size());
    auto sim = [&](int i, int j) {
        double s = 0;
        for (std::size_t c = 0; c < v[i].size(); ++c) s += v[i][c] * l[j][c];
        return s;
    };
    auto nce = [&](bool rows) {
        double acc = 0;
        for (int i = 0; i < k; ++i) {
            double denom = 0;
            for (int j = 0; j < k; ++j) {
                denom += std::exp((rows ? sim(i, j) : sim(j, i)) / sigma);
            }
            acc += -std::log(std::exp(sim(i, i) / sigma) / denom);
        }
        return acc / k;
    };
    return symmetric ? 0.5 * (nce(true) + nce(false)) : nce(true);
}

}  // namespace

TEST_CASE("vla closed forms") {
    // identical rows: every logit equal, loss is exactly ln K
    Tensor v = Tensor::from_data({2, 2}, {1, 0, 1, 0});
    Tensor l = Tensor::from_data({2, 2}, {0, 1, 0, 1});
    CHECK(std::abs(vla_loss(v, l, 0.07).item() - std::log(2.0)) <= 1e-9);

    Tensor v4 = Tensor::from_data({4, 1}, {1, 1, 1, 1});
    Tensor l4 = Tensor::from_data({4, 1}, {1, 1, 1, 1});
    CHECK(std::abs(vla_loss(v4, l4, 0.33).item() - std::log(4.0)) <= 1e-9);

    // +-1 diagonal structure in d=1: loss = ln(1 + e^{-2/sigma})
    Tensor vd = Tensor::from_data({2, 1}, {1, -1});
    Tensor ld = Tensor::from_data({2, 1}, {1, -1});
    const double expect = std::log(1.0 + std::exp(-2.0 / 0.07));
    CHECK(vla_loss(vd, ld, 0.07).item() == doctest::Approx(expect).epsilon(1e-9));
    CHECK(vla_loss(vd, ld, 0.07).item() == doctest::Approx(3.9e-13).epsilon(0.02));
}

TEST_CASE("vla oracle, modes and invariants") {
    Rng rng(3);
    for (int t = 0; t < 5; ++t) {
        const int k = 2 + static_cast<int>(rng.below(5));
        const int d = 3 + static_cast<int>(rng.below(5));
        Tensor v = unit_rows(k, d, rng);
        Tensor l = unit_rows(k, d, rng);
        std::vector<std::vector<double>> vv(k), ll(k);
        for (int i = 0; i < k; ++i) {
            vv[i].assign(v.data().begin() + i * d, v.data().begin() + (i + 1) * d);
            ll[i].assign(l.data().begin() + i * d, l.data().begin() + (i + 1) * d);
        }
        const double got_i2t = vla_loss(v, l, 0.07, VlaMode::I2T).item();
        const double got_sym = vla_loss(v, l, 0.07, VlaMode::Symmetric).item();
        CHECK(got_i2t == doctest::Approx(vla_oracle(vv, ll, 0.07, false)).epsilon(1e-12));
        CHECK(got_sym == doctest::Approx(vla_oracle(vv, ll, 0.07, true)).epsilon(1e-12));
        CHECK(got_i2t >= 0.0);
        CHECK(got_sym >= 0.0);
    }

    // symmetric similarity matrix: both modes agree (v == l)
    Tensor e = unit_rows(4, 6, rng);
    CHECK(vla_loss(e, e, 0.1, VlaMode::I2T).item() ==
          doctest::Approx(vla_loss(e, e, 0.1, VlaMode::Symmetric).item()).epsilon(1e-14));
}

TEST_CASE("vla is invariant to a common rotation") {
    Rng rng(11);
    const int k = 4, d = 5;
    Tensor v = unit_rows(k, d, rng);
    Tensor l = unit_rows(k, d, rng);
    const double before = vla_loss(v, l, 0.07).item();

    // Householder reflection H = I - 2uu^T preserves inner products
    std::vector<double> u(d);
    double n = 0;
    for (double& x : u) {
        x = rng.uniform(-1.0, 1.0);
        n += x * x;
    }
    for (double& x : u) x /= std::sqrt(n);
    auto rotate = [&](const Tensor& t) {
        std::vector<double> out(t.data().begin(), t.data().end());
        for (int i = 0; i < k; ++i) {
            double dot = 0;
            for (int j = 0; j < d; ++j) dot += out[i * d + j] * u[j];
            for (int j = 0; j < d; ++j) out[i * d + j] -= 2.0 * dot * u[j];
        }
        return Tensor::from_data({k, d}, std::move(out));
    };
    const double after = vla_loss(rotate(v), rotate(l), 0.07).item();
    CHECK(after == doctest::Approx(before).epsilon(1e-9));
}

TEST_CASE("vla decreases as diagonal similarity rises") {
    // raise the diagonal while the off-diagonal inner products stay fixed
    const double c = 0.1;
    auto build = [&](double a) {
        const double rest = std::sqrt(1.0 - a * a - c * c);
        return Tensor::from_data({2, 3}, {a, c, rest, c, a, rest});
    };
    Tensor l = Tensor::from_data({2, 3}, {1, 0, 0, 0, 1, 0});
    double prev = 1e9;
    for (double a : {0.2, 0.5, 0.8, 0.95}) {
        const double cur = vla_loss(build(a), l, 0.07).item();
        CHECK(cur < prev);
        prev = cur;
    }
}

TEST_CASE("vla input validation") {
    Rng rng(4);
    Tensor v = unit_rows(2, 3, rng);
    Tensor bad = Tensor::from_data({2, 3}, {1, 1, 1, 0, 0, 1});
    CHECK_THROWS_AS(vla_loss(v, bad, 0.07), TensorError);
    Tensor single = unit_rows(1, 3, rng);
    CHECK_THROWS_AS(vla_loss(single, single, 0.07), TensorError);
}

TEST_CASE("dice closed forms and oracle") {
    Tensor ones = Tensor::full({1, 2, 2}, 1.0);
    CHECK(dice_loss({ones}, {ones}).item() == 0.0);  // 1 - (2*4+1)/(4+4+1), exactly

    Tensor tiny = Tensor::full({1, 2, 2}, 1e-12);
    const double near_one = dice_loss({tiny}, {ones}).item();
    CHECK(near_one == doctest::Approx(1.0 - 1.0 / 5.0).epsilon(1e-9));

    Rng rng(7);
    for (int t = 0; t < 8; ++t) {
        const int n = 6;
        std::vector<double> p(n * n), g(n * n);
        for (double& x : p) x = rng.uniform(0.01, 0.99);
        for (double& x : g) x = rng.below(2);
        Tensor pt = Tensor::from_data({1, n, n}, p);
        Tensor gt = Tensor::from_data({1, n, n}, g);

        double inter = 0, ps = 0, gs = 0;
        for (int i = 0; i < n * n; ++i) {
            inter += p[i] * g[i];
            ps += p[i];
            gs += g[i];
        }
        const double expect = 1.0 - (2.0 * inter + 1.0) / (ps + gs + 1.0);
        CHECK(dice_loss({pt}, {gt}).item() == doctest::Approx(expect).epsilon(1e-12));

        double pixel_expect = 0;
        for (int i = 0; i < n * n; ++i) {
            pixel_expect += 1.0 - (2.0 * p[i] * g[i] + 1.0) / (p[i] + g[i] + 1.0);
        }
        pixel_expect /= n * n;
        CHECK(dice_loss({pt}, {gt}, 1.0, DiceForm::LiteralPixel).item() ==
              doctest::Approx(pixel_expect).epsilon(1e-12));

        CHECK(dice_loss({pt}, {gt}).item() >= 0.0);
        CHECK(dice_loss({pt}, {gt}).item() < 1.0);
    }

    Tensor notbinary = Tensor::full({1, 2, 2}, 0.5);
    CHECK_THROWS_AS(dice_loss({ones}, {notbinary}), TensorError);
    CHECK_THROWS_AS(dice_loss({ones}, {Tensor::full({1, 3, 3}, 1.0)}), TensorError);
}

TEST_CASE("bce closed forms, gradient and convexity") {
    Tensor half = Tensor::full({1, 3, 3}, 0.5);
    Rng rng(13);
    std::vector<double> bits(9);
    for (double& b : bits) b = rng.below(2);
    Tensor target = Tensor::from_data({1, 3, 3}, bits);
    CHECK(std::abs(bce_loss({half}, {target}).item() - std::log(2.0)) <= 1e-12);

    CHECK(bce_loss({target.detach()}, {target}).item() ==
          doctest::Approx(-std::log(1.0 - 1e-7)).epsilon(1e-3));

    auto f = [&](const Tensor& p) { return bce_loss({p}, {target}); };
    Tensor pred = Tensor::uniform({1, 3, 3}, 0.1, 0.9, rng);
    auto r = grad_check(f, pred);
    CHECK(r.max_rel_err < 1e-6);

    // convexity along random chords
    for (int t = 0; t < 20; ++t) {
        const double p1 = rng.uniform(0.05, 0.95);
        const double p2 = rng.uniform(0.05, 0.95);
        auto at = [&](double p) {
            return bce_loss({Tensor::full({1, 1, 1}, p)}, {Tensor::full({1, 1, 1}, 1.0)}).item();
        };
        CHECK(at(0.5 * (p1 + p2)) <= 0.5 * (at(p1) + at(p2)) + 1e-12);
    }

    // the best constant prediction sits at the target mean
    Tensor mixed = Tensor::from_data({1, 2, 2}, {1, 1, 1, 0});
    double best_p = -1, best = 1e18;
    for (double p = 0.01; p < 1.0; p += 0.01) {
        const double v = bce_loss({Tensor::full({1, 2, 2}, p)}, {mixed}).item();
        if (v < best) {
            best = v;
            best_p = p;
        }
    }
    CHECK(best_p == doctest::Approx(0.75).epsilon(0.02));
}

TEST_CASE("total and reconstruction") {
    CHECK(total_loss(Tensor::scalar(0.7), Tensor::scalar(0.3)).item() == 1.0);
    CHECK(total_loss(Tensor::scalar(1.25), Tensor::scalar(0.0)).item() == 1.25);

    Rng rng(17);
    Tensor img = Tensor::uniform({1, 4, 4}, 0.0, 1.0, rng);
    CHECK(reconstruction_loss({img}, {img}).item() == 0.0);
    CHECK(reconstruction_loss({img + 1.0}, {img}).item() == doctest::Approx(1.0).epsilon(1e-12));

    Tensor pred = Tensor::uniform({1, 4, 4}, 0.0, 1.0, rng);
    double mse = 0;
    for (std::size_t i = 0; i < img.numel(); ++i) {
        const double d = pred.data()[i] - img.data()[i];
        mse += d * d;
    }
    mse /= img.numel();
    CHECK(reconstruction_loss({pred}, {img}).item() == doctest::Approx(mse).epsilon(1e-12));
}

TEST_CASE("loss bundle json line") {
    LossBundle b;
    b.vla = 0.5;
    b.dice = 0.25;
    b.bce = 0.75;
    b.pa = 0.5;
    b.total = 1.0;
    CHECK(b.to_json(3, 0.0002) ==
          "{\"step\":3,\"lr\":2e-04,\"vla\":0.5,\"dice\":0.25,\"bce\":0.75,\"pa\":0.5,"
          "\"total\":1}");
}
