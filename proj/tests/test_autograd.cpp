#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "crfgan/autograd.hpp"
#include "crfgan/rng.hpp"

using namespace crfgan;

namespace {

Tensor random_tensor(std::vector<int> shape, Rng& rng, double scale = 1.0) {
    Tensor t(std::move(shape));
    for (double& x : t.v) x = rng.normal() * scale;
    return t;
}

// Max relative error of the tape gradient of a scalar-valued builder
// against central finite differences on the single input x.
double grad_rel_err(const std::function<Var(Tape&, Var)>& build, const Tensor& x) {
    Tape t;
    Var in = ops::constant(t, x);
    Var out = build(t, in);
    t.backward(out);
    const Tensor g = t.grad(in);

    const std::vector<double> fd = finite_difference(
        [&](const Tensor& xx) {
            Tape tt;
            Var v = ops::constant(tt, xx);
            return tt.val(build(tt, v)).item();
        },
        x);
    double worst = 0.0;
    for (std::int64_t i = 0; i < x.size(); ++i) {
        const double denom = std::max({std::abs(g[i]), std::abs(fd[i]), 1e-8});
        worst = std::max(worst, std::abs(g[i] - fd[i]) / denom);
    }
    return worst;
}

}  // namespace

TEST_CASE("elementwise op gradients match finite differences") {
    Rng rng(1);
    const Tensor x = random_tensor({3, 4}, rng, 0.5);
    auto check = [&](const std::function<Var(Tape&, Var)>& f) {
        CHECK(grad_rel_err([&](Tape& t, Var v) { return ops::sum(t, f(t, v)); }, x) < 1e-5);
    };
    check([](Tape& t, Var v) { return ops::exp_(t, v); });
    check([](Tape& t, Var v) { return ops::tanh_(t, v); });
    check([](Tape& t, Var v) { return ops::sigmoid_(t, v); });
    check([](Tape& t, Var v) { return ops::leaky_relu(t, v, 0.2); });
    check([](Tape& t, Var v) { return ops::scale(t, v, -2.5); });
    check([](Tape& t, Var v) { return ops::add_scalar(t, v, 1.5); });
    check([](Tape& t, Var v) { return ops::mul(t, v, ops::tanh_(t, v)); });
    check([](Tape& t, Var v) { return ops::sub(t, v, ops::exp_(t, v)); });
    check([](Tape& t, Var v) { return ops::neg(t, v); });
    check([](Tape& t, Var v) { return ops::mean(t, v); });
}

TEST_CASE("log and abs gradients away from kinks") {
    Rng rng(2);
    Tensor x = random_tensor({8}, rng);
    for (double& v : x.v) v = std::abs(v) + 0.5;
    CHECK(grad_rel_err([](Tape& t, Var v) { return ops::sum(t, ops::log_(t, v)); }, x) < 1e-5);
    CHECK(grad_rel_err([](Tape& t, Var v) { return ops::sum(t, ops::abs_(t, v)); }, x) < 1e-5);
}

TEST_CASE("clamp passes gradient only strictly inside") {
    Tape t;
    Var in = ops::constant(t, Tensor({3}, {-2.0, 0.3, 2.0}));
    Var out = ops::sum(t, ops::clamp(t, in, -1.0, 1.0));
    t.backward(out);
    const Tensor g = t.grad(in);
    CHECK(g[0] == 0.0);
    CHECK(g[1] == 1.0);
    CHECK(g[2] == 0.0);
}

TEST_CASE("matmul / add_rowvec / softmax_rows gradients") {
    Rng rng(3);
    const Tensor a = random_tensor({3, 4}, rng);
    const Tensor b = random_tensor({4, 2}, rng);
    CHECK(grad_rel_err(
              [&](Tape& t, Var v) {
                  return ops::sum(t, ops::matmul(t, v, ops::constant(t, b)));
              },
              a) < 1e-5);
    CHECK(grad_rel_err(
              [&](Tape& t, Var v) {
                  return ops::sum(t, ops::matmul(t, ops::constant(t, a), v));
              },
              b) < 1e-5);

    const Tensor row = random_tensor({4}, rng);
    CHECK(grad_rel_err(
              [&](Tape& t, Var v) {
                  return ops::sum(
                      t, ops::mul(t, ops::add_rowvec(t, v, ops::constant(t, row)), v));
              },
              a) < 1e-5);

}

TEST_CASE("softmax rows: values and gradient") {
    Rng rng(4);
    const Tensor a = random_tensor({3, 5}, rng);
    Tape t;
    Var in = ops::constant(t, a);
    Var s = ops::softmax_rows(t, in);
    const Tensor sv = t.val(s);
    for (int r = 0; r < 3; ++r) {
        double sum = 0;
        for (int c = 0; c < 5; ++c) sum += sv[r * 5 + c];
        CHECK(sum == doctest::Approx(1.0).epsilon(1e-12));
    }
    const Tensor w = random_tensor({3, 5}, rng);
    CHECK(grad_rel_err(
              [&](Tape& tt, Var v) {
                  return ops::sum(
                      tt, ops::mul(tt, ops::softmax_rows(tt, v), ops::constant(tt, w)));
              },
              a) < 1e-5);
}

TEST_CASE("reshape / slice / concat / set_row") {
    Rng rng(5);
    const Tensor a = random_tensor({2, 3, 4}, rng);
    {
        Tape t;
        Var in = ops::constant(t, a);
        Var r = ops::reshape(t, in, {6, 4});
        CHECK(t.val(r).v == a.v);
    }
    // slicing disjoint pieces and concatenating reconstructs the input
    {
        Tape t;
        Var in = ops::constant(t, a);
        Var s0 = ops::slice(t, in, 1, 0, 1);
        Var s1 = ops::slice(t, in, 1, 1, 2);
        Var cat = ops::concat(t, 1, {s0, s1});
        CHECK(t.val(cat).v == a.v);
        CHECK(t.val(cat).shape == a.shape);
    }
    // gradient flows through slice+concat
    const Tensor w = random_tensor({2, 3, 4}, rng);
    CHECK(grad_rel_err(
              [&](Tape& t, Var v) {
                  Var s0 = ops::slice(t, v, 2, 0, 2);
                  Var s1 = ops::slice(t, v, 2, 2, 2);
                  Var cat = ops::concat(t, 2, {s1, s0});
                  return ops::sum(t, ops::mul(t, cat, ops::constant(t, w)));
              },
              a) < 1e-5);
    // set_row replaces one row functionally
    {
        Tape t;
        Var m = ops::constant(t, Tensor({2, 3}, {1, 2, 3, 4, 5, 6}));
        Var r = ops::constant(t, Tensor({3}, {7, 8, 9}));
        Var out = ops::set_row(t, m, 1, r);
        CHECK(t.val(out).v == std::vector<double>{1, 2, 3, 7, 8, 9});
    }
    const Tensor m0 = random_tensor({3, 4}, rng);
    const Tensor wr = random_tensor({3, 4}, rng);
    CHECK(grad_rel_err(
              [&](Tape& t, Var v) {
                  Var row = ops::slice(t, v, 0, 0, 1);
                  Var out = ops::set_row(t, v, 2, ops::reshape(t, row, {4}));
                  return ops::sum(t, ops::mul(t, out, ops::constant(t, wr)));
              },
              m0) < 1e-5);
}

TEST_CASE("conv3d forward matches a naive implementation") {
    Rng rng(6);
    const int ci = 2, co = 3, D = 4, H = 5, W = 4;
    const Tensor x = random_tensor({ci, D, H, W}, rng);
    const Tensor w = random_tensor({co, ci, 3, 3, 3}, rng);
    const Tensor b = random_tensor({co}, rng);
    Tape t;
    Var out = ops::conv3d(t, ops::constant(t, x), ops::constant(t, w), ops::constant(t, b),
                          {1, 1, 1}, {1, 1, 1});
    const Tensor& y = t.val(out);
    REQUIRE(y.shape == std::vector<int>{co, D, H, W});
    auto xat = [&](int c, int z, int yy, int xx) -> double {
        if (z < 0 || z >= D || yy < 0 || yy >= H || xx < 0 || xx >= W) return 0.0;
        return x[((static_cast<std::int64_t>(c) * D + z) * H + yy) * W + xx];
    };
    Rng pick(7);
    for (int n = 0; n < 20; ++n) {
        const int oc = static_cast<int>(pick.uniform_int(co));
        const int z = static_cast<int>(pick.uniform_int(D));
        const int yy = static_cast<int>(pick.uniform_int(H));
        const int xx = static_cast<int>(pick.uniform_int(W));
        double acc = b[oc];
        for (int ic = 0; ic < ci; ++ic)
            for (int kz = 0; kz < 3; ++kz)
                for (int ky = 0; ky < 3; ++ky)
                    for (int kx = 0; kx < 3; ++kx)
                        acc += w[(((static_cast<std::int64_t>(oc) * ci + ic) * 3 + kz) * 3 + ky) *
                                     3 +
                                 kx] *
                               xat(ic, z + kz - 1, yy + ky - 1, xx + kx - 1);
        const double got = y[((static_cast<std::int64_t>(oc) * D + z) * H + yy) * W + xx];
        CHECK(got == doctest::Approx(acc).epsilon(1e-10));
    }
}

TEST_CASE("conv3d gradients (input, weight, bias) match finite differences") {
    Rng rng(8);
    const Tensor x = random_tensor({2, 3, 3, 3}, rng);
    const Tensor w = random_tensor({2, 2, 3, 3, 3}, rng, 0.3);
    const Tensor b = random_tensor({2}, rng);
    const Tensor mask = random_tensor({2, 3, 3, 3}, rng);
    auto conv_sum = [&](Tape& t, Var xx, Var ww, Var bb) {
        Var out = ops::conv3d(t, xx, ww, bb, {1, 1, 1}, {1, 1, 1});
        return ops::sum(t, ops::mul(t, out, ops::constant(t, mask)));
    };
    CHECK(grad_rel_err(
              [&](Tape& t, Var v) {
                  return conv_sum(t, v, ops::constant(t, w), ops::constant(t, b));
              },
              x) < 1e-4);
    CHECK(grad_rel_err(
              [&](Tape& t, Var v) {
                  return conv_sum(t, ops::constant(t, x), v, ops::constant(t, b));
              },
              w) < 1e-4);
    CHECK(grad_rel_err(
              [&](Tape& t, Var v) {
                  return conv_sum(t, ops::constant(t, x), ops::constant(t, w), v);
              },
              b) < 1e-4);
}

TEST_CASE("strided conv3d shape and gradient") {
    Rng rng(9);
    const Tensor x = random_tensor({1, 4, 4, 4}, rng);
    const Tensor w = random_tensor({2, 1, 3, 3, 3}, rng, 0.3);
    const Tensor b = random_tensor({2}, rng);
    Tape t;
    Var out = ops::conv3d(t, ops::constant(t, x), ops::constant(t, w), ops::constant(t, b),
                          {2, 2, 2}, {1, 1, 1});
    CHECK(t.val(out).shape == std::vector<int>{2, 2, 2, 2});
    CHECK(grad_rel_err(
              [&](Tape& tt, Var v) {
                  Var o = ops::conv3d(tt, v, ops::constant(tt, w), ops::constant(tt, b),
                                      {2, 2, 2}, {1, 1, 1});
                  return ops::sum(tt, o);
              },
              x) < 1e-4);
}

TEST_CASE("upsample_nearest3 and avgpool3 are shape inverses; gradients work") {
    Rng rng(10);
    const Tensor x = random_tensor({2, 2, 2, 2}, rng);
    Tape t;
    Var up = ops::upsample_nearest3(t, ops::constant(t, x), 2);
    CHECK(t.val(up).shape == std::vector<int>{2, 4, 4, 4});
    Var down = ops::avgpool3(t, up, 2);
    CHECK(t.val(down).shape == x.shape);
    for (std::int64_t i = 0; i < x.size(); ++i)
        CHECK(t.val(down)[i] == doctest::Approx(x[i]).epsilon(1e-12));

    const Tensor w = random_tensor({2, 4, 4, 4}, rng);
    CHECK(grad_rel_err(
              [&](Tape& tt, Var v) {
                  Var u = ops::upsample_nearest3(tt, v, 2);
                  return ops::sum(tt, ops::mul(tt, u, ops::constant(tt, w)));
              },
              x) < 1e-5);
    const Tensor big = random_tensor({1, 4, 4, 4}, rng);
    CHECK(grad_rel_err(
              [&](Tape& tt, Var v) { return ops::sum(tt, ops::avgpool3(tt, v, 2)); }, big) <
          1e-5);
}

TEST_CASE("global_avgpool reduces spatial dims") {
    Rng rng(11);
    const Tensor x = random_tensor({3, 2, 2, 2}, rng);
    Tape t;
    Var out = ops::global_avgpool(t, ops::constant(t, x));
    CHECK(t.val(out).shape == std::vector<int>{3});
    for (int c = 0; c < 3; ++c) {
        double m = 0;
        for (int i = 0; i < 8; ++i) m += x[c * 8 + i];
        CHECK(t.val(out)[c] == doctest::Approx(m / 8).epsilon(1e-12));
    }
    CHECK(grad_rel_err(
              [&](Tape& tt, Var v) { return ops::sum(tt, ops::global_avgpool(tt, v)); }, x) <
          1e-5);
}

TEST_CASE("instance_norm normalizes per channel; gradient checks") {
    Rng rng(12);
    const Tensor x = random_tensor({2, 2, 3, 2}, rng);
    Tensor gamma({2}, {1.0, 1.0}), beta({2}, {0.0, 0.0});
    Tape t;
    Var out = ops::instance_norm(t, ops::constant(t, x), ops::constant(t, gamma),
                                 ops::constant(t, beta));
    const Tensor& y = t.val(out);
    const int sp = 12;
    for (int c = 0; c < 2; ++c) {
        double m = 0, v2 = 0;
        for (int i = 0; i < sp; ++i) m += y[c * sp + i];
        m /= sp;
        for (int i = 0; i < sp; ++i) v2 += (y[c * sp + i] - m) * (y[c * sp + i] - m);
        CHECK(m == doctest::Approx(0.0).epsilon(1e-9));
        CHECK(v2 / sp == doctest::Approx(1.0).epsilon(1e-4));
    }
    const Tensor w = random_tensor({2, 2, 3, 2}, rng);
    CHECK(grad_rel_err(
              [&](Tape& tt, Var v) {
                  Var o = ops::instance_norm(tt, v, ops::constant(tt, gamma),
                                             ops::constant(tt, beta));
                  return ops::sum(tt, ops::mul(tt, o, ops::constant(tt, w)));
              },
              x) < 1e-4);
}

TEST_CASE("pixel_norm is local: one voxel's channels only") {
    Rng rng(13);
    const Tensor x = random_tensor({3, 2, 2, 2}, rng);
    Tape t;
    Var out = ops::pixel_norm(t, ops::constant(t, x));
    const Tensor& y = t.val(out);
    // per-position unit RMS across channels
    for (int p = 0; p < 8; ++p) {
        double ss = 0;
        for (int c = 0; c < 3; ++c) ss += y[c * 8 + p] * y[c * 8 + p];
        CHECK(ss / 3 == doctest::Approx(1.0).epsilon(1e-6));
    }
    // locality: changing one position leaves all other positions untouched
    Tensor x2 = x;
    x2[0 * 8 + 3] += 0.7;
    Tape t2;
    const Tensor& y2 = t2.val(ops::pixel_norm(t2, ops::constant(t2, x2)));
    for (int c = 0; c < 3; ++c)
        for (int p = 0; p < 8; ++p)
            if (p != 3) CHECK(y2[c * 8 + p] == y[c * 8 + p]);
    const Tensor w = random_tensor({3, 2, 2, 2}, rng);
    CHECK(grad_rel_err(
              [&](Tape& tt, Var v) {
                  return ops::sum(tt, ops::mul(tt, ops::pixel_norm(tt, v), ops::constant(tt, w)));
              },
              x) < 1e-4);
}

TEST_CASE("grid_to_rows layout") {
    Tensor x({2, 1, 1, 2}, {1, 2, 3, 4});  // C=2, positions 2
    Tape t;
    const Tensor& y = t.val(ops::grid_to_rows(t, ops::constant(t, x)));
    CHECK(y.shape == std::vector<int>{2, 2});
    CHECK(y.v == std::vector<double>{1, 3, 2, 4});  // row per position, channels as columns
}

TEST_CASE("pairwise_gaussian values and gradients") {
    Rng rng(14);
    const Tensor x = random_tensor({3, 2}, rng);
    const Tensor theta = Tensor::scalar(0.8);
    Tape t;
    Var k = ops::pairwise_gaussian(t, ops::constant(t, x), ops::constant(t, theta));
    const Tensor& kv = t.val(k);
    REQUIRE(kv.shape == std::vector<int>{3, 3});
    for (int i = 0; i < 3; ++i) CHECK(kv[i * 3 + i] == 0.0);
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j) {
            if (i == j) continue;
            double d2 = 0;
            for (int c = 0; c < 2; ++c) {
                const double d = x[i * 2 + c] - x[j * 2 + c];
                d2 += d * d;
            }
            CHECK(kv[i * 3 + j] ==
                  doctest::Approx(std::exp(-d2 / (2 * 0.8 * 0.8))).epsilon(1e-12));
            CHECK(kv[i * 3 + j] == kv[j * 3 + i]);
        }
    const Tensor w = random_tensor({3, 3}, rng);
    CHECK(grad_rel_err(
              [&](Tape& tt, Var v) {
                  Var kk = ops::pairwise_gaussian(tt, v, ops::constant(tt, theta));
                  return ops::sum(tt, ops::mul(tt, kk, ops::constant(tt, w)));
              },
              x) < 1e-4);
    CHECK(grad_rel_err(
              [&](Tape& tt, Var v) {
                  Var kk = ops::pairwise_gaussian(tt, ops::constant(tt, x), v);
                  return ops::sum(tt, ops::mul(tt, kk, ops::constant(tt, w)));
              },
              theta) < 1e-4);
}
