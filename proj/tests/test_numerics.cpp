#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numeric>

#include "emorec/adam.hpp"
#include "emorec/emt1.hpp"
#include "emorec/grad_check.hpp"
#include "emorec/ops.hpp"
#include "emorec/rng.hpp"
#include "emorec/tensor.hpp"

using namespace emorec;

namespace {

using T64 = Tensor<double>;

// scalar projection with fixed random weights; plain sums have degenerate
// gradients for ops like softmax
T64 scalarize(const T64& t, uint64_t seed = 7) {
    Rng rng(seed);
    T64 w(t.shape());
    for (auto& v : w.data()) v = rng.uniform(-1.0, 1.0);
    return sum_all(mul(t, w));
}

Shape random_shape(Rng& rng, std::size_t ndim) {
    Shape s(ndim);
    for (auto& d : s) d = 1 + rng.below(8);
    return s;
}

} // namespace

TEST_CASE("tensor basics and invariants") {
    Tensor<float> t({2, 3});
    CHECK(t.numel() == 6);
    CHECK(Tensor<float>::scalar(3.f).numel() == 1); // empty shape is a scalar
    CHECK(Tensor<float>::scalar(3.f).ndim() == 0);
    CHECK_THROWS_AS(Tensor<float>::from({2, 2}, {1.f, 2.f, 3.f}), ValidationError);
    CHECK_THROWS_AS(Tensor<float>::from({2}, {1.f, 2.f}).item(), ValidationError);
}

TEST_CASE("relu, softmax and conv2d identity examples") {
    auto r = relu(T64::from({3}, {-1, 0, 2}));
    CHECK(r.data() == std::vector<double>{0, 0, 2});

    auto s = softmax(T64::from({2}, {0, 0}), 0);
    CHECK(s.data()[0] == doctest::Approx(0.5));
    CHECK(s.data()[1] == doctest::Approx(0.5));

    Rng rng(11);
    auto img = random_uniform<double>({1, 1, 5, 5}, rng, -1.0, 1.0);
    auto w = T64::from({1, 1, 1, 1}, {1.0});
    auto b = T64::zeros({1});
    auto out = conv2d(img, w, b);
    for (std::size_t i = 0; i < img.numel(); ++i)
        CHECK(out.data()[i] == doctest::Approx(img.data()[i]).epsilon(1e-12));
}

TEST_CASE("softmax sums to one and is strictly positive") {
    Rng rng(3);
    for (int rep = 0; rep < 5; ++rep) {
        auto x = random_uniform<double>({4, 6}, rng, -30.0, 30.0);
        auto s = softmax(x, 1);
        for (std::size_t r = 0; r < 4; ++r) {
            double sum = 0;
            for (std::size_t c = 0; c < 6; ++c) {
                const double v = s.data()[r * 6 + c];
                CHECK(v > 0.0);
                sum += v;
            }
            CHECK(sum == doctest::Approx(1.0).epsilon(1e-6));
        }
    }
    CHECK_THROWS_AS(softmax(T64::from({2}, {0, 0}), 3), ValidationError);
    CHECK_THROWS_AS(softmax(T64::from({2, 0}, {}), 1), ValidationError); // empty axis
}

TEST_CASE("non-finite forward results raise") {
    auto x = T64::from({2}, {800.0, 1.0});
    CHECK_THROWS_AS(exp(x), NumericError);
    CHECK_THROWS_AS(log(T64::from({1}, {0.0})), NumericError);
}

TEST_CASE("backward of sum gives all-ones; power rule") {
    auto x = Tensor<float>::from({2, 3}, {1, 2, 3, 4, 5, 6}, true);
    auto loss = sum_all(x);
    loss.backward();
    for (float g : x.grad()) CHECK(g == 1.f);

    auto y = Tensor<float>::from({1}, {3.f}, true);
    auto l2 = sum_all(mul(y, y));
    l2.backward();
    CHECK(y.grad()[0] == doctest::Approx(6.f));
}

TEST_CASE("repeated backward accumulates; freed graph raises") {
    auto x = T64::from({2}, {1, 2}, true);
    auto loss = sum_all(mul(x, x));
    loss.backward();
    loss.backward();
    CHECK(x.grad()[0] == doctest::Approx(4.0)); // 2*dx accumulated twice
    auto y = T64::from({2}, {1, 2}, true);
    auto l2 = sum_all(y);
    l2.backward(/*free_graph=*/true);
    CHECK_THROWS_AS(l2.backward(), NumericError);
}

TEST_CASE("backward requires scalar loss") {
    auto x = T64::from({2}, {1, 2}, true);
    auto y = mul(x, x);
    CHECK_THROWS_AS(y.backward(), ValidationError);
}

TEST_CASE("gradient linearity: backward of sum of losses equals sum of backwards") {
    Rng rng(5);
    auto make_x = [&](bool rg) {
        auto t = random_uniform<double>({3, 4}, rng, -2.0, 2.0);
        t.set_requires_grad(rg);
        return t;
    };
    auto x = make_x(true);
    auto l1 = sum_all(mul(x, x));
    auto l2 = scalarize(exp(scale(x, 0.3)), 9);
    auto combined = add(l1, l2);
    combined.backward();
    auto g_combined = x.grad();

    x.zero_grad();
    l1.backward();
    l2.backward();
    for (std::size_t i = 0; i < g_combined.size(); ++i)
        CHECK(std::abs(g_combined[i] - x.grad()[i]) < 1e-9);
}

TEST_CASE("grad_check: sum of squares, constant, conv stack") {
    Rng rng(17);
    auto p = random_uniform<double>({6}, rng, -2.0, 2.0);
    CHECK(grad_check([](const T64& x) { return sum_all(mul(x, x)); }, p) < 1e-7);

    CHECK(grad_check([](const T64& x) { return add(sum_all(scale(x, 0.0)), T64::scalar(5.0)); },
                     p) == 0.0);

    auto img = random_uniform<double>({1, 3, 9, 9}, rng, -1.0, 1.0);
    Rng wr(23);
    auto w = random_uniform<double>({2, 3, 3, 3}, wr, -0.5, 0.5);
    auto b = random_uniform<double>({2}, wr, -0.1, 0.1);
    auto f = [&](const T64& x) { return scalarize(maxpool2d(relu(conv2d(x, w, b)), 2), 31); };
    CHECK(grad_check(f, img) < 1e-4);
}

TEST_CASE("3-layer MLP gradients match finite differences") {
    Rng rng(29);
    auto x = random_uniform<double>({2, 5}, rng, -1.0, 1.0);
    auto w1 = random_uniform<double>({5, 7}, rng, -0.6, 0.6);
    auto w2 = random_uniform<double>({7, 4}, rng, -0.6, 0.6);
    auto w3 = random_uniform<double>({4, 3}, rng, -0.6, 0.6);
    auto net = [&](const T64& in, const T64& a, const T64& b, const T64& c) {
        return scalarize(sigmoid(matmul(relu(matmul(relu(matmul(in, a)), b)), c)), 41);
    };
    CHECK(grad_check([&](const T64& p) { return net(p, w1, w2, w3); }, x) < 1e-4);
    CHECK(grad_check([&](const T64& p) { return net(x, p, w2, w3); }, w1) < 1e-4);
    CHECK(grad_check([&](const T64& p) { return net(x, w1, w2, p); }, w3) < 1e-4);
}

TEST_CASE("per-primitive gradient checks on random shapes") {
    Rng rng(101);
    const double tol = 1e-4;
    for (int rep = 0; rep < 5; ++rep) {
        // elementwise, away from kinks
        auto shape = random_shape(rng, 1 + rng.below(3));
        auto x = random_uniform<double>(shape, rng, 0.2, 2.0);
        CHECK(grad_check([](const T64& t) { return scalarize(relu(t)); }, x) < tol);
        CHECK(grad_check([](const T64& t) { return scalarize(sigmoid(t)); }, x) < tol);
        CHECK(grad_check([](const T64& t) { return scalarize(softplus(t)); }, x) < tol);
        CHECK(grad_check([](const T64& t) { return scalarize(exp(t)); }, x) < tol);
        CHECK(grad_check([](const T64& t) { return scalarize(log(t)); }, x) < tol);
        CHECK(grad_check([](const T64& t) { return scalarize(pow(t, 1.7)); }, x) < tol);
        CHECK(grad_check([](const T64& t) { return scalarize(clamp(t, -1.0, 10.0)); }, x) < tol);
        CHECK(grad_check([](const T64& t) { return scalarize(add_scalar(scale(t, 1.3), 0.2)); },
                         x) < tol);

        // binary with broadcasting
        auto a = random_uniform<double>({3, 4}, rng, -1.0, 1.0);
        auto brow = random_uniform<double>({4}, rng, -1.0, 1.0);
        CHECK(grad_check([&](const T64& t) { return scalarize(add(t, brow)); }, a) < tol);
        CHECK(grad_check([&](const T64& t) { return scalarize(mul(a, t)); }, brow) < tol);
        CHECK(grad_check([&](const T64& t) { return scalarize(sub(t, brow)); }, a) < tol);

        // softmax / reductions / shape ops
        auto sm = random_uniform<double>(random_shape(rng, 2), rng, -2.0, 2.0);
        CHECK(grad_check([&](const T64& t) { return scalarize(softmax(t, 1)); }, sm) < tol);
        CHECK(grad_check([&](const T64& t) { return scalarize(reduce_mean(t, {0})); }, sm) < tol);
        CHECK(grad_check([&](const T64& t) { return scalarize(reduce_sum(t, {1})); }, sm) < tol);
        auto r4 = random_uniform<double>({2, 3, 2, 2}, rng, -1.0, 1.0);
        CHECK(grad_check([&](const T64& t) { return scalarize(global_avg_pool(t)); }, r4) < tol);
        CHECK(grad_check([&](const T64& t) { return scalarize(permute(t, {2, 0, 3, 1})); }, r4) <
              tol);
        CHECK(grad_check([&](const T64& t) { return scalarize(reshape(t, {6, 4})); }, r4) < tol);
        CHECK(grad_check([&](const T64& t) { return scalarize(slice(t, 1, 1, 2)); }, r4) < tol);
        auto c2 = random_uniform<double>({2, 2, 2, 2}, rng, -1.0, 1.0);
        CHECK(grad_check(
                  [&](const T64& t) {
                      return scalarize(concat(std::vector<T64>{t, scale(c2, 0.5)}, 1));
                  },
                  c2) < tol);

        // matmul variants
        auto m1 = random_uniform<double>({3, 4}, rng, -1.0, 1.0);
        auto m2 = random_uniform<double>({4, 5}, rng, -1.0, 1.0);
        CHECK(grad_check([&](const T64& t) { return scalarize(matmul(t, m2)); }, m1) < tol);
        CHECK(grad_check([&](const T64& t) { return scalarize(matmul(m1, t)); }, m2) < tol);
        auto mb = random_uniform<double>({2, 3, 4}, rng, -1.0, 1.0);
        CHECK(grad_check([&](const T64& t) { return scalarize(matmul(t, m2)); }, mb) < tol);
        CHECK(grad_check([&](const T64& t) { return scalarize(matmul(mb, t)); }, m2) < tol);
        auto mb2 = random_uniform<double>({2, 4, 5}, rng, -1.0, 1.0);
        CHECK(grad_check([&](const T64& t) { return scalarize(matmul(t, mb2)); }, mb) < tol);

        // convs and pools
        auto x1 = random_uniform<double>({2, 3, 7}, rng, -1.0, 1.0);
        auto w1 = random_uniform<double>({4, 3, 3}, rng, -0.5, 0.5);
        auto b1 = random_uniform<double>({4}, rng, -0.1, 0.1);
        for (auto mode : {PadMode::Zero, PadMode::Replicate}) {
            CHECK(grad_check([&](const T64& t) { return scalarize(conv1d(t, w1, b1, mode)); },
                             x1) < tol);
            CHECK(grad_check([&](const T64& t) { return scalarize(conv1d(x1, t, b1, mode)); },
                             w1) < tol);
            CHECK(grad_check([&](const T64& t) { return scalarize(conv1d(x1, w1, t, mode)); },
                             b1) < tol);
        }
        auto x2 = random_uniform<double>({2, 2, 6, 5}, rng, -1.0, 1.0);
        auto w2 = random_uniform<double>({3, 2, 3, 3}, rng, -0.5, 0.5);
        auto b2 = random_uniform<double>({3}, rng, -0.1, 0.1);
        CHECK(grad_check([&](const T64& t) { return scalarize(conv2d(t, w2, b2)); }, x2) < tol);
        CHECK(grad_check([&](const T64& t) { return scalarize(conv2d(x2, t, b2)); }, w2) < tol);
        CHECK(grad_check([&](const T64& t) { return scalarize(conv2d(x2, w2, t)); }, b2) < tol);
        CHECK(grad_check([&](const T64& t) { return scalarize(maxpool2d(t, 2)); }, x2) < tol);
        CHECK(grad_check([&](const T64& t) { return scalarize(maxpool1d(t, 2)); }, x1) < tol);

        // batch norm, train and eval modes
        auto bx = random_uniform<double>({3, 4, 2}, rng, -1.0, 1.0);
        auto gamma = random_uniform<double>({4}, rng, 0.5, 1.5);
        auto beta = random_uniform<double>({4}, rng, -0.5, 0.5);
        std::vector<double> rm(4, 0.1), rv(4, 0.9);
        auto bn_train = [&](const T64& t) {
            std::vector<double> m = rm, v = rv;
            return scalarize(batch_norm(t, gamma, beta, m, v, true, false));
        };
        auto bn_eval = [&](const T64& t) {
            std::vector<double> m = rm, v = rv;
            return scalarize(batch_norm(t, gamma, beta, m, v, false, false));
        };
        CHECK(grad_check(bn_train, bx) < tol);
        CHECK(grad_check(bn_eval, bx) < tol);
        CHECK(grad_check(
                  [&](const T64& t) {
                      std::vector<double> m = rm, v = rv;
                      return scalarize(batch_norm(bx, t, beta, m, v, true, false));
                  },
                  gamma) < tol);
    }
}

TEST_CASE("batchnorm eval mode is a deterministic affine map") {
    Rng rng(57);
    auto x = random_uniform<float>({4, 3, 5}, rng, -2.f, 2.f);
    auto gamma = Tensor<float>::ones({3});
    auto beta = Tensor<float>::zeros({3});
    std::vector<float> rm = {0.1f, -0.2f, 0.3f}, rv = {1.f, 0.5f, 2.f};
    auto y1 = batch_norm(x, gamma, beta, rm, rv, false, false);
    auto y2 = batch_norm(x, gamma, beta, rm, rv, false, false);
    CHECK(y1.data() == y2.data()); // bit identical
}

TEST_CASE("concat then split returns the originals exactly") {
    Rng rng(61);
    auto a = random_uniform<float>({2, 3, 4}, rng, -1.f, 1.f);
    auto b = random_uniform<float>({2, 5, 4}, rng, -1.f, 1.f);
    auto cat = concat(std::vector<Tensor<float>>{a, b}, 1);
    auto sa = slice(cat, 1, 0, 3);
    auto sb = slice(cat, 1, 3, 5);
    CHECK(sa.data() == a.data());
    CHECK(sb.data() == b.data());
}

TEST_CASE("adam: zero gradient leaves parameters unchanged, moments decay") {
    auto p = Tensor<float>::from({3}, {1.f, -2.f, 0.5f}, true);
    const auto before = p.data();
    Adam<float> opt({p}, {.lr = 0.01f});
    p.zero_grad();
    opt.step();
    opt.step();
    CHECK(p.data() == before);
    for (float m : opt.first_moments()[0]) CHECK(m == 0.f);
}

TEST_CASE("adam: bias-corrected first step has magnitude ~lr") {
    auto p = Tensor<double>::from({1}, {0.5}, true);
    Adam<double> opt({p}, {.lr = 0.01});
    p.grad()[0] = 1.0;
    opt.step();
    CHECK(std::abs((0.5 - p.data()[0]) - 0.01) < 1e-8);
}

TEST_CASE("adam: quadratic bowl converges; windowed loss trend monotone") {
    auto w = Tensor<double>::from({1}, {1.0}, true);
    Adam<double> opt({w}, {.lr = 0.1});
    std::vector<double> losses; // loss of each updated iterate
    for (int t = 0; t < 200; ++t) {
        w.zero_grad();
        auto loss = mul(w, w);
        loss.backward();
        opt.step();
        losses.push_back(w.data()[0] * w.data()[0]);
    }
    CHECK(std::abs(w.data()[0]) < 1e-2);
    // per-step loss oscillates near the optimum; 10-step window means decay
    std::vector<double> windows;
    for (std::size_t i = 0; i + 10 <= losses.size(); i += 10) {
        double s = 0;
        for (std::size_t j = i; j < i + 10; ++j) s += losses[j];
        windows.push_back(s / 10);
    }
    for (std::size_t i = 1; i < windows.size(); ++i) CHECK(windows[i] <= windows[i - 1] + 1e-12);
}

TEST_CASE("EMT1 round-trip is byte-exact; malformed files are rejected") {
    namespace fs = std::filesystem;
    const fs::path dir = fs::temp_directory_path() / "emorec_emt1_test";
    fs::create_directories(dir);

    Rng rng(71);
    auto t = random_uniform<float>({3, 4, 2}, rng, -5.f, 5.f);
    const fs::path p = dir / "t.emt1";
    write_emt1(p, t);
    auto raw = read_emt1(p);
    CHECK(raw.dtype == DType::Float32);
    CHECK(raw.dims == std::vector<std::size_t>{3, 4, 2});
    CHECK(raw.as_f32().data() == t.data());

    // second write of the same tensor is byte-identical
    const fs::path p2 = dir / "t2.emt1";
    write_emt1(p2, t);
    std::ifstream f1(p, std::ios::binary), f2(p2, std::ios::binary);
    std::vector<char> c1((std::istreambuf_iterator<char>(f1)), {});
    std::vector<char> c2((std::istreambuf_iterator<char>(f2)), {});
    CHECK(c1 == c2);

    auto d = random_uniform<double>({2}, rng, -1.0, 1.0);
    const fs::path pd = dir / "d.emt1";
    write_emt1(pd, d);
    CHECK(read_emt1(pd).dtype == DType::Float64);
    CHECK(read_emt1(pd).as_f64().data() == d.data());

    // wrong magic
    {
        std::ofstream bad(dir / "bad_magic.emt1", std::ios::binary);
        bad << "NOPE" << std::string(12, '\0');
    }
    CHECK_THROWS_AS(read_emt1(dir / "bad_magic.emt1"), ValidationError);

    // truncated payload
    {
        std::ifstream in(p, std::ios::binary);
        std::vector<char> bytes((std::istreambuf_iterator<char>(in)), {});
        bytes.resize(bytes.size() - 4);
        std::ofstream out(dir / "short.emt1", std::ios::binary);
        out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    }
    CHECK_THROWS_AS(read_emt1(dir / "short.emt1"), ValidationError);

    // trailing junk
    {
        std::ifstream in(p, std::ios::binary);
        std::vector<char> bytes((std::istreambuf_iterator<char>(in)), {});
        bytes.push_back('x');
        std::ofstream out(dir / "long.emt1", std::ios::binary);
        out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    }
    CHECK_THROWS_AS(read_emt1(dir / "long.emt1"), ValidationError);

    // dims overflow: 2^40 x 2^40
    {
        std::ofstream out(dir / "overflow.emt1", std::ios::binary);
        out << "EMT1";
        const char hdr[4] = {0, 2, 0, 0};
        out.write(hdr, 4);
        const uint64_t big = uint64_t(1) << 40;
        out.write(reinterpret_cast<const char*>(&big), 8);
        out.write(reinterpret_cast<const char*>(&big), 8);
    }
    CHECK_THROWS_AS(read_emt1(dir / "overflow.emt1"), ValidationError);

    fs::remove_all(dir);
}

TEST_CASE("rng is deterministic and fork streams are independent") {
    Rng a(42), b(42);
    for (int i = 0; i < 100; ++i) CHECK(a.next_u64() == b.next_u64());
    Rng c(42);
    auto f1 = c.fork(0);
    auto f2 = c.fork(1);
    CHECK(f1.next_u64() != f2.next_u64());
}
