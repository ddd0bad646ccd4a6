#include <doctest.h>

#include <cmath>
#include <complex>
#include <filesystem>
#include <vector>

#include "luve/nn.hpp"
#include "luve/serialize.hpp"
#include "luve/tensor.hpp"

using namespace luve;

namespace {

// Independent O(n^2)-per-output DFT oracle: the full double sum, no row/column
// separation, for cross-checking the library transform.
Spectrum dft2d_oracle(const Tensor& x) {
    const int h = x.extent(0), w = x.extent(1), c = x.extent(2);
    Spectrum spec(static_cast<size_t>(h) * w * c);
    for (int ch = 0; ch < c; ++ch)
        for (int u = 0; u < h; ++u)
            for (int v = 0; v < w; ++v) {
                std::complex<double> acc = 0.0;
                for (int y = 0; y < h; ++y)
                    for (int xx = 0; xx < w; ++xx) {
                        const double ang =
                            -2.0 * M_PI * (static_cast<double>(u) * y / h + static_cast<double>(v) * xx / w);
                        acc += x.at({y, xx, ch}) * std::complex<double>(std::cos(ang), std::sin(ang));
                    }
                spec[(static_cast<size_t>(u) * w + v) * c + ch] = acc;
            }
    return spec;
}

}  // namespace

TEST_CASE("matmul hand cases") {
    // identity
    Rng rng(1);
    Tensor m = Tensor::randn({3, 3}, rng);
    Tensor eye({3, 3});
    for (int i = 0; i < 3; ++i) eye.data()[i * 3 + i] = 1.0;
    Tensor prod = matmul(eye, m);
    for (int i = 0; i < 9; ++i) CHECK(prod.data()[i] == doctest::Approx(m.data()[i]).epsilon(1e-12));

    // [[1,2],[3,4]] x [[0],[1]] = [[2],[4]]
    Tensor a({2, 2}, {1, 2, 3, 4});
    Tensor b({2, 1}, {0, 1});
    Tensor c = matmul(a, b);
    CHECK(c.at({0, 0}) == 2.0);
    CHECK(c.at({1, 0}) == 4.0);

    // zero annihilator
    Tensor z = Tensor::zeros({2, 3});
    Tensor any = Tensor::randn({3, 4}, rng);
    Tensor zc = matmul(z, any);
    CHECK(zc.shape() == Shape{2, 4});
    for (int64_t i = 0; i < zc.size(); ++i) CHECK(zc.data()[i] == 0.0);

    CHECK_THROWS_AS(matmul(Tensor::zeros({2, 3}), Tensor::zeros({4, 2})), ContractError);
}

TEST_CASE("matmul batched forms") {
    Rng rng(2);
    Tensor a = Tensor::randn({3, 4, 5}, rng);
    Tensor b = Tensor::randn({3, 5, 2}, rng);
    Tensor c = matmul(a, b);
    CHECK(c.shape() == Shape{3, 4, 2});
    // per batch equals the 2-D product
    for (int bi = 0; bi < 3; ++bi) {
        Tensor a2 = slice_axis0(a, bi, bi + 1).reshaped({4, 5});
        Tensor b2 = slice_axis0(b, bi, bi + 1).reshaped({5, 2});
        Tensor c2 = matmul(a2, b2);
        for (int i = 0; i < 8; ++i)
            CHECK(c.data()[bi * 8 + i] == doctest::Approx(c2.data()[i]).epsilon(1e-12));
    }
    // shared right-hand matrix
    Tensor w = Tensor::randn({5, 2}, rng);
    Tensor cw = matmul(a, w);
    Tensor c0 = matmul(slice_axis0(a, 0, 1).reshaped({4, 5}), w);
    for (int i = 0; i < 8; ++i) CHECK(cw.data()[i] == doctest::Approx(c0.data()[i]).epsilon(1e-12));
}

TEST_CASE("softmax cases") {
    Tensor a({2}, {0.0, 0.0});
    Tensor s = softmax_last(a);
    CHECK(s.data()[0] == doctest::Approx(0.5));
    CHECK(s.data()[1] == doctest::Approx(0.5));

    // shift invariance keeps huge inputs finite
    Tensor big({2}, {1000.0, 1000.0});
    Tensor sb = softmax_last(big);
    CHECK(sb.all_finite());
    CHECK(sb.data()[0] == doctest::Approx(0.5));

    // closed form: softmax([0, ln 3]) = [1/4, 3/4]
    Tensor c({2}, {0.0, std::log(3.0)});
    Tensor sc = softmax_last(c);
    CHECK(sc.data()[0] == doctest::Approx(0.25).epsilon(1e-12));
    CHECK(sc.data()[1] == doctest::Approx(0.75).epsilon(1e-12));

    // outputs in (0,1) summing to 1 along the axis
    Rng rng(3);
    Tensor r = Tensor::randn({4, 6}, rng);
    Tensor sr = softmax(r, 0);
    for (int j = 0; j < 6; ++j) {
        double sum = 0.0;
        for (int i = 0; i < 4; ++i) {
            const double v = sr.at({i, j});
            CHECK(v > 0.0);
            CHECK(v < 1.0);
            sum += v;
        }
        CHECK(sum == doctest::Approx(1.0).epsilon(1e-12));
    }
}

TEST_CASE("dft2d constant, impulse, round trip, Parseval") {
    // constant field: all energy in the DC bin
    Tensor c = Tensor::full({4, 4, 1}, 0.7);
    Spectrum spec = dft2d(c);
    CHECK(std::abs(spec[0]) == doctest::Approx(0.7 * 16).epsilon(1e-10));
    for (size_t i = 1; i < spec.size(); ++i) CHECK(std::abs(spec[i]) < 1e-9);

    // single impulse: flat magnitude spectrum
    Tensor imp = Tensor::zeros({5, 3, 1});
    imp.data()[(2 * 3 + 1) * 1] = 1.0;
    Spectrum si = dft2d(imp);
    for (const auto& v : si) CHECK(std::abs(v) == doctest::Approx(1.0).epsilon(1e-10));

    // 8x8 random field: round trip vs identity, transform vs the dense oracle
    Rng rng(7);
    Tensor x = Tensor::rand({8, 8, 2}, rng, -1.0, 1.0);
    Spectrum sx = dft2d(x);
    Spectrum oracle = dft2d_oracle(x);
    for (size_t i = 0; i < sx.size(); ++i) CHECK(std::abs(sx[i] - oracle[i]) < 1e-9);

    Tensor back = idft2d(sx, 8, 8, 2);
    double max_abs = 0.0, max_err = 0.0;
    for (int64_t i = 0; i < x.size(); ++i) {
        max_abs = std::max(max_abs, std::abs(x.data()[i]));
        max_err = std::max(max_err, std::abs(x.data()[i] - back.data()[i]));
    }
    CHECK(max_err < 1e-5 * max_abs);

    // Parseval: sum |x|^2 == (1/(hw)) sum |X|^2
    double e_space = 0.0, e_freq = 0.0;
    for (int64_t i = 0; i < x.size(); ++i) e_space += x.data()[i] * x.data()[i];
    for (const auto& v : sx) e_freq += std::norm(v);
    CHECK(e_space == doctest::Approx(e_freq / 64.0).epsilon(1e-10));
}

TEST_CASE("backward quadratic and constant") {
    Rng rng(11);
    Tensor x = Tensor::randn({3, 3}, rng);
    {
        GradTape tape;
        Tensor xt = tape.watch(x);
        Tensor loss = sum_all(mul(xt, xt));
        tape.backward(loss);
        const auto& g = tape.grad(xt);
        for (int64_t i = 0; i < x.size(); ++i)
            CHECK(g[static_cast<size_t>(i)] == doctest::Approx(2.0 * x.data()[i]).epsilon(1e-12));
    }
    {
        // sum of softmax is constant 1: gradient vanishes
        GradTape tape;
        Tensor xt = tape.watch(x);
        Tensor loss = sum_all(softmax_last(xt));
        tape.backward(loss);
        for (double g : tape.grad(xt)) CHECK(std::abs(g) < 1e-12);
    }
    {
        GradTape tape;
        Tensor xt = tape.watch(x);
        Tensor not_scalar = mul(xt, xt);
        CHECK_THROWS_AS(tape.backward(not_scalar), ContractError);
    }
}

TEST_CASE("composed matmul+softmax+L1 matches finite differences") {
    Rng rng(13);
    Tensor x = Tensor::randn({4, 4}, rng);
    Tensor w = Tensor::randn({4, 4}, rng);
    Tensor target = Tensor::rand({4, 4}, rng);
    auto f = [&](const Tensor& in) { return l1_loss(softmax_last(matmul(in, w)), target); };
    CHECK(finite_diff_check(f, x, 1e-5) < 1e-4);
}

TEST_CASE("finite differences pass for every differentiable operation") {
    Rng rng(17);
    Tensor target8 = Tensor::rand({2, 4}, rng);
    Tensor other = Tensor::randn({2, 4}, rng);

    auto check_unary = [&](const std::function<Tensor(const Tensor&)>& op) {
        Tensor x = Tensor::randn({2, 4}, rng);
        auto f = [&](const Tensor& in) { return l1_loss(op(in), target8); };
        CHECK(finite_diff_check(f, x) < 1e-4);
    };
    check_unary([](const Tensor& x) { return add_scalar(x, 0.3); });
    check_unary([](const Tensor& x) { return mul_scalar(x, -1.7); });
    check_unary([](const Tensor& x) { return neg(x); });
    check_unary([](const Tensor& x) { return gelu(x); });
    check_unary([](const Tensor& x) { return silu(x); });
    check_unary([](const Tensor& x) { return softmax_last(x); });
    check_unary([&](const Tensor& x) { return add(x, other); });
    check_unary([&](const Tensor& x) { return sub(x, other); });
    check_unary([&](const Tensor& x) { return mul(x, other); });
    check_unary([](const Tensor& x) { return reshape(reshape(x, {4, 2}), {2, 4}); });

    // matmul, both operands
    {
        Tensor a = Tensor::randn({3, 4}, rng);
        Tensor b = Tensor::randn({4, 2}, rng);
        Tensor t = Tensor::rand({3, 2}, rng);
        CHECK(finite_diff_check([&](const Tensor& in) { return l1_loss(matmul(in, b), t); }, a) < 1e-4);
        CHECK(finite_diff_check([&](const Tensor& in) { return l1_loss(matmul(a, in), t); }, b) < 1e-4);
    }
    // batched matmul with a shared right matrix
    {
        Tensor a = Tensor::randn({2, 3, 4}, rng);
        Tensor b = Tensor::randn({4, 2}, rng);
        Tensor t = Tensor::rand({2, 3, 2}, rng);
        CHECK(finite_diff_check([&](const Tensor& in) { return l1_loss(matmul(a, in), t); }, b) < 1e-4);
    }
    // structure ops
    {
        Tensor t = Tensor::rand({4, 3, 2, 5}, rng);
        Tensor x = Tensor::randn({4, 2, 3, 5}, rng);
        CHECK(finite_diff_check([&](const Tensor& in) { return l1_loss(permute_0213(in), t); }, x) < 1e-4);
    }
    {
        Tensor t = Tensor::rand({3, 4, 2}, rng);
        Tensor x = Tensor::randn({3, 2, 4}, rng);
        CHECK(finite_diff_check([&](const Tensor& in) { return l1_loss(transpose_last2(in), t); }, x) < 1e-4);
    }
    {
        Tensor t = Tensor::rand({2, 4}, rng);
        Tensor x = Tensor::randn({5, 4}, rng);
        CHECK(finite_diff_check([&](const Tensor& in) { return l1_loss(slice_axis0(in, 1, 3), t); }, x) < 1e-4);
        CHECK(finite_diff_check(
                  [&](const Tensor& in) { return l1_loss(take_rows(in, {4, 0}), t); }, x) < 1e-4);
    }
    {
        Tensor x = Tensor::randn({2, 3}, rng);
        Tensor y = Tensor::randn({1, 3}, rng);
        Tensor t = Tensor::rand({3, 3}, rng);
        CHECK(finite_diff_check(
                  [&](const Tensor& in) { return l1_loss(concat_axis0({in, y}), t); }, x) < 1e-4);
    }
    {
        Tensor x = Tensor::randn({6}, rng);
        Tensor t = Tensor::rand({2, 3}, rng);
        std::vector<int64_t> idx{5, 4, 3, 2, 1, 0};
        CHECK(finite_diff_check(
                  [&](const Tensor& in) { return l1_loss(gather_elements(in, idx, {2, 3}), t); }, x) < 1e-4);
    }
    // normalization / affine
    {
        Tensor x = Tensor::randn({3, 6}, rng);
        Tensor gamma = Tensor::rand({6}, rng, 0.5, 1.5);
        Tensor beta = Tensor::randn({6}, rng);
        Tensor t = Tensor::rand({3, 6}, rng);
        CHECK(finite_diff_check(
                  [&](const Tensor& in) { return l1_loss(layer_norm(in, gamma, beta), t); }, x) < 1e-4);
        CHECK(finite_diff_check(
                  [&](const Tensor& in) { return l1_loss(layer_norm(x, in, beta), t); }, gamma) < 1e-4);
        Tensor scale = Tensor::randn({6}, rng, 0.3);
        Tensor shift = Tensor::randn({6}, rng);
        CHECK(finite_diff_check(
                  [&](const Tensor& in) { return l1_loss(rowwise_affine(in, scale, shift), t); }, x) < 1e-4);
        CHECK(finite_diff_check(
                  [&](const Tensor& in) { return l1_loss(rowwise_affine(x, in, shift), t); }, scale) < 1e-4);
        CHECK(finite_diff_check(
                  [&](const Tensor& in) { return l1_loss(add_rowvec(x, in), t); }, shift) < 1e-4);
    }
    // reductions / losses
    {
        Tensor x = Tensor::randn({3, 4}, rng);
        CHECK(finite_diff_check([](const Tensor& in) { return sum_all(in); }, x) < 1e-4);
        CHECK(finite_diff_check([](const Tensor& in) { return mean_all(in); }, x) < 1e-4);
        Tensor t = Tensor::rand({3, 4}, rng);
        CHECK(finite_diff_check([&](const Tensor& in) { return mse_loss(in, t); }, x) < 1e-4);
        CHECK(finite_diff_check([&](const Tensor& in) { return l1_loss(in, t); }, x) < 1e-4);
    }
}

TEST_CASE("determinism: same seed, same results") {
    auto run = [](uint64_t seed) {
        Rng rng(seed);
        Tensor a = Tensor::randn({6, 6}, rng);
        Tensor b = Tensor::rand({6, 6}, rng);
        return matmul(softmax_last(a), b);
    };
    Tensor r1 = run(99), r2 = run(99);
    for (int64_t i = 0; i < r1.size(); ++i) CHECK(r1.data()[i] == r2.data()[i]);
}

TEST_CASE("tensor invariants and contracts") {
    CHECK_THROWS_AS(Tensor({2, 0}), ContractError);
    CHECK_THROWS_AS(Tensor({2}, {1.0, 2.0, 3.0}), ContractError);
    CHECK_THROWS_AS(add(Tensor::zeros({2}), Tensor::zeros({3})), ContractError);
    Tensor s = Tensor::scalar(4.5);
    CHECK(s.item() == 4.5);
    CHECK(s.size() == 1);
}

TEST_CASE("LUVT round trip in both dtypes") {
    namespace fs = std::filesystem;
    Rng rng(23);
    Tensor x = Tensor::randn({3, 5, 2}, rng);
    const std::string dir = (fs::temp_directory_path() / "luvt_test").string();
    fs::create_directories(dir);

    save_tensor(dir + "/t64.luvt", x, DType::f64);
    Tensor y = load_tensor(dir + "/t64.luvt");
    CHECK(y.shape() == x.shape());
    for (int64_t i = 0; i < x.size(); ++i) CHECK(y.data()[i] == x.data()[i]);

    save_tensor(dir + "/t32.luvt", x, DType::f32);
    Tensor z = load_tensor(dir + "/t32.luvt");
    for (int64_t i = 0; i < x.size(); ++i)
        CHECK(z.data()[i] == doctest::Approx(x.data()[i]).epsilon(1e-6));

    CHECK_THROWS_AS(load_tensor(dir + "/missing.luvt"), IoError);
}

TEST_CASE("checkpoint save/load by name") {
    namespace fs = std::filesystem;
    Rng rng(29);
    const std::string path = (fs::temp_directory_path() / "ckpt_test.luve").string();

    Linear a(4, 3, rng);
    Linear b(3, 2, rng);
    NamedParams params;
    add_params(params, "a", a.params());
    add_params(params, "b", b.params());
    save_params(path, params, DType::f64);

    Linear a2(4, 3, rng);  // different init
    Linear b2(3, 2, rng);
    NamedParams params2;
    add_params(params2, "a", a2.params());
    add_params(params2, "b", b2.params());
    load_params(path, params2);
    for (int64_t i = 0; i < a.weight.value.size(); ++i)
        CHECK(a2.weight.value.data()[i] == a.weight.value.data()[i]);

    // shape mismatch and missing names are rejected
    Linear wrong(5, 3, rng);
    NamedParams bad{{"a.weight", &wrong.weight}};
    CHECK_THROWS_AS(load_params(path, bad), IoError);
}

TEST_CASE("adam reduces a quadratic") {
    Rng rng(31);
    Parameter p(Tensor::randn({8}, rng));
    Tensor target = Tensor::randn({8}, rng);
    Adam opt({&p}, AdamConfig{0.05, 0.9, 0.999, 1e-8});
    double first = 0.0, last = 0.0;
    for (int i = 0; i < 200; ++i) {
        GradTape tape;
        Tensor loss = mse_loss(p.use(&tape), target);
        if (i == 0) first = loss.item();
        last = loss.item();
        tape.backward(loss);
        opt.step(tape);
    }
    CHECK(last < 0.01 * first);
}

TEST_CASE("cosine restart schedule") {
    CHECK(cosine_restart_lr(1.0, 0.0, 100, 0) == doctest::Approx(1.0));
    CHECK(cosine_restart_lr(1.0, 0.0, 100, 50) == doctest::Approx(0.5));
    CHECK(cosine_restart_lr(1.0, 0.0, 100, 100) == doctest::Approx(1.0));  // restart
    CHECK(cosine_restart_lr(2e-4, 1e-7, 400000, 399999) < 2e-6);
}

TEST_CASE("frozen parameters never receive gradients") {
    Rng rng(37);
    Parameter p(Tensor::randn({4}, rng));
    p.frozen = true;
    GradTape tape;
    Tensor x = p.use(&tape);
    CHECK(x.node == -1);  // not watched
    Tensor loss = sum_all(mul(x, x));
    CHECK_THROWS_AS(tape.backward(loss), ContractError);  // loss is untracked
}
