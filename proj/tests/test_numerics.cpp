#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "koala/gradcheck.hpp"
#include "koala/optim.hpp"
#include "koala/params.hpp"
#include "koala/tape.hpp"
#include "koala/tensor.hpp"

using namespace koala;

namespace {

Tensor t2(std::vector<std::size_t> dims, std::vector<double> vals) {
    Tensor t(dims);
    REQUIRE(t.numel() == vals.size());
    t.v = std::move(vals);
    return t;
}

// Independent high-precision triple-loop matmul, kept apart from the tape path.
Tensor oracle_matmul(const Tensor& a, const Tensor& b, const Tensor& bias) {
    Tensor out({a.rows(), b.cols()});
    for (std::size_t i = 0; i < a.rows(); ++i)
        for (std::size_t j = 0; j < b.cols(); ++j) {
            long double acc = 0.0L;
            for (std::size_t k = 0; k < a.cols(); ++k)
                acc += static_cast<long double>(a.at(i, k)) * static_cast<long double>(b.at(k, j));
            out.at(i, j) = static_cast<double>(acc + static_cast<long double>(bias.v[j]));
        }
    return out;
}

double primitive_grad_check(ParamStore& store, const std::vector<std::string>& names,
                            const LossBuilder& build) {
    return grad_check(store, names, build, 1e-5).max_rel_err;
}

} // namespace

TEST_CASE("affine identity and hand arithmetic") {
    PrecisionGuard g(Precision::f64);
    Tape t;
    NodeId x = t.constant(t2({1, 2}, {1, 2}));
    NodeId w = t.constant(t2({2, 2}, {1, 0, 0, 1}));
    NodeId b = t.constant(t2({2}, {0, 0}));
    const Tensor& out = t.value(affine(t, x, w, b));
    CHECK(out.at(0, 0) == doctest::Approx(1));
    CHECK(out.at(0, 1) == doctest::Approx(2));

    NodeId x2 = t.constant(t2({1, 2}, {1, 1}));
    NodeId w2 = t.constant(t2({2, 2}, {2, 0, 0, 3}));
    NodeId b2 = t.constant(t2({2}, {1, 1}));
    const Tensor& out2 = t.value(affine(t, x2, w2, b2));
    CHECK(out2.at(0, 0) == doctest::Approx(3));
    CHECK(out2.at(0, 1) == doctest::Approx(4));
}

TEST_CASE("affine matches triple-loop oracle") {
    PrecisionGuard g(Precision::f64);
    Rng rng(11);
    Tensor a = Tensor::randn({3, 4}, rng);
    Tensor b = Tensor::randn({4, 2}, rng);
    Tensor bias = Tensor::randn({2}, rng);
    Tensor expect = oracle_matmul(a, b, bias);
    Tape t;
    const Tensor& got = t.value(affine(t, t.constant(a), t.constant(b), t.constant(bias)));
    for (std::size_t i = 0; i < expect.numel(); ++i)
        CHECK(std::abs(got.v[i] - expect.v[i]) < 1e-12);
}

TEST_CASE("affine rejects dimension mismatch") {
    Tape t;
    NodeId x = t.constant(Tensor::zeros({2, 3}));
    NodeId w = t.constant(Tensor::zeros({4, 2}));
    NodeId b = t.constant(Tensor::zeros({2}));
    CHECK_THROWS_AS(affine(t, x, w, b), InputError);
}

TEST_CASE("softmax rows") {
    PrecisionGuard g(Precision::f64);
    Tape t;
    const Tensor& u = t.value(softmax_rows(t, t.constant(t2({1, 3}, {0, 0, 0}))));
    for (double x : u.v) CHECK(x == doctest::Approx(1.0 / 3.0));

    // scalar oracle: e/(1+e), 1/(1+e)
    const double e = std::exp(1.0);
    const Tensor& s = t.value(softmax_rows(t, t.constant(t2({1, 2}, {1, 0}))));
    CHECK(s.v[0] == doctest::Approx(e / (1 + e)).epsilon(1e-12));
    CHECK(s.v[1] == doctest::Approx(1 / (1 + e)).epsilon(1e-12));

    const Tensor& big = t.value(softmax_rows(t, t.constant(t2({1, 2}, {1000, 1000}))));
    CHECK(big.v[0] == doctest::Approx(0.5));
    CHECK(big.v[1] == doctest::Approx(0.5));
}

TEST_CASE("softmax rows sum to one and stay in [0,1]") {
    PrecisionGuard g(Precision::f64);
    Rng rng(7);
    for (int rep = 0; rep < 50; ++rep) {
        Tape t;
        Tensor x = Tensor::randn({5, 9}, rng, 10.0);
        const Tensor& y = t.value(softmax_rows(t, t.constant(x)));
        for (std::size_t i = 0; i < y.rows(); ++i) {
            double sum = 0.0;
            for (std::size_t j = 0; j < y.cols(); ++j) {
                CHECK(y.at(i, j) >= 0.0);
                CHECK(y.at(i, j) <= 1.0);
                sum += y.at(i, j);
            }
            CHECK(std::abs(sum - 1.0) < 1e-6);
        }
    }
}

TEST_CASE("cross attention scalar oracle") {
    PrecisionGuard g(Precision::f64);
    Tape t;
    NodeId q = t.constant(t2({1, 1}, {1}));
    NodeId k = t.constant(t2({2, 1}, {1, 0}));
    NodeId v = t.constant(t2({2, 1}, {2, 4}));
    AttentionResult res = cross_attention(t, q, k, v, 1);
    const double e = std::exp(1.0);
    const double expect = 2 * e / (1 + e) + 4 / (1 + e);
    CHECK(t.value(res.out).v[0] == doctest::Approx(expect).epsilon(1e-12));
    CHECK(t.value(res.out).v[0] == doctest::Approx(2.5379).epsilon(1e-4));
}

TEST_CASE("cross attention with identical keys averages values") {
    PrecisionGuard g(Precision::f64);
    Rng rng(3);
    Tape t;
    Tensor kv = Tensor::randn({1, 8}, rng);
    Tensor k({4, 8});
    for (std::size_t i = 0; i < 4; ++i)
        for (std::size_t j = 0; j < 8; ++j) k.at(i, j) = kv.v[j];
    Tensor v = Tensor::randn({4, 8}, rng);
    AttentionResult res =
        cross_attention(t, t.constant(Tensor::randn({3, 8}, rng)), t.constant(k), t.constant(v), 2);
    const Tensor& out = t.value(res.out);
    for (std::size_t j = 0; j < 8; ++j) {
        double mean = 0.0;
        for (std::size_t i = 0; i < 4; ++i) mean += v.at(i, j);
        mean /= 4.0;
        for (std::size_t i = 0; i < 3; ++i) CHECK(out.at(i, j) == doctest::Approx(mean));
    }
}

TEST_CASE("cross attention invariant to joint key/value permutation") {
    PrecisionGuard g(Precision::f64);
    Rng rng(5);
    Tensor q = Tensor::randn({3, 8}, rng);
    Tensor k = Tensor::randn({5, 8}, rng);
    Tensor v = Tensor::randn({5, 8}, rng);
    Tensor kp({5, 8}), vp({5, 8});
    const std::size_t perm[5] = {3, 0, 4, 1, 2};
    for (std::size_t i = 0; i < 5; ++i)
        for (std::size_t j = 0; j < 8; ++j) {
            kp.at(i, j) = k.at(perm[i], j);
            vp.at(i, j) = v.at(perm[i], j);
        }
    Tape t;
    const Tensor& a =
        t.value(cross_attention(t, t.constant(q), t.constant(k), t.constant(v), 4).out);
    const Tensor& b =
        t.value(cross_attention(t, t.constant(q), t.constant(kp), t.constant(vp), 4).out);
    for (std::size_t i = 0; i < a.numel(); ++i) CHECK(a.v[i] == doctest::Approx(b.v[i]).epsilon(1e-12));
}

TEST_CASE("cross attention rejects width not divisible by heads") {
    Tape t;
    NodeId q = t.constant(Tensor::zeros({2, 6}));
    CHECK_THROWS_AS(cross_attention(t, q, q, q, 4), ConfigError);
}

TEST_CASE("layer norm") {
    PrecisionGuard g(Precision::f64);
    Tape t;
    NodeId gain = t.constant(t2({3}, {1, 1, 1}));
    NodeId bias = t.constant(t2({3}, {0, 0, 0}));
    // constant row: zero variance handled by epsilon
    const Tensor& z = t.value(layer_norm(t, t.constant(t2({1, 3}, {5, 5, 5})), gain, bias));
    for (double x : z.v) CHECK(x == doctest::Approx(0.0));

    NodeId g2 = t.constant(t2({2}, {1, 1}));
    NodeId b2 = t.constant(t2({2}, {0, 0}));
    const Tensor& y = t.value(layer_norm(t, t.constant(t2({1, 2}, {1, -1})), g2, b2));
    CHECK(y.v[0] == doctest::Approx(1.0).epsilon(1e-4));
    CHECK(y.v[1] == doctest::Approx(-1.0).epsilon(1e-4));

    NodeId g0 = t.constant(t2({2}, {0, 0}));
    NodeId b3 = t.constant(t2({2}, {7, -2}));
    const Tensor& w = t.value(layer_norm(t, t.constant(t2({2, 2}, {1, 4, -3, 9})), g0, b3));
    CHECK(w.at(0, 0) == doctest::Approx(7.0));
    CHECK(w.at(0, 1) == doctest::Approx(-2.0));
    CHECK(w.at(1, 0) == doctest::Approx(7.0));
    CHECK(w.at(1, 1) == doctest::Approx(-2.0));
}

TEST_CASE("grad check: x^2 at x=3") {
    ParamStore store;
    store.add("x", t2({1}, {3.0}), /*frozen=*/false);
    GradCheckReport rep = grad_check(store, {"x"}, [](Tape& t, ParamCtx& ctx) {
        NodeId x = ctx["x"];
        return sum_all(t, mul(t, x, x));
    });
    CHECK(rep.max_rel_err < 1e-9);
    CHECK(rep.worst_analytic == doctest::Approx(6.0));
}

TEST_CASE("grad check per primitive stays under 1e-6") {
    Rng rng(17);

    SUBCASE("affine") {
        ParamStore store;
        store.add("w", Tensor::randn({4, 3}, rng), false);
        store.add("b", Tensor::randn({3}, rng), false);
        store.add("x", Tensor::randn({2, 4}, rng), false);
        CHECK(primitive_grad_check(store, {"w", "b", "x"}, [](Tape& t, ParamCtx& ctx) {
                  return sum_all(t, gelu(t, affine(t, ctx["x"], ctx["w"], ctx["b"])));
              }) < 1e-6);
    }
    SUBCASE("softmax") {
        ParamStore store;
        store.add("x", Tensor::randn({3, 5}, rng), false);
        store.add("m", Tensor::randn({3, 5}, rng), false);
        CHECK(primitive_grad_check(store, {"x", "m"}, [](Tape& t, ParamCtx& ctx) {
                  return sum_all(t, mul(t, softmax_rows(t, ctx["x"]), ctx["m"]));
              }) < 1e-6);
    }
    SUBCASE("log softmax picks") {
        ParamStore store;
        store.add("x", Tensor::randn({3, 5}, rng), false);
        CHECK(primitive_grad_check(store, {"x"}, [](Tape& t, ParamCtx& ctx) {
                  return nll_picks(t, log_softmax_rows(t, ctx["x"]),
                                   {{0, 2}, {1, 4}, {2, 0}});
              }) < 1e-6);
    }
    SUBCASE("layer norm") {
        ParamStore store;
        store.add("x", Tensor::randn({3, 6}, rng), false);
        store.add("g", Tensor::randn({6}, rng), false);
        store.add("b", Tensor::randn({6}, rng), false);
        store.add("m", Tensor::randn({3, 6}, rng), false);
        CHECK(primitive_grad_check(store, {"x", "g", "b"}, [](Tape& t, ParamCtx& ctx) {
                  return sum_all(t, mul(t, layer_norm(t, ctx["x"], ctx["g"], ctx["b"]), ctx["m"]));
              }) < 1e-6);
    }
    SUBCASE("attention") {
        ParamStore store;
        store.add("q", Tensor::randn({3, 4}, rng), false);
        store.add("k", Tensor::randn({5, 4}, rng), false);
        store.add("v", Tensor::randn({5, 4}, rng), false);
        store.add("m", Tensor::randn({3, 4}, rng), false);
        CHECK(primitive_grad_check(store, {"q", "k", "v"}, [](Tape& t, ParamCtx& ctx) {
                  AttentionResult res = cross_attention(t, ctx["q"], ctx["k"], ctx["v"], 2);
                  return sum_all(t, mul(t, res.out, ctx["m"]));
              }) < 1e-6);
    }
    SUBCASE("gather and concat") {
        ParamStore store;
        store.add("tab", Tensor::randn({6, 4}, rng), false);
        store.add("y", Tensor::randn({3, 4}, rng), false);
        CHECK(primitive_grad_check(store, {"tab", "y"}, [](Tape& t, ParamCtx& ctx) {
                  NodeId g = gather_rows(t, ctx["tab"], {1, 1, 5});
                  NodeId c = concat_rows(t, {g, ctx["y"]});
                  NodeId s = slice_rows(t, c, 1, 5);
                  return sum_all(t, mul(t, s, s));
              }) < 1e-6);
    }
    SUBCASE("scalar fusion") {
        ParamStore store;
        store.add("w", t2({1}, {0.37}), false);
        store.add("a", Tensor::randn({2, 3}, rng), false);
        store.add("z", Tensor::randn({2, 3}, rng), false);
        CHECK(primitive_grad_check(store, {"w", "a", "z"}, [](Tape& t, ParamCtx& ctx) {
                  NodeId fused = add(t, ctx["z"], scale_by(t, ctx["a"], ctx["w"]));
                  return sum_all(t, mul(t, fused, fused));
              }) < 1e-6);
    }
}

TEST_CASE("grad check: attention plus cross entropy on 2x2 inputs") {
    Rng rng(23);
    ParamStore store;
    store.add("q", Tensor::randn({2, 2}, rng), false);
    store.add("k", Tensor::randn({2, 2}, rng), false);
    store.add("v", Tensor::randn({2, 2}, rng), false);
    GradCheckReport rep = grad_check(store, {"q", "k", "v"}, [](Tape& t, ParamCtx& ctx) {
        AttentionResult res = cross_attention(t, ctx["q"], ctx["k"], ctx["v"], 1);
        return nll_picks(t, log_softmax_rows(t, res.out), {{0, 1}, {1, 0}});
    });
    CHECK(rep.max_rel_err < 1e-6);
}

TEST_CASE("non-finite output names the offending primitive") {
    Tape t;
    NodeId big = t.constant(Tensor::full({1, 2}, 1e308));
    try {
        add(t, big, big);
        FAIL("expected NumericError");
    } catch (const NumericError& e) {
        CHECK(std::string(e.what()).find("add") != std::string::npos);
    }
}

TEST_CASE("adamw schedule endpoints") {
    OptimConfig cfg;
    cfg.max_lr = 1e-3;
    cfg.total_steps = 1000;
    cfg.warmup_frac = 0.1;
    OptimState opt(cfg);
    CHECK(opt.lr_at(0) == doctest::Approx(0.0));
    CHECK(opt.lr_at(100) == doctest::Approx(1e-3));
    CHECK(opt.lr_at(1000) == doctest::Approx(0.0).epsilon(1e-9));
    CHECK(opt.lr_at(50) == doctest::Approx(5e-4));
}

TEST_CASE("adamw leaves parameters unchanged at warmup step zero") {
    Rng rng(31);
    ParamStore store;
    store.add("p", Tensor::randn({3, 3}, rng), false);
    const std::string before = checksum_hex(store.value("p"));
    OptimConfig cfg;
    cfg.total_steps = 100;
    cfg.warmup_frac = 0.1;
    OptimState opt(cfg);
    std::map<std::string, Tensor> grads;
    grads["p"] = Tensor::full({3, 3}, 1.0);
    opt.apply(store, grads);
    CHECK(checksum_hex(store.value("p")) == before);
    // Second step has nonzero lr.
    opt.apply(store, grads);
    CHECK(checksum_hex(store.value("p")) != before);
}

TEST_CASE("adamw rejects gradients for frozen parameters") {
    ParamStore store;
    store.add("frozen.p", Tensor::zeros({2}), /*frozen=*/true);
    OptimState opt(OptimConfig{});
    std::map<std::string, Tensor> grads;
    grads["frozen.p"] = Tensor::full({2}, 1.0);
    CHECK_THROWS_AS(opt.apply(store, grads), ContractError);
}

TEST_CASE("frozen parameters keep their checksums across training steps") {
    Rng rng(41);
    ParamStore store;
    store.add("frozen.a", Tensor::randn({4, 4}, rng), true);
    store.add("live.b", Tensor::randn({4, 4}, rng), false);
    const auto frozen_before = store.checksums(/*frozen_only=*/true);
    OptimConfig cfg;
    cfg.total_steps = 20;
    OptimState opt(cfg);
    for (int i = 0; i < 20; ++i) {
        Tape t;
        ParamCtx ctx(t, store);
        NodeId a = ctx["frozen.a"];
        NodeId b = ctx["live.b"];
        NodeId loss = sum_all(t, mul(t, add(t, a, b), add(t, a, b)));
        t.backward(loss);
        opt.apply(store, ctx.grads());
    }
    CHECK(store.checksums(true) == frozen_before);
    CHECK(checksum_hex(store.value("live.b")) != frozen_before.at("frozen.a"));
}

TEST_CASE("frozen leaves never retain gradients") {
    ParamStore store;
    store.add("frozen.a", Tensor::full({2, 2}, 1.0), true);
    store.add("live.b", Tensor::full({2, 2}, 2.0), false);
    Tape t;
    ParamCtx ctx(t, store);
    NodeId loss = sum_all(t, mul(t, ctx["frozen.a"], ctx["live.b"]));
    t.backward(loss);
    auto grads = ctx.grads();
    CHECK(grads.count("frozen.a") == 0);
    CHECK(grads.count("live.b") == 1);
}

TEST_CASE("koat round trip preserves f32 payload and checksum") {
    PrecisionGuard g(Precision::f32);
    Rng rng(53);
    Tensor t = Tensor::randn({3, 5, 2}, rng);
    const std::string path = (std::filesystem::temp_directory_path() / "koala_t.koat").string();
    save_koat(t, path);
    Tensor back = load_koat(path);
    REQUIRE(back.dims == t.dims);
    for (std::size_t i = 0; i < t.numel(); ++i) CHECK(back.v[i] == t.v[i]);
    CHECK(checksum(back) == checksum(t));
    std::filesystem::remove(path);
}

TEST_CASE("f32 run mode rounds primitive outputs") {
    PrecisionGuard g(Precision::f32);
    Tape t;
    NodeId a = t.constant(Tensor::full({1}, 1.0));
    NodeId b = t.constant(Tensor::full({1}, 1e-9));
    const Tensor& out = t.value(add(t, a, b));
    CHECK(out.v[0] == static_cast<double>(static_cast<float>(1.0 + 1e-9)));
}
