#include <catch2/catch_amalgamated.hpp>

#include "ctrans/autograd.hpp"
#include "support/check.hpp"

using namespace ctrans;
using testsupport::kGradTol;
using testsupport::max_grad_rel_error;
using testsupport::random_tensor;

namespace {

std::mt19937_64 rng_for(uint64_t n) { return make_rng(7, 0, n); }

}  // namespace

TEST_CASE("add/sub/mul/scale gradients match central differences") {
    auto rng = rng_for(1);
    auto a = make_param(random_tensor({3, 4}, rng));
    auto b = make_param(random_tensor({3, 4}, rng));
    SECTION("add") {
        auto f = [&] { return sum(add(a, b)); };
        REQUIRE(max_grad_rel_error(f, {a, b}) < kGradTol);
    }
    SECTION("sub") {
        auto f = [&] { return sum(mul(sub(a, b), sub(a, b))); };
        REQUIRE(max_grad_rel_error(f, {a, b}) < kGradTol);
    }
    SECTION("mul") {
        auto f = [&] { return sum(mul(a, b)); };
        REQUIRE(max_grad_rel_error(f, {a, b}) < kGradTol);
    }
    SECTION("scale") {
        auto f = [&] { return sum(scale(mul(a, a), 2.5)); };
        REQUIRE(max_grad_rel_error(f, {a}) < kGradTol);
    }
}

TEST_CASE("matmul and matmul_nt gradients") {
    auto rng = rng_for(2);
    auto a = make_param(random_tensor({3, 5}, rng));
    auto b = make_param(random_tensor({5, 2}, rng));
    auto c = make_param(random_tensor({4, 5}, rng));
    SECTION("matmul") {
        auto f = [&] { return sum(mul(matmul(a, b), matmul(a, b))); };
        REQUIRE(max_grad_rel_error(f, {a, b}) < kGradTol);
    }
    SECTION("matmul_nt") {
        auto f = [&] { return sum(mul(matmul_nt(a, c), matmul_nt(a, c))); };
        REQUIRE(max_grad_rel_error(f, {a, c}) < kGradTol);
    }
    SECTION("shape errors") {
        auto bad = make_param(random_tensor({4, 4}, rng));
        REQUIRE_THROWS_AS(matmul(a, bad), DimensionError);
        REQUIRE_THROWS_AS(matmul_nt(a, bad), DimensionError);
    }
}

TEST_CASE("add_rowvec broadcasts over rows and reduces gradient") {
    auto rng = rng_for(3);
    auto x = make_param(random_tensor({4, 3}, rng));
    auto v = make_param(random_tensor({3}, rng));
    auto f = [&] { return sum(mul(add_rowvec(x, v), add_rowvec(x, v))); };
    REQUIRE(max_grad_rel_error(f, {x, v}) < kGradTol);
}

TEST_CASE("slice and concat round trips") {
    auto rng = rng_for(4);
    auto x = make_param(random_tensor({6, 4}, rng));
    SECTION("slice_rows values") {
        auto s = slice_rows(x, 2, 3);
        REQUIRE(s->value.dim(0) == 3);
        for (long r = 0; r < 3; ++r)
            for (long c = 0; c < 4; ++c) REQUIRE(s->value.at(r, c) == x->value.at(r + 2, c));
    }
    SECTION("slice gradients") {
        auto f = [&] { return sum(mul(slice_rows(x, 1, 4), slice_rows(x, 1, 4))); };
        REQUIRE(max_grad_rel_error(f, {x}) < kGradTol);
        auto g = [&] { return sum(mul(slice_cols(x, 1, 2), slice_cols(x, 1, 2))); };
        REQUIRE(max_grad_rel_error(g, {x}) < kGradTol);
    }
    SECTION("concat_rows inverts row split") {
        auto top = slice_rows(x, 0, 2);
        auto bot = slice_rows(x, 2, 4);
        auto glued = concat_rows<double>({top, bot});
        REQUIRE(glued->value.same_shape(x->value));
        for (long i = 0; i < x->value.size(); ++i) REQUIRE(glued->value[i] == x->value[i]);
    }
    SECTION("concat gradients") {
        auto y = make_param(random_tensor({2, 4}, rng));
        auto f = [&] {
            auto g = concat_rows<double>({x, y});
            return sum(mul(g, g));
        };
        REQUIRE(max_grad_rel_error(f, {x, y}) < kGradTol);
        auto z = make_param(random_tensor({6, 2}, rng));
        auto h = [&] {
            auto g = concat_cols<double>({x, z});
            return sum(mul(g, g));
        };
        REQUIRE(max_grad_rel_error(h, {x, z}) < kGradTol);
    }
    SECTION("out of range slice throws") {
        REQUIRE_THROWS_AS(slice_rows(x, 4, 5), DimensionError);
        REQUIRE_THROWS_AS(slice_cols(x, 3, 3), DimensionError);
    }
}

TEST_CASE("gather_rows accumulates over repeated indices") {
    auto rng = rng_for(5);
    auto x = make_param(random_tensor({5, 3}, rng));
    std::vector<long> idx{1, 3, 1, 0};
    auto f = [&] {
        auto g = gather_rows(x, idx);
        return sum(mul(g, g));
    };
    REQUIRE(max_grad_rel_error(f, {x}) < kGradTol);
    REQUIRE_THROWS_AS(gather_rows(x, std::vector<long>{5}), DataError);
}

TEST_CASE("gather_cols routes by per-element index matrix") {
    auto rng = rng_for(6);
    auto x = make_param(random_tensor({2, 4}, rng));
    auto idx = std::make_shared<std::vector<long>>(std::vector<long>{3, 3, 0, 1, 2, 0});
    auto f = [&] {
        auto g = gather_cols(x, idx, 3);
        return sum(mul(g, g));
    };
    REQUIRE(max_grad_rel_error(f, {x}) < kGradTol);
    auto out = gather_cols(x, idx, 3);
    REQUIRE(out->value.at(0, 0) == x->value.at(0, 3));
    REQUIRE(out->value.at(1, 2) == x->value.at(1, 0));
}

TEST_CASE("gelu gradient") {
    auto rng = rng_for(7);
    auto x = make_param(random_tensor({3, 3}, rng, -2.0, 2.0));
    auto f = [&] { return sum(gelu(x)); };
    REQUIRE(max_grad_rel_error(f, {x}) < kGradTol);
}

TEST_CASE("softmax rows sum to one and gradient matches") {
    auto rng = rng_for(8);
    auto x = make_param(random_tensor({3, 5}, rng, -3.0, 3.0));
    auto y = softmax(x, 1);
    for (long r = 0; r < 3; ++r) {
        double s = 0;
        for (long c = 0; c < 5; ++c) s += y->value.at(r, c);
        REQUIRE(s == Catch::Approx(1.0).epsilon(1e-12));
    }
    auto w = constant(random_tensor({3, 5}, rng));
    auto f = [&] { return sum(mul(softmax(x, 1), w)); };
    REQUIRE(max_grad_rel_error(f, {x}) < kGradTol);
    SECTION("axis 0") {
        auto g = [&] { return sum(mul(softmax(x, 0), w)); };
        REQUIRE(max_grad_rel_error(g, {x}) < kGradTol);
    }
    SECTION("softmax is shift invariant per row") {
        auto shifted = softmax(add(x, constant(Tensor<double>::full({3, 5}, 100.0))), 1);
        for (long i = 0; i < y->value.size(); ++i)
            REQUIRE(shifted->value[i] == Catch::Approx(y->value[i]).margin(1e-12));
    }
}

TEST_CASE("masked softmax zeroes masked entries exactly") {
    auto rng = rng_for(9);
    auto x = make_param(random_tensor({2, 4}, rng));
    auto mask = std::make_shared<std::vector<uint8_t>>(std::vector<uint8_t>{1, 1, 0, 1, 0, 1, 1, 1});
    auto y = masked_softmax_rows(x, mask);
    REQUIRE(y->value.at(0, 2) == 0.0);
    REQUIRE(y->value.at(1, 0) == 0.0);
    double s0 = y->value.at(0, 0) + y->value.at(0, 1) + y->value.at(0, 3);
    REQUIRE(s0 == Catch::Approx(1.0).epsilon(1e-12));
    auto w = constant(random_tensor({2, 4}, rng));
    auto f = [&] { return sum(mul(masked_softmax_rows(x, mask), w)); };
    REQUIRE(max_grad_rel_error(f, {x}) < kGradTol);
    SECTION("fully masked row rejected") {
        auto dead = std::make_shared<std::vector<uint8_t>>(std::vector<uint8_t>{0, 0, 0, 0, 1, 1, 1, 1});
        REQUIRE_THROWS_AS(masked_softmax_rows(x, dead), DegenerateInputError);
    }
}

TEST_CASE("layer_norm normalizes rows and gradients check out") {
    auto rng = rng_for(10);
    auto x = make_param(random_tensor({4, 6}, rng, -2.0, 2.0));
    auto gain = make_param(Tensor<double>::full({6}, 1.0));
    auto bias = make_param(Tensor<double>::zeros({6}));
    auto y = layer_norm(x, gain, bias);
    for (long r = 0; r < 4; ++r) {
        double mu = 0, var = 0;
        for (long c = 0; c < 6; ++c) mu += y->value.at(r, c);
        mu /= 6;
        for (long c = 0; c < 6; ++c) var += (y->value.at(r, c) - mu) * (y->value.at(r, c) - mu);
        var /= 6;
        REQUIRE(mu == Catch::Approx(0.0).margin(1e-10));
        REQUIRE(var == Catch::Approx(1.0).epsilon(1e-3));
    }
    auto w = constant(random_tensor({4, 6}, rng));
    auto f = [&] { return sum(mul(layer_norm(x, gain, bias), w)); };
    REQUIRE(max_grad_rel_error(f, {x, gain, bias}) < kGradTol);
}

TEST_CASE("conv1d forward matches direct summation and gradients hold") {
    auto rng = rng_for(11);
    auto x = make_param(random_tensor({7, 3}, rng));
    auto k = make_param(random_tensor({2, 3, 4}, rng));
    SECTION("stride 2 values") {
        auto y = conv1d(x, k, 2, 1);
        REQUIRE(y->value.dim(0) == 3);
        REQUIRE(y->value.dim(1) == 4);
        // independent recomputation
        for (long t = 0; t < 3; ++t) {
            for (long j = 0; j < 4; ++j) {
                double acc = 0;
                for (long w = 0; w < 2; ++w)
                    for (long i = 0; i < 3; ++i)
                        acc += x->value.at(t * 2 + w, i) * k->value[(w * 3 + i) * 4 + j];
                REQUIRE(y->value.at(t, j) == Catch::Approx(acc).epsilon(1e-12));
            }
        }
    }
    SECTION("gradients, stride 1") {
        auto f = [&] {
            auto y = conv1d(x, k, 1, 1);
            return sum(mul(y, y));
        };
        REQUIRE(max_grad_rel_error(f, {x, k}) < kGradTol);
    }
    SECTION("gradients, dilation 2") {
        auto f = [&] {
            auto y = conv1d(x, k, 1, 2);
            return sum(mul(y, y));
        };
        REQUIRE(max_grad_rel_error(f, {x, k}) < kGradTol);
    }
    SECTION("too-short input throws") {
        auto tiny = make_param(random_tensor({1, 3}, rng));
        REQUIRE_THROWS_AS(conv1d(tiny, k, 1, 1), DegenerateInputError);
    }
}

TEST_CASE("conv1d_transpose expands t rows into t*w rows") {
    auto rng = rng_for(12);
    auto x = make_param(random_tensor({3, 2}, rng));
    auto k = make_param(random_tensor({4, 2, 5}, rng));
    auto y = conv1d_transpose(x, k);
    REQUIRE(y->value.dim(0) == 12);
    REQUIRE(y->value.dim(1) == 5);
    auto f = [&] {
        auto y2 = conv1d_transpose(x, k);
        return sum(mul(y2, y2));
    };
    REQUIRE(max_grad_rel_error(f, {x, k}) < kGradTol);
}

TEST_CASE("pool1d mean and max") {
    auto rng = rng_for(13);
    auto x = make_param(random_tensor({6, 2}, rng));
    SECTION("mean values") {
        auto y = pool1d(x, PoolKind::Mean, 3, 3);
        REQUIRE(y->value.dim(0) == 2);
        REQUIRE(y->value.at(0, 0) ==
                Catch::Approx((x->value.at(0, 0) + x->value.at(1, 0) + x->value.at(2, 0)) / 3.0));
    }
    SECTION("mean gradient") {
        auto f = [&] {
            auto y = pool1d(x, PoolKind::Mean, 2, 2);
            return sum(mul(y, y));
        };
        REQUIRE(max_grad_rel_error(f, {x}) < kGradTol);
    }
    SECTION("max gradient routes to window argmax") {
        auto f = [&] {
            auto y = pool1d(x, PoolKind::Max, 2, 2);
            return sum(mul(y, y));
        };
        REQUIRE(max_grad_rel_error(f, {x}) < kGradTol);
    }
    SECTION("window longer than input throws") {
        REQUIRE_THROWS_AS(pool1d(x, PoolKind::Max, 7, 7), DegenerateInputError);
    }
}

TEST_CASE("l2_norm gradient is safe at the origin") {
    auto rng = rng_for(14);
    auto x = make_param(random_tensor({3, 3}, rng));
    auto f = [&] { return l2_norm(x); };
    REQUIRE(max_grad_rel_error(f, {x}) < kGradTol);
    auto z = make_param(Tensor<double>::zeros({2, 2}));
    auto loss = l2_norm(z);
    backward(loss);
    for (long i = 0; i < 4; ++i) REQUIRE(z->grad[i] == 0.0);
    REQUIRE(z->grad.all_finite());
}

TEST_CASE("cross_entropy_mean equals manual log-softmax NLL") {
    auto rng = rng_for(15);
    auto logits = make_param(random_tensor({4, 6}, rng, -2.0, 2.0));
    std::vector<int> targets{2, 0, 5, 3};
    std::vector<double> per_token;
    auto loss = cross_entropy_mean(logits, targets, &per_token);
    double manual = 0;
    for (long r = 0; r < 4; ++r) {
        double lse = 0;
        for (long c = 0; c < 6; ++c) lse += std::exp(logits->value.at(r, c));
        double nll = std::log(lse) - logits->value.at(r, targets[static_cast<size_t>(r)]);
        REQUIRE(per_token[static_cast<size_t>(r)] == Catch::Approx(nll).epsilon(1e-10));
        manual += nll;
    }
    REQUIRE(loss->value[0] == Catch::Approx(manual / 4.0).epsilon(1e-10));
    auto f = [&] { return cross_entropy_mean(logits, targets); };
    REQUIRE(max_grad_rel_error(f, {logits}) < kGradTol);
    REQUIRE_THROWS_AS(cross_entropy_mean(logits, std::vector<int>{9, 0, 0, 0}), DataError);
}

TEST_CASE("stop_gradient blocks backward flow") {
    auto rng = rng_for(16);
    auto x = make_param(random_tensor({2, 2}, rng));
    auto y = mul(stop_gradient(x), x);
    backward(sum(y));
    // d/dx (sg(x) * x) = sg(x), not 2x
    for (long i = 0; i < 4; ++i) REQUIRE(x->grad[i] == Catch::Approx(x->value[i]));
}

TEST_CASE("leaf gradients accumulate across backward calls, interior restart") {
    auto rng = rng_for(17);
    auto x = make_param(random_tensor({2, 2}, rng));
    auto run = [&] { backward(sum(mul(x, x))); };
    run();
    Tensor<double> once = x->grad;
    run();
    for (long i = 0; i < 4; ++i) REQUIRE(x->grad[i] == Catch::Approx(2.0 * once[i]));
    x->zero_grad();
    run();
    for (long i = 0; i < 4; ++i) REQUIRE(x->grad[i] == Catch::Approx(once[i]));
}

TEST_CASE("diamond-shaped graphs accumulate through shared nodes") {
    auto rng = rng_for(18);
    auto x = make_param(random_tensor({2, 3}, rng));
    auto f = [&] {
        auto shared = mul(x, x);
        auto left = scale(shared, 2.0);
        auto right = mul(shared, shared);
        return sum(add(left, right));
    };
    REQUIRE(max_grad_rel_error(f, {x}) < kGradTol);
}

TEST_CASE("NoGradGuard suppresses graph construction") {
    auto rng = rng_for(19);
    auto x = make_param(random_tensor({2, 2}, rng));
    Var<double> y;
    {
        NoGradGuard ng;
        y = mul(x, x);
    }
    REQUIRE_FALSE(y->requires_grad);
    REQUIRE(y->parents.empty());
    auto z = mul(x, x);
    REQUIRE(z->requires_grad);
}

TEST_CASE("backward rejects non-scalar roots") {
    auto rng = rng_for(20);
    auto x = make_param(random_tensor({2, 2}, rng));
    REQUIRE_THROWS_AS(backward(mul(x, x)), ContractError);
}

TEST_CASE("dropout is identity at rate 0 and rescales kept entries") {
    auto rng = rng_for(21);
    auto x = make_param(random_tensor({8, 8}, rng));
    auto same = dropout(x, 0.0, rng);
    REQUIRE(same.get() == x.get());
    auto rng2 = rng_for(22);
    auto y = dropout(x, 0.5, rng2);
    long zeros = 0;
    for (long i = 0; i < y->value.size(); ++i) {
        if (y->value[i] == 0.0)
            ++zeros;
        else
            REQUIRE(y->value[i] == Catch::Approx(2.0 * x->value[i]));
    }
    REQUIRE(zeros > 0);
    REQUIRE(zeros < 64);
    REQUIRE_THROWS_AS(dropout(x, 1.0, rng2), ConfigError);
}

TEST_CASE("mean reduces by element count") {
    auto rng = rng_for(23);
    auto x = make_param(random_tensor({3, 4}, rng));
    auto m = mean(x);
    double manual = 0;
    for (long i = 0; i < 12; ++i) manual += x->value[i];
    REQUIRE(m->value[0] == Catch::Approx(manual / 12.0));
}
