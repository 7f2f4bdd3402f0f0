#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>

#include "codesum/common.hpp"
#include "codesum/ops.hpp"
#include "codesum/optim.hpp"
#include "codesum/serialize.hpp"
#include "codesum/tensor.hpp"
#include "support/gradcheck.hpp"

using namespace codesum;

namespace {

Tensor random_tensor(Shape shape, Rng& rng, bool requires_grad = true, double scale = 1.0) {
    std::vector<double> data(shape_numel(shape));
    for (auto& v : data) v = rng.gaussian() * scale;
    return Tensor::from(std::move(shape), std::move(data), requires_grad);
}

}  // namespace

TEST_CASE("matmul identity and hand product") {
    Tensor eye = Tensor::from({2, 2}, {1, 0, 0, 1});
    Tensor b = Tensor::from({2, 2}, {3, 4, 5, 6});
    Tensor c = matmul(eye, b);
    for (std::size_t i = 0; i < 4; ++i) CHECK(c.at(i) == b.at(i));

    Tensor r = Tensor::from({1, 2}, {1, 2});
    Tensor col = Tensor::from({2, 1}, {3, 4});
    CHECK(matmul(r, col).item() == doctest::Approx(11.0).epsilon(1e-15));
}

TEST_CASE("matmul shape mismatch raises") {
    Tensor a = Tensor::from({2, 3}, std::vector<double>(6, 1.0));
    Tensor b = Tensor::from({2, 3}, std::vector<double>(6, 1.0));
    CHECK_THROWS_AS(matmul(a, b), contract_error);
}

TEST_CASE("matmul gradient vs central differences") {
    Rng rng(7);
    Tensor a = random_tensor({4, 5}, rng);
    Tensor b = random_tensor({5, 3}, rng);
    auto res = gradcheck::check([&] { return sum(matmul(a, b)); }, {a, b});
    CHECK_MESSAGE(res.max_rel_err < 1e-6, res.worst);
}

TEST_CASE("softmax symmetry, stability, direct values") {
    Tensor u = Tensor::from({3}, {0, 0, 0});
    Tensor su = softmax(u);
    for (std::size_t i = 0; i < 3; ++i) CHECK(su.at(i) == doctest::Approx(1.0 / 3).epsilon(1e-15));

    Tensor big = Tensor::from({2}, {1000, 0});
    Tensor sb = softmax(big);
    CHECK(sb.at(0) == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(sb.at(1) == doctest::Approx(0.0).epsilon(1e-12));

    Tensor x = Tensor::from({3}, {1, 2, 3});
    Tensor sx = softmax(x);
    CHECK(sx.at(0) == doctest::Approx(0.09003057).epsilon(1e-6));
    CHECK(sx.at(1) == doctest::Approx(0.24472847).epsilon(1e-6));
    CHECK(sx.at(2) == doctest::Approx(0.66524096).epsilon(1e-6));
}

TEST_CASE("softmax rows sum to one and reject non-finite input") {
    Rng rng(11);
    Tensor x = random_tensor({5, 9}, rng, false, 3.0);
    Tensor y = softmax(x, 1);
    for (std::size_t i = 0; i < 5; ++i) {
        double s = 0.0;
        for (std::size_t j = 0; j < 9; ++j) s += y(i, j);
        CHECK(s == doctest::Approx(1.0).epsilon(1e-12));
    }
    Tensor bad = Tensor::from({2}, {std::numeric_limits<double>::infinity(), 0.0});
    CHECK_THROWS_AS(softmax(bad), numeric_error);
}

TEST_CASE("softmax axis 0 equals transposed row softmax") {
    Rng rng(13);
    Tensor x = random_tensor({4, 3}, rng, false);
    Tensor a0 = softmax(x, 0);
    for (std::size_t j = 0; j < 3; ++j) {
        double s = 0.0;
        for (std::size_t i = 0; i < 4; ++i) s += a0(i, j);
        CHECK(s == doctest::Approx(1.0).epsilon(1e-12));
    }
}

TEST_CASE("softmax gradient") {
    Rng rng(3);
    Tensor x = random_tensor({3, 6}, rng);
    Tensor w = random_tensor({3, 6}, rng, false);
    auto res = gradcheck::check([&] { return sum(mul(softmax_rows(x), w)); }, {x});
    CHECK_MESSAGE(res.max_rel_err < 1e-4, res.worst);
}

TEST_CASE("masked softmax zeros excluded entries exactly") {
    Rng rng(5);
    Tensor x = random_tensor({3, 4}, rng);
    std::vector<bool> allowed(12, true);
    allowed[1] = allowed[2] = allowed[3] = false;  // row 0 sees only column 0
    allowed[7] = false;
    Tensor y = masked_softmax_rows(x, allowed);
    CHECK(y(0, 0) == 1.0);
    CHECK(y(0, 1) == 0.0);
    CHECK(y(0, 3) == 0.0);
    CHECK(y(1, 3) == 0.0);
    Tensor w = random_tensor({3, 4}, rng, false);
    auto res = gradcheck::check([&] { return sum(mul(masked_softmax_rows(x, allowed), w)); }, {x});
    CHECK_MESSAGE(res.max_rel_err < 1e-4, res.worst);
}

TEST_CASE("cosine similarity values and errors") {
    Tensor v = Tensor::from({3}, {0.3, -1.2, 2.0});
    CHECK(cosine_similarity(v, v).item() == doctest::Approx(1.0).epsilon(1e-12));

    Tensor e1 = Tensor::from({2}, {1, 0});
    Tensor e2 = Tensor::from({2}, {0, 1});
    CHECK(cosine_similarity(e1, e2).item() == doctest::Approx(0.0).epsilon(1e-15));

    Tensor u = Tensor::from({2}, {0.6, 0.8});
    CHECK(cosine_similarity(e1, u).item() == doctest::Approx(0.6).epsilon(1e-12));

    Tensor z = Tensor::from({2}, {0, 0});
    CHECK_THROWS_AS(cosine_similarity(e1, z), degenerate_input_error);
}

TEST_CASE("cosine similarity is scale invariant") {
    Rng rng(17);
    for (int rep = 0; rep < 20; ++rep) {
        Tensor u = random_tensor({6}, rng, false);
        Tensor v = random_tensor({6}, rng, false);
        const double alpha = std::exp(rng.uniform(-3, 3));
        const double beta = std::exp(rng.uniform(-3, 3));
        const double base = cosine_similarity(u, v).item();
        const double scaled = cosine_similarity(scale(u, alpha), scale(v, beta)).item();
        CHECK(std::fabs(base - scaled) < 1e-12);
    }
}

TEST_CASE("cosine similarity gradient") {
    Rng rng(19);
    Tensor u = random_tensor({5}, rng);
    Tensor v = random_tensor({5}, rng);
    auto res = gradcheck::check([&] { return cosine_similarity(u, v); }, {u, v});
    CHECK_MESSAGE(res.max_rel_err < 1e-6, res.worst);
}

TEST_CASE("cross entropy uniform logits and limits") {
    Tensor logits = Tensor::zeros({3, 4});
    Tensor loss = cross_entropy(logits, {1, 2, 0}, -1);
    CHECK(loss.item() == doctest::Approx(std::log(4.0)).epsilon(1e-12));

    // margin toward the target drives the loss to zero
    double prev = loss.item();
    for (double margin : {2.0, 8.0, 32.0}) {
        std::vector<double> data(12, 0.0);
        data[0 * 4 + 1] = margin;
        data[1 * 4 + 2] = margin;
        data[2 * 4 + 0] = margin;
        const double l = cross_entropy(Tensor::from({3, 4}, data), {1, 2, 0}, -1).item();
        CHECK(l < prev);
        prev = l;
    }
    CHECK(prev < 1e-13);
}

TEST_CASE("cross entropy pad handling and degenerate input") {
    Rng rng(23);
    Tensor logits = random_tensor({4, 5}, rng, false);
    // pad positions contribute nothing
    Tensor full = cross_entropy(logits, {1, 2, 3, 0}, -1, Reduction::sum);
    Tensor padded = cross_entropy(logits, {1, 2, 3, 0}, 0, Reduction::sum);
    Tensor head = cross_entropy(slice_rows(logits, 0, 3), {1, 2, 3}, -1, Reduction::sum);
    CHECK(padded.item() == doctest::Approx(head.item()).epsilon(1e-15));
    CHECK(full.item() != padded.item());

    CHECK_THROWS_AS(cross_entropy(logits, {0, 0, 0, 0}, 0), degenerate_input_error);
    CHECK_THROWS_AS(cross_entropy(logits, {1, 2, 3, 9}, 0), contract_error);
}

TEST_CASE("cross entropy gradient") {
    Rng rng(29);
    Tensor logits = random_tensor({5, 7}, rng);
    std::vector<int> targets = {1, 0, 6, 0, 3};  // pad_id 0 masks two rows
    auto res = gradcheck::check([&] { return cross_entropy(logits, targets, 0); }, {logits});
    CHECK_MESSAGE(res.max_rel_err < 1e-5, res.worst);
    auto res_sum = gradcheck::check(
        [&] { return cross_entropy(logits, targets, 0, Reduction::sum); }, {logits});
    CHECK_MESSAGE(res_sum.max_rel_err < 1e-5, res_sum.worst);
}

TEST_CASE("elementwise and shape op gradients") {
    Rng rng(31);
    Tensor a = random_tensor({3, 4}, rng);
    Tensor b = random_tensor({3, 4}, rng);
    Tensor v = random_tensor({4}, rng);
    auto res = gradcheck::check(
        [&] {
            Tensor t = add(mul(a, b), add_rowvec(sub(a, b), v));
            t = gelu(t);
            t = transpose(t);
            t = concat_cols({slice_cols(t, 0, 2), slice_cols(t, 2, 3)});
            return mean(slice_rows(t, 0, 3));
        },
        {a, b, v});
    CHECK_MESSAGE(res.max_rel_err < 1e-4, res.worst);
}

TEST_CASE("layer norm gradient") {
    Rng rng(37);
    Tensor x = random_tensor({4, 6}, rng);
    Tensor g = random_tensor({6}, rng);
    Tensor b = random_tensor({6}, rng);
    Tensor w = random_tensor({4, 6}, rng, false);
    auto res = gradcheck::check([&] { return sum(mul(layer_norm(x, g, b), w)); }, {x, g, b});
    CHECK_MESSAGE(res.max_rel_err < 1e-4, res.worst);
}

TEST_CASE("l2 normalize, dot, logsumexp, gather gradients") {
    Rng rng(41);
    Tensor u = random_tensor({6}, rng);
    Tensor v = random_tensor({6}, rng);
    auto res = gradcheck::check([&] { return dot(l2_normalize(u), l2_normalize(v)); }, {u, v});
    CHECK_MESSAGE(res.max_rel_err < 1e-5, res.worst);

    Tensor w = random_tensor({8}, rng);
    auto res2 = gradcheck::check([&] { return logsumexp(w); }, {w});
    CHECK_MESSAGE(res2.max_rel_err < 1e-6, res2.worst);

    Tensor table = random_tensor({5, 3}, rng);
    std::vector<int> ids = {4, 0, 0, 2};
    Tensor mask_w = random_tensor({4, 3}, rng, false);
    auto res3 = gradcheck::check([&] { return sum(mul(rows_gather(table, ids), mask_w)); }, {table});
    CHECK_MESSAGE(res3.max_rel_err < 1e-6, res3.worst);
}

TEST_CASE("mean over masked rows ignores excluded rows") {
    Rng rng(43);
    Tensor x = random_tensor({4, 3}, rng);
    std::vector<bool> keep = {true, false, true, false};
    Tensor pooled = mean_rows_masked(x, keep);
    for (std::size_t j = 0; j < 3; ++j)
        CHECK(pooled.at(j) == doctest::Approx(0.5 * (x(0, j) + x(2, j))).epsilon(1e-15));
    auto res = gradcheck::check([&] { return sum(mean_rows_masked(x, keep)); }, {x});
    CHECK_MESSAGE(res.max_rel_err < 1e-6, res.worst);
    CHECK_THROWS_AS(mean_rows_masked(x, std::vector<bool>(4, false)), degenerate_input_error);
}

TEST_CASE("dropout scales by kept mass and is seed deterministic") {
    Tensor x = Tensor::filled({1000}, 1.0, true);
    Rng rng(99);
    Tensor y = dropout(x, 0.25, rng);
    double s = 0.0;
    for (double v : y.values()) {
        CHECK((v == 0.0 || v == doctest::Approx(1.0 / 0.75)));
        s += v;
    }
    CHECK(s / 1000.0 == doctest::Approx(1.0).epsilon(0.05));

    Rng r1(7), r2(7);
    Tensor y1 = dropout(x, 0.5, r1);
    Tensor y2 = dropout(x, 0.5, r2);
    for (std::size_t i = 0; i < 1000; ++i) CHECK(y1.at(i) == y2.at(i));

    // gradient flows through the recorded mask
    Rng r3(5);
    Tensor small = Tensor::from({4}, {1, 2, 3, 4}, true);
    Rng fixed(12);
    Tensor out = dropout(small, 0.5, fixed);
    sum(out).backward();
    for (std::size_t i = 0; i < 4; ++i)
        CHECK(small.grad()[i] == (out.at(i) == 0.0 ? 0.0 : 2.0));
}

TEST_CASE("backward accumulates until zero_grad") {
    Tensor x = Tensor::from({3}, {1, 2, 3}, true);
    Tensor loss = sum(mul(x, x));
    loss.backward();
    CHECK(x.grad()[1] == doctest::Approx(4.0));
    loss.backward();
    CHECK(x.grad()[1] == doctest::Approx(8.0));
    x.zero_grad();
    loss.backward();
    CHECK(x.grad()[1] == doctest::Approx(4.0));
}

TEST_CASE("backward requires a scalar") {
    Tensor x = Tensor::from({2}, {1, 2}, true);
    CHECK_THROWS_AS(x.backward(), contract_error);
}

TEST_CASE("diamond-shaped graph sums both paths") {
    Tensor x = Tensor::scalar(3.0, true);
    Tensor y = add(mul(x, x), x);  // x^2 + x, dy/dx = 2x + 1 = 7
    y.backward();
    CHECK(x.grad()[0] == doctest::Approx(7.0).epsilon(1e-15));
}

TEST_CASE("no-grad mode records nothing") {
    Tensor x = Tensor::from({2}, {1, 2}, true);
    {
        NoGradGuard ng;
        Tensor y = sum(mul(x, x));
        CHECK_FALSE(y.requires_grad());
    }
    Tensor y = sum(mul(x, x));
    CHECK(y.requires_grad());
}

TEST_CASE("adam step count, missing grads, determinism") {
    auto make_params = [] {
        return std::vector<Tensor>{Tensor::from({2}, {1.0, -2.0}, true),
                                   Tensor::from({1}, {0.5}, true)};
    };
    auto run = [&](std::uint64_t seed) {
        auto params = make_params();
        Adam opt(params, {.lr = 1e-2});
        Rng rng(seed);
        for (int it = 0; it < 25; ++it) {
            opt.zero_grad();
            Tensor loss = add(sum(mul(params[0], params[0])), mul(params[1], params[1]));
            loss.backward();
            opt.step();
        }
        CHECK(opt.step_count() == 25);
        return std::make_pair(params[0].values(), params[1].values());
    };
    auto a = run(1), b = run(1);
    CHECK(a.first == b.first);   // bitwise
    CHECK(a.second == b.second);

    auto params = make_params();
    Adam opt(params, {});
    CHECK_THROWS_AS(opt.step(), contract_error);
}

TEST_CASE("gradient clipping bounds the global norm") {
    Tensor p = Tensor::from({2}, {10.0, 0.0}, true);
    Adam opt({p}, {.lr = 1.0, .clip_norm = 1.0});
    opt.zero_grad();
    scale(sum(mul(p, p)), 100.0).backward();  // huge gradient
    opt.step();
    CHECK(opt.last_grad_norm() > 1.0);
    // after clipping the first update is bounded by lr * clip (per element, loosely)
    CHECK(std::fabs(p.at(0) - 10.0) <= 1.0 + 1e-9);
}

TEST_CASE("parameter container round trip is f32-exact") {
    Rng rng(53);
    std::vector<NamedTensor> tensors;
    tensors.push_back({"embed.weight", {3, 4}, {}});
    tensors.push_back({"bias", {5}, {}});
    for (auto& t : tensors) {
        t.data.resize(shape_numel(t.shape));
        for (auto& v : t.data) v = static_cast<double>(static_cast<float>(rng.gaussian()));
    }
    const std::string path = (std::filesystem::temp_directory_path() / "cs_container_test.bin").string();
    write_container(path, tensors);
    auto back = read_container(path);
    REQUIRE(back.size() == 2);
    CHECK(back[0].name == "embed.weight");
    CHECK(back[0].shape == Shape{3, 4});
    CHECK(back[0].data == tensors[0].data);
    CHECK(back[1].data == tensors[1].data);
    std::filesystem::remove(path);
}

TEST_CASE("container rejects bad magic and version") {
    std::string bytes = encode_container({{"x", {1}, {1.0}}});
    std::string bad = bytes;
    bad[0] = 'X';
    CHECK_THROWS_AS(decode_container(bad, "test"), data_error);
    std::string badver = bytes;
    badver[4] = 9;
    CHECK_THROWS_AS(decode_container(badver, "test"), data_error);
    CHECK_THROWS_AS(decode_container(bytes.substr(0, bytes.size() - 2), "test"), data_error);
}

TEST_CASE("seed derivation separates streams") {
    CHECK(derive_seed(1, "a") != derive_seed(1, "b"));
    CHECK(derive_seed(1, "a", 0) != derive_seed(1, "a", 1));
    CHECK(derive_seed(1, "a", 0, 0) == derive_seed(1, "a", 0, 0));
    CHECK(derive_seed(1, "a") != derive_seed(2, "a"));
}

TEST_CASE("rng shuffle is deterministic per seed") {
    auto a = shuffled_indices(100, 5);
    auto b = shuffled_indices(100, 5);
    auto c = shuffled_indices(100, 6);
    CHECK(a == b);
    CHECK(a != c);
    std::vector<bool> seen(100, false);
    for (auto i : a) seen[i] = true;
    for (bool s : seen) CHECK(s);
}
