#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "btsnet/tensor.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <iterator>
#include <limits>
#include <random>
#include <string>
#include <vector>

using namespace btsnet;

namespace {

std::string temp_path(const char* stem) {
    return std::string("tensor_test_") + stem + ".btsc";
}

}  // namespace

TEST_CASE("flat_index and unflatten_index round-trip over a full shape") {
    const std::vector<int> shape{2, 3, 4};
    for (std::size_t f = 0; f < numel(shape); ++f) {
        const auto idx = unflatten_index(shape, f);
        CHECK(flat_index(shape, idx) == f);
    }
    // Row-major order: last axis fastest.
    CHECK(flat_index(shape, {0, 0, 1}) == 1);
    CHECK(flat_index(shape, {0, 1, 0}) == 4);
    CHECK(flat_index(shape, {1, 0, 0}) == 12);
    CHECK_THROWS_AS((void)flat_index(shape, {2, 0, 0}), std::out_of_range);
    CHECK_THROWS_AS((void)flat_index(shape, {0, 0}), std::invalid_argument);
    CHECK_THROWS_AS((void)unflatten_index(shape, numel(shape)), std::out_of_range);
}

TEST_CASE("make_tensor validates shape and data length") {
    CHECK_THROWS_AS((void)make_tensor({2, 0}, {}), std::invalid_argument);
    CHECK_THROWS_AS((void)make_tensor({-1}, {1.0}), std::invalid_argument);
    CHECK_THROWS_AS((void)make_tensor({2}, {1.0, 2.0, 3.0}), std::invalid_argument);
    auto t = make_tensor({2, 2}, {1.0, 2.0, 3.0, 4.0});
    CHECK(t->size() == 4);
    CHECK(t->rank() == 2);
    CHECK_FALSE(t->requires_grad);
    CHECK(t->grad.empty());
    auto g = make_tensor({2}, {1.0, 2.0}, true);
    CHECK(g->requires_grad);
    CHECK(g->grad.size() == 2);
}

TEST_CASE("add computes elementwise sum and routes gradients to both operands") {
    auto a = make_tensor({2}, {1.0, 2.0}, true);
    auto b = make_tensor({2}, {3.0, 4.0}, true);
    auto c = add(a, b);
    CHECK(c->data == std::vector<double>{4.0, 6.0});

    backward(sum_all(c));
    CHECK(a->grad == std::vector<double>{1.0, 1.0});
    CHECK(b->grad == std::vector<double>{1.0, 1.0});

    auto z = zeros({2});
    auto same = add(a, z);
    CHECK(same->data == a->data);

    CHECK_THROWS_AS((void)add(a, zeros({3})), std::invalid_argument);
    CHECK_THROWS_AS((void)add(a, zeros({2, 1})), std::invalid_argument);
}

TEST_CASE("mul broadcasts the second operand against trailing axes") {
    auto a = make_tensor({3}, {1.0, 2.0, 3.0});
    auto two = scalar(2.0);
    CHECK(mul(a, two)->data == std::vector<double>{2.0, 4.0, 6.0});

    auto ones = full({3}, 1.0);
    CHECK(mul(a, ones)->data == a->data);

    // Per-row vector [1, 0] against a 2x2 matrix zeroes the second row.
    auto m = make_tensor({2, 2}, {1.0, 2.0, 3.0, 4.0});
    auto rows = make_tensor({2, 1}, {1.0, 0.0});
    CHECK(mul(m, rows)->data == std::vector<double>{1.0, 2.0, 0.0, 0.0});

    // Per-column vector broadcasts across rows.
    auto cols = make_tensor({2}, {10.0, 100.0});
    CHECK(mul(m, cols)->data == std::vector<double>{10.0, 200.0, 30.0, 400.0});

    // b may omit leading axes entirely.
    auto cube = full({2, 2, 2}, 1.0);
    auto last = make_tensor({2}, {5.0, 7.0});
    CHECK(mul(cube, last)->data == std::vector<double>{5.0, 7.0, 5.0, 7.0, 5.0, 7.0, 5.0, 7.0});

    CHECK_THROWS_AS((void)mul(a, zeros({2})), std::invalid_argument);
    CHECK_THROWS_AS((void)mul(a, zeros({1, 1, 3})), std::invalid_argument);
}

TEST_CASE("mul backward sums gradients over broadcast positions") {
    auto m = make_tensor({2, 2}, {1.0, 2.0, 3.0, 4.0}, true);
    auto v = make_tensor({2}, {10.0, 20.0}, true);
    backward(sum_all(mul(m, v)));
    CHECK(m->grad == std::vector<double>{10.0, 20.0, 10.0, 20.0});
    // d/dv_j sum = sum of the column it scales.
    CHECK(v->grad == std::vector<double>{4.0, 6.0});
}

TEST_CASE("reshape keeps data and routes gradients through") {
    auto a = make_tensor({2, 3}, {1, 2, 3, 4, 5, 6}, true);
    auto r = reshape(a, {3, 2});
    CHECK(r->shape == std::vector<int>{3, 2});
    CHECK(r->data == a->data);
    CHECK_THROWS_AS((void)reshape(a, {4, 2}), std::invalid_argument);

    backward(sum_all(mul(r, r)));
    for (int i = 0; i < 6; ++i) CHECK(a->grad[i] == doctest::Approx(2.0 * a->data[i]));
}

TEST_CASE("slice_axis1 extracts one index of the second axis") {
    // Shape (2, 3, 2): slice m picks [n, m, :] for every n.
    std::vector<double> d(12);
    for (int i = 0; i < 12; ++i) d[i] = i;
    auto x = make_tensor({2, 3, 2}, d, true);
    auto s = slice_axis1(x, 1);
    CHECK(s->shape == std::vector<int>{2, 2});
    CHECK(s->data == std::vector<double>{2.0, 3.0, 8.0, 9.0});
    CHECK_THROWS_AS((void)slice_axis1(x, 3), std::out_of_range);
    CHECK_THROWS_AS((void)slice_axis1(scalar(1.0), 0), std::invalid_argument);

    backward(sum_all(s));
    std::vector<double> expect(12, 0.0);
    expect[2] = expect[3] = expect[8] = expect[9] = 1.0;
    CHECK(x->grad == expect);
}

TEST_CASE("backward accumulates through shared subexpressions") {
    auto x = make_tensor({1}, {3.0}, true);
    auto y = mul(x, x);           // x^2
    auto z = add(y, y);           // 2 x^2
    backward(sum_all(z));
    CHECK(x->grad[0] == doctest::Approx(12.0));  // d/dx 2x^2 = 4x
}

TEST_CASE("backward rejects non-scalar roots and detached tensors") {
    auto a = make_tensor({2}, {1.0, 2.0}, true);
    CHECK_THROWS_AS(backward(add(a, a)), std::invalid_argument);
    auto c = scalar(1.0);
    CHECK_THROWS_AS(backward(c), std::invalid_argument);
}

TEST_CASE("NoGradGuard detaches results from the graph") {
    auto a = make_tensor({2}, {1.0, 2.0}, true);
    {
        NoGradGuard ng;
        auto c = add(a, a);
        CHECK_FALSE(c->requires_grad);
        CHECK(c->parents.empty());
        auto leaf = make_tensor({2}, {0.0, 0.0}, true);
        CHECK_FALSE(leaf->requires_grad);  // guard also disables new leaves
    }
    auto c = add(a, a);
    CHECK(c->requires_grad);
}

TEST_CASE("operations reject non-finite values") {
    auto inf = make_tensor({1}, {std::numeric_limits<double>::infinity()});
    auto x = scalar(1.0);
    CHECK_THROWS_AS((void)add(inf, x), std::runtime_error);
    auto big = scalar(1e308);
    CHECK_THROWS_AS((void)add(big, big), std::runtime_error);  // overflow caught at the op
    CHECK_THROWS_AS((void)mul(big, big), std::runtime_error);
}

TEST_CASE("check_gradient matches analytic gradients of simple functions") {
    std::mt19937_64 rng(7);
    std::normal_distribution<double> nd(0.0, 1.0);
    std::vector<double> d(6);
    for (auto& v : d) v = nd(rng);
    auto x = make_tensor({2, 3}, d);

    // f(x) = sum(x*x): analytic gradient 2x, smooth, well conditioned.
    auto quad = [](const TensorPtr& t) { return sum_all(mul(t, t)); };
    CHECK(check_gradient(quad, x, 1e-5) < 1e-6);

    // Constant function: zero gradient on both sides.
    auto constant = [](const TensorPtr&) { return scalar(4.0); };
    CHECK(check_gradient(constant, x, 1e-5) == 0.0);

    // Deliberately wrong gradient is detected: the value flows through a
    // detached branch, so the analytic gradient is zero while FD sees 2.
    auto mismatch = [](const TensorPtr& t) {
        TensorPtr doubled;
        {
            NoGradGuard ng;
            doubled = mul(t, scalar(2.0));
        }
        return sum_all(add(doubled, mul(t, scalar(0.0))));
    };
    CHECK(check_gradient(mismatch, x, 1e-5) > 0.5);
}

TEST_CASE("check_gradient does not mutate its input and validates eps") {
    auto x = make_tensor({2}, {1.5, -2.5});
    const auto before = x->data;
    auto f = [](const TensorPtr& t) { return sum_all(mul(t, t)); };
    (void)check_gradient(f, x, 1e-5);
    CHECK(x->data == before);
    CHECK_THROWS_AS((void)check_gradient(f, x, 0.0), std::invalid_argument);
    CHECK_THROWS_AS((void)check_gradient(f, x, 1e-1), std::invalid_argument);
    auto vec = [](const TensorPtr& t) { return add(t, t); };
    CHECK_THROWS_AS((void)check_gradient(vec, x, 1e-5), std::invalid_argument);
}

TEST_CASE("check_gradient_wrt probes a parameter inside a closure") {
    auto w = make_tensor({3}, {0.5, -1.0, 2.0}, true);
    auto x = make_tensor({3}, {1.0, 2.0, 3.0});
    auto loss = [&]() { return sum_all(mul(mul(x, w), mul(x, w))); };  // sum (x_i w_i)^2
    CHECK(check_gradient_wrt(loss, w, 1e-5) < 1e-6);

    // Coordinate subset restricts the FD sweep.
    CHECK(check_gradient_wrt(loss, w, 1e-5, {0, 2}) < 1e-6);

    auto frozen = make_tensor({3}, {1.0, 1.0, 1.0});
    CHECK_THROWS_AS((void)check_gradient_wrt(loss, frozen, 1e-5), std::invalid_argument);
}

TEST_CASE("tensor files round-trip shape exactly and values through 32-bit floats") {
    const std::string path = temp_path("roundtrip");
    // Values chosen to be exactly representable in binary32.
    auto t = make_tensor({2, 1, 3}, {1.0, -2.5, 0.0, 1024.0, 0.125, -7.0});
    write_tensor(path, *t);
    auto u = read_tensor(path);
    CHECK(u->shape == t->shape);
    CHECK(u->data == t->data);

    // Arbitrary doubles survive within float precision.
    std::mt19937_64 rng(11);
    std::normal_distribution<double> nd(0.0, 1.0);
    std::vector<double> d(17);
    for (auto& v : d) v = nd(rng);
    auto r = make_tensor({17}, d);
    write_tensor(path, *r);
    auto back = read_tensor(path);
    for (int i = 0; i < 17; ++i)
        CHECK(back->data[i] == doctest::Approx(r->data[i]).epsilon(1e-6));

    std::remove(path.c_str());
}

TEST_CASE("tensor files are byte-stable across repeated writes") {
    auto t = make_tensor({4}, {0.1, 0.2, 0.3, 0.4});
    const std::string p1 = temp_path("bytes1"), p2 = temp_path("bytes2");
    write_tensor(p1, *t);
    write_tensor(p2, *t);
    auto slurp = [](const std::string& p) {
        std::ifstream is(p, std::ios::binary);
        return std::string((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
    };
    CHECK(slurp(p1) == slurp(p2));
    CHECK(slurp(p1).size() == 4 + 4 + 4 + 4 * 4);  // magic, rank, extent, payload
    std::remove(p1.c_str());
    std::remove(p2.c_str());
}

TEST_CASE("read_tensor rejects missing and corrupt files") {
    CHECK_THROWS_AS((void)read_tensor("no_such_file.btsc"), std::runtime_error);
    const std::string path = temp_path("corrupt");
    {
        std::ofstream os(path, std::ios::binary);
        os << "JUNKJUNKJUNK";
    }
    CHECK_THROWS_AS((void)read_tensor(path), std::runtime_error);
    {
        std::ofstream os(path, std::ios::binary);
        os << "BTSC";  // magic with nothing after it
    }
    CHECK_THROWS_AS((void)read_tensor(path), std::runtime_error);
    std::remove(path.c_str());
}
