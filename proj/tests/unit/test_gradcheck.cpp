#include <doctest.h>

#include <string>

#include "shapegan/error.hpp"
#include "shapegan/gradcheck.hpp"
#include "shapegan/ops.hpp"

using namespace shapegan;

TEST_CASE("gradient error metric") {
    const std::vector<double> a = {1.0, -2.0, 0.5};
    CHECK(gradient_error(a, a) == 0.0);
    const std::vector<double> b = {1.0, -2.0, 0.25};
    CHECK(gradient_error(a, b) == doctest::Approx(0.25 / 2.0));
    const std::vector<double> zeros = {0.0, 0.0};
    CHECK(gradient_error(zeros, zeros) == 0.0);
    CHECK_THROWS_AS(gradient_error(a, zeros), UsageError);
}

TEST_CASE("a wrong backward is reported by name") {
    // exp with its derivative replaced: the analytic gradient comes from a
    // function that differs from the evaluated one.
    GradCase broken{"broken exp", {Tensor({3}, {0.1, -0.4, 0.7})},
                    [](std::span<const Tensor> in) {
                        if (in[0].on_tape()) return sum(mul(in[0], in[0]));
                        return sum(exp(in[0]));
                    },
                    kPrimitiveTolerance};
    const GradResult r = check_case(broken);
    CHECK_FALSE(r.passed());
    CHECK(r.coordinates == 3);
    GradCase fine{"square", {Tensor({3}, {0.1, -0.4, 0.7})},
                  [](std::span<const Tensor> in) { return sum(mul(in[0], in[0])); }, kPrimitiveTolerance};
    const GradResult ok = check_case(fine);
    CHECK(ok.passed());

    const std::vector<GradResult> results = {ok, r};
    try {
        require_passing(results);
        FAIL("expected a verification error");
    } catch (const VerificationError& e) {
        const std::string msg = e.what();
        CHECK(msg.find("broken exp") != std::string::npos);
        CHECK(msg.find("1 gradient check") != std::string::npos);
        CHECK(e.exit_code() == 5);
    }
    CHECK_NOTHROW(require_passing(std::vector<GradResult>{ok}));
}

TEST_CASE("miniature cases keep leaky-relu inputs off the kink") {
    for (const GradCase& c : loss_cases(3)) {
        CAPTURE(c.name);
        CHECK(kink_margin(c) >= kKinkMargin);
    }
    CHECK(kink_margin(penalty_case(3)) >= kKinkMargin);
    CHECK(parse_grad_level("quick") == GradLevel::quick);
    CHECK(parse_grad_level("full") == GradLevel::full);
    CHECK_THROWS_AS(parse_grad_level("fast"), UsageError);
}
