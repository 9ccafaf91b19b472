#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "shapegan/networks.hpp"
#include "shapegan/tensor.hpp"

namespace shapegan {

enum class GradLevel { quick, full };
GradLevel parse_grad_level(const std::string& text);

inline constexpr double kFiniteDifferenceStep = 1e-5;
inline constexpr double kPrimitiveTolerance = 1e-6;
inline constexpr double kLossTolerance = 1e-5;
// Loss check points keep every leaky-relu input at least this far from zero.
inline constexpr double kKinkMargin = 1e-3;

// A scalar objective of several tensors. The gradient is taken with respect
// to every input.
struct GradCase {
    std::string name;
    std::vector<Tensor> inputs;
    std::function<Tensor(std::span<const Tensor>)> objective;
    double tolerance = kPrimitiveTolerance;
};

struct GradResult {
    std::string name;
    double error = 0.0;
    double tolerance = 0.0;
    std::size_t coordinates = 0;
    bool passed() const { return error <= tolerance; }
};

// max |analytic - numeric| / max(max |analytic|, max |numeric|), 0 when both vanish.
double gradient_error(std::span<const double> analytic, std::span<const double> numeric);

std::vector<double> analytic_gradient(const GradCase& c);
std::vector<double> numeric_gradient(const GradCase& c, double h = kFiniteDifferenceStep);
GradResult check_case(const GradCase& c, double h = kFiniteDifferenceStep);

// Miniature networks: 8x8 images, 16-dim features.
namespace mini {
inline constexpr std::size_t kImageSize = 8;
inline constexpr std::size_t kChannels = 3;
inline constexpr std::size_t kFeatures = 4;  // 4 x 2 x 2 = 16 dims
Model encoder(std::uint64_t seed);
Model decoder(std::uint64_t seed);
Model interpolator(std::uint64_t seed);
Model critic(std::size_t in, std::size_t hidden, std::uint64_t seed);
Model unet(std::uint64_t seed);
Model classifier(std::size_t classes, std::uint64_t seed);
}  // namespace mini

// Every differentiable primitive, projected onto a scalar with fixed random weights.
std::vector<GradCase> primitive_cases(std::uint64_t seed);
// Smallest |leaky-relu input| seen while evaluating the objective once.
double kink_margin(const GradCase& c);
// Every loss on miniature networks, with respect to the parameters it trains.
std::vector<GradCase> loss_cases(std::uint64_t seed);
// Gradient penalty of a 2-layer critic on 8-dim features, through double backward.
GradCase penalty_case(std::uint64_t seed);

// quick: one random point per case. full: three independent points per case.
std::vector<GradResult> run_gradcheck(GradLevel level,
                                      const std::function<void(const GradResult&)>& on_result = {});
// Throws VerificationError naming the worst failing case.
void require_passing(std::span<const GradResult> results);

}  // namespace shapegan
