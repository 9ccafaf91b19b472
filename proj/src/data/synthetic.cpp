#include "shapegan/synthetic.hpp"

#include <algorithm>
#include <array>
#include <cmath>

#include "shapegan/error.hpp"
#include "shapegan/netpbm.hpp"

namespace shapegan {

namespace {

constexpr double kPi = 3.14159265358979323846;
constexpr int kMaxShapeRetries = 64;
// Largest contour radius plus centre offset, as a fraction of the frame.
constexpr double kFrameLimit = 0.47;

using Rgb = std::array<double, 3>;

constexpr Rgb kGreen = {0.22, 0.55, 0.18};
constexpr Rgb kYellow = {0.82, 0.74, 0.16};
constexpr Rgb kSpot = {0.42, 0.24, 0.08};
constexpr Rgb kBlight = {0.28, 0.18, 0.07};

Rgb jitter(Rng& rng, Rgb base, double amount) {
    for (auto& c : base) c = std::clamp(c + rng.uniform(-amount, amount), 0.0, 1.0);
    return base;
}

struct PolarPixel {
    double radius;   // distance from the shape centre, in pixels
    double contour;  // r(theta) at that angle, in pixels
};

PolarPixel polar(const ShapeSpec& shape, std::size_t size, std::size_t row, std::size_t col) {
    const double s = static_cast<double>(size);
    const double cx = s * (0.5 + shape.offset_x);
    const double cy = s * (0.5 + shape.offset_y);
    const double dx = static_cast<double>(col) + 0.5 - cx;
    const double dy = static_cast<double>(row) + 0.5 - cy;
    return {std::hypot(dx, dy), s * shape.radius_at(std::atan2(dy, dx))};
}

}  // namespace

double ShapeSpec::radius_at(double theta) const {
    double r = 1.0;
    for (const auto& h : harmonics) r += h.amplitude * std::sin(h.frequency * theta + h.phase);
    return base_radius * r;
}

double ShapeSpec::amplitude_budget() const {
    double total = 0.0;
    for (const auto& h : harmonics) total += std::abs(h.amplitude);
    return total;
}

bool ShapeSpec::valid() const {
    if (!(base_radius > 0.0) || amplitude_budget() >= kAmplitudeBudget) return false;
    const double reach = base_radius * (1.0 + amplitude_budget()) +
                         std::max(std::abs(offset_x), std::abs(offset_y));
    return reach <= kFrameLimit;
}

ShapeSpec sample_shape(Rng& rng) {
    for (int attempt = 0; attempt < kMaxShapeRetries; ++attempt) {
        ShapeSpec s;
        s.base_radius = rng.uniform(0.24, 0.34);
        s.offset_x = rng.uniform(-0.05, 0.05);
        s.offset_y = rng.uniform(-0.05, 0.05);
        // Two or three distinct frequencies from {2, 3, 4, 5}.
        std::array<int, 4> freqs = {2, 3, 4, 5};
        for (std::size_t i = freqs.size() - 1; i > 0; --i) {
            std::swap(freqs[i], freqs[rng.below(i + 1)]);
        }
        const std::size_t count = 2 + rng.below(2);
        for (std::size_t i = 0; i < count; ++i) {
            Harmonic h;
            h.frequency = freqs[i];
            // Low frequencies carry most of the elongation.
            const double cap = h.frequency == 2 ? 0.35 : 0.18;
            h.amplitude = rng.uniform(0.03, cap);
            h.phase = rng.uniform(0.0, 2.0 * kPi);
            s.harmonics.push_back(h);
        }
        if (s.valid()) return s;
    }
    // Unreachable with the ranges above; a circle is always valid.
    ShapeSpec circle;
    circle.base_radius = 0.3;
    return circle;
}

const char* to_string(AttributeKind kind) {
    switch (kind) {
        case AttributeKind::plain_fill: return "plain-fill";
        case AttributeKind::hue_shift: return "hue-shift";
        case AttributeKind::spots: return "spots";
        case AttributeKind::edge_darkening: return "edge-darkening";
    }
    return "?";
}

AttributeKind parse_attribute(const std::string& text) {
    for (AttributeKind k : {AttributeKind::plain_fill, AttributeKind::hue_shift, AttributeKind::spots,
                            AttributeKind::edge_darkening}) {
        if (text == to_string(k)) return k;
    }
    throw ConfigError("unknown attribute renderer " + text);
}

DomainSpec default_domain(std::size_t id) {
    static constexpr AttributeKind order[kMaxDomains] = {
        AttributeKind::plain_fill, AttributeKind::hue_shift, AttributeKind::spots,
        AttributeKind::edge_darkening};
    if (id >= kMaxDomains) {
        throw ConfigError("at most " + std::to_string(kMaxDomains) + " domains are available");
    }
    return {id, order[id]};
}

Tensor render_mask(const ShapeSpec& shape, std::size_t size) {
    std::vector<double> m(size * size);
    for (std::size_t y = 0; y < size; ++y) {
        for (std::size_t x = 0; x < size; ++x) {
            const PolarPixel p = polar(shape, size, y, x);
            m[y * size + x] = p.radius < p.contour ? 1.0 : 0.0;
        }
    }
    return Tensor({1, size, size}, std::move(m));
}

ShapeSpec shape_for_seed(std::uint64_t seed) {
    Rng rng(derive_seed(seed, 0x5a4e));
    return sample_shape(rng);
}

ImageSample generate_sample(std::uint64_t seed, const DomainSpec& domain, std::size_t size,
                            const std::optional<ShapeSpec>& paired_shape) {
    if (size < 16) throw ConfigError("image size must be at least 16, got " + std::to_string(size));
    const ShapeSpec shape = paired_shape ? *paired_shape : shape_for_seed(seed);
    if (!shape.valid()) throw ConfigError("paired shape violates the amplitude budget or frame");
    const Tensor mask = render_mask(shape, size);
    auto inside = [&](std::size_t y, std::size_t x) { return mask[y * size + x] != 0.0; };

    Rng rng(derive_seed(seed, 0xa77, domain.id));
    const double s = static_cast<double>(size);
    std::vector<Rgb> pixels(size * size, Rgb{kBackground[0], kBackground[1], kBackground[2]});

    const Rgb base = domain.attribute == AttributeKind::hue_shift ? jitter(rng, kYellow, 0.05)
                                                                  : jitter(rng, kGreen, 0.05);
    // Leaves are slightly brighter toward the centre.
    for (std::size_t y = 0; y < size; ++y) {
        for (std::size_t x = 0; x < size; ++x) {
            if (!inside(y, x)) continue;
            const PolarPixel p = polar(shape, size, y, x);
            const double shade = 0.85 + 0.25 * (1.0 - p.radius / p.contour);
            for (int c = 0; c < 3; ++c) pixels[y * size + x][c] = std::clamp(base[c] * shade, 0.0, 1.0);
        }
    }

    if (domain.attribute == AttributeKind::spots) {
        const std::size_t count = 4 + rng.below(4);
        const Rgb spot = jitter(rng, kSpot, 0.04);
        std::vector<std::pair<std::size_t, std::size_t>> cells;
        for (std::size_t y = 0; y < size; ++y)
            for (std::size_t x = 0; x < size; ++x)
                if (inside(y, x)) cells.emplace_back(y, x);
        for (std::size_t k = 0; k < count && !cells.empty(); ++k) {
            const auto [cy, cx] = cells[rng.below(cells.size())];
            const double radius = s / 32.0 * rng.uniform(1.5, 3.0);
            for (std::size_t y = 0; y < size; ++y) {
                for (std::size_t x = 0; x < size; ++x) {
                    const double dy = static_cast<double>(y) - static_cast<double>(cy);
                    const double dx = static_cast<double>(x) - static_cast<double>(cx);
                    if (inside(y, x) && dx * dx + dy * dy <= radius * radius) pixels[y * size + x] = spot;
                }
            }
        }
    } else if (domain.attribute == AttributeKind::edge_darkening) {
        const double band = rng.uniform(0.22, 0.32);
        const Rgb dark = jitter(rng, kBlight, 0.04);
        for (std::size_t y = 0; y < size; ++y) {
            for (std::size_t x = 0; x < size; ++x) {
                if (!inside(y, x)) continue;
                const PolarPixel p = polar(shape, size, y, x);
                if (p.radius > (1.0 - band) * p.contour) pixels[y * size + x] = dark;
            }
        }
    }

    std::vector<double> img(3 * size * size);
    for (std::size_t i = 0; i < size * size; ++i) {
        for (std::size_t c = 0; c < 3; ++c) img[c * size * size + i] = pixels[i][c];
    }
    return {netpbm::quantize(Tensor({3, size, size}, std::move(img))), mask, domain.id, seed};
}

}  // namespace shapegan
