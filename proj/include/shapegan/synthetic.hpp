#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "shapegan/rng.hpp"
#include "shapegan/tensor.hpp"

namespace shapegan {

struct Harmonic {
    int frequency = 2;
    double amplitude = 0.0;
    double phase = 0.0;
};

// Closed contour r(t) = r0 * (1 + sum a_k sin(k t + phi_k)) around a centre
// offset from the frame centre. Lengths are fractions of the image size.
struct ShapeSpec {
    double base_radius = 0.3;
    std::vector<Harmonic> harmonics;
    double offset_x = 0.0;
    double offset_y = 0.0;

    double radius_at(double theta) const;
    double amplitude_budget() const;  // sum |a_k|
    bool valid() const;
};

inline constexpr double kAmplitudeBudget = 0.9;

// Draws a contour, resampling (bounded) until it is valid and fits the frame.
ShapeSpec sample_shape(Rng& rng);

enum class AttributeKind { plain_fill, hue_shift, spots, edge_darkening };

const char* to_string(AttributeKind kind);
AttributeKind parse_attribute(const std::string& text);

struct DomainSpec {
    std::size_t id = 0;
    AttributeKind attribute = AttributeKind::plain_fill;
};

// Domain i uses the i-th attribute family: plain, hue-shift, spots, edge-darkening.
DomainSpec default_domain(std::size_t id);
inline constexpr std::size_t kMaxDomains = 4;

struct ImageSample {
    Tensor image;  // 3 x S x S, quantized to multiples of 1/255
    Tensor mask;   // 1 x S x S, exactly 0 or 1
    std::size_t domain = 0;
    std::uint64_t seed = 0;
};

inline constexpr double kBackground[3] = {0.08, 0.08, 0.10};

// 1 x S x S binary mask of the filled contour (pixel centres inside r(t)).
Tensor render_mask(const ShapeSpec& shape, std::size_t size);
ShapeSpec shape_for_seed(std::uint64_t seed);

// The shape depends only on seed (or paired_shape when given); the attribute
// pattern on (seed, domain). Pixels outside the mask are the background.
ImageSample generate_sample(std::uint64_t seed, const DomainSpec& domain, std::size_t size,
                            const std::optional<ShapeSpec>& paired_shape = std::nullopt);

enum class Split { train, eval };
const char* to_string(Split split);

struct ManifestRow {
    std::string path;
    std::string mask_path;
    std::size_t domain = 0;
    std::uint64_t seed = 0;
    Split split = Split::train;
};

struct DatasetConfig {
    std::size_t domains = 2;
    std::size_t n_per_domain = 64;  // training images per domain
    std::size_t size = 32;
    std::uint64_t seed = 1;
    double paired_eval_fraction = 0.5;  // eval images per domain = round(fraction * n)

    void validate() const;
    std::size_t eval_per_domain() const;
};

// Training rows use independent seeds per domain; eval row j uses one shared
// seed across all domains, so eval shapes are paired.
std::vector<ManifestRow> plan_dataset(const DatasetConfig& config);

// Writes images, masks and manifest.csv into dir.
std::vector<ManifestRow> build_dataset(const DatasetConfig& config, const std::filesystem::path& dir);

std::string manifest_to_csv(const std::vector<ManifestRow>& rows);
std::vector<ManifestRow> parse_manifest(const std::string& text);

struct Dataset {
    std::size_t size = 32;
    std::size_t domains = 0;
    std::vector<ImageSample> train;
    std::vector<ImageSample> eval;

    std::vector<const ImageSample*> select(Split split, std::size_t domain) const;
};

// Loads the manifest and every referenced image from dir.
Dataset load_dataset(const std::filesystem::path& dir);
// Regenerates the same content in memory, without touching the filesystem.
Dataset generate_dataset(const DatasetConfig& config);

}  // namespace shapegan
