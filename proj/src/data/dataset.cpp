#include <algorithm>
#include <charconv>
#include <cstdio>
#include <cmath>
#include <fstream>
#include <iterator>
#include <sstream>

#include "shapegan/error.hpp"
#include "shapegan/netpbm.hpp"
#include "shapegan/synthetic.hpp"

namespace shapegan {

namespace {

constexpr const char* kManifestHeader = "path,mask_path,domain,seed,split";

std::string image_name(Split split, std::size_t domain, std::size_t index, bool mask) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%s/d%zu_%04zu%s", to_string(split), domain, index,
                  mask ? "_mask.pgm" : ".ppm");
    return buf;
}

Split parse_split(const std::string& text, std::size_t offset) {
    if (text == "train") return Split::train;
    if (text == "eval") return Split::eval;
    throw ParseError("unknown split '" + text + "'", offset);
}

template <typename T>
T parse_number(const std::string& text, std::size_t offset, const char* what) {
    T value{};
    const auto [end, ec] = std::from_chars(text.data(), text.data() + text.size(), value);
    if (ec != std::errc() || end != text.data() + text.size()) {
        throw ParseError(std::string("bad ") + what + " '" + text + "'", offset);
    }
    return value;
}

}  // namespace

const char* to_string(Split split) { return split == Split::train ? "train" : "eval"; }

void DatasetConfig::validate() const {
    if (domains < 2 || domains > kMaxDomains) {
        throw ConfigError("domains must be between 2 and " + std::to_string(kMaxDomains) + ", got " +
                          std::to_string(domains));
    }
    if (n_per_domain == 0) throw ConfigError("n_per_domain must be positive");
    if (size < 16) throw ConfigError("image size must be at least 16, got " + std::to_string(size));
    if (size % 8 != 0) throw ConfigError("image size must be a multiple of 8, got " + std::to_string(size));
    if (!(paired_eval_fraction >= 0.0 && paired_eval_fraction <= 1.0)) {
        throw ConfigError("paired_eval_fraction must be in [0, 1]");
    }
}

std::size_t DatasetConfig::eval_per_domain() const {
    return static_cast<std::size_t>(std::lround(paired_eval_fraction * static_cast<double>(n_per_domain)));
}

std::vector<ManifestRow> plan_dataset(const DatasetConfig& config) {
    config.validate();
    std::vector<ManifestRow> rows;
    for (std::size_t d = 0; d < config.domains; ++d) {
        for (std::size_t i = 0; i < config.n_per_domain; ++i) {
            rows.push_back({image_name(Split::train, d, i, false), image_name(Split::train, d, i, true),
                            d, derive_seed(config.seed, 1, d, i), Split::train});
        }
    }
    // Tag 2 keeps eval seeds in a separate stream from every training seed.
    for (std::size_t d = 0; d < config.domains; ++d) {
        for (std::size_t j = 0; j < config.eval_per_domain(); ++j) {
            rows.push_back({image_name(Split::eval, d, j, false), image_name(Split::eval, d, j, true),
                            d, derive_seed(config.seed, 2, j), Split::eval});
        }
    }
    return rows;
}

std::vector<ManifestRow> build_dataset(const DatasetConfig& config, const std::filesystem::path& dir) {
    const auto rows = plan_dataset(config);
    std::error_code ec;
    for (const char* sub : {"train", "eval"}) {
        std::filesystem::create_directories(dir / sub, ec);
        if (ec) throw IoError("cannot create " + (dir / sub).string() + ": " + ec.message());
    }
    for (const auto& row : rows) {
        const ImageSample s = generate_sample(row.seed, default_domain(row.domain), config.size);
        netpbm::write_image(dir / row.path, s.image);
        netpbm::write_image(dir / row.mask_path, s.mask);
    }
    const std::filesystem::path manifest = dir / "manifest.csv";
    std::ofstream out(manifest, std::ios::binary);
    if (!out) throw IoError("cannot open " + manifest.string() + " for writing");
    out << manifest_to_csv(rows);
    if (!out) throw IoError("failed writing " + manifest.string());
    return rows;
}

std::string manifest_to_csv(const std::vector<ManifestRow>& rows) {
    std::string out = std::string(kManifestHeader) + "\n";
    for (const auto& r : rows) {
        out += r.path + "," + r.mask_path + "," + std::to_string(r.domain) + "," +
               std::to_string(r.seed) + "," + to_string(r.split) + "\n";
    }
    return out;
}

std::vector<ManifestRow> parse_manifest(const std::string& text) {
    std::vector<ManifestRow> rows;
    std::size_t offset = 0;
    bool header = true;
    while (offset < text.size()) {
        std::size_t end = text.find('\n', offset);
        if (end == std::string::npos) end = text.size();
        std::string line = text.substr(offset, end - offset);
        if (!line.empty() && line.back() == '\r') line.pop_back();
        const std::size_t line_at = offset;
        offset = end + 1;
        if (header) {
            if (line != kManifestHeader) throw ParseError("manifest header must be " + std::string(kManifestHeader), line_at);
            header = false;
            continue;
        }
        if (line.empty()) continue;
        std::vector<std::string> cells;
        std::vector<std::size_t> starts;
        std::size_t pos = 0;
        while (true) {
            const std::size_t comma = line.find(',', pos);
            starts.push_back(line_at + pos);
            cells.push_back(line.substr(pos, comma == std::string::npos ? std::string::npos : comma - pos));
            if (comma == std::string::npos) break;
            pos = comma + 1;
        }
        if (cells.size() != 5) {
            throw ParseError("manifest row has " + std::to_string(cells.size()) + " fields, expected 5", line_at);
        }
        ManifestRow r;
        r.path = cells[0];
        r.mask_path = cells[1];
        r.domain = parse_number<std::size_t>(cells[2], starts[2], "domain");
        r.seed = parse_number<std::uint64_t>(cells[3], starts[3], "seed");
        r.split = parse_split(cells[4], starts[4]);
        rows.push_back(std::move(r));
    }
    if (header) throw ParseError("empty manifest", 0);
    return rows;
}

std::vector<const ImageSample*> Dataset::select(Split split, std::size_t domain) const {
    std::vector<const ImageSample*> out;
    for (const auto& s : split == Split::train ? train : eval) {
        if (s.domain == domain) out.push_back(&s);
    }
    return out;
}

Dataset load_dataset(const std::filesystem::path& dir) {
    const std::filesystem::path manifest = dir / "manifest.csv";
    std::ifstream in(manifest, std::ios::binary);
    if (!in) throw IoError("cannot open " + manifest.string());
    const std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    std::vector<ManifestRow> rows;
    try {
        rows = parse_manifest(text);
    } catch (const ParseError& e) {
        throw ParseError(manifest.string() + ": " + e.detail(), e.offset());
    }
    Dataset ds;
    ds.size = 0;
    for (const auto& row : rows) {
        ImageSample s;
        s.image = netpbm::read_image(dir / row.path);
        s.mask = netpbm::read_image(dir / row.mask_path);
        s.domain = row.domain;
        s.seed = row.seed;
        if (s.image.dim(0) != 3 || s.mask.dim(0) != 1 || s.image.dim(1) != s.image.dim(2) ||
            s.mask.dim(1) != s.image.dim(1) || s.mask.dim(2) != s.image.dim(2)) {
            throw ConfigError(row.path + ": expected a square RGB image with a matching mask");
        }
        if (ds.size == 0) ds.size = s.image.dim(1);
        if (s.image.dim(1) != ds.size) throw ConfigError(row.path + ": image sizes differ within dataset");
        ds.domains = std::max(ds.domains, row.domain + 1);
        (row.split == Split::train ? ds.train : ds.eval).push_back(std::move(s));
    }
    return ds;
}

Dataset generate_dataset(const DatasetConfig& config) {
    Dataset ds;
    ds.size = config.size;
    ds.domains = config.domains;
    for (const auto& row : plan_dataset(config)) {
        ImageSample s = generate_sample(row.seed, default_domain(row.domain), config.size);
        (row.split == Split::train ? ds.train : ds.eval).push_back(std::move(s));
    }
    return ds;
}

}  // namespace shapegan
