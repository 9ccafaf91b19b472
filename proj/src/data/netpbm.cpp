#include "shapegan/netpbm.hpp"

#include <cctype>
#include <cmath>
#include <fstream>
#include <iterator>

#include "shapegan/error.hpp"

namespace shapegan::netpbm {

namespace {

unsigned char to_byte(double v) {
    if (!(v >= 0.0 && v <= 1.0)) {
        throw ConfigError("image value " + std::to_string(v) + " outside [0, 1]");
    }
    return static_cast<unsigned char>(std::lround(v * 255.0));
}

class HeaderReader {
public:
    HeaderReader(std::string_view bytes, std::size_t start) : bytes_(bytes), pos_(start) {}

    void skip_space_and_comments() {
        while (pos_ < bytes_.size()) {
            const char c = bytes_[pos_];
            if (c == '#') {
                while (pos_ < bytes_.size() && bytes_[pos_] != '\n') ++pos_;
            } else if (std::isspace(static_cast<unsigned char>(c))) {
                ++pos_;
            } else {
                return;
            }
        }
    }

    std::size_t number(const char* what) {
        skip_space_and_comments();
        const std::size_t start = pos_;
        std::size_t value = 0;
        while (pos_ < bytes_.size() && std::isdigit(static_cast<unsigned char>(bytes_[pos_]))) {
            value = value * 10 + static_cast<std::size_t>(bytes_[pos_] - '0');
            if (value > (1u << 24)) throw ParseError(std::string(what) + " too large", start);
            ++pos_;
        }
        if (pos_ == start) throw ParseError(std::string("expected ") + what, start);
        return value;
    }

    std::size_t pos() const { return pos_; }

private:
    std::string_view bytes_;
    std::size_t pos_;
};

}  // namespace

std::string encode(const Tensor& image) {
    if (image.rank() != 3 || (image.dim(0) != 1 && image.dim(0) != 3)) {
        throw ConfigError("netpbm: expected 1 x H x W or 3 x H x W, got " + shape_string(image.shape()));
    }
    const std::size_t c = image.dim(0), h = image.dim(1), w = image.dim(2);
    std::string out = (c == 3 ? "P6\n" : "P5\n") + std::to_string(w) + " " + std::to_string(h) + "\n255\n";
    const std::size_t header = out.size();
    out.resize(header + c * h * w);
    auto v = image.data();
    for (std::size_t y = 0; y < h; ++y) {
        for (std::size_t x = 0; x < w; ++x) {
            for (std::size_t ch = 0; ch < c; ++ch) {
                out[header + (y * w + x) * c + ch] =
                    static_cast<char>(to_byte(v[(ch * h + y) * w + x]));
            }
        }
    }
    return out;
}

Tensor decode(std::string_view bytes) {
    if (bytes.size() < 2 || bytes[0] != 'P' || (bytes[1] != '5' && bytes[1] != '6')) {
        throw ParseError("not a binary PGM/PPM file (bad magic)", 0);
    }
    const std::size_t c = bytes[1] == '6' ? 3 : 1;
    HeaderReader reader(bytes, 2);
    const std::size_t w = reader.number("width");
    const std::size_t h = reader.number("height");
    reader.skip_space_and_comments();
    const std::size_t maxval_at = reader.pos();
    const std::size_t maxval = reader.number("maxval");
    if (w == 0 || h == 0) throw ParseError("zero image dimension", 2);
    if (maxval != 255) throw ParseError("unsupported maxval " + std::to_string(maxval), maxval_at);
    const std::size_t sep = reader.pos();
    if (sep >= bytes.size() || !std::isspace(static_cast<unsigned char>(bytes[sep]))) {
        throw ParseError("missing whitespace after header", sep);
    }
    const std::size_t data_at = sep + 1;
    const std::size_t need = c * h * w;
    if (bytes.size() - data_at < need) {
        throw ParseError("truncated payload: expected " + std::to_string(need) + " bytes, found " +
                             std::to_string(bytes.size() - data_at),
                         bytes.size());
    }
    std::vector<double> v(need);
    for (std::size_t y = 0; y < h; ++y) {
        for (std::size_t x = 0; x < w; ++x) {
            for (std::size_t ch = 0; ch < c; ++ch) {
                const auto b = static_cast<unsigned char>(bytes[data_at + (y * w + x) * c + ch]);
                v[(ch * h + y) * w + x] = static_cast<double>(b) / 255.0;
            }
        }
    }
    return Tensor({c, h, w}, std::move(v));
}

void write_image(const std::filesystem::path& path, const Tensor& image) {
    const std::string bytes = encode(image);
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open " + path.string() + " for writing");
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("failed writing " + path.string());
}

Tensor read_image(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path.string());
    const std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    try {
        return decode(bytes);
    } catch (const ParseError& e) {
        throw ParseError(path.string() + ": " + e.detail(), e.offset());
    }
}

Tensor quantize(const Tensor& image) {
    std::vector<double> v(image.numel());
    auto src = image.data();
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = static_cast<double>(to_byte(src[i])) / 255.0;
    return Tensor(image.shape(), std::move(v));
}

}  // namespace shapegan::netpbm
