#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <map>

#include "shapegan/error.hpp"
#include "shapegan/trainer.hpp"

namespace shapegan {

namespace {

constexpr char kMagic[4] = {'S', 'G', 'C', 'K'};

class Writer {
public:
    void u32(std::uint32_t v) {
        for (int i = 0; i < 4; ++i) out_.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
    }
    void u64(std::uint64_t v) {
        for (int i = 0; i < 8; ++i) out_.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
    }
    void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
    void bytes(std::string_view s) { out_.append(s); }
    void block(std::string_view s) {
        u32(static_cast<std::uint32_t>(s.size()));
        bytes(s);
    }
    void tensor(const std::string& name, const Tensor& t) {
        block(name);
        u32(static_cast<std::uint32_t>(t.rank()));
        for (std::size_t d : t.shape()) u64(d);
        for (double v : t.data()) f64(v);
    }
    std::string take() { return std::move(out_); }

private:
    std::string out_;
};

class Reader {
public:
    explicit Reader(std::string_view bytes) : bytes_(bytes) {}

    std::uint32_t u32() {
        need(4, "32-bit field");
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(byte(pos_ + i)) << (8 * i);
        pos_ += 4;
        return v;
    }
    std::uint64_t u64() {
        need(8, "64-bit field");
        std::uint64_t v = 0;
        for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(byte(pos_ + i)) << (8 * i);
        pos_ += 8;
        return v;
    }
    std::string block(const char* what) {
        const std::uint32_t n = u32();
        need(n, what);
        std::string s(bytes_.substr(pos_, n));
        pos_ += n;
        return s;
    }
    std::pair<std::string, Tensor> tensor() {
        const std::size_t at = pos_;
        std::string name = block("tensor name");
        const std::uint32_t rank = u32();
        if (rank > 8) throw ParseError("tensor " + name + " has implausible rank " + std::to_string(rank), at);
        Shape shape(rank);
        std::size_t total = 1;
        for (auto& d : shape) {
            d = u64();
            if (d == 0 || d > (std::size_t{1} << 32)) throw ParseError("tensor " + name + " has a bad dimension", pos_ - 8);
            total *= d;
            if (total > (std::size_t{1} << 32)) throw ParseError("tensor " + name + " is too large", pos_ - 8);
        }
        need(total * 8, "tensor data");
        std::vector<double> v(total);
        for (auto& x : v) x = std::bit_cast<double>(u64());
        return {std::move(name), Tensor(std::move(shape), std::move(v))};
    }
    void magic() {
        need(4, "magic");
        if (std::memcmp(bytes_.data(), kMagic, 4) != 0) throw ParseError("bad magic, not a checkpoint", 0);
        pos_ = 4;
    }
    std::size_t pos() const { return pos_; }
    bool done() const { return pos_ == bytes_.size(); }

private:
    unsigned char byte(std::size_t i) const { return static_cast<unsigned char>(bytes_[i]); }
    void need(std::size_t n, const char* what) {
        if (bytes_.size() - pos_ < n) {
            throw ParseError(std::string("truncated checkpoint while reading ") + what, bytes_.size());
        }
    }

    std::string_view bytes_;
    std::size_t pos_ = 0;
};

std::string architectures(const Nets& nets) {
    std::string out;
    for (const auto& [name, model] : nets.all()) out += model->arch.describe();
    return out;
}

}  // namespace

std::string serialize_checkpoint(const Checkpoint& c) {
    std::vector<std::pair<std::string, Tensor>> tensors;
    for (const auto& [net, model] : c.nets.all()) {
        const ParamSet& p = model->params;
        const AdamState& s = p.optimizer();
        for (std::size_t i = 0; i < p.size(); ++i) {
            const std::string base = std::string(net) + "/" + p.names()[i];
            tensors.emplace_back(base, p[i]);
            tensors.emplace_back(base + "@adam.m", s.first_moment[i]);
            tensors.emplace_back(base + "@adam.v", s.second_moment[i]);
        }
        tensors.emplace_back(std::string(net) + "@adam.step", Tensor::scalar(static_cast<double>(s.step)));
    }
    tensors.emplace_back("trainer/unet_pretrained", Tensor::scalar(c.unet_pretrained ? 1.0 : 0.0));
    if (!c.recon_history.empty()) {
        tensors.emplace_back("trainer/recon_history", Tensor({c.recon_history.size()}, c.recon_history));
    }

    Writer w;
    w.bytes(std::string_view(kMagic, 4));
    w.u32(kCheckpointVersion);
    w.u64(c.iteration);
    w.u32(static_cast<std::uint32_t>(tensors.size()));
    for (const auto& [name, t] : tensors) w.tensor(name, t);
    w.block(serialize_config(c.config));
    w.block(architectures(c.nets));
    w.block(c.rng_state);
    return w.take();
}

Checkpoint parse_checkpoint(std::string_view bytes) {
    Reader r(bytes);
    r.magic();
    const std::size_t version_at = r.pos();
    const std::uint32_t version = r.u32();
    if (version != kCheckpointVersion) {
        throw ParseError("unsupported checkpoint version " + std::to_string(version) + " (expected " +
                             std::to_string(kCheckpointVersion) + ")",
                         version_at);
    }
    Checkpoint c;
    c.iteration = r.u64();
    const std::uint32_t count = r.u32();
    std::map<std::string, std::pair<Tensor, std::size_t>> table;
    for (std::uint32_t i = 0; i < count; ++i) {
        const std::size_t at = r.pos();
        auto [name, t] = r.tensor();
        if (!table.emplace(name, std::make_pair(std::move(t), at)).second) {
            throw ParseError("duplicate tensor " + name, at);
        }
    }
    const std::size_t config_at = r.pos();
    const std::string config_text = r.block("config block");
    const std::size_t arch_at = r.pos();
    const std::string arch_text = r.block("architecture block");
    const std::size_t rng_at = r.pos();
    c.rng_state = r.block("random state block");
    if (!r.done()) throw ParseError("trailing bytes after checkpoint", r.pos());

    try {
        c.config = parse_config(config_text);
        c.config.validate();
    } catch (const ConfigError& e) {
        throw ParseError(std::string("bad config block: ") + e.what(), config_at);
    }
    try {
        Rng probe;
        probe.restore(c.rng_state);
    } catch (const ParseError&) {
        throw ParseError("bad random state block", rng_at);
    }
    c.nets = Nets::create(c.config);
    if (architectures(c.nets) != arch_text) {
        throw ParseError("architecture block does not match the configured networks", arch_at);
    }

    auto take = [&](const std::string& name, const Shape& shape) {
        auto it = table.find(name);
        if (it == table.end()) throw ParseError("missing tensor " + name, bytes.size());
        if (it->second.first.shape() != shape) {
            throw ParseError("tensor " + name + " has shape " + shape_string(it->second.first.shape()) +
                                 ", expected " + shape_string(shape),
                             it->second.second);
        }
        Tensor t = it->second.first;
        table.erase(it);
        return t;
    };
    for (auto& [net, model] : c.nets.all()) {
        ParamSet& p = model->params;
        AdamState& s = p.optimizer();
        for (std::size_t i = 0; i < p.size(); ++i) {
            const std::string base = std::string(net) + "/" + p.names()[i];
            p.set(i, take(base, p[i].shape()));
            s.first_moment[i] = take(base + "@adam.m", p[i].shape());
            s.second_moment[i] = take(base + "@adam.v", p[i].shape());
        }
        const double step = take(std::string(net) + "@adam.step", {1}).item();
        if (!(step >= 0.0) || step != static_cast<double>(static_cast<std::uint64_t>(step))) {
            throw ParseError(std::string("bad optimizer step for ") + net, bytes.size());
        }
        s.step = static_cast<std::uint64_t>(step);
    }
    c.unet_pretrained = take("trainer/unet_pretrained", {1}).item() != 0.0;
    if (auto it = table.find("trainer/recon_history"); it != table.end()) {
        const Tensor h = it->second.first;
        if (h.rank() != 1) throw ParseError("recon history must be one-dimensional", it->second.second);
        c.recon_history.assign(h.data().begin(), h.data().end());
        table.erase(it);
    }
    if (!table.empty()) {
        throw ParseError("unexpected tensor " + table.begin()->first, table.begin()->second.second);
    }
    return c;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint) {
    const std::string bytes = serialize_checkpoint(checkpoint);
    // Write beside the target, then rename, so a crash never leaves a torn file.
    std::filesystem::path tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw IoError("cannot open " + tmp.string() + " for writing");
        out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
        if (!out) throw IoError("failed writing " + tmp.string());
    }
    std::error_code ec;
    std::filesystem::rename(tmp, path, ec);
    if (ec) throw IoError("cannot move checkpoint into " + path.string() + ": " + ec.message());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open checkpoint " + path.string());
    const std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    try {
        return parse_checkpoint(bytes);
    } catch (const ParseError& e) {
        throw ParseError(path.string() + ": " + e.detail(), e.offset());
    }
}

}  // namespace shapegan
