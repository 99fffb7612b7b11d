#include "falcon/archive.hpp"

#include <bit>
#include <fstream>
#include <iterator>
#include <limits>

namespace falcon {

namespace {

class Writer {
public:
    void u8(std::uint8_t v) { out_.push_back(v); }
    void u16(std::uint16_t v) {
        for (int i = 0; i < 2; ++i) out_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
    }
    void u32(std::uint32_t v) {
        for (int i = 0; i < 4; ++i) out_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
    }
    void bytes(std::string_view s) { out_.insert(out_.end(), s.begin(), s.end()); }
    std::vector<std::uint8_t> take() { return std::move(out_); }

private:
    std::vector<std::uint8_t> out_;
};

class Reader {
public:
    explicit Reader(std::span<const std::uint8_t> in) : in_(in) {}

    std::uint8_t u8() { return need(1)[0]; }
    std::uint16_t u16() {
        auto b = need(2);
        return static_cast<std::uint16_t>(b[0] | (b[1] << 8));
    }
    std::uint32_t u32() {
        auto b = need(4);
        std::uint32_t v = 0;
        for (int i = 3; i >= 0; --i) v = (v << 8) | b[i];
        return v;
    }
    std::string str(std::size_t n) {
        auto b = need(n);
        return std::string(b.begin(), b.end());
    }
    bool done() const { return pos_ == in_.size(); }

private:
    std::span<const std::uint8_t> need(std::size_t n) {
        if (in_.size() - pos_ < n) throw ParseError("FALT archive truncated at byte " + std::to_string(pos_));
        auto s = in_.subspan(pos_, n);
        pos_ += n;
        return s;
    }

    std::span<const std::uint8_t> in_;
    std::size_t pos_ = 0;
};

} // namespace

void TensorArchive::add(std::string name, TensorF tensor) {
    if (name.empty() || name.size() > std::numeric_limits<std::uint16_t>::max()) {
        throw ShapeError("archive entry name length out of range");
    }
    if (contains(name)) throw ConfigError("duplicate archive entry '" + name + "'");
    if (tensor.rank() > 255) throw ShapeError("archive entry rank exceeds 255");
    entries_.emplace_back(std::move(name), std::move(tensor));
}

bool TensorArchive::contains(const std::string& name) const {
    for (const auto& [n, t] : entries_)
        if (n == name) return true;
    return false;
}

const TensorF& TensorArchive::get(const std::string& name) const {
    for (const auto& [n, t] : entries_)
        if (n == name) return t;
    throw ConfigError("archive has no entry '" + name + "'");
}

std::vector<std::uint8_t> TensorArchive::serialize() const {
    Writer w;
    w.bytes("FALT");
    w.u16(kVersion);
    w.u32(static_cast<std::uint32_t>(entries_.size()));
    for (const auto& [name, t] : entries_) {
        w.u16(static_cast<std::uint16_t>(name.size()));
        w.bytes(name);
        w.u8(static_cast<std::uint8_t>(t.rank()));
        for (auto d : t.dims()) w.u32(static_cast<std::uint32_t>(d));
        w.u8(kDtypeF32);
        for (float v : t.data()) w.u32(std::bit_cast<std::uint32_t>(v));
    }
    return w.take();
}

TensorArchive TensorArchive::parse(std::span<const std::uint8_t> bytes) {
    Reader r(bytes);
    if (r.str(4) != "FALT") throw ParseError("not a FALT archive (bad magic)");
    const auto version = r.u16();
    if (version != kVersion) throw ParseError("unsupported FALT version " + std::to_string(version));
    const auto count = r.u32();
    TensorArchive archive;
    for (std::uint32_t e = 0; e < count; ++e) {
        const auto name_len = r.u16();
        std::string name = r.str(name_len);
        const auto ndim = r.u8();
        if (ndim == 0) throw ParseError("entry '" + name + "' has zero dims");
        Dims dims(ndim);
        std::size_t n = 1;
        for (auto& d : dims) {
            d = r.u32();
            if (d == 0) throw ParseError("entry '" + name + "' has a zero dimension");
            n *= d;
            if (n > bytes.size()) throw ParseError("entry '" + name + "' larger than archive");
        }
        const auto dtype = r.u8();
        if (dtype != kDtypeF32) throw ParseError("entry '" + name + "' has unsupported dtype " + std::to_string(dtype));
        std::vector<float> data(n);
        for (auto& v : data) v = std::bit_cast<float>(r.u32());
        if (archive.contains(name)) throw ParseError("duplicate entry '" + name + "'");
        archive.entries_.emplace_back(std::move(name), TensorF(std::move(dims), std::move(data)));
    }
    if (!r.done()) throw ParseError("trailing bytes after FALT archive");
    return archive;
}

void TensorArchive::save(const std::filesystem::path& path) const {
    const auto bytes = serialize();
    write_file_bytes(path, bytes);
}

TensorArchive TensorArchive::load(const std::filesystem::path& path) {
    const auto bytes = read_file_bytes(path);
    return parse(bytes);
}

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open '" + path.string() + "'");
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    if (in.bad()) throw IoError("error reading '" + path.string() + "'");
    return bytes;
}

void write_file_bytes(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("error writing '" + path.string() + "'");
}

} // namespace falcon
