#include "sfl/container.hpp"

#include <zlib.h>

#include <bit>
#include <cstring>
#include <fstream>
#include <limits>

namespace sfl {

namespace {

class Writer {
public:
    void u8(std::uint8_t v) { out_.push_back(v); }
    void u16(std::uint16_t v) { le(v, 2); }
    void u32(std::uint32_t v) { le(v, 4); }
    void u64(std::uint64_t v) { le(v, 8); }
    void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
    void bytes(const void* p, std::size_t n) {
        const auto* b = static_cast<const std::uint8_t*>(p);
        out_.insert(out_.end(), b, b + n);
    }
    std::vector<std::uint8_t>& buffer() { return out_; }

private:
    void le(std::uint64_t v, int n) {
        for (int i = 0; i < n; ++i) out_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
    }
    std::vector<std::uint8_t> out_;
};

class Reader {
public:
    explicit Reader(std::span<const std::uint8_t> b) : b_(b) {}

    std::uint8_t u8() { return static_cast<std::uint8_t>(le(1)); }
    std::uint16_t u16() { return static_cast<std::uint16_t>(le(2)); }
    std::uint32_t u32() { return static_cast<std::uint32_t>(le(4)); }
    std::uint64_t u64() { return le(8); }
    double f64() { return std::bit_cast<double>(u64()); }
    std::string str(std::size_t n) {
        need(n);
        std::string s(reinterpret_cast<const char*>(b_.data() + pos_), n);
        pos_ += n;
        return s;
    }
    std::size_t remaining() const { return b_.size() - pos_; }

private:
    void need(std::size_t n) const {
        if (n > remaining()) throw InvariantError("container: unexpected end of data");
    }
    std::uint64_t le(int n) {
        need(static_cast<std::size_t>(n));
        std::uint64_t v = 0;
        for (int i = 0; i < n; ++i) v |= static_cast<std::uint64_t>(b_[pos_ + static_cast<std::size_t>(i)]) << (8 * i);
        pos_ += static_cast<std::size_t>(n);
        return v;
    }
    std::span<const std::uint8_t> b_;
    std::size_t pos_ = 0;
};

}  // namespace

bool Container::has(const std::string& name) const {
    for (const auto& [n, t] : tensors)
        if (n == name) return true;
    return false;
}

const Tensor& Container::get(const std::string& name) const {
    for (const auto& [n, t] : tensors)
        if (n == name) return t;
    throw InvariantError("container: missing tensor '" + name + "'");
}

std::uint32_t crc32(std::span<const std::uint8_t> bytes) {
    uLong c = ::crc32(0L, Z_NULL, 0);
    // zlib takes uInt lengths; feed large buffers in pieces.
    std::size_t off = 0;
    while (off < bytes.size()) {
        const std::size_t n = std::min<std::size_t>(bytes.size() - off, 1u << 30);
        c = ::crc32(c, bytes.data() + off, static_cast<uInt>(n));
        off += n;
    }
    return static_cast<std::uint32_t>(c);
}

std::vector<std::uint8_t> encode_container(const Container& c) {
    Writer w;
    w.bytes(kContainerMagic, 4);
    w.u32(kContainerVersion);
    w.u32(static_cast<std::uint32_t>(c.tensors.size()));
    for (const auto& [name, t] : c.tensors) {
        if (name.size() > std::numeric_limits<std::uint16_t>::max()) throw ContractError("tensor name too long");
        if (t.rank() > std::numeric_limits<std::uint8_t>::max()) throw ContractError("tensor rank too large");
        w.u16(static_cast<std::uint16_t>(name.size()));
        w.bytes(name.data(), name.size());
        w.u8(static_cast<std::uint8_t>(t.rank()));
        for (std::size_t e : t.shape()) w.u64(e);
        for (double v : t.data()) w.f64(v);
    }
    w.u32(static_cast<std::uint32_t>(c.metadata.size()));
    w.bytes(c.metadata.data(), c.metadata.size());
    const std::uint32_t crc = crc32(w.buffer());
    w.u32(crc);
    return std::move(w.buffer());
}

Container decode_container(std::span<const std::uint8_t> bytes) {
    if (bytes.size() < 4 || std::memcmp(bytes.data(), kContainerMagic, 4) != 0)
        throw BadMagicError("container: bad magic (not an SFL1 file)");
    if (bytes.size() < 8) throw ChecksumError("container: truncated header");
    const std::uint32_t version = Reader(bytes.subspan(4, 4)).u32();
    if (version != kContainerVersion)
        throw VersionError("container: unsupported format version " + std::to_string(version) + " (expected " +
                           std::to_string(kContainerVersion) + ")");
    if (bytes.size() < 16) throw ChecksumError("container: truncated file");
    const auto body = bytes.first(bytes.size() - 4);
    const std::uint32_t stored = Reader(bytes.last(4)).u32();
    if (crc32(body) != stored) throw ChecksumError("container: checksum mismatch (file corrupt or truncated)");

    Reader r(body.subspan(8));
    Container c;
    const std::uint32_t count = r.u32();
    for (std::uint32_t i = 0; i < count; ++i) {
        const std::uint16_t len = r.u16();
        std::string name = r.str(len);
        const std::uint8_t rank = r.u8();
        Shape shape(rank);
        std::size_t n = 1;
        for (auto& e : shape) {
            e = static_cast<std::size_t>(r.u64());
            if (e != 0 && n > r.remaining() / e) throw InvariantError("container: tensor extents exceed file size");
            n *= e;
        }
        if (n > r.remaining() / 8) throw InvariantError("container: tensor payload exceeds file size");
        std::vector<double> data(n);
        for (auto& v : data) v = r.f64();
        c.tensors.emplace_back(std::move(name), Tensor(std::move(shape), std::move(data)));
    }
    const std::uint32_t mlen = r.u32();
    c.metadata = r.str(mlen);
    if (r.remaining() != 0) throw InvariantError("container: trailing bytes after metadata");
    return c;
}

void write_file_atomic(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
    std::filesystem::path tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw Error("cannot open '" + tmp.string() + "' for writing");
        out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
        out.flush();
        if (!out) {
            std::error_code ec;
            std::filesystem::remove(tmp, ec);
            throw Error("failed writing '" + tmp.string() + "'");
        }
    }
    std::error_code ec;
    std::filesystem::rename(tmp, path, ec);
    if (ec) {
        std::filesystem::remove(tmp, ec);
        throw Error("cannot move '" + tmp.string() + "' into place: " + ec.message());
    }
}

void write_text_atomic(const std::filesystem::path& path, const std::string& text) {
    write_file_atomic(path, std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("cannot open '" + path.string() + "'");
    return std::vector<std::uint8_t>(std::istreambuf_iterator<char>(in), {});
}

}  // namespace sfl
