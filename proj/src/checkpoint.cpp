#include "frs/checkpoint.hpp"

#include <zlib.h>

#include <bit>
#include <cstring>
#include <fstream>
#include <limits>

namespace frs {

namespace {

constexpr char kMagic[4] = {'F', 'R', 'S', 'R'};
constexpr uint32_t kVersion = 1;
constexpr uint8_t kDtypeF32 = 0;

void put_u16(std::vector<uint8_t>& buf, uint16_t v) {
    buf.push_back(static_cast<uint8_t>(v & 0xff));
    buf.push_back(static_cast<uint8_t>(v >> 8));
}

void put_u32(std::vector<uint8_t>& buf, uint32_t v) {
    for (int i = 0; i < 4; ++i) buf.push_back(static_cast<uint8_t>((v >> (8 * i)) & 0xff));
}

void put_f32(std::vector<uint8_t>& buf, float v) { put_u32(buf, std::bit_cast<uint32_t>(v)); }

// Sequential reader over the already-CRC-validated byte body.
struct Cursor {
    const uint8_t* p;
    size_t left;
    const std::string& path;

    void need(size_t n) const {
        if (left < n)
            throw CorruptionError("container '" + path + "' is truncated mid-record");
    }
    uint8_t u8() {
        need(1);
        --left;
        return *p++;
    }
    uint16_t u16() {
        need(2);
        uint16_t v = static_cast<uint16_t>(p[0] | (p[1] << 8));
        p += 2;
        left -= 2;
        return v;
    }
    uint32_t u32() {
        need(4);
        uint32_t v = static_cast<uint32_t>(p[0]) | (static_cast<uint32_t>(p[1]) << 8) |
                     (static_cast<uint32_t>(p[2]) << 16) | (static_cast<uint32_t>(p[3]) << 24);
        p += 4;
        left -= 4;
        return v;
    }
    float f32() { return std::bit_cast<float>(u32()); }
};

uint32_t crc_of(const uint8_t* data, size_t n) {
    uLong crc = crc32(0L, Z_NULL, 0);
    // crc32 takes a uInt length; feed in chunks to stay safe on huge buffers.
    while (n > 0) {
        const size_t chunk = std::min<size_t>(n, 1u << 30);
        crc = crc32(crc, data, static_cast<uInt>(chunk));
        data += chunk;
        n -= chunk;
    }
    return static_cast<uint32_t>(crc);
}

}  // namespace

void write_container(const std::string& path, const std::vector<TensorBlob>& tensors) {
    std::vector<uint8_t> buf;
    size_t payload = 0;
    for (const auto& t : tensors) payload += 4 * t.data.size() + t.name.size() + 32;
    buf.reserve(payload + 16);

    buf.insert(buf.end(), kMagic, kMagic + 4);
    put_u32(buf, kVersion);
    if (tensors.size() > std::numeric_limits<uint32_t>::max())
        throw ContractError("too many tensors for the container format");
    put_u32(buf, static_cast<uint32_t>(tensors.size()));
    for (const auto& t : tensors) {
        if (t.name.empty() || t.name.size() > std::numeric_limits<uint16_t>::max())
            throw ContractError("container tensor name length out of range: '" + t.name + "'");
        if (t.shape.size() > 255)
            throw ContractError("container tensor rank out of range");
        if (static_cast<size_t>(shape_numel(t.shape)) != t.data.size())
            throw ContractError("container tensor '" + t.name + "' data does not match shape");
        put_u16(buf, static_cast<uint16_t>(t.name.size()));
        buf.insert(buf.end(), t.name.begin(), t.name.end());
        buf.push_back(kDtypeF32);
        buf.push_back(static_cast<uint8_t>(t.shape.size()));
        for (int d : t.shape) put_u32(buf, static_cast<uint32_t>(d));
        for (float v : t.data) put_f32(buf, v);
    }
    put_u32(buf, crc_of(buf.data(), buf.size()));

    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open '" + path + "' for writing");
    out.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
    if (!out) throw IoError("write failed for '" + path + "'");
}

std::vector<TensorBlob> read_container(const std::string& path) {
    std::ifstream in(path, std::ios::binary | std::ios::ate);
    if (!in) throw IoError("cannot open '" + path + "'");
    const std::streamsize size = in.tellg();
    if (size < 16) throw CorruptionError("container '" + path + "' is too small to be valid");
    std::vector<uint8_t> buf(static_cast<size_t>(size));
    in.seekg(0);
    in.read(reinterpret_cast<char*>(buf.data()), size);
    if (!in) throw IoError("read failed for '" + path + "'");

    const size_t body = buf.size() - 4;
    uint32_t stored = 0;
    for (int i = 0; i < 4; ++i) stored |= static_cast<uint32_t>(buf[body + i]) << (8 * i);
    if (crc_of(buf.data(), body) != stored)
        throw CorruptionError("container '" + path + "' failed its checksum");

    Cursor c{buf.data(), body, path};
    c.need(4);
    if (std::memcmp(c.p, kMagic, 4) != 0)
        throw CorruptionError("'" + path + "' is not a tensor container (bad magic)");
    c.p += 4;
    c.left -= 4;
    const uint32_t version = c.u32();
    if (version != kVersion)
        throw UnsupportedVersionError("container '" + path + "' has version " +
                                      std::to_string(version) + ", expected " +
                                      std::to_string(kVersion));
    const uint32_t count = c.u32();
    std::vector<TensorBlob> out;
    out.reserve(count);
    for (uint32_t i = 0; i < count; ++i) {
        TensorBlob t;
        const uint16_t name_len = c.u16();
        c.need(name_len);
        t.name.assign(reinterpret_cast<const char*>(c.p), name_len);
        c.p += name_len;
        c.left -= name_len;
        const uint8_t dtype = c.u8();
        if (dtype != kDtypeF32)
            throw CompatibilityError("container tensor '" + t.name + "' has unknown dtype " +
                                     std::to_string(dtype));
        const uint8_t ndim = c.u8();
        int64_t numel = 1;
        for (uint8_t d = 0; d < ndim; ++d) {
            const uint32_t extent = c.u32();
            if (extent == 0 || extent > static_cast<uint32_t>(std::numeric_limits<int>::max()))
                throw CorruptionError("container tensor '" + t.name + "' has invalid extent");
            t.shape.push_back(static_cast<int>(extent));
            numel *= extent;
        }
        c.need(4 * static_cast<size_t>(numel));
        t.data.resize(static_cast<size_t>(numel));
        for (int64_t v = 0; v < numel; ++v) t.data[static_cast<size_t>(v)] = c.f32();
        out.push_back(std::move(t));
    }
    if (c.left != 0)
        throw CorruptionError("container '" + path + "' has trailing bytes after the last tensor");
    return out;
}

}  // namespace frs
