#include "rxf/weights.hpp"

#include <bit>
#include <fstream>

namespace rxf {

namespace {

void put_u16(std::string& buf, uint16_t v) {
    buf.push_back(static_cast<char>(v & 0xff));
    buf.push_back(static_cast<char>((v >> 8) & 0xff));
}

void put_u32(std::string& buf, uint32_t v) {
    for (int i = 0; i < 4; ++i) buf.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

struct Reader {
    std::string bytes;
    size_t pos = 0;

    void need(size_t n, const std::string& field) {
        if (pos + n > bytes.size())
            throw CorruptError("weight file truncated while reading " + field + " (offset " + std::to_string(pos) +
                               ")");
    }
    uint8_t u8(const std::string& field) {
        need(1, field);
        return static_cast<uint8_t>(bytes[pos++]);
    }
    uint16_t u16(const std::string& field) {
        need(2, field);
        uint16_t v = static_cast<uint8_t>(bytes[pos]) | (static_cast<uint16_t>(static_cast<uint8_t>(bytes[pos + 1])) << 8);
        pos += 2;
        return v;
    }
    uint32_t u32(const std::string& field) {
        need(4, field);
        uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(static_cast<uint8_t>(bytes[pos + i])) << (8 * i);
        pos += 4;
        return v;
    }
    std::string str(size_t n, const std::string& field) {
        need(n, field);
        std::string s = bytes.substr(pos, n);
        pos += n;
        return s;
    }
};

} // namespace

void write_weight_file(const std::string& path, const std::vector<RawTensor>& tensors) {
    std::string buf;
    buf += "RXFW";
    put_u32(buf, kWeightFormatVersion);
    put_u32(buf, static_cast<uint32_t>(tensors.size()));
    for (const auto& t : tensors) {
        if (t.name.size() > 0xffff) throw UsageError("weight name too long: " + t.name);
        put_u16(buf, static_cast<uint16_t>(t.name.size()));
        buf += t.name;
        buf.push_back(static_cast<char>(t.shape.size()));
        for (int d : t.shape) put_u32(buf, static_cast<uint32_t>(d));
        for (float f : t.data) put_u32(buf, std::bit_cast<uint32_t>(f));
    }
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open for writing: " + path);
    out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
    if (!out) throw IoError("write failed: " + path);
}

std::vector<RawTensor> read_weight_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open: " + path);
    Reader r;
    r.bytes.assign(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());

    if (r.str(4, "magic") != "RXFW") throw CorruptError("weight file has bad magic (expected RXFW): " + path);
    const uint32_t version = r.u32("version");
    if (version != kWeightFormatVersion)
        throw CorruptError("weight file has unsupported version " + std::to_string(version));
    const uint32_t count = r.u32("tensor count");

    std::vector<RawTensor> tensors;
    tensors.reserve(count);
    for (uint32_t i = 0; i < count; ++i) {
        RawTensor t;
        const uint16_t nlen = r.u16("name length");
        t.name = r.str(nlen, "name");
        const uint8_t rank = r.u8("rank of " + t.name);
        long long numel = 1;
        for (uint8_t d = 0; d < rank; ++d) {
            const uint32_t dim = r.u32("dims of " + t.name);
            if (dim == 0 || dim > (1u << 28)) throw CorruptError("weight file has invalid dim for " + t.name);
            t.shape.push_back(static_cast<int>(dim));
            numel *= dim;
        }
        t.data.resize(static_cast<size_t>(numel));
        for (long long j = 0; j < numel; ++j)
            t.data[static_cast<size_t>(j)] = std::bit_cast<float>(r.u32("tensor data for " + t.name));
        tensors.push_back(std::move(t));
    }
    return tensors;
}

} // namespace rxf
