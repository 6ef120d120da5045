#include "rxf/data.hpp"

#include <fstream>

namespace rxf {

namespace {

// Whitespace and '#' comments between header tokens, per the PNM spec.
size_t skip_separators(const std::string& bytes, size_t pos) {
    while (pos < bytes.size()) {
        const char ch = bytes[pos];
        if (ch == '#') {
            while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
        } else if (ch == ' ' || ch == '\t' || ch == '\r' || ch == '\n') {
            ++pos;
        } else {
            break;
        }
    }
    return pos;
}

int parse_int(const std::string& bytes, size_t& pos, const char* what, const std::string& path) {
    pos = skip_separators(bytes, pos);
    size_t start = pos;
    long v = 0;
    while (pos < bytes.size() && bytes[pos] >= '0' && bytes[pos] <= '9') {
        v = v * 10 + (bytes[pos] - '0');
        if (v > 1 << 30) break;
        ++pos;
    }
    if (pos == start)
        throw IoError(path + ": malformed header, expected " + std::string(what) + " at byte offset " +
                      std::to_string(start));
    return static_cast<int>(v);
}

} // namespace

RawImage read_pnm(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open: " + path);
    std::string bytes(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>{});

    if (bytes.size() < 2 || bytes[0] != 'P' || (bytes[1] != '5' && bytes[1] != '6'))
        throw IoError(path + ": not a binary PPM/PGM (expected P6 or P5 magic at byte offset 0)");
    RawImage img;
    img.channels = bytes[1] == '6' ? 3 : 1;

    size_t pos = 2;
    img.width = parse_int(bytes, pos, "width", path);
    img.height = parse_int(bytes, pos, "height", path);
    const int maxval = parse_int(bytes, pos, "maxval", path);
    if (maxval != 255)
        throw IoError(path + ": unsupported maxval " + std::to_string(maxval) + " (only 8-bit maxval 255)");
    if (pos >= bytes.size() || !(bytes[pos] == ' ' || bytes[pos] == '\t' || bytes[pos] == '\r' || bytes[pos] == '\n'))
        throw IoError(path + ": missing whitespace after maxval at byte offset " + std::to_string(pos));
    ++pos; // exactly one separator byte before the payload

    if (img.width <= 0 || img.height <= 0) throw IoError(path + ": empty image");
    const size_t need = static_cast<size_t>(img.width) * img.height * img.channels;
    if (bytes.size() - pos < need)
        throw IoError(path + ": truncated payload, expected " + std::to_string(need) + " bytes at offset " +
                      std::to_string(pos) + ", found " + std::to_string(bytes.size() - pos));
    img.bytes.assign(bytes.begin() + static_cast<long>(pos), bytes.begin() + static_cast<long>(pos + need));
    return img;
}

void write_pnm(const std::string& path, const RawImage& img) {
    if (img.channels != 1 && img.channels != 3) throw UsageError("write_pnm: channels must be 1 or 3");
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open for writing: " + path);
    out << (img.channels == 3 ? "P6" : "P5") << "\n" << img.width << " " << img.height << "\n255\n";
    out.write(reinterpret_cast<const char*>(img.bytes.data()), static_cast<std::streamsize>(img.bytes.size()));
    if (!out) throw IoError("write failed: " + path);
}

} // namespace rxf
