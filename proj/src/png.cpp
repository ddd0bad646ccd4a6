#include "luve/png.hpp"

#include <algorithm>
#include <cstring>
#include <fstream>

#include <zlib.h>

#include "luve/errors.hpp"

namespace luve {

namespace {

void push_u32be(std::vector<uint8_t>& out, uint32_t v) {
    out.push_back(static_cast<uint8_t>((v >> 24) & 0xFF));
    out.push_back(static_cast<uint8_t>((v >> 16) & 0xFF));
    out.push_back(static_cast<uint8_t>((v >> 8) & 0xFF));
    out.push_back(static_cast<uint8_t>(v & 0xFF));
}

void push_chunk(std::vector<uint8_t>& out, const char type[4], const std::vector<uint8_t>& payload) {
    push_u32be(out, static_cast<uint32_t>(payload.size()));
    const size_t crc_start = out.size();
    out.insert(out.end(), type, type + 4);
    out.insert(out.end(), payload.begin(), payload.end());
    const uLong crc = crc32(0, out.data() + crc_start, static_cast<uInt>(out.size() - crc_start));
    push_u32be(out, static_cast<uint32_t>(crc));
}

}  // namespace

std::vector<uint8_t> encode_png_rgb8(const uint8_t* rgb, int width, int height) {
    require(width > 0 && height > 0, "encode_png: empty image");

    // raw stream: one filter byte (0) per scanline
    std::vector<uint8_t> raw;
    raw.reserve(static_cast<size_t>(height) * (1 + static_cast<size_t>(width) * 3));
    for (int y = 0; y < height; ++y) {
        raw.push_back(0);
        raw.insert(raw.end(), rgb + static_cast<size_t>(y) * width * 3,
                   rgb + static_cast<size_t>(y + 1) * width * 3);
    }
    uLongf comp_len = compressBound(static_cast<uLong>(raw.size()));
    std::vector<uint8_t> compressed(comp_len);
    if (compress2(compressed.data(), &comp_len, raw.data(), static_cast<uLong>(raw.size()), 6) != Z_OK)
        throw Error("png: zlib compression failed");
    compressed.resize(comp_len);

    std::vector<uint8_t> out = {0x89, 'P', 'N', 'G', 0x0D, 0x0A, 0x1A, 0x0A};
    std::vector<uint8_t> ihdr;
    push_u32be(ihdr, static_cast<uint32_t>(width));
    push_u32be(ihdr, static_cast<uint32_t>(height));
    ihdr.push_back(8);  // bit depth
    ihdr.push_back(2);  // color type: truecolor
    ihdr.push_back(0);  // compression
    ihdr.push_back(0);  // filter
    ihdr.push_back(0);  // interlace
    push_chunk(out, "IHDR", ihdr);
    push_chunk(out, "IDAT", compressed);
    push_chunk(out, "IEND", {});
    return out;
}

std::vector<uint8_t> frame_to_png(const Tensor& frame) {
    require(frame.rank() == 3 && frame.extent(2) == 3, "frame_to_png expects [H,W,3]");
    const int h = frame.extent(0), w = frame.extent(1);
    std::vector<uint8_t> rgb(static_cast<size_t>(h) * w * 3);
    for (size_t i = 0; i < rgb.size(); ++i) {
        const double v = std::clamp(frame.data()[static_cast<int64_t>(i)], 0.0, 1.0);
        rgb[i] = static_cast<uint8_t>(std::lround(v * 255.0));
    }
    return encode_png_rgb8(rgb.data(), w, h);
}

void write_png(const std::string& path, const Tensor& frame) {
    std::vector<uint8_t> png = frame_to_png(frame);
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("cannot open for writing: " + path);
    os.write(reinterpret_cast<const char*>(png.data()), static_cast<std::streamsize>(png.size()));
}

std::string base64_encode(const uint8_t* bytes, size_t count) {
    static const char table[] = "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";
    std::string out;
    out.reserve((count + 2) / 3 * 4);
    for (size_t i = 0; i < count; i += 3) {
        uint32_t v = static_cast<uint32_t>(bytes[i]) << 16;
        if (i + 1 < count) v |= static_cast<uint32_t>(bytes[i + 1]) << 8;
        if (i + 2 < count) v |= bytes[i + 2];
        out.push_back(table[(v >> 18) & 63]);
        out.push_back(table[(v >> 12) & 63]);
        out.push_back(i + 1 < count ? table[(v >> 6) & 63] : '=');
        out.push_back(i + 2 < count ? table[v & 63] : '=');
    }
    return out;
}

}  // namespace luve
