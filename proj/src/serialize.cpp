#include "luve/serialize.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include "luve/errors.hpp"

namespace luve {

namespace {

// All integers are little-endian on disk. The writers below assume a
// little-endian host for the payload fast path, which is asserted here.
void write_u32(std::ostream& os, uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v & 0xFF),
                          static_cast<unsigned char>((v >> 8) & 0xFF),
                          static_cast<unsigned char>((v >> 16) & 0xFF),
                          static_cast<unsigned char>((v >> 24) & 0xFF)};
    os.write(reinterpret_cast<const char*>(b), 4);
}

uint32_t read_u32(std::istream& is) {
    unsigned char b[4];
    is.read(reinterpret_cast<char*>(b), 4);
    if (!is) throw IoError("truncated stream while reading u32");
    return static_cast<uint32_t>(b[0]) | (static_cast<uint32_t>(b[1]) << 8) |
           (static_cast<uint32_t>(b[2]) << 16) | (static_cast<uint32_t>(b[3]) << 24);
}

uint8_t read_u8(std::istream& is) {
    char c;
    is.read(&c, 1);
    if (!is) throw IoError("truncated stream while reading u8");
    return static_cast<uint8_t>(c);
}

static_assert(std::endian::native == std::endian::little,
              "payload serialization assumes a little-endian host");

}  // namespace

void write_luvt(std::ostream& os, const Tensor& t, DType dtype) {
    require(t.defined(), "write_luvt: undefined tensor");
    os.write("LUVT", 4);
    const uint8_t version = 1;
    os.put(static_cast<char>(version));
    os.put(static_cast<char>(dtype));
    os.put(static_cast<char>(t.rank()));
    for (int e : t.shape()) write_u32(os, static_cast<uint32_t>(e));
    if (dtype == DType::f64) {
        os.write(reinterpret_cast<const char*>(t.data()),
                 static_cast<std::streamsize>(t.size() * sizeof(double)));
    } else {
        std::vector<float> f(static_cast<size_t>(t.size()));
        for (int64_t i = 0; i < t.size(); ++i) f[static_cast<size_t>(i)] = static_cast<float>(t.data()[i]);
        os.write(reinterpret_cast<const char*>(f.data()),
                 static_cast<std::streamsize>(f.size() * sizeof(float)));
    }
    if (!os) throw IoError("write_luvt: stream write failed");
}

Tensor read_luvt(std::istream& is) {
    char magic[4];
    is.read(magic, 4);
    if (!is || std::memcmp(magic, "LUVT", 4) != 0) throw IoError("read_luvt: bad magic");
    const uint8_t version = read_u8(is);
    if (version != 1) throw IoError("read_luvt: unsupported version " + std::to_string(version));
    const uint8_t dtype = read_u8(is);
    if (dtype > 1) throw IoError("read_luvt: unknown dtype " + std::to_string(dtype));
    const uint8_t rank = read_u8(is);
    Shape shape(rank);
    for (auto& e : shape) e = static_cast<int>(read_u32(is));
    const int64_t n = shape_numel(shape);
    std::vector<double> data(static_cast<size_t>(n));
    if (dtype == static_cast<uint8_t>(DType::f64)) {
        is.read(reinterpret_cast<char*>(data.data()),
                static_cast<std::streamsize>(n * static_cast<int64_t>(sizeof(double))));
    } else {
        std::vector<float> f(static_cast<size_t>(n));
        is.read(reinterpret_cast<char*>(f.data()),
                static_cast<std::streamsize>(n * static_cast<int64_t>(sizeof(float))));
        for (int64_t i = 0; i < n; ++i) data[static_cast<size_t>(i)] = f[static_cast<size_t>(i)];
    }
    if (!is) throw IoError("read_luvt: truncated payload");
    return Tensor(std::move(shape), std::move(data));
}

void save_tensor(const std::string& path, const Tensor& t, DType dtype) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("cannot open for writing: " + path);
    write_luvt(os, t, dtype);
}

Tensor load_tensor(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open for reading: " + path);
    return read_luvt(is);
}

void save_checkpoint(const std::string& path, const NamedTensors& tensors, DType dtype) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("cannot open for writing: " + path);
    os.write("LUVE", 4);
    os.put(1);  // version
    write_u32(os, static_cast<uint32_t>(tensors.size()));
    for (const auto& [name, t] : tensors) {
        write_u32(os, static_cast<uint32_t>(name.size()));
        os.write(name.data(), static_cast<std::streamsize>(name.size()));
        write_luvt(os, t, dtype);
    }
    if (!os) throw IoError("save_checkpoint: stream write failed");
}

NamedTensors load_checkpoint(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open for reading: " + path);
    char magic[4];
    is.read(magic, 4);
    if (!is || std::memcmp(magic, "LUVE", 4) != 0) throw IoError("load_checkpoint: bad magic in " + path);
    const uint8_t version = read_u8(is);
    if (version != 1) throw IoError("load_checkpoint: unsupported version");
    const uint32_t count = read_u32(is);
    NamedTensors out;
    out.reserve(count);
    for (uint32_t i = 0; i < count; ++i) {
        const uint32_t len = read_u32(is);
        std::string name(len, '\0');
        is.read(name.data(), len);
        if (!is) throw IoError("load_checkpoint: truncated name");
        out.emplace_back(std::move(name), read_luvt(is));
    }
    return out;
}

}  // namespace luve
