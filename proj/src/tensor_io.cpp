#include "corrshift/tensor_io.hpp"

#include "corrshift/error.hpp"

#include <bit>
#include <cstring>
#include <fstream>

namespace corrshift {

static_assert(std::endian::native == std::endian::little, "tensor files are written in native little-endian order");

namespace {

constexpr char kMagic[4] = {'C', 'S', 'T', 'N'};
constexpr std::uint32_t kVersion = 1;

template <typename T>
void put(std::ofstream& out, T v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof v);
}

template <typename T>
T get(std::ifstream& in, const std::filesystem::path& path) {
    T v{};
    if (!in.read(reinterpret_cast<char*>(&v), sizeof v)) throw FormatError(path.string() + ": truncated header");
    return v;
}

std::size_t dtype_size(DType d) { return d == DType::f64 ? 8 : 4; }

void write_raw(const std::filesystem::path& path, const Shape& shape, DType dtype, std::span<const double> data) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw FormatError("cannot open " + path.string() + " for writing");
    out.write(kMagic, 4);
    put(out, kVersion);
    put(out, static_cast<std::uint32_t>(dtype));
    put(out, static_cast<std::uint32_t>(shape.size()));
    for (std::size_t d : shape) put(out, static_cast<std::uint64_t>(d));
    std::vector<char> buf(data.size() * dtype_size(dtype));
    for (std::size_t i = 0; i < data.size(); ++i) {
        switch (dtype) {
        case DType::f32: {
            const auto v = static_cast<float>(data[i]);
            std::memcpy(buf.data() + 4 * i, &v, 4);
            break;
        }
        case DType::f64:
            std::memcpy(buf.data() + 8 * i, &data[i], 8);
            break;
        case DType::i32: {
            const auto v = static_cast<std::int32_t>(data[i]);
            std::memcpy(buf.data() + 4 * i, &v, 4);
            break;
        }
        }
    }
    out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
    if (!out) throw FormatError("write failed for " + path.string());
}

Tensor read_raw(const std::filesystem::path& path, DType* dtype_out) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FormatError("cannot open " + path.string());
    char magic[4];
    if (!in.read(magic, 4)) throw FormatError(path.string() + ": truncated header");
    if (std::memcmp(magic, kMagic, 4) != 0) throw FormatError(path.string() + ": bad magic");
    const auto version = get<std::uint32_t>(in, path);
    if (version != kVersion) throw FormatError(path.string() + ": unsupported version " + std::to_string(version));
    const auto dt = get<std::uint32_t>(in, path);
    if (dt < 1 || dt > 3) throw FormatError(path.string() + ": unknown dtype " + std::to_string(dt));
    const auto dtype = static_cast<DType>(dt);
    const auto rank = get<std::uint32_t>(in, path);
    if (rank > 16) throw FormatError(path.string() + ": implausible rank " + std::to_string(rank));
    Shape shape(rank);
    for (auto& d : shape) d = static_cast<std::size_t>(get<std::uint64_t>(in, path));
    const std::size_t n = element_count(shape);
    std::vector<char> buf(n * dtype_size(dtype));
    if (!in.read(buf.data(), static_cast<std::streamsize>(buf.size())))
        throw FormatError(path.string() + ": truncated data (expected " + std::to_string(n) + " elements)");
    if (in.peek() != std::char_traits<char>::eof()) throw FormatError(path.string() + ": trailing bytes");
    std::vector<double> data(n);
    for (std::size_t i = 0; i < n; ++i) {
        switch (dtype) {
        case DType::f32: {
            float v;
            std::memcpy(&v, buf.data() + 4 * i, 4);
            data[i] = v;
            break;
        }
        case DType::f64:
            std::memcpy(&data[i], buf.data() + 8 * i, 8);
            break;
        case DType::i32: {
            std::int32_t v;
            std::memcpy(&v, buf.data() + 4 * i, 4);
            data[i] = v;
            break;
        }
        }
    }
    if (dtype_out) *dtype_out = dtype;
    return Tensor(std::move(shape), std::move(data));
}

} // namespace

void write_tensor(const std::filesystem::path& path, const Tensor& t, DType dtype) {
    if (dtype == DType::i32) throw FormatError("write_tensor: use write_labels for integer data");
    write_raw(path, t.shape(), dtype, t.data());
}

Tensor read_tensor(const std::filesystem::path& path) {
    DType dt;
    Tensor t = read_raw(path, &dt);
    if (dt == DType::i32) throw FormatError(path.string() + ": holds integer labels, not a float tensor");
    return t;
}

void write_labels(const std::filesystem::path& path, std::span<const int> labels) {
    std::vector<double> v(labels.begin(), labels.end());
    write_raw(path, Shape{labels.size()}, DType::i32, v);
}

std::vector<int> read_labels(const std::filesystem::path& path) {
    DType dt;
    const Tensor t = read_raw(path, &dt);
    if (dt != DType::i32 || t.rank() != 1) throw FormatError(path.string() + ": not a label vector");
    std::vector<int> out(t.size());
    for (std::size_t i = 0; i < t.size(); ++i) out[i] = static_cast<int>(t[i]);
    return out;
}

std::vector<char> read_bytes(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FormatError("cannot open " + path.string());
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

} // namespace corrshift
