#include "emorec/emt1.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <limits>

namespace emorec {

static_assert(std::endian::native == std::endian::little,
              "EMT1 I/O assumes a little-endian host");

namespace {

constexpr char kMagic[4] = {'E', 'M', 'T', '1'};

template <typename T>
void write_impl(const std::filesystem::path& path, const Tensor<T>& t, DType dtype) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ValidationError("emt1: cannot open " + path.string() + " for writing");
    out.write(kMagic, 4);
    const uint8_t dt = static_cast<uint8_t>(dtype);
    const uint8_t nd = static_cast<uint8_t>(t.ndim());
    if (t.ndim() > 255) throw ValidationError("emt1: too many dimensions");
    const uint8_t zero[2] = {0, 0};
    out.write(reinterpret_cast<const char*>(&dt), 1);
    out.write(reinterpret_cast<const char*>(&nd), 1);
    out.write(reinterpret_cast<const char*>(zero), 2);
    for (auto d : t.shape()) {
        const uint64_t dim = d;
        out.write(reinterpret_cast<const char*>(&dim), 8);
    }
    out.write(reinterpret_cast<const char*>(t.data().data()),
              static_cast<std::streamsize>(t.numel() * sizeof(T)));
    if (!out) throw ValidationError("emt1: short write to " + path.string());
}

} // namespace

void write_emt1(const std::filesystem::path& path, const Tensor<float>& t) {
    write_impl(path, t, DType::Float32);
}

void write_emt1(const std::filesystem::path& path, const Tensor<double>& t) {
    write_impl(path, t, DType::Float64);
}

RawTensor read_emt1(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ValidationError("emt1: cannot open " + path.string());
    char magic[4];
    uint8_t dt = 0, nd = 0;
    uint8_t reserved[2] = {0xff, 0xff};
    in.read(magic, 4);
    in.read(reinterpret_cast<char*>(&dt), 1);
    in.read(reinterpret_cast<char*>(&nd), 1);
    in.read(reinterpret_cast<char*>(reserved), 2);
    if (!in || std::memcmp(magic, kMagic, 4) != 0)
        throw ValidationError("emt1: bad magic in " + path.string());
    if (dt > 1) throw ValidationError("emt1: unknown dtype byte in " + path.string());
    if (reserved[0] != 0 || reserved[1] != 0)
        throw ValidationError("emt1: nonzero reserved bytes in " + path.string());

    RawTensor t;
    t.dtype = static_cast<DType>(dt);
    t.dims.resize(nd);
    uint64_t numel = 1;
    for (std::size_t i = 0; i < nd; ++i) {
        uint64_t dim = 0;
        in.read(reinterpret_cast<char*>(&dim), 8);
        if (!in) throw ValidationError("emt1: truncated header in " + path.string());
        if (dim != 0 && numel > std::numeric_limits<uint64_t>::max() / dim)
            throw ValidationError("emt1: dimension overflow in " + path.string());
        numel *= dim;
        t.dims[i] = static_cast<std::size_t>(dim);
    }
    const std::size_t elem = t.dtype == DType::Float32 ? 4 : 8;
    if (numel > (std::size_t(1) << 33))
        throw ValidationError("emt1: dimension overflow in " + path.string());

    const std::size_t payload = static_cast<std::size_t>(numel) * elem;
    std::vector<char> bytes(payload);
    in.read(bytes.data(), static_cast<std::streamsize>(payload));
    if (static_cast<std::size_t>(in.gcount()) != payload)
        throw ValidationError("emt1: payload length mismatch in " + path.string());
    in.peek();
    if (!in.eof()) throw ValidationError("emt1: payload length mismatch in " + path.string());

    if (t.dtype == DType::Float32) {
        t.f32.resize(numel);
        std::memcpy(t.f32.data(), bytes.data(), payload);
    } else {
        t.f64.resize(numel);
        std::memcpy(t.f64.data(), bytes.data(), payload);
    }
    return t;
}

Tensor<float> RawTensor::as_f32() const {
    std::vector<float> data;
    if (dtype == DType::Float32) {
        data = f32;
    } else {
        data.reserve(f64.size());
        for (double v : f64) data.push_back(static_cast<float>(v));
    }
    return Tensor<float>::from(dims, std::move(data));
}

Tensor<double> RawTensor::as_f64() const {
    std::vector<double> data;
    if (dtype == DType::Float64) {
        data = f64;
    } else {
        data.reserve(f32.size());
        for (float v : f32) data.push_back(static_cast<double>(v));
    }
    return Tensor<double>::from(dims, std::move(data));
}

} // namespace emorec
