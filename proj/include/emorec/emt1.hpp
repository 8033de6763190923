#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "emorec/tensor.hpp"

namespace emorec {

enum class DType : uint8_t { Float32 = 0, Float64 = 1 };

// One tensor as stored on disk: dtype tag plus raw little-endian payload.
struct RawTensor {
    DType dtype = DType::Float32;
    std::vector<std::size_t> dims;
    std::vector<float> f32;
    std::vector<double> f64;

    std::size_t numel() const {
        std::size_t n = 1;
        for (auto d : dims) n *= d;
        return n;
    }

    Tensor<float> as_f32() const;
    Tensor<double> as_f64() const;
};

// "EMT1" container: magic, dtype byte, ndim byte, two zero bytes, ndim
// little-endian u64 dims, then the row-major payload.
void write_emt1(const std::filesystem::path& path, const Tensor<float>& t);
void write_emt1(const std::filesystem::path& path, const Tensor<double>& t);
RawTensor read_emt1(const std::filesystem::path& path);

} // namespace emorec
