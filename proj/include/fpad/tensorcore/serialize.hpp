#pragma once

#include <filesystem>
#include <iosfwd>

#include "fpad/tensorcore/tensor.hpp"

// Binary tensor layout: u32 rank, rank × u32 extents, then the values as
// little-endian IEEE-754 doubles in row-major order.
namespace fpad {

void write_tensor(std::ostream& out, const Tensor& t);
Tensor read_tensor(std::istream& in);

void save_tensor(const std::filesystem::path& path, const Tensor& t);
Tensor load_tensor(const std::filesystem::path& path);

void write_u32(std::ostream& out, std::uint32_t v);
std::uint32_t read_u32(std::istream& in);

}  // namespace fpad
