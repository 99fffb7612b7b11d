#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "falcon/tensor.hpp"

namespace falcon {

/// Ordered collection of named f32 tensors, serialized as a FALT archive:
///
///   "FALT" | u16 version (1) | u32 count
///   per entry: u16 name_len | name (UTF-8) | u8 ndim | ndim x u32 dims | u8 dtype (0 = f32) | payload
///
/// All integers and payloads are little-endian; payload is row-major.
class TensorArchive {
public:
    static constexpr std::uint16_t kVersion = 1;
    static constexpr std::uint8_t kDtypeF32 = 0;

    void add(std::string name, TensorF tensor);
    bool contains(const std::string& name) const;
    const TensorF& get(const std::string& name) const;
    std::size_t size() const { return entries_.size(); }
    const std::vector<std::pair<std::string, TensorF>>& entries() const { return entries_; }

    std::vector<std::uint8_t> serialize() const;
    static TensorArchive parse(std::span<const std::uint8_t> bytes);

    void save(const std::filesystem::path& path) const;
    static TensorArchive load(const std::filesystem::path& path);

private:
    std::vector<std::pair<std::string, TensorF>> entries_;
};

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path);
void write_file_bytes(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);

} // namespace falcon
