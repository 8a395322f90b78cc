#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "sfl/numkit.hpp"

namespace sfl {

// Little-endian layout:
//   "SFL1" | u32 version | u32 tensor count
//   per tensor: u16 name length | name | u8 rank | u64 extents[rank] | f64 payload
//   u32 metadata length | UTF-8 metadata
//   u32 CRC32 of every preceding byte
inline constexpr char kContainerMagic[4] = {'S', 'F', 'L', '1'};
inline constexpr std::uint32_t kContainerVersion = 1;

struct Container {
    std::vector<std::pair<std::string, Tensor>> tensors;
    std::string metadata;

    void add(std::string name, Tensor t) { tensors.emplace_back(std::move(name), std::move(t)); }
    bool has(const std::string& name) const;
    // Throws InvariantError when absent.
    const Tensor& get(const std::string& name) const;
};

std::vector<std::uint8_t> encode_container(const Container& c);

/// Checks magic, then version, then checksum, and only then parses, so a
/// damaged file never yields a partially decoded container.
Container decode_container(std::span<const std::uint8_t> bytes);

std::uint32_t crc32(std::span<const std::uint8_t> bytes);

// Writes to a sibling temporary file and renames it into place.
void write_file_atomic(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);
void write_text_atomic(const std::filesystem::path& path, const std::string& text);
std::vector<std::uint8_t> read_file(const std::filesystem::path& path);

}  // namespace sfl
