#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "padapt/tensor.hpp"

namespace padapt {

// Versioned structured-text container: header line, ordered meta lines,
// ordered named tensors as hex floats, trailing whole-file checksum line.
// Hex-float encoding makes round trips bit-exact.
struct Checkpoint {
    std::vector<std::pair<std::string, std::string>> meta;
    std::vector<std::pair<std::string, Tensor>> tensors;

    void add_meta(std::string key, std::string value);
    bool has_meta(std::string_view key) const;
    const std::string& meta_value(std::string_view key) const;

    bool has_tensor(std::string_view name) const;
    const Tensor& tensor(std::string_view name) const;
    void add_tensor(std::string name, Tensor t);
};

std::uint64_t fnv1a64(std::string_view bytes);
std::string fnv1a64_hex(std::string_view bytes);

std::string serialize_checkpoint(const Checkpoint& ckpt);
Checkpoint parse_checkpoint(std::string_view bytes, std::string_view origin = "<memory>");

void write_checkpoint_file(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint read_checkpoint_file(const std::filesystem::path& path);

std::string read_file_bytes(const std::filesystem::path& path);
std::string file_checksum_hex(const std::filesystem::path& path);

}  // namespace padapt
