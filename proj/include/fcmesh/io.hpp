#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace fcmesh::io {

/// Writes to `<path>.tmp` and renames over `path`.
void write_atomic(const std::filesystem::path& path, std::string_view contents);

std::string read_file(const std::filesystem::path& path);

/// Shortest decimal text that parses back to the same double.
std::string format_double(double v);

std::vector<std::string> split_csv_line(const std::string& line);

/// FNV-1a, 64 bit.
std::uint64_t fnv1a(std::string_view bytes, std::uint64_t h = 0xcbf29ce484222325ULL);
std::string hex64(std::uint64_t v);

/// Little-endian byte buffer used by the binary formats.
class ByteWriter {
public:
    void u8(std::uint8_t v) { buf_.push_back(static_cast<char>(v)); }
    void u16(std::uint16_t v);
    void u32(std::uint32_t v);
    void f32(float v);
    void raw(std::string_view bytes) { buf_.append(bytes); }
    const std::string& str() const { return buf_; }

private:
    std::string buf_;
};

class ByteReader {
public:
    explicit ByteReader(std::string_view bytes) : bytes_(bytes) {}
    std::uint8_t u8();
    std::uint16_t u16();
    std::uint32_t u32();
    float f32();
    std::string_view raw(std::size_t n);
    std::size_t remaining() const { return bytes_.size() - pos_; }

private:
    void need(std::size_t n) const;
    std::string_view bytes_;
    std::size_t pos_ = 0;
};

}  // namespace fcmesh::io
