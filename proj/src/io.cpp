#include "fcmesh/io.hpp"

#include "fcmesh/error.hpp"

#include <bit>
#include <charconv>
#include <cstring>
#include <fstream>
#include <sstream>

namespace fcmesh::io {

static_assert(std::endian::native == std::endian::little, "binary formats assume a little-endian host");

void write_atomic(const std::filesystem::path& path, std::string_view contents)
{
    if (path.has_parent_path())
        std::filesystem::create_directories(path.parent_path());
    auto tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out)
            throw DataError("cannot open " + tmp.string() + " for writing");
        out.write(contents.data(), static_cast<std::streamsize>(contents.size()));
        if (!out)
            throw DataError("write failed: " + tmp.string());
    }
    std::filesystem::rename(tmp, path);
}

std::string read_file(const std::filesystem::path& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in)
        throw DataError("cannot open " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

std::string format_double(double v)
{
    char buf[64];
    auto [end, ec] = std::to_chars(buf, buf + sizeof(buf), v);
    if (ec != std::errc())
        throw ComputeError("number formatting failed");
    return std::string(buf, end);
}

std::vector<std::string> split_csv_line(const std::string& line)
{
    std::vector<std::string> out;
    std::string field;
    for (char c : line) {
        if (c == ',') {
            out.push_back(field);
            field.clear();
        } else if (c != '\r') {
            field.push_back(c);
        }
    }
    out.push_back(field);
    return out;
}

std::uint64_t fnv1a(std::string_view bytes, std::uint64_t h)
{
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

std::string hex64(std::uint64_t v)
{
    static const char* digits = "0123456789abcdef";
    std::string s(16, '0');
    for (int i = 15; i >= 0; --i) {
        s[static_cast<std::size_t>(i)] = digits[v & 0xf];
        v >>= 4;
    }
    return s;
}

void ByteWriter::u16(std::uint16_t v)
{
    char b[2];
    std::memcpy(b, &v, 2);
    buf_.append(b, 2);
}

void ByteWriter::u32(std::uint32_t v)
{
    char b[4];
    std::memcpy(b, &v, 4);
    buf_.append(b, 4);
}

void ByteWriter::f32(float v)
{
    char b[4];
    std::memcpy(b, &v, 4);
    buf_.append(b, 4);
}

void ByteReader::need(std::size_t n) const
{
    if (remaining() < n)
        throw DataError("unexpected end of binary data");
}

std::uint8_t ByteReader::u8()
{
    need(1);
    return static_cast<std::uint8_t>(bytes_[pos_++]);
}

std::uint16_t ByteReader::u16()
{
    need(2);
    std::uint16_t v;
    std::memcpy(&v, bytes_.data() + pos_, 2);
    pos_ += 2;
    return v;
}

std::uint32_t ByteReader::u32()
{
    need(4);
    std::uint32_t v;
    std::memcpy(&v, bytes_.data() + pos_, 4);
    pos_ += 4;
    return v;
}

float ByteReader::f32()
{
    need(4);
    float v;
    std::memcpy(&v, bytes_.data() + pos_, 4);
    pos_ += 4;
    return v;
}

std::string_view ByteReader::raw(std::size_t n)
{
    need(n);
    auto s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
}

}  // namespace fcmesh::io
