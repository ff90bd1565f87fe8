#include "flbi/bytes.hpp"

namespace flbi {

std::string to_hex(ByteView data)
{
  static constexpr char digits[] = "0123456789abcdef";
  std::string out;
  out.reserve(data.size() * 2);
  for (auto b : data)
  {
    out.push_back(digits[b >> 4]);
    out.push_back(digits[b & 0x0f]);
  }
  return out;
}

Bytes from_hex(std::string_view hex)
{
  auto nibble = [](char c) -> int {
    if (c >= '0' && c <= '9') return c - '0';
    if (c >= 'a' && c <= 'f') return c - 'a' + 10;
    if (c >= 'A' && c <= 'F') return c - 'A' + 10;
    throw DecodeError("invalid hex digit");
  };
  if (hex.size() % 2 != 0) throw DecodeError("odd-length hex string");
  Bytes out(hex.size() / 2);
  for (std::size_t i = 0; i < out.size(); ++i)
    out[i] = static_cast<std::uint8_t>(nibble(hex[2 * i]) << 4 | nibble(hex[2 * i + 1]));
  return out;
}

ByteWriter &ByteWriter::u8(std::uint8_t v)
{
  out_.push_back(v);
  return *this;
}

ByteWriter &ByteWriter::u32(std::uint32_t v)
{
  for (int shift = 24; shift >= 0; shift -= 8) out_.push_back(static_cast<std::uint8_t>(v >> shift));
  return *this;
}

ByteWriter &ByteWriter::u64(std::uint64_t v)
{
  for (int shift = 56; shift >= 0; shift -= 8) out_.push_back(static_cast<std::uint8_t>(v >> shift));
  return *this;
}

ByteWriter &ByteWriter::raw(ByteView data)
{
  out_.insert(out_.end(), data.begin(), data.end());
  return *this;
}

ByteWriter &ByteWriter::blob(ByteView data)
{
  u32(static_cast<std::uint32_t>(data.size()));
  return raw(data);
}

ByteWriter &ByteWriter::str(std::string_view s)
{
  return blob(ByteView(reinterpret_cast<const std::uint8_t *>(s.data()), s.size()));
}

void ByteReader::need(std::size_t n) const
{
  if (remaining() < n) throw DecodeError("truncated input");
}

std::uint8_t ByteReader::u8()
{
  need(1);
  return data_[pos_++];
}

std::uint32_t ByteReader::u32()
{
  need(4);
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v = v << 8 | data_[pos_++];
  return v;
}

std::uint64_t ByteReader::u64()
{
  need(8);
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v = v << 8 | data_[pos_++];
  return v;
}

ByteView ByteReader::raw(std::size_t n)
{
  need(n);
  auto out = data_.subspan(pos_, n);
  pos_ += n;
  return out;
}

ByteView ByteReader::blob(std::size_t limit)
{
  auto n = u32();
  if (n > limit) throw DecodeError("length prefix exceeds limit");
  return raw(n);
}

std::string ByteReader::str(std::size_t limit)
{
  auto b = blob(limit);
  return std::string(b.begin(), b.end());
}

void ByteReader::expect_done() const
{
  if (!done()) throw DecodeError("trailing bytes after encoding");
}

}  // namespace flbi
