#pragma once

#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace flbi {

using Bytes = std::vector<std::uint8_t>;
using ByteView = std::span<const std::uint8_t>;

class DecodeError : public std::runtime_error
{
public:
  using std::runtime_error::runtime_error;
};

inline Bytes to_bytes(std::string_view s) { return Bytes(s.begin(), s.end()); }

std::string to_hex(ByteView data);
Bytes from_hex(std::string_view hex);

// Big-endian, length-prefixed writer. Every canonical encoding in the
// project (transactions, chains, bundles, votes) is built with this.
class ByteWriter
{
public:
  ByteWriter &u8(std::uint8_t v);
  ByteWriter &u32(std::uint32_t v);
  ByteWriter &u64(std::uint64_t v);
  ByteWriter &i64(std::int64_t v) { return u64(static_cast<std::uint64_t>(v)); }
  ByteWriter &raw(ByteView data);
  // u32 length prefix followed by the bytes.
  ByteWriter &blob(ByteView data);
  ByteWriter &str(std::string_view s);

  const Bytes &bytes() const & { return out_; }
  Bytes take() && { return std::move(out_); }

private:
  Bytes out_;
};

class ByteReader
{
public:
  explicit ByteReader(ByteView data) : data_(data) {}

  std::uint8_t u8();
  std::uint32_t u32();
  std::uint64_t u64();
  std::int64_t i64() { return static_cast<std::int64_t>(u64()); }
  ByteView raw(std::size_t n);
  // Rejects prefixes larger than `limit` or than the remaining input.
  ByteView blob(std::size_t limit = 1u << 26);
  std::string str(std::size_t limit = 1u << 16);

  std::size_t remaining() const { return data_.size() - pos_; }
  bool done() const { return remaining() == 0; }
  // Throws unless the whole input has been consumed.
  void expect_done() const;

private:
  void need(std::size_t n) const;

  ByteView data_;
  std::size_t pos_{0};
};

}  // namespace flbi
