#include "flbi/rng.hpp"

#include <sodium.h>

#include <cstring>

namespace flbi {

Rng::Rng(std::uint64_t seed)
{
  std::uint8_t material[16] = {'f', 'l', 'b', 'i', '-', 'r', 'n', 'g'};
  for (int i = 0; i < 8; ++i) material[8 + i] = static_cast<std::uint8_t>(seed >> (56 - 8 * i));
  crypto_hash_sha256(key_.data(), material, sizeof(material));
}

void Rng::refill()
{
  std::uint8_t nonce[crypto_stream_chacha20_NONCEBYTES];
  for (int i = 0; i < 8; ++i) nonce[i] = static_cast<std::uint8_t>(counter_ >> (56 - 8 * i));
  ++counter_;
  crypto_stream_chacha20(buffer_.data(), buffer_.size(), nonce, key_.data());
  used_ = 0;
}

void Rng::fill(std::span<std::uint8_t> out)
{
  std::size_t done = 0;
  while (done < out.size())
  {
    if (used_ == buffer_.size()) refill();
    auto n = std::min(out.size() - done, buffer_.size() - used_);
    std::memcpy(out.data() + done, buffer_.data() + used_, n);
    used_ += n;
    done += n;
  }
}

std::uint64_t Rng::next_u64()
{
  std::uint8_t b[8];
  fill(b);
  std::uint64_t v = 0;
  for (auto x : b) v = v << 8 | x;
  return v;
}

std::uint64_t Rng::below(std::uint64_t bound)
{
  // Rejection sampling keeps the result unbiased.
  const std::uint64_t limit = UINT64_MAX - UINT64_MAX % bound;
  std::uint64_t v;
  do
  {
    v = next_u64();
  } while (v >= limit);
  return v % bound;
}

std::int64_t Rng::between(std::int64_t lo, std::int64_t hi)
{
  if (hi <= lo) return lo;
  return lo + static_cast<std::int64_t>(below(static_cast<std::uint64_t>(hi - lo) + 1));
}

double Rng::unit()
{
  return static_cast<double>(next_u64() >> 11) * (1.0 / 9007199254740992.0);
}

Rng Rng::fork(std::string_view label) const
{
  std::array<std::uint8_t, 32> child{};
  crypto_hash_sha256_state st;
  crypto_hash_sha256_init(&st);
  crypto_hash_sha256_update(&st, key_.data(), key_.size());
  crypto_hash_sha256_update(&st, reinterpret_cast<const unsigned char *>(label.data()), label.size());
  crypto_hash_sha256_final(&st, child.data());
  return Rng(child);
}

}  // namespace flbi
