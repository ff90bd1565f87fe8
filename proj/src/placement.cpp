#include "flbi/placement.hpp"

#include <numeric>

namespace flbi::placement {

Fraction Fraction::of(std::uint64_t num, std::uint64_t den)
{
  if (num == 0 || den == 0) return {0, 1};
  auto g = std::gcd(num, den);
  return {num / g, den / g};
}

std::string Fraction::str() const { return std::to_string(num) + "/" + std::to_string(den); }

bool operator==(const Fraction &a, const Fraction &b)
{
  return static_cast<unsigned __int128>(a.num) * b.den == static_cast<unsigned __int128>(b.num) * a.den;
}

bool operator<(const Fraction &a, const Fraction &b)
{
  return static_cast<unsigned __int128>(a.num) * b.den < static_cast<unsigned __int128>(b.num) * a.den;
}

PlacementTable::PlacementTable(const std::vector<std::string> &chains)
{
  for (const auto &c : chains) add_chain(c);
}

void PlacementTable::add_chain(const std::string &chain)
{
  chains_.insert(chain);
  totals_.emplace(chain, 0);
}

void PlacementTable::require(const std::string &chain) const
{
  if (!chains_.count(chain)) throw PlacementError("unknown chain: " + chain);
}

void PlacementTable::add_node(const std::string &member, const std::string &chain)
{
  require(chain);
  ++counts_[{member, chain}];
  ++totals_[chain];
}

void PlacementTable::remove_node(const std::string &member, const std::string &chain)
{
  require(chain);
  auto it = counts_.find({member, chain});
  if (it == counts_.end() || it->second == 0) throw PlacementError(member + " has no node on " + chain);
  if (--it->second == 0) counts_.erase(it);
  --totals_[chain];
}

std::uint64_t PlacementTable::count(const std::string &member, const std::string &chain) const
{
  require(chain);
  auto it = counts_.find({member, chain});
  return it == counts_.end() ? 0 : it->second;
}

std::uint64_t PlacementTable::total(const std::string &chain) const
{
  require(chain);
  return totals_.at(chain);
}

std::set<std::string> PlacementTable::members() const
{
  std::set<std::string> out;
  for (const auto &[key, n] : counts_) out.insert(key.first);
  return out;
}

Fraction fraction(const PlacementTable &table, const std::string &member, const std::string &chain)
{
  return Fraction::of(table.count(member, chain), table.total(chain));
}

const char *to_string(Recommendation r) { return r == Recommendation::support ? "support" : "reject"; }

Recommendation evaluate(const PlacementTable &table, const std::string &proposer, const std::string &target)
{
  const auto mine = fraction(table, proposer, target);
  for (const auto &l : table.chains())
    if (fraction(table, proposer, l) < mine) return Recommendation::reject;
  return Recommendation::support;
}

std::vector<std::string> admissible_chains(const PlacementTable &table, const std::string &member)
{
  std::vector<std::string> out;
  for (const auto &l : table.chains())
    if (evaluate(table, member, l) == Recommendation::support) out.push_back(l);
  return out;
}

Fraction max_fraction(const PlacementTable &table)
{
  Fraction best;
  for (const auto &c : table.members())
    for (const auto &l : table.chains())
      if (auto f = fraction(table, c, l); best < f) best = f;
  return best;
}

GrowthStats simulate_growth(PlacementTable &table, Rng &rng, const std::vector<std::string> &members,
                            std::size_t accepted)
{
  GrowthStats s;
  std::vector<std::string> chains(table.chains().begin(), table.chains().end());
  if (members.empty() || chains.empty()) return s;
  while (s.accepted < accepted)
  {
    const auto &c = members[s.accepted % members.size()];
    const auto &l = chains[rng.below(chains.size())];
    if (evaluate(table, c, l) == Recommendation::support)
    {
      table.add_node(c, l);
      ++s.accepted;
    }
    else
    {
      ++s.rejected;
    }
  }
  s.max_fraction = max_fraction(table);
  return s;
}

}  // namespace flbi::placement
