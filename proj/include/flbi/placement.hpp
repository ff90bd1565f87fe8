#pragma once

// Node-placement fairness rule for bottom-layer chains.
//
// phi(c, l) = n_cl / N_l is member c's share of chain l. A member may only
// add a node to a chain where its share is minimal. Shares are compared as
// exact rationals.

#include "flbi/rng.hpp"

#include <cstdint>
#include <map>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

namespace flbi::placement {

struct Fraction
{
  std::uint64_t num{0};
  std::uint64_t den{1};

  // Reduced form; 0 is always 0/1.
  static Fraction of(std::uint64_t num, std::uint64_t den);
  double value() const { return den ? static_cast<double>(num) / static_cast<double>(den) : 0.0; }
  std::string str() const;
};

bool operator==(const Fraction &a, const Fraction &b);
bool operator<(const Fraction &a, const Fraction &b);
inline bool operator<=(const Fraction &a, const Fraction &b) { return !(b < a); }

class PlacementError : public std::invalid_argument
{
public:
  using std::invalid_argument::invalid_argument;
};

class PlacementTable
{
public:
  PlacementTable() = default;
  explicit PlacementTable(const std::vector<std::string> &chains);

  void add_chain(const std::string &chain);
  void add_node(const std::string &member, const std::string &chain);
  // Throws when the member has no node on the chain.
  void remove_node(const std::string &member, const std::string &chain);

  std::uint64_t count(const std::string &member, const std::string &chain) const;
  std::uint64_t total(const std::string &chain) const;
  const std::set<std::string> &chains() const { return chains_; }
  std::set<std::string> members() const;

private:
  void require(const std::string &chain) const;

  std::set<std::string> chains_;
  std::map<std::pair<std::string, std::string>, std::uint64_t> counts_;
  std::map<std::string, std::uint64_t> totals_;
};

// n_cl / N_l, or 0 for an empty chain. Throws PlacementError for an unknown chain.
Fraction fraction(const PlacementTable &table, const std::string &member, const std::string &chain);

enum class Recommendation
{
  support,
  reject,
};

const char *to_string(Recommendation r);

// support iff the target chain minimizes the proposer's share.
Recommendation evaluate(const PlacementTable &table, const std::string &proposer, const std::string &target);

// Chains where `member` would currently be allowed to add a node.
std::vector<std::string> admissible_chains(const PlacementTable &table, const std::string &member);

Fraction max_fraction(const PlacementTable &table);

struct GrowthStats
{
  std::size_t accepted{0};
  std::size_t rejected{0};
  Fraction max_fraction;  // at the end of the run
};

/// Members take turns adding one node each; every proposal targets a
/// uniformly random chain and is applied only when evaluate supports it.
/// Runs until `accepted` additions.
GrowthStats simulate_growth(PlacementTable &table, Rng &rng, const std::vector<std::string> &members,
                            std::size_t accepted);

}  // namespace flbi::placement
