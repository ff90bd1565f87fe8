#pragma once

// Scripted attacks on a World and the detection matrix they are scored by.

#include "flbi/simnet.hpp"

#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace flbi::scenario {
class World;
}

namespace flbi::adversary {

using simnet::SimTime;

enum class AttackId
{
  A1,  // input signal distortion at the sensor
  A2,  // meter firmware / flash tampering
  A3,  // MDMS compromise
  A4,  // storage replica tampering
  A5,  // OEM compromise (admin key, threshold share, TPM keys)
  A6,  // compromised DCU / bottom node
  A7,  // WAN man-in-the-middle
  byz_empty_spam,
  byz_censor,
  byz_vote_withhold,
  mempool_flood,
};

const char *to_string(AttackId id);
std::optional<AttackId> attack_from_string(std::string_view s);

enum class Detector
{
  signature_check,
  chain_verify,
  cooldown_veto,
  anomaly_hook,
  log_audit,
};

inline constexpr Detector kDetectors[] = {Detector::signature_check, Detector::chain_verify, Detector::cooldown_veto,
                                          Detector::anomaly_hook, Detector::log_audit};

const char *to_string(Detector d);

/// Parameters are kept as strings and parsed by the attack that uses them.
///   A1  scale (power multiplier, default 0.5)
///   A2  mode = firmware | flash-new | flash-current, scale
///   A3  forge (readings per target, default 3)
///   A4  height (0 = first block with a measurement), chain
///   A5  leak = comma list of admin-key, threshold-share, tpm-key
///   A6  (node targets) mode = readings | firmware | both
///   A7  kinds = reading,firmware
///   byz-*          chain, count (default f)
///   mempool-flood  chain, rate (txs per second)
struct AttackScript
{
  AttackId id{AttackId::A1};
  std::vector<std::string> targets;
  std::map<std::string, std::string> params;
  SimTime start{0};
  SimTime end{0};

  std::string param(const std::string &key, const std::string &fallback) const;
  double param_number(const std::string &key, double fallback) const;
};

class AttackError : public std::runtime_error
{
public:
  using std::runtime_error::runtime_error;
};

/// data_type uses the names "x(new)", "x(log)", "sigma_x(new)", "b(new)",
/// "b(curr)", "b(log)".
struct DetectionEvent
{
  SimTime time{0};
  Detector detector{Detector::signature_check};
  std::string data_type;
  std::string subject;
  std::string detail;
  // Ground truth, filled in after the detector has fired. Empty when the
  // event matches no scripted attack.
  std::string attribution;
};

/// Installs the attack on `world`. Byzantine node behaviors are read from
/// the scripts when the world is built; for those ids this only validates.
/// Throws AttackError on a target mismatch.
void apply_attack(const AttackScript &script, scenario::World &world);

enum class Expectation
{
  detected,
  missed,
};

const char *to_string(Expectation e);

struct MatrixCell
{
  AttackId attack;
  std::string data_type;
  Detector detector;
  Expectation expected;
};

/// Cells transcribed from the threat-model table, restricted to what the
/// simulator can script.
const std::vector<MatrixCell> &expected_matrix();

struct ScoredCell
{
  MatrixCell cell;
  Expectation observed;
  std::size_t events{0};
  bool matches() const { return cell.expected == observed; }
};

struct DetectionMatrix
{
  std::vector<ScoredCell> cells;
  // Attributed events that fall outside every expected cell.
  std::vector<DetectionEvent> unexpected;

  bool all_match() const;
  std::string table() const;
};

/// Scores the cells of every attack that appears in `attacks`.
DetectionMatrix score_detection(const std::vector<DetectionEvent> &events, const std::vector<AttackScript> &attacks);

}  // namespace flbi::adversary
