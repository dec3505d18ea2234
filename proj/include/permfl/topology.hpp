#pragma once

// Team formation and per-round participation sampling.

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace permfl {

struct Partition;

/// Static assignment of devices to teams. Team ids are indices into `teams`;
/// each member list is sorted ascending and device ids are globally unique.
struct Topology {
  std::vector<std::vector<int>> teams;

  int n_teams() const noexcept { return static_cast<int>(teams.size()); }
  int n_devices() const noexcept;
  /// Throws ConfigError on an empty team or a duplicated device id.
  void validate() const;
  /// "team <id>: <device ids...>" one line per team.
  std::string to_text() const;
  static Topology from_text(std::string_view text);

  bool operator==(const Topology&) const = default;
};

enum class ParticipationMode {
  FullFull,
  FullTeamsPartialDevices,
  PartialTeamsFullDevices,
  PartialPartial,
};

std::string_view to_string(ParticipationMode mode) noexcept;
ParticipationMode participation_mode_from_string(std::string_view name);

struct ParticipationPolicy {
  ParticipationMode mode = ParticipationMode::FullFull;
  double team_fraction = 1.0;
  double device_fraction = 1.0;
  std::uint64_t seed = 0;

  /// Mode inferred from the fractions (a fraction of 1 means full).
  static ParticipationPolicy from_fractions(double team_fraction, double device_fraction,
                                            std::uint64_t seed);
  /// Fractions in (0, 1] and consistent with the mode.
  void validate() const;
};

struct RoundSample {
  std::vector<int> teams;                 // ascending team ids
  std::vector<std::vector<int>> devices;  // active device ids, parallel to `teams`
};

/// Shuffled round-robin split of `device_ids` into `n_teams` teams.
Topology form_teams_random(std::span<const int> device_ids, int n_teams, std::uint64_t seed);

enum class LabelTeaming { Worst, Average };

/// Groups devices by their label sets. Labels are cut into `n_teams`
/// contiguous blocks of size s = ceil(C / n_teams). Worst: a device joins the
/// block holding all of its labels, so team label sets are disjoint. Average:
/// team b accepts labels in the cyclic window starting at b*s of length
/// s + ceil(2s/5), giving overlapping label sets ({0..6} and {5..9,0,1} for
/// two teams over ten classes); a device joins the least-loaded team whose
/// window contains its labels. `label_sets[d]` lists the labels of device d.
Topology form_teams_by_label(std::span<const std::vector<int>> label_sets, int n_classes,
                             int n_teams, LabelTeaming mode);
Topology form_teams_by_label(const Partition& partition, std::span<const int> labels,
                             int n_classes, int n_teams, LabelTeaming mode);

/// Active teams and devices for global round `round`. Draws ceil(fraction * count)
/// members without replacement from a stream keyed by (seed, round[, team]).
RoundSample sample_round(const ParticipationPolicy& policy, const Topology& topology, int round);

}  // namespace permfl
