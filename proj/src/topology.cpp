#include "permfl/topology.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <sstream>

#include "permfl/data.hpp"
#include "permfl/error.hpp"
#include "permfl/rng.hpp"

namespace permfl {
namespace {

std::size_t ceil_count(double fraction, std::size_t count) {
  // Guard against 0.3 * 10 = 3.0000000000000004 rounding up to 4.
  const double raw = fraction * static_cast<double>(count);
  auto k = static_cast<std::size_t>(std::ceil(raw - 1e-9));
  return std::clamp<std::size_t>(k, 1, count);
}

}  // namespace

int Topology::n_devices() const noexcept {
  std::size_t n = 0;
  for (const auto& t : teams) n += t.size();
  return static_cast<int>(n);
}

void Topology::validate() const {
  if (teams.empty()) throw ConfigError("topology has no teams");
  std::set<int> seen;
  for (std::size_t i = 0; i < teams.size(); ++i) {
    if (teams[i].empty()) throw ConfigError("team " + std::to_string(i) + " is empty");
    for (int d : teams[i]) {
      if (d < 0) throw ConfigError("negative device id " + std::to_string(d));
      if (!seen.insert(d).second)
        throw ConfigError("device " + std::to_string(d) + " appears in more than one team");
    }
  }
}

std::string Topology::to_text() const {
  std::ostringstream out;
  for (std::size_t i = 0; i < teams.size(); ++i) {
    out << "team " << i << ":";
    for (int d : teams[i]) out << ' ' << d;
    out << '\n';
  }
  return out.str();
}

Topology Topology::from_text(std::string_view text) {
  Topology topo;
  std::istringstream in{std::string(text)};
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::string word;
    int id = -1;
    char colon = 0;
    if (!(ls >> word >> id >> colon) || word != "team" || colon != ':' ||
        id != static_cast<int>(topo.teams.size()))
      throw ConfigError("malformed topology line: " + line);
    std::vector<int> members;
    int d;
    while (ls >> d) members.push_back(d);
    topo.teams.push_back(std::move(members));
  }
  topo.validate();
  return topo;
}

std::string_view to_string(ParticipationMode mode) noexcept {
  switch (mode) {
    case ParticipationMode::FullFull:
      return "full-full";
    case ParticipationMode::FullTeamsPartialDevices:
      return "full-teams-partial-devices";
    case ParticipationMode::PartialTeamsFullDevices:
      return "partial-teams-full-devices";
    case ParticipationMode::PartialPartial:
      return "partial-partial";
  }
  return "full-full";
}

ParticipationMode participation_mode_from_string(std::string_view name) {
  for (auto m : {ParticipationMode::FullFull, ParticipationMode::FullTeamsPartialDevices,
                 ParticipationMode::PartialTeamsFullDevices, ParticipationMode::PartialPartial})
    if (to_string(m) == name) return m;
  throw ConfigError("unknown participation mode '" + std::string(name) + "'");
}

ParticipationPolicy ParticipationPolicy::from_fractions(double team_fraction,
                                                        double device_fraction,
                                                        std::uint64_t seed) {
  ParticipationPolicy p;
  p.team_fraction = team_fraction;
  p.device_fraction = device_fraction;
  p.seed = seed;
  const bool full_teams = team_fraction >= 1.0;
  const bool full_devices = device_fraction >= 1.0;
  if (full_teams && full_devices)
    p.mode = ParticipationMode::FullFull;
  else if (full_teams)
    p.mode = ParticipationMode::FullTeamsPartialDevices;
  else if (full_devices)
    p.mode = ParticipationMode::PartialTeamsFullDevices;
  else
    p.mode = ParticipationMode::PartialPartial;
  p.validate();
  return p;
}

void ParticipationPolicy::validate() const {
  auto in_range = [](double f) { return f > 0.0 && f <= 1.0; };
  if (!in_range(team_fraction)) throw ConfigError("team_fraction must be in (0, 1]");
  if (!in_range(device_fraction)) throw ConfigError("device_fraction must be in (0, 1]");
  const bool teams_full = mode == ParticipationMode::FullFull ||
                          mode == ParticipationMode::FullTeamsPartialDevices;
  const bool devices_full = mode == ParticipationMode::FullFull ||
                            mode == ParticipationMode::PartialTeamsFullDevices;
  if (teams_full && team_fraction != 1.0)
    throw ConfigError("participation mode " + std::string(to_string(mode)) +
                      " requires team_fraction = 1");
  if (devices_full && device_fraction != 1.0)
    throw ConfigError("participation mode " + std::string(to_string(mode)) +
                      " requires device_fraction = 1");
}

Topology form_teams_random(std::span<const int> device_ids, int n_teams, std::uint64_t seed) {
  if (n_teams < 1) throw ConfigError("team count must be positive");
  if (static_cast<std::size_t>(n_teams) > device_ids.size())
    throw ConfigError("cannot form " + std::to_string(n_teams) + " teams from " +
                      std::to_string(device_ids.size()) + " devices");
  std::vector<int> ids(device_ids.begin(), device_ids.end());
  std::sort(ids.begin(), ids.end());
  Rng rng(seed, "form-teams-random");
  rng.shuffle(ids);
  Topology topo;
  topo.teams.resize(static_cast<std::size_t>(n_teams));
  for (std::size_t p = 0; p < ids.size(); ++p)
    topo.teams[p % static_cast<std::size_t>(n_teams)].push_back(ids[p]);
  for (auto& t : topo.teams) std::sort(t.begin(), t.end());
  topo.validate();
  return topo;
}

Topology form_teams_by_label(std::span<const std::vector<int>> label_sets, int n_classes,
                             int n_teams, LabelTeaming mode) {
  if (n_teams < 1 || n_classes < n_teams)
    throw ConfigError("label-based teaming needs 1 <= teams <= classes");
  const int block = (n_classes + n_teams - 1) / n_teams;
  const int window = mode == LabelTeaming::Worst ? block : block + (2 * block + 4) / 5;

  auto in_window = [&](int team, int label) {
    if (mode == LabelTeaming::Worst) return label / block == team;
    const int offset = ((label - team * block) % n_classes + n_classes) % n_classes;
    return offset < window;
  };

  Topology topo;
  topo.teams.resize(static_cast<std::size_t>(n_teams));
  for (std::size_t d = 0; d < label_sets.size(); ++d) {
    const auto& labels = label_sets[d];
    if (labels.empty()) throw ConfigError("device " + std::to_string(d) + " has no labels");
    int chosen = -1;
    for (int team = 0; team < n_teams; ++team) {
      const bool fits = std::all_of(labels.begin(), labels.end(),
                                    [&](int l) { return in_window(team, l); });
      if (!fits) continue;
      if (chosen < 0 || topo.teams[team].size() < topo.teams[chosen].size()) chosen = team;
    }
    if (chosen < 0)
      throw ConfigError("device " + std::to_string(d) +
                        " has labels that fit no team block; label structure is incompatible");
    topo.teams[chosen].push_back(static_cast<int>(d));
  }
  for (std::size_t t = 0; t < topo.teams.size(); ++t)
    if (topo.teams[t].empty())
      throw ConfigError("no device fits label block of team " + std::to_string(t) +
                        "; label structure is incompatible");
  topo.validate();
  return topo;
}

Topology form_teams_by_label(const Partition& partition, std::span<const int> labels,
                             int n_classes, int n_teams, LabelTeaming mode) {
  const auto sets = device_label_sets(partition, labels);
  return form_teams_by_label(sets, n_classes, n_teams, mode);
}

RoundSample sample_round(const ParticipationPolicy& policy, const Topology& topology, int round) {
  RoundSample out;
  const auto m = topology.teams.size();
  if (policy.team_fraction >= 1.0) {
    out.teams.resize(m);
    for (std::size_t i = 0; i < m; ++i) out.teams[i] = static_cast<int>(i);
  } else {
    Rng rng(policy.seed, "sample-teams", {static_cast<std::uint64_t>(round)});
    for (auto i : rng.sample_without_replacement(m, ceil_count(policy.team_fraction, m)))
      out.teams.push_back(static_cast<int>(i));
  }

  for (int team : out.teams) {
    // Canonical ascending order before sampling.
    std::vector<int> members = topology.teams[static_cast<std::size_t>(team)];
    std::sort(members.begin(), members.end());
    if (policy.device_fraction >= 1.0) {
      out.devices.push_back(std::move(members));
      continue;
    }
    Rng rng(policy.seed, "sample-devices",
            {static_cast<std::uint64_t>(round), static_cast<std::uint64_t>(team)});
    std::vector<int> active;
    for (auto idx : rng.sample_without_replacement(members.size(),
                                                   ceil_count(policy.device_fraction, members.size())))
      active.push_back(members[idx]);
    out.devices.push_back(std::move(active));
  }
  return out;
}

}  // namespace permfl
