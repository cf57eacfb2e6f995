#pragma once

#include "gapctl/types.hpp"

#include <cstdint>
#include <string_view>

namespace gapctl {

/// SPEEDJ: joint speeds, held during a gap (linear motion in joint space).
/// SPEEDL: Cartesian twist, held during a gap (linear motion in task space).
/// SPEEDJ_AI: behaves as SPEEDJ while commands arrive; during a gap the
/// robot side replaces it with model-extrapolated SPEEDJ commands.
enum class CommandKind : std::uint8_t { SpeedJ = 0, SpeedJAi = 1, SpeedL = 2 };

inline constexpr int kCommandKinds = 3;

constexpr std::string_view to_string(CommandKind k) {
  switch (k) {
    case CommandKind::SpeedJ: return "speedj";
    case CommandKind::SpeedJAi: return "speedj_ai";
    case CommandKind::SpeedL: return "speedl";
  }
  return "?";
}

struct SpeedCommand {
  CommandKind kind = CommandKind::SpeedJ;
  /// rad/s for SPEEDJ and SPEEDJ_AI; (m/s, rad/s) twist for SPEEDL.
  JointVector args = JointVector::Zero();
  double timestamp = 0.0;
  std::uint64_t sequence = 0;
};

}  // namespace gapctl
