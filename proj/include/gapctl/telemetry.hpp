#pragma once

#include "gapctl/command.hpp"

#include <cstdint>
#include <iosfwd>
#include <vector>

namespace gapctl {

inline constexpr int kSequenceBits = 12;
inline constexpr std::uint32_t kSequenceModulus = 1u << kSequenceBits;

/// A binary64 speed whose 12 lowest stored-fraction bits carry a sequence number.
struct TaggedSpeed {
  double wire = 0.0;
};

struct DecodedSpeed {
  double value = 0.0;  ///< tag bits cleared
  std::uint16_t sequence = 0;
};

/// Throws std::out_of_range for seq >= 4096 and std::invalid_argument for NaN/Inf.
TaggedSpeed encode(double value, std::uint32_t seq);
DecodedSpeed decode(TaggedSpeed tagged);

/// Tags the last joint's argument with cmd.sequence mod 4096.
void tag_command(SpeedCommand& cmd);
std::uint16_t command_sequence(const SpeedCommand& cmd);

enum class Direction { Command, Feedback };

/// t_recv < 0 marks a message that never arrived.
struct LinkEvent {
  double t_send = 0.0;
  double t_recv = 0.0;
  std::uint16_t seq = 0;
  Direction direction = Direction::Command;
};

struct HistogramSpec {
  double origin = 0.0;
  double bin_width = 0.001;
  std::size_t bins = 20;
};

struct Histogram {
  HistogramSpec spec;
  std::vector<std::size_t> counts;
  std::size_t underflow = 0;
  std::size_t overflow = 0;
  std::size_t samples = 0;
  double min = 0.0;
  double max = 0.0;
  double mean = 0.0;
};

Histogram make_histogram(const std::vector<double>& values, const HistogramSpec& spec);

struct RttRecord {
  std::uint16_t seq = 0;
  double t_send = 0.0;
  /// Zero when skipped.
  double rtt = 0.0;
  bool skipped = false;
};

struct LinkStats {
  Histogram feedback_iat;
  std::vector<RttRecord> rtt;
  Histogram rtt_histogram;
  std::size_t skipped = 0;
};

/// Feedback inter-arrival times, and per delivered command the time until the
/// first later feedback reflecting its sequence number.
LinkStats iat_rtt_stats(const std::vector<LinkEvent>& log, const HistogramSpec& iat_bins,
                        const HistogramSpec& rtt_bins = {0.0, 0.001, 50});

/// CSV with columns t_send, t_recv, seq, direction (cmd|fb).
void write_event_log(std::ostream& out, const std::vector<LinkEvent>& log);
/// Throws FormatError with the offending line.
std::vector<LinkEvent> read_event_log(std::istream& in);

}  // namespace gapctl
