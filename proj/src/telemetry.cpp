#include "gapctl/telemetry.hpp"

#include "gapctl/numfmt.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <istream>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <string>

namespace gapctl {

namespace {

constexpr std::uint64_t kTagMask = kSequenceModulus - 1;

}  // namespace

TaggedSpeed encode(double value, std::uint32_t seq) {
  if (seq >= kSequenceModulus) throw std::out_of_range("encode: sequence number needs more than 12 bits");
  if (!std::isfinite(value)) throw std::invalid_argument("encode: value must be finite");
  const auto bits = std::bit_cast<std::uint64_t>(value);
  return {std::bit_cast<double>((bits & ~kTagMask) | seq)};
}

DecodedSpeed decode(TaggedSpeed tagged) {
  const auto bits = std::bit_cast<std::uint64_t>(tagged.wire);
  return {std::bit_cast<double>(bits & ~kTagMask), static_cast<std::uint16_t>(bits & kTagMask)};
}

void tag_command(SpeedCommand& cmd) {
  const auto seq = static_cast<std::uint32_t>(cmd.sequence % kSequenceModulus);
  cmd.args[kJoints - 1] = encode(cmd.args[kJoints - 1], seq).wire;
}

std::uint16_t command_sequence(const SpeedCommand& cmd) {
  return decode({cmd.args[kJoints - 1]}).sequence;
}

Histogram make_histogram(const std::vector<double>& values, const HistogramSpec& spec) {
  if (!(spec.bin_width > 0.0) || spec.bins == 0)
    throw std::invalid_argument("make_histogram: need positive bin width and count");
  Histogram h;
  h.spec = spec;
  h.counts.assign(spec.bins, 0);
  h.samples = values.size();
  if (values.empty()) return h;
  h.min = *std::min_element(values.begin(), values.end());
  h.max = *std::max_element(values.begin(), values.end());
  double sum = 0.0;
  for (double v : values) {
    sum += v;
    // Nudge by a relative epsilon so values on a bin edge land in that bin.
    const double x = (v - spec.origin) / spec.bin_width;
    const double idx = std::floor(x + 1e-9 * std::max(1.0, std::abs(x)));
    if (idx < 0.0) ++h.underflow;
    else if (idx >= static_cast<double>(spec.bins)) ++h.overflow;
    else ++h.counts[static_cast<std::size_t>(idx)];
  }
  h.mean = sum / static_cast<double>(values.size());
  return h;
}

LinkStats iat_rtt_stats(const std::vector<LinkEvent>& log, const HistogramSpec& iat_bins,
                        const HistogramSpec& rtt_bins) {
  std::vector<const LinkEvent*> feedback, commands;
  for (const auto& e : log) {
    if (e.direction == Direction::Feedback) {
      if (e.t_recv >= 0.0) feedback.push_back(&e);
    } else {
      commands.push_back(&e);
    }
  }
  std::stable_sort(feedback.begin(), feedback.end(),
                   [](const LinkEvent* a, const LinkEvent* b) { return a->t_recv < b->t_recv; });
  std::stable_sort(commands.begin(), commands.end(),
                   [](const LinkEvent* a, const LinkEvent* b) { return a->t_send < b->t_send; });

  LinkStats stats;
  std::vector<double> iat;
  for (std::size_t i = 1; i < feedback.size(); ++i) iat.push_back(feedback[i]->t_recv - feedback[i - 1]->t_recv);
  stats.feedback_iat = make_histogram(iat, iat_bins);

  std::vector<double> rtts;
  for (const LinkEvent* c : commands) {
    RttRecord r{c->seq, c->t_send, 0.0, true};
    if (c->t_recv >= 0.0) {
      const auto first = std::lower_bound(feedback.begin(), feedback.end(), c->t_recv,
                                          [](const LinkEvent* f, double t) { return f->t_recv < t; });
      const auto hit = std::find_if(first, feedback.end(),
                                    [&](const LinkEvent* f) { return f->seq == c->seq; });
      if (hit != feedback.end()) {
        r.rtt = (*hit)->t_recv - c->t_send;
        r.skipped = false;
        rtts.push_back(r.rtt);
      }
    }
    if (r.skipped) ++stats.skipped;
    stats.rtt.push_back(r);
  }
  stats.rtt_histogram = make_histogram(rtts, rtt_bins);
  return stats;
}

void write_event_log(std::ostream& out, const std::vector<LinkEvent>& log) {
  out << "t_send,t_recv,seq,direction\n";
  for (const auto& e : log)
    out << format_double(e.t_send) << ',' << format_double(e.t_recv) << ',' << e.seq << ','
        << (e.direction == Direction::Command ? "cmd" : "fb") << '\n';
}

std::vector<LinkEvent> read_event_log(std::istream& in) {
  std::vector<LinkEvent> out;
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || (n == 1 && line.rfind("t_send", 0) == 0)) continue;
    std::vector<std::string> f;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) f.push_back(cell);
    if (f.size() != 4) throw FormatError("event log: expected 4 columns", n);
    const auto ts = parse_double(f[0]);
    const auto tr = parse_double(f[1]);
    const auto seq = parse_double(f[2]);
    if (!ts || !tr || !seq || *seq < 0 || *seq >= kSequenceModulus || *seq != std::floor(*seq))
      throw FormatError("event log: bad number", n);
    LinkEvent e{*ts, *tr, static_cast<std::uint16_t>(*seq), Direction::Command};
    if (f[3] == "fb") e.direction = Direction::Feedback;
    else if (f[3] != "cmd") throw FormatError("event log: direction must be cmd or fb", n);
    out.push_back(e);
  }
  return out;
}

}  // namespace gapctl
