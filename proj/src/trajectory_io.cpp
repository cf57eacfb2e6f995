#include "gapctl/trajectory.hpp"

#include <json.hpp>

#include <charconv>
#include <fstream>
#include <sstream>

namespace gapctl {

namespace {

constexpr int kFormatVersion = 1;
constexpr const char* kFormatName = "gapctl-trajectory";

void put(std::ostream& out, double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  out.write(buf, res.ptr - buf);
}

std::vector<double> numbers(const std::string& text, std::size_t line) {
  std::vector<double> out;
  const char* p = text.data();
  const char* end = p + text.size();
  while (p < end) {
    while (p < end && *p == ' ') ++p;
    if (p == end) break;
    double v = 0.0;
    const auto res = std::from_chars(p, end, v);
    if (res.ec != std::errc()) throw FormatError("trajectory: bad number", line);
    out.push_back(v);
    p = res.ptr;
    if (p < end && *p != ' ') throw FormatError("trajectory: bad separator", line);
  }
  return out;
}

}  // namespace

void write_trajectory(std::ostream& out, const Trajectory& traj) {
  nlohmann::json header = {{"format", kFormatName},
                           {"version", kFormatVersion},
                           {"joints", kJoints},
                           {"segments", traj.segments().size()},
                           {"duration", traj.duration()}};
  out << header.dump() << '\n';
  out << "knots";
  for (double t : traj.knots()) {
    out << ' ';
    put(out, t);
  }
  out << '\n';
  for (const auto& seg : traj.segments()) {
    out << "seg";
    for (const auto& c : seg.c) {
      for (int j = 0; j < kJoints; ++j) {
        out << ' ';
        put(out, c[j]);
      }
    }
    out << '\n';
  }
  out << "end\n";
}

Trajectory read_trajectory(std::istream& in) {
  std::string line;
  std::size_t lineno = 1;
  if (!std::getline(in, line)) throw FormatError("trajectory: empty input", lineno);
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(line);
  } catch (const nlohmann::json::exception&) {
    throw FormatError("trajectory: header is not JSON", lineno);
  }
  if (header.value("format", "") != kFormatName) throw FormatError("trajectory: wrong format tag", lineno);
  if (header.value("version", 0) != kFormatVersion) throw FormatError("trajectory: unsupported version", lineno);
  if (header.value("joints", 0) != kJoints) throw FormatError("trajectory: joint count mismatch", lineno);
  const auto n = header.value("segments", std::size_t{0});
  if (n == 0) throw FormatError("trajectory: no segments", lineno);

  ++lineno;
  if (!std::getline(in, line) || line.rfind("knots ", 0) != 0)
    throw FormatError("trajectory: expected knots line", lineno);
  std::vector<double> knots = numbers(line.substr(6), lineno);
  if (knots.size() != n + 1) throw FormatError("trajectory: knot count mismatch", lineno);

  std::vector<Trajectory::Segment> segs(n);
  for (std::size_t k = 0; k < n; ++k) {
    ++lineno;
    if (!std::getline(in, line) || line.rfind("seg ", 0) != 0)
      throw FormatError("trajectory: expected segment line", lineno);
    const auto v = numbers(line.substr(4), lineno);
    if (v.size() != 4 * kJoints) throw FormatError("trajectory: segment needs 24 values", lineno);
    for (int c = 0; c < 4; ++c)
      for (int j = 0; j < kJoints; ++j) segs[k].c[c][j] = v[c * kJoints + j];
  }
  ++lineno;
  if (!std::getline(in, line) || line != "end") throw FormatError("trajectory: missing end marker", lineno);
  try {
    return Trajectory(std::move(knots), std::move(segs));
  } catch (const std::invalid_argument& e) {
    throw FormatError(std::string("trajectory: ") + e.what(), lineno);
  }
}

void save_trajectory(const std::filesystem::path& path, const Trajectory& traj) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  write_trajectory(out, traj);
}

Trajectory load_trajectory(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  return read_trajectory(in);
}

std::filesystem::path archive_file_name(std::uint64_t seed, std::size_t index) {
  return "traj_" + std::to_string(seed) + "_" + std::to_string(index) + ".traj";
}

void write_archive(const std::filesystem::path& dir, const std::vector<ArchiveEntry>& entries,
                   const GenerationOptions& options, const ArmModel& model) {
  std::filesystem::create_directories(dir);
  nlohmann::json files = nlohmann::json::array();
  for (const auto& e : entries) {
    const auto name = archive_file_name(e.seed, e.index);
    save_trajectory(dir / name, e.trajectory);
    files.push_back({{"index", e.index}, {"seed", e.seed}, {"file", name.string()},
                     {"duration", e.trajectory.duration()}});
  }
  nlohmann::json manifest = {
      {"format", "gapctl-archive"},
      {"version", 1},
      {"master_seed", options.master_seed},
      {"count", entries.size()},
      {"waypoints", options.waypoints},
      {"surface_choice", "uniform per waypoint"},
      {"box", {{"x_surface", options.box.x_surface}, {"y", {options.box.y_min, options.box.y_max}},
               {"z", {options.box.z_min, options.box.z_max}}}},
      {"speed_fraction", options.plan.speed_fraction},
      {"arm", model.name},
      {"trajectories", files}};
  std::ofstream out(dir / "manifest.json");
  out << manifest.dump(2) << '\n';
}

std::vector<ArchiveEntry> read_archive(const std::filesystem::path& dir) {
  std::ifstream in(dir / "manifest.json");
  if (!in) throw std::runtime_error("archive has no manifest: " + dir.string());
  nlohmann::json manifest;
  try {
    in >> manifest;
  } catch (const nlohmann::json::exception&) {
    throw FormatError("archive manifest is not JSON", 1);
  }
  std::vector<ArchiveEntry> out;
  for (const auto& f : manifest.at("trajectories")) {
    ArchiveEntry e;
    e.seed = f.at("seed").get<std::uint64_t>();
    e.index = f.at("index").get<std::size_t>();
    e.trajectory = load_trajectory(dir / f.at("file").get<std::string>());
    out.push_back(std::move(e));
  }
  return out;
}

}  // namespace gapctl
