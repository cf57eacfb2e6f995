#include "gapctl/kinematics.hpp"

#include <charconv>
#include <fstream>
#include <map>
#include <sstream>
#include <vector>

namespace gapctl {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::vector<double> parse_numbers(const std::string& text, std::size_t line) {
  std::vector<double> out;
  std::istringstream in(text);
  std::string tok;
  while (in >> tok) {
    double v = 0.0;
    const auto [ptr, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), v);
    if (ec != std::errc() || ptr != tok.data() + tok.size())
      throw FormatError("arm config: bad number '" + tok + "'", line);
    out.push_back(v);
  }
  return out;
}

std::string format_number(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

std::string join(const JointVector& v) {
  std::string s;
  for (int i = 0; i < kJoints; ++i) {
    if (i) s += ' ';
    s += format_number(v[i]);
  }
  return s;
}

}  // namespace

ArmModel ArmModel::parse(const std::string& text) {
  ArmModel m = ArmModel::ur5e();
  std::istringstream in(text);
  std::string raw;
  std::size_t line = 0;
  std::map<std::string, bool> seen;
  while (std::getline(in, raw)) {
    ++line;
    const auto hash = raw.find('#');
    const std::string content = trim(hash == std::string::npos ? raw : raw.substr(0, hash));
    if (content.empty()) continue;
    const auto eq = content.find('=');
    if (eq == std::string::npos) throw FormatError("arm config: expected 'key = value'", line);
    const std::string key = trim(content.substr(0, eq));
    const std::string value = trim(content.substr(eq + 1));
    seen[key] = true;

    if (key == "name") {
      m.name = value;
      continue;
    }
    const auto nums = parse_numbers(value, line);
    if (key.size() == 3 && key.rfind("dh", 0) == 0 && key[2] >= '0' && key[2] < '0' + kJoints) {
      if (nums.size() != 4) throw FormatError("arm config: dh row needs a d alpha offset", line);
      m.dh[key[2] - '0'] = DhRow{nums[0], nums[1], nums[2], nums[3]};
      continue;
    }
    JointVector* target = nullptr;
    if (key == "speed_limit") target = &m.speed_limit;
    else if (key == "accel_limit") target = &m.accel_limit;
    else if (key == "lower_limit") target = &m.lower_limit;
    else if (key == "upper_limit") target = &m.upper_limit;
    else throw FormatError("arm config: unknown key '" + key + "'", line);
    if (nums.size() != kJoints) throw FormatError("arm config: '" + key + "' needs 6 values", line);
    for (int i = 0; i < kJoints; ++i) (*target)[i] = nums[i];
  }
  if ((m.speed_limit.array() <= 0.0).any() || (m.accel_limit.array() <= 0.0).any())
    throw FormatError("arm config: speed and acceleration limits must be positive", line);
  return m;
}

ArmModel ArmModel::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open arm config " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  return parse(buf.str());
}

std::string ArmModel::serialize() const {
  std::ostringstream out;
  out << "# a d alpha offset per joint (standard DH), SI units\n";
  out << "name = " << name << '\n';
  for (int i = 0; i < kJoints; ++i) {
    out << "dh" << i << " = " << format_number(dh[i].a) << ' ' << format_number(dh[i].d) << ' '
        << format_number(dh[i].alpha) << ' ' << format_number(dh[i].offset) << '\n';
  }
  out << "speed_limit = " << join(speed_limit) << '\n';
  out << "accel_limit = " << join(accel_limit) << '\n';
  out << "lower_limit = " << join(lower_limit) << '\n';
  out << "upper_limit = " << join(upper_limit) << '\n';
  return out.str();
}

}  // namespace gapctl
