#pragma once

// Device certificates: daily calibration records (loop phases, squeezing
// presets and the three efficiency families), stored as JSON.

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "loopgbs/core.hpp"
#include "loopgbs/gaussian_engine.hpp"
#include "loopgbs/tdm_compiler.hpp"

namespace loopgbs {

inline constexpr std::size_t kCertificateLoops = 3;
inline constexpr std::size_t kCertificateChannels = 16;

struct DeviceCertificate {
  // Calibration metadata; older parameter listings omit these.
  std::optional<std::string> finished_at;
  std::optional<std::string> target;
  std::optional<double> schmidt_number;

  std::vector<double> loop_phases;
  double common_efficiency = 1.0;
  std::vector<double> loop_efficiencies;
  std::map<std::string, double> squeezing_parameters_mean;
  std::vector<double> relative_channel_efficiencies;

  nlohmann::json extra = nlohmann::json::object();  // unknown keys, kept for round trips

  double squeezing(const std::string& label) const {
    if (label == "off") return 0.0;
    const auto it = squeezing_parameters_mean.find(label);
    require(it != squeezing_parameters_mean.end(), ErrorKind::input, "certificate has no squeezing preset '" + label + "'");
    return it->second;
  }

  bool operator==(const DeviceCertificate&) const = default;
};

namespace detail {

inline const nlohmann::json& cert_key(const nlohmann::json& doc, const char* key) {
  const auto it = doc.find(key);
  require(it != doc.end(), ErrorKind::ingestion, std::string("certificate: missing key '") + key + "'");
  return *it;
}

inline double cert_number(const nlohmann::json& v, const std::string& key) {
  require(v.is_number(), ErrorKind::ingestion, "certificate: '" + key + "' must be a number");
  const double x = v.get<double>();
  require(std::isfinite(x), ErrorKind::ingestion, "certificate: '" + key + "' must be finite");
  return x;
}

inline std::vector<double> cert_array(const nlohmann::json& doc, const char* key, std::size_t arity) {
  const auto& v = cert_key(doc, key);
  require(v.is_array(), ErrorKind::ingestion, std::string("certificate: '") + key + "' must be a list");
  require(v.size() == arity, ErrorKind::ingestion,
          std::string("certificate: '") + key + "' needs " + std::to_string(arity) + " entries, got " +
              std::to_string(v.size()));
  std::vector<double> out;
  for (const auto& x : v) out.push_back(cert_number(x, key));
  return out;
}

inline void cert_efficiency(double v, const std::string& key) {
  require(v > 0.0 && v <= 1.0, ErrorKind::ingestion,
          "certificate: '" + key + "' value " + format_double(v) + " outside (0, 1]");
}

}  // namespace detail

inline DeviceCertificate parse_certificate(const nlohmann::json& doc) {
  require(doc.is_object(), ErrorKind::ingestion, "certificate: document must be a JSON object");
  DeviceCertificate c;
  static const char* const known[] = {"finished_at",       "target",           "loop_phases",
                                      "schmidt_number",    "common_efficiency", "loop_efficiencies",
                                      "squeezing_parameters_mean", "relative_channel_efficiencies"};
  for (const auto& [k, v] : doc.items())
    if (std::find(std::begin(known), std::end(known), k) == std::end(known)) c.extra[k] = v;

  if (doc.contains("finished_at")) {
    require(doc["finished_at"].is_string(), ErrorKind::ingestion, "certificate: 'finished_at' must be a string");
    c.finished_at = doc["finished_at"].get<std::string>();
  }
  if (doc.contains("target")) {
    require(doc["target"].is_string(), ErrorKind::ingestion, "certificate: 'target' must be a string");
    c.target = doc["target"].get<std::string>();
  }
  if (doc.contains("schmidt_number")) c.schmidt_number = detail::cert_number(doc["schmidt_number"], "schmidt_number");

  c.loop_phases = detail::cert_array(doc, "loop_phases", kCertificateLoops);
  c.common_efficiency = detail::cert_number(detail::cert_key(doc, "common_efficiency"), "common_efficiency");
  detail::cert_efficiency(c.common_efficiency, "common_efficiency");
  c.loop_efficiencies = detail::cert_array(doc, "loop_efficiencies", kCertificateLoops);
  for (double v : c.loop_efficiencies) detail::cert_efficiency(v, "loop_efficiencies");
  c.relative_channel_efficiencies = detail::cert_array(doc, "relative_channel_efficiencies", kCertificateChannels);
  for (double v : c.relative_channel_efficiencies) detail::cert_efficiency(v, "relative_channel_efficiencies");

  const auto& sq = detail::cert_key(doc, "squeezing_parameters_mean");
  require(sq.is_object(), ErrorKind::ingestion, "certificate: 'squeezing_parameters_mean' must be a map");
  for (const auto& [label, v] : sq.items()) {
    const double s = detail::cert_number(v, "squeezing_parameters_mean");
    require(s >= 0.0, ErrorKind::ingestion, "certificate: 'squeezing_parameters_mean' values must be non-negative");
    c.squeezing_parameters_mean[label] = s;
  }
  require(c.squeezing_parameters_mean.count("low") == 1, ErrorKind::ingestion,
          "certificate: 'squeezing_parameters_mean' must contain 'low'");
  return c;
}

inline nlohmann::json certificate_to_json(const DeviceCertificate& c) {
  nlohmann::json j = c.extra;
  if (c.finished_at) j["finished_at"] = *c.finished_at;
  if (c.target) j["target"] = *c.target;
  j["loop_phases"] = c.loop_phases;
  if (c.schmidt_number) j["schmidt_number"] = *c.schmidt_number;
  j["common_efficiency"] = c.common_efficiency;
  j["loop_efficiencies"] = c.loop_efficiencies;
  j["squeezing_parameters_mean"] = c.squeezing_parameters_mean;
  j["relative_channel_efficiencies"] = c.relative_channel_efficiencies;
  return j;
}

inline DeviceCertificate parse_certificate_text(const std::string& text) {
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::ingestion, std::string("certificate: malformed JSON: ") + e.what());
  }
  return parse_certificate(doc);
}

inline DeviceCertificate load_certificate(const std::string& path) {
  std::ifstream in(path);
  require(static_cast<bool>(in), ErrorKind::ingestion, "cannot open certificate " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_certificate_text(ss.str());
}

inline void save_certificate(const DeviceCertificate& c, const std::string& path) {
  std::ofstream out(path);
  require(static_cast<bool>(out), ErrorKind::input, "cannot write " + path);
  out << certificate_to_json(c).dump(2) << '\n';
}

inline std::string certificate_id(const DeviceCertificate& c) {
  return hex64(fnv1a(certificate_to_json(c).dump()));
}

/// Single-traversal efficiency of every logical mode:
/// common × ∏ loops × channel[mode mod 16].
inline std::vector<double> effective_efficiencies(const DeviceCertificate& c, const CircuitProgram& program) {
  double base = c.common_efficiency;
  for (double v : c.loop_efficiencies) base *= v;
  std::vector<double> eta(static_cast<std::size_t>(program.n_logical_modes));
  for (std::size_t i = 0; i < eta.size(); ++i) eta[i] = base * c.relative_channel_efficiencies[i % kCertificateChannels];
  return eta;
}

inline LossModel loss_model(const DeviceCertificate& c) {
  LossModel m;
  m.common_efficiency = c.common_efficiency;
  m.loop_efficiencies = c.loop_efficiencies;
  m.channel_efficiencies = c.relative_channel_efficiencies;
  return m;
}

/// Copies the certificate's static loop phases (wrapped to (-π, π]) into the program.
inline CircuitProgram with_certificate_phases(CircuitProgram p, const DeviceCertificate& c) {
  require(p.loops.loop_count() == c.loop_phases.size(), ErrorKind::input,
          "program loop count does not match the certificate");
  p.loops.static_phases.clear();
  for (double phi : c.loop_phases) p.loops.static_phases.push_back(wrap_phase(phi));
  return p;
}

}  // namespace loopgbs
