// loopgbs: command-line front end for compiling loop programs, sampling,
// orbit/correlator extraction and validation reports.

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "loopgbs/certificate.hpp"
#include "loopgbs/orbits.hpp"
#include "loopgbs/samplers.hpp"
#include "loopgbs/tdm_compiler.hpp"
#include "loopgbs/validation.hpp"

namespace fs = std::filesystem;
using namespace loopgbs;
using nlohmann::json;

namespace {

std::string cell(const json& v) {
  if (!v.is_number()) return "-";
  std::ostringstream os;
  os << std::fixed << std::setprecision(4) << v.get<double>();
  return os.str();
}

constexpr int kExitInput = 2;
constexpr int kExitResource = 3;

struct ProgramArgs {
  std::string path;
  bool random = false;
  std::optional<std::uint64_t> seed;
  int modes = 216;
  int fill = 43;

  void add(CLI::App* app) {
    app->add_option("--program", path, "circuit program JSON");
    app->add_flag("--random-program", random,
                  "random program: transmissivities in [0.4, 0.6], phases in [-pi/2, pi/2]");
    app->add_option("--program-seed", seed, "seed of the random program (defaults to --seed)");
    app->add_option("--modes", modes, "logical modes of a random program")->check(CLI::PositiveNumber);
    app->add_option("--fill", fill, "fill modes of a random program")->check(CLI::NonNegativeNumber);
  }

  CircuitProgram load(std::uint64_t run_seed) const {
    require(path.empty() != !random, ErrorKind::input, "give exactly one of --program or --random-program");
    if (!path.empty()) return load_program(path);
    return random_program(LoopSpec{}, modes, fill, seed.value_or(run_seed));
  }
};

void write_text(const fs::path& p, const std::string& text) {
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  std::ofstream out(p);
  require(static_cast<bool>(out), ErrorKind::input, "cannot write " + p.string());
  out << text;
}

json run_metadata(const std::string& command, std::uint64_t seed) {
  return {{"command", command}, {"tool_version", std::string(kToolVersion)}, {"seed", seed}};
}

std::string samples_hash(const SampleSet& s) {
  return hex64(fnv1a(std::string_view(reinterpret_cast<const char*>(s.counts.data()), s.counts.size())));
}

LossModel loss_for(const DeviceCertificate& cert, std::optional<double> common, const std::vector<int>& off) {
  LossModel loss = loss_model(cert);
  if (common) loss.common_efficiency = *common;
  loss.disabled_detectors = off;
  loss.validate();
  return loss;
}

// ---------------------------------------------------------------------------

struct CompileCmd {
  ProgramArgs program;
  std::uint64_t seed = 0;
  std::string out = ".";

  int run() const {
    const auto p = program.load(seed);
    const auto logical = truncate_to_logical(compile_unitary(p), p);
    const fs::path dir(out);
    fs::create_directories(dir);
    std::ostringstream m;
    write_matrix_csv(m, logical.entries);
    write_text(dir / "transfer.csv", m.str());
    std::ostringstream prof;
    prof << "offset,mean_abs\n";
    const auto profile = connectivity_profile(logical);
    for (std::size_t k = 0; k < profile.size(); ++k) prof << k << ',' << format_double(profile[k]) << '\n';
    write_text(dir / "profile.csv", prof.str());
    save_program(p, (dir / "program.json").string());
    json meta = run_metadata("compile", seed);
    meta["program_hash"] = program_hash(p);
    meta["n_logical_modes"] = p.n_logical_modes;
    meta["n_physical_modes"] = p.n_physical_modes;
    meta["lossless"] = logical.lossless;
    meta["acausal_magnitude"] = acausal_magnitude(logical.entries);
    write_text(dir / "run.json", meta.dump(2) + "\n");
    std::cout << "compiled " << p.n_logical_modes << " logical modes, program " << program_hash(p) << " -> "
              << dir.string() << "\n";
    return 0;
  }
};

struct SampleCmd {
  ProgramArgs program;
  std::string hypothesis = "thermal";
  std::string certificate;
  std::string squeezing = "low";
  std::uint64_t seed = 0;
  std::size_t shots = 1000;
  int pnr_cutoff = kDefaultPnrCutoff;
  unsigned threads = 1;
  std::optional<double> common_efficiency;
  std::vector<int> detector_off;
  std::string out = "samples.csv";
  std::string save_program_path;

  int run() const {
    require(!certificate.empty(), ErrorKind::input, "--certificate is required");
    const auto cert = load_certificate(certificate);
    const auto p = with_certificate_phases(program.load(seed), cert);
    const auto loss = loss_for(cert, common_efficiency, detector_off);
    const double s = cert.squeezing(squeezing);
    SamplerOptions o;
    o.shots = shots;
    o.seed = seed;
    o.pnr_cutoff = pnr_cutoff;
    o.threads = std::max(1u, threads);
    o.certificate_id = certificate_id(cert);
    o.program_hash = program_hash(p);
    const Hypothesis h = hypothesis_from_string(hypothesis);
    SampleSet set;
    switch (h) {
      case Hypothesis::smsv:
        set = sample_smsv_bruteforce(p, loss, s, o);
        break;
      case Hypothesis::distinguishable:
        set = sample_distinguishable(p, loss, s, o);
        break;
      case Hypothesis::thermal:
        set = sample_classical(InputKind::thermal, p, loss, s, o);
        break;
      case Hypothesis::coherent:
        set = sample_classical(InputKind::coherent, p, loss, s, o);
        break;
      case Hypothesis::squashed:
        set = sample_classical(InputKind::squashed, p, loss, s, o);
        break;
    }
    set.meta.extra["squeezing_label"] = squeezing;
    set.meta.extra["common_efficiency"] = format_double(loss.common_efficiency);
    std::string off;
    for (int d : detector_off) off += (off.empty() ? "" : " ") + std::to_string(d);
    set.meta.extra["detector_off"] = off.empty() ? "none" : off;
    if (program.random) set.meta.extra["program_seed"] = std::to_string(program.seed.value_or(seed));
    save_samples(set, out);
    if (!save_program_path.empty()) save_program(p, save_program_path);
    double mean = 0.0;
    for (std::size_t i = 0; i < set.shots(); ++i) mean += set.total(i);
    std::cout << set.shots() << " " << hypothesis << " shots on " << set.modes << " modes, mean photons "
              << format_double(mean / static_cast<double>(set.shots())) << " -> " << out << "\n";
    return 0;
  }
};

struct OrbitsCmd {
  std::string samples;
  int n_min = 18;
  int n_max = 32;
  std::size_t min_support = kMinFeatureSupport;
  int pool_width = 1;
  std::vector<int> histogram_n;
  std::string out = ".";

  int run() const {
    const auto set = load_samples(samples);
    FeatureOptions fo;
    fo.min_support = min_support;
    fo.pool_width = pool_width;
    const auto fv = feature_vectors(set, n_min, n_max, fo);
    const fs::path dir(out);
    fs::create_directories(dir);
    std::ostringstream f;
    write_feature_csv(f, fv);
    write_text(dir / "features.csv", f.str());
    for (int n : histogram_n) {
      std::ostringstream h;
      write_histogram_csv(h, orbit_histogram(set, n));
      write_text(dir / ("orbits_n" + std::to_string(n) + ".csv"), h.str());
    }
    json meta = run_metadata("orbits", set.meta.seed);
    meta["samples_hash"] = samples_hash(set);
    meta["program_hash"] = set.meta.program_hash;
    meta["certificate_id"] = set.meta.certificate_id;
    meta["n_min"] = n_min;
    meta["n_max"] = n_max;
    meta["min_support"] = min_support;
    meta["pool_width"] = pool_width;
    write_text(dir / "run.json", meta.dump(2) + "\n");
    std::cout << fv.size() << " feature vectors -> " << (dir / "features.csv").string() << "\n";
    return 0;
  }
};

struct CorrelatorsCmd {
  std::string samples;
  ProgramArgs program;
  std::string certificate;
  std::string squeezing = "low";
  int resamples = 10;
  std::string out = ".";

  int run() const {
    const auto set = load_samples(samples);
    const fs::path dir(out);
    fs::create_directories(dir);
    const MatrixXd c = sample_photon_covariance(set);
    std::ostringstream grid;
    write_covariance_grid(grid, c);
    write_text(dir / "covariance_samples.dat", grid.str());
    json meta = run_metadata("correlators", set.meta.seed);
    meta["samples_hash"] = samples_hash(set);
    if (resamples >= 2) meta["noise_floor"] = covariance_noise_floor(set, resamples, set.meta.seed);
    if (!certificate.empty()) {
      const auto cert = load_certificate(certificate);
      const auto p = with_certificate_phases(program.load(set.meta.seed), cert);
      require(p.n_logical_modes == set.modes, ErrorKind::input, "program and sample set differ in mode count");
      const auto circuit = effective_circuit(p, loss_model(cert));
      const double s = cert.squeezing(squeezing);
      json d = json::object();
      for (Hypothesis h : {Hypothesis::smsv, Hypothesis::thermal, Hypothesis::squashed, Hypothesis::coherent,
                           Hypothesis::distinguishable}) {
        const MatrixXd a = analytic_photon_covariance(h, circuit, s);
        const auto dist = covariance_distance(c, a);
        d[to_string(h)] = {{"frobenius", dist.frobenius}, {"pearson", detail::num(dist.pearson)}};
        std::ostringstream g;
        write_covariance_grid(g, a);
        write_text(dir / (std::string("covariance_") + to_string(h) + ".dat"), g.str());
      }
      meta["program_hash"] = program_hash(p);
      meta["certificate_id"] = certificate_id(cert);
      meta["distance_to_analytic"] = d;
    }
    write_text(dir / "correlators.json", meta.dump(2) + "\n");
    std::cout << "covariance of " << set.modes << " modes from " << set.shots() << " shots -> " << dir.string()
              << "\n";
    return 0;
  }
};

struct ValidateCmd {
  std::string samples;
  ProgramArgs program;
  std::string certificate;
  ValidationConfig cfg;
  std::vector<std::string> hypotheses;
  std::string out = "validation";

  int run() {
    require(!certificate.empty(), ErrorKind::input, "--certificate is required");
    const auto cert = load_certificate(certificate);
    const auto set = load_samples(samples);
    const auto p = program.load(set.meta.seed);
    if (!hypotheses.empty()) {
      cfg.hypotheses.clear();
      for (const auto& h : hypotheses) cfg.hypotheses.push_back(hypothesis_from_string(h));
    }
    const auto report = validate(set, p, cert, cfg);
    write_report(report, out);
    std::cout << "verdict: " << (report.ranking.empty() ? "none" : to_string(report.ranking.front()))
              << "  ranking:";
    for (Hypothesis h : report.ranking) std::cout << ' ' << to_string(h);
    std::cout << "\nreport -> " << (fs::path(out) / "report.json").string() << "\n";
    for (const auto& w : report.warnings) std::cerr << "warning: " << w << "\n";
    return 0;
  }
};

struct ReportCmd {
  std::string path = "validation";

  int run() const {
    fs::path p(path);
    if (fs::is_directory(p)) p /= "report.json";
    std::ifstream in(p);
    require(static_cast<bool>(in), ErrorKind::input, "cannot open report " + p.string());
    json r;
    try {
      r = json::parse(in);
    } catch (const json::exception& e) {
      fail(ErrorKind::ingestion, std::string("malformed report: ") + e.what());
    }
    require(r.contains("hypotheses") && r.contains("ranking"), ErrorKind::ingestion, "not a validation report");
    std::cout << "loopgbs " << r.value("tool_version", "?") << "  seed " << r.value("seed", 0ULL) << "  program "
              << r.value("program_hash", "?") << "  certificate " << r.value("certificate_id", "?") << "\n";
    std::cout << "samples: " << r.value("shots", 0ULL) << " shots, " << r.value("modes", 0) << " modes, mean photons "
              << r["samples"].value("mean_photons", 0.0) << "\n";
    if (r.contains("sample_plane_test"))
      std::cout << "thermal plane: mean residual " << cell(r["sample_plane_test"]["mean_residual_z"]) << " sigma"
                << (r.value("off_hyperplane", false) ? " (OFF hyperplane)" : "") << "\n";
    std::cout << "noise floor: " << cell(r["covariance_noise_floor"]) << "\n";
    std::cout << "hypothesis        plane  spread-ratio  cov-distance  pearson\n";
    for (const auto& h : r["hypotheses"]) {
      std::cout << std::left << std::setw(18) << h["hypothesis"].get<std::string>() << std::setw(7)
                << (h.value("plane_pass", false) ? "pass" : "fail") << std::setw(14) << cell(h["spread_ratio"])
                << std::setw(14) << cell(h["covariance_distance"]["frobenius"])
                << cell(h["covariance_distance"]["pearson"]) << "\n";
    }
    std::cout << "verdict: " << r.value("verdict", "none") << "\n";
    return 0;
  }
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"loopgbs: loop-based Gaussian boson sampling simulator and validation toolkit"};
  app.set_version_flag("--version", std::string(kToolVersion));
  app.require_subcommand(1);

  CompileCmd compile;
  auto* c = app.add_subcommand("compile", "compile a loop program to its transfer matrix");
  compile.program.add(c);
  c->add_option("--seed", compile.seed, "seed for --random-program");
  c->add_option("--out", compile.out, "output directory");

  SampleCmd sample;
  auto* s = app.add_subcommand("sample", "draw samples under one hypothesis");
  sample.program.add(s);
  s->add_option("--hypothesis", sample.hypothesis)
      ->check(CLI::IsMember({"smsv", "thermal", "coherent", "squashed", "distinguishable"}));
  s->add_option("--certificate", sample.certificate, "device certificate JSON")->required();
  s->add_option("--squeezing", sample.squeezing)->check(CLI::IsMember({"low", "medium", "high", "off"}));
  s->add_option("--seed", sample.seed);
  s->add_option("--shots", sample.shots)->check(CLI::PositiveNumber);
  s->add_option("--pnr-cutoff", sample.pnr_cutoff)->check(CLI::Range(1, 255));
  s->add_option("--threads", sample.threads)->check(CLI::PositiveNumber);
  s->add_option("--common-efficiency", sample.common_efficiency, "override the certificate's common efficiency")
      ->check(CLI::Range(0.0, 1.0));
  s->add_option("--detector-off", sample.detector_off, "detectors to disable")->check(CLI::Range(0, 15));
  s->add_option("--out", sample.out, "sample file");
  s->add_option("--save-program", sample.save_program_path, "also write the program used");

  OrbitsCmd orbits;
  auto* o = app.add_subcommand("orbits", "feature vectors and orbit histograms of a sample file");
  o->add_option("--samples", orbits.samples)->required();
  o->add_option("--n-min", orbits.n_min);
  o->add_option("--n-max", orbits.n_max);
  o->add_option("--min-support", orbits.min_support);
  o->add_option("--pool-width", orbits.pool_width)->check(CLI::PositiveNumber);
  o->add_option("--histogram-n", orbits.histogram_n, "photon numbers to write full orbit histograms for");
  o->add_option("--out", orbits.out, "output directory");

  CorrelatorsCmd corr;
  auto* k = app.add_subcommand("correlators", "two-point correlators of a sample file");
  k->add_option("--samples", corr.samples)->required();
  corr.program.add(k);
  k->add_option("--certificate", corr.certificate, "compare against analytic covariances");
  k->add_option("--squeezing", corr.squeezing)->check(CLI::IsMember({"low", "medium", "high", "off"}));
  k->add_option("--resamples", corr.resamples, "bootstrap resamples for the noise floor (0 disables)");
  k->add_option("--out", corr.out, "output directory");

  ValidateCmd val;
  auto* v = app.add_subcommand("validate", "rank hypotheses for a sample file");
  v->add_option("--samples", val.samples)->required();
  val.program.add(v);
  v->add_option("--certificate", val.certificate, "device certificate JSON");
  v->add_option("--seed", val.cfg.seed);
  v->add_option("--shots", val.cfg.shots, "shots per simulated hypothesis (default: as many as the samples)");
  v->add_option("--squeezing", val.cfg.squeezing_label)->check(CLI::IsMember({"low", "medium", "high", "off"}));
  v->add_option("--hypothesis", val.hypotheses, "hypotheses to test")
      ->check(CLI::IsMember({"smsv", "thermal", "coherent", "squashed", "distinguishable"}));
  v->add_option("--n-min", val.cfg.n_min);
  v->add_option("--n-max", val.cfg.n_max);
  v->add_option("--pnr-cutoff", val.cfg.pnr_cutoff)->check(CLI::Range(1, 255));
  v->add_option("--threads", val.cfg.threads)->check(CLI::PositiveNumber);
  v->add_option("--resamples", val.cfg.bootstrap_resamples, "bootstrap resamples");
  v->add_option("--covariance-resamples", val.cfg.covariance_resamples);
  v->add_option("--sigma", val.cfg.sigma_threshold, "test threshold in bootstrap sigma");
  v->add_option("--spread-factor", val.cfg.spread_factor);
  v->add_option("--min-support", val.cfg.features.min_support);
  v->add_option("--out", val.out, "report directory");

  ReportCmd report;
  auto* r = app.add_subcommand("report", "summarize a validation report");
  r->add_option("path", report.path, "report directory or report.json");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitInput;
  }

  try {
    if (*c) return compile.run();
    if (*s) return sample.run();
    if (*o) return orbits.run();
    if (*k) return corr.run();
    if (*v) return val.run();
    if (*r) return report.run();
  } catch (const Error& e) {
    std::cerr << "loopgbs: " << e.what() << "\n";
    return e.kind() == ErrorKind::resource ? kExitResource : kExitInput;
  } catch (const std::exception& e) {
    std::cerr << "loopgbs: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
