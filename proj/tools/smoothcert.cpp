// smoothcert: certify datasets, print bound curves, generate synthetic data.
//
// Exit codes: 0 ok, 2 configuration/usage error, 3 oracle failure, 4 I/O error.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <memory>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <CLI11.hpp>

#include "smoothcert/smoothcert.hpp"

namespace sc = smoothcert;

namespace {

constexpr int kExitConfig = 2;
constexpr int kExitOracle = 3;
constexpr int kExitIo = 4;

const std::map<std::string, std::vector<double>> kSigmaProfiles = {
    {"low", {0.18, 0.36}},
    {"high", {0.25, 0.50}},
};

std::size_t worker_count() {
  std::size_t n = 0;
  if (const char* env = std::getenv("SMOOTHCERT_THREADS")) {
    try {
      n = std::stoul(env);
    } catch (const std::exception&) {
      throw sc::ConfigError(std::string("SMOOTHCERT_THREADS is not a number: ") + env);
    }
  }
  if (n == 0) n = std::max(1u, std::thread::hardware_concurrency());
  return n;
}

std::vector<double> parse_grid(const std::string& text) {
  std::vector<double> grid;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      std::size_t used = 0;
      grid.push_back(std::stod(item, &used));
      if (used != item.size()) throw std::invalid_argument(item);
    } catch (const std::exception&) {
      throw sc::ConfigError("bad radius grid entry '" + item + "'");
    }
  }
  if (grid.empty()) throw sc::ConfigError("radius grid is empty");
  return grid;
}

// linear:PATH | centroid:PATH | constant:CLASSES:LABEL | exec:CMD | tcp:HOST:PORT
std::shared_ptr<sc::VoteOracle> make_oracle(const std::string& spec, std::size_t dim) {
  const auto colon = spec.find(':');
  if (colon == std::string::npos) throw sc::ConfigError("oracle spec needs KIND:ARG: " + spec);
  const std::string kind = spec.substr(0, colon);
  const std::string arg = spec.substr(colon + 1);
  if (kind == "linear") return std::make_shared<sc::LinearOracle>(sc::read_linear_model(arg));
  if (kind == "centroid") {
    auto m = sc::read_centroids(arg);
    return std::make_shared<sc::NearestCentroidOracle>(m.classes, m.dim, std::move(m.centroids));
  }
  if (kind == "constant") {
    const auto sep = arg.find(':');
    if (sep == std::string::npos) throw sc::ConfigError("constant oracle needs CLASSES:LABEL");
    return std::make_shared<sc::ConstantOracle>(std::stoul(arg.substr(0, sep)), dim,
                                                std::stoi(arg.substr(sep + 1)));
  }
  if (kind == "exec") {
    auto ep = sc::OracleEndpoint::exec(arg);
    ep.expected_dim = dim;
    return sc::external_oracle(ep);
  }
  if (kind == "tcp") {
    const auto sep = arg.rfind(':');
    if (sep == std::string::npos) throw sc::ConfigError("tcp oracle needs HOST:PORT");
    const unsigned long port = std::stoul(arg.substr(sep + 1));
    if (port == 0 || port > 65535) throw sc::ConfigError("tcp port out of range");
    auto ep = sc::OracleEndpoint::tcp(arg.substr(0, sep), static_cast<std::uint16_t>(port));
    ep.expected_dim = dim;
    return sc::external_oracle(ep);
  }
  throw sc::ConfigError("unknown oracle kind '" + kind + "'");
}

std::shared_ptr<sc::VoteOracle> make_oracles(const std::vector<std::string>& specs,
                                             std::size_t dim) {
  if (specs.size() == 1) return make_oracle(specs.front(), dim);
  std::vector<std::shared_ptr<sc::VoteOracle>> members;
  for (const auto& s : specs) members.push_back(make_oracle(s, dim));
  return sc::ensemble_oracle(std::move(members));
}

std::filesystem::path with_sigma_suffix(const std::filesystem::path& out, double sigma) {
  std::filesystem::path p = out;
  p.replace_filename(out.stem().string() + ".sigma" + sc::format_double(sigma) +
                     out.extension().string());
  return p;
}

struct CertifyArgs {
  std::string mode = "drs";
  double sigma = 0.0;
  double sigma_l = 0.0;
  double sigma_r = 0.0;
  std::string profile;
  std::int64_t n0 = 100;
  std::int64_t n = 100'000;
  double alpha = 0.001;
  std::uint64_t seed = 0;
  std::size_t stride = 1;
  std::size_t batch = 1000;
  std::string dataset;
  std::vector<std::string> oracle;
  std::vector<std::string> oracle_right;
  std::string out;
  std::string interp = "bilinear";
  std::string grid = "0,0.25,0.5,0.75,1,1.25,1.5,1.75,2";
  bool timing = false;
};

int run_certify(const CertifyArgs& a, const CLI::App& cmd) {
  sc::EvaluationOptions eval;
  if (a.mode == "rs") eval.mode = sc::SmoothingMode::rs;
  else if (a.mode == "drs") eval.mode = sc::SmoothingMode::drs;
  else eval.mode = sc::SmoothingMode::drs_asym;
  eval.stride = a.stride;
  eval.record_timing = a.timing;

  std::vector<double> sigmas;
  double sigma_right = 0.0;
  if (eval.mode == sc::SmoothingMode::drs_asym) {
    if (!(a.sigma_l > 0.0) || !(a.sigma_r > 0.0)) {
      std::cerr << "error: --mode drs-asym needs --sigma-l and --sigma-r\n" << cmd.help();
      return kExitConfig;
    }
    sigmas = {a.sigma_l};
    sigma_right = a.sigma_r;
  } else if (!a.profile.empty()) {
    sigmas = kSigmaProfiles.at(a.profile);
  } else if (a.sigma > 0.0) {
    sigmas = {a.sigma};
  } else {
    std::cerr << "error: --sigma (or --sigma-profile) is required\n" << cmd.help();
    return kExitConfig;
  }

  const sc::Dataset ds = sc::read_dataset(a.dataset);
  const std::size_t dim = ds.shape.size();
  const std::size_t workers = worker_count();
  auto left_root = make_oracles(a.oracle, dim);
  auto right_root = a.oracle_right.empty() ? left_root : make_oracles(a.oracle_right, dim);
  sc::OraclePool left(left_root, workers);
  sc::OraclePool right(right_root, workers);
  const auto grid = parse_grid(a.grid);

  for (double sigma : sigmas) {
    sc::CertifyParams p;
    p.sigma = sigma;
    p.sigma_right = sigma_right;
    p.n0 = a.n0;
    p.n = a.n;
    p.alpha = a.alpha;
    p.seed = a.seed;
    p.interp = a.interp == "nearest" ? sc::Interpolation::nearest : sc::Interpolation::bilinear;
    p.batch_size = a.batch;
    const auto rows = sc::evaluate_dataset(left, right, ds, p, eval);
    const auto summary = sc::summarize(rows, grid);
    sc::ReportParams rp{p, eval, a.dataset, a.oracle.front(), a.profile};
    const std::filesystem::path out =
        sigmas.size() > 1 ? with_sigma_suffix(a.out, sigma) : std::filesystem::path(a.out);
    sc::write_report(rows, summary, rp, out);
    std::cerr << "sigma " << sigma << ": " << rows.size() << " samples, ACR "
              << summary.acr << ", abstain rate " << summary.abstain_rate << " -> " << out.string()
              << '\n';
  }
  return 0;
}

struct BoundsArgs {
  std::string d_range = "2:4096:2";
  double p = 0.999;
  std::string sigma_rule = "one-over-sqrt-d";
  std::string out;
};

int run_bounds(const BoundsArgs& a) {
  std::int64_t lo = 0, hi = 0, step = 0;
  {
    char c1 = 0, c2 = 0;
    std::istringstream ss(a.d_range);
    if (!(ss >> lo >> c1 >> hi >> c2 >> step) || c1 != ':' || c2 != ':' || !ss.eof()) {
      throw sc::ConfigError("--d-range must look like START:STOP:STEP");
    }
  }
  double fixed = 0.0;
  if (a.sigma_rule.rfind("fixed:", 0) == 0) {
    try {
      fixed = std::stod(a.sigma_rule.substr(6));
    } catch (const std::exception&) {
      throw sc::ConfigError("bad --sigma-rule value");
    }
    if (!(fixed > 0.0)) throw sc::ConfigError("fixed sigma must be positive");
  } else if (a.sigma_rule != "one-over-sqrt-d") {
    throw sc::ConfigError("--sigma-rule must be one-over-sqrt-d or fixed:VALUE");
  }
  if (!(a.p > 0.0 && a.p < 1.0)) throw sc::ConfigError("--p must lie in (0,1)");
  const auto pts = sc::bound_curve(lo, hi, step, a.p, fixed);
  if (a.out.empty()) {
    sc::write_bound_curve_csv(std::cout, pts);
  } else {
    std::ofstream f(a.out, std::ios::trunc);
    if (!f) throw sc::IoError("cannot write " + a.out);
    sc::write_bound_curve_csv(f, pts);
    if (!f) throw sc::IoError("short write to " + a.out);
  }
  return 0;
}

struct SynthArgs {
  std::string kind = "linear-margin";
  std::size_t d = 32;
  std::size_t classes = 2;
  std::size_t count = 100;
  std::uint64_t seed = 0;
  std::string out;
};

// C = 1 and H x W with H the largest divisor of d not above sqrt(d).
sc::Shape3 shape_for(std::size_t d) {
  std::size_t h = 1;
  for (std::size_t k = 1; k * k <= d; ++k) {
    if (d % k == 0) h = k;
  }
  return {1, h, d / h};
}

int run_gen_synthetic(const SynthArgs& a) {
  if (a.count == 0) throw sc::ConfigError("--count must be positive");
  if (a.d == 0) throw sc::ConfigError("--d must be positive");
  if (a.classes < 2 || a.classes > 65535) throw sc::ConfigError("--classes must be in [2, 65535]");
  sc::RandomStream model_rng(a.seed, 0);
  sc::RandomStream point_rng(a.seed, 1);
  sc::Dataset ds;
  ds.shape = shape_for(a.d);
  ds.data.reserve(a.count * a.d);
  std::vector<double> x(a.d);

  if (a.kind == "linear-margin") {
    // Rows w_k ~ N(0, I/d); biases put every boundary through the centre of
    // the unit cube. Labels are the model's own clean predictions.
    sc::LinearModel m;
    m.classes = a.classes;
    m.dim = a.d;
    m.weights.resize(a.classes * a.d);
    model_rng.fill_standard_normal(m.weights);
    const double scale = 1.0 / std::sqrt(static_cast<double>(a.d));
    m.bias.assign(a.classes, 0.0);
    for (std::size_t k = 0; k < a.classes; ++k) {
      for (std::size_t j = 0; j < a.d; ++j) {
        m.weights[k * a.d + j] *= scale;
        m.bias[k] -= 0.5 * m.weights[k * a.d + j];
      }
    }
    for (std::size_t i = 0; i < a.count; ++i) {
      for (double& v : x) v = static_cast<float>(point_rng.next_uniform());
      for (double v : x) ds.data.push_back(static_cast<float>(v));
      ds.labels.push_back(static_cast<std::uint16_t>(sc::linear_classify_batch(m, x).front()));
    }
    sc::write_linear_model(m, a.out + ".model");
  } else if (a.kind == "gaussian-blobs") {
    // Centroids uniform in [0.2, 0.8]^d, points = centroid + N(0, 0.1^2)
    // clipped to [0, 1]; labels are the generating blob.
    sc::CentroidModel m{a.classes, a.d, std::vector<double>(a.classes * a.d)};
    for (double& c : m.centroids) c = 0.2 + 0.6 * model_rng.next_uniform();
    for (std::size_t i = 0; i < a.count; ++i) {
      const std::size_t k = i % a.classes;
      point_rng.fill_standard_normal(x);
      for (std::size_t j = 0; j < a.d; ++j) {
        ds.data.push_back(static_cast<float>(std::clamp(m.centroids[k * a.d + j] + 0.1 * x[j], 0.0, 1.0)));
      }
      ds.labels.push_back(static_cast<std::uint16_t>(k));
    }
    sc::write_centroids(m, a.out + ".model");
  } else {
    throw sc::ConfigError("--kind must be gaussian-blobs or linear-margin");
  }
  sc::write_dataset(ds, a.out);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Randomized / dual randomized smoothing certification"};
  app.require_subcommand(1);

  CertifyArgs ca;
  auto* certify = app.add_subcommand("certify", "certify every stride-th sample of a dataset");
  certify->add_option("--mode", ca.mode)->check(CLI::IsMember({"rs", "drs", "drs-asym"}));
  certify->add_option("--sigma", ca.sigma, "noise level");
  certify->add_option("--sigma-l", ca.sigma_l, "left-branch noise (drs-asym)");
  certify->add_option("--sigma-r", ca.sigma_r, "right-branch noise (drs-asym)");
  certify->add_option("--sigma-profile", ca.profile, "run each sigma of a preset: low={0.18,0.36}, high={0.25,0.50}")
      ->check(CLI::IsMember({"low", "high"}));
  certify->add_option("--n0", ca.n0, "selection samples")->check(CLI::PositiveNumber);
  certify->add_option("--n", ca.n, "estimation samples")->check(CLI::PositiveNumber);
  certify->add_option("--alpha", ca.alpha)->check(CLI::Range(0.0, 1.0));
  certify->add_option("--seed", ca.seed);
  certify->add_option("--stride", ca.stride)->check(CLI::PositiveNumber);
  certify->add_option("--batch", ca.batch, "oracle batch size")->check(CLI::PositiveNumber);
  certify->add_option("--dataset", ca.dataset)->required();
  certify->add_option("--oracle", ca.oracle,
                      "linear:PATH | centroid:PATH | constant:CLASSES:LABEL | exec:CMD | "
                      "tcp:HOST:PORT; repeat to vote with an ensemble")
      ->required();
  certify->add_option("--oracle-right", ca.oracle_right, "separate right-branch oracle");
  certify->add_option("--out", ca.out, "certificate CSV; the summary goes to *.summary.json")
      ->required();
  certify->add_option("--interp", ca.interp)->check(CLI::IsMember({"bilinear", "nearest"}));
  certify->add_option("--radius-grid", ca.grid);
  certify->add_flag("--record-timing", ca.timing, "fill wall_ms (breaks byte-identical reruns)");

  BoundsArgs ba;
  auto* bounds = app.add_subcommand("bounds", "radius upper-bound curve as CSV");
  bounds->add_option("--d-range", ba.d_range);
  bounds->add_option("--p", ba.p);
  bounds->add_option("--sigma-rule", ba.sigma_rule);
  bounds->add_option("--out", ba.out, "CSV path (default stdout)");

  SynthArgs sa;
  auto* synth = app.add_subcommand("gen-synthetic", "write a synthetic dataset and its model");
  synth->add_option("--kind", sa.kind)->check(CLI::IsMember({"gaussian-blobs", "linear-margin"}));
  synth->add_option("--d", sa.d);
  synth->add_option("--classes", sa.classes);
  synth->add_option("--count", sa.count);
  synth->add_option("--seed", sa.seed);
  synth->add_option("--out", sa.out)->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : kExitConfig;
  }

  try {
    if (certify->parsed()) return run_certify(ca, *certify);
    if (bounds->parsed()) return run_bounds(ba);
    return run_gen_synthetic(sa);
  } catch (const sc::OracleError& e) {
    std::cerr << "oracle error: " << e.what() << '\n';
    return kExitOracle;
  } catch (const sc::IoError& e) {
    std::cerr << "i/o error: " << e.what() << '\n';
    return kExitIo;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitConfig;
  }
}
