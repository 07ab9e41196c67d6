#pragma once

// Certificate CSV, summary JSON and bound-curve CSV.

#include <charconv>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "smoothcert/evaluate.hpp"
#include "smoothcert/radius.hpp"

namespace smoothcert {

inline constexpr std::string_view kCertificateCsvHeader =
    "index,label,prediction,abstain,radius,p_lower_left,p_lower_right,sigma,n0,n,alpha,seed,wall_ms";

/// Shortest decimal text that parses back to the same double.
inline std::string format_double(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

namespace detail {

template <typename T>
T parse_field(std::string_view text, const char* name) {
  T v{};
  const auto res = std::from_chars(text.data(), text.data() + text.size(), v);
  if (res.ec != std::errc() || res.ptr != text.data() + text.size()) {
    throw IoError(std::string("bad ") + name + " field: '" + std::string(text) + "'");
  }
  return v;
}

}  // namespace detail

inline void write_certificates_csv(std::ostream& out, const std::vector<CertificateRow>& rows) {
  out << kCertificateCsvHeader << '\n';
  for (const auto& r : rows) {
    const Certificate& c = r.cert;
    out << r.index << ',' << r.label << ',' << c.prediction << ',' << (c.abstained() ? 1 : 0)
        << ',' << format_double(c.radius) << ',' << format_double(c.p_lower_left) << ','
        << format_double(c.p_lower_right) << ',' << format_double(c.sigma) << ',' << c.n0 << ','
        << c.n << ',' << format_double(c.alpha) << ',' << c.seed << ','
        << format_double(r.wall_ms) << '\n';
  }
}

/// Parses CSV written by write_certificates_csv. Fields the CSV does not carry
/// (mode, right sigma, runner-up, clamp flags) are taken from `defaults`.
inline std::vector<CertificateRow> parse_certificates_csv(std::istream& in,
                                                          const Certificate& defaults = {}) {
  std::string line;
  if (!std::getline(in, line) || line != kCertificateCsvHeader) {
    throw IoError("certificate CSV header mismatch");
  }
  std::vector<CertificateRow> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string_view> f;
    std::string_view rest(line);
    for (;;) {
      const auto comma = rest.find(',');
      f.push_back(rest.substr(0, comma));
      if (comma == std::string_view::npos) break;
      rest.remove_prefix(comma + 1);
    }
    if (f.size() != 13) {
      throw IoError("certificate CSV row has " + std::to_string(f.size()) + " fields");
    }
    CertificateRow r;
    r.cert = defaults;
    r.index = detail::parse_field<std::size_t>(f[0], "index");
    r.label = detail::parse_field<int>(f[1], "label");
    r.cert.prediction = detail::parse_field<int>(f[2], "prediction");
    const int abstain = detail::parse_field<int>(f[3], "abstain");
    if (abstain != (r.cert.prediction == Certificate::kAbstain ? 1 : 0)) {
      throw IoError("abstain flag disagrees with prediction at index " + std::string(f[0]));
    }
    r.cert.radius = detail::parse_field<double>(f[4], "radius");
    r.cert.p_lower_left = detail::parse_field<double>(f[5], "p_lower_left");
    r.cert.p_lower_right = detail::parse_field<double>(f[6], "p_lower_right");
    r.cert.sigma = detail::parse_field<double>(f[7], "sigma");
    r.cert.n0 = detail::parse_field<std::int64_t>(f[8], "n0");
    r.cert.n = detail::parse_field<std::int64_t>(f[9], "n");
    r.cert.alpha = detail::parse_field<double>(f[10], "alpha");
    r.cert.seed = detail::parse_field<std::uint64_t>(f[11], "seed");
    r.wall_ms = detail::parse_field<double>(f[12], "wall_ms");
    rows.push_back(r);
  }
  return rows;
}

/// Run parameters echoed into the summary.
struct ReportParams {
  CertifyParams certify;
  EvaluationOptions evaluation;
  std::string dataset;
  std::string oracle;
  std::string profile;  // empty unless a sigma profile drove the run
};

inline nlohmann::ordered_json summary_json(const Summary& s, const ReportParams& p) {
  nlohmann::ordered_json j;
  nlohmann::ordered_json acc = nlohmann::ordered_json::object();
  for (std::size_t g = 0; g < s.radius_grid.size(); ++g) {
    acc[format_double(s.radius_grid[g])] = s.certified_accuracy[g];
  }
  j["certified_accuracy"] = acc;
  j["acr"] = s.acr;
  j["abstain_rate"] = s.abstain_rate;

  const CertifyParams& c = p.certify;
  nlohmann::ordered_json params;
  params["mode"] = to_string(p.evaluation.mode);
  params["sigma"] = c.sigma;
  if (p.evaluation.mode == SmoothingMode::drs_asym) params["sigma_right"] = c.right_sigma();
  if (!p.profile.empty()) params["sigma_profile"] = p.profile;
  params["n0"] = c.n0;
  params["n"] = c.n;
  params["alpha"] = c.alpha;
  params["seed"] = c.seed;
  params["stride"] = p.evaluation.stride;
  params["interp"] = to_string(c.interp);
  params["radius_grid"] = s.radius_grid;
  params["confidence_per_branch"] = 1.0 - c.alpha;
  params["confidence_joint"] =
      p.evaluation.mode == SmoothingMode::rs ? 1.0 - c.alpha : 1.0 - 2.0 * c.alpha;
  params["dataset"] = p.dataset;
  params["oracle"] = p.oracle;
  params["samples"] = s.count;
  params["correct"] = s.correct;
  params["mean_wall_ms"] = s.mean_wall_ms;
  j["params"] = params;
  return j;
}

/// Summary file next to the CSV: "runs/out.csv" -> "runs/out.summary.json".
inline std::filesystem::path summary_path_for(const std::filesystem::path& csv_path) {
  std::filesystem::path p = csv_path;
  p.replace_extension(".summary.json");
  return p;
}

inline void write_report(const std::vector<CertificateRow>& rows, const Summary& summary,
                         const ReportParams& params, const std::filesystem::path& out_path) {
  {
    std::ofstream csv(out_path, std::ios::trunc);
    if (!csv) throw IoError("cannot write " + out_path.string());
    write_certificates_csv(csv, rows);
    if (!csv) throw IoError("short write to " + out_path.string());
  }
  const auto json_path = summary_path_for(out_path);
  std::ofstream js(json_path, std::ios::trunc);
  if (!js) throw IoError("cannot write " + json_path.string());
  js << summary_json(summary, params).dump(2) << '\n';
  if (!js) throw IoError("short write to " + json_path.string());
}

struct BoundCurvePoint {
  std::int64_t d = 0;
  double rs_bound = 0.0;
  double drs_bound = 0.0;
  double sigma = 0.0;
  double p = 0.0;
};

/// Bound curve over even d, with m = n = d/2 sub-dimensions for the dual bound.
inline std::vector<BoundCurvePoint> bound_curve(std::int64_t d_lo, std::int64_t d_hi,
                                                std::int64_t step, double p,
                                                double fixed_sigma /* <= 0: 1/sqrt(d) */) {
  if (d_lo < 2 || d_hi < d_lo || step < 1) throw ConfigError("invalid d range");
  if (d_lo % 2 != 0 || step % 2 != 0) {
    throw ConfigError("d range must stay on even dimensions (start and step even)");
  }
  std::vector<BoundCurvePoint> out;
  for (std::int64_t d = d_lo; d <= d_hi; d += step) {
    BoundCurvePoint pt;
    pt.d = d;
    pt.p = p;
    pt.sigma = fixed_sigma > 0.0 ? fixed_sigma : 1.0 / std::sqrt(static_cast<double>(d));
    pt.rs_bound = rs_upper_bound(p, d, pt.sigma);
    pt.drs_bound = drs_upper_bound(p, p, d / 2, d / 2, pt.sigma);
    out.push_back(pt);
  }
  return out;
}

inline void write_bound_curve_csv(std::ostream& out, const std::vector<BoundCurvePoint>& pts) {
  out << "d,rs_bound,drs_bound,sigma,p\n";
  for (const auto& pt : pts) {
    out << pt.d << ',' << format_double(pt.rs_bound) << ',' << format_double(pt.drs_bound) << ','
        << format_double(pt.sigma) << ',' << format_double(pt.p) << '\n';
  }
}

}  // namespace smoothcert
