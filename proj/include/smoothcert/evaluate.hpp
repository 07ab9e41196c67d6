#pragma once

// Dataset-level evaluation: one certificate per (strided) sample plus
// certified accuracy, ACR and abstain rate.

#include <chrono>
#include <cstdint>
#include <vector>

#include "smoothcert/certify.hpp"
#include "smoothcert/dataset.hpp"

namespace smoothcert {

struct CertificateRow {
  std::size_t index = 0;
  int label = 0;
  Certificate cert;
  double wall_ms = 0.0;

  bool correct() const { return !cert.abstained() && cert.prediction == label; }
  friend bool operator==(const CertificateRow&, const CertificateRow&) = default;
};

struct Summary {
  std::vector<double> radius_grid;
  std::vector<double> certified_accuracy;  // parallel to radius_grid
  double acr = 0.0;
  double abstain_rate = 0.0;
  std::size_t count = 0;
  std::size_t correct = 0;
  double mean_wall_ms = 0.0;
};

/// Certified accuracy at r counts samples that are correct with radius > r.
/// ACR averages the radius over correctly classified samples only.
inline Summary summarize(const std::vector<CertificateRow>& rows,
                         const std::vector<double>& radius_grid) {
  Summary s;
  s.radius_grid = radius_grid;
  s.certified_accuracy.assign(radius_grid.size(), 0.0);
  s.count = rows.size();
  if (rows.empty()) return s;
  double radius_sum = 0.0;
  double wall = 0.0;
  std::size_t abstained = 0;
  for (const auto& row : rows) {
    wall += row.wall_ms;
    if (row.cert.abstained()) ++abstained;
    if (!row.correct()) continue;
    ++s.correct;
    radius_sum += row.cert.radius;
    for (std::size_t g = 0; g < radius_grid.size(); ++g) {
      if (row.cert.radius > radius_grid[g]) s.certified_accuracy[g] += 1.0;
    }
  }
  const double n = static_cast<double>(rows.size());
  for (double& a : s.certified_accuracy) a /= n;
  s.acr = s.correct ? radius_sum / static_cast<double>(s.correct) : 0.0;
  s.abstain_rate = static_cast<double>(abstained) / n;
  s.mean_wall_ms = wall / n;
  return s;
}

struct EvaluationOptions {
  SmoothingMode mode = SmoothingMode::drs;
  std::size_t stride = 1;
  bool record_timing = false;  // off keeps reruns byte-identical
};

/// Certifies every stride-th sample. Sample i draws from the stream
/// (params.seed, i), so a subset run reproduces the same rows as a full run.
/// The right pool is only used by the dual modes.
inline std::vector<CertificateRow> evaluate_dataset(OraclePool& left, OraclePool& right,
                                                    const Dataset& ds,
                                                    const CertifyParams& params,
                                                    const EvaluationOptions& opt) {
  params.validate();
  ds.validate();
  if (ds.size() == 0) throw ConfigError("dataset is empty");
  if (opt.stride < 1) throw ConfigError("stride must be >= 1");
  const std::size_t classes = left.front().num_classes();
  for (std::size_t i = 0; i < ds.size(); ++i) {
    if (ds.labels[i] >= classes) {
      throw ConfigError("label " + std::to_string(ds.labels[i]) + " at index " +
                        std::to_string(i) + " exceeds the oracle's " + std::to_string(classes) +
                        " classes");
    }
  }
  const PartitionIndex idx = make_diagonal_partition(ds.shape.height, ds.shape.width);

  std::vector<CertificateRow> rows;
  rows.reserve((ds.size() + opt.stride - 1) / opt.stride);
  for (std::size_t i = 0; i < ds.size(); i += opt.stride) {
    const auto t0 = std::chrono::steady_clock::now();
    const ImageTensor x = ds.image(i);
    const RandomStream stream(params.seed, i);
    CertificateRow row;
    row.index = i;
    row.label = ds.labels[i];
    row.cert = opt.mode == SmoothingMode::rs
                   ? certify_rs(left, x, params, stream)
                   : certify_drs(left, right, x, idx, params, stream, opt.mode);
    if (opt.record_timing) {
      row.wall_ms = std::chrono::duration<double, std::milli>(
                        std::chrono::steady_clock::now() - t0)
                        .count();
    }
    rows.push_back(row);
  }
  return rows;
}

}  // namespace smoothcert
