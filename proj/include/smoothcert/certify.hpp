#pragma once

// Monte Carlo certification: selection and estimation sampling under
// Gaussian noise, Clopper-Pearson lower bounds and the abstain gates.
//
// Noise for sample i of branch b in phase ph is drawn from
// stream.derive(ph).derive(b).derive(i), so results do not depend on how the
// samples are split into batches or across workers.

#include <algorithm>
#include <chrono>
#include <cstdint>
#include <exception>
#include <memory>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "smoothcert/error.hpp"
#include "smoothcert/oracle.hpp"
#include "smoothcert/partition.hpp"
#include "smoothcert/radius.hpp"
#include "smoothcert/rng.hpp"
#include "smoothcert/statfun.hpp"

namespace smoothcert {

enum class SmoothingMode { rs, drs, drs_asym };

inline std::string to_string(SmoothingMode m) {
  switch (m) {
    case SmoothingMode::rs: return "RS";
    case SmoothingMode::drs: return "DRS";
    case SmoothingMode::drs_asym: return "DRS_ASYM";
  }
  return "?";
}

struct CertifyParams {
  double sigma = 0.25;        // RS / DRS noise, left-branch noise for DRS_ASYM
  double sigma_right = 0.0;   // DRS_ASYM right-branch noise; 0 means "same as sigma"
  std::int64_t n0 = 100;      // selection samples
  std::int64_t n = 100'000;   // estimation samples
  double alpha = 0.001;
  std::uint64_t seed = 0;
  Interpolation interp = Interpolation::bilinear;
  std::size_t batch_size = 1000;

  double right_sigma() const { return sigma_right > 0.0 ? sigma_right : sigma; }

  void validate() const {
    if (!(sigma > 0.0)) throw ConfigError("sigma must be positive");
    if (sigma_right < 0.0) throw ConfigError("sigma_right must be positive");
    if (n0 < 1 || n < 1) throw ConfigError("n0 and n must be >= 1");
    if (!(alpha > 0.0 && alpha < 1.0)) throw ConfigError("alpha must lie in (0,1)");
    if (batch_size < 1) throw ConfigError("batch size must be >= 1");
  }
};

/// Per-worker oracle handles: slot 0 is the caller's oracle, the others come
/// from worker_handle() so connection-backed oracles get one connection each.
class OraclePool {
 public:
  OraclePool(std::shared_ptr<VoteOracle> root, std::size_t workers) {
    if (!root) throw ConfigError("oracle pool needs an oracle");
    workers = std::max<std::size_t>(1, workers);
    handles_.reserve(workers);
    handles_.push_back(root);
    for (std::size_t w = 1; w < workers; ++w) handles_.push_back(root->worker_handle());
  }

  std::size_t size() const { return handles_.size(); }
  VoteOracle& at(std::size_t w) { return *handles_.at(w); }
  const VoteOracle& front() const { return *handles_.front(); }

 private:
  std::vector<std::shared_ptr<VoteOracle>> handles_;
};

/// Per-class votes of one branch; sum(counts) == trials.
struct BranchCounts {
  std::vector<std::uint64_t> counts;
  std::uint64_t trials = 0;

  friend bool operator==(const BranchCounts&, const BranchCounts&) = default;
};

struct SmoothedCounts {
  BranchCounts left;
  BranchCounts right;

  std::vector<std::uint64_t> summed() const {
    std::vector<std::uint64_t> s(left.counts.size(), 0);
    for (std::size_t k = 0; k < s.size(); ++k) s[k] = left.counts[k] + right.counts[k];
    return s;
  }
  friend bool operator==(const SmoothedCounts&, const SmoothedCounts&) = default;
};

/// One branch's sampling input: the clean (sub-)image, the noise scale and an
/// optional up-sampling applied after the noise.
struct NoisyBranch {
  const ImageTensor* input = nullptr;
  double sigma = 0.0;
  std::optional<ResizePlan> resize;

  std::size_t output_dim() const { return resize ? resize->to().size() : input->size(); }
};

namespace stream_tag {
inline constexpr std::uint64_t selection = 0;
inline constexpr std::uint64_t estimation = 1;
inline constexpr std::uint64_t left = 0;
inline constexpr std::uint64_t right = 1;
inline constexpr std::uint64_t full = 2;
}  // namespace stream_tag

/// Draws `trials` noisy copies of one branch and counts the oracle's votes.
/// `branch_stream` is the stream for this (phase, branch); sample i uses
/// branch_stream.derive(i).
inline BranchCounts sample_branch(OraclePool& pool, const NoisyBranch& branch,
                                  std::int64_t trials, RandomStream branch_stream,
                                  std::size_t batch_size) {
  if (trials < 1) throw ConfigError("trials must be >= 1");
  const VoteOracle& proto = pool.front();
  const std::size_t classes = proto.num_classes();
  const std::size_t dim = branch.output_dim();
  if (proto.input_dim() != dim) {
    throw ConfigError("oracle expects input_dim " + std::to_string(proto.input_dim()) +
                      " but the branch produces " + std::to_string(dim));
  }
  const auto total = static_cast<std::uint64_t>(trials);
  const std::uint64_t batch = std::max<std::size_t>(1, batch_size);
  const std::uint64_t blocks = (total + batch - 1) / batch;
  const std::size_t workers = std::min<std::uint64_t>(pool.size(), blocks);

  std::vector<std::vector<std::uint64_t>> partial(workers,
                                                  std::vector<std::uint64_t>(classes, 0));
  std::vector<std::exception_ptr> errors(workers);

  auto run = [&](std::size_t w) {
    try {
      VoteOracle& oracle = pool.at(w);
      const auto src = branch.input->data();
      std::vector<double> noisy(src.size());
      std::vector<double> buf(batch * dim);
      for (std::uint64_t b = w; b < blocks; b += workers) {
        const std::uint64_t first = b * batch;
        const std::uint64_t count = std::min(batch, total - first);
        for (std::uint64_t i = 0; i < count; ++i) {
          RandomStream s = branch_stream.derive(first + i);
          s.fill_standard_normal(noisy);
          for (std::size_t j = 0; j < noisy.size(); ++j) noisy[j] = src[j] + branch.sigma * noisy[j];
          std::span<double> slot(buf.data() + i * dim, dim);
          if (branch.resize) {
            branch.resize->apply(noisy, slot);
          } else {
            std::copy(noisy.begin(), noisy.end(), slot.begin());
          }
        }
        oracle.count_votes(std::span<const double>(buf.data(), count * dim), partial[w]);
      }
    } catch (...) {
      errors[w] = std::current_exception();
    }
  };

  if (workers == 1) {
    run(0);
  } else {
    std::vector<std::thread> threads;
    threads.reserve(workers);
    for (std::size_t w = 0; w < workers; ++w) threads.emplace_back(run, w);
    for (auto& t : threads) t.join();
  }
  for (const auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }

  BranchCounts out;
  out.counts.assign(classes, 0);
  for (const auto& p : partial) {
    for (std::size_t k = 0; k < classes; ++k) out.counts[k] += p[k];
  }
  out.trials = total * proto.votes_per_sample();
  return out;
}

/// Counts for both branches of a dual-smoothing sample set.
inline SmoothedCounts sample_under_noise(OraclePool& left_oracle, OraclePool& right_oracle,
                                         const NoisyBranch& left, const NoisyBranch& right,
                                         std::int64_t trials, RandomStream phase_stream,
                                         std::size_t batch_size = 1000) {
  if (left_oracle.front().num_classes() != right_oracle.front().num_classes()) {
    throw ConfigError("left and right oracles disagree on the number of classes");
  }
  SmoothedCounts c;
  c.left = sample_branch(left_oracle, left, trials, phase_stream.derive(stream_tag::left),
                         batch_size);
  c.right = sample_branch(right_oracle, right, trials, phase_stream.derive(stream_tag::right),
                          batch_size);
  return c;
}

/// Top two indices of counts; ties resolved toward the smaller index.
inline std::pair<int, int> top_two(std::span<const std::uint64_t> counts) {
  if (counts.size() < 2) throw DomainError("top_two needs at least two classes");
  const auto first = argmax_lowest(counts);
  std::size_t second = first == 0 ? 1 : 0;
  for (std::size_t k = 0; k < counts.size(); ++k) {
    if (k != first && counts[k] > counts[second]) second = k;
  }
  return {static_cast<int>(first), static_cast<int>(second)};
}

struct Certificate {
  static constexpr int kAbstain = -1;

  int prediction = kAbstain;
  int runner_up = -1;  // selection-phase runner-up, diagnostics only
  double radius = 0.0;
  double p_lower_left = 0.0;
  double p_lower_right = 0.0;
  double sigma = 0.0;
  double sigma_right = 0.0;
  std::int64_t n0 = 0;
  std::int64_t n = 0;
  double alpha = 0.0;
  std::uint64_t seed = 0;
  SmoothingMode mode = SmoothingMode::drs;
  bool clamped = false;
  RadiusCaveat caveat = RadiusCaveat::none;

  bool abstained() const { return prediction == kAbstain; }
  /// Each branch bound holds with probability 1 - alpha.
  double per_branch_confidence() const { return 1.0 - alpha; }
  /// Union bound over the branch bounds actually used.
  double joint_confidence() const {
    return mode == SmoothingMode::rs ? 1.0 - alpha : 1.0 - 2.0 * alpha;
  }

  friend bool operator==(const Certificate&, const Certificate&) = default;
};

namespace detail {

inline Certificate blank_certificate(const CertifyParams& p, std::uint64_t seed,
                                     SmoothingMode mode) {
  Certificate c;
  c.sigma = p.sigma;
  c.sigma_right = mode == SmoothingMode::drs_asym ? p.right_sigma() : p.sigma;
  c.n0 = p.n0;
  c.n = p.n;
  c.alpha = p.alpha;
  c.seed = seed;
  c.mode = mode;
  return c;
}

}  // namespace detail

/// Dual smoothing certification: down-sample, select the top class with n0
/// samples, estimate both branches with n fresh samples, lower-bound each
/// branch and certify iff the bounds sum to at least one.
inline Certificate certify_drs(OraclePool& left_oracle, OraclePool& right_oracle,
                               const ImageTensor& x, const PartitionIndex& idx,
                               const CertifyParams& params, RandomStream stream,
                               SmoothingMode mode = SmoothingMode::drs) {
  params.validate();
  if (mode == SmoothingMode::rs) throw ConfigError("certify_drs called with RS mode");
  const SubImagePair sub = downsample(x, idx);
  const auto& ps = sub.parent_shape;
  NoisyBranch left{&sub.left, params.sigma,
                   ResizePlan(sub.left.shape(), ps.height, ps.width, params.interp)};
  NoisyBranch right{&sub.right,
                    mode == SmoothingMode::drs_asym ? params.right_sigma() : params.sigma,
                    ResizePlan(sub.right.shape(), ps.height, ps.width, params.interp)};

  const SmoothedCounts selection =
      sample_under_noise(left_oracle, right_oracle, left, right, params.n0,
                         stream.derive(stream_tag::selection), params.batch_size);
  const auto summed = selection.summed();
  const auto [c_a, c_b] = top_two(summed);

  const SmoothedCounts estimate =
      sample_under_noise(left_oracle, right_oracle, left, right, params.n,
                         stream.derive(stream_tag::estimation), params.batch_size);

  Certificate cert = detail::blank_certificate(params, stream.seed(), mode);
  cert.runner_up = c_b;
  const ConfidenceLevel alpha(params.alpha);
  cert.p_lower_left = clopper_pearson_lower(
      static_cast<std::int64_t>(estimate.left.counts[c_a]),
      static_cast<std::int64_t>(estimate.left.trials), alpha);
  cert.p_lower_right = clopper_pearson_lower(
      static_cast<std::int64_t>(estimate.right.counts[c_a]),
      static_cast<std::int64_t>(estimate.right.trials), alpha);

  if (!(cert.p_lower_left + cert.p_lower_right >= 1.0)) return cert;

  bool clamped = false;
  const double pl = clamp_open_unit(cert.p_lower_left, &clamped);
  const double pr = clamp_open_unit(cert.p_lower_right, &clamped);
  RadiusResult r;
  if (mode == SmoothingMode::drs) {
    r = drs_radius_lower(pl, pr, params.sigma);
  } else {
    r = asym_variance_radius(BranchProbs::worst_case(pl), BranchProbs::worst_case(pr),
                             params.sigma, params.right_sigma());
  }
  cert.prediction = c_a;
  cert.radius = r.radius;
  cert.clamped = clamped || r.clamped;
  cert.caveat = r.caveat;
  return cert;
}

/// Single-input smoothing certification of one branch pipeline. `branch_tag`
/// picks the stream family, so a branch certified here sees exactly the noise
/// that certify_drs uses for that branch.
inline Certificate certify_rs_branch(OraclePool& oracle, const NoisyBranch& branch,
                                     const CertifyParams& params, RandomStream stream,
                                     std::uint64_t branch_tag) {
  params.validate();
  const BranchCounts selection =
      sample_branch(oracle, branch, params.n0,
                    stream.derive(stream_tag::selection).derive(branch_tag), params.batch_size);
  const auto [c_a, c_b] = top_two(selection.counts);
  const BranchCounts estimate =
      sample_branch(oracle, branch, params.n,
                    stream.derive(stream_tag::estimation).derive(branch_tag), params.batch_size);

  Certificate cert = detail::blank_certificate(params, stream.seed(), SmoothingMode::rs);
  cert.sigma = branch.sigma;
  cert.sigma_right = branch.sigma;
  cert.runner_up = c_b;
  cert.p_lower_left = clopper_pearson_lower(static_cast<std::int64_t>(estimate.counts[c_a]),
                                            static_cast<std::int64_t>(estimate.trials),
                                            ConfidenceLevel(params.alpha));
  cert.p_lower_right = cert.p_lower_left;
  if (!(cert.p_lower_left > 0.5)) return cert;
  bool clamped = false;
  const RadiusResult r = rs_radius_lower(clamp_open_unit(cert.p_lower_left, &clamped), branch.sigma);
  cert.prediction = c_a;
  cert.radius = r.radius;
  cert.clamped = clamped;
  return cert;
}

/// Classic randomized smoothing on the full-resolution input.
inline Certificate certify_rs(OraclePool& oracle, const ImageTensor& x,
                              const CertifyParams& params, RandomStream stream) {
  const NoisyBranch full{&x, params.sigma, std::nullopt};
  return certify_rs_branch(oracle, full, params, stream, stream_tag::full);
}

}  // namespace smoothcert
