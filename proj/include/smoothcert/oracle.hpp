#pragma once

// Classifier abstraction used by the certification engine, plus the analytic
// in-process classifiers that serve as ground truth in tests.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <memory>
#include <numbers>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "smoothcert/error.hpp"
#include "smoothcert/statfun.hpp"

namespace smoothcert {

/// Anything that turns a batch of inputs into per-class vote counts.
/// A plain classifier votes once per row; an ensemble votes once per member.
class VoteOracle : public std::enable_shared_from_this<VoteOracle> {
 public:
  virtual ~VoteOracle() = default;

  virtual std::size_t num_classes() const = 0;
  virtual std::size_t input_dim() const = 0;
  virtual std::size_t votes_per_sample() const { return 1; }

  /// batch is row-major, batch.size() / input_dim() rows. Votes are added to
  /// counts, which must have num_classes() entries.
  virtual void count_votes(std::span<const double> batch, std::span<std::uint64_t> counts) = 0;

  /// Oracle to be owned by one concurrent worker. Pure in-process oracles hand
  /// out themselves; connection-backed oracles open a new connection.
  virtual std::shared_ptr<VoteOracle> worker_handle() { return shared_from_this(); }
};

/// Deterministic batch classifier; labels lie in [0, num_classes).
class ClassifierOracle : public VoteOracle {
 public:
  virtual std::vector<int> classify_batch(std::span<const double> batch) = 0;

  void count_votes(std::span<const double> batch, std::span<std::uint64_t> counts) override {
    const auto labels = classify_batch(batch);
    for (int label : labels) {
      if (label < 0 || static_cast<std::size_t>(label) >= num_classes()) {
        throw DomainError("oracle returned label " + std::to_string(label) + " outside [0, " +
                          std::to_string(num_classes()) + ")");
      }
      ++counts[static_cast<std::size_t>(label)];
    }
  }

 protected:
  std::size_t rows_in(std::span<const double> batch) const {
    if (batch.size() % input_dim() != 0) {
      throw DomainError("batch length " + std::to_string(batch.size()) +
                        " is not a multiple of input_dim " + std::to_string(input_dim()));
    }
    return batch.size() / input_dim();
  }
};

/// Index of the largest entry; ties go to the smallest index.
template <typename T>
std::size_t argmax_lowest(std::span<const T> values) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < values.size(); ++i) {
    if (values[i] > values[best]) best = i;
  }
  return best;
}

/// K x D weights (row-major) and K biases.
struct LinearModel {
  std::size_t classes = 0;
  std::size_t dim = 0;
  std::vector<double> weights;
  std::vector<double> bias;

  void validate() const {
    if (classes < 2) throw DomainError("linear model needs at least two classes");
    if (dim < 1) throw DomainError("linear model needs dim >= 1");
    if (weights.size() != classes * dim || bias.size() != classes) {
      throw DomainError("linear model parameter sizes do not match K x D");
    }
    for (double w : weights) {
      if (!std::isfinite(w)) throw DomainError("linear model has non-finite weight");
    }
    for (double b : bias) {
      if (!std::isfinite(b)) throw DomainError("linear model has non-finite bias");
    }
  }

  std::span<const double> row(std::size_t k) const {
    return std::span<const double>(weights).subspan(k * dim, dim);
  }
};

inline std::vector<int> linear_classify_batch(const LinearModel& model,
                                              std::span<const double> batch) {
  if (batch.size() % model.dim != 0) {
    throw DomainError("linear_classify_batch: vectors must have dimension " +
                      std::to_string(model.dim));
  }
  const std::size_t rows = batch.size() / model.dim;
  std::vector<int> labels(rows);
  std::vector<double> scores(model.classes);
  for (std::size_t i = 0; i < rows; ++i) {
    const double* x = batch.data() + i * model.dim;
    for (std::size_t k = 0; k < model.classes; ++k) {
      const double* w = model.weights.data() + k * model.dim;
      double s = model.bias[k];
      for (std::size_t j = 0; j < model.dim; ++j) s += w[j] * x[j];
      scores[k] = s;
    }
    labels[i] = static_cast<int>(argmax_lowest<double>(scores));
  }
  return labels;
}

/// Exact probability that class 0 wins for a two-class linear model under
/// N(x, sigma^2 I): Phi(margin / (sigma * ||w0 - w1||)).
inline Probability linear_smoothed_prob(const LinearModel& model, std::span<const double> x,
                                        double sigma) {
  model.validate();
  if (model.classes != 2) throw DomainError("linear_smoothed_prob needs exactly two classes");
  if (x.size() != model.dim) throw DomainError("linear_smoothed_prob: dimension mismatch");
  if (!(sigma > 0.0)) throw DomainError("linear_smoothed_prob: sigma must be positive");
  double margin = model.bias[0] - model.bias[1];
  double norm2 = 0.0;
  for (std::size_t j = 0; j < model.dim; ++j) {
    const double dw = model.weights[j] - model.weights[model.dim + j];
    margin += dw * x[j];
    norm2 += dw * dw;
  }
  if (norm2 == 0.0) throw DomainError("linear_smoothed_prob: identical class rows");
  const double z = margin / (sigma * std::sqrt(norm2));
  if (std::isinf(z)) return Probability(z > 0 ? 1.0 : 0.0);
  return normal_cdf(z);
}

class LinearOracle final : public ClassifierOracle {
 public:
  explicit LinearOracle(LinearModel model) : model_(std::move(model)) { model_.validate(); }

  std::size_t num_classes() const override { return model_.classes; }
  std::size_t input_dim() const override { return model_.dim; }
  std::vector<int> classify_batch(std::span<const double> batch) override {
    rows_in(batch);
    return linear_classify_batch(model_, batch);
  }
  const LinearModel& model() const { return model_; }

 private:
  LinearModel model_;
};

/// argmin squared distance to K centroids, smallest index on ties.
class NearestCentroidOracle final : public ClassifierOracle {
 public:
  NearestCentroidOracle(std::size_t classes, std::size_t dim, std::vector<double> centroids)
      : classes_(classes), dim_(dim), centroids_(std::move(centroids)) {
    if (classes_ < 2 || dim_ < 1 || centroids_.size() != classes_ * dim_) {
      throw DomainError("nearest centroid oracle needs K >= 2 centroids of dimension D");
    }
    for (std::size_t a = 0; a < classes_; ++a) {
      for (std::size_t b = a + 1; b < classes_; ++b) {
        if (std::equal(centroid(a).begin(), centroid(a).end(), centroid(b).begin())) {
          throw DomainError("duplicate centroids " + std::to_string(a) + " and " +
                            std::to_string(b));
        }
      }
    }
  }

  std::size_t num_classes() const override { return classes_; }
  std::size_t input_dim() const override { return dim_; }
  std::span<const double> centroid(std::size_t k) const {
    return std::span<const double>(centroids_).subspan(k * dim_, dim_);
  }

  std::vector<int> classify_batch(std::span<const double> batch) override {
    const std::size_t rows = rows_in(batch);
    std::vector<int> labels(rows);
    for (std::size_t i = 0; i < rows; ++i) {
      const double* x = batch.data() + i * dim_;
      std::size_t best = 0;
      double best_d = 0.0;
      for (std::size_t k = 0; k < classes_; ++k) {
        const double* c = centroids_.data() + k * dim_;
        double d = 0.0;
        for (std::size_t j = 0; j < dim_; ++j) {
          const double t = x[j] - c[j];
          d += t * t;
        }
        if (k == 0 || d < best_d) {
          best = k;
          best_d = d;
        }
      }
      labels[i] = static_cast<int>(best);
    }
    return labels;
  }

 private:
  std::size_t classes_;
  std::size_t dim_;
  std::vector<double> centroids_;
};

/// Always answers the same class.
class ConstantOracle final : public ClassifierOracle {
 public:
  ConstantOracle(std::size_t classes, std::size_t dim, int label)
      : classes_(classes), dim_(dim), label_(label) {
    if (label < 0 || static_cast<std::size_t>(label) >= classes) {
      throw DomainError("constant oracle label out of range");
    }
  }
  std::size_t num_classes() const override { return classes_; }
  std::size_t input_dim() const override { return dim_; }
  std::vector<int> classify_batch(std::span<const double> batch) override {
    return std::vector<int>(rows_in(batch), label_);
  }

 private:
  std::size_t classes_;
  std::size_t dim_;
  int label_;
};

/// Sums the votes of several classifiers; every member votes once per row.
class EnsembleOracle final : public VoteOracle {
 public:
  explicit EnsembleOracle(std::vector<std::shared_ptr<VoteOracle>> members)
      : members_(std::move(members)) {
    if (members_.empty()) throw DomainError("ensemble needs at least one member");
    for (const auto& m : members_) {
      if (m->num_classes() != members_.front()->num_classes() ||
          m->input_dim() != members_.front()->input_dim()) {
        throw DomainError("ensemble members disagree on num_classes or input_dim");
      }
    }
  }

  std::size_t num_classes() const override { return members_.front()->num_classes(); }
  std::size_t input_dim() const override { return members_.front()->input_dim(); }
  std::size_t votes_per_sample() const override {
    std::size_t v = 0;
    for (const auto& m : members_) v += m->votes_per_sample();
    return v;
  }
  std::size_t size() const { return members_.size(); }

  void count_votes(std::span<const double> batch, std::span<std::uint64_t> counts) override {
    for (const auto& m : members_) m->count_votes(batch, counts);
  }

  std::shared_ptr<VoteOracle> worker_handle() override {
    std::vector<std::shared_ptr<VoteOracle>> handles;
    handles.reserve(members_.size());
    for (const auto& m : members_) handles.push_back(m->worker_handle());
    bool same = true;
    for (std::size_t i = 0; i < handles.size(); ++i) same = same && handles[i] == members_[i];
    if (same) return shared_from_this();
    return std::make_shared<EnsembleOracle>(std::move(handles));
  }

 private:
  std::vector<std::shared_ptr<VoteOracle>> members_;
};

inline std::shared_ptr<EnsembleOracle> ensemble_oracle(
    std::vector<std::shared_ptr<VoteOracle>> members) {
  return std::make_shared<EnsembleOracle>(std::move(members));
}

// Plain-text model files. Linear: "K D" then K rows of D weights followed by
// the bias. Centroids: "K D" then K rows of D coordinates.

namespace detail {

inline std::ifstream open_model(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open model file " + path);
  return in;
}

}  // namespace detail

inline LinearModel read_linear_model(const std::string& path) {
  auto in = detail::open_model(path);
  LinearModel m;
  if (!(in >> m.classes >> m.dim)) throw IoError(path + ": missing 'K D' header");
  m.weights.resize(m.classes * m.dim);
  m.bias.resize(m.classes);
  for (std::size_t k = 0; k < m.classes; ++k) {
    for (std::size_t j = 0; j < m.dim; ++j) {
      if (!(in >> m.weights[k * m.dim + j])) throw IoError(path + ": truncated weights");
    }
    if (!(in >> m.bias[k])) throw IoError(path + ": truncated bias");
  }
  m.validate();
  return m;
}

inline void write_linear_model(const LinearModel& m, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write model file " + path);
  out.precision(17);
  out << m.classes << ' ' << m.dim << '\n';
  for (std::size_t k = 0; k < m.classes; ++k) {
    for (std::size_t j = 0; j < m.dim; ++j) out << m.weights[k * m.dim + j] << ' ';
    out << m.bias[k] << '\n';
  }
  if (!out) throw IoError("failed writing " + path);
}

struct CentroidModel {
  std::size_t classes = 0;
  std::size_t dim = 0;
  std::vector<double> centroids;
};

inline CentroidModel read_centroids(const std::string& path) {
  auto in = detail::open_model(path);
  CentroidModel m;
  if (!(in >> m.classes >> m.dim)) throw IoError(path + ": missing 'K D' header");
  m.centroids.resize(m.classes * m.dim);
  for (double& v : m.centroids) {
    if (!(in >> v)) throw IoError(path + ": truncated centroids");
  }
  return m;
}

inline void write_centroids(const CentroidModel& m, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write model file " + path);
  out.precision(17);
  out << m.classes << ' ' << m.dim << '\n';
  for (std::size_t k = 0; k < m.classes; ++k) {
    for (std::size_t j = 0; j < m.dim; ++j) {
      out << m.centroids[k * m.dim + j] << (j + 1 == m.dim ? '\n' : ' ');
    }
  }
  if (!out) throw IoError("failed writing " + path);
}

}  // namespace smoothcert
