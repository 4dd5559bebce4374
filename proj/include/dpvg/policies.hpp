#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <istream>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "dpvg/game_core.hpp"
#include "dpvg/rng.hpp"
#include "dpvg/toy_domain.hpp"

namespace dpvg {

using GradientVector = std::vector<double>;

inline double dot(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw std::invalid_argument("dot: dimension mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

inline double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

inline double logit(double p) { return std::log(p) - std::log1p(-p); }

// ---------------------------------------------------------------------------
// Softmax policy over an enumerated candidate set
// ---------------------------------------------------------------------------
// Candidates are scored by an affine function of their features; role
// conditioning is an additive weight offset, so one parameter set can serve
// both the faithful and the sneaky role.

struct SoftmaxPolicy {
  std::vector<double> weights;
  double temperature = 1.0;
  // Indexed by Role; empty when the policy is unconditioned (solver).
  std::array<std::vector<double>, 2> role_offsets;

  static SoftmaxPolicy zeros(std::size_t dim, double temperature,
                             bool with_roles) {
    SoftmaxPolicy p;
    p.weights.assign(dim, 0.0);
    p.temperature = temperature;
    if (with_roles) {
      p.role_offsets[0].assign(dim, 0.0);
      p.role_offsets[1].assign(dim, 0.0);
    }
    return p;
  }

  std::vector<double> effective_weights(std::optional<Role> role) const {
    std::vector<double> w = weights;
    if (role) {
      const auto& off = role_offsets[static_cast<std::size_t>(*role)];
      if (!off.empty()) {
        if (off.size() != w.size())
          throw std::invalid_argument("role offset dimension mismatch");
        for (std::size_t i = 0; i < w.size(); ++i) w[i] += off[i];
      }
    }
    return w;
  }
};

inline std::vector<double> candidate_scores(const SoftmaxPolicy& p,
                                            std::span<const FeatureVector> feats,
                                            std::optional<Role> role = {}) {
  const std::vector<double> w = p.effective_weights(role);
  std::vector<double> scores(feats.size());
  for (std::size_t i = 0; i < feats.size(); ++i) scores[i] = dot(w, feats[i].values);
  return scores;
}

// softmax(score_i / temperature), max-shifted for stability. Shift invariance
// of the result is a tested property.
inline std::vector<double> policy_distribution(const SoftmaxPolicy& p,
                                               std::span<const FeatureVector> feats,
                                               std::optional<Role> role = {}) {
  if (feats.empty())
    throw std::invalid_argument("policy_distribution: empty candidate set");
  if (!(p.temperature > 0.0))
    throw std::invalid_argument("policy_distribution: temperature must be > 0");
  std::vector<double> logits = candidate_scores(p, feats, role);
  for (double& l : logits) l /= p.temperature;
  const double max_logit = *std::max_element(logits.begin(), logits.end());
  double total = 0.0;
  std::vector<double> probs(logits.size());
  for (std::size_t i = 0; i < logits.size(); ++i) {
    probs[i] = std::exp(logits[i] - max_logit);
    total += probs[i];
  }
  for (double& q : probs) q /= total;
  return probs;
}

inline std::vector<std::size_t> sample_candidate_indices(
    std::span<const double> probs, std::size_t k, Rng& rng) {
  if (k < 2)
    throw std::invalid_argument("sample_candidate_indices: k must be >= 2 (RLOO)");
  std::vector<std::size_t> idx(k);
  for (std::size_t j = 0; j < k; ++j) idx[j] = rng.next_weighted(probs);
  return idx;
}

// K i.i.d. draws from the policy distribution over the candidate set.
inline std::vector<Solution> sample_completions(const SoftmaxPolicy& p,
                                                std::span<const Solution> candidates,
                                                std::span<const FeatureVector> feats,
                                                std::size_t k, Rng& rng,
                                                std::optional<Role> role = {}) {
  if (candidates.size() != feats.size())
    throw std::invalid_argument("sample_completions: candidates/features mismatch");
  const std::vector<double> probs = policy_distribution(p, feats, role);
  std::vector<Solution> out;
  out.reserve(k);
  for (std::size_t i : sample_candidate_indices(probs, k, rng))
    out.push_back(candidates[i]);
  return out;
}

// Exact score-function gradient of E[R] with respect to the effective weight
// vector: sum_i p_i R_i (f_i - fbar) / T. Serves as the enumeration oracle
// for RLOO unbiasedness checks.
inline GradientVector exact_policy_gradient(const SoftmaxPolicy& p,
                                            std::span<const FeatureVector> feats,
                                            std::span<const double> reward,
                                            std::optional<Role> role = {}) {
  if (feats.size() != reward.size())
    throw std::invalid_argument("exact_policy_gradient: rewards/features mismatch");
  const std::vector<double> probs = policy_distribution(p, feats, role);
  const std::size_t dim = feats.empty() ? 0 : feats[0].values.size();
  std::vector<double> mean_feat(dim, 0.0);
  for (std::size_t i = 0; i < feats.size(); ++i)
    for (std::size_t d = 0; d < dim; ++d)
      mean_feat[d] += probs[i] * feats[i].values[d];
  GradientVector grad(dim, 0.0);
  for (std::size_t i = 0; i < feats.size(); ++i) {
    const double scale = probs[i] * reward[i] / p.temperature;
    for (std::size_t d = 0; d < dim; ++d)
      grad[d] += scale * (feats[i].values[d] - mean_feat[d]);
  }
  return grad;
}

// ---------------------------------------------------------------------------
// Logistic verifier
// ---------------------------------------------------------------------------

struct VerifierModel {
  std::vector<double> weights;
  double bias = 0.0;

  static VerifierModel zeros(std::size_t dim) {
    VerifierModel v;
    v.weights.assign(dim, 0.0);
    return v;
  }
};

inline double verifier_logit(const VerifierModel& v, const FeatureVector& feats) {
  return dot(v.weights, feats.values) + v.bias;
}

// Score in (0,1); the logit is recoverable exactly as weights . feats + bias.
inline double verifier_score(const VerifierModel& v, const FeatureVector& feats) {
  return sigmoid(verifier_logit(v, feats));
}

// ---------------------------------------------------------------------------
// Checkpoints
// ---------------------------------------------------------------------------
// Plain text, one parameter per line in C hexfloat notation, so round-trips
// are bit-exact on any platform.

namespace detail {

inline void write_hex_double(std::ofstream& out, double x) {
  char buf[48];
  std::snprintf(buf, sizeof buf, "%a", x);
  out << buf << '\n';
}

inline double read_hex_double(std::istream& in) {
  std::string tok;
  if (!(in >> tok)) throw std::runtime_error("checkpoint: truncated file");
  return std::strtod(tok.c_str(), nullptr);
}

inline void expect_tag(std::istream& in, const char* tag) {
  std::string tok;
  in >> tok;
  if (tok != tag)
    throw std::runtime_error(std::string("checkpoint: expected '") + tag +
                             "', got '" + tok + "'");
}

inline void write_block(std::ofstream& out, const char* tag,
                        std::span<const double> values) {
  out << tag << ' ' << values.size() << '\n';
  for (double v : values) write_hex_double(out, v);
}

inline std::vector<double> read_block(std::istream& in, const char* tag) {
  expect_tag(in, tag);
  std::size_t n = 0;
  in >> n;
  std::vector<double> values(n);
  for (auto& v : values) v = read_hex_double(in);
  return values;
}

}  // namespace detail

struct PolicyCheckpoint {
  std::string kind;  // "solver" | "translator" | "prover"
  std::int64_t step = 0;
  SoftmaxPolicy policy;
};

inline void save_policy(const std::string& path, const PolicyCheckpoint& ckpt) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write checkpoint: " + path);
  out << "dpvg-policy v1\n";
  out << "kind " << ckpt.kind << '\n';
  out << "step " << ckpt.step << '\n';
  out << "dim " << ckpt.policy.weights.size() << '\n';
  out << "temperature ";
  {
    char buf[48];
    std::snprintf(buf, sizeof buf, "%a", ckpt.policy.temperature);
    out << buf << '\n';
  }
  detail::write_block(out, "weights", ckpt.policy.weights);
  detail::write_block(out, "offset_faithful", ckpt.policy.role_offsets[0]);
  detail::write_block(out, "offset_sneaky", ckpt.policy.role_offsets[1]);
}

inline PolicyCheckpoint load_policy(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read checkpoint: " + path);
  std::string magic, version;
  in >> magic >> version;
  if (magic != "dpvg-policy" || version != "v1")
    throw std::runtime_error("not a policy checkpoint: " + path);
  PolicyCheckpoint ckpt;
  detail::expect_tag(in, "kind");
  in >> ckpt.kind;
  detail::expect_tag(in, "step");
  in >> ckpt.step;
  detail::expect_tag(in, "dim");
  std::size_t dim = 0;
  in >> dim;
  detail::expect_tag(in, "temperature");
  ckpt.policy.temperature = detail::read_hex_double(in);
  ckpt.policy.weights = detail::read_block(in, "weights");
  ckpt.policy.role_offsets[0] = detail::read_block(in, "offset_faithful");
  ckpt.policy.role_offsets[1] = detail::read_block(in, "offset_sneaky");
  if (ckpt.policy.weights.size() != dim)
    throw std::runtime_error("checkpoint dimension mismatch: " + path);
  return ckpt;
}

struct VerifierCheckpoint {
  std::int64_t step = 0;
  VerifierModel model;
};

inline void save_verifier(const std::string& path, const VerifierCheckpoint& ckpt) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write checkpoint: " + path);
  out << "dpvg-verifier v1\n";
  out << "step " << ckpt.step << '\n';
  out << "dim " << ckpt.model.weights.size() << '\n';
  detail::write_block(out, "bias", std::span<const double>(&ckpt.model.bias, 1));
  detail::write_block(out, "weights", ckpt.model.weights);
}

inline VerifierCheckpoint load_verifier(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read checkpoint: " + path);
  std::string magic, version;
  in >> magic >> version;
  if (magic != "dpvg-verifier" || version != "v1")
    throw std::runtime_error("not a verifier checkpoint: " + path);
  VerifierCheckpoint ckpt;
  detail::expect_tag(in, "step");
  in >> ckpt.step;
  detail::expect_tag(in, "dim");
  std::size_t dim = 0;
  in >> dim;
  const auto bias = detail::read_block(in, "bias");
  if (bias.size() != 1) throw std::runtime_error("bad verifier checkpoint: " + path);
  ckpt.model.bias = bias[0];
  ckpt.model.weights = detail::read_block(in, "weights");
  if (ckpt.model.weights.size() != dim)
    throw std::runtime_error("checkpoint dimension mismatch: " + path);
  return ckpt;
}

}  // namespace dpvg
