#pragma once

#include <algorithm>
#include <cstdint>
#include <cstdio>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "dpvg/game_core.hpp"
#include "dpvg/rng.hpp"

namespace dpvg {

// Synthetic arithmetic-chain problems with small, fully enumerable proof
// spaces. Answers live in [0, answer_range]; anything that leaves the range
// is rejected at generation time.

struct DomainConfig {
  int chain_length = 2;    // max operations per problem, 1..4
  int operand_range = 2;   // operands in [0, operand_range]
  std::vector<Op> ops{Op::Add, Op::Sub, Op::Mul};
  std::int64_t answer_range = 2;  // answers in [0, answer_range]
  std::size_t proof_cap = 64;     // max enumerated proofs per problem

  std::int64_t answer_count() const { return answer_range + 1; }

  void validate() const {
    if (chain_length < 1 || chain_length > 4)
      throw std::invalid_argument("domain.chain_length must be in 1..4");
    if (operand_range < 0)
      throw std::invalid_argument("domain.operand_range must be >= 0");
    if (answer_range < 1)
      throw std::invalid_argument("domain.answer_range must be >= 1");
    if (ops.empty()) throw std::invalid_argument("domain.ops must be nonempty");
  }
};

// Left-to-right evaluation of a chain. Returns nothing if any intermediate
// value leaves [0, answer_range]; such payloads never become problems.
inline std::optional<Answer> try_ground_truth(const Chain& payload,
                                              const DomainConfig& cfg) {
  std::int64_t value = payload.start;
  if (value < 0 || value > cfg.answer_range) return std::nullopt;
  for (const ChainOp& step : payload.ops) {
    value = apply_op(step.op, value, step.arg);
    if (value < 0 || value > cfg.answer_range) return std::nullopt;
  }
  return Answer{value};
}

inline Answer ground_truth(const Chain& payload) {
  std::int64_t value = payload.start;
  for (const ChainOp& step : payload.ops) value = apply_op(step.op, value, step.arg);
  return Answer{value};
}

// The canonical derivation: every chain step spelled out with its true
// running values, final answer equal to the ground truth.
inline Solution canonical_solution(const Chain& payload) {
  Solution z;
  std::int64_t value = payload.start;
  for (const ChainOp& step : payload.ops) {
    const std::int64_t next = apply_op(step.op, value, step.arg);
    z.steps.push_back({value, step.op, step.arg, next});
    value = next;
  }
  z.final = Answer{value};
  return z;
}

// ---------------------------------------------------------------------------
// Proof enumeration
// ---------------------------------------------------------------------------
// The proof space of a problem is every ordered subset of its chain steps,
// each included step carrying a claimed value from the answer range, crossed
// with a final answer from the answer range. This is the smallest space that
// contains both fully valid derivations and convincing wrong proofs (valid
// prefixes whose final answer is an intermediate value).

inline std::size_t proof_space_size(const Problem& problem, const DomainConfig& cfg) {
  const std::size_t a = static_cast<std::size_t>(cfg.answer_count());
  std::size_t variants = 1;
  for (std::size_t i = 0; i < problem.payload.ops.size(); ++i) variants *= 1 + a;
  return variants * a;
}

inline Enumeration enumerate_proofs(const Problem& problem, const DomainConfig& cfg) {
  if (cfg.proof_cap == 0)
    throw std::invalid_argument("enumerate_proofs: proof_cap must be positive");

  const Solution canon = canonical_solution(problem.payload);
  const std::int64_t a = cfg.answer_count();
  const std::size_t n_steps = canon.steps.size();

  Enumeration out;
  out.complete = true;

  // Step variants: per chain step, either skip it or include it with one of
  // the candidate claimed values. Built iteratively in a stable order.
  std::vector<std::vector<ProofStep>> variants{{}};
  for (std::size_t i = 0; i < n_steps; ++i) {
    std::vector<std::vector<ProofStep>> next;
    next.reserve(variants.size() * static_cast<std::size_t>(1 + a));
    for (const auto& prefix : variants) {
      next.push_back(prefix);  // step skipped
      for (std::int64_t claimed = 0; claimed <= cfg.answer_range; ++claimed) {
        auto with = prefix;
        ProofStep step = canon.steps[i];
        step.claimed = claimed;
        with.push_back(step);
        next.push_back(std::move(with));
      }
    }
    variants = std::move(next);
  }

  for (const auto& steps : variants) {
    for (std::int64_t final = 0; final <= cfg.answer_range; ++final) {
      if (out.proofs.size() >= cfg.proof_cap) {
        out.complete = false;
        break;
      }
      out.proofs.push_back({steps, Answer{final}});
    }
    if (!out.complete) break;
  }

  // Structurally identical proofs appear once. Possible when two chain steps
  // coincide exactly; order is normalized away by sorting.
  std::sort(out.proofs.begin(), out.proofs.end());
  out.proofs.erase(std::unique(out.proofs.begin(), out.proofs.end()),
                   out.proofs.end());
  return out;
}

// ---------------------------------------------------------------------------
// Features
// ---------------------------------------------------------------------------

struct FeatureVector {
  std::vector<double> values;
};

constexpr std::size_t kProofFeatureDim = 6;

// Feature layout:
//   0 step arithmetic validity fraction (empty proof -> 0)
//   1 chaining consistency fraction, anchored at the chain start (empty -> 0)
//   2 final answer equals last step's claimed value
//   3 proof length / chain length
//   4 |final| / answer_range
//   5 final == 0
inline FeatureVector extract_features(const Problem& problem, const Solution& z,
                                      const DomainConfig& cfg) {
  FeatureVector f;
  f.values.assign(kProofFeatureDim, 0.0);

  const std::size_t n = z.steps.size();
  if (n > 0) {
    std::size_t valid = 0;
    std::size_t chained = 0;
    for (std::size_t i = 0; i < n; ++i) {
      const ProofStep& s = z.steps[i];
      if (apply_op(s.op, s.lhs, s.rhs) == s.claimed) ++valid;
      const std::int64_t expected_lhs =
          i == 0 ? problem.payload.start : z.steps[i - 1].claimed;
      if (s.lhs == expected_lhs) ++chained;
    }
    f.values[0] = static_cast<double>(valid) / static_cast<double>(n);
    f.values[1] = static_cast<double>(chained) / static_cast<double>(n);
    f.values[2] = z.final.value == z.steps.back().claimed ? 1.0 : 0.0;
  }
  const std::size_t chain_len = std::max<std::size_t>(problem.payload.ops.size(), 1);
  f.values[3] = static_cast<double>(n) / static_cast<double>(chain_len);
  f.values[4] = static_cast<double>(std::abs(z.final.value)) /
                static_cast<double>(std::max<std::int64_t>(cfg.answer_range, 1));
  f.values[5] = z.final.value == 0 ? 1.0 : 0.0;
  return f;
}

// ---------------------------------------------------------------------------
// Dataset generation
// ---------------------------------------------------------------------------

struct Dataset {
  std::vector<Problem> train_translator;  // D_T
  std::vector<Problem> train_verifier;    // D_V
  std::vector<Problem> test;
};

namespace detail {

// One uniformly drawn payload candidate; may be invalid (range escape).
inline Chain draw_chain(const DomainConfig& cfg, Rng& rng) {
  Chain chain;
  chain.start = static_cast<std::int64_t>(rng.next_below(
      static_cast<std::uint64_t>(cfg.answer_range + 1)));
  const std::size_t len =
      1 + static_cast<std::size_t>(rng.next_below(static_cast<std::uint64_t>(cfg.chain_length)));
  for (std::size_t i = 0; i < len; ++i) {
    ChainOp op;
    op.op = cfg.ops[rng.next_below(cfg.ops.size())];
    op.arg = static_cast<std::int64_t>(
        rng.next_below(static_cast<std::uint64_t>(cfg.operand_range + 1)));
    chain.ops.push_back(op);
  }
  return chain;
}

inline Problem draw_problem(const DomainConfig& cfg, std::uint64_t seed,
                            const std::string& id) {
  // Rejection sampling: payload must stay in range and the proof space must
  // fit the cap. Ground truth always differs from some in-range answer
  // (answer_range >= 1), so the sneaky role is satisfiable by construction.
  for (std::uint64_t attempt = 0;; ++attempt) {
    Rng rng(derive_seed(seed, {attempt}));
    Chain chain = draw_chain(cfg, rng);
    const auto truth = try_ground_truth(chain, cfg);
    if (!truth) continue;
    Problem p{id, std::move(chain), *truth};
    if (proof_space_size(p, cfg) > cfg.proof_cap) continue;
    return p;
  }
}

}  // namespace detail

// Deterministic split: n training problems divided equally into D_T and D_V,
// plus a disjoint test set. Problems are drawn i.i.d.; the toy domain is
// small, so payloads may repeat across records.
inline Dataset generate_dataset(const DomainConfig& cfg, std::size_t n,
                                std::uint64_t seed, std::size_t n_test) {
  cfg.validate();
  if (n < 2 || n % 2 != 0)
    throw std::invalid_argument("generate_dataset: n must be even and >= 2");

  auto make = [&](std::uint64_t stream, std::size_t count, const char* prefix) {
    std::vector<Problem> problems;
    problems.reserve(count);
    for (std::size_t i = 0; i < count; ++i) {
      char id[32];
      std::snprintf(id, sizeof id, "%s%06zu", prefix, i);
      problems.push_back(
          detail::draw_problem(cfg, derive_seed(seed, {stream, i}), id));
    }
    return problems;
  };

  Dataset ds;
  ds.train_translator = make(1, n / 2, "t");
  ds.train_verifier = make(2, n / 2, "v");
  ds.test = make(3, n_test, "x");
  return ds;
}

}  // namespace dpvg
