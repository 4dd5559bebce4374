#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <functional>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace dpvg {

// ---------------------------------------------------------------------------
// Domain types shared by every module: problems, structured proofs, the two
// player roles, and the abstract loss/reward interfaces the game is defined
// over.
// ---------------------------------------------------------------------------

struct Answer {
  std::int64_t value = 0;
  friend bool operator==(const Answer&, const Answer&) = default;
  friend auto operator<=>(const Answer&, const Answer&) = default;
};

enum class Op : std::uint8_t { Add, Sub, Mul };

inline std::int64_t apply_op(Op op, std::int64_t lhs, std::int64_t rhs) {
  switch (op) {
    case Op::Add: return lhs + rhs;
    case Op::Sub: return lhs - rhs;
    case Op::Mul: return lhs * rhs;
  }
  throw std::logic_error("apply_op: bad operator");
}

inline const char* op_name(Op op) {
  switch (op) {
    case Op::Add: return "add";
    case Op::Sub: return "sub";
    case Op::Mul: return "mul";
  }
  return "?";
}

struct ChainOp {
  Op op = Op::Add;
  std::int64_t arg = 0;
  friend bool operator==(const ChainOp&, const ChainOp&) = default;
  friend auto operator<=>(const ChainOp&, const ChainOp&) = default;
};

// Problem statement: a start value pushed through a short chain of arithmetic
// operations, evaluated left to right.
struct Chain {
  std::int64_t start = 0;
  std::vector<ChainOp> ops;
  friend bool operator==(const Chain&, const Chain&) = default;
  friend auto operator<=>(const Chain&, const Chain&) = default;
};

struct Problem {
  std::string id;
  Chain payload;
  Answer truth;
};

// One claimed derivation step. Invalid steps are deliberately representable;
// sneaky proofs are built out of them.
struct ProofStep {
  std::int64_t lhs = 0;
  Op op = Op::Add;
  std::int64_t rhs = 0;
  std::int64_t claimed = 0;
  friend bool operator==(const ProofStep&, const ProofStep&) = default;
  friend auto operator<=>(const ProofStep&, const ProofStep&) = default;
};

struct Solution {
  std::vector<ProofStep> steps;
  Answer final;
  friend bool operator==(const Solution&, const Solution&) = default;
  friend auto operator<=>(const Solution&, const Solution&) = default;
};

struct SolverOutput {
  Solution solution;
  int correct = 0;  // cached correctness indicator, validated on load
};

enum class Role : std::uint8_t { Faithful, Sneaky };

inline const char* role_name(Role r) {
  return r == Role::Faithful ? "faithful" : "sneaky";
}

// ---------------------------------------------------------------------------
// Indicators
// ---------------------------------------------------------------------------

// 1 iff the solution's final answer matches the ground truth. Steps are
// ignored entirely.
inline int eval_correct(const Problem& problem, const Solution& z) {
  return z.final == problem.truth ? 1 : 0;
}

// 1 iff the solution's final answer matches the solver's final answer,
// independent of the ground truth.
inline int eval_faithful(const SolverOutput& s, const Solution& z) {
  return z.final == s.solution.final ? 1 : 0;
}

inline SolverOutput make_solver_output(const Problem& problem, Solution z) {
  SolverOutput out;
  out.correct = eval_correct(problem, z);
  out.solution = std::move(z);
  return out;
}

// ---------------------------------------------------------------------------
// Loss / reward specifications
// ---------------------------------------------------------------------------

// l(v, c): [0,1] x {0,1} -> R, minimized (value 0) exactly at v = c.
struct LossSpec {
  std::string name;
  std::function<double(double, int)> eval;
  double operator()(double v, int c) const { return eval(v, c); }
};

// r(v, q): [0,1] x {0,1} -> R with r(v1, 1) > r(v2, 0) for all v1, v2 and
// r(., 1) strictly increasing.
struct RewardSpec {
  std::string name;
  std::function<double(double, int)> eval;
  double operator()(double v, int q) const { return eval(v, q); }
};

inline LossSpec cross_entropy_loss() {
  return {"cross_entropy", [](double v, int c) {
            // Exact zero at v == c; unbounded at the wrong extreme.
            if (c == 1) return v > 0.0 ? -std::log(v) : HUGE_VAL;
            return v < 1.0 ? -std::log1p(-v) : HUGE_VAL;
          }};
}

inline LossSpec squared_loss() {
  return {"squared", [](double v, int c) {
            const double d = v - static_cast<double>(c);
            return d * d;
          }};
}

// Aligned outputs earn the raw verifier score, misaligned ones a flat
// negative penalty. Satisfies the reward axioms whenever r_role < 0.
inline RewardSpec linear_reward(double r_role = -2.0) {
  return {"linear", [r_role](double v, int q) { return q == 1 ? v : r_role; }};
}

// Variant with a sloped misalignment branch; the aligned branch still
// dominates pointwise. Exercises the freedom the axioms leave on r(., 0).
inline RewardSpec sloped_reward(double floor = -1.5, double slope = 0.25) {
  if (floor + slope >= 0.0)
    throw std::invalid_argument("sloped_reward: misaligned branch must stay below 0");
  return {"sloped",
          [floor, slope](double v, int q) { return q == 1 ? v : floor + slope * v; }};
}

// ---------------------------------------------------------------------------
// Player utilities
// ---------------------------------------------------------------------------

struct GameExample {
  Problem problem;
  SolverOutput solver;
};

// R_V: negative mean classification loss over the faithful and sneaky
// channels. Always <= 0; equals 0 iff the verifier scores every translated
// output exactly at its correctness indicator.
template <class Verifier, class Faithful, class Sneaky>
double verifier_utility(Verifier&& v, Faithful&& tau, Sneaky&& tau_s,
                        std::span<const GameExample> data, const LossSpec& l) {
  if (data.empty()) throw std::invalid_argument("verifier_utility: empty dataset");
  double total = 0.0;
  for (const GameExample& ex : data) {
    const Solution z = tau(ex.problem, ex.solver);
    const Solution zs = tau_s(ex.problem, ex.solver, ex.problem.truth);
    total += l(v(ex.problem, z), eval_correct(ex.problem, z));
    total += l(v(ex.problem, zs), eval_correct(ex.problem, zs));
  }
  return -0.5 * total / static_cast<double>(data.size());
}

// R_T: mean reward over the two channels. The faithful channel is judged on
// answer agreement with the solver, the sneaky channel on producing a wrong
// answer.
template <class Verifier, class Faithful, class Sneaky>
double translator_utility(Faithful&& tau, Sneaky&& tau_s, Verifier&& v,
                          std::span<const GameExample> data, const RewardSpec& r) {
  if (data.empty()) throw std::invalid_argument("translator_utility: empty dataset");
  double total = 0.0;
  for (const GameExample& ex : data) {
    const Solution z = tau(ex.problem, ex.solver);
    const Solution zs = tau_s(ex.problem, ex.solver, ex.problem.truth);
    total += r(v(ex.problem, z), eval_faithful(ex.solver, z));
    total += r(v(ex.problem, zs), 1 - eval_correct(ex.problem, zs));
  }
  return 0.5 * total / static_cast<double>(data.size());
}

// ---------------------------------------------------------------------------
// Checkability predicates
// ---------------------------------------------------------------------------

struct Violation {
  std::string problem_id;
  Solution solution;
  double score = 0.0;
};

struct CheckReport {
  bool holds = true;
  std::vector<Violation> violations;
  double tolerance = 0.0;
  // False when an enumeration cap was hit and the check did not cover the
  // whole space.
  bool complete = true;
};

// Completeness: every correct translated output must be scored >= 1 - eps.
template <class Verifier, class Faithful>
CheckReport check_completeness(Verifier&& v, Faithful&& tau,
                               std::span<const GameExample> data, double eps) {
  if (eps < 0.0 || eps >= 0.5)
    throw std::invalid_argument("check_completeness: eps must be in [0, 0.5)");
  CheckReport report;
  report.tolerance = eps;
  for (const GameExample& ex : data) {
    Solution z = tau(ex.problem, ex.solver);
    if (eval_correct(ex.problem, z) == 1) {
      const double score = v(ex.problem, z);
      if (score < 1.0 - eps)
        report.violations.push_back({ex.problem.id, std::move(z), score});
    }
  }
  report.holds = report.violations.empty();
  return report;
}

struct Enumeration {
  std::vector<Solution> proofs;
  bool complete = true;
};

// Soundness: every wrong-answer proof in the enumerated space must be scored
// <= eps. An incomplete enumeration is flagged, never silently accepted.
template <class Verifier, class Enumerator>
CheckReport check_soundness(Verifier&& v, std::span<const GameExample> data,
                            Enumerator&& proof_space, double eps) {
  if (eps < 0.0 || eps >= 0.5)
    throw std::invalid_argument("check_soundness: eps must be in [0, 0.5)");
  CheckReport report;
  report.tolerance = eps;
  for (const GameExample& ex : data) {
    const Enumeration en = proof_space(ex.problem);
    if (!en.complete) report.complete = false;
    for (const Solution& z : en.proofs) {
      if (eval_correct(ex.problem, z) == 0) {
        const double score = v(ex.problem, z);
        if (score > eps) report.violations.push_back({ex.problem.id, z, score});
      }
    }
  }
  report.holds = report.violations.empty();
  return report;
}

// Grid validation of the loss/reward axioms. Violations are reported, not
// thrown; the problem_id field carries a description of the failed check.
inline CheckReport validate_specs(const LossSpec& l, const RewardSpec& r,
                                  std::span<const double> grid) {
  if (grid.size() < 11)
    throw std::invalid_argument("validate_specs: grid needs >= 11 points");
  bool has0 = false, has1 = false;
  for (double g : grid) {
    has0 = has0 || g == 0.0;
    has1 = has1 || g == 1.0;
  }
  if (!has0 || !has1)
    throw std::invalid_argument("validate_specs: grid must include 0 and 1");

  CheckReport report;
  auto flag = [&](std::string what, double score) {
    report.violations.push_back({std::move(what), Solution{}, score});
  };
  char buf[128];
  for (int c : {0, 1}) {
    const double at_c = l(static_cast<double>(c), c);
    if (at_c != 0.0) {
      std::snprintf(buf, sizeof buf, "loss: l(%d,%d) != 0", c, c);
      flag(buf, at_c);
    }
    for (double g : grid) {
      if (g == static_cast<double>(c)) continue;
      const double val = l(g, c);
      if (!(val > 0.0)) {
        std::snprintf(buf, sizeof buf, "loss: l(%.4f,%d) not > 0", g, c);
        flag(buf, val);
      }
    }
  }
  for (double v1 : grid) {
    for (double v2 : grid) {
      if (!(r(v1, 1) > r(v2, 0))) {
        std::snprintf(buf, sizeof buf, "reward: r(%.4f,1) <= r(%.4f,0)", v1, v2);
        flag(buf, r(v1, 1) - r(v2, 0));
      }
    }
  }
  std::vector<double> sorted(grid.begin(), grid.end());
  std::sort(sorted.begin(), sorted.end());
  for (std::size_t i = 0; i + 1 < sorted.size(); ++i) {
    if (sorted[i] == sorted[i + 1]) continue;
    if (!(r(sorted[i + 1], 1) > r(sorted[i], 1))) {
      std::snprintf(buf, sizeof buf, "reward: r(.,1) not increasing at %.4f",
                    sorted[i + 1]);
      flag(buf, r(sorted[i + 1], 1) - r(sorted[i], 1));
    }
  }
  report.holds = report.violations.empty();
  return report;
}

}  // namespace dpvg
