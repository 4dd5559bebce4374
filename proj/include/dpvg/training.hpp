#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "dpvg/game_core.hpp"
#include "dpvg/policies.hpp"
#include "dpvg/rng.hpp"
#include "dpvg/toy_domain.hpp"

namespace dpvg {

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

struct SolverTrainConfig {
  double temperature = 0.7;
  int epochs = 8;
  double learning_rate = 2.0;
  int batch_size = 28;
  int k_completions = 4;
  double kl_beta = 0.001;
};

struct TranslatorTrainConfig {
  double temperature = 1.0;
  int epochs = 8;
  double learning_rate = 2.0;
  int batch_size = 28;
  int k_completions = 4;
  double kl_beta = 0.001;
  bool shared_parameters = true;
};

struct VerifierTrainConfig {
  int epochs = 4;
  double learning_rate = 0.5;
  int batch_size = 32;
  double lambda_reg = 0.005;
};

struct GameConfig {
  int rounds = 8;
  int samples_per_problem = 16;
  double r_role = -2.0;
  double r_score = -2.0;
  double ema_alpha = 0.02;
};

struct DatasetConfig {
  std::size_t n = 256;
  std::size_t n_test = 64;
  DomainConfig domain;
};

struct ExperimentConfig {
  std::uint64_t seed = 1;
  DatasetConfig dataset;
  SolverTrainConfig solver;
  TranslatorTrainConfig translator;
  VerifierTrainConfig verifier;
  GameConfig game;

  // Returns dotted-path diagnostics; empty means valid.
  std::vector<std::string> validate() const {
    std::vector<std::string> errors;
    auto require = [&](bool ok, const char* msg) {
      if (!ok) errors.emplace_back(msg);
    };
    require(dataset.n >= 2 && dataset.n % 2 == 0, "dataset.n: must be even and >= 2");
    require(dataset.n_test >= 1, "dataset.n_test: must be >= 1");
    try {
      dataset.domain.validate();
    } catch (const std::exception& e) {
      errors.emplace_back(std::string("dataset.") + e.what());
    }
    require(game.rounds >= 1, "game.rounds: must be >= 1");
    require(game.samples_per_problem >= 1, "game.samples_per_problem: must be >= 1");
    require(game.r_role < 0.0, "game.r_role: must be < 0");
    require(game.r_score < 0.0, "game.r_score: must be < 0");
    require(game.ema_alpha > 0.0 && game.ema_alpha <= 1.0,
            "game.ema_alpha: must be in (0, 1]");
    require(solver.k_completions >= 2, "solver.k_completions: must be >= 2");
    require(translator.k_completions >= 2, "translator.k_completions: must be >= 2");
    require(verifier.lambda_reg >= 0.0, "verifier.lambda_reg: must be >= 0");
    require(solver.temperature > 0.0, "solver.temperature: must be > 0");
    require(translator.temperature > 0.0, "translator.temperature: must be > 0");
    require(solver.epochs >= 1, "solver.epochs: must be >= 1");
    require(translator.epochs >= 1, "translator.epochs: must be >= 1");
    require(verifier.epochs >= 1, "verifier.epochs: must be >= 1");
    require(solver.batch_size >= 1, "solver.batch_size: must be >= 1");
    require(translator.batch_size >= 1, "translator.batch_size: must be >= 1");
    require(verifier.batch_size >= 1, "verifier.batch_size: must be >= 1");
    require(solver.learning_rate > 0.0, "solver.learning_rate: must be > 0");
    require(translator.learning_rate > 0.0, "translator.learning_rate: must be > 0");
    require(verifier.learning_rate > 0.0, "verifier.learning_rate: must be > 0");
    require(solver.kl_beta >= 0.0, "solver.kl_beta: must be >= 0");
    require(translator.kl_beta >= 0.0, "translator.kl_beta: must be >= 0");
    return errors;
  }
};

// ---------------------------------------------------------------------------
// Primitive operations
// ---------------------------------------------------------------------------

// Leave-one-out advantages: a_k = r_k - mean(rewards without r_k).
// The advantages of any input sum to zero.
inline std::vector<double> rloo_advantages(std::span<const double> rewards) {
  const std::size_t k = rewards.size();
  if (k < 2) throw std::invalid_argument("rloo_advantages: need K >= 2");
  const double total = std::accumulate(rewards.begin(), rewards.end(), 0.0);
  std::vector<double> adv(k);
  for (std::size_t i = 0; i < k; ++i)
    adv[i] = rewards[i] - (total - rewards[i]) / static_cast<double>(k - 1);
  return adv;
}

// Zero-mean, unit-variance normalization with the population (divide by K)
// standard deviation, which bounds |output| by sqrt(K-1). All-equal input
// maps to all zeros.
inline std::vector<double> normalize_logits(std::span<const double> logits) {
  const std::size_t k = logits.size();
  if (k < 2) throw std::invalid_argument("normalize_logits: need K >= 2");
  const double mean =
      std::accumulate(logits.begin(), logits.end(), 0.0) / static_cast<double>(k);
  double var = 0.0;
  for (double l : logits) var += (l - mean) * (l - mean);
  var /= static_cast<double>(k);
  std::vector<double> out(k, 0.0);
  if (var > 0.0) {
    const double inv_std = 1.0 / std::sqrt(var);
    for (std::size_t i = 0; i < k; ++i) out[i] = (logits[i] - mean) * inv_std;
  }
  return out;
}

// Spec'd entry point: scores are verifier probabilities, normalized in logit
// space.
inline std::vector<double> normalize_scores(std::span<const double> scores) {
  std::vector<double> logits(scores.size());
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (!(scores[i] > 0.0 && scores[i] < 1.0))
      throw std::invalid_argument("normalize_scores: scores must lie in (0,1)");
    logits[i] = logit(scores[i]);
  }
  return normalize_logits(logits);
}

// Role alignment bit: the faithful translator must keep the solver's answer,
// the sneaky translator must land on a wrong one.
inline int role_alignment(Role role, const Problem& x, const SolverOutput& s,
                          const Solution& z) {
  if (role == Role::Faithful) return eval_faithful(s, z);
  return 1 - eval_correct(x, z);
}

inline double src_reward_impl(Role role, int q, int c_s, double v_norm,
                              double r_role, double r_score) {
  if (q == 0) return r_role;
  if (v_norm <= 0.0) return r_score;
  if (role == Role::Sneaky) return v_norm;
  return (2.0 * static_cast<double>(c_s) - 1.0) * v_norm;
}

// Signed relative convincingness reward over normalized verifier logits.
inline double src_reward(Role role, int q, int c_s, double v_norm,
                         const GameConfig& cfg) {
  return src_reward_impl(role, q, c_s, v_norm, cfg.r_role, cfg.r_score);
}

// Coupled-game variant: the helpful prover is judged on correctness and paid
// raw convincingness, with no solver to flip the sign against.
inline double coupled_reward(int q, double v_norm, const GameConfig& cfg) {
  if (q == 0) return cfg.r_role;
  if (v_norm <= 0.0) return cfg.r_score;
  return v_norm;
}

struct ScoredExample {
  FeatureVector features;
  int correct = 0;
};

inline double binary_cross_entropy(double score, int label) {
  if (label == 1) return score > 0.0 ? -std::log(score) : HUGE_VAL;
  return score < 1.0 ? -std::log1p(-score) : HUGE_VAL;
}

// Mean cross-entropy plus lambda * score^2 over a batch.
inline double verifier_loss(std::span<const ScoredExample> batch,
                            const VerifierModel& v, double lambda_reg) {
  if (batch.empty()) throw std::invalid_argument("verifier_loss: empty batch");
  double total = 0.0;
  for (const ScoredExample& ex : batch) {
    const double score = verifier_score(v, ex.features);
    total += binary_cross_entropy(score, ex.correct) + lambda_reg * score * score;
  }
  return total / static_cast<double>(batch.size());
}

// Round mixture: weight on round i proportional to 2^i, normalized over
// rounds 0..t.
inline std::vector<double> mixture_weights(int t) {
  if (t < 0) throw std::invalid_argument("mixture_weights: t must be >= 0");
  std::vector<double> w(static_cast<std::size_t>(t) + 1);
  const double denom = std::ldexp(1.0, t + 1) - 1.0;  // 2^(t+1) - 1
  for (int i = 0; i <= t; ++i)
    w[static_cast<std::size_t>(i)] = std::ldexp(1.0, i) / denom;
  return w;
}

// ---------------------------------------------------------------------------
// EMA early stopping
// ---------------------------------------------------------------------------

struct EmaTracker {
  double alpha = 0.02;
  double value = 0.0;
  bool initialized = false;

  void update(double obs) {
    value = alpha * obs + (1.0 - alpha) * value;
    initialized = true;
  }
};

struct StepScores {
  // Mean verifier logits for this optimizer step, restricted to episodes
  // whose solver output was correct. Absent when the step had none.
  std::optional<double> sneaky;
  std::optional<double> faithful;
};

// Updates both trackers and reports whether the sneaky EMA has overtaken the
// faithful one.
inline bool early_stop_update(EmaTracker& tracker_sneaky, EmaTracker& tracker_faithful,
                              const StepScores& scores) {
  if (tracker_sneaky.alpha != tracker_faithful.alpha)
    throw std::invalid_argument("early_stop_update: trackers must share alpha");
  if (scores.sneaky) tracker_sneaky.update(*scores.sneaky);
  if (scores.faithful) tracker_faithful.update(*scores.faithful);
  return tracker_sneaky.value > tracker_faithful.value;
}

// ---------------------------------------------------------------------------
// Problem workspaces
// ---------------------------------------------------------------------------
// Everything about one problem that the phases reuse: the enumerated proof
// space, the verifier-facing features, and the role-conditioned candidate
// views for each possible conditioning answer.

constexpr std::size_t kTranslatorFeatureDim = kProofFeatureDim + 2;

struct ProblemContext {
  Problem problem;
  std::vector<Solution> proofs;
  std::vector<FeatureVector> proof_features;  // verifier view, 6-dim
  std::vector<int> proof_correct;
  // Indexed by conditioning answer value 0..answer_range, then proof.
  std::vector<std::vector<FeatureVector>> faithful_view;
  std::vector<std::vector<FeatureVector>> sneaky_view;
  // Unconditioned prover views for the coupled baseline.
  std::vector<FeatureVector> helpful_view;
  std::vector<FeatureVector> sneaky_unconditioned_view;
};

inline FeatureVector translator_features(const FeatureVector& base,
                                         const Solution& z,
                                         std::optional<Answer> conditioning_answer,
                                         std::optional<Answer> truth) {
  FeatureVector f = base;
  f.values.push_back(
      conditioning_answer && z.final == *conditioning_answer ? 1.0 : 0.0);
  f.values.push_back(truth && !(z.final == *truth) ? 1.0 : 0.0);
  return f;
}

inline ProblemContext build_problem_context(Problem problem, const DomainConfig& cfg) {
  ProblemContext ctx;
  ctx.problem = std::move(problem);
  Enumeration en = enumerate_proofs(ctx.problem, cfg);
  if (!en.complete)
    throw std::runtime_error("proof space exceeds proof_cap for problem " +
                             ctx.problem.id);
  ctx.proofs = std::move(en.proofs);
  ctx.proof_features.reserve(ctx.proofs.size());
  ctx.proof_correct.reserve(ctx.proofs.size());
  for (const Solution& z : ctx.proofs) {
    ctx.proof_features.push_back(extract_features(ctx.problem, z, cfg));
    ctx.proof_correct.push_back(eval_correct(ctx.problem, z));
  }
  const std::int64_t answers = cfg.answer_count();
  ctx.faithful_view.resize(static_cast<std::size_t>(answers));
  ctx.sneaky_view.resize(static_cast<std::size_t>(answers));
  for (std::int64_t a = 0; a < answers; ++a) {
    auto& fv = ctx.faithful_view[static_cast<std::size_t>(a)];
    auto& sv = ctx.sneaky_view[static_cast<std::size_t>(a)];
    fv.reserve(ctx.proofs.size());
    sv.reserve(ctx.proofs.size());
    for (std::size_t i = 0; i < ctx.proofs.size(); ++i) {
      fv.push_back(translator_features(ctx.proof_features[i], ctx.proofs[i],
                                       Answer{a}, std::nullopt));
      sv.push_back(translator_features(ctx.proof_features[i], ctx.proofs[i],
                                       Answer{a}, ctx.problem.truth));
    }
  }
  ctx.helpful_view.reserve(ctx.proofs.size());
  ctx.sneaky_unconditioned_view.reserve(ctx.proofs.size());
  for (std::size_t i = 0; i < ctx.proofs.size(); ++i) {
    ctx.helpful_view.push_back(translator_features(
        ctx.proof_features[i], ctx.proofs[i], std::nullopt, std::nullopt));
    ctx.sneaky_unconditioned_view.push_back(translator_features(
        ctx.proof_features[i], ctx.proofs[i], std::nullopt, ctx.problem.truth));
  }
  return ctx;
}

inline std::vector<ProblemContext> build_contexts(std::span<const Problem> problems,
                                                  const DomainConfig& cfg) {
  std::vector<ProblemContext> out;
  out.reserve(problems.size());
  for (const Problem& p : problems) out.push_back(build_problem_context(p, cfg));
  return out;
}

struct SolverSample {
  std::size_t proof_index = 0;
  Answer final;
  int correct = 0;
};

inline SolverOutput to_solver_output(const ProblemContext& ctx,
                                     const SolverSample& s) {
  return SolverOutput{ctx.proofs[s.proof_index], s.correct};
}

// Fixed per-problem solver outputs, sampled once and reused across rounds.
inline std::vector<std::vector<SolverSample>> sample_solver_outputs(
    std::span<const ProblemContext> ctxs, const SoftmaxPolicy& solver,
    int per_problem, std::uint64_t seed) {
  std::vector<std::vector<SolverSample>> out(ctxs.size());
  for (std::size_t i = 0; i < ctxs.size(); ++i) {
    const auto probs = policy_distribution(solver, ctxs[i].proof_features);
    Rng rng(derive_seed(seed, {0x501fe2u, i}));
    out[i].reserve(static_cast<std::size_t>(per_problem));
    for (int j = 0; j < per_problem; ++j) {
      const std::size_t idx = rng.next_weighted(probs);
      out[i].push_back({idx, ctxs[i].proofs[idx].final, ctxs[i].proof_correct[idx]});
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Translator parameterization
// ---------------------------------------------------------------------------
// Shared mode: one weight vector plus per-role offsets, both receiving the
// gradient of episodes played in that role. Separate mode: two independent
// policies.

struct TranslatorPair {
  bool shared = true;
  SoftmaxPolicy shared_policy;
  SoftmaxPolicy faithful;
  SoftmaxPolicy sneaky;

  static TranslatorPair base(std::size_t dim, double temperature, bool shared_params) {
    TranslatorPair t;
    t.shared = shared_params;
    t.shared_policy = SoftmaxPolicy::zeros(dim, temperature, true);
    t.faithful = SoftmaxPolicy::zeros(dim, temperature, false);
    t.sneaky = SoftmaxPolicy::zeros(dim, temperature, false);
    return t;
  }

  double temperature() const { return shared ? shared_policy.temperature : faithful.temperature; }

  std::vector<double> distribution(Role role,
                                   std::span<const FeatureVector> feats) const {
    if (shared) return policy_distribution(shared_policy, feats, role);
    return policy_distribution(role == Role::Faithful ? faithful : sneaky, feats);
  }

  void apply_gradient(Role role, std::span<const double> grad, double step) {
    if (shared) {
      auto& off = shared_policy.role_offsets[static_cast<std::size_t>(role)];
      for (std::size_t d = 0; d < grad.size(); ++d) {
        shared_policy.weights[d] += step * grad[d];
        off[d] += step * grad[d];
      }
    } else {
      auto& w = (role == Role::Faithful ? faithful : sneaky).weights;
      for (std::size_t d = 0; d < grad.size(); ++d) w[d] += step * grad[d];
    }
  }

  // Flattened single-role policy (effective weights), used for checkpoints.
  SoftmaxPolicy snapshot(Role role) const {
    if (!shared) return role == Role::Faithful ? faithful : sneaky;
    SoftmaxPolicy p;
    p.temperature = shared_policy.temperature;
    p.weights = shared_policy.effective_weights(role);
    return p;
  }
};

// ---------------------------------------------------------------------------
// Metrics
// ---------------------------------------------------------------------------

struct MetricsRow {
  std::int64_t step = 0;  // global optimizer step within the run
  int round = 0;
  std::string phase;  // "solver" | "translator" | "verifier"
  std::string role;   // "solver" | "faithful" | "sneaky" | "verifier"
  double verifier_logit_mean = 0.0;
  double faithfulness = 0.0;
  double sneaky_success = 0.0;
  double accuracy = 0.0;
  double reward_mean = 0.0;
  double loss = 0.0;
};

using MetricsSink = std::function<void(const MetricsRow&)>;

inline void emit(const MetricsSink& sink, const MetricsRow& row) {
  if (sink) sink(row);
}

// ---------------------------------------------------------------------------
// Round buffer
// ---------------------------------------------------------------------------

struct BufferEntry {
  std::size_t problem_index = 0;
  Role role = Role::Faithful;
  std::size_t proof_index = 0;
  int label = 0;  // correctness of the stored output
};

struct RoundBuffer {
  std::vector<std::vector<BufferEntry>> rounds;

  void push_round(std::vector<BufferEntry> entries) {
    rounds.push_back(std::move(entries));
  }
  std::size_t total() const {
    std::size_t n = 0;
    for (const auto& r : rounds) n += r.size();
    return n;
  }
};

// ---------------------------------------------------------------------------
// Verifier training phase
// ---------------------------------------------------------------------------

struct VerifierPhaseResult {
  VerifierModel model;
  std::vector<double> step_losses;
  std::int64_t steps = 0;
};

// Minibatch SGD on cross-entropy + lambda * v^2 over a 2^i round mixture.
// Each batch draws its round per the mixture weights, then an example
// uniformly within the round; the verifier starts from the base model.
inline VerifierPhaseResult train_verifier_phase(
    int t, const RoundBuffer& buf, std::span<const ProblemContext> ctxs,
    const VerifierTrainConfig& cfg, std::uint64_t seed,
    const MetricsSink& sink = {}, int metrics_round = -1,
    std::int64_t step_offset = 0) {
  if (buf.rounds.size() < static_cast<std::size_t>(t) + 1)
    throw std::invalid_argument("train_verifier_phase: missing round data");
  for (int i = 0; i <= t; ++i)
    if (buf.rounds[static_cast<std::size_t>(i)].empty())
      throw std::invalid_argument("train_verifier_phase: empty round buffer");

  const std::vector<double> weights = mixture_weights(t);
  std::size_t total_examples = 0;
  for (int i = 0; i <= t; ++i)
    total_examples += buf.rounds[static_cast<std::size_t>(i)].size();

  const std::size_t dim = kProofFeatureDim;
  VerifierPhaseResult result;
  result.model = VerifierModel::zeros(dim);

  const std::int64_t steps =
      (static_cast<std::int64_t>(cfg.epochs) * static_cast<std::int64_t>(total_examples) +
       cfg.batch_size - 1) /
      cfg.batch_size;
  Rng rng(derive_seed(seed, {0x7e41f1e4, static_cast<std::uint64_t>(t)}));

  std::vector<double> grad_w(dim, 0.0);
  for (std::int64_t step = 0; step < steps; ++step) {
    std::fill(grad_w.begin(), grad_w.end(), 0.0);
    double grad_b = 0.0;
    double batch_loss = 0.0;
    double batch_logit = 0.0;
    int batch_hits = 0;
    for (int b = 0; b < cfg.batch_size; ++b) {
      const std::size_t round = rng.next_weighted(weights);
      const auto& entries = buf.rounds[round];
      const BufferEntry& e = entries[rng.next_below(entries.size())];
      const FeatureVector& f = ctxs[e.problem_index].proof_features[e.proof_index];
      const double z = verifier_logit(result.model, f);
      const double score = sigmoid(z);
      batch_loss += binary_cross_entropy(score, e.label) +
                    cfg.lambda_reg * score * score;
      batch_logit += z;
      batch_hits += (score > 0.5 ? 1 : 0) == e.label ? 1 : 0;
      // d/dlogit [CE + lambda v^2] = (v - c) + 2 lambda v^2 (1 - v)
      const double dloss = (score - e.label) +
                           2.0 * cfg.lambda_reg * score * score * (1.0 - score);
      for (std::size_t d = 0; d < dim; ++d) grad_w[d] += dloss * f.values[d];
      grad_b += dloss;
    }
    const double scale = cfg.learning_rate / cfg.batch_size;
    for (std::size_t d = 0; d < dim; ++d) result.model.weights[d] -= scale * grad_w[d];
    result.model.bias -= scale * grad_b;
    result.step_losses.push_back(batch_loss / cfg.batch_size);

    MetricsRow row;
    row.step = step_offset + step;
    row.round = metrics_round;
    row.phase = "verifier";
    row.role = "verifier";
    row.verifier_logit_mean = batch_logit / cfg.batch_size;
    row.accuracy = static_cast<double>(batch_hits) / cfg.batch_size;
    row.loss = batch_loss / cfg.batch_size;
    emit(sink, row);
  }
  result.steps = steps;
  return result;
}

// ---------------------------------------------------------------------------
// Translator / prover training phase (RLOO)
// ---------------------------------------------------------------------------

enum class GameMode {
  Decoupled,  // frozen solver, faithfulness-aligned reward
  Coupled,    // no solver; the helpful prover is judged on correctness
};

struct TranslatorPhaseResult {
  TranslatorPair policies;
  std::int64_t steps = 0;
  std::int64_t crossing_step = -1;  // 1-based step at which early stop fired
  bool stopped_early = false;
  EmaTracker ema_faithful;
  EmaTracker ema_sneaky;
};

// One checkability round of RLOO for both roles, freshly initialized from the
// base policy. Roles are drawn with equal probability per episode; rewards
// use group-normalized verifier logits; training stops early once the sneaky
// EMA overtakes the faithful one (after a one-epoch burn-in).
inline TranslatorPhaseResult train_translator_phase(
    int t, const VerifierModel& verifier, std::span<const ProblemContext> ctxs,
    const std::vector<std::vector<SolverSample>>* solver_samples,
    const TranslatorTrainConfig& cfg, const GameConfig& game, std::uint64_t seed,
    GameMode mode = GameMode::Decoupled, const MetricsSink& sink = {},
    std::int64_t step_offset = 0,
    const std::function<double(const TranslatorPair&)>& accuracy_fn = {}) {
  if (t < 1)
    throw std::invalid_argument("train_translator_phase: rounds start at t=1");
  if (cfg.k_completions < 2)
    throw std::invalid_argument("train_translator_phase: K must be >= 2");
  if (mode == GameMode::Decoupled && solver_samples == nullptr)
    throw std::invalid_argument("train_translator_phase: missing solver samples");

  TranslatorPhaseResult result;
  result.policies = TranslatorPair::base(kTranslatorFeatureDim, cfg.temperature,
                                         cfg.shared_parameters);
  result.ema_faithful.alpha = game.ema_alpha;
  result.ema_sneaky.alpha = game.ema_alpha;

  // Verifier is frozen for the whole phase; cache its logits per proof.
  std::vector<std::vector<double>> vlogits(ctxs.size());
  for (std::size_t i = 0; i < ctxs.size(); ++i) {
    vlogits[i].reserve(ctxs[i].proofs.size());
    for (const FeatureVector& f : ctxs[i].proof_features)
      vlogits[i].push_back(verifier_logit(verifier, f));
  }

  Rng rng(derive_seed(seed, {0x7a5137, static_cast<std::uint64_t>(t)}));
  const std::size_t n = ctxs.size();
  const std::size_t k = static_cast<std::size_t>(cfg.k_completions);
  const std::int64_t steps_per_epoch =
      (static_cast<std::int64_t>(n) + cfg.batch_size - 1) / cfg.batch_size;
  const std::int64_t burn_in = steps_per_epoch;

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);

  std::int64_t step = 0;
  bool done = false;
  for (int epoch = 0; epoch < cfg.epochs && !done; ++epoch) {
    // Fisher-Yates with the phase stream.
    for (std::size_t i = n; i > 1; --i)
      std::swap(order[i - 1], order[rng.next_below(i)]);

    for (std::size_t pos = 0; pos < n && !done; pos += cfg.batch_size) {
      const std::size_t batch_end = std::min(n, pos + cfg.batch_size);
      const std::size_t batch_n = batch_end - pos;

      std::array<std::vector<double>, 2> grad{
          std::vector<double>(kTranslatorFeatureDim, 0.0),
          std::vector<double>(kTranslatorFeatureDim, 0.0)};
      struct RoleStats {
        double logit_sum = 0, reward_sum = 0, stop_logit_sum = 0;
        int count = 0, stop_count = 0, aligned = 0, success = 0;
      };
      std::array<RoleStats, 2> stats;

      for (std::size_t pos_i = pos; pos_i < batch_end; ++pos_i) {
        const std::size_t i = order[pos_i];
        const ProblemContext& ctx = ctxs[i];
        const Role role = rng.next_bool() ? Role::Sneaky : Role::Faithful;
        const std::size_t role_idx = static_cast<std::size_t>(role);

        // Conditioning: decoupled episodes draw one solver output uniformly
        // from the fixed per-problem samples.
        const SolverSample* s = nullptr;
        if (mode == GameMode::Decoupled) {
          const auto& samples = (*solver_samples)[i];
          s = &samples[rng.next_below(samples.size())];
        }
        const std::vector<FeatureVector>& feats =
            mode == GameMode::Decoupled
                ? (role == Role::Faithful
                       ? ctx.faithful_view[static_cast<std::size_t>(s->final.value)]
                       : ctx.sneaky_view[static_cast<std::size_t>(s->final.value)])
                : (role == Role::Faithful ? ctx.helpful_view
                                          : ctx.sneaky_unconditioned_view);

        const std::vector<double> probs = result.policies.distribution(role, feats);
        std::vector<std::size_t> picks(k);
        for (std::size_t j = 0; j < k; ++j) picks[j] = rng.next_weighted(probs);

        std::vector<double> logits(k);
        for (std::size_t j = 0; j < k; ++j) logits[j] = vlogits[i][picks[j]];
        const std::vector<double> vnorm = normalize_logits(logits);

        std::vector<double> rewards(k);
        for (std::size_t j = 0; j < k; ++j) {
          const std::size_t z = picks[j];
          int q;
          double r;
          if (mode == GameMode::Decoupled) {
            q = role == Role::Faithful
                    ? (ctx.proofs[z].final == s->final ? 1 : 0)
                    : 1 - ctx.proof_correct[z];
            r = src_reward(role, q, s->correct, vnorm[j], game);
          } else {
            q = role == Role::Faithful ? ctx.proof_correct[z]
                                       : 1 - ctx.proof_correct[z];
            r = coupled_reward(q, vnorm[j], game);
          }
          // Per-sample KL-to-base penalty; the base policy is uniform over
          // the candidate set.
          if (cfg.kl_beta > 0.0) {
            r -= cfg.kl_beta * (std::log(probs[z]) +
                                std::log(static_cast<double>(probs.size())));
          }
          rewards[j] = r;

          stats[role_idx].logit_sum += logits[j];
          stats[role_idx].reward_sum += r;
          ++stats[role_idx].count;
          stats[role_idx].aligned += q;
          if (role == Role::Sneaky && q == 1 && sigmoid(logits[j]) > 0.5)
            ++stats[role_idx].success;
          const bool in_stop_set = mode == GameMode::Coupled || s->correct == 1;
          if (in_stop_set) {
            stats[role_idx].stop_logit_sum += logits[j];
            ++stats[role_idx].stop_count;
          }
        }

        const std::vector<double> adv = rloo_advantages(rewards);

        // Score-function gradient: (1/K) sum_k a_k (f_k - fbar) / T.
        const std::size_t dim = kTranslatorFeatureDim;
        std::vector<double> mean_feat(dim, 0.0);
        for (std::size_t c = 0; c < feats.size(); ++c)
          for (std::size_t d = 0; d < dim; ++d)
            mean_feat[d] += probs[c] * feats[c].values[d];
        const double scale = 1.0 / (static_cast<double>(k) * cfg.temperature);
        for (std::size_t j = 0; j < k; ++j) {
          const auto& f = feats[picks[j]].values;
          for (std::size_t d = 0; d < dim; ++d)
            grad[role_idx][d] += adv[j] * (f[d] - mean_feat[d]) * scale;
        }
      }

      for (std::size_t role_idx = 0; role_idx < 2; ++role_idx) {
        for (double& g : grad[role_idx]) g /= static_cast<double>(batch_n);
        result.policies.apply_gradient(static_cast<Role>(role_idx), grad[role_idx],
                                       cfg.learning_rate);
      }
      ++step;

      StepScores scores;
      if (stats[1].stop_count > 0)
        scores.sneaky = stats[1].stop_logit_sum / stats[1].stop_count;
      if (stats[0].stop_count > 0)
        scores.faithful = stats[0].stop_logit_sum / stats[0].stop_count;
      const bool stop =
          early_stop_update(result.ema_sneaky, result.ema_faithful, scores);

      const double accuracy = accuracy_fn ? accuracy_fn(result.policies) : 0.0;
      for (std::size_t role_idx = 0; role_idx < 2; ++role_idx) {
        const RoleStats& rs = stats[role_idx];
        if (rs.count == 0) continue;
        MetricsRow row;
        row.step = step_offset + step - 1;
        row.round = t;
        row.phase = "translator";
        row.role = role_name(static_cast<Role>(role_idx));
        row.verifier_logit_mean = rs.logit_sum / rs.count;
        row.faithfulness = role_idx == 0
                               ? static_cast<double>(rs.aligned) / rs.count
                               : 0.0;
        row.sneaky_success =
            role_idx == 1 ? static_cast<double>(rs.success) / rs.count : 0.0;
        row.accuracy = accuracy;
        row.reward_mean = rs.reward_sum / rs.count;
        emit(sink, row);
      }

      if (stop && step >= burn_in) {
        result.stopped_early = true;
        result.crossing_step = step;
        done = true;
      }
    }
  }
  result.steps = step;
  if (result.crossing_step < 0) result.crossing_step = step;
  return result;
}

// ---------------------------------------------------------------------------
// Solver training
// ---------------------------------------------------------------------------

struct SolverTrainResult {
  SoftmaxPolicy policy;
  std::int64_t steps = 0;
};

// RLOO with reward 1.0 for a correct final answer and 0.0 otherwise.
inline SolverTrainResult train_solver(std::span<const ProblemContext> ctxs,
                                      const SolverTrainConfig& cfg,
                                      std::uint64_t seed, const MetricsSink& sink = {},
                                      const std::function<double(const SoftmaxPolicy&)>&
                                          accuracy_fn = {}) {
  SolverTrainResult result;
  result.policy = SoftmaxPolicy::zeros(kProofFeatureDim, cfg.temperature, false);

  Rng rng(derive_seed(seed, {0x50fe1}));
  const std::size_t n = ctxs.size();
  const std::size_t k = static_cast<std::size_t>(cfg.k_completions);
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);

  std::int64_t step = 0;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    for (std::size_t i = n; i > 1; --i)
      std::swap(order[i - 1], order[rng.next_below(i)]);
    for (std::size_t pos = 0; pos < n; pos += cfg.batch_size) {
      const std::size_t batch_end = std::min(n, pos + cfg.batch_size);
      const std::size_t batch_n = batch_end - pos;
      std::vector<double> grad(kProofFeatureDim, 0.0);
      double reward_sum = 0.0;
      int sample_count = 0;

      for (std::size_t pos_i = pos; pos_i < batch_end; ++pos_i) {
        const ProblemContext& ctx = ctxs[order[pos_i]];
        const auto& feats = ctx.proof_features;
        const std::vector<double> probs =
            policy_distribution(result.policy, feats);
        std::vector<double> rewards(k);
        std::vector<std::size_t> picks(k);
        for (std::size_t j = 0; j < k; ++j) {
          picks[j] = rng.next_weighted(probs);
          double r = static_cast<double>(ctx.proof_correct[picks[j]]);
          if (cfg.kl_beta > 0.0)
            r -= cfg.kl_beta * (std::log(probs[picks[j]]) +
                                std::log(static_cast<double>(probs.size())));
          rewards[j] = r;
          reward_sum += r;
          ++sample_count;
        }
        const std::vector<double> adv = rloo_advantages(rewards);
        std::vector<double> mean_feat(kProofFeatureDim, 0.0);
        for (std::size_t c = 0; c < feats.size(); ++c)
          for (std::size_t d = 0; d < kProofFeatureDim; ++d)
            mean_feat[d] += probs[c] * feats[c].values[d];
        const double scale =
            1.0 / (static_cast<double>(k) * cfg.temperature *
                   static_cast<double>(batch_n));
        for (std::size_t j = 0; j < k; ++j) {
          const auto& f = feats[picks[j]].values;
          for (std::size_t d = 0; d < kProofFeatureDim; ++d)
            grad[d] += adv[j] * (f[d] - mean_feat[d]) * scale;
        }
      }
      for (std::size_t d = 0; d < kProofFeatureDim; ++d)
        result.policy.weights[d] += cfg.learning_rate * grad[d];
      ++step;

      MetricsRow row;
      row.step = step - 1;
      row.round = -1;
      row.phase = "solver";
      row.role = "solver";
      row.accuracy = accuracy_fn ? accuracy_fn(result.policy) : 0.0;
      row.reward_mean = sample_count > 0 ? reward_sum / sample_count : 0.0;
      emit(sink, row);
    }
  }
  result.steps = step;
  return result;
}

}  // namespace dpvg
