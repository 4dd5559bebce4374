#pragma once

#include <cstdint>
#include <span>
#include <stdexcept>
#include <vector>

#include "dpvg/game_core.hpp"
#include "dpvg/policies.hpp"
#include "dpvg/rng.hpp"
#include "dpvg/toy_domain.hpp"
#include "dpvg/training.hpp"

namespace dpvg {

// ---------------------------------------------------------------------------
// Exact evaluation
// ---------------------------------------------------------------------------
// Every candidate set is fully enumerated, so accuracies and faithfulness are
// computed as exact expectations rather than sample estimates.

inline double expected_solver_accuracy(std::span<const ProblemContext> ctxs,
                                       const SoftmaxPolicy& solver) {
  if (ctxs.empty()) throw std::invalid_argument("expected_solver_accuracy: no data");
  double total = 0.0;
  for (const ProblemContext& ctx : ctxs) {
    const auto probs = policy_distribution(solver, ctx.proof_features);
    for (std::size_t i = 0; i < probs.size(); ++i)
      total += probs[i] * ctx.proof_correct[i];
  }
  return total / static_cast<double>(ctxs.size());
}

// Per-problem distribution over final answer values 0..answer_range induced
// by the solver policy.
inline std::vector<std::vector<double>> solver_final_distribution(
    std::span<const ProblemContext> ctxs, const SoftmaxPolicy& solver,
    const DomainConfig& domain) {
  std::vector<std::vector<double>> out(ctxs.size());
  const std::size_t answers = static_cast<std::size_t>(domain.answer_count());
  for (std::size_t i = 0; i < ctxs.size(); ++i) {
    out[i].assign(answers, 0.0);
    const auto probs = policy_distribution(solver, ctxs[i].proof_features);
    for (std::size_t j = 0; j < probs.size(); ++j) {
      const std::int64_t a = ctxs[i].proofs[j].final.value;
      out[i][static_cast<std::size_t>(a)] += probs[j];
    }
  }
  return out;
}

// P(answer kept) and P(answer correct) of the solver -> faithful translator
// pipeline, marginalized over the solver's answer distribution.
struct PipelineEval {
  double faithfulness = 0.0;
  double accuracy = 0.0;
};

inline PipelineEval evaluate_pipeline(std::span<const ProblemContext> ctxs,
                                      const std::vector<std::vector<double>>& final_dist,
                                      const TranslatorPair& translators) {
  if (ctxs.empty()) throw std::invalid_argument("evaluate_pipeline: no data");
  PipelineEval ev;
  for (std::size_t i = 0; i < ctxs.size(); ++i) {
    const ProblemContext& ctx = ctxs[i];
    for (std::size_t a = 0; a < final_dist[i].size(); ++a) {
      const double pa = final_dist[i][a];
      if (pa == 0.0) continue;
      const auto probs =
          translators.distribution(Role::Faithful, ctx.faithful_view[a]);
      for (std::size_t j = 0; j < probs.size(); ++j) {
        const double pz = pa * probs[j];
        if (ctx.proofs[j].final.value == static_cast<std::int64_t>(a))
          ev.faithfulness += pz;
        ev.accuracy += pz * ctx.proof_correct[j];
      }
    }
  }
  ev.faithfulness /= static_cast<double>(ctxs.size());
  ev.accuracy /= static_cast<double>(ctxs.size());
  return ev;
}

// Expected correctness of the coupled game's helpful prover.
inline double expected_prover_accuracy(std::span<const ProblemContext> ctxs,
                                       const TranslatorPair& provers) {
  if (ctxs.empty()) throw std::invalid_argument("expected_prover_accuracy: no data");
  double total = 0.0;
  for (const ProblemContext& ctx : ctxs) {
    const auto probs = provers.distribution(Role::Faithful, ctx.helpful_view);
    for (std::size_t i = 0; i < probs.size(); ++i)
      total += probs[i] * ctx.proof_correct[i];
  }
  return total / static_cast<double>(ctxs.size());
}

// ---------------------------------------------------------------------------
// Round output generation
// ---------------------------------------------------------------------------

// Samples one output per (problem, solver sample, channel) from the current
// policies and stores it with its correctness label. At round 0 the policies
// are the uniform base, so the decoupled and coupled games produce identical
// buffers given the same seed.
inline std::vector<BufferEntry> generate_round_outputs(
    std::span<const ProblemContext> ctxs,
    const std::vector<std::vector<SolverSample>>* solver_samples,
    const TranslatorPair& policies, GameMode mode, int samples_per_problem,
    int round, std::uint64_t seed) {
  std::vector<BufferEntry> entries;
  entries.reserve(ctxs.size() * static_cast<std::size_t>(samples_per_problem) * 2);
  Rng rng(derive_seed(seed, {0xbfe4, static_cast<std::uint64_t>(round)}));
  for (std::size_t i = 0; i < ctxs.size(); ++i) {
    const ProblemContext& ctx = ctxs[i];
    for (int j = 0; j < samples_per_problem; ++j) {
      const SolverSample* s = nullptr;
      if (mode == GameMode::Decoupled)
        s = &(*solver_samples)[i][static_cast<std::size_t>(j) %
                                  (*solver_samples)[i].size()];
      for (Role role : {Role::Faithful, Role::Sneaky}) {
        const std::vector<FeatureVector>& feats =
            mode == GameMode::Decoupled
                ? (role == Role::Faithful
                       ? ctx.faithful_view[static_cast<std::size_t>(s->final.value)]
                       : ctx.sneaky_view[static_cast<std::size_t>(s->final.value)])
                : (role == Role::Faithful ? ctx.helpful_view
                                          : ctx.sneaky_unconditioned_view);
        const auto probs = policies.distribution(role, feats);
        const std::size_t pick = rng.next_weighted(probs);
        entries.push_back({i, role, pick, ctx.proof_correct[pick]});
      }
    }
  }
  return entries;
}

// ---------------------------------------------------------------------------
// Full experiment loops
// ---------------------------------------------------------------------------

struct RoundSummary {
  int round = 0;
  std::int64_t translator_steps = 0;
  std::int64_t crossing_step = -1;
  bool stopped_early = false;
  std::int64_t verifier_steps = 0;
  double verifier_final_loss = 0.0;
  double ema_faithful = 0.0;
  double ema_sneaky = 0.0;
  double test_faithfulness = 0.0;
  double test_accuracy = 0.0;
};

struct ExperimentResult {
  std::vector<RoundSummary> rounds;
  std::vector<VerifierModel> verifiers;        // rounds 0..R
  std::vector<TranslatorPair> translator_rounds;  // rounds 1..R
  double base_accuracy = 0.0;
  double solver_accuracy = 0.0;  // frozen solver (decoupled mode only)
  double final_faithfulness = 0.0;
  double final_accuracy = 0.0;
  std::int64_t total_steps = 0;
};

struct ExperimentData {
  std::vector<ProblemContext> train_translator;
  std::vector<ProblemContext> train_verifier;
  std::vector<ProblemContext> test;
};

inline ExperimentData build_experiment_data(const Dataset& ds,
                                            const DomainConfig& domain) {
  ExperimentData data;
  data.train_translator = build_contexts(ds.train_translator, domain);
  data.train_verifier = build_contexts(ds.train_verifier, domain);
  data.test = build_contexts(ds.test, domain);
  return data;
}

namespace detail {

inline ExperimentResult run_game(const ExperimentConfig& cfg,
                                 const ExperimentData& data,
                                 const SoftmaxPolicy* solver, GameMode mode,
                                 const MetricsSink& sink) {
  ExperimentResult result;
  const std::uint64_t seed = cfg.seed;

  // Fixed solver conditioning, sampled once (decoupled only).
  std::vector<std::vector<SolverSample>> samples_T, samples_V;
  std::vector<std::vector<double>> test_final_dist;
  if (mode == GameMode::Decoupled) {
    samples_T = sample_solver_outputs(data.train_translator, *solver,
                                      cfg.game.samples_per_problem,
                                      derive_seed(seed, {0x5a1}));
    samples_V = sample_solver_outputs(data.train_verifier, *solver,
                                      cfg.game.samples_per_problem,
                                      derive_seed(seed, {0x5a2}));
    test_final_dist =
        solver_final_distribution(data.test, *solver, cfg.dataset.domain);
    result.solver_accuracy = expected_solver_accuracy(data.test, *solver);
  }

  const TranslatorPair base_pair = TranslatorPair::base(
      kTranslatorFeatureDim, cfg.translator.temperature,
      cfg.translator.shared_parameters);
  const SoftmaxPolicy base_solver =
      SoftmaxPolicy::zeros(kProofFeatureDim, cfg.solver.temperature, false);
  result.base_accuracy =
      mode == GameMode::Decoupled
          ? expected_solver_accuracy(data.test, base_solver)
          : expected_prover_accuracy(data.test, base_pair);

  std::int64_t global_step = 0;
  RoundBuffer buffer;

  // Round 0: base policies generate outputs, verifier-only training.
  buffer.push_round(generate_round_outputs(
      data.train_verifier, mode == GameMode::Decoupled ? &samples_V : nullptr,
      base_pair, mode, cfg.game.samples_per_problem, 0, seed));
  {
    VerifierPhaseResult v0 =
        train_verifier_phase(0, buffer, data.train_verifier, cfg.verifier, seed,
                             sink, 0, global_step);
    global_step += v0.steps;
    RoundSummary summary;
    summary.round = 0;
    summary.verifier_steps = v0.steps;
    summary.verifier_final_loss =
        v0.step_losses.empty() ? 0.0 : v0.step_losses.back();
    if (mode == GameMode::Decoupled) {
      const PipelineEval ev =
          evaluate_pipeline(data.test, test_final_dist, base_pair);
      summary.test_faithfulness = ev.faithfulness;
      summary.test_accuracy = ev.accuracy;
    } else {
      summary.test_accuracy = expected_prover_accuracy(data.test, base_pair);
    }
    result.rounds.push_back(summary);
    result.verifiers.push_back(std::move(v0.model));
  }

  for (int t = 1; t <= cfg.game.rounds; ++t) {
    std::function<double(const TranslatorPair&)> accuracy_fn;
    if (mode == GameMode::Decoupled) {
      accuracy_fn = [&](const TranslatorPair& pair) {
        return evaluate_pipeline(data.test, test_final_dist, pair).accuracy;
      };
    } else {
      accuracy_fn = [&](const TranslatorPair& pair) {
        return expected_prover_accuracy(data.test, pair);
      };
    }

    TranslatorPhaseResult phase = train_translator_phase(
        t, result.verifiers.back(), data.train_translator,
        mode == GameMode::Decoupled ? &samples_T : nullptr, cfg.translator,
        cfg.game, seed, mode, sink, global_step, accuracy_fn);
    global_step += phase.steps;

    buffer.push_round(generate_round_outputs(
        data.train_verifier, mode == GameMode::Decoupled ? &samples_V : nullptr,
        phase.policies, mode, cfg.game.samples_per_problem, t, seed));

    VerifierPhaseResult vt =
        train_verifier_phase(t, buffer, data.train_verifier, cfg.verifier, seed,
                             sink, t, global_step);
    global_step += vt.steps;

    RoundSummary summary;
    summary.round = t;
    summary.translator_steps = phase.steps;
    summary.crossing_step = phase.crossing_step;
    summary.stopped_early = phase.stopped_early;
    summary.verifier_steps = vt.steps;
    summary.verifier_final_loss =
        vt.step_losses.empty() ? 0.0 : vt.step_losses.back();
    summary.ema_faithful = phase.ema_faithful.value;
    summary.ema_sneaky = phase.ema_sneaky.value;
    if (mode == GameMode::Decoupled) {
      const PipelineEval ev =
          evaluate_pipeline(data.test, test_final_dist, phase.policies);
      summary.test_faithfulness = ev.faithfulness;
      summary.test_accuracy = ev.accuracy;
    } else {
      summary.test_accuracy = expected_prover_accuracy(data.test, phase.policies);
    }
    result.rounds.push_back(summary);

    result.translator_rounds.push_back(std::move(phase.policies));
    result.verifiers.push_back(std::move(vt.model));
  }

  result.final_faithfulness = result.rounds.back().test_faithfulness;
  result.final_accuracy = result.rounds.back().test_accuracy;
  result.total_steps = global_step;
  return result;
}

}  // namespace detail

// Decoupled game: frozen solver, faithful/sneaky translators, one verifier
// per round. Round 0 trains the verifier only.
inline ExperimentResult run_dpvg(const ExperimentConfig& cfg,
                                 const ExperimentData& data,
                                 const SoftmaxPolicy& solver,
                                 const MetricsSink& sink = {}) {
  return detail::run_game(cfg, data, &solver, GameMode::Decoupled, sink);
}

// Coupled baseline: no solver; the helpful prover is trained for correctness
// and convincingness jointly under the same scheduler.
inline ExperimentResult run_baseline_pvg(const ExperimentConfig& cfg,
                                         const ExperimentData& data,
                                         const MetricsSink& sink = {}) {
  return detail::run_game(cfg, data, nullptr, GameMode::Coupled, sink);
}

}  // namespace dpvg
