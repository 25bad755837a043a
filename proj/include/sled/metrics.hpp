#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "sled/adapters.hpp"
#include "sled/model.hpp"
#include "sled/world.hpp"

namespace sled {

/// Attribute scores along one swept parameter (slider alpha or CFG w).
struct Trajectory {
    std::vector<double> params;  // strictly increasing swept values
    std::vector<double> scores;  // target-atom probe per sample
    std::vector<Tensor> grids;   // sampled outputs (same order)
    std::size_t forward_evals = 0;
};

enum class ContinuityFlag { ok, saturated, saturated_degenerate };

const char* continuity_flag_name(ContinuityFlag flag);

/// Inverse normalized chi-squared uniformity statistic. Scores are
/// min-max normalized (or normalized against an explicit range), binned
/// into delta equal-width bins with expected count 1 per bin; the
/// reported value is dof / (chi2 + eps). Perfect uniformity saturates at
/// dof/eps; constant trajectories cannot be normalized and come back
/// flagged saturated_degenerate at the saturated value.
struct ContinuityResult {
    double value = 0.0;
    double chi2 = 0.0;
    std::size_t dof = 0;
    ContinuityFlag flag = ContinuityFlag::ok;
};

inline constexpr double continuity_epsilon = 1e-9;

ContinuityResult continuity(const std::vector<double>& scores);
/// Fixed normalization range (for joint cross-method normalization).
ContinuityResult continuity(const std::vector<double>& scores, double lo, double hi);

/// Complete delta^gamma lattice of score tuples, row-major with the last
/// axis fastest.
struct GridSweep {
    std::size_t gamma = 1;
    std::size_t delta = 2;
    std::vector<std::vector<double>> alpha_tuples; // gamma values per point
    std::vector<std::vector<double>> score_tuples; // gamma scores per point
    std::vector<Tensor> grids;
    std::size_t forward_evals = 0;
};

/// Chi-squared uniformity over the gamma-dimensional histogram of
/// per-axis normalized scores; bins per axis are capped so total cells
/// never exceed the sample count. gamma=1 reduces exactly to continuity().
ContinuityResult continuity_grid(const GridSweep& sweep);

/// Maximum score across the sweep.
double extrapolation(const std::vector<double>& scores);

/// Off-target change along a trajectory: RMS distance of the background
/// residual from the original plus the mean absolute drift of every
/// non-target atom probe, averaged over grids. Exactly 0 for analytic
/// pure-target edits.
double disentanglement(const Tensor& x_orig, const std::vector<Tensor>& grids,
                       std::size_t target_atom, const EditWorld& world);

/// Which instruction is swept and which atom's probe scores it.
struct SweepTarget {
    std::size_t instruction = 0;
    std::size_t atom = 0;
};

/// One deterministic sample per alpha (shared noise seed), scores from
/// the world probe.
Trajectory slider_sweep(const EditorModel& model, const Adapter& adapter,
                        const Tensor& x_orig, const Prompt& prompt, SweepTarget target,
                        const std::vector<double>& alphas, std::size_t steps,
                        std::uint64_t seed, const EditWorld& world);

/// Explicit classifier-free guidance baseline: at every step the
/// conditional and unconditional (empty prompt) velocities combine as
/// v_u + w*(v_c - v_u); two forward passes per step. w=1 equals plain
/// conditional sampling bit-exactly, w=0 plain unconditional.
Trajectory explicit_cfg_sweep(const EditorModel& model, const Tensor& x_orig,
                              const Prompt& prompt, std::size_t target_atom,
                              const std::vector<double>& ws, std::size_t steps,
                              std::uint64_t seed, const EditWorld& world);

/// Full delta^gamma lattice sweep for multi-instruction prompts.
GridSweep grid_slider_sweep(const EditorModel& model, const Adapter& adapter,
                            const Tensor& x_orig, const Prompt& prompt,
                            const std::vector<SweepTarget>& targets,
                            const std::vector<double>& alphas, std::size_t steps,
                            std::uint64_t seed, const EditWorld& world);

} // namespace sled
