#include "sled/metrics.hpp"

#include <algorithm>
#include <cmath>

#include "sled/error.hpp"

namespace sled {

namespace {

constexpr double kDegenerateRange = 1e-12;

std::size_t bin_of(double v, std::size_t bins) {
    const double scaled = v * static_cast<double>(bins);
    const long long idx = static_cast<long long>(std::floor(scaled));
    if (idx < 0) return 0;
    if (idx >= static_cast<long long>(bins)) return bins - 1;
    return static_cast<std::size_t>(idx);
}

ContinuityResult chi2_from_counts(const std::vector<std::size_t>& counts,
                                  double expected) {
    ContinuityResult r;
    for (std::size_t c : counts) {
        const double d = static_cast<double>(c) - expected;
        r.chi2 += d * d / expected;
    }
    r.dof = counts.size() - 1;
    r.value = static_cast<double>(r.dof) / (r.chi2 + continuity_epsilon);
    r.flag = r.chi2 == 0.0 ? ContinuityFlag::saturated : ContinuityFlag::ok;
    return r;
}

// Min-max normalization of one axis; nullopt when the range is degenerate.
std::optional<std::vector<double>> normalize_axis(const std::vector<double>& scores) {
    const auto [lo_it, hi_it] = std::minmax_element(scores.begin(), scores.end());
    const double lo = *lo_it, hi = *hi_it;
    if (hi - lo < kDegenerateRange) return std::nullopt;
    std::vector<double> out(scores.size());
    for (std::size_t i = 0; i < scores.size(); ++i) out[i] = (scores[i] - lo) / (hi - lo);
    return out;
}

} // namespace

const char* continuity_flag_name(ContinuityFlag flag) {
    switch (flag) {
        case ContinuityFlag::ok: return "ok";
        case ContinuityFlag::saturated: return "saturated";
        case ContinuityFlag::saturated_degenerate: return "saturated-degenerate";
    }
    return "?";
}

ContinuityResult continuity(const std::vector<double>& scores) {
    if (scores.size() < 2) throw ShapeError("continuity: need at least 2 scores");
    const std::size_t delta = scores.size();
    const auto normalized = normalize_axis(scores);
    if (!normalized) {
        // constant trajectory: normalization is 0/0, report it instead
        ContinuityResult r;
        r.dof = delta - 1;
        r.chi2 = 0.0;
        r.value = static_cast<double>(r.dof) / continuity_epsilon;
        r.flag = ContinuityFlag::saturated_degenerate;
        return r;
    }
    std::vector<std::size_t> counts(delta, 0);
    for (double v : *normalized) counts[bin_of(v, delta)] += 1;
    return chi2_from_counts(counts, 1.0);
}

ContinuityResult continuity(const std::vector<double>& scores, double lo, double hi) {
    if (scores.size() < 2) throw ShapeError("continuity: need at least 2 scores");
    if (!(hi > lo)) throw ShapeError("continuity: empty normalization range");
    const std::size_t delta = scores.size();
    std::vector<std::size_t> counts(delta, 0);
    for (double s : scores) counts[bin_of((s - lo) / (hi - lo), delta)] += 1;
    return chi2_from_counts(counts, 1.0);
}

ContinuityResult continuity_grid(const GridSweep& sweep) {
    if (sweep.gamma == 0 || sweep.gamma > 3)
        throw ShapeError("continuity_grid: gamma must be 1..3");
    const std::size_t samples = sweep.score_tuples.size();
    std::size_t expected_points = 1;
    for (std::size_t i = 0; i < sweep.gamma; ++i) expected_points *= sweep.delta;
    if (samples != expected_points)
        throw ShapeError("continuity_grid: incomplete lattice (" +
                         std::to_string(samples) + " of " +
                         std::to_string(expected_points) + " points)");
    for (const auto& tuple : sweep.score_tuples)
        if (tuple.size() != sweep.gamma)
            throw ShapeError("continuity_grid: tuple arity mismatch");

    if (sweep.gamma == 1) {
        std::vector<double> scores(samples);
        for (std::size_t i = 0; i < samples; ++i) scores[i] = sweep.score_tuples[i][0];
        return continuity(scores);
    }

    // bins per axis capped so total cells never exceed the sample count
    std::size_t bins = sweep.delta;
    auto cells_of = [&](std::size_t b) {
        std::size_t c = 1;
        for (std::size_t i = 0; i < sweep.gamma; ++i) c *= b;
        return c;
    };
    while (bins > 1 && cells_of(bins) > samples) --bins;
    const std::size_t cells = cells_of(bins);

    std::vector<std::vector<double>> axes(sweep.gamma,
                                          std::vector<double>(samples, 0.0));
    bool any_live_axis = false;
    for (std::size_t a = 0; a < sweep.gamma; ++a) {
        std::vector<double> axis(samples);
        for (std::size_t i = 0; i < samples; ++i) axis[i] = sweep.score_tuples[i][a];
        if (auto normalized = normalize_axis(axis)) {
            axes[a] = std::move(*normalized);
            any_live_axis = true;
        } // degenerate axis collapses to 0, concentrating the histogram
    }
    if (!any_live_axis) {
        ContinuityResult r;
        r.dof = cells - 1;
        r.chi2 = 0.0;
        r.value = static_cast<double>(r.dof) / continuity_epsilon;
        r.flag = ContinuityFlag::saturated_degenerate;
        return r;
    }

    std::vector<std::size_t> counts(cells, 0);
    for (std::size_t i = 0; i < samples; ++i) {
        std::size_t cell = 0;
        for (std::size_t a = 0; a < sweep.gamma; ++a)
            cell = cell * bins + bin_of(axes[a][i], bins);
        counts[cell] += 1;
    }
    return chi2_from_counts(counts,
                            static_cast<double>(samples) / static_cast<double>(cells));
}

double extrapolation(const std::vector<double>& scores) {
    if (scores.empty()) throw ShapeError("extrapolation: empty score list");
    return *std::max_element(scores.begin(), scores.end());
}

double disentanglement(const Tensor& x_orig, const std::vector<Tensor>& grids,
                       std::size_t target_atom, const EditWorld& world) {
    if (grids.empty()) throw ShapeError("disentanglement: no grids");
    if (target_atom >= world.atom_count())
        throw ShapeError("disentanglement: target atom out of range");
    const Tensor orig_bg = world.background_residual(x_orig);
    std::vector<double> orig_probes(world.atom_count());
    for (std::size_t a = 0; a < world.atom_count(); ++a)
        orig_probes[a] = world.attribute_score(x_orig, a);

    double acc = 0.0;
    for (const Tensor& grid : grids) {
        const Tensor bg = world.background_residual(grid);
        double sq = 0.0;
        for (std::size_t i = 0; i < bg.size(); ++i) {
            const double d = bg[i] - orig_bg[i];
            sq += d * d;
        }
        const double bg_rms = std::sqrt(sq / static_cast<double>(bg.size()));
        double drift = 0.0;
        for (std::size_t a = 0; a < world.atom_count(); ++a) {
            if (a == target_atom) continue;
            drift += std::abs(world.attribute_score(grid, a) - orig_probes[a]);
        }
        if (world.atom_count() > 1)
            drift /= static_cast<double>(world.atom_count() - 1);
        acc += bg_rms + drift;
    }
    return acc / static_cast<double>(grids.size());
}

// ---------------------------------------------------------------- sweeps

namespace {

void require_increasing(const std::vector<double>& values, const char* what) {
    if (values.empty()) throw ShapeError(std::string(what) + ": empty value list");
    for (std::size_t i = 1; i < values.size(); ++i)
        if (!(values[i] > values[i - 1]))
            throw ShapeError(std::string(what) + ": values must strictly increase");
}

} // namespace

Trajectory slider_sweep(const EditorModel& model, const Adapter& adapter,
                        const Tensor& x_orig, const Prompt& prompt, SweepTarget target,
                        const std::vector<double>& alphas, std::size_t steps,
                        std::uint64_t seed, const EditWorld& world) {
    require_increasing(alphas, "slider_sweep");
    if (target.instruction >= prompt.size())
        throw ShapeError("slider_sweep: unknown target instruction");
    Trajectory traj;
    traj.params = alphas;
    for (double alpha : alphas) {
        SampleOptions options;
        options.steps = steps;
        options.seed = seed;
        options.allow_extrapolation = true; // the alpha list is the explicit opt-in
        const SampleResult sample = model.sample_edit(
            x_orig, prompt, steps, {{target.instruction, alpha}}, &adapter, options);
        traj.scores.push_back(world.attribute_score(sample.grid, target.atom));
        traj.grids.push_back(sample.grid);
        traj.forward_evals += sample.forward_evals;
    }
    return traj;
}

Trajectory explicit_cfg_sweep(const EditorModel& model, const Tensor& x_orig,
                              const Prompt& prompt, std::size_t target_atom,
                              const std::vector<double>& ws, std::size_t steps,
                              std::uint64_t seed, const EditWorld& world) {
    require_increasing(ws, "explicit_cfg_sweep");
    const Prompt empty;
    Trajectory traj;
    traj.params = ws;
    for (double w : ws) {
        std::size_t evals = 0;
        auto velocity = [&](const Tensor& z, double t) {
            const Tensor v_cond = model.predict_velocity(z, x_orig, prompt, t);
            const Tensor v_uncond = model.predict_velocity(z, x_orig, empty, t);
            evals += 2;
            if (w == 1.0) return v_cond;
            if (w == 0.0) return v_uncond;
            Tensor out(v_cond.shape());
            for (std::size_t i = 0; i < out.size(); ++i)
                out[i] = v_uncond[i] + w * (v_cond[i] - v_uncond[i]);
            return out;
        };
        SampleResult sample = sample_flow(model.config(), steps, seed, velocity);
        sample.forward_evals = evals;
        traj.scores.push_back(world.attribute_score(sample.grid, target_atom));
        traj.grids.push_back(std::move(sample.grid));
        traj.forward_evals += evals;
    }
    return traj;
}

GridSweep grid_slider_sweep(const EditorModel& model, const Adapter& adapter,
                            const Tensor& x_orig, const Prompt& prompt,
                            const std::vector<SweepTarget>& targets,
                            const std::vector<double>& alphas, std::size_t steps,
                            std::uint64_t seed, const EditWorld& world) {
    require_increasing(alphas, "grid_slider_sweep");
    if (targets.empty() || targets.size() > 3)
        throw ShapeError("grid_slider_sweep: gamma must be 1..3");
    GridSweep sweep;
    sweep.gamma = targets.size();
    sweep.delta = alphas.size();

    std::size_t points = 1;
    for (std::size_t i = 0; i < sweep.gamma; ++i) points *= sweep.delta;
    for (std::size_t p = 0; p < points; ++p) {
        std::vector<double> tuple(sweep.gamma);
        std::vector<SliderSetting> settings(sweep.gamma);
        std::size_t rest = p;
        for (std::size_t a = sweep.gamma; a-- > 0;) {
            const std::size_t idx = rest % sweep.delta;
            rest /= sweep.delta;
            tuple[a] = alphas[idx];
            settings[a] = {targets[a].instruction, alphas[idx]};
        }
        SampleOptions options;
        options.steps = steps;
        options.seed = seed;
        options.allow_extrapolation = true;
        const SampleResult sample =
            model.sample_edit(x_orig, prompt, steps, settings, &adapter, options);
        std::vector<double> scores(sweep.gamma);
        for (std::size_t a = 0; a < sweep.gamma; ++a)
            scores[a] = world.attribute_score(sample.grid, targets[a].atom);
        sweep.alpha_tuples.push_back(std::move(tuple));
        sweep.score_tuples.push_back(std::move(scores));
        sweep.grids.push_back(sample.grid);
        sweep.forward_evals += sample.forward_evals;
    }
    return sweep;
}

} // namespace sled
