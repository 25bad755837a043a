#include "sled/intervene.hpp"

#include <cmath>

#include "sled/error.hpp"

namespace sled {

Tensor interpolate_span(const Tensor& embeddings, Span span, const Tensor& pad_row,
                        double beta) {
    if (embeddings.ndim() != 2)
        throw ShapeError("interpolate_span: rank-2 embeddings required");
    if (span.length() == 0) throw ShapeError("interpolate_span: empty span");
    if (span.end > embeddings.rows())
        throw ShapeError("interpolate_span: span exceeds embedding rows");
    if (pad_row.size() != embeddings.cols())
        throw ShapeError("interpolate_span: pad row width mismatch");
    if (!(beta >= 0.0 && beta <= 1.0))
        throw ShapeError("interpolate_span: beta outside [0,1]");

    Tensor out = embeddings;
    const std::size_t d = embeddings.cols();
    for (std::size_t r = span.begin; r < span.end; ++r)
        for (std::size_t j = 0; j < d; ++j)
            out[r * d + j] = (1.0 - beta) * embeddings[r * d + j] + beta * pad_row[j];
    return out;
}

std::vector<InterpSweepEntry>
intervention_sweep(const EditorModel& model, const Tensor& x_orig, const Prompt& prompt,
                   std::size_t target_instruction, std::size_t target_atom,
                   const std::vector<double>& betas, std::size_t steps,
                   std::uint64_t seed, const EditWorld& world,
                   const std::vector<std::size_t>& layers) {
    if (target_instruction >= prompt.size())
        throw ShapeError("intervention_sweep: target instruction out of range");
    for (double beta : betas)
        if (!(beta >= 0.0 && beta <= 1.0))
            throw ShapeError("intervention_sweep: beta outside [0,1]");

    std::vector<InterpSweepEntry> out;
    out.reserve(betas.size());
    for (double beta : betas) {
        InterventionSpec spec;
        spec.target = target_instruction;
        spec.beta = beta;
        spec.layers = layers;
        SampleOptions options;
        options.steps = steps;
        options.seed = seed;
        options.intervention = &spec;
        const SampleResult sample =
            model.sample_edit(x_orig, prompt, steps, {}, nullptr, options);
        InterpSweepEntry entry;
        entry.beta = beta;
        entry.score = world.attribute_score(sample.grid, target_atom);
        entry.grid = sample.grid;
        out.push_back(std::move(entry));
    }
    return out;
}

} // namespace sled
