#pragma once

#include <cstdint>
#include <vector>

#include "sled/model.hpp"
#include "sled/world.hpp"

namespace sled {

/// Convex interpolation of the span's rows toward pad_row:
/// row <- (1-beta)*row + beta*pad_row. Only span rows change.
Tensor interpolate_span(const Tensor& embeddings, Span span, const Tensor& pad_row,
                        double beta);

struct InterpSweepEntry {
    double beta = 0.0;
    Tensor grid;
    double score = 0.0; // target-atom probe of the sampled grid
};

/// One deterministic sample per beta, interpolating the target
/// instruction's embeddings toward the pad embedding at every configured
/// block input during every denoising step. No adapter involved.
std::vector<InterpSweepEntry>
intervention_sweep(const EditorModel& model, const Tensor& x_orig, const Prompt& prompt,
                   std::size_t target_instruction, std::size_t target_atom,
                   const std::vector<double>& betas, std::size_t steps,
                   std::uint64_t seed, const EditWorld& world,
                   const std::vector<std::size_t>& layers = {});

} // namespace sled
