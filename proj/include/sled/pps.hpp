#pragma once

#include <cstdint>
#include <vector>

#include "sled/adamw.hpp"
#include "sled/error.hpp"
#include "sled/adapters.hpp"
#include "sled/model.hpp"
#include "sled/world.hpp"

namespace sled {

enum class Objective { pps, spps };
enum class SppsNull { empty_prompt, neutral_instruction };

const char* objective_name(Objective o);

/// Adapter-training hyperparameters. Defaults follow the reference
/// recipe: AdamW, lr 1e-4, rank 16, batch 8 / 1000 iterations for stlora
/// and batch 4 / 300 iterations for gstlora (see default_hyperparams).
struct Hyperparams {
    double lr = 1e-4;
    std::size_t batch_size = 8;
    std::size_t iterations = 1000;
    std::uint64_t seed = 11;
    Objective objective = Objective::spps;
    SppsNull spps_null = SppsNull::empty_prompt;
    std::vector<std::size_t> k_values = {1, 2, 3}; // instructions per prompt
    std::size_t rank = Adapter::default_rank;
    double weight_decay = 0.0;

    void validate() const;
};

Hyperparams default_hyperparams(AdapterMode mode);

/// Squared-L2 suppression loss on a graph: the adapted full-prompt
/// velocity against the frozen base velocity with instruction `target`
/// removed (remainder re-encoded from scratch). Mean reduction over
/// tokens. Gradients flow into adapter leaves only; the base is staged
/// frozen.
Graph::NodeId pps_loss_graph(Graph& g, const EditorModel& model,
                             const EditorModel::ParamLeaves& params,
                             const EditorModel::AdapterLeaves& adapter,
                             const Tensor& z_grid, const Tensor& x_orig_grid,
                             const Prompt& prompt, std::size_t target, double t);

/// SPPS: the whole prompt collapses to a single instruction and the
/// target is the frozen velocity under the empty prompt (or the neutral
/// atom when null_mode says so).
Graph::NodeId spps_loss_graph(Graph& g, const EditorModel& model,
                              const EditorModel::ParamLeaves& params,
                              const EditorModel::AdapterLeaves& adapter,
                              const Tensor& z_grid, const Tensor& x_orig_grid,
                              const Prompt& prompt, double t, SppsNull null_mode,
                              const std::vector<int>& neutral_ids);

/// Value-level conveniences (adapter may be null for the zero-adapter
/// baseline, i.e. plain base forwards on both sides).
double pps_loss(const EditorModel& model, const Adapter* adapter, const Tensor& z_grid,
                const Tensor& x_orig_grid, const Prompt& prompt, std::size_t target,
                double t);
double spps_loss(const EditorModel& model, const Adapter* adapter, const Tensor& z_grid,
                 const Tensor& x_orig_grid, const Prompt& prompt, double t,
                 SppsNull null_mode, const std::vector<int>& neutral_ids);

struct LossLogRow {
    std::size_t step = 0;
    double loss = 0.0;
    std::size_t target_index = 0; // first example's target in the batch
    double t_mean = 0.0;
};

struct TrainAdapterResult {
    Adapter adapter;
    std::vector<LossLogRow> log;
};

/// Thrown when the training loss goes non-finite; carries the log up to
/// the last good step.
struct TrainDivergence : NumericError {
    TrainDivergence(std::size_t at, std::vector<LossLogRow> good_log)
        : NumericError("training loss diverged at step " + std::to_string(at)),
          step(at), partial_log(std::move(good_log)) {}
    std::size_t step;
    std::vector<LossLogRow> partial_log;
};

/// Adapter training loop: sample data, sample eps and t, form
/// Z = (1-t)*eps + t*x_orig, pick a uniform random target instruction,
/// and step AdamW on the suppression loss. Deterministic under seed;
/// throws TrainDivergence when the loss goes non-finite.
TrainAdapterResult train_adapter(const EditorModel& model, const EditWorld& world,
                                 AdapterMode mode, const Hyperparams& hp);

/// Mean suppression loss over a fixed held-out set (seeded examples,
/// noise and t). adapter == nullptr measures the zero-adapter baseline.
double held_out_loss(const EditorModel& model, const Adapter* adapter,
                     const EditWorld& world, const Hyperparams& hp,
                     std::size_t examples, std::uint64_t seed);

void write_loss_log_csv(const std::string& path, const std::vector<LossLogRow>& log);

} // namespace sled
