#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "sled/adapters.hpp"
#include "sled/autodiff.hpp"
#include "sled/model_config.hpp"
#include "sled/prompt.hpp"
#include "sled/rng.hpp"
#include "sled/tensor.hpp"

namespace sled {

/// Layerwise interpolation of instruction-token embeddings toward the pad
/// embedding: rows of the target span become
/// (1-beta)*row + beta*pad_row at every listed block's input.
struct InterventionSpec {
    std::size_t target = 0;              // instruction index
    double beta = 0.0;                   // [0, 1]
    std::vector<std::size_t> layers;     // empty = all blocks

    void validate(std::size_t num_blocks) const;
};

/// Row range of the joint sequence adapted at a given slider position.
struct RowSelection {
    Span rows;
    double alpha = 0.0;
};

struct SampleOptions {
    std::size_t steps = 16;
    std::uint64_t seed = 0;
    double alpha_min = -0.5;
    double alpha_max = 1.25;
    bool allow_extrapolation = false;
    const InterventionSpec* intervention = nullptr;
};

struct SampleResult {
    Tensor grid;               // [H x W x C]
    std::size_t forward_evals; // velocity evaluations consumed
};

/// Miniature dual-stream editing model. One joint attention runs over
/// noisy latent tokens, conditioning latent tokens and text tokens; each
/// block applies shared q/k/v/o projections plus a two-layer feed-forward,
/// all adapter-eligible. Text tokens carry no positional table, so pad
/// tokens are literally identical; image tokens get a learned positional
/// table shared between the noisy and conditioning copies plus a
/// stream-type embedding telling them apart.
class EditorModel {
public:
    EditorModel(ModelConfig config, std::uint64_t seed); // random init
    explicit EditorModel(ModelConfig config);            // zero init (for loading)

    const ModelConfig& config() const { return config_; }

    std::vector<std::pair<std::string, Tensor*>> named_params();
    std::vector<std::pair<std::string, const Tensor*>> named_params() const;

    /// Concatenate instruction tokens, record spans, pad to text_len.
    EncodedPrompt encode_prompt(const Prompt& prompt) const;

    /// Plain token-table lookup of an encoded prompt, [T x d].
    Tensor prompt_embeddings(const EncodedPrompt& prompt) const;

    // ---- graph-building forward --------------------------------------

    /// Parameter leaves staged into a graph, in named_params order.
    struct ParamLeaves {
        std::vector<std::pair<std::string, Graph::NodeId>> items;
        Graph::NodeId at(const std::string& name) const;
    };
    ParamLeaves stage_params(Graph& g, bool requires_grad) const;

    /// Adapter parameter leaves (lora.<key>.a/b), staged the same way.
    struct AdapterLeaves {
        const Adapter* adapter = nullptr;
        std::vector<std::pair<std::string, Graph::NodeId>> items;
        Graph::NodeId at(const std::string& name) const;
    };
    static AdapterLeaves stage_adapter(Graph& g, const Adapter& adapter,
                                       bool requires_grad);

    /// Velocity prediction for the noisy tokens only, [N x C]. z and
    /// x_cond are flattened latent matrices [N x C].
    Graph::NodeId velocity_graph(Graph& g, const ParamLeaves& params,
                                 Graph::NodeId z, Graph::NodeId x_cond,
                                 const EncodedPrompt& prompt, double t,
                                 const AdapterLeaves* adapter,
                                 const std::vector<RowSelection>& selections,
                                 const InterventionSpec* intervention) const;

    /// One joint block applied to (image tokens [2N x d], text tokens
    /// [T x d]); exposed for reference-forward tests.
    std::pair<Graph::NodeId, Graph::NodeId>
    block_graph(Graph& g, const ParamLeaves& params, Graph::NodeId x_tokens,
                Graph::NodeId y_tokens, std::size_t block,
                const AdapterLeaves* adapter,
                const std::vector<RowSelection>& selections) const;

    // ---- no-grad conveniences -----------------------------------------

    Tensor predict_velocity(const Tensor& z_grid, const Tensor& x_orig_grid,
                            const Prompt& prompt, double t,
                            const Adapter* adapter = nullptr,
                            const std::vector<SliderSetting>& settings = {},
                            const InterventionSpec* intervention = nullptr) const;

    /// Euler integration from seeded noise at t=0 to t=1 with the given
    /// per-instruction slider settings applied at every step.
    SampleResult sample_edit(const Tensor& x_orig_grid, const Prompt& prompt,
                             std::size_t steps,
                             const std::vector<SliderSetting>& settings,
                             const Adapter* adapter,
                             const SampleOptions& options) const;

    /// Resolve slider settings to joint-sequence row selections
    /// (stlora: the instruction's text span; gstlora: every row).
    std::vector<RowSelection>
    resolve_selections(const Adapter& adapter, const EncodedPrompt& prompt,
                       const std::vector<SliderSetting>& settings) const;

    static constexpr int pad_id = 0;

private:
    Graph::NodeId embed_joint(Graph& g, const ParamLeaves& params, Graph::NodeId z,
                              Graph::NodeId x_cond, const EncodedPrompt& prompt,
                              double t) const;
    Graph::NodeId block_body(Graph& g, const ParamLeaves& params, Graph::NodeId h,
                             std::size_t block, const AdapterLeaves* adapter,
                             const std::vector<RowSelection>& selections) const;
    Graph::NodeId project(Graph& g, Graph::NodeId x, Graph::NodeId w,
                          const std::string& layer_key, const AdapterLeaves* adapter,
                          const std::vector<RowSelection>& selections) const;
    Graph::NodeId apply_intervention(Graph& g, Graph::NodeId h,
                                     const EncodedPrompt& prompt,
                                     const InterventionSpec& spec) const;

    ModelConfig config_;
    Tensor tok_emb_;    // [vocab x d]
    Tensor img_in_;     // [d x C]
    Tensor pos_img_;    // [N x d]
    Tensor stream_emb_; // [2 x d]: row 0 noisy, row 1 conditioning
    Tensor time_w_;     // [d x d]
    struct BlockWeights {
        Tensor wq, wk, wv, wo; // [d x d]
        Tensor fc1;            // [hidden x d]
        Tensor fc2;            // [d x hidden]
    };
    std::vector<BlockWeights> blocks_;
    Tensor head_w_; // [C x d]
};

/// Sinusoidal timestep features, length d.
Tensor timestep_features(double t, std::size_t d);

/// Shared Euler sampler: integrates dz/dt = velocity(z, t) from seeded
/// gaussian noise at t=0 to t=1. Used by sample_edit and the CFG baseline
/// so trajectories with equal seeds share noise bit-exactly.
SampleResult sample_flow(const ModelConfig& config, std::size_t steps,
                         std::uint64_t seed,
                         const std::function<Tensor(const Tensor&, double)>& velocity);

/// Flatten [H x W x C] grid to [N x C] token matrix and back.
Tensor grid_to_tokens(const Tensor& grid);
Tensor tokens_to_grid(const Tensor& tokens, const std::array<std::size_t, 3>& grid);

// ---- base-model pretraining ------------------------------------------

struct Example;

struct PretrainOptions {
    double lr = 3e-3;
    std::size_t batch_size = 8;
    std::size_t iterations = 2000;
    std::uint64_t seed = 7;
    double loss_threshold = 0.05;
    std::size_t k_max = 3;       // prompts carry 0..k_max atoms
    double neutral_prob = 0.2;   // chance of appending the neutral atom
    /// When set, cycles through these examples instead of streaming fresh
    /// ones from the world (noise and t stay per-step random).
    const std::vector<Example>* dataset = nullptr;
};

struct PretrainResult {
    std::vector<double> losses;
    double final_loss = 0.0;     // mean of the last 50 steps
    bool reached_threshold = false;
};

class EditWorld;

/// Flow-matching pretraining on the synthetic world: minimizes
/// mean((v(Z,t) - (x_edit - eps))^2) with Z = (1-t)*eps + t*x_edit,
/// conditioned on x_orig and the prompt. Throws NumericError on NaN loss.
PretrainResult pretrain_base(EditorModel& model, const EditWorld& world,
                             const PretrainOptions& options);

// ---- checkpoint IO ------------------------------------------------------

void save_model(const std::string& path, const EditorModel& model);
/// Loads a checkpoint, validating that entry names and shapes exactly
/// match the config (unknown or missing names are errors).
EditorModel load_model(const std::string& path, const ModelConfig& config);

} // namespace sled
