#include "sled/model.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "sled/adamw.hpp"
#include "sled/archive.hpp"
#include "sled/error.hpp"
#include "sled/world.hpp"

namespace sled {

void ModelConfig::validate() const {
    if (d == 0 || blocks == 0 || heads == 0 || text_len == 0 || vocab < 2)
        throw ShapeError("model config: all dimensions must be positive");
    if (d % heads != 0) throw ShapeError("model config: d must be divisible by heads");
    if (grid[0] == 0 || grid[1] == 0 || grid[2] == 0)
        throw ShapeError("model config: empty grid");
}

void InterventionSpec::validate(std::size_t num_blocks) const {
    if (!(beta >= 0.0 && beta <= 1.0))
        throw ShapeError("intervention: beta must lie in [0,1]");
    for (std::size_t l : layers)
        if (l >= num_blocks)
            throw ShapeError("intervention: layer " + std::to_string(l) + " out of range");
}

// ------------------------------------------------------------------ init

EditorModel::EditorModel(ModelConfig config) : config_(std::move(config)) {
    config_.validate();
    const std::size_t d = config_.d, h = config_.ffn_hidden();
    tok_emb_ = Tensor({config_.vocab, d});
    img_in_ = Tensor({d, config_.channels()});
    pos_img_ = Tensor({config_.n_img(), d});
    stream_emb_ = Tensor({2, d});
    time_w_ = Tensor({d, d});
    blocks_.resize(config_.blocks);
    for (BlockWeights& blk : blocks_) {
        blk.wq = Tensor({d, d});
        blk.wk = Tensor({d, d});
        blk.wv = Tensor({d, d});
        blk.wo = Tensor({d, d});
        blk.fc1 = Tensor({h, d});
        blk.fc2 = Tensor({d, h});
    }
    head_w_ = Tensor({config_.channels(), d});
}

EditorModel::EditorModel(ModelConfig config, std::uint64_t seed)
    : EditorModel(std::move(config)) {
    Rng rng(mix_seed(seed, 0x11071u));
    const double d_std = 1.0 / std::sqrt(static_cast<double>(config_.d));
    const double h_std = 1.0 / std::sqrt(static_cast<double>(config_.ffn_hidden()));
    // embedding scales balanced so latent content, position and timestep
    // contribute comparably to the block-0 residual stream
    tok_emb_ = Tensor::randn(tok_emb_.shape(), rng, 0.5);
    img_in_ = Tensor::randn(img_in_.shape(), rng, 1.0);
    pos_img_ = Tensor::randn(pos_img_.shape(), rng, 0.5);
    stream_emb_ = Tensor::randn(stream_emb_.shape(), rng, 0.5);
    time_w_ = Tensor::randn(time_w_.shape(), rng, 0.5 * d_std);
    for (BlockWeights& blk : blocks_) {
        blk.wq = Tensor::randn(blk.wq.shape(), rng, d_std);
        blk.wk = Tensor::randn(blk.wk.shape(), rng, d_std);
        blk.wv = Tensor::randn(blk.wv.shape(), rng, d_std);
        blk.wo = Tensor::randn(blk.wo.shape(), rng, d_std);
        blk.fc1 = Tensor::randn(blk.fc1.shape(), rng, d_std);
        blk.fc2 = Tensor::randn(blk.fc2.shape(), rng, h_std);
    }
    head_w_ = Tensor::randn(head_w_.shape(), rng, d_std);
}

std::vector<std::pair<std::string, Tensor*>> EditorModel::named_params() {
    std::vector<std::pair<std::string, Tensor*>> out;
    out.emplace_back("tok_emb", &tok_emb_);
    out.emplace_back("img_in", &img_in_);
    out.emplace_back("pos_img", &pos_img_);
    out.emplace_back("stream_emb", &stream_emb_);
    out.emplace_back("time_w", &time_w_);
    for (std::size_t b = 0; b < blocks_.size(); ++b) {
        const std::string prefix = "blk" + std::to_string(b) + ".";
        out.emplace_back(prefix + "q", &blocks_[b].wq);
        out.emplace_back(prefix + "k", &blocks_[b].wk);
        out.emplace_back(prefix + "v", &blocks_[b].wv);
        out.emplace_back(prefix + "o", &blocks_[b].wo);
        out.emplace_back(prefix + "fc1", &blocks_[b].fc1);
        out.emplace_back(prefix + "fc2", &blocks_[b].fc2);
    }
    out.emplace_back("head_w", &head_w_);
    return out;
}

std::vector<std::pair<std::string, const Tensor*>> EditorModel::named_params() const {
    std::vector<std::pair<std::string, const Tensor*>> out;
    for (auto& [name, tensor] : const_cast<EditorModel*>(this)->named_params())
        out.emplace_back(name, tensor);
    return out;
}

// --------------------------------------------------------------- prompts

EncodedPrompt EditorModel::encode_prompt(const Prompt& prompt) const {
    EncodedPrompt enc;
    enc.pad_id = pad_id;
    enc.ids.assign(config_.text_len, pad_id);
    std::size_t pos = 0;
    for (const std::vector<int>& instruction : prompt.instructions) {
        if (instruction.empty())
            throw ShapeError("encode_prompt: empty instruction");
        if (pos + instruction.size() > config_.text_len)
            throw ShapeError("encode_prompt: prompt longer than text_len=" +
                             std::to_string(config_.text_len));
        Span span{pos, pos + instruction.size()};
        for (int id : instruction) {
            if (id <= pad_id || static_cast<std::size_t>(id) >= config_.vocab)
                throw ShapeError("encode_prompt: unknown token id " + std::to_string(id));
            enc.ids[pos++] = id;
        }
        enc.spans.push_back(span);
    }
    enc.tau = pos;
    return enc;
}

Tensor EditorModel::prompt_embeddings(const EncodedPrompt& prompt) const {
    const std::size_t d = config_.d;
    Tensor out({prompt.ids.size(), d});
    for (std::size_t i = 0; i < prompt.ids.size(); ++i)
        std::copy_n(tok_emb_.data() + static_cast<std::size_t>(prompt.ids[i]) * d, d,
                    out.data() + i * d);
    return out;
}

// ---------------------------------------------------------------- leaves

Graph::NodeId EditorModel::ParamLeaves::at(const std::string& name) const {
    for (const auto& [n, id] : items)
        if (n == name) return id;
    throw ShapeError("no staged parameter " + name);
}

Graph::NodeId EditorModel::AdapterLeaves::at(const std::string& name) const {
    for (const auto& [n, id] : items)
        if (n == name) return id;
    throw ShapeError("no staged adapter parameter " + name);
}

EditorModel::ParamLeaves EditorModel::stage_params(Graph& g, bool requires_grad) const {
    ParamLeaves leaves;
    for (const auto& [name, tensor] : named_params())
        leaves.items.emplace_back(name, g.leaf(*tensor, requires_grad));
    return leaves;
}

EditorModel::AdapterLeaves EditorModel::stage_adapter(Graph& g, const Adapter& adapter,
                                                      bool requires_grad) {
    AdapterLeaves leaves;
    leaves.adapter = &adapter;
    for (const auto& [name, tensor] : adapter.named_params())
        leaves.items.emplace_back(name, g.leaf(*tensor, requires_grad));
    return leaves;
}

// --------------------------------------------------------------- forward

Tensor timestep_features(double t, std::size_t d) {
    if (!std::isfinite(t)) throw NumericError("timestep_features: non-finite t");
    Tensor out({1, d});
    const std::size_t half = d / 2;
    for (std::size_t i = 0; i < half; ++i) {
        const double freq =
            std::exp(std::log(200.0) * static_cast<double>(i) /
                     std::max<double>(1.0, static_cast<double>(half - 1)));
        const double arg = 3.14159265358979323846 * t * freq;
        out[i] = std::sin(arg);
        out[half + i] = std::cos(arg);
    }
    for (std::size_t i = 2 * half; i < d; ++i) out[i] = 1.0;
    return out;
}

Tensor grid_to_tokens(const Tensor& grid) {
    if (grid.ndim() != 3) throw ShapeError("grid_to_tokens: rank-3 grid required");
    const std::size_t n = grid.shape()[0] * grid.shape()[1];
    return Tensor::from({n, grid.shape()[2]}, grid.vec());
}

Tensor tokens_to_grid(const Tensor& tokens, const std::array<std::size_t, 3>& grid) {
    if (tokens.size() != grid[0] * grid[1] * grid[2])
        throw ShapeError("tokens_to_grid: size mismatch");
    return Tensor::from({grid[0], grid[1], grid[2]}, tokens.vec());
}

Graph::NodeId EditorModel::embed_joint(Graph& g, const ParamLeaves& params,
                                       Graph::NodeId z, Graph::NodeId x_cond,
                                       const EncodedPrompt& prompt, double t) const {
    const Graph::NodeId img_in = params.at("img_in");
    const Graph::NodeId pos = params.at("pos_img");
    const Graph::NodeId stream = params.at("stream_emb");

    Graph::NodeId hz = g.matmul(z, img_in, true);
    Graph::NodeId hc = g.matmul(x_cond, img_in, true);
    hz = g.add(hz, pos);
    hc = g.add(hc, pos);
    hz = g.add(hz, g.slice_rows(stream, 0, 1));
    hc = g.add(hc, g.slice_rows(stream, 1, 2));

    const Graph::NodeId text = g.embed_lookup(params.at("tok_emb"), prompt.ids);

    const Graph::NodeId t_feat = g.leaf(timestep_features(t, config_.d));
    const Graph::NodeId t_vec = g.matmul(t_feat, params.at("time_w"), true);
    hz = g.add(hz, t_vec);
    hc = g.add(hc, t_vec);
    const Graph::NodeId ht = g.add(text, t_vec);

    return g.concat_rows(g.concat_rows(hz, hc), ht);
}

Graph::NodeId EditorModel::project(Graph& g, Graph::NodeId x, Graph::NodeId w,
                                   const std::string& layer_key,
                                   const AdapterLeaves* adapter,
                                   const std::vector<RowSelection>& selections) const {
    Graph::NodeId out = g.matmul(x, w, true);
    if (!adapter || selections.empty()) return out;
    const Graph::NodeId a = adapter->at("lora." + layer_key + ".a");
    const Graph::NodeId b = adapter->at("lora." + layer_key + ".b");
    const std::size_t all_rows = g.value(x).rows();
    for (const RowSelection& sel : selections) {
        if (sel.alpha == 0.0) continue; // base path, bit-exact
        if (sel.rows.begin == 0 && sel.rows.end == all_rows) {
            const Graph::NodeId delta = g.matmul(g.matmul(x, a, true), b, true);
            out = g.add(out, g.scale(delta, sel.alpha));
        } else {
            const Graph::NodeId xs = g.slice_rows(x, sel.rows.begin, sel.rows.end);
            const Graph::NodeId delta = g.matmul(g.matmul(xs, a, true), b, true);
            const Graph::NodeId cur = g.slice_rows(out, sel.rows.begin, sel.rows.end);
            const Graph::NodeId upd = g.add(cur, g.scale(delta, sel.alpha));
            std::vector<std::size_t> idx(sel.rows.length());
            std::iota(idx.begin(), idx.end(), sel.rows.begin);
            out = g.scatter_rows(out, upd, idx);
        }
    }
    return out;
}

Graph::NodeId EditorModel::block_body(Graph& g, const ParamLeaves& params,
                                      Graph::NodeId h, std::size_t block,
                                      const AdapterLeaves* adapter,
                                      const std::vector<RowSelection>& selections) const {
    const std::string prefix = "blk" + std::to_string(block) + ".";
    const std::size_t dh = config_.head_dim();
    const double attn_scale = 1.0 / std::sqrt(static_cast<double>(dh));

    const Graph::NodeId x1 = g.layernorm(h);
    const Graph::NodeId q = project(g, x1, params.at(prefix + "q"), prefix + "q",
                                    adapter, selections);
    const Graph::NodeId k = project(g, x1, params.at(prefix + "k"), prefix + "k",
                                    adapter, selections);
    const Graph::NodeId v = project(g, x1, params.at(prefix + "v"), prefix + "v",
                                    adapter, selections);

    Graph::NodeId ctx = -1;
    for (std::size_t head = 0; head < config_.heads; ++head) {
        const std::size_t c0 = head * dh, c1 = c0 + dh;
        const Graph::NodeId qh = g.slice_cols(q, c0, c1);
        const Graph::NodeId kh = g.slice_cols(k, c0, c1);
        const Graph::NodeId vh = g.slice_cols(v, c0, c1);
        const Graph::NodeId scores = g.scale(g.matmul(qh, kh, true), attn_scale);
        const Graph::NodeId probs = g.softmax(scores);
        const Graph::NodeId ctx_h = g.matmul(probs, vh);
        ctx = head == 0 ? ctx_h : g.concat_cols(ctx, ctx_h);
    }
    const Graph::NodeId o = project(g, ctx, params.at(prefix + "o"), prefix + "o",
                                    adapter, selections);
    h = g.add(h, o);

    const Graph::NodeId x2 = g.layernorm(h);
    const Graph::NodeId f1 = project(g, x2, params.at(prefix + "fc1"), prefix + "fc1",
                                     adapter, selections);
    const Graph::NodeId f2 = project(g, g.gelu(f1), params.at(prefix + "fc2"),
                                     prefix + "fc2", adapter, selections);
    return g.add(h, f2);
}

Graph::NodeId EditorModel::apply_intervention(Graph& g, Graph::NodeId h,
                                              const EncodedPrompt& prompt,
                                              const InterventionSpec& spec) const {
    if (spec.target >= prompt.spans.size())
        throw ShapeError("intervention: target instruction out of range");
    if (prompt.tau >= config_.text_len)
        throw ShapeError("intervention: no pad position available as reference");
    const Span span = prompt.spans[spec.target];
    if (span.length() == 0) throw ShapeError("intervention: empty span");
    if (spec.beta == 0.0) return h; // bit-exact endpoint

    const std::size_t text_base = 2 * config_.n_img();
    const std::size_t pad_row = text_base + prompt.tau; // first pad position
    const Graph::NodeId pad = g.slice_rows(h, pad_row, pad_row + 1);
    const Graph::NodeId rows =
        g.slice_rows(h, text_base + span.begin, text_base + span.end);
    const Graph::NodeId mixed =
        g.add(g.scale(rows, 1.0 - spec.beta), g.scale(pad, spec.beta));
    std::vector<std::size_t> idx(span.length());
    std::iota(idx.begin(), idx.end(), text_base + span.begin);
    return g.scatter_rows(h, mixed, idx);
}

Graph::NodeId EditorModel::velocity_graph(Graph& g, const ParamLeaves& params,
                                          Graph::NodeId z, Graph::NodeId x_cond,
                                          const EncodedPrompt& prompt, double t,
                                          const AdapterLeaves* adapter,
                                          const std::vector<RowSelection>& selections,
                                          const InterventionSpec* intervention) const {
    const std::size_t n = config_.n_img();
    if (g.value(z).shape() != std::vector<std::size_t>{n, config_.channels()} ||
        g.value(x_cond).shape() != std::vector<std::size_t>{n, config_.channels()})
        throw ShapeError("velocity_graph: latent token shape mismatch");
    if (prompt.ids.size() != config_.text_len)
        throw ShapeError("velocity_graph: prompt length mismatch");
    if (intervention) intervention->validate(config_.blocks);

    Graph::NodeId h = embed_joint(g, params, z, x_cond, prompt, t);
    for (std::size_t block = 0; block < config_.blocks; ++block) {
        if (intervention) {
            const bool active = intervention->layers.empty() ||
                                std::find(intervention->layers.begin(),
                                          intervention->layers.end(),
                                          block) != intervention->layers.end();
            if (active) h = apply_intervention(g, h, prompt, *intervention);
        }
        h = block_body(g, params, h, block, adapter, selections);
    }
    h = g.layernorm(h);
    const Graph::NodeId z_rows = g.slice_rows(h, 0, n);
    return g.matmul(z_rows, params.at("head_w"), true);
}

std::pair<Graph::NodeId, Graph::NodeId>
EditorModel::block_graph(Graph& g, const ParamLeaves& params, Graph::NodeId x_tokens,
                         Graph::NodeId y_tokens, std::size_t block,
                         const AdapterLeaves* adapter,
                         const std::vector<RowSelection>& selections) const {
    if (block >= config_.blocks) throw ShapeError("block_graph: block out of range");
    const std::size_t nx = g.value(x_tokens).rows();
    const Graph::NodeId h = g.concat_rows(x_tokens, y_tokens);
    const Graph::NodeId out = block_body(g, params, h, block, adapter, selections);
    const std::size_t total = g.value(out).rows();
    return {g.slice_rows(out, 0, nx), g.slice_rows(out, nx, total)};
}

std::vector<RowSelection>
EditorModel::resolve_selections(const Adapter& adapter, const EncodedPrompt& prompt,
                                const std::vector<SliderSetting>& settings) const {
    std::vector<RowSelection> out;
    const std::size_t text_base = 2 * config_.n_img();
    for (const SliderSetting& s : settings) {
        if (!std::isfinite(s.alpha))
            throw NumericError("slider setting: non-finite alpha");
        if (adapter.mode() == AdapterMode::gstlora) {
            out.push_back({Span{0, config_.seq_len()}, s.alpha});
            continue;
        }
        if (s.instruction >= prompt.spans.size())
            throw ShapeError("slider setting: unknown instruction index " +
                             std::to_string(s.instruction));
        const Span span = prompt.spans[s.instruction];
        out.push_back({Span{text_base + span.begin, text_base + span.end}, s.alpha});
    }
    return out;
}

Tensor EditorModel::predict_velocity(const Tensor& z_grid, const Tensor& x_orig_grid,
                                     const Prompt& prompt, double t,
                                     const Adapter* adapter,
                                     const std::vector<SliderSetting>& settings,
                                     const InterventionSpec* intervention) const {
    if (z_grid.shape() != x_orig_grid.shape())
        throw ShapeError("predict_velocity: grid mismatch " + z_grid.shape_str() +
                         " vs " + x_orig_grid.shape_str());
    if (!(t >= 0.0 && t <= 1.0))
        throw ShapeError("predict_velocity: t outside [0,1]");
    const EncodedPrompt enc = encode_prompt(prompt);
    Graph g;
    const ParamLeaves params = stage_params(g, false);
    AdapterLeaves adapter_leaves;
    std::vector<RowSelection> selections;
    if (adapter && !settings.empty()) {
        adapter_leaves = stage_adapter(g, *adapter, false);
        selections = resolve_selections(*adapter, enc, settings);
    }
    const Graph::NodeId z = g.leaf(grid_to_tokens(z_grid));
    const Graph::NodeId x = g.leaf(grid_to_tokens(x_orig_grid));
    const Graph::NodeId vel =
        velocity_graph(g, params, z, x, enc, t,
                       adapter && !settings.empty() ? &adapter_leaves : nullptr,
                       selections, intervention);
    return g.value(vel);
}

// -------------------------------------------------------------- sampling

SampleResult sample_flow(const ModelConfig& config, std::size_t steps,
                         std::uint64_t seed,
                         const std::function<Tensor(const Tensor&, double)>& velocity) {
    if (steps == 0) throw ShapeError("sample_flow: steps must be >= 1");
    Rng rng(mix_seed(seed, 0x5EED));
    Tensor z({config.grid[0], config.grid[1], config.grid[2]});
    for (std::size_t i = 0; i < z.size(); ++i) z[i] = rng.normal();

    const double dt = 1.0 / static_cast<double>(steps);
    std::size_t evals = 0;
    for (std::size_t k = 0; k < steps; ++k) {
        const double t = static_cast<double>(k) * dt;
        const Tensor v = velocity(z, t);
        ++evals;
        if (v.size() != z.size())
            throw ShapeError("sample_flow: velocity shape mismatch");
        for (std::size_t i = 0; i < z.size(); ++i) z[i] += dt * v[i];
    }
    z.require_finite("sampled grid");
    return SampleResult{std::move(z), evals};
}

SampleResult EditorModel::sample_edit(const Tensor& x_orig_grid, const Prompt& prompt,
                                      std::size_t steps,
                                      const std::vector<SliderSetting>& settings,
                                      const Adapter* adapter,
                                      const SampleOptions& options) const {
    if (steps == 0) throw ShapeError("sample_edit: steps must be >= 1");
    for (const SliderSetting& s : settings) {
        if (s.instruction >= prompt.size())
            throw ShapeError("sample_edit: unknown instruction index " +
                             std::to_string(s.instruction));
        if (!options.allow_extrapolation &&
            (s.alpha < options.alpha_min || s.alpha > options.alpha_max))
            throw ShapeError("sample_edit: alpha outside configured range");
    }
    if (!settings.empty() && !adapter)
        throw ShapeError("sample_edit: slider settings without adapter");

    std::size_t forwards = 0;
    auto velocity = [&](const Tensor& z, double t) {
        ++forwards;
        return predict_velocity(z, x_orig_grid, prompt, t, adapter, settings,
                                options.intervention);
    };
    SampleResult result =
        sample_flow(config_, steps, options.seed, velocity);
    result.forward_evals = forwards;
    return result;
}

// ---------------------------------------------------------- pretraining

PretrainResult pretrain_base(EditorModel& model, const EditWorld& world,
                             const PretrainOptions& options) {
    if (options.iterations == 0 || options.batch_size == 0)
        throw ShapeError("pretrain: iterations and batch size must be >= 1");
    Rng data_rng(mix_seed(options.seed, 1));
    Rng noise_rng(mix_seed(options.seed, 2));
    const std::size_t k_cap = std::min(options.k_max, world.atom_count());

    auto params = model.named_params();
    std::vector<Tensor*> param_ptrs;
    for (auto& [name, tensor] : params) param_ptrs.push_back(tensor);
    AdamState state;

    PretrainResult result;
    result.losses.reserve(options.iterations);
    std::size_t dataset_cursor = 0;
    for (std::size_t it = 0; it < options.iterations; ++it) {
        Graph g;
        const EditorModel::ParamLeaves leaves = model.stage_params(g, true);
        Graph::NodeId loss_sum = -1;
        for (std::size_t bi = 0; bi < options.batch_size; ++bi) {
            Example ex;
            if (options.dataset && !options.dataset->empty()) {
                ex = (*options.dataset)[dataset_cursor % options.dataset->size()];
                ++dataset_cursor;
            } else {
                const std::size_t k = data_rng.uniform_int(k_cap + 1);
                ex = world.sample_example(k, data_rng);
                if (data_rng.uniform() < options.neutral_prob)
                    ex.prompt.instructions.push_back(world.neutral_token_ids());
            }
            const EncodedPrompt enc = model.encode_prompt(ex.prompt);

            const double t = noise_rng.uniform();
            Tensor eps(ex.x_edit.shape());
            for (std::size_t i = 0; i < eps.size(); ++i) eps[i] = noise_rng.normal();
            Tensor z(ex.x_edit.shape());
            Tensor target(ex.x_edit.shape());
            for (std::size_t i = 0; i < z.size(); ++i) {
                z[i] = (1.0 - t) * eps[i] + t * ex.x_edit[i];
                target[i] = ex.x_edit[i] - eps[i];
            }

            const Graph::NodeId z_id = g.leaf(grid_to_tokens(z));
            const Graph::NodeId x_id = g.leaf(grid_to_tokens(ex.x_orig));
            const Graph::NodeId vel =
                model.velocity_graph(g, leaves, z_id, x_id, enc, t, nullptr, {}, nullptr);
            const Graph::NodeId tgt = g.leaf(grid_to_tokens(target));
            const Graph::NodeId err = g.add(vel, g.scale(tgt, -1.0));
            const Graph::NodeId term = g.reduce_mean(g.mul(err, err));
            loss_sum = bi == 0 ? term : g.add(loss_sum, term);
        }
        const Graph::NodeId loss =
            g.scale(loss_sum, 1.0 / static_cast<double>(options.batch_size));
        const double loss_value = g.value(loss)[0];
        if (!std::isfinite(loss_value))
            throw NumericError("pretrain: loss diverged at step " + std::to_string(it));
        result.losses.push_back(loss_value);

        auto grads = g.backward(loss);
        std::vector<const Tensor*> grad_ptrs;
        grad_ptrs.reserve(leaves.items.size());
        for (const auto& [name, id] : leaves.items) {
            auto found = grads.find(id);
            grad_ptrs.push_back(found == grads.end() ? nullptr : &found->second);
        }
        adamw_step(param_ptrs, grad_ptrs, state, options.lr);
    }

    const std::size_t window = std::min<std::size_t>(50, result.losses.size());
    result.final_loss =
        std::accumulate(result.losses.end() - static_cast<std::ptrdiff_t>(window),
                        result.losses.end(), 0.0) /
        static_cast<double>(window);
    result.reached_threshold = result.final_loss <= options.loss_threshold;
    return result;
}

// ---------------------------------------------------------- checkpoints

void save_model(const std::string& path, const EditorModel& model) {
    NamedTensors entries;
    entries.emplace_back("meta.version", Tensor::scalar(1.0));
    for (const auto& [name, tensor] : model.named_params())
        entries.emplace_back(name, *tensor);
    save_archive(path, entries);
}

EditorModel load_model(const std::string& path, const ModelConfig& config) {
    const NamedTensors entries = load_archive(path);
    ArchiveIndex index(entries);
    if (!index.contains("meta.version") || index.get("meta.version")[0] != 1.0)
        throw ArchiveError("unsupported model archive version");
    EditorModel model(config);
    std::size_t expected = 1;
    for (auto& [name, tensor] : model.named_params()) {
        const Tensor& loaded = index.get(name);
        if (loaded.shape() != tensor->shape())
            throw ArchiveError("model entry " + name + " has shape " +
                               loaded.shape_str() + ", expected " +
                               tensor->shape_str());
        *tensor = loaded;
        ++expected;
    }
    if (entries.size() != expected)
        throw ArchiveError("model archive has unknown extra entries");
    return model;
}

} // namespace sled
