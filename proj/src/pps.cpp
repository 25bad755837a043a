#include "sled/pps.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>

#include "sled/error.hpp"

namespace sled {

// ----------------------------------------------------------------- adamw

void adamw_step(const std::vector<Tensor*>& params,
                const std::vector<const Tensor*>& grads, AdamState& state,
                double lr, double beta1, double beta2, double eps,
                double weight_decay) {
    if (params.size() != grads.size())
        throw ShapeError("adamw: params/grads size mismatch");
    if (state.m.empty()) {
        state.m.reserve(params.size());
        state.v.reserve(params.size());
        for (const Tensor* p : params) {
            state.m.emplace_back(p->shape());
            state.v.emplace_back(p->shape());
        }
    }
    if (state.m.size() != params.size())
        throw ShapeError("adamw: state does not match params");
    state.step += 1;
    const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(state.step));
    const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(state.step));
    for (std::size_t i = 0; i < params.size(); ++i) {
        Tensor& p = *params[i];
        Tensor& m = state.m[i];
        Tensor& v = state.v[i];
        if (grads[i] && !grads[i]->same_shape(p))
            throw ShapeError("adamw: grad shape mismatch at param " + std::to_string(i));
        for (std::size_t j = 0; j < p.size(); ++j) {
            const double g = grads[i] ? (*grads[i])[j] : 0.0;
            m[j] = beta1 * m[j] + (1.0 - beta1) * g;
            v[j] = beta2 * v[j] + (1.0 - beta2) * g * g;
            const double m_hat = m[j] / bc1;
            const double v_hat = v[j] / bc2;
            p[j] -= lr * (m_hat / (std::sqrt(v_hat) + eps) + weight_decay * p[j]);
        }
    }
}

// ---------------------------------------------------------------- losses

const char* objective_name(Objective o) {
    return o == Objective::pps ? "pps" : "spps";
}

void Hyperparams::validate() const {
    if (lr <= 0.0) throw ShapeError("hyperparams: lr must be positive");
    if (iterations == 0) throw ShapeError("hyperparams: iterations must be >= 1");
    if (batch_size == 0) throw ShapeError("hyperparams: batch size must be >= 1");
    if (rank == 0) throw ShapeError("hyperparams: rank must be >= 1");
    if (k_values.empty()) throw ShapeError("hyperparams: k_values empty");
}

Hyperparams default_hyperparams(AdapterMode mode) {
    Hyperparams hp;
    if (mode == AdapterMode::stlora) {
        hp.iterations = 1000;
        hp.batch_size = 8;
        hp.objective = Objective::pps;
    } else {
        hp.iterations = 300;
        hp.batch_size = 4;
        hp.objective = Objective::spps;
    }
    return hp;
}

namespace {

Prompt remainder_prompt(const Prompt& prompt, std::size_t target) {
    Prompt out;
    for (std::size_t i = 0; i < prompt.instructions.size(); ++i)
        if (i != target) out.instructions.push_back(prompt.instructions[i]);
    return out;
}

Prompt collapse_prompt(const Prompt& prompt) {
    Prompt out;
    std::vector<int> merged;
    for (const auto& instruction : prompt.instructions)
        merged.insert(merged.end(), instruction.begin(), instruction.end());
    if (!merged.empty()) out.instructions.push_back(std::move(merged));
    return out;
}

Graph::NodeId suppression_loss_graph(Graph& g, const EditorModel& model,
                                     const EditorModel::ParamLeaves& params,
                                     const EditorModel::AdapterLeaves& adapter,
                                     const Tensor& z_grid, const Tensor& x_orig_grid,
                                     const Prompt& full_prompt, std::size_t target,
                                     const Prompt& ablated_prompt, double t) {
    const Graph::NodeId z = g.leaf(grid_to_tokens(z_grid));
    const Graph::NodeId x = g.leaf(grid_to_tokens(x_orig_grid));
    const EncodedPrompt enc_ablated = model.encode_prompt(ablated_prompt);
    const Graph::NodeId v_star =
        model.velocity_graph(g, params, z, x, enc_ablated, t, nullptr, {}, nullptr);

    const EncodedPrompt enc_full = model.encode_prompt(full_prompt);
    std::vector<RowSelection> selections;
    if (!full_prompt.empty())
        selections = model.resolve_selections(*adapter.adapter, enc_full,
                                              {{target, 1.0}});
    const Graph::NodeId v_hat =
        model.velocity_graph(g, params, z, x, enc_full, t, &adapter, selections, nullptr);

    const Graph::NodeId err = g.add(v_hat, g.scale(v_star, -1.0));
    return g.reduce_mean(g.mul(err, err));
}

} // namespace

Graph::NodeId pps_loss_graph(Graph& g, const EditorModel& model,
                             const EditorModel::ParamLeaves& params,
                             const EditorModel::AdapterLeaves& adapter,
                             const Tensor& z_grid, const Tensor& x_orig_grid,
                             const Prompt& prompt, std::size_t target, double t) {
    if (target >= prompt.size())
        throw ShapeError("pps_loss: target instruction out of range");
    return suppression_loss_graph(g, model, params, adapter, z_grid, x_orig_grid,
                                  prompt, target, remainder_prompt(prompt, target), t);
}

Graph::NodeId spps_loss_graph(Graph& g, const EditorModel& model,
                              const EditorModel::ParamLeaves& params,
                              const EditorModel::AdapterLeaves& adapter,
                              const Tensor& z_grid, const Tensor& x_orig_grid,
                              const Prompt& prompt, double t, SppsNull null_mode,
                              const std::vector<int>& neutral_ids) {
    Prompt null_prompt;
    if (null_mode == SppsNull::neutral_instruction) {
        if (neutral_ids.empty())
            throw ShapeError("spps_loss: neutral-instruction mode needs neutral ids");
        null_prompt.instructions.push_back(neutral_ids);
    }
    return suppression_loss_graph(g, model, params, adapter, z_grid, x_orig_grid,
                                  collapse_prompt(prompt), 0, null_prompt, t);
}

namespace {

double value_loss(const EditorModel& model, const Adapter* adapter,
                  const Tensor& z_grid, const Tensor& x_orig_grid,
                  const Prompt& full_prompt, std::size_t target,
                  const Prompt& ablated_prompt, double t) {
    const Tensor v_star =
        model.predict_velocity(z_grid, x_orig_grid, ablated_prompt, t);
    std::vector<SliderSetting> settings;
    if (adapter && !full_prompt.empty()) settings.push_back({target, 1.0});
    const Tensor v_hat =
        model.predict_velocity(z_grid, x_orig_grid, full_prompt, t, adapter, settings);
    double acc = 0.0;
    for (std::size_t i = 0; i < v_hat.size(); ++i) {
        const double d = v_hat[i] - v_star[i];
        acc += d * d;
    }
    return acc / static_cast<double>(v_hat.size());
}

} // namespace

double pps_loss(const EditorModel& model, const Adapter* adapter, const Tensor& z_grid,
                const Tensor& x_orig_grid, const Prompt& prompt, std::size_t target,
                double t) {
    if (target >= prompt.size())
        throw ShapeError("pps_loss: target instruction out of range");
    return value_loss(model, adapter, z_grid, x_orig_grid, prompt, target,
                      remainder_prompt(prompt, target), t);
}

double spps_loss(const EditorModel& model, const Adapter* adapter, const Tensor& z_grid,
                 const Tensor& x_orig_grid, const Prompt& prompt, double t,
                 SppsNull null_mode, const std::vector<int>& neutral_ids) {
    Prompt null_prompt;
    if (null_mode == SppsNull::neutral_instruction) {
        if (neutral_ids.empty())
            throw ShapeError("spps_loss: neutral-instruction mode needs neutral ids");
        null_prompt.instructions.push_back(neutral_ids);
    }
    return value_loss(model, adapter, z_grid, x_orig_grid, collapse_prompt(prompt), 0,
                      null_prompt, t);
}

// -------------------------------------------------------------- training

namespace {

struct DrawnExample {
    Example example;
    double t = 0.0;
    Tensor z;
    std::size_t target = 0;
};

DrawnExample draw_example(const EditorModel& model, const EditWorld& world,
                          const Hyperparams& hp, Rng& data_rng, Rng& noise_rng,
                          Rng& pick_rng) {
    (void)model;
    DrawnExample d;
    std::size_t k = hp.k_values[data_rng.uniform_int(hp.k_values.size())];
    k = std::min(k, world.atom_count());
    d.example = world.sample_example(k, data_rng);
    d.t = noise_rng.uniform();
    Tensor eps(d.example.x_orig.shape());
    for (std::size_t i = 0; i < eps.size(); ++i) eps[i] = noise_rng.normal();
    d.z = Tensor(d.example.x_orig.shape());
    for (std::size_t i = 0; i < d.z.size(); ++i)
        d.z[i] = (1.0 - d.t) * eps[i] + d.t * d.example.x_orig[i];
    d.target = d.example.prompt.size() > 0
                   ? pick_rng.uniform_int(d.example.prompt.size())
                   : 0;
    return d;
}

} // namespace

TrainAdapterResult train_adapter(const EditorModel& model, const EditWorld& world,
                                 AdapterMode mode, const Hyperparams& hp) {
    hp.validate();
    TrainAdapterResult result{Adapter::init(model.config(), mode, hp.rank, hp.seed), {}};

    Rng data_rng(mix_seed(hp.seed, 3));
    Rng noise_rng(mix_seed(hp.seed, 4));
    Rng pick_rng(mix_seed(hp.seed, 5));

    auto adapter_params = result.adapter.named_params();
    std::vector<Tensor*> param_ptrs;
    for (auto& [name, tensor] : adapter_params) param_ptrs.push_back(tensor);
    AdamState state;

    for (std::size_t step = 0; step < hp.iterations; ++step) {
        try {
            Graph g;
            const EditorModel::ParamLeaves params = model.stage_params(g, false);
            const EditorModel::AdapterLeaves adapter =
                EditorModel::stage_adapter(g, result.adapter, true);

            Graph::NodeId loss_sum = -1;
            std::size_t first_target = 0;
            double t_sum = 0.0;
            for (std::size_t bi = 0; bi < hp.batch_size; ++bi) {
                const DrawnExample d =
                    draw_example(model, world, hp, data_rng, noise_rng, pick_rng);
                if (bi == 0) first_target = d.target;
                t_sum += d.t;
                Graph::NodeId term;
                if (hp.objective == Objective::spps)
                    term = spps_loss_graph(g, model, params, adapter, d.z,
                                           d.example.x_orig, d.example.prompt, d.t,
                                           hp.spps_null, world.neutral_token_ids());
                else
                    term = pps_loss_graph(g, model, params, adapter, d.z,
                                          d.example.x_orig, d.example.prompt,
                                          d.target, d.t);
                loss_sum = bi == 0 ? term : g.add(loss_sum, term);
            }
            const Graph::NodeId loss =
                g.scale(loss_sum, 1.0 / static_cast<double>(hp.batch_size));
            const double loss_value = g.value(loss)[0];
            if (!std::isfinite(loss_value)) throw NumericError("non-finite loss");

            auto grads = g.backward(loss);
            std::vector<const Tensor*> grad_ptrs;
            grad_ptrs.reserve(adapter.items.size());
            for (const auto& [name, id] : adapter.items) {
                auto found = grads.find(id);
                grad_ptrs.push_back(found == grads.end() ? nullptr : &found->second);
            }
            adamw_step(param_ptrs, grad_ptrs, state, hp.lr, 0.9, 0.999, 1e-8,
                       hp.weight_decay);

            result.log.push_back({step, loss_value, first_target,
                                  t_sum / static_cast<double>(hp.batch_size)});
        } catch (const TrainDivergence&) {
            throw;
        } catch (const NumericError&) {
            throw TrainDivergence(step, std::move(result.log));
        }
    }
    return result;
}

double held_out_loss(const EditorModel& model, const Adapter* adapter,
                     const EditWorld& world, const Hyperparams& hp,
                     std::size_t examples, std::uint64_t seed) {
    Rng data_rng(mix_seed(seed, 6));
    Rng noise_rng(mix_seed(seed, 7));
    Rng pick_rng(mix_seed(seed, 8));
    double acc = 0.0;
    for (std::size_t i = 0; i < examples; ++i) {
        const DrawnExample d =
            draw_example(model, world, hp, data_rng, noise_rng, pick_rng);
        if (hp.objective == Objective::spps)
            acc += spps_loss(model, adapter, d.z, d.example.x_orig, d.example.prompt,
                             d.t, hp.spps_null, world.neutral_token_ids());
        else
            acc += pps_loss(model, adapter, d.z, d.example.x_orig, d.example.prompt,
                            d.target, d.t);
    }
    return acc / static_cast<double>(examples);
}

void write_loss_log_csv(const std::string& path, const std::vector<LossLogRow>& log) {
    std::ofstream out(path);
    if (!out) throw ArchiveError("cannot write loss log " + path);
    out << "step,loss,target_index,t_mean\n";
    char buf[64];
    for (const LossLogRow& row : log) {
        std::snprintf(buf, sizeof(buf), "%.17g", row.loss);
        out << row.step << "," << buf << "," << row.target_index << ",";
        std::snprintf(buf, sizeof(buf), "%.17g", row.t_mean);
        out << buf << "\n";
    }
}

} // namespace sled
