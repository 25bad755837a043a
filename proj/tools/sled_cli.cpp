// sled: train and evaluate continuous per-instruction edit sliders on the
// synthetic edit world.
//
// Exit codes: 0 success, 1 usage/IO error, 2 training budget exhausted,
// 3 numeric failure.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "sled/adapters.hpp"
#include "sled/archive.hpp"
#include "sled/config.hpp"
#include "sled/error.hpp"
#include "sled/intervene.hpp"
#include "sled/metrics.hpp"
#include "sled/model.hpp"
#include "sled/pps.hpp"
#include "sled/world.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace sled;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitBudget = 2;
constexpr int kExitNumeric = 3;

struct OutputGuard {
    bool force = false;

    // refuses to overwrite unless --force
    void check(const std::string& path) const {
        if (!force && fs::exists(path))
            throw ConfigError("output " + path + " exists (use --force to overwrite)");
    }
};

void write_text(const std::string& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ConfigError("cannot write " + path);
    out << text;
}

std::string fmt_double(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

std::vector<double> parse_double_list(const std::string& csv) {
    std::vector<double> out;
    std::string token;
    std::stringstream ss(csv);
    while (std::getline(ss, token, ','))
        if (!token.empty()) out.push_back(std::stod(token));
    return out;
}

std::string join_doubles(const std::vector<double>& values, char sep = '|') {
    std::string out;
    for (std::size_t i = 0; i < values.size(); ++i) {
        if (i) out += sep;
        out += fmt_double(values[i]);
    }
    return out;
}

/// Held-out evaluation input shared by sweep and interp so their alpha=0 /
/// beta=0 samples are bit-comparable.
Tensor eval_background(const EditWorld& world, std::uint64_t eval_seed) {
    Rng rng(mix_seed(eval_seed, 0xE7A1));
    return world.sample_background(rng);
}

json metric_metadata(const Config& config) {
    json meta;
    meta["config_hash"] = config_hash(config);
    meta["continuity_epsilon"] = continuity_epsilon;
    meta["normalization"] = "per-trajectory min-max";
    meta["score_source"] = "analytic attribute probe (stands in for VLM similarity)";
    meta["offtarget_source"] =
        "background RMS + non-target probe drift (stands in for identity/LPIPS/DINO)";
    return meta;
}

int cmd_init_config(const std::string& out_path, const OutputGuard& guard) {
    guard.check(out_path);
    save_config(out_path, default_config());
    std::cout << "wrote " << out_path << "\n";
    return kExitOk;
}

int cmd_pretrain(const std::string& config_path, const std::string& out_path,
                 const OutputGuard& guard) {
    Config config = load_config(config_path);
    apply_seed_override(config);
    guard.check(out_path);
    const std::string manifest_path = out_path + ".manifest.json";
    guard.check(manifest_path);

    const EditWorld world = EditWorld::generate(config.world);
    EditorModel model(config.model, config.pretrain.seed);
    const PretrainResult result = pretrain_base(model, world, config.pretrain);

    save_model(out_path, model);
    json manifest;
    manifest["config_hash"] = config_hash(config);
    manifest["seed"] = config.pretrain.seed;
    manifest["iterations"] = config.pretrain.iterations;
    manifest["final_loss"] = result.final_loss;
    manifest["loss_threshold"] = config.pretrain.loss_threshold;
    manifest["reached_threshold"] = result.reached_threshold;
    write_text(manifest_path, manifest.dump(2) + "\n");

    std::cout << "final loss " << fmt_double(result.final_loss) << " (threshold "
              << fmt_double(config.pretrain.loss_threshold) << ")\n";
    if (!result.reached_threshold) {
        std::cerr << "pretrain: loss threshold not reached within budget\n";
        return kExitBudget;
    }
    return kExitOk;
}

int cmd_train_adapter(const std::string& config_path, const std::string& base_path,
                      const std::string& mode_str, const std::string& objective_str,
                      const std::string& out_path, const OutputGuard& guard) {
    Config config = load_config(config_path);
    apply_seed_override(config);
    guard.check(out_path);
    const std::string csv_path = out_path + ".loss.csv";
    const std::string manifest_path = out_path + ".manifest.json";
    guard.check(csv_path);
    guard.check(manifest_path);

    const AdapterMode mode =
        mode_str == "stlora" ? AdapterMode::stlora : AdapterMode::gstlora;
    Hyperparams hp = config.train;
    hp.objective = objective_str == "pps" ? Objective::pps : Objective::spps;

    const EditWorld world = EditWorld::generate(config.world);
    const EditorModel model = load_model(base_path, config.model);

    try {
        const TrainAdapterResult result = train_adapter(model, world, mode, hp);
        save_adapter(out_path, result.adapter);
        write_loss_log_csv(csv_path, result.log);
        json manifest;
        manifest["config_hash"] = config_hash(config);
        manifest["seed"] = hp.seed;
        manifest["mode"] = mode_str;
        manifest["objective"] = objective_name(hp.objective);
        manifest["iterations"] = hp.iterations;
        manifest["final_loss"] = result.log.empty() ? 0.0 : result.log.back().loss;
        write_text(manifest_path, manifest.dump(2) + "\n");
        std::cout << "final loss "
                  << fmt_double(result.log.empty() ? 0.0 : result.log.back().loss)
                  << "\n";
        return kExitOk;
    } catch (const TrainDivergence& e) {
        write_loss_log_csv(csv_path, e.partial_log);
        std::cerr << "train-adapter: " << e.what() << "; last good step logged to "
                  << csv_path << "\n";
        return kExitNumeric;
    }
}

int cmd_sweep(const std::string& config_path, const std::string& base_path,
              const std::string& adapter_path, std::size_t gamma_flag,
              const std::string& alphas_flag, const std::string& out_prefix,
              const OutputGuard& guard) {
    Config config = load_config(config_path);
    apply_seed_override(config);
    const std::string json_path = out_prefix + ".json";
    const std::string csv_path = out_prefix + ".csv";
    guard.check(json_path);
    guard.check(csv_path);

    if (gamma_flag > 0) {
        config.eval.gamma = gamma_flag;
        if (gamma_flag > 1 && config.eval.delta == 15) config.eval.delta = 7;
    }
    config.validate();

    const EditWorld world = EditWorld::generate(config.world);
    const EditorModel model = load_model(base_path, config.model);
    const Adapter adapter = load_adapter(adapter_path, config.model);

    std::vector<double> alphas = alphas_flag.empty() ? config.eval.alpha_list()
                                                     : parse_double_list(alphas_flag);
    if (alphas.empty()) throw ConfigError("sweep: empty alpha list");
    const std::size_t gamma = config.eval.gamma;
    if (gamma > world.atom_count()) throw ConfigError("sweep: gamma exceeds atoms");

    json report;
    report["meta"] = metric_metadata(config);
    report["meta"]["gamma"] = gamma;
    report["meta"]["alphas"] = alphas;
    report["meta"]["steps"] = config.eval.steps;
    json sweeps = json::array();

    std::ostringstream csv;
    csv << "method,gamma,seed,prompt_atoms,alpha_tuple,atom,score\n";

    for (std::uint64_t seed : config.eval.seeds) {
        const Tensor x_orig = eval_background(world, seed);
        if (gamma == 1) {
            for (std::size_t atom = 0; atom < world.atom_count(); ++atom) {
                const Prompt prompt = world.make_prompt({atom});
                if (alphas.size() >= 2) {
                    const Trajectory traj =
                        slider_sweep(model, adapter, x_orig, prompt, {0, atom}, alphas,
                                     config.eval.steps, seed, world);
                    const ContinuityResult cont = continuity(traj.scores);
                    json entry;
                    entry["method"] = "slider";
                    entry["seed"] = seed;
                    entry["atom"] = atom;
                    entry["scores"] = traj.scores;
                    entry["continuity"] = cont.value;
                    entry["continuity_flag"] = continuity_flag_name(cont.flag);
                    entry["extrapolation"] = extrapolation(traj.scores);
                    entry["disentanglement"] =
                        disentanglement(x_orig, traj.grids, atom, world);
                    sweeps.push_back(entry);
                    for (std::size_t i = 0; i < alphas.size(); ++i)
                        csv << "slider,1," << seed << "," << atom << ","
                            << fmt_double(alphas[i]) << "," << atom << ","
                            << fmt_double(traj.scores[i]) << "\n";

                    // Explicit CFG baseline over the matching strength range
                    // (w = 1 - alpha).
                    std::vector<double> ws(alphas.size());
                    for (std::size_t i = 0; i < alphas.size(); ++i)
                        ws[i] = 1.0 - alphas[alphas.size() - 1 - i];
                    const Trajectory cfg = explicit_cfg_sweep(
                        model, x_orig, prompt, atom, ws, config.eval.steps, seed, world);
                    const ContinuityResult cfg_cont = continuity(cfg.scores);
                    json cfg_entry;
                    cfg_entry["method"] = "explicit-cfg";
                    cfg_entry["seed"] = seed;
                    cfg_entry["atom"] = atom;
                    cfg_entry["scores"] = cfg.scores;
                    cfg_entry["continuity"] = cfg_cont.value;
                    cfg_entry["continuity_flag"] = continuity_flag_name(cfg_cont.flag);
                    cfg_entry["extrapolation"] = extrapolation(cfg.scores);
                    cfg_entry["disentanglement"] =
                        disentanglement(x_orig, cfg.grids, atom, world);
                    sweeps.push_back(cfg_entry);
                    for (std::size_t i = 0; i < ws.size(); ++i)
                        csv << "explicit-cfg,1," << seed << "," << atom << ","
                            << fmt_double(ws[i]) << "," << atom << ","
                            << fmt_double(cfg.scores[i]) << "\n";
                } else {
                    // degenerate single-point sweep
                    SampleOptions options;
                    options.steps = config.eval.steps;
                    options.seed = seed;
                    options.allow_extrapolation = true;
                    const SampleResult sample =
                        model.sample_edit(x_orig, prompt, config.eval.steps,
                                          {{0, alphas[0]}}, &adapter, options);
                    const double score = world.attribute_score(sample.grid, atom);
                    json entry;
                    entry["method"] = "slider";
                    entry["seed"] = seed;
                    entry["atom"] = atom;
                    entry["scores"] = std::vector<double>{score};
                    entry["continuity_flag"] = "degenerate-single-point";
                    sweeps.push_back(entry);
                    csv << "slider,1," << seed << "," << atom << ","
                        << fmt_double(alphas[0]) << "," << atom << ","
                        << fmt_double(score) << "\n";
                }
            }
        } else {
            // every gamma-combination of atoms
            std::vector<std::size_t> combo(gamma);
            std::function<void(std::size_t, std::size_t)> visit =
                [&](std::size_t start, std::size_t depth) {
                    if (depth == gamma) {
                        const Prompt prompt = world.make_prompt(combo);
                        std::vector<SweepTarget> targets(gamma);
                        for (std::size_t i = 0; i < gamma; ++i)
                            targets[i] = {i, combo[i]};
                        const GridSweep sweep = grid_slider_sweep(
                            model, adapter, x_orig, prompt, targets, alphas,
                            config.eval.steps, seed, world);
                        const ContinuityResult cont = continuity_grid(sweep);
                        json entry;
                        entry["method"] = "slider";
                        entry["seed"] = seed;
                        entry["atoms"] = combo;
                        entry["continuity"] = cont.value;
                        entry["continuity_flag"] = continuity_flag_name(cont.flag);
                        sweeps.push_back(entry);
                        std::string atoms_str;
                        for (std::size_t i = 0; i < gamma; ++i) {
                            if (i) atoms_str += "|";
                            atoms_str += std::to_string(combo[i]);
                        }
                        for (std::size_t p = 0; p < sweep.score_tuples.size(); ++p)
                            for (std::size_t i = 0; i < gamma; ++i)
                                csv << "slider," << gamma << "," << seed << ","
                                    << atoms_str << ","
                                    << join_doubles(sweep.alpha_tuples[p]) << ","
                                    << combo[i] << ","
                                    << fmt_double(sweep.score_tuples[p][i]) << "\n";
                        return;
                    }
                    for (std::size_t a = start;
                         a + (gamma - depth) <= world.atom_count(); ++a) {
                        combo[depth] = a;
                        visit(a + 1, depth + 1);
                    }
                };
            visit(0, 0);
        }
    }
    report["sweeps"] = sweeps;
    write_text(json_path, report.dump(2) + "\n");
    write_text(csv_path, csv.str());
    std::cout << "wrote " << json_path << " and " << csv_path << "\n";
    return kExitOk;
}

int cmd_interp(const std::string& config_path, const std::string& base_path,
               std::size_t target_atom, const std::string& betas_flag,
               const std::string& out_prefix, const OutputGuard& guard) {
    Config config = load_config(config_path);
    apply_seed_override(config);
    const std::string json_path = out_prefix + ".json";
    const std::string csv_path = out_prefix + ".csv";
    guard.check(json_path);
    guard.check(csv_path);

    const std::vector<double> betas =
        betas_flag.empty() ? std::vector<double>{0.0, 0.25, 0.5, 0.75, 1.0}
                           : parse_double_list(betas_flag);
    for (double beta : betas)
        if (!(beta >= 0.0 && beta <= 1.0))
            throw ConfigError("interp: beta " + fmt_double(beta) + " outside [0,1]");

    const EditWorld world = EditWorld::generate(config.world);
    if (target_atom >= world.atom_count())
        throw ConfigError("interp: target atom out of range");
    const EditorModel model = load_model(base_path, config.model);

    json report;
    report["meta"] = metric_metadata(config);
    report["meta"]["target_atom"] = target_atom;
    report["meta"]["betas"] = betas;
    json entries = json::array();
    std::ostringstream csv;
    csv << "seed,beta,atom,score\n";
    for (std::uint64_t seed : config.eval.seeds) {
        const Tensor x_orig = eval_background(world, seed);
        const Prompt prompt = world.make_prompt({target_atom});
        const auto sweep = intervention_sweep(model, x_orig, prompt, 0, target_atom,
                                              betas, config.eval.steps, seed, world);
        for (const InterpSweepEntry& entry : sweep) {
            json row;
            row["seed"] = seed;
            row["beta"] = entry.beta;
            row["score"] = entry.score;
            entries.push_back(row);
            csv << seed << "," << fmt_double(entry.beta) << "," << target_atom << ","
                << fmt_double(entry.score) << "\n";
        }
    }
    report["entries"] = entries;
    write_text(json_path, report.dump(2) + "\n");
    write_text(csv_path, csv.str());
    std::cout << "wrote " << json_path << " and " << csv_path << "\n";
    return kExitOk;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"continuous per-instruction edit sliders on a synthetic edit world"};
    app.require_subcommand(1);

    OutputGuard guard;
    app.add_flag("--force", guard.force, "overwrite existing outputs");

    std::string config_path, out_path, base_path, adapter_path;
    std::string mode_str = "gstlora", objective_str, alphas_flag, betas_flag;
    std::size_t gamma_flag = 0, target_atom = 0;

    CLI::App* init = app.add_subcommand("init-config", "write a default config");
    init->add_option("-o,--out", out_path, "output path")->required();

    CLI::App* pretrain =
        app.add_subcommand("pretrain", "pretrain the base editing model");
    pretrain->add_option("config", config_path, "config JSON")->required();
    pretrain->add_option("-o,--out", out_path, "checkpoint path")->required();

    CLI::App* train = app.add_subcommand("train-adapter", "train a slider adapter");
    train->add_option("config", config_path, "config JSON")->required();
    train->add_option("--base", base_path, "base checkpoint")->required();
    train->add_option("--mode", mode_str, "stlora|gstlora")
        ->check(CLI::IsMember({"stlora", "gstlora"}));
    train->add_option("--objective", objective_str, "pps|spps")
        ->check(CLI::IsMember({"pps", "spps"}));
    train->add_option("-o,--out", out_path, "adapter checkpoint path")->required();

    CLI::App* sweep = app.add_subcommand("sweep", "slider sweeps + metric reports");
    sweep->add_option("config", config_path, "config JSON")->required();
    sweep->add_option("--base", base_path, "base checkpoint")->required();
    sweep->add_option("--adapter", adapter_path, "adapter checkpoint")->required();
    sweep->add_option("--gamma", gamma_flag, "instructions per prompt (1..3)");
    sweep->add_option("--alphas", alphas_flag, "comma-separated alpha list");
    sweep->add_option("-o,--out", out_path, "report path prefix")->required();

    CLI::App* interp =
        app.add_subcommand("interp", "pad-embedding interpolation sweep");
    interp->add_option("config", config_path, "config JSON")->required();
    interp->add_option("--base", base_path, "base checkpoint")->required();
    interp->add_option("--target", target_atom, "target atom index")->required();
    interp->add_option("--betas", betas_flag, "comma-separated beta list in [0,1]");
    interp->add_option("-o,--out", out_path, "report path prefix")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return kExitUsage;
    }

    try {
        if (init->parsed()) return cmd_init_config(out_path, guard);
        if (pretrain->parsed()) return cmd_pretrain(config_path, out_path, guard);
        if (train->parsed()) {
            if (objective_str.empty())
                objective_str = mode_str == "stlora" ? "pps" : "spps";
            return cmd_train_adapter(config_path, base_path, mode_str, objective_str,
                                     out_path, guard);
        }
        if (sweep->parsed())
            return cmd_sweep(config_path, base_path, adapter_path, gamma_flag,
                             alphas_flag, out_path, guard);
        if (interp->parsed())
            return cmd_interp(config_path, base_path, target_atom, betas_flag,
                              out_path, guard);
    } catch (const TrainDivergence& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitNumeric;
    } catch (const NumericError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitNumeric;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitUsage;
    }
    return kExitUsage;
}
