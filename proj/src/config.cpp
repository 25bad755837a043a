#include "sled/config.hpp"

#include <cstdlib>
#include <fstream>

#include <json.hpp>

#include "sled/error.hpp"

namespace sled {

using nlohmann::json;

std::vector<double> EvalConfig::alpha_list() const {
    if (delta < 2) throw ConfigError("eval.delta must be >= 2");
    std::vector<double> out(delta);
    for (std::size_t i = 0; i < delta; ++i)
        out[i] = alpha_min + (alpha_max - alpha_min) * static_cast<double>(i) /
                                 static_cast<double>(delta - 1);
    return out;
}

void Config::validate() const {
    model.validate();
    if (model.grid != world.grid)
        throw ConfigError("model.grid and world.grid must match");
    const std::size_t needed_vocab = 1 + (world.atoms + 1) * world.tokens_per_atom;
    if (model.vocab < needed_vocab)
        throw ConfigError("model.vocab too small for the world vocabulary (need " +
                          std::to_string(needed_vocab) + ")");
    if (world.atoms * world.tokens_per_atom > model.text_len - 1)
        throw ConfigError("world atoms do not fit text_len with a pad left over");
    train.validate();
    if (eval.gamma == 0 || eval.gamma > 3) throw ConfigError("eval.gamma must be 1..3");
    if (eval.gamma > world.atoms) throw ConfigError("eval.gamma exceeds world atoms");
    if (eval.delta < 2) throw ConfigError("eval.delta must be >= 2");
    if (!(eval.alpha_max > eval.alpha_min))
        throw ConfigError("eval alpha range is empty");
    if (eval.steps == 0) throw ConfigError("eval.steps must be >= 1");
    if (eval.seeds.empty()) throw ConfigError("eval.seeds empty");
}

Config default_config() {
    Config c;
    c.model.vocab = 1 + (c.world.atoms + 1) * c.world.tokens_per_atom;
    return c;
}

namespace {

json to_json(const Config& c) {
    json j;
    j["model"] = {{"d", c.model.d},
                  {"blocks", c.model.blocks},
                  {"heads", c.model.heads},
                  {"text_len", c.model.text_len},
                  {"vocab", c.model.vocab},
                  {"grid", c.model.grid}};
    j["world"] = {{"atoms", c.world.atoms},
                  {"tokens_per_atom", c.world.tokens_per_atom},
                  {"grid", c.world.grid},
                  {"background_sigma", c.world.background_sigma},
                  {"seed", c.world.seed}};
    j["pretrain"] = {{"lr", c.pretrain.lr},
                     {"batch_size", c.pretrain.batch_size},
                     {"iterations", c.pretrain.iterations},
                     {"seed", c.pretrain.seed},
                     {"loss_threshold", c.pretrain.loss_threshold},
                     {"k_max", c.pretrain.k_max},
                     {"neutral_prob", c.pretrain.neutral_prob}};
    j["train"] = {{"lr", c.train.lr},
                  {"batch_size", c.train.batch_size},
                  {"iterations", c.train.iterations},
                  {"seed", c.train.seed},
                  {"objective", objective_name(c.train.objective)},
                  {"spps_null", c.train.spps_null == SppsNull::empty_prompt
                                    ? "empty-prompt"
                                    : "neutral-instruction"},
                  {"k_values", c.train.k_values},
                  {"rank", c.train.rank},
                  {"weight_decay", c.train.weight_decay}};
    j["eval"] = {{"gamma", c.eval.gamma},
                 {"delta", c.eval.delta},
                 {"alpha_min", c.eval.alpha_min},
                 {"alpha_max", c.eval.alpha_max},
                 {"steps", c.eval.steps},
                 {"seeds", c.eval.seeds}};
    return j;
}

template <typename T>
void read_field(const json& j, const char* section, const char* key, T& out) {
    if (!j.contains(key))
        throw ConfigError(std::string("config: missing ") + section + "." + key);
    try {
        out = j.at(key).get<T>();
    } catch (const json::exception& e) {
        throw ConfigError(std::string("config: bad value for ") + section + "." + key +
                          ": " + e.what());
    }
}

Config from_json(const json& j) {
    Config c = default_config();
    for (const char* section : {"model", "world", "pretrain", "train", "eval"})
        if (!j.contains(section))
            throw ConfigError(std::string("config: missing section ") + section);

    const json& jm = j["model"];
    read_field(jm, "model", "d", c.model.d);
    read_field(jm, "model", "blocks", c.model.blocks);
    read_field(jm, "model", "heads", c.model.heads);
    read_field(jm, "model", "text_len", c.model.text_len);
    read_field(jm, "model", "vocab", c.model.vocab);
    read_field(jm, "model", "grid", c.model.grid);

    const json& jw = j["world"];
    read_field(jw, "world", "atoms", c.world.atoms);
    read_field(jw, "world", "tokens_per_atom", c.world.tokens_per_atom);
    read_field(jw, "world", "grid", c.world.grid);
    read_field(jw, "world", "background_sigma", c.world.background_sigma);
    read_field(jw, "world", "seed", c.world.seed);

    const json& jp = j["pretrain"];
    read_field(jp, "pretrain", "lr", c.pretrain.lr);
    read_field(jp, "pretrain", "batch_size", c.pretrain.batch_size);
    read_field(jp, "pretrain", "iterations", c.pretrain.iterations);
    read_field(jp, "pretrain", "seed", c.pretrain.seed);
    read_field(jp, "pretrain", "loss_threshold", c.pretrain.loss_threshold);
    read_field(jp, "pretrain", "k_max", c.pretrain.k_max);
    read_field(jp, "pretrain", "neutral_prob", c.pretrain.neutral_prob);

    const json& jt = j["train"];
    read_field(jt, "train", "lr", c.train.lr);
    read_field(jt, "train", "batch_size", c.train.batch_size);
    read_field(jt, "train", "iterations", c.train.iterations);
    read_field(jt, "train", "seed", c.train.seed);
    std::string objective;
    read_field(jt, "train", "objective", objective);
    if (objective == "pps")
        c.train.objective = Objective::pps;
    else if (objective == "spps")
        c.train.objective = Objective::spps;
    else
        throw ConfigError("config: train.objective must be pps or spps");
    std::string null_mode;
    read_field(jt, "train", "spps_null", null_mode);
    if (null_mode == "empty-prompt")
        c.train.spps_null = SppsNull::empty_prompt;
    else if (null_mode == "neutral-instruction")
        c.train.spps_null = SppsNull::neutral_instruction;
    else
        throw ConfigError("config: train.spps_null must be empty-prompt or "
                          "neutral-instruction");
    read_field(jt, "train", "k_values", c.train.k_values);
    read_field(jt, "train", "rank", c.train.rank);
    read_field(jt, "train", "weight_decay", c.train.weight_decay);

    const json& je = j["eval"];
    read_field(je, "eval", "gamma", c.eval.gamma);
    read_field(je, "eval", "delta", c.eval.delta);
    read_field(je, "eval", "alpha_min", c.eval.alpha_min);
    read_field(je, "eval", "alpha_max", c.eval.alpha_max);
    read_field(je, "eval", "steps", c.eval.steps);
    read_field(je, "eval", "seeds", c.eval.seeds);
    return c;
}

} // namespace

Config load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config " + path);
    json j;
    try {
        j = json::parse(in);
    } catch (const json::exception& e) {
        throw ConfigError("config parse error in " + path + ": " + e.what());
    }
    Config c = from_json(j);
    c.validate();
    return c;
}

std::string config_to_json(const Config& config) { return to_json(config).dump(2); }

void save_config(const std::string& path, const Config& config) {
    std::ofstream out(path);
    if (!out) throw ConfigError("cannot write config " + path);
    out << config_to_json(config) << "\n";
}

std::string config_hash(const Config& config) {
    const std::string dump = to_json(config).dump();
    std::uint64_t h = 0xcbf29ce484222325ull;
    for (unsigned char c : dump) {
        h ^= c;
        h *= 0x100000001b3ull;
    }
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

bool apply_seed_override(Config& config) {
    const char* env = std::getenv("SLED_SEED");
    if (!env || !*env) return false;
    char* end = nullptr;
    const unsigned long long seed = std::strtoull(env, &end, 10);
    if (end == env || *end != '\0')
        throw ConfigError("SLED_SEED must be an unsigned integer");
    config.world.seed = seed;
    config.pretrain.seed = seed;
    config.train.seed = seed;
    config.eval.seeds = {seed};
    return true;
}

} // namespace sled
