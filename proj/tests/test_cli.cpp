#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <sys/wait.h>

namespace fs = std::filesystem;

namespace {

std::string sled_bin() {
    const char* env = std::getenv("SLED_BIN");
    REQUIRE(env != nullptr);
    return env;
}

int run(const std::string& args, const std::string& extra_env = "") {
    const std::string cmd =
        extra_env + (extra_env.empty() ? "" : " ") + sled_bin() + " " + args +
        " >/dev/null 2>&1";
    const int status = std::system(cmd.c_str());
    REQUIRE(status != -1);
    return WEXITSTATUS(status);
}

std::string slurp(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    REQUIRE(in.good());
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

struct TempDir {
    fs::path path;
    TempDir() {
        path = fs::temp_directory_path() / ("sled_cli_test_XXXXXX");
        std::string tmpl = path.string();
        REQUIRE(mkdtemp(tmpl.data()) != nullptr);
        path = tmpl;
    }
    ~TempDir() { fs::remove_all(path); }
    std::string operator/(const std::string& name) const { return (path / name).string(); }
};

// tiny config: quality-free but fast end-to-end run
const char* kTinyConfig = R"json({
  "model": {"d": 16, "blocks": 1, "heads": 2, "text_len": 6, "vocab": 7, "grid": [4, 4, 2]},
  "world": {"atoms": 2, "tokens_per_atom": 2, "grid": [4, 4, 2], "background_sigma": 0.3, "seed": 5},
  "pretrain": {"lr": 0.003, "batch_size": 2, "iterations": 12, "seed": 7, "loss_threshold": 50.0, "k_max": 2, "neutral_prob": 0.2},
  "train": {"lr": 0.001, "batch_size": 2, "iterations": 4, "seed": 11, "objective": "spps", "spps_null": "empty-prompt", "k_values": [1, 2], "rank": 4, "weight_decay": 0.0},
  "eval": {"gamma": 1, "delta": 3, "alpha_min": -0.5, "alpha_max": 1.25, "steps": 2, "seeds": [5]}
})json";

void write_tiny_config(const std::string& path) {
    std::ofstream out(path);
    out << kTinyConfig;
}

} // namespace

TEST_CASE("init-config writes a loadable default and respects --force") {
    TempDir dir;
    const std::string cfg = dir / "config.json";
    CHECK(run("init-config -o " + cfg) == 0);
    CHECK(fs::exists(cfg));
    CHECK(run("init-config -o " + cfg) == 1);            // no silent overwrite
    CHECK(run("--force init-config -o " + cfg) == 0);
}

TEST_CASE("malformed config exits 1 and leaves no partial checkpoint") {
    TempDir dir;
    const std::string cfg = dir / "bad.json";
    std::ofstream(cfg) << "{ this is not json";
    const std::string out = dir / "base.sled";
    CHECK(run("pretrain " + cfg + " -o " + out) == 1);
    CHECK(!fs::exists(out));
    CHECK(!fs::exists(out + ".manifest.json"));
}

TEST_CASE("usage errors exit 1") {
    CHECK(run("pretrain") == 1);       // missing args
    CHECK(run("no-such-command") == 1);
    TempDir dir;
    const std::string cfg = dir / "config.json";
    write_tiny_config(cfg);
    CHECK(run("train-adapter " + cfg + " --base /nope.sled --mode stlora -o " +
              (dir / "a.sled")) == 1); // missing checkpoint
}

TEST_CASE("end-to-end tiny run: pretrain, adapter, sweep, interp") {
    TempDir dir;
    const std::string cfg = dir / "config.json";
    write_tiny_config(cfg);
    const std::string base = dir / "base.sled";
    const std::string adapter = dir / "adapter.sled";

    REQUIRE(run("pretrain " + cfg + " -o " + base) == 0);
    CHECK(fs::exists(base));
    CHECK(fs::exists(base + ".manifest.json"));
    CHECK(slurp(base + ".manifest.json").find("config_hash") != std::string::npos);

    // byte-identical rerun
    const std::string base2 = dir / "base2.sled";
    REQUIRE(run("pretrain " + cfg + " -o " + base2) == 0);
    CHECK(slurp(base) == slurp(base2));
    CHECK(slurp(base + ".manifest.json") == slurp(base2 + ".manifest.json"));

    // overwrite protection on checkpoints
    CHECK(run("pretrain " + cfg + " -o " + base) == 1);

    REQUIRE(run("train-adapter " + cfg + " --base " + base +
                " --mode gstlora --objective spps -o " + adapter) == 0);
    CHECK(fs::exists(adapter));
    CHECK(fs::exists(adapter + ".loss.csv"));
    const std::string adapter2 = dir / "adapter2.sled";
    REQUIRE(run("train-adapter " + cfg + " --base " + base +
                " --mode gstlora --objective spps -o " + adapter2) == 0);
    CHECK(slurp(adapter) == slurp(adapter2));
    CHECK(slurp(adapter + ".loss.csv") == slurp(adapter2 + ".loss.csv"));

    const std::string sweep = dir / "sweep";
    REQUIRE(run("sweep " + cfg + " --base " + base + " --adapter " + adapter +
                " -o " + sweep) == 0);
    CHECK(fs::exists(sweep + ".json"));
    CHECK(fs::exists(sweep + ".csv"));
    const std::string sweep2 = dir / "sweep2";
    REQUIRE(run("sweep " + cfg + " --base " + base + " --adapter " + adapter +
                " -o " + sweep2) == 0);
    CHECK(slurp(sweep + ".json") == slurp(sweep2 + ".json"));
    CHECK(slurp(sweep + ".csv") == slurp(sweep2 + ".csv"));

    // 3-row-per-atom CSV for delta=3, plus the cfg baseline rows
    {
        std::istringstream csv(slurp(sweep + ".csv"));
        std::string line;
        std::getline(csv, line);
        CHECK(line == "method,gamma,seed,prompt_atoms,alpha_tuple,atom,score");
        std::size_t slider_rows = 0, cfg_rows = 0;
        while (std::getline(csv, line)) {
            if (line.rfind("slider,", 0) == 0) ++slider_rows;
            if (line.rfind("explicit-cfg,", 0) == 0) ++cfg_rows;
        }
        CHECK(slider_rows == 3 * 2); // delta x atoms
        CHECK(cfg_rows == 3 * 2);
    }

    // degenerate single-point sweep
    const std::string sweep_one = dir / "sweep_one";
    REQUIRE(run("sweep " + cfg + " --base " + base + " --adapter " + adapter +
                " --alphas 0 -o " + sweep_one) == 0);
    CHECK(slurp(sweep_one + ".json").find("degenerate") != std::string::npos);

    // gamma=2 lattice: delta^2 points per atom pair
    const std::string sweep_g2 = dir / "sweep_g2";
    REQUIRE(run("sweep " + cfg + " --base " + base + " --adapter " + adapter +
                " --gamma 2 -o " + sweep_g2) == 0);
    {
        std::istringstream csv(slurp(sweep_g2 + ".csv"));
        std::string line;
        std::getline(csv, line);
        std::size_t rows = 0;
        while (std::getline(csv, line)) ++rows;
        CHECK(rows == 9 * 2); // 3^2 lattice x 2 scored atoms, one atom pair
    }

    // interp: in-range betas work, out-of-range beta exits 1
    const std::string interp = dir / "interp";
    REQUIRE(run("interp " + cfg + " --base " + base + " --target 0 --betas 0,0.5,1 -o " +
                interp) == 0);
    CHECK(fs::exists(interp + ".json"));
    {
        std::istringstream csv(slurp(interp + ".csv"));
        std::string line;
        std::getline(csv, line);
        CHECK(line == "seed,beta,atom,score");
        std::size_t rows = 0;
        while (std::getline(csv, line)) ++rows;
        CHECK(rows == 3);
    }
    CHECK(run("interp " + cfg + " --base " + base + " --target 0 --betas 2 -o " +
              (dir / "interp_bad")) == 1);

    // interp beta=0 equals sweep alpha=0: both are plain sampling
    {
        const std::string sweep_zero = dir / "sweep_zero";
        REQUIRE(run("sweep " + cfg + " --base " + base + " --adapter " + adapter +
                    " --alphas 0,1 -o " + sweep_zero) == 0);
        std::istringstream sweep_csv(slurp(sweep_zero + ".csv"));
        std::string line;
        std::string sweep_score;
        while (std::getline(sweep_csv, line)) {
            // slider,1,<seed>,0,<alpha=0>,0,<score>
            if (line.rfind("slider,1,5,0,0,0,", 0) == 0)
                sweep_score = line.substr(line.rfind(',') + 1);
        }
        std::istringstream interp_csv(slurp(interp + ".csv"));
        std::string interp_score;
        while (std::getline(interp_csv, line)) {
            if (line.rfind("5,0,0,", 0) == 0)
                interp_score = line.substr(line.rfind(',') + 1);
        }
        REQUIRE(!sweep_score.empty());
        REQUIRE(!interp_score.empty());
        CHECK(sweep_score == interp_score);
    }
}

TEST_CASE("pretrain exits 2 when the loss threshold is out of reach") {
    TempDir dir;
    const std::string cfg = dir / "config.json";
    std::string text = kTinyConfig;
    const auto pos = text.find("\"loss_threshold\": 50.0");
    REQUIRE(pos != std::string::npos);
    text.replace(pos, std::string("\"loss_threshold\": 50.0").size(),
                 "\"loss_threshold\": 1e-9");
    std::ofstream(cfg) << text;
    const std::string out = dir / "base.sled";
    CHECK(run("pretrain " + cfg + " -o " + out) == 2);
    CHECK(fs::exists(out)); // budget exhaustion still reports the checkpoint
}

TEST_CASE("SLED_SEED overrides the config seeds") {
    TempDir dir;
    const std::string cfg = dir / "config.json";
    write_tiny_config(cfg);
    const std::string a = dir / "a.sled";
    const std::string b = dir / "b.sled";
    const std::string c = dir / "c.sled";
    REQUIRE(run("pretrain " + cfg + " -o " + a, "SLED_SEED=123") == 0);
    REQUIRE(run("pretrain " + cfg + " -o " + b, "SLED_SEED=123") == 0);
    REQUIRE(run("pretrain " + cfg + " -o " + c, "SLED_SEED=321") == 0);
    CHECK(slurp(a) == slurp(b));
    CHECK(slurp(a) != slurp(c));
}
