#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdio>

#include "sled/error.hpp"
#include "sled/model.hpp"
#include "sled/world.hpp"

#include "testutil.hpp"

using namespace sled;
using namespace sled::test;

namespace {

ModelConfig tiny_config() {
    ModelConfig c;
    c.d = 8;
    c.blocks = 1;
    c.heads = 2;
    c.text_len = 6;
    c.vocab = 7;
    c.grid = {4, 4, 2};
    return c;
}

WorldSpec tiny_world_spec() {
    WorldSpec spec;
    spec.atoms = 2;
    spec.tokens_per_atom = 2;
    spec.grid = {4, 4, 2};
    spec.seed = 12;
    return spec;
}

// ------------------------------------------------------------------
// straight-line reimplementation of one joint block (attention + FFN)
// ------------------------------------------------------------------

std::vector<double> ref_layernorm(const std::vector<double>& x, std::size_t rows,
                                  std::size_t cols) {
    std::vector<double> y(x.size());
    for (std::size_t i = 0; i < rows; ++i) {
        double mean = 0.0;
        for (std::size_t j = 0; j < cols; ++j) mean += x[i * cols + j];
        mean /= static_cast<double>(cols);
        double var = 0.0;
        for (std::size_t j = 0; j < cols; ++j) {
            const double d = x[i * cols + j] - mean;
            var += d * d;
        }
        var /= static_cast<double>(cols);
        const double inv = 1.0 / std::sqrt(var + 1e-5);
        for (std::size_t j = 0; j < cols; ++j)
            y[i * cols + j] = (x[i * cols + j] - mean) * inv;
    }
    return y;
}

std::vector<double> ref_proj(const std::vector<double>& x, const Tensor& w,
                             std::size_t rows) {
    const std::size_t d_in = w.cols(), d_out = w.rows();
    std::vector<double> y(rows * d_out, 0.0);
    for (std::size_t i = 0; i < rows; ++i)
        for (std::size_t o = 0; o < d_out; ++o)
            for (std::size_t j = 0; j < d_in; ++j)
                y[i * d_out + o] += x[i * d_in + j] * w.at(o, j);
    return y;
}

std::vector<double> ref_block(const std::vector<double>& h_in, std::size_t s,
                              const ModelConfig& config, const Tensor& wq,
                              const Tensor& wk, const Tensor& wv, const Tensor& wo,
                              const Tensor& fc1, const Tensor& fc2) {
    const std::size_t d = config.d, heads = config.heads, dh = config.head_dim();
    const auto x1 = ref_layernorm(h_in, s, d);
    const auto q = ref_proj(x1, wq, s);
    const auto k = ref_proj(x1, wk, s);
    const auto v = ref_proj(x1, wv, s);

    std::vector<double> ctx(s * d, 0.0);
    for (std::size_t head = 0; head < heads; ++head) {
        const std::size_t base = head * dh;
        for (std::size_t i = 0; i < s; ++i) {
            std::vector<double> scores(s);
            for (std::size_t j = 0; j < s; ++j) {
                double dot = 0.0;
                for (std::size_t p = 0; p < dh; ++p)
                    dot += q[i * d + base + p] * k[j * d + base + p];
                scores[j] = dot / std::sqrt(static_cast<double>(dh));
            }
            double total = 0.0;
            std::vector<double> ex(s);
            for (std::size_t j = 0; j < s; ++j) {
                ex[j] = std::exp(scores[j]);
                total += ex[j];
            }
            for (std::size_t j = 0; j < s; ++j)
                for (std::size_t p = 0; p < dh; ++p)
                    ctx[i * d + base + p] += ex[j] / total * v[j * d + base + p];
        }
    }
    const auto o = ref_proj(ctx, wo, s);
    std::vector<double> h2(h_in);
    for (std::size_t i = 0; i < h2.size(); ++i) h2[i] += o[i];

    const auto x2 = ref_layernorm(h2, s, d);
    auto f1 = ref_proj(x2, fc1, s);
    for (double& val : f1) val = 0.5 * val * (1.0 + std::erf(val / std::sqrt(2.0)));
    const auto f2 = ref_proj(f1, fc2, s);
    std::vector<double> out(h2);
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += f2[i];
    return out;
}

} // namespace

TEST_CASE("encode_prompt lays out spans and pads") {
    ModelConfig config = tiny_config();
    config.text_len = 16;
    config.vocab = 16;
    const EditorModel model(config, 1);

    const EncodedPrompt empty = model.encode_prompt(Prompt{});
    CHECK(empty.tau == 0);
    CHECK(empty.spans.empty());
    for (int id : empty.ids) CHECK(id == EditorModel::pad_id);

    Prompt two;
    two.instructions = {{1, 2, 3}, {4, 5, 6}};
    const EncodedPrompt enc = model.encode_prompt(two);
    CHECK(enc.spans == std::vector<Span>{{0, 3}, {3, 6}});
    CHECK(enc.tau == 6);
    for (std::size_t i = 0; i < 6; ++i) CHECK(enc.ids[i] == static_cast<int>(i + 1));
    for (std::size_t i = 6; i < 16; ++i) CHECK(enc.ids[i] == EditorModel::pad_id);

    Prompt full;
    full.instructions = {std::vector<int>(16, 2)};
    const EncodedPrompt enc_full = model.encode_prompt(full);
    CHECK(enc_full.tau == 16);
    CHECK(enc_full.spans == std::vector<Span>{{0, 16}});

    Prompt too_long;
    too_long.instructions = {std::vector<int>(17, 2)};
    CHECK_THROWS_AS((void)model.encode_prompt(too_long), ShapeError);

    Prompt unknown;
    unknown.instructions = {{99}};
    CHECK_THROWS_AS((void)model.encode_prompt(unknown), ShapeError);
    Prompt pad_inside;
    pad_inside.instructions = {{0}};
    CHECK_THROWS_AS((void)model.encode_prompt(pad_inside), ShapeError);
}

TEST_CASE("joint block matches the straight-line reference to 1e-12") {
    const ModelConfig config = tiny_config();
    EditorModel model(config, 7);
    Rng rng(5);
    const std::size_t nx = 5, ny = 3, s = nx + ny;
    const Tensor x = random_tensor({nx, config.d}, rng);
    const Tensor y = random_tensor({ny, config.d}, rng);

    Graph g;
    const auto params = model.stage_params(g, false);
    const auto [x_out, y_out] =
        model.block_graph(g, params, g.leaf(x), g.leaf(y), 0, nullptr, {});

    std::vector<double> h_in(s * config.d);
    std::copy(x.vec().begin(), x.vec().end(), h_in.begin());
    std::copy(y.vec().begin(), y.vec().end(), h_in.begin() + nx * config.d);
    auto names = model.named_params();
    auto find = [&](const std::string& n) -> const Tensor& {
        for (auto& [name, t] : names)
            if (name == n) return *t;
        throw std::runtime_error("missing " + n);
    };
    const auto ref =
        ref_block(h_in, s, config, find("blk0.q"), find("blk0.k"), find("blk0.v"),
                  find("blk0.o"), find("blk0.fc1"), find("blk0.fc2"));

    const Tensor& gx = g.value(x_out);
    const Tensor& gy = g.value(y_out);
    for (std::size_t i = 0; i < nx * config.d; ++i)
        CHECK(std::abs(gx[i] - ref[i]) < 1e-12);
    for (std::size_t i = 0; i < ny * config.d; ++i)
        CHECK(std::abs(gy[i] - ref[nx * config.d + i]) < 1e-12);
}

TEST_CASE("predict_velocity: shape, determinism, grid mismatch") {
    const ModelConfig config = tiny_config();
    const EditorModel model(config, 3);
    const EditWorld world = EditWorld::generate(tiny_world_spec());
    Rng rng(9);
    const Tensor x_orig = world.sample_background(rng);
    const Tensor z = random_tensor({4, 4, 2}, rng);
    const Prompt prompt = world.make_prompt({0});

    const Tensor v1 = model.predict_velocity(z, x_orig, prompt, 0.3);
    const Tensor v2 = model.predict_velocity(z, x_orig, prompt, 0.3);
    CHECK(bit_equal(v1, v2));
    CHECK(v1.shape() == std::vector<std::size_t>{config.n_img(), config.channels()});

    const Tensor bad = random_tensor({8, 8, 3}, rng);
    CHECK_THROWS_AS((void)model.predict_velocity(bad, x_orig, prompt, 0.3), ShapeError);
    CHECK_THROWS_AS((void)model.predict_velocity(z, x_orig, prompt, 1.5), ShapeError);
}

TEST_CASE("pads are identical tokens") {
    const ModelConfig config = tiny_config();
    const EditorModel model(config, 3);
    Prompt prompt;
    prompt.instructions = {{1, 2}};
    const EncodedPrompt enc = model.encode_prompt(prompt);
    const Tensor emb = model.prompt_embeddings(enc);
    for (std::size_t r = enc.tau + 1; r < config.text_len; ++r)
        for (std::size_t j = 0; j < config.d; ++j)
            CHECK(emb.at(r, j) == emb.at(enc.tau, j));
}

TEST_CASE("velocity responds to the prompt and to t") {
    const ModelConfig config = tiny_config();
    const EditorModel model(config, 3);
    const EditWorld world = EditWorld::generate(tiny_world_spec());
    Rng rng(10);
    const Tensor x_orig = world.sample_background(rng);
    const Tensor z = random_tensor({4, 4, 2}, rng);
    const Tensor with_prompt =
        model.predict_velocity(z, x_orig, world.make_prompt({0}), 0.3);
    const Tensor without = model.predict_velocity(z, x_orig, Prompt{}, 0.3);
    CHECK(max_abs_diff(with_prompt, without) > 0.0);
    const Tensor later = model.predict_velocity(z, x_orig, Prompt{}, 0.8);
    CHECK(max_abs_diff(later, without) > 0.0);
}

TEST_CASE("sampling is deterministic under seed; step counts differ") {
    const ModelConfig config = tiny_config();
    const EditorModel model(config, 3);
    const EditWorld world = EditWorld::generate(tiny_world_spec());
    Rng rng(11);
    const Tensor x_orig = world.sample_background(rng);
    const Prompt prompt = world.make_prompt({1});

    SampleOptions options;
    options.seed = 77;
    const SampleResult a = model.sample_edit(x_orig, prompt, 4, {}, nullptr, options);
    const SampleResult b = model.sample_edit(x_orig, prompt, 4, {}, nullptr, options);
    CHECK(bit_equal(a.grid, b.grid));
    CHECK(a.forward_evals == 4);

    const SampleResult one = model.sample_edit(x_orig, prompt, 1, {}, nullptr, options);
    const SampleResult many =
        model.sample_edit(x_orig, prompt, 64, {}, nullptr, options);
    CHECK(one.grid.all_finite());
    CHECK(many.grid.all_finite());
    CHECK(max_abs_diff(one.grid, many.grid) > 0.0);

    CHECK_THROWS_AS((void)model.sample_edit(x_orig, prompt, 0, {}, nullptr, options),
                    ShapeError);
}

TEST_CASE("ODE refinement: n and 2n step samples converge") {
    const ModelConfig config = tiny_config();
    const EditorModel model(config, 3);
    const EditWorld world = EditWorld::generate(tiny_world_spec());
    Rng rng(12);
    const Tensor x_orig = world.sample_background(rng);
    const Prompt prompt = world.make_prompt({0});
    SampleOptions options;
    options.seed = 5;

    std::vector<double> gaps;
    for (std::size_t n : {4, 8, 16, 32}) {
        const SampleResult coarse =
            model.sample_edit(x_orig, prompt, n, {}, nullptr, options);
        const SampleResult fine =
            model.sample_edit(x_orig, prompt, 2 * n, {}, nullptr, options);
        double sq = 0.0;
        for (std::size_t i = 0; i < coarse.grid.size(); ++i) {
            const double d = coarse.grid[i] - fine.grid[i];
            sq += d * d;
        }
        gaps.push_back(std::sqrt(sq));
    }
    for (std::size_t i = 1; i < gaps.size(); ++i) CHECK(gaps[i] < gaps[i - 1]);
}

TEST_CASE("model checkpoints round-trip bit-exactly") {
    const ModelConfig config = tiny_config();
    const EditorModel model(config, 21);
    const char* path = "/tmp/sled_test_model.sled";
    save_model(path, model);
    const EditorModel loaded = load_model(path, config);

    const EditWorld world = EditWorld::generate(tiny_world_spec());
    Rng rng(13);
    const Tensor x_orig = world.sample_background(rng);
    const Tensor z = random_tensor({4, 4, 2}, rng);
    const Prompt prompt = world.make_prompt({0, 1});
    CHECK(bit_equal(model.predict_velocity(z, x_orig, prompt, 0.4),
                    loaded.predict_velocity(z, x_orig, prompt, 0.4)));

    ModelConfig other = config;
    other.d = 16;
    CHECK_THROWS_AS((void)load_model(path, other), ArchiveError);
    std::remove(path);
}

TEST_CASE("pretraining on a constant dataset overfits") {
    ModelConfig config = tiny_config();
    config.d = 16;
    config.heads = 2;
    EditorModel model(config, 31);
    const EditWorld world = EditWorld::generate(tiny_world_spec());
    const std::vector<Example> dataset = {world.sample_example(1, 400)};

    PretrainOptions options;
    options.iterations = 220;
    options.batch_size = 2;
    options.lr = 3e-3;
    options.seed = 5;
    options.dataset = &dataset;
    const PretrainResult result = pretrain_base(model, world, options);

    // windowed means after the 50-step warmup must trend down
    auto window_mean = [&](std::size_t lo, std::size_t hi) {
        double acc = 0.0;
        for (std::size_t i = lo; i < hi; ++i) acc += result.losses[i];
        return acc / static_cast<double>(hi - lo);
    };
    const double early = window_mean(50, 100);
    const double mid = window_mean(100, 160);
    const double late = window_mean(160, 220);
    CHECK(mid < early * 1.1);
    CHECK(late < mid * 1.1);
    CHECK(late < early * 0.6);
}

TEST_CASE("pretraining is deterministic under seed") {
    ModelConfig config = tiny_config();
    const EditWorld world = EditWorld::generate(tiny_world_spec());
    PretrainOptions options;
    options.iterations = 5;
    options.batch_size = 2;
    options.seed = 9;

    EditorModel m1(config, 8);
    EditorModel m2(config, 8);
    const PretrainResult r1 = pretrain_base(m1, world, options);
    const PretrainResult r2 = pretrain_base(m2, world, options);
    CHECK(r1.losses == r2.losses);
    for (std::size_t i = 0; i < m1.named_params().size(); ++i)
        CHECK(bit_equal(*m1.named_params()[i].second, *m2.named_params()[i].second));
}

TEST_CASE("zero-instruction pretraining learns the identity edit") {
    ModelConfig config;
    config.d = 32;
    config.blocks = 2;
    config.heads = 4;
    config.text_len = 6;
    config.grid = {4, 4, 2};
    const EditWorld world = EditWorld::generate(tiny_world_spec());
    config.vocab = world.vocab_size();
    EditorModel model(config, 77);

    PretrainOptions options;
    options.iterations = 1000;
    options.batch_size = 4;
    options.lr = 3e-3;
    options.seed = 13;
    options.k_max = 0; // zero-instruction prompts only
    options.neutral_prob = 0.0;
    const PretrainResult result = pretrain_base(model, world, options);
    CHECK(result.losses.back() < result.losses.front());

    Rng rng(21);
    double rel_acc = 0.0;
    const int cases = 4;
    for (int i = 0; i < cases; ++i) {
        const Tensor x_orig = world.sample_background(rng);
        SampleOptions sopt;
        sopt.seed = 900 + i;
        const SampleResult sample =
            model.sample_edit(x_orig, Prompt{}, 16, {}, nullptr, sopt);
        double sq = 0.0, ref = 0.0;
        for (std::size_t j = 0; j < x_orig.size(); ++j) {
            const double d = sample.grid[j] - x_orig[j];
            sq += d * d;
            ref += x_orig[j] * x_orig[j];
        }
        rel_acc += std::sqrt(sq / ref);
    }
    CHECK(rel_acc / cases < 0.5); // identity edit within tolerance
}
