#include "sled/adapters.hpp"

#include <cmath>

#include "sled/archive.hpp"
#include "sled/error.hpp"
#include "sled/kernels.hpp"

namespace sled {

namespace {

const char* kProjNames[6] = {"q", "k", "v", "o", "fc1", "fc2"};

struct ProjDims {
    std::size_t d_in, d_out;
};

ProjDims proj_dims(const ModelConfig& config, std::size_t proj) {
    const std::size_t d = config.d, h = config.ffn_hidden();
    switch (proj) {
        case 4: return {d, h};  // fc1
        case 5: return {h, d};  // fc2
        default: return {d, d}; // q, k, v, o
    }
}

} // namespace

const char* adapter_mode_name(AdapterMode mode) {
    return mode == AdapterMode::stlora ? "stlora" : "gstlora";
}

Adapter Adapter::init(const ModelConfig& config, AdapterMode mode,
                      std::size_t rank, std::uint64_t seed) {
    config.validate();
    if (rank == 0) throw ShapeError("adapter: rank must be >= 1");
    Adapter adapter;
    adapter.mode_ = mode;
    adapter.rank_ = rank;
    Rng rng(mix_seed(seed, 0x10ADu));
    const double a_std = 1.0 / std::sqrt(static_cast<double>(rank));
    for (std::size_t blk = 0; blk < config.blocks; ++blk) {
        for (std::size_t proj = 0; proj < 6; ++proj) {
            const ProjDims dims = proj_dims(config, proj);
            if (rank > dims.d_in || rank > dims.d_out)
                throw ShapeError("adapter: rank " + std::to_string(rank) +
                                 " exceeds projection dims");
            LowRankPair pair;
            pair.layer_key = "blk" + std::to_string(blk) + "." + kProjNames[proj];
            pair.a = Tensor::randn({rank, dims.d_in}, rng, a_std);
            pair.b = Tensor({dims.d_out, rank}); // zero: fresh adapter is identity
            adapter.pairs_.push_back(std::move(pair));
        }
    }
    return adapter;
}

const LowRankPair& Adapter::pair(const std::string& layer_key) const {
    for (const LowRankPair& p : pairs_)
        if (p.layer_key == layer_key) return p;
    throw ShapeError("adapter: no pair for layer " + layer_key);
}

LowRankPair& Adapter::pair(const std::string& layer_key) {
    for (LowRankPair& p : pairs_)
        if (p.layer_key == layer_key) return p;
    throw ShapeError("adapter: no pair for layer " + layer_key);
}

bool Adapter::has_pair(const std::string& layer_key) const {
    for (const LowRankPair& p : pairs_)
        if (p.layer_key == layer_key) return true;
    return false;
}

std::vector<std::pair<std::string, Tensor*>> Adapter::named_params() {
    std::vector<std::pair<std::string, Tensor*>> out;
    for (LowRankPair& p : pairs_) {
        out.emplace_back("lora." + p.layer_key + ".a", &p.a);
        out.emplace_back("lora." + p.layer_key + ".b", &p.b);
    }
    return out;
}

std::vector<std::pair<std::string, const Tensor*>> Adapter::named_params() const {
    std::vector<std::pair<std::string, const Tensor*>> out;
    for (const LowRankPair& p : pairs_) {
        out.emplace_back("lora." + p.layer_key + ".a", &p.a);
        out.emplace_back("lora." + p.layer_key + ".b", &p.b);
    }
    return out;
}

ScaledAdapter scale_adapter(const Adapter& adapter, double alpha) {
    if (!std::isfinite(alpha)) throw NumericError("scale_adapter: non-finite alpha");
    return ScaledAdapter{&adapter, alpha};
}

Tensor adapter_apply(const Tensor& w, const LowRankPair& pair, double alpha,
                     const Tensor& tokens, AdapterMode mode,
                     const std::vector<std::size_t>& selected) {
    const std::size_t m = tokens.rows(), d_in = tokens.cols();
    const std::size_t d_out = w.rows();
    if (w.cols() != d_in || pair.a.cols() != d_in || pair.b.rows() != d_out ||
        pair.a.rows() != pair.b.cols())
        throw ShapeError("adapter_apply: shape mismatch for layer " + pair.layer_key);
    if (!std::isfinite(alpha)) throw NumericError("adapter_apply: non-finite alpha");
    const std::size_t rank = pair.a.rows();

    Tensor out({m, d_out});
    kernels::mm_nt(out.data(), tokens.data(), w.data(), m, d_in, d_out);
    if (alpha == 0.0) return out;

    std::vector<std::size_t> rows;
    if (mode == AdapterMode::gstlora) {
        rows.resize(m);
        for (std::size_t i = 0; i < m; ++i) rows[i] = i;
    } else {
        for (std::size_t r : selected) {
            if (r >= m)
                throw ShapeError("adapter_apply: selected row " + std::to_string(r) +
                                 " out of range");
            rows.push_back(r);
        }
    }
    if (rows.empty()) return out;

    Tensor sel({rows.size(), d_in});
    for (std::size_t i = 0; i < rows.size(); ++i)
        std::copy_n(tokens.data() + rows[i] * d_in, d_in, sel.data() + i * d_in);
    Tensor u({rows.size(), rank});
    kernels::mm_nt(u.data(), sel.data(), pair.a.data(), rows.size(), d_in, rank);
    Tensor delta({rows.size(), d_out});
    kernels::mm_nt(delta.data(), u.data(), pair.b.data(), rows.size(), rank, d_out);
    for (std::size_t i = 0; i < rows.size(); ++i) {
        double* dst = out.data() + rows[i] * d_out;
        const double* src = delta.data() + i * d_out;
        for (std::size_t j = 0; j < d_out; ++j) dst[j] += alpha * src[j];
    }
    return out;
}

std::vector<std::size_t> token_indices(const EncodedPrompt& prompt, std::size_t i) {
    if (i >= prompt.spans.size())
        throw ShapeError("token_indices: instruction " + std::to_string(i) +
                         " out of range (prompt has " +
                         std::to_string(prompt.spans.size()) + ")");
    const Span span = prompt.spans[i];
    std::vector<std::size_t> out;
    for (std::size_t j = span.begin; j < span.end; ++j) out.push_back(j);
    return out;
}

void save_adapter(const std::string& path, const Adapter& adapter) {
    NamedTensors entries;
    entries.emplace_back("meta.version", Tensor::scalar(1.0));
    entries.emplace_back("meta.mode",
                         Tensor::scalar(adapter.mode() == AdapterMode::stlora ? 0.0 : 1.0));
    entries.emplace_back("meta.rank",
                         Tensor::scalar(static_cast<double>(adapter.rank())));
    for (const auto& [name, tensor] : adapter.named_params())
        entries.emplace_back(name, *tensor);
    save_archive(path, entries);
}

Adapter load_adapter(const std::string& path, const ModelConfig& config) {
    const NamedTensors entries = load_archive(path);
    ArchiveIndex index(entries);
    if (index.get("meta.version")[0] != 1.0)
        throw ArchiveError("unsupported adapter archive version");
    const double mode_val = index.get("meta.mode")[0];
    const AdapterMode mode = mode_val == 0.0 ? AdapterMode::stlora : AdapterMode::gstlora;
    const std::size_t rank = static_cast<std::size_t>(index.get("meta.rank")[0]);
    Adapter adapter = Adapter::init(config, mode, rank, 0);
    std::size_t expected = 3;
    for (auto& [name, tensor] : adapter.named_params()) {
        const Tensor& loaded = index.get(name);
        if (loaded.shape() != tensor->shape())
            throw ArchiveError("adapter entry " + name + " has shape " +
                               loaded.shape_str() + ", expected " + tensor->shape_str());
        *tensor = loaded;
        ++expected;
    }
    if (entries.size() != expected)
        throw ArchiveError("adapter archive has unknown extra entries");
    return adapter;
}

} // namespace sled
