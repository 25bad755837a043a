#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "sled/autodiff.hpp"
#include "sled/model_config.hpp"
#include "sled/prompt.hpp"
#include "sled/tensor.hpp"

namespace sled {

enum class AdapterMode { stlora, gstlora };

const char* adapter_mode_name(AdapterMode mode);

/// Low-rank update for one projection: delta_w = b * a, shape
/// [d_out x d_in] from a [rank x d_in] and b [d_out x rank].
struct LowRankPair {
    std::string layer_key; // "blk<i>.<q|k|v|o|fc1|fc2>"
    Tensor a;
    Tensor b;
};

/// One low-rank pair per adapter-eligible projection (q, k, v, o and the
/// two feed-forward projections of every block). b starts at zero so a
/// fresh adapter is exactly the identity.
class Adapter {
public:
    static Adapter init(const ModelConfig& config, AdapterMode mode,
                        std::size_t rank, std::uint64_t seed);

    AdapterMode mode() const { return mode_; }
    std::size_t rank() const { return rank_; }
    std::size_t pair_count() const { return pairs_.size(); }
    const std::vector<LowRankPair>& pairs() const { return pairs_; }
    const LowRankPair& pair(const std::string& layer_key) const;
    LowRankPair& pair(const std::string& layer_key);
    bool has_pair(const std::string& layer_key) const;

    /// Trainable parameters in stable archive order
    /// (lora.<layer_key>.a / lora.<layer_key>.b).
    std::vector<std::pair<std::string, Tensor*>> named_params();
    std::vector<std::pair<std::string, const Tensor*>> named_params() const;

    static constexpr std::size_t default_rank = 16;

private:
    AdapterMode mode_ = AdapterMode::stlora;
    std::size_t rank_ = default_rank;
    std::vector<LowRankPair> pairs_;
};

/// Cheap value-level view applying alpha * delta_w everywhere; the user
/// strength beta relates to alpha by alpha = 1 - beta.
struct ScaledAdapter {
    const Adapter* adapter = nullptr;
    double alpha = 1.0;
};

/// Throws on non-finite alpha. Extrapolation (alpha outside [0,1]) is the
/// caller's choice; sampling enforces its configured range separately.
ScaledAdapter scale_adapter(const Adapter& adapter, double alpha);

/// Selective projection: rows in `selected` map through w + alpha*b*a,
/// all other rows through w alone. In gstlora mode `selected` is ignored
/// and every row is adapted. w is [d_out x d_in], tokens [m x d_in].
Tensor adapter_apply(const Tensor& w, const LowRankPair& pair, double alpha,
                     const Tensor& tokens, AdapterMode mode,
                     const std::vector<std::size_t>& selected);

/// Token indices of instruction i: the contiguous span recorded by
/// encode_prompt, never including pad positions.
std::vector<std::size_t> token_indices(const EncodedPrompt& prompt, std::size_t i);

/// Per-instruction slider position used at inference.
struct SliderSetting {
    std::size_t instruction = 0;
    double alpha = 0.0;
};

/// Adapter checkpoint IO in the shared tensor-archive format, keyed by
/// layer_key, with mode/rank carried as meta entries.
void save_adapter(const std::string& path, const Adapter& adapter);
Adapter load_adapter(const std::string& path, const ModelConfig& config);

} // namespace sled
